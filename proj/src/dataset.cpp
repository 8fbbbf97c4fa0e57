#include "xdiff/dataset.hpp"

#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include <zlib.h>

#include "xdiff/rng.hpp"

namespace xdiff {
namespace {

using nlohmann::json;

constexpr int kFormatVersion = 1;

json to_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd vec_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), Eigen::Index(v.size()));
}

json layout_json(const UnifiedActionLayout& layout) {
  json names = json::array();
  for (const auto& w : layout.windows()) names.push_back(w.name);
  return {{"widths", layout.widths()}, {"names", names}};
}

json spec_json(const EmbodimentSpec& e) {
  return {{"id", e.id},
          {"name", e.name},
          {"active_dims", e.active_dims},
          {"sigma_e", e.sigma_e},
          {"reach_radius", e.reach_radius}};
}

std::string serialise(const Dataset& ds) {
  std::ostringstream out;
  json header = {{"format", "xdiff-dataset"},
                 {"version", kFormatVersion},
                 {"layout_hash", ds.layout.hash()},
                 {"layout", layout_json(ds.layout)},
                 {"embodiments", json::array()}};
  for (const auto& e : ds.embodiments) header["embodiments"].push_back(spec_json(e));
  out << header.dump() << '\n';
  for (const auto& t : ds.trajectories) {
    json steps = json::array();
    for (const auto& s : t.steps)
      steps.push_back({{"n", to_json(s.context)},
                       {"p", to_json(s.proprio)},
                       {"a", to_json(s.action)}});
    json rec = {{"embodiment", t.embodiment_id},
                {"task", t.task_key},
                {"seed", t.seed},
                {"expert", t.expert_version},
                {"steps", std::move(steps)}};
    out << rec.dump() << '\n';
  }
  return out.str();
}

}  // namespace

ActionChunk chunk_at(const Trajectory& traj, int t, int horizon) {
  if (traj.steps.empty()) throw std::invalid_argument("chunk_at: empty trajectory");
  const int n = int(traj.steps.size());
  if (t < 0 || t >= n) throw std::out_of_range("chunk_at: step out of range");
  const auto dim = traj.steps.front().action.size();
  ActionChunk chunk(horizon, dim);
  for (int h = 0; h < horizon; ++h)
    chunk.row(h) = traj.steps[std::size_t(std::min(t + h, n - 1))].action.transpose();
  return chunk;
}

Eigen::VectorXd observation_key(const TrajectoryStep& step) {
  Eigen::VectorXd key(step.context.size() + step.proprio.size());
  key << step.context, step.proprio;
  return key;
}

std::vector<TrainSample> training_pool(const Dataset& dataset, int horizon) {
  std::vector<TrainSample> pool;
  for (const auto& traj : dataset.trajectories)
    for (int t = 0; t < int(traj.steps.size()); ++t) {
      const auto& s = traj.steps[std::size_t(t)];
      pool.push_back({chunk_at(traj, t, horizon),
                      {s.proprio, s.context, 1, traj.embodiment_id}});
    }
  return pool;
}

void write_dataset(const std::string& path, const Dataset& dataset) {
  const std::string bytes = serialise(dataset);
  gzFile f = gzopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  const int written = gzwrite(f, bytes.data(), unsigned(bytes.size()));
  const int closed = gzclose(f);
  if (written != int(bytes.size()) || closed != Z_OK)
    throw std::runtime_error("failed writing " + path);
}

Dataset read_dataset(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string bytes;
  char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof buf)) > 0) bytes.append(buf, std::size_t(n));
  gzclose(f);
  if (n < 0) throw std::runtime_error("corrupt gzip stream in " + path);

  std::istringstream in(bytes);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty dataset " + path);
  const json header = json::parse(line);
  if (header.value("format", "") != "xdiff-dataset" ||
      header.value("version", 0) != kFormatVersion)
    throw std::runtime_error("unsupported dataset format in " + path);

  Dataset ds;
  ds.layout = UnifiedActionLayout(header["layout"]["widths"].get<std::vector<int>>(),
                                  header["layout"]["names"].get<std::vector<std::string>>());
  if (ds.layout.hash() != header["layout_hash"].get<std::uint64_t>())
    throw std::runtime_error("layout hash mismatch in " + path);
  for (const auto& e : header["embodiments"]) {
    EmbodimentSpec spec;
    spec.id = e["id"];
    spec.name = e["name"];
    spec.active_dims = e["active_dims"].get<std::vector<int>>();
    spec.sigma_e = e["sigma_e"];
    spec.reach_radius = e["reach_radius"];
    validate(spec, ds.layout);
    ds.embodiments.push_back(spec);
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json rec = json::parse(line);
    Trajectory t;
    t.embodiment_id = rec["embodiment"];
    t.task_key = rec["task"];
    t.seed = rec["seed"];
    t.expert_version = rec["expert"];
    for (const auto& s : rec["steps"]) {
      TrajectoryStep step{vec_from(s["n"]), vec_from(s["p"]), vec_from(s["a"])};
      if (step.action.size() != ds.layout.total_dim())
        throw std::runtime_error("action length mismatch in " + path);
      t.steps.push_back(std::move(step));
    }
    ds.trajectories.push_back(std::move(t));
  }
  return ds;
}

std::uint64_t dataset_hash(const Dataset& dataset) {
  return fnv1a64(serialise(dataset));
}

}  // namespace xdiff
