// Command-line front end: gen-data, train, eval, ablate, sample, project.
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "xdiff/config.hpp"
#include "xdiff/mptd.hpp"
#include "xdiff/pipeline.hpp"
#include "xdiff/projection.hpp"
#include "xdiff/rng.hpp"
#include "xdiff/sampler.hpp"

namespace fs = std::filesystem;
using namespace xdiff;

namespace {

struct Options {
  std::string config;
  std::string out = ".";
  std::string data;
  std::string ckpt;
  std::string mptd;
  std::string seeds;
  std::string embodiment;
  int task = 0;
  std::uint64_t seed = 0;
  int samples = 20;
};

class UsageError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

RunConfig load(const Options& o) {
  RunConfig c = load_config(o.config);
  if (o.mptd == "on") c.ablation.use_mptd = true;
  if (o.mptd == "off") c.ablation.use_mptd = false;
  return c;
}

Dataset dataset_for(const Options& o, const RunConfig& c) {
  if (!o.data.empty()) {
    Dataset ds = read_dataset(o.data);
    if (!(ds.layout == c.layout))
      throw std::runtime_error("dataset layout does not match the config");
    return ds;
  }
  return build_dataset(c);
}

DenoiserParams params_for(const Options& o) {
  if (o.ckpt.empty()) throw UsageError("--ckpt is required for this subcommand");
  return load_checkpoint(o.ckpt);
}

std::string out_path(const Options& o, const std::string& name) {
  fs::create_directories(o.out);
  return (fs::path(o.out) / name).string();
}

const EmbodimentSpec& pick_embodiment(const RunConfig& c, const std::string& name) {
  if (name.empty()) return c.embodiments.front();
  for (const auto& e : c.embodiments)
    if (e.name == name || std::to_string(e.id) == name) return e;
  throw UsageError("unknown embodiment '" + name + "'");
}

std::vector<std::uint64_t> parse_seeds(const std::string& text, std::uint64_t fallback) {
  if (text.empty()) return {fallback};
  std::vector<std::uint64_t> seeds;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      seeds.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw UsageError("--seeds expects comma-separated integers");
    }
  }
  return seeds;
}

void gen_data(const Options& o) {
  const RunConfig c = load(o);
  const Dataset ds = build_dataset(c);
  const std::string path = o.data.empty() ? out_path(o, "dataset.jsonl.gz") : o.data;
  write_dataset(path, ds);
  std::cout << "wrote " << ds.trajectories.size() << " trajectories to " << path << "\n";
}

void train_cmd(const Options& o) {
  const RunConfig c = load(o);
  const Dataset ds = dataset_for(o, c);
  const TrainResult r = train_model(c, ds, [&](int it, const DenoiserParams& p) {
    save_checkpoint(out_path(o, "ckpt_" + std::to_string(it) + ".bin"), p);
  });
  save_checkpoint(out_path(o, "model.bin"), r.params);
  std::ostringstream curve;
  curve << "iteration,loss\n" << std::setprecision(10);
  for (const auto& pt : r.curve) curve << pt.iteration << ',' << pt.loss << '\n';
  write_text(out_path(o, "loss.csv"), curve.str());
  if (!r.curve.empty())
    std::cout << "final loss " << r.curve.back().loss << "\n";
}

void eval_cmd(const Options& o) {
  const RunConfig c = load(o);
  const Dataset ds = dataset_for(o, c);
  const DenoiserParams params = params_for(o);
  MetricsReport report = evaluate_model(c, params, ds, c.ablation.use_mptd ? "X-DiffVLA" : "w/o MPTD");
  write_text(out_path(o, "metrics.json"), report.to_json().dump(2) + "\n");
  write_text(out_path(o, "metrics.csv"), metrics_csv({report}));
  std::cout << metrics_csv({report});
}

void ablate_cmd(const Options& o) {
  const RunConfig c = load(o);
  const Dataset ds = dataset_for(o, c);
  const auto reports =
      run_ablation(c, ablation_rows(), parse_seeds(o.seeds, c.seed), ds, o.out,
                   [](const std::string& msg) { std::cerr << msg << "\n"; });
  nlohmann::json all = nlohmann::json::array();
  for (const auto& r : reports) all.push_back(r.to_json());
  write_text(out_path(o, "ablation.json"), all.dump(2) + "\n");
  write_text(out_path(o, "ablation.csv"), metrics_csv(reports));
  std::cout << metrics_csv(reports);
}

void sample_cmd(const Options& o) {
  const RunConfig c = load(o);
  const Dataset ds = dataset_for(o, c);
  const DenoiserParams params = params_for(o);
  const EmbodimentSpec& spec = pick_embodiment(c, o.embodiment);
  const auto tasks = config_tasks(c);
  if (o.task < 0 || o.task >= int(tasks.size())) throw UsageError("--task out of range");
  const WorldState s = reset_world(spec, c.layout, tasks[std::size_t(o.task)], o.seed);
  const Observation obs{context_encoding(s), proprio_encoding(s, spec), o.task, &s};

  long evaluations = 0;
  ActionChunk chunk;
  std::string mode;
  if (c.ablation.use_mptd && c.sampler.mode == SamplerMode::diffusion) {
    mode = "mptd";
    ConditioningBundle cond{obs.proprio, obs.context, c.noise.steps, spec.id};
    std::optional<MetaQuery> query;
    if (c.mptd.neighbors > 0) {
      Eigen::VectorXd key(obs.context.size() + obs.proprio.size());
      key << obs.context, obs.proprio;
      query = MetaQuery{key, c.mptd.neighbors};
    }
    const auto meta = build_meta_actions(ds, o.task, spec, c.layout, c.model.horizon, query);
    MptdResult r = mptd_sample(make_x0_predictor(params), cond, c.model.horizon,
                               config_schedule(c), config_covariances(c).at(spec.id),
                               spec, c.layout, meta, mptd_config(c), o.seed);
    chunk = r.chunk;
    apply_padding(chunk, spec, c.layout);
    evaluations = r.trace.evaluations;
    write_text(out_path(o, "trace.json"), r.trace.to_json().dump(2) + "\n");
  } else {
    mode = c.sampler.mode == SamplerMode::diffusion ? "diffusion" : "flow_matching";
    chunk = make_policy(c, params, ds, spec, &evaluations)(obs, o.seed);
  }
  std::ostringstream csv;
  csv << std::setprecision(17);
  for (Eigen::Index d = 0; d < chunk.cols(); ++d) csv << (d ? "," : "") << "a" << d;
  csv << '\n';
  for (Eigen::Index h = 0; h < chunk.rows(); ++h) {
    for (Eigen::Index d = 0; d < chunk.cols(); ++d) csv << (d ? "," : "") << chunk(h, d);
    csv << '\n';
  }
  write_text(out_path(o, "sample.csv"), csv.str());
  const nlohmann::json side = {{"seed", o.seed},
                               {"mode", mode},
                               {"evaluations", evaluations},
                               {"embodiment", spec.name},
                               {"task", o.task}};
  write_text(out_path(o, "sample.json"), side.dump(2) + "\n");
  std::cout << side.dump() << "\n";
}

void project_cmd(const Options& o) {
  const RunConfig c = load(o);
  const Dataset ds = dataset_for(o, c);
  const DenoiserParams params = params_for(o);
  if (o.samples < 3) throw UsageError("--samples must be at least 3");
  const auto [features, labels] = rollout_fingertip_features(c, params, ds, o.samples);
  const Projection p = project_features(features, 2);
  write_text(out_path(o, "projection.csv"), projection_csv(p, labels));
  std::cout << "projected " << features.rows() << " samples"
            << (p.degenerate ? " (degenerate covariance)" : "") << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-embodiment diffusion policy toolkit"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "run config (JSON)")->required();
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--data", o.data, "dataset file");
    sub->add_option("--mptd", o.mptd, "override ablation.use_mptd")
        ->check(CLI::IsMember({"on", "off"}));
  };
  auto* gen = app.add_subcommand("gen-data", "generate the expert dataset");
  auto* tr = app.add_subcommand("train", "train the denoiser");
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  auto* ab = app.add_subcommand("ablate", "run the ablation matrix");
  auto* sa = app.add_subcommand("sample", "sample one action chunk");
  auto* pr = app.add_subcommand("project", "PCA of final fingertip positions");
  for (auto* sub : {gen, tr, ev, ab, sa, pr}) common(sub);
  for (auto* sub : {ev, sa, pr}) sub->add_option("--ckpt", o.ckpt, "checkpoint file");
  ab->add_option("--seeds", o.seeds, "comma-separated root seeds");
  sa->add_option("--embodiment", o.embodiment, "embodiment name or id");
  sa->add_option("--task", o.task, "task key");
  sa->add_option("--seed", o.seed, "sampling seed");
  pr->add_option("--samples", o.samples, "rollouts per embodiment");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*gen) gen_data(o);
    else if (*tr) train_cmd(o);
    else if (*ev) eval_cmd(o);
    else if (*ab) ablate_cmd(o);
    else if (*sa) sample_cmd(o);
    else if (*pr) project_cmd(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
