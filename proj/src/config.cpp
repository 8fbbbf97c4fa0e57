#include "xdiff/config.hpp"

#include <fstream>
#include <set>

#include "xdiff/rng.hpp"

namespace xdiff {
namespace {

using nlohmann::json;

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(name(), "expected an object");
  }

  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, _] : j_.items())
      if (!seen_.count(key)) throw ConfigError(child(key), "unknown key");
  }

  const json& at(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw ConfigError(child(key), "missing key");
    return j_.at(key);
  }

  Reader section(const std::string& key) { return Reader(at(key), child(key)); }

  double number(const std::string& key) {
    const json& v = at(key);
    if (!v.is_number()) throw ConfigError(child(key), "expected a number");
    return v.get<double>();
  }

  double positive(const std::string& key) {
    const double v = number(key);
    if (!(v > 0.0)) throw ConfigError(child(key), "must be positive");
    return v;
  }

  int integer(const std::string& key, int min_value) {
    const json& v = at(key);
    if (!v.is_number_integer()) throw ConfigError(child(key), "expected an integer");
    const auto x = v.get<long long>();
    if (x < min_value)
      throw ConfigError(child(key), "must be >= " + std::to_string(min_value));
    return int(x);
  }

  std::uint64_t seed(const std::string& key) {
    const json& v = at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
      throw ConfigError(child(key), "expected a non-negative integer");
    return v.get<std::uint64_t>();
  }

  bool boolean(const std::string& key) {
    const json& v = at(key);
    if (!v.is_boolean()) throw ConfigError(child(key), "expected true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& key, const std::set<std::string>& allowed) {
    const json& v = at(key);
    if (!v.is_string()) throw ConfigError(child(key), "expected a string");
    auto s = v.get<std::string>();
    if (!allowed.empty() && !allowed.count(s))
      throw ConfigError(child(key), "unsupported value '" + s + "'");
    return s;
  }

  std::vector<int> int_list(const std::string& key) {
    const json& v = at(key);
    if (!v.is_array()) throw ConfigError(child(key), "expected an array");
    std::vector<int> out;
    for (const auto& e : v) {
      if (!e.is_number_integer() || e.get<long long>() < 0)
        throw ConfigError(child(key), "expected non-negative integers");
      out.push_back(e.get<int>());
    }
    return out;
  }

  std::string child(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }
  const std::string& name() const { return path_; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

RunConfig parse_config(const json& j) {
  RunConfig c;
  Reader root(j, "");
  {
    Reader r = root.section("layout");
    const auto widths = r.int_list("widths");
    const json& names = r.at("names");
    if (!names.is_array() || names.size() != widths.size())
      throw ConfigError("layout.names", "expected one name per window");
    try {
      c.layout = UnifiedActionLayout(widths, names.get<std::vector<std::string>>());
    } catch (const std::exception& e) {
      throw ConfigError("layout.widths", e.what());
    }
  }
  {
    const json& arr = root.at("embodiments");
    if (!arr.is_array() || arr.empty())
      throw ConfigError("embodiments", "expected a non-empty array");
    c.embodiments.clear();
    EmbodimentRegistry registry(c.layout);
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string path = "embodiments[" + std::to_string(i) + "]";
      Reader r(arr[i], path);
      EmbodimentSpec s;
      s.id = r.integer("id", 0);
      s.name = r.string("name", {});
      s.active_dims = r.int_list("active_dims");
      s.sigma_e = r.positive("sigma_e");
      s.reach_radius = r.positive("reach_radius");
      if (s.id >= int(arr.size()))
        throw ConfigError(path + ".id", "ids must be 0 .. count-1");
      try {
        registry.register_embodiment(s);
      } catch (const std::exception& e) {
        throw ConfigError(path, e.what());
      }
      c.embodiments.push_back(s);
    }
  }
  {
    Reader r = root.section("noise");
    c.noise.delta = r.positive("delta");
    if (c.noise.delta > 1.0) throw ConfigError("noise.delta", "must lie in (0, 1]");
    c.noise.schedule = r.string("schedule", {"cosine", "linear"});
    c.noise.pyramid =
        r.string("pyramid", {"window", "stepwise"}) == "window" ? PyramidMode::window
                                                               : PyramidMode::stepwise;
    c.noise.steps = r.integer("steps", 2);
  }
  {
    Reader r = root.section("model");
    c.model.hidden = r.integer("hidden", 1);
    c.model.hidden_layers = r.integer("hidden_layers", 1);
    c.model.prompt_dim = r.integer("prompt_dim", 0);
    c.model.horizon = r.integer("horizon", 1);
  }
  {
    Reader r = root.section("train");
    c.train.iterations = r.integer("iterations", 0);
    c.train.batch = r.integer("batch", 1);
    c.train.lr = r.positive("lr");
    c.train.lr_schedule = r.string("lr_schedule", {"constant", "cosine"});
    c.train.weight_decay = r.number("weight_decay");
    if (c.train.weight_decay < 0.0)
      throw ConfigError("train.weight_decay", "must be >= 0");
    c.train.log_every = r.integer("log_every", 1);
    c.train.checkpoint_every = r.integer("checkpoint_every", 0);
  }
  {
    Reader r = root.section("sampler");
    c.sampler.mode = r.string("mode", {"diffusion", "flow_matching"}) == "diffusion"
                         ? SamplerMode::diffusion
                         : SamplerMode::flow_matching;
    c.sampler.jumpy_interval = r.integer("jumpy_interval", 1);
    c.sampler.flow_steps = r.integer("flow_steps", 1);
  }
  {
    Reader r = root.section("mptd");
    c.mptd.exploration = r.number("exploration");
    c.mptd.m0 = r.number("m0");
    c.mptd.m1 = r.number("m1");
    c.mptd.branching = r.integer("branching", 1);
    c.mptd.budget = r.integer("budget", 1);
    c.mptd.guidance_weight = r.number("guidance_weight");
    c.mptd.neighbors = r.integer("neighbors", 0);
    try {
      validate(mptd_config(c), c.layout);
    } catch (const std::exception& e) {
      throw ConfigError("mptd", e.what());
    }
  }
  {
    Reader r = root.section("data");
    c.data.tasks = r.integer("tasks", 1);
    if (c.data.tasks > 5) throw ConfigError("data.tasks", "at most 5 tasks exist");
    c.data.trajs_per_pair = r.integer("trajs_per_pair", 1);
  }
  {
    Reader r = root.section("eval");
    c.eval.episodes = r.integer("episodes", 1);
    c.eval.seed = r.seed("seed");
    c.eval.max_steps = r.integer("max_steps", 1);
    c.eval.replan_stride = r.integer("replan_stride", 1);
  }
  c.seed = root.seed("seed");
  {
    Reader r = root.section("ablation");
    c.ablation.use_ebf = r.boolean("use_ebf");
    c.ablation.use_mptd = r.boolean("use_mptd");
    c.ablation.use_soft_prompt = r.boolean("use_soft_prompt");
  }
  if (c.model.horizon > c.eval.max_steps)
    throw ConfigError("model.horizon", "exceeds eval.max_steps");
  if (c.eval.replan_stride > c.model.horizon)
    throw ConfigError("eval.replan_stride", "exceeds model.horizon");
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot read " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("--config", std::string("malformed JSON: ") + e.what());
  }
  return parse_config(j);
}

json to_json(const RunConfig& c) {
  json names = json::array();
  for (const auto& w : c.layout.windows()) names.push_back(w.name);
  json embodiments = json::array();
  for (const auto& e : c.embodiments)
    embodiments.push_back({{"id", e.id},
                           {"name", e.name},
                           {"active_dims", e.active_dims},
                           {"sigma_e", e.sigma_e},
                           {"reach_radius", e.reach_radius}});
  return {
      {"layout", {{"widths", c.layout.widths()}, {"names", names}}},
      {"embodiments", embodiments},
      {"noise",
       {{"delta", c.noise.delta},
        {"schedule", c.noise.schedule},
        {"pyramid", c.noise.pyramid == PyramidMode::window ? "window" : "stepwise"},
        {"steps", c.noise.steps}}},
      {"model",
       {{"hidden", c.model.hidden},
        {"hidden_layers", c.model.hidden_layers},
        {"prompt_dim", c.model.prompt_dim},
        {"horizon", c.model.horizon}}},
      {"train",
       {{"iterations", c.train.iterations},
        {"batch", c.train.batch},
        {"lr", c.train.lr},
        {"lr_schedule", c.train.lr_schedule},
        {"weight_decay", c.train.weight_decay},
        {"log_every", c.train.log_every},
        {"checkpoint_every", c.train.checkpoint_every}}},
      {"sampler",
       {{"mode", c.sampler.mode == SamplerMode::diffusion ? "diffusion" : "flow_matching"},
        {"jumpy_interval", c.sampler.jumpy_interval},
        {"flow_steps", c.sampler.flow_steps}}},
      {"mptd",
       {{"exploration", c.mptd.exploration},
        {"m0", c.mptd.m0},
        {"m1", c.mptd.m1},
        {"branching", c.mptd.branching},
        {"budget", c.mptd.budget},
        {"guidance_weight", c.mptd.guidance_weight},
        {"neighbors", c.mptd.neighbors}}},
      {"data", {{"tasks", c.data.tasks}, {"trajs_per_pair", c.data.trajs_per_pair}}},
      {"eval",
       {{"episodes", c.eval.episodes},
        {"seed", c.eval.seed},
        {"max_steps", c.eval.max_steps},
        {"replan_stride", c.eval.replan_stride}}},
      {"seed", c.seed},
      {"ablation",
       {{"use_ebf", c.ablation.use_ebf},
        {"use_mptd", c.ablation.use_mptd},
        {"use_soft_prompt", c.ablation.use_soft_prompt}}},
  };
}

std::uint64_t config_hash(const RunConfig& config) {
  return fnv1a64(to_json(config).dump());
}

std::vector<EmbodimentSpec> effective_embodiments(const RunConfig& config) {
  auto specs = config.embodiments;
  if (!config.ablation.use_ebf)
    for (auto& s : specs) s.sigma_e = 1.0;
  return specs;
}

double effective_delta(const RunConfig& config) {
  return config.ablation.use_ebf ? config.noise.delta : 1.0;
}

MptdConfig mptd_config(const RunConfig& c) {
  MptdConfig m;
  m.exploration = c.mptd.exploration;
  m.m0 = c.mptd.m0;
  m.m1 = c.mptd.m1;
  m.branching = c.mptd.branching;
  m.budget = c.mptd.budget;
  m.jumpy_interval = c.sampler.jumpy_interval;
  m.guidance_weight = c.mptd.guidance_weight;
  return m;
}

}  // namespace xdiff
