#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "xdiff/embodiment.hpp"
#include "xdiff/mptd.hpp"
#include "xdiff/sampler.hpp"
#include "xdiff/schedule.hpp"

namespace xdiff {

/// Schema violation; `key()` is the dotted path of the offending entry.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::runtime_error(key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct NoiseSection {
  double delta = 0.5;
  std::string schedule = "cosine";  // "cosine" or "linear"
  PyramidMode pyramid = PyramidMode::window;
  int steps = 50;
};

struct ModelSection {
  int hidden = 256;
  int hidden_layers = 3;
  int prompt_dim = 16;
  int horizon = 16;
};

struct TrainSection {
  int iterations = 350;
  int batch = 32;
  double lr = 1e-3;
  std::string lr_schedule = "cosine";  // or "constant"
  double weight_decay = 0.05;
  int log_every = 100;
  int checkpoint_every = 0;
};

struct SamplerSection {
  SamplerMode mode = SamplerMode::diffusion;
  int jumpy_interval = 10;
  int flow_steps = 10;
};

struct MptdSection {
  double exploration = 3.0;
  double m0 = 1.0;
  double m1 = 1.1;
  int branching = 3;
  int budget = 24;
  double guidance_weight = 0.3;
  int neighbors = 32;  // observation neighbours mined per query; 0 = whole task
};

struct DataSection {
  int tasks = 5;
  int trajs_per_pair = 10;
};

struct EvalSection {
  int episodes = 200;  // per variant, split evenly across embodiments
  std::uint64_t seed = 0;
  int max_steps = 200;
  int replan_stride = 8;
};

struct AblationFlags {
  bool use_ebf = true;
  bool use_mptd = true;
  bool use_soft_prompt = true;
};

struct RunConfig {
  UnifiedActionLayout layout = UnifiedActionLayout::reference();
  std::vector<EmbodimentSpec> embodiments = builtin_embodiments();
  NoiseSection noise;
  ModelSection model;
  TrainSection train;
  SamplerSection sampler;
  MptdSection mptd;
  DataSection data;
  EvalSection eval;
  std::uint64_t seed = 0;
  AblationFlags ablation;
};

/// Strict parse: unknown keys, missing keys and bad values throw ConfigError.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::string& path);
nlohmann::json to_json(const RunConfig& config);

/// FNV-1a over the canonical JSON dump.
std::uint64_t config_hash(const RunConfig& config);

/// Embodiment specs after the ablation flags (use_ebf=false forces sigma_e=1).
std::vector<EmbodimentSpec> effective_embodiments(const RunConfig& config);
/// use_ebf=false forces delta=1.
double effective_delta(const RunConfig& config);

MptdConfig mptd_config(const RunConfig& config);

}  // namespace xdiff
