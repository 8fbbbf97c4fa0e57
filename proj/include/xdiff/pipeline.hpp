#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "xdiff/config.hpp"
#include "xdiff/dataset.hpp"
#include "xdiff/denoiser.hpp"
#include "xdiff/worldsim.hpp"

namespace xdiff {

struct MetricsReport {
  std::string variant;
  std::vector<std::pair<std::string, double>> per_embodiment;  // name, rate
  double avg = 0.0;
  int episodes = 0;
  int successes = 0;
  int mobility = 0;
  int interaction = 0;
  std::vector<std::uint64_t> seeds;
  std::uint64_t config_hash = 0;
  std::uint64_t dataset_hash = 0;
  std::string loss_curve;  // file name of the training curve, if written

  nlohmann::json to_json() const;
};

/// Table rows: Method, one column per embodiment, Avg, #1, #2 (rates in %).
std::string metrics_csv(const std::vector<MetricsReport>& rows);

std::vector<Task> config_tasks(const RunConfig& config);
NoiseSchedule config_schedule(const RunConfig& config);
CovarianceTable config_covariances(const RunConfig& config);
DenoiserShape config_shape(const RunConfig& config);
TrainConfig train_config(const RunConfig& config);

/// Expert dataset drawn from the "data" stream of the root seed.
Dataset build_dataset(const RunConfig& config);

TrainResult train_model(const RunConfig& config, const Dataset& dataset,
                        const CheckpointHook& on_checkpoint = {});

/// Chunk policy for one embodiment: diffusion, flow matching, or MPTD when
/// ablation.use_mptd is set. `evaluations`, when given, counts network calls.
Policy make_policy(const RunConfig& config, const DenoiserParams& params,
                   const Dataset& dataset, const EmbodimentSpec& spec,
                   long* evaluations = nullptr);

/// Evaluates every embodiment; eval.episodes is split evenly across them.
MetricsReport evaluate_model(const RunConfig& config, const DenoiserParams& params,
                             const Dataset& dataset, const std::string& variant);

/// Seed-averaged report: rates are averaged, episode and failure counts summed.
MetricsReport combine_seeds(const std::vector<MetricsReport>& per_seed);

struct AblationRow {
  std::string name;
  std::string slug;
  AblationFlags flags;
};

/// full, w/o SP, w/o MPTD, w/o EBF, w/o ALL.
std::vector<AblationRow> ablation_rows();

using ProgressLog = std::function<void(const std::string&)>;

/// Runs `rows` for every seed on one shared dataset. Models are trained once
/// per distinct training configuration; MPTD only changes inference. Each
/// row writes out_dir/<slug>/metrics.{json,csv} when out_dir is non-empty.
std::vector<MetricsReport> run_ablation(const RunConfig& base,
                                        const std::vector<AblationRow>& rows,
                                        const std::vector<std::uint64_t>& seeds,
                                        const Dataset& dataset,
                                        const std::string& out_dir = {},
                                        const ProgressLog& log = {});

/// Fingertip features of the final state of `per_embodiment` policy rollouts
/// for every embodiment, one row each, with the embodiment name as label.
std::pair<Eigen::MatrixXd, std::vector<std::string>> rollout_fingertip_features(
    const RunConfig& config, const DenoiserParams& params, const Dataset& dataset,
    int per_embodiment);

void write_text(const std::string& path, const std::string& text);

}  // namespace xdiff
