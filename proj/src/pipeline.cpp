#include "xdiff/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

#include "xdiff/mptd.hpp"
#include "xdiff/rng.hpp"
#include "xdiff/sampler.hpp"

namespace xdiff {

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json rates = nlohmann::json::object();
  for (const auto& [name, rate] : per_embodiment) rates[name] = rate;
  std::ostringstream hash;
  hash << std::hex << std::setw(16) << std::setfill('0') << config_hash;
  std::ostringstream data;
  data << std::hex << std::setw(16) << std::setfill('0') << dataset_hash;
  return {{"variant", variant},
          {"per_embodiment", rates},
          {"avg", avg},
          {"episodes", episodes},
          {"successes", successes},
          {"failures", {{"mobility", mobility}, {"interaction", interaction}}},
          {"seeds", seeds},
          {"config_hash", hash.str()},
          {"dataset_hash", data.str()},
          {"loss_curve", loss_curve}};
}

std::string metrics_csv(const std::vector<MetricsReport>& rows) {
  std::ostringstream out;
  out << "Method";
  if (!rows.empty())
    for (const auto& [name, _] : rows.front().per_embodiment) out << ',' << name;
  out << ",Avg,#1,#2\n";
  out << std::fixed << std::setprecision(1);
  for (const auto& r : rows) {
    out << r.variant;
    for (const auto& [_, rate] : r.per_embodiment) out << ',' << 100.0 * rate;
    out << ',' << 100.0 * r.avg << ',' << r.mobility << ',' << r.interaction << '\n';
  }
  return out.str();
}

std::vector<Task> config_tasks(const RunConfig& config) {
  auto all = builtin_tasks();
  all.resize(std::size_t(config.data.tasks));
  return all;
}

NoiseSchedule config_schedule(const RunConfig& config) {
  if (config.noise.schedule == "linear")
    return build_linear_schedule(config.noise.steps, 1e-4, 0.02);
  return build_cosine_schedule(config.noise.steps);
}

CovarianceTable config_covariances(const RunConfig& config) {
  CovarianceTable covs;
  for (const auto& spec : effective_embodiments(config))
    covs[spec.id] = build_ebf_covariance(spec, config.layout, effective_delta(config),
                                         config.noise.pyramid);
  return covs;
}

DenoiserShape config_shape(const RunConfig& config) {
  DenoiserShape s;
  s.horizon = config.model.horizon;
  s.action_dim = config.layout.total_dim();
  s.proprio_dim = kProprioDim;
  s.context_dim = kContextDim;
  s.embodiments = int(config.embodiments.size());
  s.prompt_dim = config.model.prompt_dim;
  s.hidden = config.model.hidden;
  s.hidden_layers = config.model.hidden_layers;
  return s;
}

TrainConfig train_config(const RunConfig& config) {
  TrainConfig t;
  t.iterations = config.train.iterations;
  t.batch = config.train.batch;
  t.hyper.lr = config.train.lr;
  t.lr_schedule =
      config.train.lr_schedule == "cosine" ? LrSchedule::cosine : LrSchedule::constant;
  t.hyper.weight_decay = config.train.weight_decay;
  t.seed = config.seed;
  t.train_prompts = config.ablation.use_soft_prompt;
  t.objective = config.sampler.mode == SamplerMode::diffusion ? Objective::x0
                                                              : Objective::velocity;
  t.log_every = config.train.log_every;
  t.checkpoint_every = config.train.checkpoint_every;
  return t;
}

Dataset build_dataset(const RunConfig& config) {
  return generate_dataset(config_tasks(config), config.embodiments, config.layout,
                          config.data.trajs_per_pair, stream_seed(config.seed, "data"));
}

TrainResult train_model(const RunConfig& config, const Dataset& dataset,
                        const CheckpointHook& on_checkpoint) {
  if (!(dataset.layout == config.layout))
    throw std::runtime_error("dataset layout does not match the config layout");
  return train(training_pool(dataset, config.model.horizon), config_shape(config),
               config_schedule(config), config_covariances(config),
               train_config(config), on_checkpoint);
}

Policy make_policy(const RunConfig& config, const DenoiserParams& params,
                   const Dataset& dataset, const EmbodimentSpec& spec,
                   long* evaluations) {
  require_finite(params);
  if (!(params.shape() == config_shape(config)))
    throw std::runtime_error("checkpoint shape does not match the config");
  auto schedule = std::make_shared<NoiseSchedule>(config_schedule(config));
  const CovarianceTable covs = config_covariances(config);
  auto cov = std::make_shared<EbfCovariance>(covs.at(spec.id));
  auto shared_params = std::make_shared<DenoiserParams>(params);
  const int horizon = config.model.horizon;
  const UnifiedActionLayout layout = config.layout;
  const SamplerConfig base{config.noise.steps, config.sampler.jumpy_interval,
                           config.sampler.mode, 0, config.sampler.flow_steps};
  const bool use_mptd =
      config.ablation.use_mptd && config.sampler.mode == SamplerMode::diffusion;
  const MptdConfig mcfg = mptd_config(config);
  const int neighbors = config.mptd.neighbors;

  X0Predictor predictor = make_x0_predictor(*shared_params);
  if (evaluations) predictor = counting(predictor, *evaluations);
  predictor = [predictor, shared_params](const ActionChunk& x,
                                         const ConditioningBundle& c) {
    return predictor(x, c);
  };

  return [=, &dataset](const Observation& obs, std::uint64_t seed) {
    ConditioningBundle cond{obs.proprio, obs.context, schedule->steps, spec.id};
    SamplerConfig sc = base;
    sc.seed = seed;
    ActionChunk chunk;
    if (config.sampler.mode == SamplerMode::flow_matching) {
      const double time_scale = sc.steps;
      VelocityPredictor v = [&](const ActionChunk& x, double t,
                                const ConditioningBundle& c) {
        if (evaluations) ++*evaluations;
        return predict_output(*shared_params, x, c, t * time_scale);
      };
      chunk = sample_flow_matching(v, cond, horizon, *cov, sc);
    } else if (use_mptd) {
      std::optional<MetaQuery> query;
      if (neighbors > 0) {
        Eigen::VectorXd key(obs.context.size() + obs.proprio.size());
        key << obs.context, obs.proprio;
        query = MetaQuery{key, neighbors};
      }
      const auto meta =
          build_meta_actions(dataset, obs.task_key, spec, layout, horizon, query);
      chunk = mptd_sample(predictor, cond, horizon, *schedule, *cov, spec, layout,
                          meta, mcfg, seed)
                  .chunk;
    } else {
      chunk = sample_full(predictor, cond, horizon, *schedule, *cov, sc);
    }
    apply_padding(chunk, spec, layout);
    return chunk;
  };
}

MetricsReport evaluate_model(const RunConfig& config, const DenoiserParams& params,
                             const Dataset& dataset, const std::string& variant) {
  const auto tasks = config_tasks(config);
  const int count = int(config.embodiments.size());
  const std::uint64_t eval_root =
      mix_seed(stream_seed(config.seed, "eval"), config.eval.seed);
  EvalOptions options{config.eval.max_steps, config.eval.replan_stride};

  MetricsReport report;
  report.variant = variant;
  report.seeds = {config.seed};
  report.config_hash = config_hash(config);
  report.dataset_hash = dataset_hash(dataset);
  double sum = 0.0;
  for (int i = 0; i < count; ++i) {
    const EmbodimentSpec& spec = config.embodiments[std::size_t(i)];
    const int episodes = config.eval.episodes / count + (i < config.eval.episodes % count);
    const EvalSummary s =
        evaluate(make_policy(config, params, dataset, spec), spec, config.layout, tasks,
                 episodes, mix_seed(eval_root, std::uint64_t(spec.id)), options);
    report.per_embodiment.emplace_back(spec.name, s.success_rate());
    sum += s.success_rate();
    report.episodes += s.episodes;
    report.successes += s.successes;
    report.mobility += s.mobility;
    report.interaction += s.interaction;
  }
  report.avg = sum / count;
  return report;
}

MetricsReport combine_seeds(const std::vector<MetricsReport>& per_seed) {
  if (per_seed.empty()) throw std::invalid_argument("combine_seeds: no reports");
  MetricsReport out = per_seed.front();
  out.seeds.clear();
  out.episodes = out.successes = out.mobility = out.interaction = 0;
  for (auto& [_, rate] : out.per_embodiment) rate = 0.0;
  for (const auto& r : per_seed) {
    if (r.per_embodiment.size() != out.per_embodiment.size())
      throw std::invalid_argument("combine_seeds: embodiment mismatch");
    for (std::size_t i = 0; i < r.per_embodiment.size(); ++i)
      out.per_embodiment[i].second += r.per_embodiment[i].second;
    out.seeds.insert(out.seeds.end(), r.seeds.begin(), r.seeds.end());
    out.episodes += r.episodes;
    out.successes += r.successes;
    out.mobility += r.mobility;
    out.interaction += r.interaction;
  }
  double sum = 0.0;
  for (auto& [_, rate] : out.per_embodiment) {
    rate /= double(per_seed.size());
    sum += rate;
  }
  out.avg = sum / double(out.per_embodiment.size());
  return out;
}

std::vector<AblationRow> ablation_rows() {
  return {{"X-DiffVLA", "full", {true, true, true}},
          {"w/o SP", "wo_sp", {true, true, false}},
          {"w/o MPTD", "wo_mptd", {true, false, true}},
          {"w/o EBF", "wo_ebf", {false, true, true}},
          {"w/o ALL", "wo_all", {false, false, false}}};
}

std::pair<Eigen::MatrixXd, std::vector<std::string>> rollout_fingertip_features(
    const RunConfig& config, const DenoiserParams& params, const Dataset& dataset,
    int per_embodiment) {
  const WorldConstants world;
  const auto tasks = config_tasks(config);
  const std::uint64_t root = stream_seed(config.seed, "eval");
  std::vector<Eigen::Vector4d> rows;
  std::vector<std::string> labels;
  for (const auto& spec : config.embodiments) {
    const Policy policy = make_policy(config, params, dataset, spec);
    for (int i = 0; i < per_embodiment; ++i) {
      const Task& task = tasks[std::size_t(i) % tasks.size()];
      const std::uint64_t seed = mix_seed(mix_seed(root, std::uint64_t(spec.id)), std::uint64_t(i));
      WorldState s = reset_world(spec, config.layout, task, seed);
      ActionChunk chunk;
      int row = 0;
      std::uint64_t plan = 0;
      for (int t = 0; t < config.eval.max_steps; ++t) {
        if (chunk.rows() == 0 || row >= config.eval.replan_stride) {
          Observation obs{context_encoding(s, world), proprio_encoding(s, spec, world),
                          task.key, &s};
          chunk = policy(obs, mix_seed(seed, plan++));
          row = 0;
        }
        s = step(s, chunk.row(row++).transpose(), spec, config.layout, task, world);
        if (s.object.held_steps >= world.success_hold_steps) break;
      }
      rows.push_back(fingertip_features(s, world));
      labels.push_back(spec.name);
    }
  }
  Eigen::MatrixXd features(Eigen::Index(rows.size()), 4);
  for (std::size_t i = 0; i < rows.size(); ++i) features.row(Eigen::Index(i)) = rows[i].transpose();
  return {features, labels};
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path);
}

std::vector<MetricsReport> run_ablation(const RunConfig& base,
                                        const std::vector<AblationRow>& rows,
                                        const std::vector<std::uint64_t>& seeds,
                                        const Dataset& dataset,
                                        const std::string& out_dir,
                                        const ProgressLog& log) {
  if (seeds.empty()) throw std::invalid_argument("run_ablation: no seeds");
  // Key: training-relevant part of the config. MPTD settings never touch training.
  std::map<std::string, DenoiserParams> trained;
  std::vector<MetricsReport> reports;
  for (const auto& row : rows) {
    std::vector<MetricsReport> per_seed;
    for (std::uint64_t seed : seeds) {
      RunConfig cfg = base;
      cfg.seed = seed;
      cfg.ablation = row.flags;
      nlohmann::json key = to_json(cfg);
      key.erase("mptd");
      key["ablation"].erase("use_mptd");
      key.erase("eval");
      const std::string k = key.dump();
      auto it = trained.find(k);
      if (it == trained.end()) {
        if (log) log("train " + row.slug + " seed " + std::to_string(seed));
        it = trained.emplace(k, train_model(cfg, dataset).params).first;
      }
      if (log) log("eval " + row.slug + " seed " + std::to_string(seed));
      per_seed.push_back(evaluate_model(cfg, it->second, dataset, row.name));
      per_seed.back().config_hash = config_hash(cfg);
    }
    MetricsReport combined = combine_seeds(per_seed);
    RunConfig row_cfg = base;
    row_cfg.ablation = row.flags;
    combined.config_hash = config_hash(row_cfg);
    if (!out_dir.empty()) {
      const auto dir = std::filesystem::path(out_dir) / row.slug;
      std::filesystem::create_directories(dir);
      write_text((dir / "metrics.json").string(), combined.to_json().dump(2) + "\n");
      write_text((dir / "metrics.csv").string(), metrics_csv({combined}));
    }
    reports.push_back(std::move(combined));
  }
  return reports;
}

}  // namespace xdiff
