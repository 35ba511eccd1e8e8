#include "hyperimts/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace hyperimts {

using nlohmann::json;

void TrainConfig::validate() const {
  if (lr0 <= 0.0) throw ConfigError("lr0 must be positive");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (lookback_fraction <= 0.0 || lookback_fraction >= 1.0) {
    throw ConfigError("lookback_fraction must lie in (0, 1)");
  }
  if (forecast_timestamps < 0) throw ConfigError("forecast_timestamps must be >= 0");
}

Tensor masked_mse(const Tensor& pred, const std::vector<double>& target,
                  const std::vector<bool>& mask) {
  if (pred.size() != target.size() || pred.size() != mask.size()) {
    throw ShapeError("masked_mse: lengths differ: pred " + std::to_string(pred.size()) +
                     ", target " + std::to_string(target.size()) + ", mask " +
                     std::to_string(mask.size()));
  }
  std::size_t n_active = 0;
  std::vector<double> mask_values(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask_values[i] = mask[i] ? 1.0 : 0.0;
    if (mask[i]) ++n_active;
  }
  if (n_active == 0) throw ContractError("masked_mse: mask selects no entries");
  Tensor target_t = Tensor::constant(pred.shape(), std::vector<double>(target));
  Tensor mask_t = Tensor::constant(pred.shape(), std::move(mask_values));
  Tensor diff = sub(pred, target_t);
  Tensor sq = mul(diff, diff);
  return scale(sum_all(mul(sq, mask_t)), 1.0 / static_cast<double>(n_active));
}

double lr_schedule(int n, double lr0) {
  if (n < 1) throw ContractError("lr_schedule: epoch index starts at 1");
  if (n <= 3) return lr0;
  const int k = n - 3;
  // 8^k is a power of two (exact); 10^k is exact up to k=22, so one division
  // yields the correctly rounded decimal 0.8^k for every early epoch.
  double factor = std::pow(8.0, k) / std::pow(10.0, k);
  return lr0 * factor;
}

AdamOptimizer::AdamOptimizer(std::vector<Tensor> params) : params_(std::move(params)) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i].size(), 0.0);
    v_[i].assign(params_[i].size(), 0.0);
  }
}

void AdamOptimizer::step(double lr) {
  static constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& g = params_[i].grad();
    auto& values = params_[i].leaf_values();
    for (std::size_t j = 0; j < values.size(); ++j) {
      m_[i][j] = beta1 * m_[i][j] + (1.0 - beta1) * g[j];
      v_[i][j] = beta2 * v_[i][j] + (1.0 - beta2) * g[j] * g[j];
      const double mhat = m_[i][j] / bc1;
      const double vhat = v_[i][j] / bc2;
      values[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

namespace {

struct PreparedSample {
  SplitSample split;
  Hypergraph hg;
  SharedIndex shared;
};

// Splits and graphs are pure functions of the data; build them once per run.
std::vector<PreparedSample> prepare(const Dataset& ds,
                                    const std::vector<std::size_t>& order,
                                    const TrainConfig& tc, const char* split_name) {
  std::vector<PreparedSample> out;
  std::size_t dropped = 0;
  for (std::size_t idx : order) {
    const Sample& s = ds.samples[idx];
    if (s.observations.size() < 2) {
      ++dropped;
      continue;
    }
    double t_min = s.observations.front().t;
    double t_max = s.observations.back().t;
    if (t_min == t_max) {
      ++dropped;
      continue;
    }
    double t_s = t_min + tc.lookback_fraction * (t_max - t_min);
    PreparedSample ps;
    try {
      ps.split = split_lookback(s, t_s, tc.forecast_timestamps);
    } catch (const ContractError&) {
      ++dropped;
      continue;
    }
    ps.hg = build_hypergraph(ps.split);
    ps.shared = build_shared_index(ps.hg);
    out.push_back(std::move(ps));
  }
  if (dropped > 0) {
    std::cerr << "warning: dropped " << dropped << " unusable " << split_name
              << " samples (empty lookback or forecast side)\n";
  }
  return out;
}

// Pooled loss over a set of samples: sum of squared errors over all query
// entries divided by the total entry count, identical to masked MSE over one
// padded batch.
double pooled_loss(const std::vector<PreparedSample>& samples,
                   const ModelParams& params, const ModelConfig& config) {
  double sum_sq = 0.0;
  std::size_t n = 0;
  for (const auto& ps : samples) {
    std::vector<double> preds = predict(ps.hg, ps.shared, params, config);
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const double d = preds[i] - ps.split.targets[i];
      sum_sq += d * d;
    }
    n += preds.size();
  }
  if (n == 0) throw ContractError("pooled_loss: no forecast entries");
  return sum_sq / static_cast<double>(n);
}

}  // namespace

RunRecord train(const Dataset& dataset, const ModelConfig& model_config,
                const TrainConfig& train_config) {
  model_config.validate();
  train_config.validate();
  if (!dataset.has_assignment()) {
    throw ContractError("train: dataset has no split assignment");
  }

  auto train_samples = prepare(dataset, dataset.train_order, train_config, "train");
  auto val_samples = prepare(dataset, dataset.val_order, train_config, "val");
  auto test_samples = prepare(dataset, dataset.test_order, train_config, "test");
  if (train_samples.empty() || val_samples.empty()) {
    throw ContractError("train: empty train or val split after preparation");
  }

  ModelParams params = ModelParams::init(model_config, dataset.n_variables);
  AdamOptimizer optimizer(params.trainable());
  Rng shuffle_rng(model_config.seed ^ 0x9E3779B97F4A7C15ULL);

  RunRecord record;
  record.seed = model_config.seed;
  record.model_config = model_config;
  record.optimizer = "adam(beta1=0.9, beta2=0.999, eps=1e-8)";
  record.param_count = params.total_count();
  record.trainable_param_count = params.trainable_count();

  ModelParams best_params = params.clone();
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int epochs_since_best = 0;
  long long total_batches = 0;

  std::vector<std::size_t> order(train_samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const auto t_start = std::chrono::steady_clock::now();
  int epoch = 0;
  while (epoch < train_config.max_epochs) {
    ++epoch;
    const double lr = lr_schedule(epoch, train_config.lr0);
    shuffle_rng.shuffle(order);

    double epoch_sq = 0.0;
    std::size_t epoch_entries = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(train_config.batch_size)) {
      const std::size_t end = std::min(
          order.size(), begin + static_cast<std::size_t>(train_config.batch_size));
      Tape tape;
      std::vector<Tensor> preds;
      std::vector<double> targets;
      for (std::size_t i = begin; i < end; ++i) {
        const auto& ps = train_samples[order[i]];
        preds.push_back(forward(ps.hg, ps.shared, params, model_config).predictions);
        targets.insert(targets.end(), ps.split.targets.begin(), ps.split.targets.end());
      }
      Tensor batch_pred = preds.size() == 1 ? preds[0] : concat(preds, 0);
      Tensor loss = masked_mse(batch_pred, targets,
                               std::vector<bool>(targets.size(), true));
      const double loss_value = loss.value(0);
      if (!std::isfinite(loss_value)) {
        throw NumericError("training diverged: non-finite loss at epoch " +
                           std::to_string(epoch));
      }
      params.zero_grad();
      tape.backward(loss);
      optimizer.step(lr);
      ++total_batches;
      epoch_sq += loss_value * static_cast<double>(targets.size());
      epoch_entries += targets.size();
    }

    const double train_loss = epoch_sq / static_cast<double>(epoch_entries);
    const double val_loss = pooled_loss(val_samples, params, model_config);
    if (!std::isfinite(val_loss)) {
      throw NumericError("training diverged: non-finite val loss at epoch " +
                         std::to_string(epoch));
    }
    record.epochs.push_back(EpochRecord{epoch, lr, train_loss, val_loss});

    if (val_loss < best_val) {
      best_val = val_loss;
      best_epoch = epoch;
      best_params = params.clone();
      epochs_since_best = 0;
    } else {
      ++epochs_since_best;
      if (epochs_since_best >= train_config.patience) break;
    }
  }
  const auto t_end = std::chrono::steady_clock::now();

  record.best_epoch = best_epoch;
  record.stopped_epoch = epoch;
  record.best_val_loss = best_val;
  record.seconds_total = std::chrono::duration<double>(t_end - t_start).count();
  record.seconds_per_iteration =
      total_batches > 0 ? record.seconds_total / static_cast<double>(total_batches) : 0.0;

  // Restore the best checkpoint and confirm it reproduces the recorded val
  // loss; reported test metrics always come from the best epoch.
  params = best_params;
  record.restored_val_loss = pooled_loss(val_samples, params, model_config);

  Metrics test;
  Metrics test_denorm;
  double sum_sq = 0.0, sum_abs = 0.0, sum_sq_d = 0.0, sum_abs_d = 0.0;
  std::size_t n = 0;
  for (const auto& ps : test_samples) {
    std::vector<double> preds = predict(ps.hg, ps.shared, params, model_config);
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const double d = preds[i] - ps.split.targets[i];
      sum_sq += d * d;
      sum_abs += std::abs(d);
      if (train_config.report_denormalized && dataset.norm.applied) {
        const double dd = d * dataset.norm.stddev[ps.split.queries[i].u];
        sum_sq_d += dd * dd;
        sum_abs_d += std::abs(dd);
      }
      ++n;
    }
  }
  if (n > 0) {
    test.mse = sum_sq / static_cast<double>(n);
    test.mae = sum_abs / static_cast<double>(n);
    test.n_entries = n;
    if (train_config.report_denormalized && dataset.norm.applied) {
      test_denorm.mse = sum_sq_d / static_cast<double>(n);
      test_denorm.mae = sum_abs_d / static_cast<double>(n);
      test_denorm.n_entries = n;
      record.has_denormalized = true;
      record.test_denormalized = test_denorm;
    }
  }
  record.test = test;
  record.checkpoint = params.to_checkpoint();
  return record;
}

Metrics evaluate(const Dataset& dataset, Split split, const ModelParams& params,
                 const TrainConfig& train_config) {
  if (!dataset.has_assignment()) {
    throw ContractError("evaluate: dataset has no split assignment");
  }
  auto samples = prepare(dataset, dataset.order_of(split), train_config, "eval");
  if (samples.empty()) throw ContractError("evaluate: split is empty");
  std::vector<double> preds, targets;
  for (const auto& ps : samples) {
    auto p = predict(ps.hg, ps.shared, params, params.config);
    preds.insert(preds.end(), p.begin(), p.end());
    targets.insert(targets.end(), ps.split.targets.begin(), ps.split.targets.end());
  }
  return compute_metrics(preds, targets);
}

Metrics compute_metrics(const std::vector<double>& pred,
                        const std::vector<double>& target) {
  if (pred.size() != target.size()) {
    throw ShapeError("compute_metrics: lengths differ");
  }
  if (pred.empty()) throw ContractError("compute_metrics: no entries");
  Metrics m;
  double sum_sq = 0.0, sum_abs = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    sum_sq += d * d;
    sum_abs += std::abs(d);
  }
  m.mse = sum_sq / static_cast<double>(pred.size());
  m.mae = sum_abs / static_cast<double>(pred.size());
  m.n_entries = pred.size();
  return m;
}

namespace {

json metrics_to_json(const Metrics& m) {
  return json{{"mse", m.mse}, {"mae", m.mae}, {"n_entries", m.n_entries}};
}

json config_json(const ModelConfig& c) {
  return json{{"p_obs", c.p_obs},       {"p_time", c.p_time},
              {"p_var", c.p_var},       {"heads", c.heads},
              {"layers", c.layers},     {"delta_init", c.delta_init},
              {"time_scale", c.time_scale}, {"ablation", to_string(c.ablation)},
              {"seed", c.seed}};
}

}  // namespace

std::string RunRecord::to_json() const {
  json epochs_j = json::array();
  for (const auto& e : epochs) {
    epochs_j.push_back({{"epoch", e.epoch},
                        {"lr", e.lr},
                        {"train_loss", e.train_loss},
                        {"val_loss", e.val_loss}});
  }
  json j = {{"seed", seed},
            {"model_config", config_json(model_config)},
            {"optimizer", optimizer},
            {"epochs", epochs_j},
            {"best_epoch", best_epoch},
            {"stopped_epoch", stopped_epoch},
            {"best_val_loss", best_val_loss},
            {"restored_val_loss", restored_val_loss},
            {"test", metrics_to_json(test)},
            {"param_count", param_count},
            {"trainable_param_count", trainable_param_count}};
  if (has_denormalized) j["test_denormalized"] = metrics_to_json(test_denormalized);
  return j.dump(2);
}

std::string RunRecord::metrics_csv(bool header) const {
  std::ostringstream os;
  if (header) os << "seed,epoch,train_loss,val_loss,lr\n";
  for (const auto& e : epochs) {
    os << seed << "," << e.epoch << "," << e.train_loss << "," << e.val_loss << ","
       << e.lr << "\n";
  }
  return os.str();
}

SeedAggregate aggregate_runs(std::vector<RunRecord> runs) {
  if (runs.empty()) throw ContractError("aggregate_runs: no runs");
  SeedAggregate agg;
  double sum_mse = 0.0, sum_mae = 0.0;
  for (const auto& r : runs) {
    sum_mse += r.test.mse;
    sum_mae += r.test.mae;
  }
  const double n = static_cast<double>(runs.size());
  agg.mean_mse = sum_mse / n;
  agg.mean_mae = sum_mae / n;
  double var_mse = 0.0, var_mae = 0.0;
  for (const auto& r : runs) {
    var_mse += (r.test.mse - agg.mean_mse) * (r.test.mse - agg.mean_mse);
    var_mae += (r.test.mae - agg.mean_mae) * (r.test.mae - agg.mean_mae);
  }
  agg.std_mse = std::sqrt(var_mse / n);
  agg.std_mae = std::sqrt(var_mae / n);
  agg.runs = std::move(runs);
  return agg;
}

namespace {

std::string format_cell(double mean, double stddev, std::size_t n_runs) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  os << mean;
  if (n_runs > 1) os << " ± " << stddev;
  return os.str();
}

}  // namespace

std::string SeedAggregate::format_mse() const {
  return format_cell(mean_mse, std_mse, runs.size());
}

std::string SeedAggregate::format_mae() const {
  return format_cell(mean_mae, std_mae, runs.size());
}

}  // namespace hyperimts
