#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hyperimts/data.hpp"
#include "hyperimts/model.hpp"

namespace hyperimts {

struct TrainConfig {
  double lr0 = 1e-2;
  int max_epochs = 300;
  int patience = 10;
  std::vector<std::uint64_t> seeds = {2024, 2025, 2026, 2027, 2028};
  int batch_size = 4;

  // Split protocol applied to every sample before training.
  double lookback_fraction = 0.75;  // t_s at this fraction of the sample span
  int forecast_timestamps = 0;      // keep only this many distinct forecast
                                    // timestamps; 0 keeps all
  bool report_denormalized = false;

  void validate() const;
};

/// Mean squared error over the masked entries only. The mask must select at
/// least one entry. pred is a column tensor; target/mask are plain data.
Tensor masked_mse(const Tensor& pred, const std::vector<double>& target,
                  const std::vector<bool>& mask);

/// Learning rate for epoch n (1-based): lr0 unchanged through epoch 3, then
/// lr0 * 0.8^(n-3). The decay factor is computed as 8^k / 10^k so small
/// powers come out decimal-exact (0.8, 0.64, ...).
double lr_schedule(int n, double lr0);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
  std::size_t n_entries = 0;
};

/// Everything one seeded run produced. Wall-clock fields are measured and
/// therefore excluded from to_json output so serialized records stay
/// byte-reproducible; report them separately.
struct RunRecord {
  std::uint64_t seed = 0;
  ModelConfig model_config;
  std::string optimizer;
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  int stopped_epoch = 0;
  double best_val_loss = 0.0;
  double restored_val_loss = 0.0;  // recomputed after restoring best params
  Metrics test;
  Metrics test_denormalized;  // filled when report_denormalized is set
  bool has_denormalized = false;
  std::size_t param_count = 0;
  std::size_t trainable_param_count = 0;
  std::string checkpoint;  // best-epoch parameter blob

  double seconds_total = 0.0;
  double seconds_per_iteration = 0.0;

  std::string to_json() const;
  std::string metrics_csv(bool header) const;  // seed,epoch,train_loss,val_loss,lr
};

/// Adam with beta1=0.9, beta2=0.999, eps=1e-8 over a fixed parameter list.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(std::vector<Tensor> params);
  void step(double lr);

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  long long t_ = 0;
};

/// Trains one seed on the dataset's train split with early stopping on the
/// val split, restores the best checkpoint, and evaluates the test split.
/// The dataset must have split assignment (and normally normalization).
RunRecord train(const Dataset& dataset, const ModelConfig& model_config,
                const TrainConfig& train_config);

/// Pooled MSE/MAE over all forecast-query entries of a split, in the data's
/// (normalized) space.
Metrics evaluate(const Dataset& dataset, Split split, const ModelParams& params,
                 const TrainConfig& train_config);

/// Scalar-path metric math shared by evaluate and the tests.
Metrics compute_metrics(const std::vector<double>& pred,
                        const std::vector<double>& target);

struct SeedAggregate {
  std::vector<RunRecord> runs;
  double mean_mse = 0.0, std_mse = 0.0;
  double mean_mae = 0.0, std_mae = 0.0;

  /// "0.1234 ± 0.0056" style cell, four decimals; std omitted for one run.
  std::string format_mse() const;
  std::string format_mae() const;
};

SeedAggregate aggregate_runs(std::vector<RunRecord> runs);

}  // namespace hyperimts
