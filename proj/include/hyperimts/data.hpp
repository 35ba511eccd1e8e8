#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hyperimts/common.hpp"

namespace hyperimts {

/// One measured value of one variable at one timestamp.
struct Observation {
  double t = 0.0;
  double z = 0.0;
  int u = 0;
};

/// One irregular multivariate series: a set of observations over up to
/// n_variables variables. Canonical form sorts observations by (t, u); no two
/// observations may share the same (t, u).
struct Sample {
  std::int64_t id = 0;
  std::vector<Observation> observations;
  int n_variables = 0;
  std::string unit = "t";

  std::size_t obs_count() const { return observations.size(); }
  /// Number of distinct timestamps in this sample.
  std::size_t distinct_timestamps() const;
};

/// Sorts by (t, u) and rejects duplicate (t, u) pairs.
void canonicalize(Sample& sample);

struct ForecastQuery {
  double t = 0.0;
  int u = 0;
};

/// A sample divided at t_s: observations at t <= t_s form the lookback
/// window, later ones become (t, u) queries with their values as targets.
struct SplitSample {
  std::vector<Observation> lookback;
  std::vector<ForecastQuery> queries;
  std::vector<double> targets;  // aligned with queries
  double t_s = 0.0;
  int n_variables = 0;
};

enum class Split { train, val, test };

struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> stddev;  // floored at 1e-8
  bool applied = false;
};

struct Dataset {
  std::vector<Sample> samples;
  int n_variables = 0;
  std::string unit = "t";

  // Populated by assign_splits. train/val orders are seed-shuffled; test
  // order follows file order.
  std::vector<Split> assignment;
  std::vector<std::size_t> train_order;
  std::vector<std::size_t> val_order;
  std::vector<std::size_t> test_order;

  NormalizationStats norm;

  bool has_assignment() const { return !assignment.empty(); }
  const std::vector<std::size_t>& order_of(Split s) const;
};

/// Reads a JSON-lines dataset: one observation per line as
/// {"sample_id": <int>, "t": <float>, "u": <int>, "z": <float>},
/// with an optional leading header {"meta": {"U": <int>, "unit": "<str>"}}.
/// Observations are grouped by sample_id (first-seen order) and
/// canonicalized. Malformed lines and duplicate (t, u) pairs are rejected.
Dataset load_dataset(const std::string& path);

/// Canonical writer for the same format; byte-stable for a given dataset.
void save_dataset(const Dataset& dataset, const std::string& path);

struct SynthOptions {
  double shared_fraction = 0.3;  // chance an observation is mirrored to another variable
  double noise_sigma = 0.05;
  double mixing = 0.7;  // 0 = independent variables, 1 = fully shared latents
};

/// Draws samples from per-variable sums of three random-phase sinusoids,
/// linearly mixed across variables so they are correlated, observed at
/// per-variable Poisson timestamps on [0, t_max]. A seeded fraction of
/// timestamps is copied to a second variable to create aligned observations.
/// Samples that come out empty are dropped with a warning.
Dataset synth_generate(std::size_t n_samples, int n_variables, double t_max,
                       double rate, std::uint64_t seed,
                       const SynthOptions& opts = {});

/// Partitions a sample at t_s. If forecast_timestamps > 0, queries are
/// truncated to the that many smallest distinct forecast timestamps. Throws
/// ContractError if either side comes out empty.
SplitSample split_lookback(const Sample& sample, double t_s,
                           int forecast_timestamps = 0);

/// 80/10/10 assignment by sample count (rounded to nearest, train takes the
/// remainder). Assignment and train/val orders are seed-deterministic; the
/// test subset keeps file order.
void assign_splits(Dataset& dataset, std::uint64_t seed);

/// Per-variable z-scoring with statistics from the train split only.
/// Variables absent from the train split keep mean 0, std 1.
void normalize(Dataset& dataset);

double denormalize_value(const NormalizationStats& norm, int u, double z);

struct StatsReport {
  double avg_obs = 0.0;
  /// Mean over samples of T_i * U, the observation count after expanding
  /// each sample to its full distinct-timestamp x variable grid.
  double avg_obs_padded = 0.0;
  std::size_t max_length = 0;  // max distinct timestamps in any sample
  int n_variables = 0;
  std::size_t n_samples = 0;

  std::string to_text() const;
  std::string to_json() const;
};

StatsReport dataset_stats(const Dataset& dataset);

}  // namespace hyperimts
