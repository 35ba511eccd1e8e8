#include "hyperimts/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace hyperimts {

using nlohmann::json;

std::size_t Sample::distinct_timestamps() const {
  std::set<double> ts;
  for (const auto& o : observations) ts.insert(o.t);
  return ts.size();
}

void canonicalize(Sample& sample) {
  std::sort(sample.observations.begin(), sample.observations.end(),
            [](const Observation& a, const Observation& b) {
              return a.t != b.t ? a.t < b.t : a.u < b.u;
            });
  for (std::size_t i = 1; i < sample.observations.size(); ++i) {
    const auto& prev = sample.observations[i - 1];
    const auto& cur = sample.observations[i];
    if (prev.t == cur.t && prev.u == cur.u) {
      throw DataError("sample " + std::to_string(sample.id) +
                      ": duplicate observation at (t=" + std::to_string(cur.t) +
                      ", u=" + std::to_string(cur.u) + ")");
    }
  }
}

const std::vector<std::size_t>& Dataset::order_of(Split s) const {
  switch (s) {
    case Split::train: return train_order;
    case Split::val: return val_order;
    default: return test_order;
  }
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file: " + path);

  Dataset ds;
  int meta_vars = 0;
  std::map<std::int64_t, std::size_t> sample_of_id;  // id -> index in ds.samples
  std::string line;
  std::size_t line_no = 0;
  int max_u = -1;

  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (j.contains("meta")) {
      const auto& meta = j["meta"];
      if (meta.contains("U")) meta_vars = meta["U"].get<int>();
      if (meta.contains("unit")) ds.unit = meta["unit"].get<std::string>();
      continue;
    }
    if (!j.contains("sample_id") || !j.contains("t") || !j.contains("u") ||
        !j.contains("z")) {
      throw ParseError(path + ":" + std::to_string(line_no) +
                       ": observation line needs sample_id, t, u, z");
    }
    Observation obs;
    std::int64_t sid;
    try {
      sid = j["sample_id"].get<std::int64_t>();
      obs.t = j["t"].get<double>();
      obs.u = j["u"].get<int>();
      obs.z = j["z"].get<double>();
    } catch (const json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!std::isfinite(obs.t) || !std::isfinite(obs.z)) {
      throw DataError(path + ":" + std::to_string(line_no) + ": non-finite t or z");
    }
    if (obs.u < 0) {
      throw DataError(path + ":" + std::to_string(line_no) + ": negative variable index");
    }
    max_u = std::max(max_u, obs.u);
    auto it = sample_of_id.find(sid);
    if (it == sample_of_id.end()) {
      it = sample_of_id.emplace(sid, ds.samples.size()).first;
      ds.samples.push_back(Sample{});
      ds.samples.back().id = sid;
    }
    ds.samples[it->second].observations.push_back(obs);
  }

  ds.n_variables = meta_vars > 0 ? meta_vars : max_u + 1;
  if (max_u >= ds.n_variables) {
    throw DataError(path + ": variable index " + std::to_string(max_u) +
                    " exceeds declared variable count " +
                    std::to_string(ds.n_variables));
  }
  for (auto& s : ds.samples) {
    s.n_variables = ds.n_variables;
    s.unit = ds.unit;
    canonicalize(s);
  }
  if (ds.samples.empty()) {
    std::cerr << "warning: dataset " << path << " contains no observations\n";
  }
  return ds;
}

void save_dataset(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset file: " + path);
  json meta = {{"meta", {{"U", dataset.n_variables}, {"unit", dataset.unit}}}};
  out << meta.dump() << "\n";
  for (const auto& s : dataset.samples) {
    for (const auto& o : s.observations) {
      json j = {{"sample_id", s.id}, {"t", o.t}, {"u", o.u}, {"z", o.z}};
      out << j.dump() << "\n";
    }
  }
  if (!out) throw IoError("failed writing dataset file: " + path);
}

Dataset synth_generate(std::size_t n_samples, int n_variables, double t_max,
                       double rate, std::uint64_t seed, const SynthOptions& opts) {
  if (n_samples < 1 || n_variables < 1) {
    throw ContractError("synth_generate: need at least one sample and one variable");
  }
  if (rate <= 0.0) throw ContractError("synth_generate: rate must be positive");

  Rng rng(seed);
  const int U = n_variables;
  const int n_waves = 3;

  // Dataset-level angular frequencies, 1..4 cycles over [0, t_max].
  std::vector<double> omega(n_waves);
  for (auto& w : omega) w = 2.0 * M_PI * rng.uniform(1.0, 4.0) / t_max;

  // Cross-variable mixing: rows blend the variable's own latent with the
  // others so that variables carry signal about each other. Off-diagonal
  // signs are random, which makes some pairs anti-correlated.
  std::vector<double> mix(static_cast<std::size_t>(U) * U, 0.0);
  for (int v = 0; v < U; ++v) {
    double off_total = 0.0;
    std::vector<double> off(U);
    for (int w = 0; w < U; ++w) {
      if (w == v) continue;
      off[w] = rng.uniform(-1.0, 1.0);
      off_total += std::abs(off[w]);
    }
    for (int w = 0; w < U; ++w) {
      if (w == v) {
        mix[v * U + w] = 1.0 - opts.mixing;
      } else if (off_total > 0.0) {
        mix[v * U + w] = opts.mixing * off[w] / off_total;
      }
    }
  }

  Dataset ds;
  ds.n_variables = U;
  std::size_t dropped = 0;

  for (std::size_t si = 0; si < n_samples; ++si) {
    // Per-sample latent phases and amplitudes.
    std::vector<double> phase(static_cast<std::size_t>(U) * n_waves);
    std::vector<double> amp(static_cast<std::size_t>(U) * n_waves);
    for (std::size_t i = 0; i < phase.size(); ++i) {
      phase[i] = rng.uniform(0.0, 2.0 * M_PI);
      amp[i] = rng.uniform(0.5, 1.0);
    }
    auto latent = [&](int v, double t) {
      double acc = 0.0;
      for (int k = 0; k < n_waves; ++k)
        acc += amp[v * n_waves + k] * std::sin(omega[k] * t + phase[v * n_waves + k]);
      return acc;
    };
    auto value_of = [&](int v, double t) {
      double acc = 0.0;
      for (int w = 0; w < U; ++w) acc += mix[v * U + w] * latent(w, t);
      return acc;
    };

    // Per-variable Poisson timestamps on [0, t_max].
    std::vector<std::set<double>> stamps(U);
    for (int v = 0; v < U; ++v) {
      double t = rng.exponential(rate);
      while (t < t_max) {
        stamps[v].insert(t);
        t += rng.exponential(rate);
      }
    }
    // Mirror a fraction of timestamps onto a second variable so aligned
    // observations exist alongside unaligned ones.
    if (U >= 2 && opts.shared_fraction > 0.0) {
      std::vector<std::pair<int, double>> drawn;
      for (int v = 0; v < U; ++v)
        for (double t : stamps[v]) drawn.emplace_back(v, t);
      for (const auto& [v, t] : drawn) {
        if (rng.uniform() >= opts.shared_fraction) continue;
        int w = static_cast<int>(rng.uniform_int(U - 1));
        if (w >= v) ++w;
        stamps[w].insert(t);
      }
    }

    Sample s;
    s.id = static_cast<std::int64_t>(si);
    s.n_variables = U;
    for (int v = 0; v < U; ++v) {
      for (double t : stamps[v]) {
        Observation o;
        o.t = t;
        o.u = v;
        o.z = value_of(v, t) + rng.gauss(0.0, opts.noise_sigma);
        s.observations.push_back(o);
      }
    }
    if (s.observations.empty()) {
      ++dropped;
      continue;
    }
    canonicalize(s);
    ds.samples.push_back(std::move(s));
  }
  if (dropped > 0) {
    std::cerr << "warning: dropped " << dropped << " empty synthetic samples\n";
  }
  // Re-number so ids stay contiguous after drops.
  for (std::size_t i = 0; i < ds.samples.size(); ++i)
    ds.samples[i].id = static_cast<std::int64_t>(i);
  return ds;
}

SplitSample split_lookback(const Sample& sample, double t_s, int forecast_timestamps) {
  SplitSample out;
  out.t_s = t_s;
  out.n_variables = sample.n_variables;
  std::vector<Observation> forecast;
  for (const auto& o : sample.observations) {
    if (o.t <= t_s)
      out.lookback.push_back(o);
    else
      forecast.push_back(o);
  }
  if (out.lookback.empty()) {
    throw ContractError("split_lookback: sample " + std::to_string(sample.id) +
                        " has no observations at or before t_s=" + std::to_string(t_s));
  }
  if (forecast.empty()) {
    throw ContractError("split_lookback: sample " + std::to_string(sample.id) +
                        " has no observations after t_s=" + std::to_string(t_s));
  }
  if (forecast_timestamps > 0) {
    // Keep only the K smallest distinct forecast timestamps.
    std::set<double> distinct;
    for (const auto& o : forecast) distinct.insert(o.t);
    if (static_cast<int>(distinct.size()) > forecast_timestamps) {
      auto it = distinct.begin();
      std::advance(it, forecast_timestamps);
      double cutoff = *it;  // first excluded timestamp
      std::vector<Observation> trimmed;
      for (const auto& o : forecast)
        if (o.t < cutoff) trimmed.push_back(o);
      forecast = std::move(trimmed);
    }
  }
  for (const auto& o : forecast) {
    out.queries.push_back(ForecastQuery{o.t, o.u});
    out.targets.push_back(o.z);
  }
  return out;
}

void assign_splits(Dataset& dataset, std::uint64_t seed) {
  const std::size_t n = dataset.samples.size();
  dataset.assignment.assign(n, Split::train);
  dataset.train_order.clear();
  dataset.val_order.clear();
  dataset.test_order.clear();
  if (n == 0) return;

  const auto n_val = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
  const auto n_test = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));

  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(seed);
  rng.shuffle(perm);

  const std::size_t n_train = n - n_val - n_test;
  for (std::size_t i = 0; i < n; ++i) {
    Split s = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
    dataset.assignment[perm[i]] = s;
    if (s == Split::train) dataset.train_order.push_back(perm[i]);
    else if (s == Split::val) dataset.val_order.push_back(perm[i]);
    else dataset.test_order.push_back(perm[i]);
  }
  // Test evaluation follows file order.
  std::sort(dataset.test_order.begin(), dataset.test_order.end());
}

void normalize(Dataset& dataset) {
  if (!dataset.has_assignment()) {
    throw ContractError("normalize: assign_splits must run first");
  }
  if (dataset.norm.applied) {
    throw ContractError("normalize: dataset already normalized");
  }
  const int U = dataset.n_variables;
  std::vector<double> sum(U, 0.0), sumsq(U, 0.0);
  std::vector<std::size_t> count(U, 0);
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    if (dataset.assignment[i] != Split::train) continue;
    for (const auto& o : dataset.samples[i].observations) {
      sum[o.u] += o.z;
      sumsq[o.u] += o.z * o.z;
      ++count[o.u];
    }
  }
  dataset.norm.mean.assign(U, 0.0);
  dataset.norm.stddev.assign(U, 1.0);
  for (int u = 0; u < U; ++u) {
    if (count[u] == 0) continue;  // keep mean 0, std 1
    double m = sum[u] / static_cast<double>(count[u]);
    double var = sumsq[u] / static_cast<double>(count[u]) - m * m;
    dataset.norm.mean[u] = m;
    dataset.norm.stddev[u] = std::max(std::sqrt(std::max(var, 0.0)), 1e-8);
  }
  for (auto& s : dataset.samples)
    for (auto& o : s.observations)
      o.z = (o.z - dataset.norm.mean[o.u]) / dataset.norm.stddev[o.u];
  dataset.norm.applied = true;
}

double denormalize_value(const NormalizationStats& norm, int u, double z) {
  if (!norm.applied) return z;
  return z * norm.stddev[u] + norm.mean[u];
}

StatsReport dataset_stats(const Dataset& dataset) {
  if (dataset.samples.empty()) {
    throw ContractError("dataset_stats: dataset is empty");
  }
  StatsReport r;
  r.n_samples = dataset.samples.size();
  r.n_variables = dataset.n_variables;
  double total_obs = 0.0, total_padded = 0.0;
  for (const auto& s : dataset.samples) {
    std::size_t ti = s.distinct_timestamps();
    total_obs += static_cast<double>(s.obs_count());
    total_padded += static_cast<double>(ti) * dataset.n_variables;
    r.max_length = std::max(r.max_length, ti);
  }
  r.avg_obs = total_obs / static_cast<double>(r.n_samples);
  r.avg_obs_padded = total_padded / static_cast<double>(r.n_samples);
  return r;
}

std::string StatsReport::to_text() const {
  std::ostringstream os;
  os << "samples:               " << n_samples << "\n"
     << "variables:             " << n_variables << "\n"
     << "max length (T_i):      " << max_length << "\n"
     << "avg # obs:             " << avg_obs << "\n"
     << "avg # obs (padding):   " << avg_obs_padded
     << "   (mean over samples of T_i * U)\n";
  return os.str();
}

std::string StatsReport::to_json() const {
  json j = {{"avg_obs", avg_obs},
            {"avg_obs_padded", avg_obs_padded},
            {"max_length", max_length},
            {"n_variables", n_variables},
            {"n_samples", n_samples}};
  return j.dump(2);
}

}  // namespace hyperimts
