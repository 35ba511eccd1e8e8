#pragma once

#include <string>
#include <vector>

#include "hyperimts/model.hpp"

namespace hyperimts {

/// Multiply counts of one attention site for a query matrix (n_q, width) and
/// a key matrix (n_k, width): linear maps cost n*width^2 each, the score and
/// aggregation products cost n_q*n_k*width each.
struct AttentionSiteCost {
  std::string site;
  std::size_t n_q = 0;
  std::size_t n_k = 0;
  std::size_t width = 0;
  std::size_t linear_multiplies = 0;  // query + key + value maps
  std::size_t qk_multiplies = 0;
  std::size_t av_multiplies = 0;

  std::size_t total() const { return linear_multiplies + qk_multiplies + av_multiplies; }
};

struct BenchReport {
  std::size_t nodes = 0;       // M
  std::size_t timestamps = 0;  // T
  int n_variables = 0;         // U
  std::vector<AttentionSiteCost> sites;
  std::size_t param_count = 0;
  std::size_t trainable_param_count = 0;
  double seconds_per_iteration = 0.0;  // filled by callers that measure

  std::size_t total_multiplies() const;
  std::string to_text() const;
};

/// Cost model for one sample of M nodes, T distinct timestamps, U variables
/// under the given config. Per-layer sites are multiplied by the layer count;
/// the variable-to-variable site runs once.
BenchReport attention_cost(std::size_t nodes, std::size_t timestamps, int n_variables,
                           const ModelConfig& config);

}  // namespace hyperimts
