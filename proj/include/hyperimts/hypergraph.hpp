#pragma once

#include <string>
#include <vector>

#include "hyperimts/data.hpp"

namespace hyperimts {

/// Non-padded graph view of one split sample. Nodes are the lookback
/// observations followed by one placeholder node per forecast query (value
/// 0, flagged as target). Every node belongs to exactly one temporal
/// hyperedge (its distinct timestamp, pooled over lookback and queries) and
/// one variable hyperedge.
struct Hypergraph {
  std::size_t node_count = 0;  // M = |lookback| + |queries|, never T*U
  std::vector<double> node_time;
  std::vector<int> node_var;
  std::vector<double> node_value;  // 0.0 for target nodes
  std::vector<bool> is_target;

  std::size_t time_edge_count = 0;  // T: distinct timestamps
  int n_variables = 0;              // U: dataset variable count
  std::vector<double> timestamps;   // sorted distinct

  // Row-compressed incidence: each node's single timestamp / variable index.
  std::vector<std::size_t> node_time_index;
  std::vector<std::size_t> node_var_index;

  // Members per hyperedge, in node-id order.
  std::vector<std::vector<std::size_t>> time_edge_members;
  std::vector<std::vector<std::size_t>> var_edge_members;

  /// Node ids of the query placeholders, in query order.
  std::vector<std::size_t> target_nodes;

  /// Dense M x T incidence matrix (row-major 0/1 doubles).
  std::vector<double> dense_time_incidence() const;
  /// Dense M x U incidence matrix.
  std::vector<double> dense_var_incidence() const;

  /// JSON dump of {M, T, U, row-compressed incidences, shared pairs absent}.
  std::string debug_dump() const;
};

/// Timestamp alignment between every unordered variable pair (diagonal
/// included), over lookback nodes only. For pair (a, b):
/// node_pairs holds the (node_a, node_b) ids aligned on equal timestamps,
/// sorted by timestamp; shared_timestamps counts them; total_timestamps is
/// the size of the union of the two variables' lookback timestamp sets.
struct SharedIndex {
  struct PairAlignment {
    std::vector<std::pair<std::size_t, std::size_t>> node_pairs;
    std::size_t shared_timestamps = 0;
    std::size_t total_timestamps = 0;
  };

  int n_variables = 0;
  std::vector<PairAlignment> pairs;  // upper triangle incl. diagonal

  const PairAlignment& at(int a, int b) const;
  PairAlignment& at(int a, int b);
};

Hypergraph build_hypergraph(const SplitSample& split);

SharedIndex build_shared_index(const Hypergraph& hg);

/// Full debug dump including shared pairs, for golden-file tests.
std::string debug_dump(const Hypergraph& hg, const SharedIndex& shared);

}  // namespace hyperimts
