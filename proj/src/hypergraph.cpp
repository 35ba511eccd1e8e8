#include "hyperimts/hypergraph.hpp"

#include <algorithm>
#include <map>
#include <set>

#include <json.hpp>

namespace hyperimts {

using nlohmann::json;

std::vector<double> Hypergraph::dense_time_incidence() const {
  std::vector<double> h(node_count * time_edge_count, 0.0);
  for (std::size_t j = 0; j < node_count; ++j)
    h[j * time_edge_count + node_time_index[j]] = 1.0;
  return h;
}

std::vector<double> Hypergraph::dense_var_incidence() const {
  std::vector<double> h(node_count * n_variables, 0.0);
  for (std::size_t j = 0; j < node_count; ++j)
    h[j * n_variables + node_var_index[j]] = 1.0;
  return h;
}

std::string Hypergraph::debug_dump() const {
  json j = {{"M", node_count},
            {"T", time_edge_count},
            {"U", n_variables},
            {"H_T", node_time_index},
            {"H_U", node_var_index}};
  return j.dump();
}

const SharedIndex::PairAlignment& SharedIndex::at(int a, int b) const {
  return const_cast<SharedIndex*>(this)->at(a, b);
}

SharedIndex::PairAlignment& SharedIndex::at(int a, int b) {
  if (a > b) std::swap(a, b);
  // upper-triangle (incl. diagonal) row-major offset
  std::size_t row_start = static_cast<std::size_t>(a) * n_variables -
                          static_cast<std::size_t>(a) * (a - 1) / 2;
  return pairs[row_start + (b - a)];
}

Hypergraph build_hypergraph(const SplitSample& split) {
  if (split.lookback.empty() || split.queries.empty()) {
    throw ContractError("build_hypergraph: split sample needs at least one "
                        "lookback observation and one query");
  }
  Hypergraph hg;
  hg.n_variables = split.n_variables;
  hg.node_count = split.lookback.size() + split.queries.size();

  hg.node_time.reserve(hg.node_count);
  hg.node_var.reserve(hg.node_count);
  hg.node_value.reserve(hg.node_count);
  hg.is_target.reserve(hg.node_count);
  for (const auto& o : split.lookback) {
    hg.node_time.push_back(o.t);
    hg.node_var.push_back(o.u);
    hg.node_value.push_back(o.z);
    hg.is_target.push_back(false);
  }
  for (const auto& q : split.queries) {
    hg.target_nodes.push_back(hg.node_time.size());
    hg.node_time.push_back(q.t);
    hg.node_var.push_back(q.u);
    hg.node_value.push_back(0.0);
    hg.is_target.push_back(true);
  }

  for (int u : hg.node_var) {
    if (u < 0 || u >= hg.n_variables) {
      throw DataError("build_hypergraph: variable index " + std::to_string(u) +
                      " outside [0, " + std::to_string(hg.n_variables) + ")");
    }
  }

  // Distinct timestamps pooled over lookback and queries.
  std::set<double> ts(hg.node_time.begin(), hg.node_time.end());
  hg.timestamps.assign(ts.begin(), ts.end());
  hg.time_edge_count = hg.timestamps.size();

  std::map<double, std::size_t> time_idx;
  for (std::size_t t = 0; t < hg.timestamps.size(); ++t) time_idx[hg.timestamps[t]] = t;

  hg.time_edge_members.resize(hg.time_edge_count);
  hg.var_edge_members.resize(hg.n_variables);
  hg.node_time_index.resize(hg.node_count);
  hg.node_var_index.resize(hg.node_count);
  for (std::size_t j = 0; j < hg.node_count; ++j) {
    std::size_t ti = time_idx.at(hg.node_time[j]);
    hg.node_time_index[j] = ti;
    hg.node_var_index[j] = static_cast<std::size_t>(hg.node_var[j]);
    hg.time_edge_members[ti].push_back(j);
    hg.var_edge_members[hg.node_var[j]].push_back(j);
  }
  return hg;
}

SharedIndex build_shared_index(const Hypergraph& hg) {
  SharedIndex idx;
  idx.n_variables = hg.n_variables;
  const int U = hg.n_variables;
  idx.pairs.resize(static_cast<std::size_t>(U) * (U + 1) / 2);

  // Lookback nodes per variable as (timestamp, node) sorted by timestamp.
  // Node order is canonical so per-variable member lists are already sorted.
  std::vector<std::vector<std::pair<double, std::size_t>>> by_var(U);
  for (std::size_t j = 0; j < hg.node_count; ++j) {
    if (hg.is_target[j]) continue;
    by_var[hg.node_var[j]].emplace_back(hg.node_time[j], j);
  }
  for (auto& v : by_var) std::sort(v.begin(), v.end());

  for (int a = 0; a < U; ++a) {
    for (int b = a; b < U; ++b) {
      auto& pa = idx.at(a, b);
      const auto& va = by_var[a];
      const auto& vb = by_var[b];
      if (a == b) {
        // Self-alignment: every lookback timestamp matches itself.
        for (const auto& [t, j] : va) pa.node_pairs.emplace_back(j, j);
        pa.shared_timestamps = va.size();
        pa.total_timestamps = va.size();
        continue;
      }
      std::size_t i = 0, k = 0;
      std::size_t distinct_union = 0;
      while (i < va.size() && k < vb.size()) {
        if (va[i].first == vb[k].first) {
          pa.node_pairs.emplace_back(va[i].second, vb[k].second);
          ++i;
          ++k;
        } else if (va[i].first < vb[k].first) {
          ++i;
        } else {
          ++k;
        }
        ++distinct_union;
      }
      distinct_union += (va.size() - i) + (vb.size() - k);
      pa.shared_timestamps = pa.node_pairs.size();
      pa.total_timestamps = distinct_union;
    }
  }
  return idx;
}

std::string debug_dump(const Hypergraph& hg, const SharedIndex& shared) {
  json pairs = json::array();
  for (int a = 0; a < hg.n_variables; ++a) {
    for (int b = a; b < hg.n_variables; ++b) {
      const auto& pa = shared.at(a, b);
      json nodes = json::array();
      for (const auto& [na, nb] : pa.node_pairs) nodes.push_back({na, nb});
      pairs.push_back({{"a", a},
                       {"b", b},
                       {"shared", pa.shared_timestamps},
                       {"total", pa.total_timestamps},
                       {"nodes", nodes}});
    }
  }
  json j = {{"M", hg.node_count},
            {"T", hg.time_edge_count},
            {"U", hg.n_variables},
            {"H_T", hg.node_time_index},
            {"H_U", hg.node_var_index},
            {"shared_pairs", pairs}};
  return j.dump();
}

}  // namespace hyperimts
