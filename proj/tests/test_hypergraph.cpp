#include <doctest.h>

#include <map>
#include <set>

#include "hyperimts/hypergraph.hpp"

using namespace hyperimts;

namespace {

SplitSample single_variable_sample() {
  SplitSample s;
  s.n_variables = 1;
  s.t_s = 2.5;
  s.lookback = {{1.0, 0.4, 0}, {2.0, -0.1, 0}};
  s.queries = {{3.0, 0}};
  s.targets = {0.7};
  return s;
}

SplitSample three_variable_sample() {
  SplitSample s;
  s.n_variables = 3;
  s.t_s = 4.5;
  s.lookback = {{1.0, 0.6, 0}, {1.0, -0.4, 1}, {2.0, 0.25, 0}, {3.0, 0.1, 1},
                {3.0, 0.8, 2},  {4.0, -0.7, 0}, {4.0, 0.35, 2}};
  s.queries = {{5.0, 0}, {5.0, 1}, {6.0, 2}};
  s.targets = {0.3, -0.2, 0.55};
  return s;
}

Rng make_rng(std::uint64_t seed) { return Rng(seed); }

SplitSample random_split(Rng& rng, int max_vars = 4, int max_obs = 30) {
  const int U = 2 + static_cast<int>(rng.uniform_int(max_vars - 1));
  SplitSample s;
  s.n_variables = U;
  // Timestamps come from a small grid so alignments actually occur; cap the
  // draw counts below the grid capacity.
  const int lookback_slots = 12 * U;
  const int n_look =
      2 + static_cast<int>(rng.uniform_int(std::min(max_obs - 4, lookback_slots - 4)));
  const int n_query = 1 + static_cast<int>(rng.uniform_int(3));
  std::set<std::pair<double, int>> used;
  auto draw = [&](int lo, int span) {
    return static_cast<double>(lo + static_cast<int>(rng.uniform_int(span)));
  };
  while (static_cast<int>(s.lookback.size()) < n_look) {
    double t = draw(1, 12);
    int u = static_cast<int>(rng.uniform_int(U));
    if (!used.insert({t, u}).second) continue;
    s.lookback.push_back({t, rng.uniform(-1, 1), u});
  }
  while (static_cast<int>(s.queries.size()) < n_query) {
    double t = draw(13, 6);
    int u = static_cast<int>(rng.uniform_int(U));
    if (!used.insert({t, u}).second) continue;
    s.queries.push_back({t, u});
    s.targets.push_back(rng.uniform(-1, 1));
  }
  auto obs_less = [](const Observation& a, const Observation& b) {
    return a.t != b.t ? a.t < b.t : a.u < b.u;
  };
  std::sort(s.lookback.begin(), s.lookback.end(), obs_less);
  std::vector<std::size_t> order(s.queries.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return s.queries[a].t != s.queries[b].t ? s.queries[a].t < s.queries[b].t
                                            : s.queries[a].u < s.queries[b].u;
  });
  std::vector<ForecastQuery> q;
  std::vector<double> tgt;
  for (std::size_t i : order) {
    q.push_back(s.queries[i]);
    tgt.push_back(s.targets[i]);
  }
  s.queries = std::move(q);
  s.targets = std::move(tgt);
  s.t_s = 12.5;
  return s;
}

}  // namespace

TEST_CASE("build on a single-variable sample") {
  Hypergraph hg = build_hypergraph(single_variable_sample());
  CHECK(hg.node_count == 3);
  CHECK(hg.time_edge_count == 3);
  CHECK(hg.n_variables == 1);
  // Each of the three nodes has its own timestamp: identity incidence.
  auto dense = hg.dense_time_incidence();
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t t = 0; t < 3; ++t)
      CHECK(dense[j * 3 + t] == (j == t ? 1.0 : 0.0));
  CHECK(hg.node_value[2] == 0.0);
  CHECK(hg.is_target[2]);
}

TEST_CASE("every node joins exactly one temporal and one variable hyperedge") {
  Hypergraph hg = build_hypergraph(three_variable_sample());
  auto ht = hg.dense_time_incidence();
  auto hu = hg.dense_var_incidence();
  for (std::size_t j = 0; j < hg.node_count; ++j) {
    double row_t = 0, row_u = 0;
    for (std::size_t t = 0; t < hg.time_edge_count; ++t) row_t += ht[j * hg.time_edge_count + t];
    for (int u = 0; u < hg.n_variables; ++u) row_u += hu[j * hg.n_variables + u];
    CHECK(row_t == 1.0);
    CHECK(row_u == 1.0);
  }
  // No empty temporal hyperedge.
  for (std::size_t t = 0; t < hg.time_edge_count; ++t) {
    CHECK(!hg.time_edge_members[t].empty());
  }
}

TEST_CASE("build rejects empty sides") {
  SplitSample s = single_variable_sample();
  s.queries.clear();
  s.targets.clear();
  CHECK_THROWS_AS(build_hypergraph(s), ContractError);

  SplitSample s2 = single_variable_sample();
  s2.lookback.clear();
  CHECK_THROWS_AS(build_hypergraph(s2), ContractError);
}

TEST_CASE("permuting input observations yields an identical hypergraph") {
  SplitSample base = three_variable_sample();
  SplitSample shuffled = base;
  std::swap(shuffled.lookback[0], shuffled.lookback[4]);
  std::swap(shuffled.lookback[2], shuffled.lookback[6]);
  // Rebuild canonical order as the data module would.
  std::sort(shuffled.lookback.begin(), shuffled.lookback.end(),
            [](const Observation& a, const Observation& b) {
              return a.t != b.t ? a.t < b.t : a.u < b.u;
            });
  Hypergraph a = build_hypergraph(base);
  Hypergraph b = build_hypergraph(shuffled);
  CHECK(a.debug_dump() == b.debug_dump());
  CHECK(a.node_value == b.node_value);
  CHECK(a.node_time == b.node_time);
}

TEST_CASE("node count is lookback plus queries, never T times U") {
  Hypergraph hg = build_hypergraph(three_variable_sample());
  CHECK(hg.node_count == 10);
  CHECK(hg.time_edge_count * hg.n_variables == 18);  // padded size differs
}

TEST_CASE("shared index on the worked 3-shared, 2-unaligned example") {
  SplitSample s;
  s.n_variables = 2;
  s.t_s = 10.0;
  // V0 at {1,2,3,4,5}, V1 at {1,3,5,6,7}: shared {1,3,5}, union has 7 but
  // over these two variables the distinct union is {1,2,3,4,5,6,7}.
  s.lookback = {{1, .1, 0}, {2, .2, 0}, {3, .3, 0}, {4, .4, 0}, {5, .5, 0},
                {1, .6, 1}, {3, .7, 1}, {5, .8, 1}, {6, .9, 1}, {7, .95, 1}};
  s.queries = {{11.0, 0}};
  s.targets = {0.0};
  Hypergraph hg = build_hypergraph(s);
  SharedIndex idx = build_shared_index(hg);
  CHECK(idx.at(0, 1).shared_timestamps == 3);
  CHECK(idx.at(0, 1).total_timestamps == 7);

  // Figure-style case: 3 shared timestamps, 2 unaligned, 5 distinct total.
  SplitSample fig;
  fig.n_variables = 2;
  fig.t_s = 10.0;
  fig.lookback = {{1, .1, 0}, {2, .2, 0}, {3, .3, 0}, {4, .4, 0}, {5, .45, 0},
                  {1, .5, 1}, {3, .6, 1}, {5, .7, 1}};
  fig.queries = {{11.0, 0}};
  fig.targets = {0.0};
  SharedIndex fig_idx = build_shared_index(build_hypergraph(fig));
  CHECK(fig_idx.at(0, 1).shared_timestamps == 3);
  CHECK(fig_idx.at(0, 1).total_timestamps == 5);
  CHECK(static_cast<double>(fig_idx.at(0, 1).shared_timestamps) /
            static_cast<double>(fig_idx.at(0, 1).total_timestamps) ==
        0.6);
}

TEST_CASE("disjoint and identical timestamp sets") {
  SplitSample s;
  s.n_variables = 2;
  s.t_s = 10.0;
  s.lookback = {{1, .1, 0}, {2, .2, 0}, {3, .3, 1}, {4, .4, 1}};
  s.queries = {{11.0, 0}};
  s.targets = {0.0};
  SharedIndex idx = build_shared_index(build_hypergraph(s));
  CHECK(idx.at(0, 1).shared_timestamps == 0);
  CHECK(idx.at(0, 1).node_pairs.empty());
  CHECK(idx.at(0, 1).total_timestamps == 4);

  SplitSample same;
  same.n_variables = 2;
  same.t_s = 10.0;
  same.lookback = {{1, .1, 0}, {2, .2, 0}, {3, .3, 0},
                   {1, .4, 1}, {2, .5, 1}, {3, .6, 1}};
  same.queries = {{11.0, 0}};
  same.targets = {0.0};
  SharedIndex full = build_shared_index(build_hypergraph(same));
  CHECK(full.at(0, 1).shared_timestamps == 3);
  CHECK(full.at(0, 1).total_timestamps == 3);
}

TEST_CASE("target nodes never contribute to the shared index") {
  SplitSample s = three_variable_sample();
  // Queries for variables 0 and 1 share t=5; alignment must ignore them.
  SharedIndex idx = build_shared_index(build_hypergraph(s));
  for (const auto& [na, nb] : idx.at(0, 1).node_pairs) {
    CHECK(na < s.lookback.size());
    CHECK(nb < s.lookback.size());
  }
}

TEST_CASE("shared index agrees with a quadratic node-pair oracle") {
  Rng rng = make_rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    SplitSample s = random_split(rng);
    Hypergraph hg = build_hypergraph(s);
    SharedIndex idx = build_shared_index(hg);
    const int U = hg.n_variables;
    for (int a = 0; a < U; ++a) {
      for (int b = a; b < U; ++b) {
        // Oracle: scan all lookback node pairs for equal timestamps.
        std::set<std::pair<std::size_t, std::size_t>> expected;
        for (std::size_t i = 0; i < hg.node_count; ++i) {
          if (hg.is_target[i] || hg.node_var[i] != a) continue;
          for (std::size_t j = 0; j < hg.node_count; ++j) {
            if (hg.is_target[j] || hg.node_var[j] != b) continue;
            if (hg.node_time[i] == hg.node_time[j]) expected.insert({i, j});
          }
        }
        std::set<std::pair<std::size_t, std::size_t>> got(
            idx.at(a, b).node_pairs.begin(), idx.at(a, b).node_pairs.end());
        CHECK(got == expected);

        std::set<double> ts_union, ts_a, ts_b;
        for (std::size_t i = 0; i < hg.node_count; ++i) {
          if (hg.is_target[i]) continue;
          if (hg.node_var[i] == a) ts_a.insert(hg.node_time[i]);
          if (hg.node_var[i] == b) ts_b.insert(hg.node_time[i]);
        }
        ts_union = ts_a;
        ts_union.insert(ts_b.begin(), ts_b.end());
        CHECK(idx.at(a, b).total_timestamps == ts_union.size());
        CHECK(idx.at(a, b).shared_timestamps == expected.size());
        CHECK(idx.at(a, b).shared_timestamps <= std::min(ts_a.size(), ts_b.size()));
        CHECK(idx.at(a, b).shared_timestamps <= idx.at(a, b).total_timestamps);
      }
    }
  }
}

TEST_CASE("incidence row sums hold on random rebuilds") {
  Rng rng = make_rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    SplitSample s = random_split(rng);
    Hypergraph hg = build_hypergraph(s);
    CHECK(hg.node_count == s.lookback.size() + s.queries.size());
    auto ht = hg.dense_time_incidence();
    auto hu = hg.dense_var_incidence();
    for (std::size_t j = 0; j < hg.node_count; ++j) {
      double rt = 0, ru = 0;
      for (std::size_t t = 0; t < hg.time_edge_count; ++t) rt += ht[j * hg.time_edge_count + t];
      for (int u = 0; u < hg.n_variables; ++u) ru += hu[j * hg.n_variables + u];
      CHECK(rt == 1.0);
      CHECK(ru == 1.0);
    }
  }
}

TEST_CASE("debug dump golden file") {
  Hypergraph hg = build_hypergraph(single_variable_sample());
  SharedIndex idx = build_shared_index(hg);
  const std::string expected =
      R"({"H_T":[0,1,2],"H_U":[0,0,0],"M":3,"T":3,"U":1,"shared_pairs":)"
      R"([{"a":0,"b":0,"nodes":[[0,0],[1,1]],"shared":2,"total":2}]})";
  CHECK(debug_dump(hg, idx) == expected);
}
