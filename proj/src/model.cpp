#include "hyperimts/model.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace hyperimts {

using nlohmann::json;

Ablation ablation_from_string(const std::string& s) {
  if (s == "complete") return Ablation::complete;
  if (s == "rp_TE") return Ablation::rp_TE;
  if (s == "wo_TE") return Ablation::wo_TE;
  if (s == "rp_IAVD") return Ablation::rp_IAVD;
  if (s == "wo_IAVD") return Ablation::wo_IAVD;
  if (s == "wo_VE") return Ablation::wo_VE;
  throw ConfigError("unknown ablation: " + s +
                    " (expected complete|rp_TE|wo_TE|rp_IAVD|wo_IAVD|wo_VE)");
}

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::complete: return "complete";
    case Ablation::rp_TE: return "rp_TE";
    case Ablation::wo_TE: return "wo_TE";
    case Ablation::rp_IAVD: return "rp_IAVD";
    case Ablation::wo_IAVD: return "wo_IAVD";
    case Ablation::wo_VE: return "wo_VE";
  }
  return "complete";
}

void ModelConfig::validate() const {
  if (p_obs < 1 || p_time < 1 || p_var < 1) {
    throw ConfigError("embedding widths must be positive");
  }
  if (heads < 1) throw ConfigError("head count must be positive");
  if (layers < 1) throw ConfigError("layer count must be positive");
  if (p_obs % heads != 0) {
    throw ConfigError("p_obs (" + std::to_string(p_obs) +
                      ") must be divisible by heads (" + std::to_string(heads) + ")");
  }
  if (has_time_edges() && p_time % heads != 0) {
    throw ConfigError("p_time (" + std::to_string(p_time) +
                      ") must be divisible by heads (" + std::to_string(heads) + ")");
  }
  if (has_var_edges() && p_var % heads != 0) {
    throw ConfigError("p_var (" + std::to_string(p_var) +
                      ") must be divisible by heads (" + std::to_string(heads) + ")");
  }
  if (time_scale < 0.0) throw ConfigError("time_scale must be >= 0");
}

namespace {

LinearMap make_linear(Rng& rng, int in, int out, bool trainable = true) {
  double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::vector<double> w(static_cast<std::size_t>(in) * out);
  for (auto& x : w) x = rng.uniform(-limit, limit);
  // Small nonzero biases keep relu preactivations off the kink for the
  // zero-valued target nodes, which finite-difference checks rely on.
  std::vector<double> b(out);
  for (auto& x : b) x = rng.uniform(-0.1, 0.1);
  LinearMap lin;
  if (trainable) {
    lin.weight = Tensor::parameter({static_cast<std::size_t>(in), static_cast<std::size_t>(out)}, std::move(w));
    lin.bias = Tensor::parameter({1, static_cast<std::size_t>(out)}, std::move(b));
  } else {
    lin.weight = Tensor::constant({static_cast<std::size_t>(in), static_cast<std::size_t>(out)}, std::move(w));
    lin.bias = Tensor::constant({1, static_cast<std::size_t>(out)}, std::move(b));
  }
  return lin;
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config, int n_variables) {
  config.validate();
  if (n_variables < 1) throw ConfigError("model needs at least one variable");

  ModelParams p;
  p.config = config;
  p.n_variables = n_variables;
  Rng rng(config.seed);

  const int po = config.p_obs, pt = config.p_time, pv = config.p_var;
  const bool te = config.has_time_edges();
  const bool ve = config.has_var_edges();

  p.obs_encoder = make_linear(rng, 1, po);
  if (te) {
    // Sinusoidal-encoding initialization: log-spaced frequencies with
    // alternating sin/cos phases over the unit-scaled time axis. Learnable
    // afterwards except under rp_TE, which freezes exactly this encoding.
    std::vector<double> w(pt), b(pt);
    const int n_bands = std::max(pt / 2, 1);
    const double f_min = 0.5, f_max = 8.0;
    for (int k = 0; k < pt; ++k) {
      const int band = k / 2;
      const double frac = n_bands > 1 ? static_cast<double>(band) / (n_bands - 1) : 0.0;
      w[k] = 2.0 * M_PI * f_min * std::pow(f_max / f_min, frac);
      b[k] = (k % 2 == 0) ? 0.0 : M_PI / 2.0;
    }
    const bool learnable = config.ablation != Ablation::rp_TE;
    p.time_encoder.weight = learnable ? Tensor::parameter({1, static_cast<std::size_t>(pt)}, w)
                                      : Tensor::constant({1, static_cast<std::size_t>(pt)}, w);
    p.time_encoder.bias = learnable ? Tensor::parameter({1, static_cast<std::size_t>(pt)}, b)
                                    : Tensor::constant({1, static_cast<std::size_t>(pt)}, b);
  }
  if (ve) {
    std::vector<double> w(static_cast<std::size_t>(n_variables) * pv);
    for (auto& x : w) x = rng.uniform(-1.0, 1.0);
    p.var_embedding = Tensor::parameter(
        {static_cast<std::size_t>(n_variables), static_cast<std::size_t>(pv)}, std::move(w));
  }
  if (te) {
    const int key_in = po + (ve ? pv : 0);
    p.time_edge_q = make_linear(rng, pt, pt);
    p.time_edge_k = make_linear(rng, key_in, pt);
    p.time_edge_v = make_linear(rng, key_in, pt);
    p.time_edge_out = make_linear(rng, pt, pt);
  }
  if (ve) {
    const int key_in = po + (te ? pt : 0);
    p.var_edge_q = make_linear(rng, pv, pv);
    p.var_edge_k = make_linear(rng, key_in, pv);
    p.var_edge_v = make_linear(rng, key_in, pv);
    p.var_edge_out = make_linear(rng, pv, pv);
  }
  if (config.has_inter_variable()) {
    p.sim_q = make_linear(rng, pv, pv);
    p.sim_k = make_linear(rng, pv, pv);
    p.inter_value = make_linear(rng, pv, pv);
    p.delta = Tensor::parameter({1, 1}, {config.delta_init});
  }
  p.self_q = make_linear(rng, po, po);
  p.self_k = make_linear(rng, po, po);
  p.self_v = make_linear(rng, po, po);
  const int ctx = po + (te ? pt : 0) + (ve ? pv : 0);
  p.node_update_map = make_linear(rng, ctx, po);
  p.decoder = make_linear(rng, ctx, 1);
  return p;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  auto push_linear = [&](const std::string& name, const LinearMap& lin) {
    if (!lin.defined()) return;
    out.emplace_back(name + ".weight", lin.weight);
    out.emplace_back(name + ".bias", lin.bias);
  };
  push_linear("obs_encoder", obs_encoder);
  push_linear("time_encoder", time_encoder);
  if (var_embedding.defined()) out.emplace_back("var_embedding", var_embedding);
  push_linear("time_edge_q", time_edge_q);
  push_linear("time_edge_k", time_edge_k);
  push_linear("time_edge_v", time_edge_v);
  push_linear("time_edge_out", time_edge_out);
  push_linear("var_edge_q", var_edge_q);
  push_linear("var_edge_k", var_edge_k);
  push_linear("var_edge_v", var_edge_v);
  push_linear("var_edge_out", var_edge_out);
  push_linear("sim_q", sim_q);
  push_linear("sim_k", sim_k);
  push_linear("inter_value", inter_value);
  push_linear("self_q", self_q);
  push_linear("self_k", self_k);
  push_linear("self_v", self_v);
  push_linear("node_update_map", node_update_map);
  push_linear("decoder", decoder);
  if (delta.defined()) out.emplace_back("delta", delta);
  return out;
}

std::vector<Tensor> ModelParams::trainable() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named())
    if (t.requires_grad()) out.push_back(t);
  return out;
}

std::size_t ModelParams::total_count() const {
  std::size_t n = 0;
  for (auto& [name, t] : named()) n += t.size();
  return n;
}

std::size_t ModelParams::trainable_count() const {
  std::size_t n = 0;
  for (auto& [name, t] : named())
    if (t.requires_grad()) n += t.size();
  return n;
}

void ModelParams::zero_grad() const {
  for (auto& [name, t] : named()) {
    Tensor copy = t;
    copy.zero_grad();
  }
}

ModelParams ModelParams::clone() const {
  ModelParams copy = ModelParams::init(config, n_variables);
  auto src = named();
  auto dst = copy.named();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i].second.leaf_values() = src[i].second.values();
  }
  return copy;
}

namespace {

json config_to_json(const ModelConfig& c) {
  return json{{"p_obs", c.p_obs},
              {"p_time", c.p_time},
              {"p_var", c.p_var},
              {"heads", c.heads},
              {"layers", c.layers},
              {"delta_init", c.delta_init},
              {"time_scale", c.time_scale},
              {"ablation", to_string(c.ablation)},
              {"seed", c.seed}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.p_obs = j.at("p_obs").get<int>();
  c.p_time = j.at("p_time").get<int>();
  c.p_var = j.at("p_var").get<int>();
  c.heads = j.at("heads").get<int>();
  c.layers = j.at("layers").get<int>();
  c.delta_init = j.at("delta_init").get<double>();
  c.time_scale = j.at("time_scale").get<double>();
  c.ablation = ablation_from_string(j.at("ablation").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

std::string ModelParams::to_checkpoint() const {
  json params = json::object();
  for (auto& [name, t] : named()) params[name] = t.values();
  json j = {{"format", "hyperimts-checkpoint"},
            {"version", 1},
            {"n_variables", n_variables},
            {"config", config_to_json(config)},
            {"params", params}};
  return j.dump();
}

ModelParams ModelParams::from_checkpoint(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
  if (j.value("format", "") != "hyperimts-checkpoint" || j.value("version", 0) != 1) {
    throw ConfigError("checkpoint: unrecognized format or version");
  }
  ModelConfig config = config_from_json(j.at("config"));
  int n_vars = j.at("n_variables").get<int>();
  ModelParams p = ModelParams::init(config, n_vars);
  const json& stored = j.at("params");
  auto names = p.named();
  if (stored.size() != names.size()) {
    throw ConfigError("checkpoint: parameter set does not match config (" +
                      std::to_string(stored.size()) + " stored vs " +
                      std::to_string(names.size()) + " expected)");
  }
  for (auto& [name, t] : names) {
    if (!stored.contains(name)) {
      throw ConfigError("checkpoint: missing parameter " + name);
    }
    auto vals = stored.at(name).get<std::vector<double>>();
    if (vals.size() != t.size()) {
      throw ConfigError("checkpoint: parameter " + name + " has " +
                        std::to_string(vals.size()) + " values, expected " +
                        std::to_string(t.size()));
    }
    Tensor copy = t;
    copy.leaf_values() = std::move(vals);
  }
  return p;
}

// ---- forward passes ---------------------------------------------------------

double effective_time_scale(const Hypergraph& hg, const ModelConfig& config) {
  if (config.time_scale > 0.0) return config.time_scale;
  double max_lookback = 0.0;
  for (std::size_t j = 0; j < hg.node_count; ++j) {
    if (!hg.is_target[j]) max_lookback = std::max(max_lookback, hg.node_time[j]);
  }
  return max_lookback > 0.0 ? max_lookback : 1.0;
}

EmbeddingState init_embeddings(const Hypergraph& hg, const ModelParams& params,
                               const ModelConfig& config) {
  if (hg.n_variables > params.n_variables) {
    throw ConfigError("sample uses " + std::to_string(hg.n_variables) +
                      " variables but parameters cover " +
                      std::to_string(params.n_variables));
  }
  EmbeddingState state;
  Tensor values = Tensor::constant({hg.node_count, 1}, hg.node_value);
  state.nodes = relu(params.obs_encoder.apply(values));

  if (config.has_time_edges()) {
    const double scale_t = effective_time_scale(hg, config);
    const std::size_t n_stamps = hg.timestamps.size();
    std::vector<double> ts(n_stamps);
    for (std::size_t i = 0; i < n_stamps; ++i) ts[i] = hg.timestamps[i] / scale_t;
    Tensor times = Tensor::constant({n_stamps, 1}, std::move(ts));
    state.time_edges = sine(params.time_encoder.apply(times));
  }
  if (config.has_var_edges()) {
    state.var_edges = relu(params.var_embedding);
  }
  return state;
}

namespace {

/// Multi-head scaled dot-product attention. queries: n_q x d, keys/values:
/// n_k x d with d divisible by heads. Aggregation uses stable_matmul so the
/// output does not depend on key order.
Tensor multihead_attention(const Tensor& queries, const Tensor& keys,
                           const Tensor& values, int heads) {
  const std::size_t d = queries.cols();
  const std::size_t dh = d / static_cast<std::size_t>(heads);
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> head_outputs;
  head_outputs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(queries, h * dh, (h + 1) * dh);
    Tensor kh = slice_cols(keys, h * dh, (h + 1) * dh);
    Tensor vh = slice_cols(values, h * dh, (h + 1) * dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_scale);
    Tensor probs = softmax(scores, 1);
    head_outputs.push_back(stable_matmul(probs, vh));
  }
  return heads == 1 ? head_outputs[0] : concat(head_outputs, 1);
}

std::vector<std::size_t> all_nodes(std::size_t m) {
  std::vector<std::size_t> ids(m);
  for (std::size_t i = 0; i < m; ++i) ids[i] = i;
  return ids;
}

}  // namespace

void node_to_hyperedge(EmbeddingState& state, const Hypergraph& hg,
                       const ModelParams& params, const ModelConfig& config) {
  const bool te = config.has_time_edges();
  const bool ve = config.has_var_edges();
  const std::vector<std::size_t> everyone =
      config.unmasked_attention ? all_nodes(hg.node_count) : std::vector<std::size_t>{};

  if (te) {
    // Keys and values see each node next to its variable-hyperedge row, so
    // the hyperedge can tell which variable every observation belongs to.
    Tensor key_src = ve ? concat({state.nodes,
                                  gather_rows(state.var_edges, hg.node_var_index)},
                                 1)
                        : state.nodes;
    Tensor keys = params.time_edge_k.apply(key_src);
    Tensor values = params.time_edge_v.apply(key_src);
    Tensor queries = params.time_edge_q.apply(state.time_edges);

    std::vector<Tensor> rows;
    rows.reserve(hg.time_edge_count);
    for (std::size_t t = 0; t < hg.time_edge_count; ++t) {
      const auto& members =
          config.unmasked_attention ? everyone : hg.time_edge_members[t];
      Tensor q = gather_rows(queries, {t});
      Tensor k = gather_rows(keys, members);
      Tensor v = gather_rows(values, members);
      rows.push_back(multihead_attention(q, k, v, config.heads));
    }
    Tensor attended = rows.size() == 1 ? rows[0] : concat(rows, 0);
    // Residual on the hyperedge itself: masked attention over a single
    // member ignores its query, so without this term every one-node edge of
    // the same variable would collapse to one embedding and distinct
    // forecast timestamps would become indistinguishable.
    state.time_edges_updated =
        add(state.time_edges, add(attended, relu(params.time_edge_out.apply(attended))));
  }

  if (ve) {
    Tensor key_src = te ? concat({state.nodes,
                                  gather_rows(state.time_edges, hg.node_time_index)},
                                 1)
                        : state.nodes;
    Tensor keys = params.var_edge_k.apply(key_src);
    Tensor values = params.var_edge_v.apply(key_src);
    Tensor queries = params.var_edge_q.apply(state.var_edges);

    // Attention rows for variables that own nodes in this sample. Variables
    // without any node have no messages to aggregate; with the residual they
    // simply keep their incoming embedding.
    std::vector<Tensor> attn_rows;
    std::vector<std::size_t> attn_pos(hg.n_variables, SIZE_MAX);
    std::vector<std::size_t> populated;
    for (int u = 0; u < hg.n_variables; ++u) {
      const auto& members =
          config.unmasked_attention ? everyone : hg.var_edge_members[u];
      if (members.empty()) continue;
      Tensor q = gather_rows(queries, {static_cast<std::size_t>(u)});
      Tensor k = gather_rows(keys, members);
      Tensor v = gather_rows(values, members);
      attn_pos[u] = attn_rows.size();
      populated.push_back(static_cast<std::size_t>(u));
      attn_rows.push_back(multihead_attention(q, k, v, config.heads));
    }
    Tensor updated;
    if (!attn_rows.empty()) {
      Tensor attended = attn_rows.size() == 1 ? attn_rows[0] : concat(attn_rows, 0);
      updated = add(gather_rows(state.var_edges, populated),
                    add(attended, relu(params.var_edge_out.apply(attended))));
    }
    std::vector<Tensor> final_rows;
    final_rows.reserve(hg.n_variables);
    for (int u = 0; u < hg.n_variables; ++u) {
      if (attn_pos[u] == SIZE_MAX) {
        final_rows.push_back(gather_rows(state.var_edges, {static_cast<std::size_t>(u)}));
      } else {
        final_rows.push_back(gather_rows(updated, {attn_pos[u]}));
      }
    }
    state.var_edges_updated =
        final_rows.size() == 1 ? final_rows[0] : concat(final_rows, 0);
  }
}

Tensor similarity_overall(const Tensor& var_edges_updated, const ModelParams& params) {
  Tensor q = params.sim_q.apply(var_edges_updated);
  Tensor k = params.sim_k.apply(var_edges_updated);
  return matmul(q, transpose(k));
}

Tensor similarity_time_aware(const Tensor& nodes, const SharedIndex& shared) {
  const int U = shared.n_variables;
  // Entry tensors for the upper triangle; the matrix is symmetric so each is
  // reused for the mirrored position (gradients accumulate through both).
  std::vector<std::vector<Tensor>> entry(U, std::vector<Tensor>(U));
  for (int a = 0; a < U; ++a) {
    for (int b = a; b < U; ++b) {
      const auto& pa = shared.at(a, b);
      Tensor e;
      if (pa.node_pairs.empty()) {
        e = Tensor::scalar(0.0);
      } else {
        std::vector<std::size_t> ids_a, ids_b;
        ids_a.reserve(pa.node_pairs.size());
        ids_b.reserve(pa.node_pairs.size());
        for (const auto& [na, nb] : pa.node_pairs) {
          ids_a.push_back(na);
          ids_b.push_back(nb);
        }
        e = sum_all(mul(gather_rows(nodes, ids_a), gather_rows(nodes, ids_b)));
      }
      entry[a][b] = e;
      entry[b][a] = e;
    }
  }
  std::vector<Tensor> rows;
  rows.reserve(U);
  for (int a = 0; a < U; ++a) {
    rows.push_back(U == 1 ? entry[a][0] : concat(entry[a], 1));
  }
  return U == 1 ? rows[0] : concat(rows, 0);
}

Tensor similarity_fuse(const Tensor& s_var, const Tensor& s_obs,
                       const SharedIndex& shared, double delta_value,
                       bool force_alpha_zero) {
  if (s_var.shape() != s_obs.shape()) {
    throw ShapeError("similarity_fuse: matrices differ: " +
                     shape_to_string(s_var.shape()) + " vs " +
                     shape_to_string(s_obs.shape()));
  }
  const int U = shared.n_variables;
  std::vector<double> alpha(static_cast<std::size_t>(U) * U, 0.0);
  std::vector<double> complement(static_cast<std::size_t>(U) * U, 1.0);
  for (int a = 0; a < U; ++a) {
    for (int b = 0; b < U; ++b) {
      const auto& pa = shared.at(a, b);
      const std::size_t i = static_cast<std::size_t>(a) * U + b;
      const bool gated = !force_alpha_zero && pa.total_timestamps > 0 &&
                         s_var.value(i) > delta_value && s_obs.value(i) != 0.0;
      if (gated) {
        alpha[i] = static_cast<double>(pa.shared_timestamps) /
                   static_cast<double>(pa.total_timestamps);
        complement[i] = 1.0 - alpha[i];
      }
    }
  }
  const auto shape = s_var.shape();
  Tensor a_mat = Tensor::constant(shape, std::move(alpha));
  Tensor c_mat = Tensor::constant(shape, std::move(complement));
  return add(mul(a_mat, s_obs), mul(c_mat, s_var));
}

Tensor hyperedge_to_hyperedge(const Tensor& var_edges_updated, const Tensor& fused,
                              const ModelParams& params, const ModelConfig& config) {
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(config.p_var));
  Tensor attn = softmax(scale(fused, inv_scale), 1);
  return stable_matmul(attn, params.inter_value.apply(var_edges_updated));
}

void node_update(EmbeddingState& state, const Hypergraph& hg,
                 const ModelParams& params, const ModelConfig& config,
                 bool use_inter_variable) {
  state.nodes_attended = multihead_attention(params.self_q.apply(state.nodes),
                                             params.self_k.apply(state.nodes),
                                             params.self_v.apply(state.nodes),
                                             config.heads);
  std::vector<Tensor> context{state.nodes_attended};
  if (config.has_time_edges()) {
    context.push_back(gather_rows(state.time_edges_updated, hg.node_time_index));
  }
  if (config.has_var_edges()) {
    const Tensor& var_slot =
        use_inter_variable ? state.var_edges_fused : state.var_edges_updated;
    context.push_back(gather_rows(var_slot, hg.node_var_index));
  }
  Tensor ctx = context.size() == 1 ? context[0] : concat(context, 1);
  state.nodes_updated = relu(add(state.nodes, params.node_update_map.apply(ctx)));
}

ForwardResult forward(const Hypergraph& hg, const SharedIndex& shared,
                      const ModelParams& params, const ModelConfig& config) {
  config.validate();
  EmbeddingState state = init_embeddings(hg, params, config);
  const bool inter = config.has_inter_variable();

  for (int layer = 1; layer <= config.layers; ++layer) {
    const bool last = layer == config.layers;
    node_to_hyperedge(state, hg, params, config);
    bool use_inter = false;
    if (last && inter) {
      Tensor s_var = similarity_overall(state.var_edges_updated, params);
      Tensor s_obs = similarity_time_aware(state.nodes, shared);
      const bool clamp =
          config.force_alpha_zero || config.ablation == Ablation::rp_IAVD;
      Tensor fused =
          similarity_fuse(s_var, s_obs, shared, params.delta.value(0), clamp);
      state.var_edges_fused =
          hyperedge_to_hyperedge(state.var_edges_updated, fused, params, config);
      use_inter = true;
    }
    node_update(state, hg, params, config, use_inter);
    if (!last) {
      state.nodes = state.nodes_updated;
      if (config.has_time_edges()) state.time_edges = state.time_edges_updated;
      if (config.has_var_edges()) state.var_edges = state.var_edges_updated;
    }
  }

  std::vector<Tensor> context{state.nodes_updated};
  if (config.has_time_edges()) {
    context.push_back(gather_rows(state.time_edges_updated, hg.node_time_index));
  }
  if (config.has_var_edges()) {
    const Tensor& var_slot =
        inter ? state.var_edges_fused : state.var_edges_updated;
    context.push_back(gather_rows(var_slot, hg.node_var_index));
  }
  Tensor ctx = context.size() == 1 ? context[0] : concat(context, 1);
  Tensor decoded = params.decoder.apply(ctx);

  ForwardResult result;
  result.predictions = gather_rows(decoded, hg.target_nodes);
  result.state = std::move(state);
  return result;
}

std::vector<double> predict(const Hypergraph& hg, const SharedIndex& shared,
                            const ModelParams& params, const ModelConfig& config) {
  return forward(hg, shared, params, config).predictions.values();
}

}  // namespace hyperimts
