#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hyperimts/hypergraph.hpp"
#include "hyperimts/tensor.hpp"

namespace hyperimts {

/// Ablation switches. `complete` is the full model; the others disable or
/// replace one mechanism each.
enum class Ablation {
  complete,
  rp_TE,    // freeze the timestamp encoder at its initialization
  wo_TE,    // no temporal hyperedges anywhere
  rp_IAVD,  // variable similarity only (alignment blend forced off)
  wo_IAVD,  // no hyperedge-to-hyperedge passing at all
  wo_VE,    // no variable hyperedges anywhere
};

Ablation ablation_from_string(const std::string& s);
std::string to_string(Ablation a);

struct ModelConfig {
  int p_obs = 32;
  int p_time = 32;
  int p_var = 32;
  int heads = 2;
  int layers = 2;
  double delta_init = 0.5;
  /// Divisor applied to raw timestamps before the timestamp encoder.
  /// 0 = per-sample automatic scale (max lookback timestamp).
  double time_scale = 0.0;
  Ablation ablation = Ablation::complete;
  std::uint64_t seed = 2024;

  // Debug switches, not part of the ablation set.
  bool unmasked_attention = false;  // hyperedge attention over all nodes
  bool force_alpha_zero = false;    // clamp the similarity blend weight to 0

  bool has_time_edges() const { return ablation != Ablation::wo_TE; }
  bool has_var_edges() const { return ablation != Ablation::wo_VE; }
  bool has_inter_variable() const {
    return has_var_edges() && ablation != Ablation::wo_IAVD;
  }

  void validate() const;
};

/// One affine map y = x W + b.
struct LinearMap {
  Tensor weight;  // in x out
  Tensor bias;    // 1 x out

  Tensor apply(const Tensor& x) const { return add_rowvec(matmul(x, weight), bias); }
  bool defined() const { return weight.defined(); }
};

/// All learnable state. Which maps exist depends on the ablation; every
/// attention site has its own query/key/value maps.
struct ModelParams {
  ModelConfig config;
  int n_variables = 0;

  LinearMap obs_encoder;        // 1 -> P_obs
  LinearMap time_encoder;       // 1 -> P_time (frozen under rp_TE)
  Tensor var_embedding;         // U x P_var

  LinearMap time_edge_q, time_edge_k, time_edge_v, time_edge_out;
  LinearMap var_edge_q, var_edge_k, var_edge_v, var_edge_out;
  LinearMap sim_q, sim_k;       // overall-similarity maps
  LinearMap inter_value;        // value map of the variable-to-variable pass
  LinearMap self_q, self_k, self_v;
  LinearMap node_update_map;    // context -> P_obs
  LinearMap decoder;            // context -> 1
  Tensor delta;                 // 1x1 similarity threshold

  static ModelParams init(const ModelConfig& config, int n_variables);

  /// Present parameters with stable names, in a fixed order.
  std::vector<std::pair<std::string, Tensor>> named() const;
  /// The subset of named() that tracks gradients.
  std::vector<Tensor> trainable() const;

  std::size_t total_count() const;
  std::size_t trainable_count() const;
  void zero_grad() const;

  /// Deep copy (fresh storage, same values).
  ModelParams clone() const;

  /// Versioned JSON checkpoint. Loading rejects any config/shape mismatch.
  std::string to_checkpoint() const;
  static ModelParams from_checkpoint(const std::string& text);
};

/// Staged embeddings of one forward layer. The unstaged fields are the layer
/// inputs; the *_updated fields are the products of the three passes.
struct EmbeddingState {
  Tensor nodes;       // M x P_obs
  Tensor time_edges;  // T x P_time (undefined under wo_TE)
  Tensor var_edges;   // U x P_var (undefined under wo_VE)

  Tensor time_edges_updated;
  Tensor var_edges_updated;
  Tensor var_edges_fused;  // after inter-variable passing (last layer only)
  Tensor nodes_attended;   // self-attention product
  Tensor nodes_updated;
};

EmbeddingState init_embeddings(const Hypergraph& hg, const ModelParams& params,
                               const ModelConfig& config);

/// Node-to-hyperedge attention; fills time_edges_updated / var_edges_updated
/// from the current nodes and hyperedge embeddings. Attention for each
/// hyperedge is restricted to its member nodes unless unmasked_attention.
/// Each hyperedge keeps a residual connection to its incoming embedding;
/// single-member masked attention ignores its query, so without the residual
/// all singleton edges of one variable would collapse to the same embedding.
void node_to_hyperedge(EmbeddingState& state, const Hypergraph& hg,
                       const ModelParams& params, const ModelConfig& config);

/// Dot-product similarity of mapped variable-hyperedge embeddings, all
/// ordered pairs including the diagonal. U x U.
Tensor similarity_overall(const Tensor& var_edges_updated, const ModelParams& params);

/// Sum of node-embedding dot products over timestamp-aligned lookback
/// observation pairs; exactly zero for pairs with no aligned observations.
Tensor similarity_time_aware(const Tensor& nodes, const SharedIndex& shared);

/// Blends the two similarities per pair: weight = shared/total timestamps
/// when the overall similarity exceeds delta and the time-aware one is
/// nonzero, else 0 (so the result falls back to the overall similarity,
/// bitwise). The blend weights are data constants; gradients flow through
/// both similarity matrices but not through the gate condition.
Tensor similarity_fuse(const Tensor& s_var, const Tensor& s_obs,
                       const SharedIndex& shared, double delta_value,
                       bool force_alpha_zero);

/// Scaled-dot-product aggregation across variable hyperedges using the fused
/// similarity matrix as attention scores.
Tensor hyperedge_to_hyperedge(const Tensor& var_edges_updated, const Tensor& fused,
                              const ModelParams& params, const ModelConfig& config);

/// Self-attention over nodes followed by the residual context update. Uses
/// var_edges_fused for the variable slot when use_inter_variable is set,
/// var_edges_updated otherwise.
void node_update(EmbeddingState& state, const Hypergraph& hg,
                 const ModelParams& params, const ModelConfig& config,
                 bool use_inter_variable);

struct ForwardResult {
  Tensor predictions;    // |queries| x 1, in query order
  EmbeddingState state;  // final-layer state, for inspection
};

/// Runs the configured number of residual layers and decodes the target
/// nodes. Inter-variable message passing happens only at the last layer.
ForwardResult forward(const Hypergraph& hg, const SharedIndex& shared,
                      const ModelParams& params, const ModelConfig& config);

/// Forward pass without gradient tracking; returns plain prediction values.
std::vector<double> predict(const Hypergraph& hg, const SharedIndex& shared,
                            const ModelParams& params, const ModelConfig& config);

/// The per-sample timestamp divisor: config.time_scale, or the sample's max
/// lookback timestamp when the config asks for automatic scaling.
double effective_time_scale(const Hypergraph& hg, const ModelConfig& config);

}  // namespace hyperimts
