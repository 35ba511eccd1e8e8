#include "hyperimts/bench.hpp"

#include <sstream>

namespace hyperimts {

namespace {

AttentionSiteCost site_cost(const std::string& name, std::size_t n_q, std::size_t n_k,
                            std::size_t width, std::size_t repeats) {
  AttentionSiteCost c;
  c.site = name;
  c.n_q = n_q;
  c.n_k = n_k;
  c.width = width;
  // query map + key map + value map
  c.linear_multiplies = repeats * (n_q * width * width + 2 * n_k * width * width);
  c.qk_multiplies = repeats * (n_q * n_k * width);
  c.av_multiplies = repeats * (n_q * n_k * width);
  return c;
}

}  // namespace

BenchReport attention_cost(std::size_t nodes, std::size_t timestamps, int n_variables,
                           const ModelConfig& config) {
  BenchReport r;
  r.nodes = nodes;
  r.timestamps = timestamps;
  r.n_variables = n_variables;
  const auto layers = static_cast<std::size_t>(config.layers);
  const auto u = static_cast<std::size_t>(n_variables);

  if (config.has_time_edges()) {
    r.sites.push_back(site_cost("node_to_time_edge", timestamps, nodes,
                                static_cast<std::size_t>(config.p_time), layers));
  }
  if (config.has_var_edges()) {
    r.sites.push_back(site_cost("node_to_var_edge", u, nodes,
                                static_cast<std::size_t>(config.p_var), layers));
  }
  if (config.has_inter_variable()) {
    r.sites.push_back(
        site_cost("var_edge_to_var_edge", u, u, static_cast<std::size_t>(config.p_var), 1));
  }
  r.sites.push_back(site_cost("node_self_attention", nodes, nodes,
                              static_cast<std::size_t>(config.p_obs), layers));
  return r;
}

std::size_t BenchReport::total_multiplies() const {
  std::size_t t = 0;
  for (const auto& s : sites) t += s.total();
  return t;
}

std::string BenchReport::to_text() const {
  std::ostringstream os;
  os << "instance: M=" << nodes << " T=" << timestamps << " U=" << n_variables << "\n";
  os << "parameters: " << param_count << " total, " << trainable_param_count
     << " trainable\n";
  if (seconds_per_iteration > 0.0) {
    os << "per-iteration time: " << seconds_per_iteration << " s\n";
  }
  os << "attention multiply counts per sample:\n";
  for (const auto& s : sites) {
    os << "  " << s.site << " (n_q=" << s.n_q << ", n_k=" << s.n_k
       << ", width=" << s.width << "): linear=" << s.linear_multiplies
       << " qk=" << s.qk_multiplies << " av=" << s.av_multiplies << "\n";
  }
  os << "total multiplies: " << total_multiplies() << "\n";
  return os.str();
}

}  // namespace hyperimts
