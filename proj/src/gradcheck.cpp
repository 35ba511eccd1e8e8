#include "hyperimts/gradcheck.hpp"

#include <cmath>
#include <sstream>

#include "hyperimts/training.hpp"

namespace hyperimts {

std::string GradCheckResult::summary() const {
  std::ostringstream os;
  os << (pass ? "PASS" : "FAIL") << ": worst relative error " << worst_rel_err;
  if (!worst_param.empty()) {
    os << " at " << worst_param << "[" << worst_index << "]";
  }
  os << " over " << checked << " checked entries";
  return os.str();
}

GradCheckResult check_gradients(
    const std::vector<std::pair<std::string, Tensor>>& params,
    const std::function<Tensor()>& loss_fn, double tolerance, double step,
    double denom_floor) {
  // Analytic gradients from one taped pass.
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Tensor loss = loss_fn();
    for (auto& [name, t] : params) {
      Tensor copy = t;
      copy.zero_grad();
    }
    tape.backward(loss);
    for (auto& [name, t] : params) {
      analytic.push_back(t.requires_grad() ? t.grad() : std::vector<double>{});
    }
  }

  auto fd_at = [&](Tensor t, std::size_t i, double h) {
    auto& values = t.leaf_values();
    const double original = values[i];
    values[i] = original + h;
    const double loss_plus = loss_fn().value(0);
    values[i] = original - h;
    const double loss_minus = loss_fn().value(0);
    values[i] = original;
    return (loss_plus - loss_minus) / (2.0 * h);
  };
  auto rel_against = [&](double a, double fd) {
    return std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), denom_floor});
  };

  GradCheckResult result;
  result.pass = true;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor t = params[p].second;
    if (!t.requires_grad()) continue;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double a = analytic[p][i];
      double rel = rel_against(a, fd_at(t, i, step));
      // A step that straddles a relu kink (or another hard branch) smears the
      // difference quotient. The true derivative estimate converges as the
      // step shrinks, while a wrong gradient rule stays wrong, so refine
      // failing entries before flagging them.
      for (double h = step / 10.0; rel >= tolerance && h >= step / 1000.0; h /= 10.0) {
        rel = std::min(rel, rel_against(a, fd_at(t, i, h)));
      }
      ++result.checked;
      if (rel > result.worst_rel_err) {
        result.worst_rel_err = rel;
        result.worst_param = params[p].first;
        result.worst_index = i;
      }
    }
  }
  result.pass = result.worst_rel_err < tolerance || result.checked == 0;
  if (result.checked == 0) result.pass = false;
  return result;
}

SplitSample gradcheck_instance() {
  // 3 variables, 10 nodes over 6 distinct timestamps: 7 lookback
  // observations (with one aligned pair per variable pair) and 3 queries.
  SplitSample s;
  s.n_variables = 3;
  s.t_s = 4.5;
  s.lookback = {
      {1.0, 0.60, 0}, {1.0, -0.40, 1},  // aligned pair (0, 1)
      {2.0, 0.25, 0},
      {3.0, 0.10, 1}, {3.0, 0.80, 2},   // aligned pair (1, 2)
      {4.0, -0.70, 0}, {4.0, 0.35, 2},  // aligned pair (0, 2)
  };
  s.queries = {{5.0, 0}, {5.0, 1}, {6.0, 2}};
  s.targets = {0.30, -0.20, 0.55};
  return s;
}

GradCheckResult check_model_gradients(const ModelConfig& config, double tolerance,
                                      double step) {
  const SplitSample sample = gradcheck_instance();
  const Hypergraph hg = build_hypergraph(sample);
  const SharedIndex shared = build_shared_index(hg);
  ModelParams params = ModelParams::init(config, sample.n_variables);

  auto loss_fn = [&]() {
    ForwardResult fwd = forward(hg, shared, params, config);
    return masked_mse(fwd.predictions, sample.targets,
                      std::vector<bool>(sample.targets.size(), true));
  };
  return check_gradients(params.named(), loss_fn, tolerance, step);
}

}  // namespace hyperimts
