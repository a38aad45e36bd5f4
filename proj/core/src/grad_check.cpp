#include "simref/grad_check.hpp"

#include <cmath>

namespace simref {

static double run_loss(const LossBuilder& build_loss, const std::string& ctx) {
  Tape tape;
  Value loss = build_loss(tape);
  double v = loss.scalar();
  if (!std::isfinite(v)) {
    throw NumericError("grad_check: non-finite loss (" + std::to_string(v) + ") " + ctx);
  }
  return v;
}

GradCheckResult grad_check_full(const LossBuilder& build_loss, NetParams& params, double eps) {
  if (eps <= 0.0) throw ConfigError("grad_check: eps must be positive");

  // analytic pass
  Tape tape;
  Value loss = build_loss(tape);
  if (!std::isfinite(loss.scalar())) {
    throw NumericError("grad_check: non-finite loss at the base point");
  }
  tape.backward(loss);

  std::vector<std::vector<float>> analytic;
  analytic.reserve(params.size());
  for (auto& [name, t] : params) {
    analytic.push_back(t.has_grad() ? t.grad() : std::vector<float>(t.numel(), 0.0f));
    t.clear_grad();
  }

  GradCheckResult res;
  size_t pi = 0;
  for (auto& [name, t] : params) {
    float* data = t.data();
    for (size_t i = 0; i < t.numel(); ++i) {
      float saved = data[i];
      float hi = static_cast<float>(saved + eps);
      float lo = static_cast<float>(saved - eps);
      data[i] = hi;
      double lp = run_loss(build_loss, "at " + name + "[" + std::to_string(i) + "]+eps");
      data[i] = lo;
      double lm = run_loss(build_loss, "at " + name + "[" + std::to_string(i) + "]-eps");
      data[i] = saved;

      // divide by the realized float32 step, not the nominal one
      double fd = (lp - lm) / (static_cast<double>(hi) - static_cast<double>(lo));
      double a = analytic[pi][i];
      double err = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-8});
      if (err > res.max_rel_err) {
        res.max_rel_err = err;
        res.worst_param = name;
        res.worst_index = i;
        res.worst_analytic = a;
        res.worst_fd = fd;
      }
    }
    ++pi;
  }
  return res;
}

double grad_check(const LossBuilder& build_loss, NetParams& params, double eps) {
  return grad_check_full(build_loss, params, eps).max_rel_err;
}

}  // namespace simref
