#include "updown/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace updown {

namespace {

void require_grads(const ParamStore& params, const char* who) {
  if (!params.any_grad()) {
    throw std::logic_error(std::string(who) + ": no gradients populated; run backward first");
  }
}

void ensure_state(Tensor& slot, const Tensor& like) {
  if (slot.shape() != like.shape()) slot = Tensor(like.shape());
}

}  // namespace

void sgd_momentum_step(ParamStore& params, double lr, double momentum) {
  require_grads(params, "sgd_momentum_step");
  for (auto& p : params) {
    ensure_state(p.momentum, p.value);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double v = momentum * p.momentum[i] - lr * p.grad[i];
      p.momentum[i] = v;
      p.value[i] += v;
    }
  }
}

void adadelta_step(ParamStore& params, const AdaDeltaConfig& config) {
  require_grads(params, "adadelta_step");
  const double rho = config.rho;
  const double eps = config.eps;
  for (auto& p : params) {
    ensure_state(p.sq_grad, p.value);
    ensure_state(p.sq_update, p.value);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      const double eg = rho * p.sq_grad[i] + (1.0 - rho) * g * g;
      const double dx = -std::sqrt(p.sq_update[i] + eps) / std::sqrt(eg + eps) * g;
      p.sq_grad[i] = eg;
      p.sq_update[i] = rho * p.sq_update[i] + (1.0 - rho) * dx * dx;
      p.value[i] += config.scale * dx;
    }
  }
}

double clip_global_norm(ParamStore& params, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_global_norm: max_norm must be > 0");
  const double norm = params.grad_norm();
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& p : params)
      for (auto& g : p.grad.values()) g *= scale;
  }
  return norm;
}

}  // namespace updown
