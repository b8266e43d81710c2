#pragma once

#include "updown/param_store.hpp"

namespace updown {

/// v <- momentum * v - lr * g; theta <- theta + v.
/// Throws std::logic_error if no backward pass populated the gradients.
void sgd_momentum_step(ParamStore& params, double lr, double momentum);

struct AdaDeltaConfig {
  double rho = 0.95;
  double eps = 1e-6;
  /// Multiplier on the AdaDelta update; 1.0 is the textbook method.
  double scale = 1.0;
};

/// Zeiler's AdaDelta:
///   E[g^2]  <- rho E[g^2] + (1 - rho) g^2
///   dx      <- -sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g
///   E[dx^2] <- rho E[dx^2] + (1 - rho) dx^2
///   theta   <- theta + scale * dx
void adadelta_step(ParamStore& params, const AdaDeltaConfig& config = {});

/// Rescales all gradients so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_global_norm(ParamStore& params, double max_norm);

}  // namespace updown
