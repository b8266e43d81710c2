#pragma once

#include <cstddef>
#include <functional>

#include "updown/graph.hpp"

namespace updown {

struct GradCheckResult {
  /// max over coordinates of |analytic - numeric| / max(1, |analytic|)
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};

/// Builds a scalar from a graph input.
using InputFunction = std::function<Var(Graph&, Var)>;
/// Builds a scalar from parameters bound inside the graph.
using ParamFunction = std::function<Var(Graph&)>;

/// Compares backward() against central differences at `point`.
/// Throws NumericError naming the coordinate if any evaluation is non-finite.
GradCheckResult grad_check(const InputFunction& f, const Tensor& point, double eps = 1e-5);

/// Same check against a parameter of a model, perturbing it in place. With
/// stride > 1 only every stride-th coordinate is probed.
GradCheckResult grad_check_param(const ParamFunction& f, Parameter& param, double eps = 1e-5,
                                 std::size_t stride = 1);

}  // namespace updown
