#include "updown/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "updown/errors.hpp"

namespace updown {

namespace {

double scalar_of(const Graph& g, Var v) {
  const Tensor& t = g.value(v);
  if (t.size() != 1) throw ShapeError("grad_check: function must return a scalar");
  return t[0];
}

void check_finite(double v, std::size_t coordinate) {
  if (!std::isfinite(v)) {
    throw NumericError("grad_check: non-finite value at coordinate " + std::to_string(coordinate));
  }
}

void accumulate(GradCheckResult& r, double analytic, double numeric, std::size_t i) {
  const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
  if (r.coordinates == 0 || err > r.max_rel_error) {
    r.max_rel_error = err;
    r.worst_index = i;
  }
  ++r.coordinates;
}

}  // namespace

GradCheckResult grad_check(const InputFunction& f, const Tensor& point, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be > 0");
  Tensor analytic;
  {
    Graph g;
    Var x = g.input(point);
    Var y = f(g, x);
    check_finite(scalar_of(g, y), 0);
    g.backward(y);
    analytic = g.grad(x);
  }
  auto eval = [&](const Tensor& at, std::size_t i) {
    try {
      Graph g;
      Var x = g.constant(at);
      return scalar_of(g, f(g, x));
    } catch (const NumericError& e) {
      throw NumericError("grad_check: non-finite value at coordinate " + std::to_string(i) + " (" +
                         e.what() + ")");
    }
  };
  GradCheckResult result;
  Tensor probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    check_finite(analytic[i], i);
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = eval(probe, i);
    probe[i] = orig - eps;
    const double down = eval(probe, i);
    probe[i] = orig;
    check_finite(up, i);
    check_finite(down, i);
    accumulate(result, analytic[i], (up - down) / (2.0 * eps), i);
  }
  return result;
}

GradCheckResult grad_check_param(const ParamFunction& f, Parameter& param, double eps,
                                 std::size_t stride) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be > 0");
  stride = std::max<std::size_t>(stride, 1);
  const Tensor saved_grad = param.grad;
  param.grad.fill(0.0);
  {
    Graph g;
    Var y = f(g);
    check_finite(scalar_of(g, y), 0);
    g.backward(y);
  }
  const Tensor analytic = param.grad;
  param.grad = saved_grad;
  auto eval = [&](std::size_t i) {
    try {
      Graph g;
      return scalar_of(g, f(g));
    } catch (const NumericError& e) {
      throw NumericError("grad_check: non-finite value at coordinate " + std::to_string(i) + " (" +
                         e.what() + ")");
    }
  };
  GradCheckResult result;
  for (std::size_t i = 0; i < param.value.size(); i += stride) {
    check_finite(analytic[i], i);
    const double orig = param.value[i];
    param.value[i] = orig + eps;
    const double up = eval(i);
    param.value[i] = orig - eps;
    const double down = eval(i);
    param.value[i] = orig;
    check_finite(up, i);
    check_finite(down, i);
    accumulate(result, analytic[i], (up - down) / (2.0 * eps), i);
  }
  return result;
}

}  // namespace updown
