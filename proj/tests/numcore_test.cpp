#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "updown/errors.hpp"
#include "updown/grad_check.hpp"
#include "updown/graph.hpp"
#include "updown/init.hpp"
#include "updown/optim.hpp"
#include "updown/param_store.hpp"

namespace updown {
namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  return uniform_tensor({r, c}, -scale, scale, rng);
}

TEST(Primitives, SoftmaxOfEqualEntriesIsUniform) {
  Graph g;
  Var y = g.softmax_row(g.constant(Tensor::row({0.0, 0.0})));
  EXPECT_DOUBLE_EQ(g.value(y)[0], 0.5);
  EXPECT_DOUBLE_EQ(g.value(y)[1], 0.5);
}

TEST(Primitives, SoftmaxIsStableForLargeInputs) {
  Graph g;
  Var y = g.softmax_row(g.constant(Tensor::row({1000.0, 1000.0})));
  EXPECT_TRUE(g.value(y).all_finite());
  EXPECT_DOUBLE_EQ(g.value(y)[0], 0.5);
  EXPECT_DOUBLE_EQ(g.value(y)[1], 0.5);
}

TEST(Primitives, Hadamard) {
  Graph g;
  Var y = g.hadamard(g.constant(Tensor::row({1, 2, 3})), g.constant(Tensor::row({4, 0, -1})));
  EXPECT_EQ(g.value(y), Tensor::row({4, 0, -3}));
}

TEST(Primitives, ShapeMismatchNamesOpAndShapes) {
  Graph g;
  Var a = g.constant(Tensor::matrix(2, 3));
  Var b = g.constant(Tensor::matrix(2, 3));
  try {
    g.matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
  }
}

TEST(Primitives, ApplyDispatchesByKind) {
  Graph g;
  Var x = g.constant(Tensor::row({1.0, -2.0}));
  const Var in[] = {x};
  Var y = g.apply(OpKind::scalar_mul, in, OpArgs{.scalar = 3.0});
  EXPECT_EQ(g.value(y), Tensor::row({3.0, -6.0}));
  Var table = g.constant(Tensor::rows({{1, 2}, {3, 4}, {5, 6}}));
  const Var tin[] = {table};
  Var rows = g.apply(OpKind::row_lookup, tin, OpArgs{.indices = {2, 0}});
  EXPECT_EQ(g.value(rows), Tensor::rows({{5, 6}, {1, 2}}));
}

TEST(Primitives, SoftmaxRowsAreDistributions) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const auto r = static_cast<std::size_t>(uniform_int(rng, 1, 5));
    const auto c = static_cast<std::size_t>(uniform_int(rng, 1, 9));
    Graph g;
    Var y = g.softmax_row(g.constant(random_matrix(r, c, rng, 1000.0)));
    for (std::size_t i = 0; i < r; ++i) {
      double s = 0.0;
      for (double v : g.value(y).row_span(i)) {
        EXPECT_GE(v, 0.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(Primitives, SquashingBounds) {
  Rng rng(3);
  Graph g;
  Var x = g.constant(random_matrix(4, 8, rng, 5.0));
  for (double v : g.value(g.tanh(x)).values()) {
    EXPECT_GT(v, -1.0);
    EXPECT_LT(v, 1.0);
  }
  for (double v : g.value(g.sigmoid(x)).values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Backward, TanhAtZero) {
  Graph g;
  Var x = g.input(Tensor::row({0.0}));
  g.backward(g.sum(g.tanh(x)));
  EXPECT_DOUBLE_EQ(g.grad(x)[0], 1.0);
}

TEST(Backward, SumOfSoftmaxHasZeroGradient) {
  Graph g;
  Var x = g.input(Tensor::row({0.3, -1.2, 2.5, 0.0}));
  g.backward(g.sum(g.softmax_row(x)));
  const Tensor gx = g.grad(x);
  for (double v : gx.values()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Backward, NonScalarRootRejected) {
  Graph g;
  Var x = g.input(Tensor::row({1.0, 2.0}));
  EXPECT_THROW(g.backward(g.tanh(x)), ShapeError);
}

TEST(Backward, RepeatedCallRequiresReset) {
  Graph g;
  Var x = g.input(Tensor::row({1.0}));
  Var y = g.sum(g.tanh(x));
  g.backward(y);
  EXPECT_THROW(g.backward(y), std::logic_error);
  g.reset_grads();
  EXPECT_NO_THROW(g.backward(y));
}

TEST(Backward, OverflowingGradientAbortsWithOpName) {
  Graph g;
  Var x = g.input(Tensor::row({1e-20}));
  Var c = g.constant(Tensor::row({1e10}));
  Var y = g.scalar_mul(g.sum(g.hadamard(x, c)), 1e300);
  ASSERT_TRUE(g.value(y).all_finite());
  try {
    g.backward(y);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("hadamard"), std::string::npos);
  }
}

TEST(GradCheck, SquareIsExact) {
  auto r = grad_check([](Graph& g, Var x) { return g.sum(g.hadamard(x, x)); }, Tensor::row({3.0}));
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(GradCheck, NonFiniteEvaluationReportsCoordinate) {
  // Finite at the point, overflows once coordinate 0 is nudged up.
  auto f = [](Graph& g, Var x) { return g.sum(g.scalar_mul(x, 1e308)); };
  try {
    grad_check(f, Tensor::row({0.89, 0.9}), 1e-2);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("coordinate 0"), std::string::npos);
  }
}

// Builds a random composite of the primitive set on top of x (r x c).
Var random_composite(Graph& g, Var x, Rng& rng, int depth) {
  Var h = x;
  for (int layer = 0; layer < depth; ++layer) {
    const std::size_t r = g.value(h).num_rows();
    const std::size_t c = g.value(h).num_cols();
    switch (uniform_int(rng, 0, 7)) {
      case 0: {
        const auto out = static_cast<std::size_t>(uniform_int(rng, 1, 8));
        Var w = g.constant(random_matrix(out, c, rng));
        Var b = g.constant(random_matrix(1, out, rng));
        h = g.tanh(g.affine(h, w, b));
        break;
      }
      case 1: {
        const auto out = static_cast<std::size_t>(uniform_int(rng, 1, 8));
        h = g.matmul(h, g.constant(random_matrix(c, out, rng)));
        break;
      }
      case 2:
        h = g.softmax_row(h);
        break;
      case 3:
        h = g.hadamard(h, g.sigmoid(g.add(h, g.constant(random_matrix(1, c, rng)))));
        break;
      case 4: {
        const Var parts[] = {h, g.tanh(h)};
        h = g.concat_cols(parts);
        break;
      }
      case 5: {
        const Var parts[] = {h, g.mean_rows(h)};
        h = g.concat_rows(parts);
        break;
      }
      case 6: {
        std::vector<std::size_t> ids;
        for (std::size_t i = 0; i < 3; ++i) ids.push_back(static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(r) - 1)));
        h = g.row_lookup(h, ids);
        break;
      }
      default:
        h = g.scalar_mul(g.sigmoid(h), uniform(rng, -2.0, 2.0));
        break;
    }
  }
  return g.sum(g.hadamard(h, g.constant(random_matrix(g.value(h).num_rows(), g.value(h).num_cols(), rng))));
}

TEST(GradCheck, FiveLayerCompositeMatchesCentralDifferences) {
  Rng shape_rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::uint64_t seed = mix_seed(99, static_cast<std::uint64_t>(trial));
    const auto r = static_cast<std::size_t>(uniform_int(shape_rng, 1, 4));
    const auto c = static_cast<std::size_t>(uniform_int(shape_rng, 1, 5));
    Rng prng(seed);
    Tensor point = random_matrix(r, c, prng);
    auto f = [seed](Graph& g, Var x) {
      Rng rng(seed ^ 0xABCDEFULL);
      return random_composite(g, x, rng, 5);
    };
    EXPECT_LT(grad_check(f, point, 1e-5).max_rel_error, 1e-6) << "trial " << trial;
  }
}

TEST(GradCheck, RandomCompositesOfPrimitivesProperty) {
  Rng shape_rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::uint64_t seed = mix_seed(1234, static_cast<std::uint64_t>(trial));
    const auto r = static_cast<std::size_t>(uniform_int(shape_rng, 1, 8));
    const auto c = static_cast<std::size_t>(uniform_int(shape_rng, 1, 8));
    const int depth = static_cast<int>(uniform_int(shape_rng, 1, 6));
    Rng prng(seed);
    Tensor point = random_matrix(r, c, prng);
    auto f = [seed, depth](Graph& g, Var x) {
      Rng rng(seed ^ 0x5555ULL);
      return random_composite(g, x, rng, depth);
    };
    EXPECT_LT(grad_check(f, point, 1e-5).max_rel_error, 1e-5) << "trial " << trial;
  }
}

TEST(GradCheck, AuxiliaryOps) {
  Rng rng(21);
  Tensor point = random_matrix(3, 5, rng);
  auto f = [](Graph& g, Var x) {
    Var ls = g.log_softmax_row(x);
    Var picked = g.pick_sum(ls, {1, 4, 0}, {1.0, 0.5, 0.0});
    Var sl = g.slice_cols(g.slice_rows(x, 1, 3), 2, 5);
    Var tiled = g.tile_rows(g.mean_rows(sl), 4);
    Var s = g.sub(g.sigmoid(x), g.tanh(x));
    Var p = g.sigmoid(g.slice_rows(x, 0, 1));
    Var b = g.bce(p, Tensor::row({0.0, 1.0, 0.3, 0.7, 1.0}));
    const Var parts[] = {picked, g.sum(tiled), g.sum(s), b};
    return g.sum(g.concat_cols(parts));
  };
  EXPECT_LT(grad_check(f, point).max_rel_error, 1e-7);
}

TEST(GradCheck, ParameterPath) {
  ParamStore store;
  Rng rng(2);
  Parameter& w = store.add("w", random_matrix(3, 4, rng));
  const Tensor x = random_matrix(2, 4, rng);
  auto f = [&](Graph& g) {
    Var wv = g.param(w);
    return g.sum(g.tanh(g.matmul_nt(g.constant(x), wv)));
  };
  EXPECT_LT(grad_check_param(f, w).max_rel_error, 1e-8);
}

TEST(Determinism, IdenticalSeedGivesBitIdenticalOutputs) {
  auto run = [] {
    Rng rng(42);
    Graph g;
    Var x = g.input(random_matrix(4, 6, rng));
    Rng build(43);
    Var y = random_composite(g, x, build, 6);
    g.backward(y);
    return std::make_pair(g.value(y), g.grad(x));
  };
  EXPECT_EQ(run(), run());
}

// Optimizers

ParamStore one_param(double value, double grad) {
  ParamStore s;
  Parameter& p = s.add("p", Tensor::row({value}));
  p.grad[0] = grad;
  p.touched = true;
  return s;
}

TEST(Sgd, ZeroLearningRateLeavesParameters) {
  ParamStore s = one_param(1.5, 3.0);
  sgd_momentum_step(s, 0.0, 0.9);
  EXPECT_DOUBLE_EQ(s.at("p").value[0], 1.5);
}

TEST(Sgd, ZeroMomentumEqualsPlainSteps) {
  ParamStore s = one_param(1.0, 2.0);
  sgd_momentum_step(s, 0.01, 0.0);
  s.at("p").grad[0] = -4.0;
  sgd_momentum_step(s, 0.01, 0.0);
  EXPECT_DOUBLE_EQ(s.at("p").value[0], (1.0 - 0.01 * 2.0) - 0.01 * -4.0);
}

TEST(Sgd, MomentumAccumulates) {
  ParamStore s = one_param(0.0, 1.0);
  sgd_momentum_step(s, 0.01, 0.9);
  sgd_momentum_step(s, 0.01, 0.9);
  // v1 = -0.01, v2 = 0.9 * -0.01 - 0.01
  EXPECT_NEAR(s.at("p").value[0], -0.01 + (0.9 * -0.01 - 0.01), 1e-15);
  EXPECT_NEAR(s.at("p").momentum[0], -0.019, 1e-15);
}

TEST(Sgd, MissingGradientsRejected) {
  ParamStore s;
  s.add("p", Tensor::row({1.0}));
  EXPECT_THROW(sgd_momentum_step(s, 0.01, 0.9), std::logic_error);
  EXPECT_THROW(adadelta_step(s), std::logic_error);
}

TEST(AdaDelta, ZeroGradientZeroUpdate) {
  ParamStore s = one_param(2.0, 0.0);
  adadelta_step(s, {.rho = 0.95, .eps = 1e-6});
  EXPECT_DOUBLE_EQ(s.at("p").value[0], 2.0);
}

TEST(AdaDelta, FirstStepMagnitude) {
  const double rho = 0.95, eps = 1e-6, g = 0.7;
  ParamStore s = one_param(0.0, g);
  adadelta_step(s, {.rho = rho, .eps = eps});
  const double expected = -std::sqrt(eps) / std::sqrt((1 - rho) * g * g + eps) * g;
  EXPECT_NEAR(s.at("p").value[0], expected, 1e-15);
}

TEST(AdaDelta, RepeatedGradientsGiveNonIncreasingUpdateRatio) {
  // Scripted recurrence: with a constant gradient the ratio between
  // consecutive updates never exceeds the ratio before it.
  const double rho = 0.95, eps = 1e-6, g = 0.5;
  ParamStore s = one_param(0.0, g);
  std::vector<double> steps;
  double prev = 0.0;
  double eg = 0.0, edx = 0.0;
  for (int i = 0; i < 10; ++i) {
    adadelta_step(s, {.rho = rho, .eps = eps});
    const double now = s.at("p").value[0];
    steps.push_back(std::abs(now - prev));
    prev = now;
    eg = rho * eg + (1 - rho) * g * g;
    const double dx = std::sqrt(edx + eps) / std::sqrt(eg + eps) * g;
    edx = rho * edx + (1 - rho) * dx * dx;
    EXPECT_NEAR(steps.back(), dx, 1e-15);
  }
  for (std::size_t i = 2; i < steps.size(); ++i) {
    EXPECT_LE(steps[i] / steps[i - 1], steps[i - 1] / steps[i - 2] + 1e-12);
  }
}

TEST(Clip, NormBelowLimitUnchanged) {
  ParamStore s;
  Parameter& p = s.add("p", Tensor::row({0.0, 0.0}));
  p.grad = Tensor::row({0.0, 3.0});
  EXPECT_DOUBLE_EQ(clip_global_norm(s, 6.0), 3.0);
  EXPECT_EQ(p.grad, Tensor::row({0.0, 3.0}));
}

TEST(Clip, NormAboveLimitScaled) {
  ParamStore s;
  Parameter& a = s.add("a", Tensor::row({0.0}));
  Parameter& b = s.add("b", Tensor::row({0.0}));
  a.grad[0] = 6.0;
  b.grad[0] = 8.0;
  clip_global_norm(s, 5.0);
  EXPECT_DOUBLE_EQ(a.grad[0], 3.0);
  EXPECT_DOUBLE_EQ(b.grad[0], 4.0);
  EXPECT_NEAR(s.grad_norm(), 5.0, 1e-9);
}

TEST(Clip, ZeroGradsUnchanged) {
  ParamStore s;
  Parameter& p = s.add("p", Tensor::row({1.0, 1.0}));
  clip_global_norm(s, 1.0);
  EXPECT_EQ(p.grad, Tensor::row({0.0, 0.0}));
}

// ParamStore file

TEST(ParamStoreFile, RoundtripWithStateAndMeta) {
  Rng rng(8);
  ParamStore s;
  s.add("lstm.w", random_matrix(3, 4, rng));
  s.add("bias", uniform_tensor({5}, -1, 1, rng));
  s.at("lstm.w").momentum = random_matrix(3, 4, rng);
  s.set_meta("iteration", 17);
  const auto path = std::filesystem::temp_directory_path() / "updown_params_roundtrip.udpm";
  s.save(path, true);

  ParamStore fresh = ParamStore::load(path);
  EXPECT_EQ(fresh.at("lstm.w").value, s.at("lstm.w").value);
  EXPECT_EQ(fresh.at("bias").value, s.at("bias").value);
  EXPECT_EQ(fresh.at("lstm.w").momentum, s.at("lstm.w").momentum);
  EXPECT_EQ(fresh.meta().at("iteration"), 17.0);

  ParamStore shaped;
  shaped.add("lstm.w", Tensor::matrix(3, 4));
  shaped.add("bias", Tensor({5}));
  auto meta = shaped.load_into(path);
  EXPECT_EQ(shaped.at("bias").value, s.at("bias").value);
  EXPECT_EQ(meta.at("iteration"), 17.0);
}

TEST(ParamStoreFile, LayoutHeader) {
  ParamStore s;
  s.add("ab", Tensor::row({1.0}));
  const auto path = std::filesystem::temp_directory_path() / "updown_params_layout.udpm";
  s.save(path);
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  // magic, version, count, name len, name, rank, 2 dims, one f64
  ASSERT_EQ(bytes.size(), 4u + 1 + 4 + 2 + 2 + 1 + 8 + 8);
  EXPECT_EQ(bytes.substr(0, 4), "UDPM");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 1);
  EXPECT_EQ(bytes.substr(11, 2), "ab");
  EXPECT_EQ(bytes[13], 2);
}

TEST(ParamStoreFile, Errors) {
  const auto path = std::filesystem::temp_directory_path() / "updown_params_bad.udpm";
  { std::ofstream(path, std::ios::binary) << "XXXX"; }
  try {
    ParamStore::load(path);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.code(), FormatErrorCode::bad_magic);
  }
  { std::ofstream(path, std::ios::binary) << "UDPM\x01\x05"; }
  try {
    ParamStore::load(path);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.code(), FormatErrorCode::truncated);
  }
  ParamStore dup;
  dup.add("x", Tensor::row({1.0}));
  EXPECT_THROW(dup.add("x", Tensor::row({1.0})), std::invalid_argument);
}

}  // namespace
}  // namespace updown
