#include "updown/graph.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "updown/errors.hpp"

namespace updown {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::constant: return "constant";
    case OpKind::input: return "input";
    case OpKind::param: return "param";
    case OpKind::matmul: return "matmul";
    case OpKind::matmul_nt: return "matmul_nt";
    case OpKind::affine: return "affine";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::tanh: return "tanh";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::softmax_row: return "softmax_row";
    case OpKind::log_softmax_row: return "log_softmax_row";
    case OpKind::hadamard: return "hadamard";
    case OpKind::concat_rows: return "concat_rows";
    case OpKind::concat_cols: return "concat_cols";
    case OpKind::mean_rows: return "mean_rows";
    case OpKind::row_lookup: return "row_lookup";
    case OpKind::scalar_mul: return "scalar_mul";
    case OpKind::slice_rows: return "slice_rows";
    case OpKind::slice_cols: return "slice_cols";
    case OpKind::tile_rows: return "tile_rows";
    case OpKind::sum: return "sum";
    case OpKind::pick_sum: return "pick_sum";
    case OpKind::bce: return "bce";
  }
  return "unknown";
}

namespace {

struct Dims {
  std::size_t r, c;
};

Dims dims(const Tensor& t) { return {t.num_rows(), t.num_cols()}; }

[[noreturn]] void shape_fail(OpKind kind, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op_name(kind)) + ": shape mismatch " + shape_string(a.shape()) +
                   " vs " + shape_string(b.shape()));
}

[[noreturn]] void shape_fail(OpKind kind, const Tensor& a, const std::string& why) {
  throw ShapeError(std::string(op_name(kind)) + ": " + why + " for shape " +
                   shape_string(a.shape()));
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// C (m x n) += A (m x k) * B (k x n)
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C (m x n) += A (m x k) * B^T, B is (n x k)
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c[i * n + j] += s;
    }
  }
}

// C (k x n) += A^T * B, A is (m x k), B is (m x n)
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

}  // namespace

Var Graph::push(Node node) {
  if (!node.value.all_finite()) {
    throw NumericError(std::string(op_name(node.kind)) + ": non-finite forward value");
  }
  for (auto p : node.parents) node.requires_grad |= nodes_[p].requires_grad;
  nodes_.push_back(std::move(node));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::constant(Tensor value) {
  Node n(OpKind::constant);
  n.value = std::move(value);
  return push(std::move(n));
}

Var Graph::input(Tensor value) {
  Node n(OpKind::input);
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Graph::param(Parameter& p) {
  if (!p.value.all_finite()) {
    throw NumericError("param: non-finite value in " + p.name);
  }
  Node n(OpKind::param);
  n.param = &p;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Tensor& Graph::value(Var v) const {
  const Node& n = node(v);
  return n.param ? n.param->value : n.value;
}

Tensor Graph::grad(Var v) const {
  const Node& n = node(v);
  if (n.param) return n.param->grad;
  if (n.grad.empty()) return Tensor(value(v).shape());
  return n.grad;
}

Tensor& Graph::grad_slot(Node& n) {
  if (n.param) {
    n.param->touched = true;
    if (n.param->grad.shape() != n.param->value.shape()) n.param->grad = Tensor(n.param->value.shape());
    return n.param->grad;
  }
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

Var Graph::matmul(Var a, Var b) {
  const Tensor &A = value(a), &B = value(b);
  const auto [m, k] = dims(A);
  const auto [k2, n] = dims(B);
  if (k != k2) shape_fail(OpKind::matmul, A, B);
  Node out(OpKind::matmul);
  out.parents = {a.id, b.id};
  out.value = Tensor::matrix(m, n);
  gemm_nn(A.data(), B.data(), out.value.data(), m, k, n);
  return push(std::move(out));
}

Var Graph::matmul_nt(Var a, Var b) {
  const Tensor &A = value(a), &B = value(b);
  const auto [m, k] = dims(A);
  const auto [n, k2] = dims(B);
  if (k != k2) shape_fail(OpKind::matmul_nt, A, B);
  Node out(OpKind::matmul_nt);
  out.parents = {a.id, b.id};
  out.value = Tensor::matrix(m, n);
  gemm_nt(A.data(), B.data(), out.value.data(), m, k, n);
  return push(std::move(out));
}

Var Graph::affine(Var x, Var w, Var bias) {
  const Tensor &X = value(x), &W = value(w), &b = value(bias);
  const auto [m, k] = dims(X);
  const auto [n, k2] = dims(W);
  if (k != k2) shape_fail(OpKind::affine, X, W);
  if (b.size() != n || b.num_rows() != 1) shape_fail(OpKind::affine, W, b);
  Node out(OpKind::affine);
  out.parents = {x.id, w.id, bias.id};
  out.value = Tensor::matrix(m, n);
  double* o = out.value.data();
  for (std::size_t i = 0; i < m; ++i) std::copy_n(b.data(), n, o + i * n);
  gemm_nt(X.data(), W.data(), o, m, k, n);
  return push(std::move(out));
}

Var Graph::add(Var a, Var b) {
  const Tensor &A = value(a), &B = value(b);
  const auto [m, n] = dims(A);
  const auto [m2, n2] = dims(B);
  const bool broadcast = m2 == 1 && m != 1;
  if (n != n2 || (m != m2 && !broadcast)) shape_fail(OpKind::add, A, B);
  Node out(OpKind::add);
  out.parents = {a.id, b.id};
  out.value = Tensor::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out.value[i * n + j] = A[i * n + j] + B[(broadcast ? 0 : i) * n + j];
  return push(std::move(out));
}

Var Graph::sub(Var a, Var b) {
  const Tensor &A = value(a), &B = value(b);
  if (A.size() != B.size() || dims(A).r != dims(B).r) shape_fail(OpKind::sub, A, B);
  Node out(OpKind::sub);
  out.parents = {a.id, b.id};
  out.value = Tensor::matrix(dims(A).r, dims(A).c);
  for (std::size_t i = 0; i < A.size(); ++i) out.value[i] = A[i] - B[i];
  return push(std::move(out));
}

Var Graph::tanh(Var a) {
  const Tensor& A = value(a);
  Node out(OpKind::tanh);
  out.parents = {a.id};
  out.value = Tensor::matrix(dims(A).r, dims(A).c);
  for (std::size_t i = 0; i < A.size(); ++i) out.value[i] = std::tanh(A[i]);
  return push(std::move(out));
}

Var Graph::sigmoid(Var a) {
  const Tensor& A = value(a);
  Node out(OpKind::sigmoid);
  out.parents = {a.id};
  out.value = Tensor::matrix(dims(A).r, dims(A).c);
  for (std::size_t i = 0; i < A.size(); ++i) out.value[i] = sigmoid_scalar(A[i]);
  return push(std::move(out));
}

Var Graph::softmax_row(Var a) {
  const Tensor& A = value(a);
  const auto [m, n] = dims(A);
  if (n == 0) shape_fail(OpKind::softmax_row, A, "empty rows");
  Node out(OpKind::softmax_row);
  out.parents = {a.id};
  out.value = Tensor::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    auto in = A.row_span(i);
    auto o = out.value.row_span(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (o[j] = std::exp(in[j] - mx));
    for (auto& v : o) v /= z;
  }
  return push(std::move(out));
}

Var Graph::log_softmax_row(Var a) {
  const Tensor& A = value(a);
  const auto [m, n] = dims(A);
  if (n == 0) shape_fail(OpKind::log_softmax_row, A, "empty rows");
  Node out(OpKind::log_softmax_row);
  out.parents = {a.id};
  out.value = Tensor::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    auto in = A.row_span(i);
    auto o = out.value.row_span(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(in[j] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) o[j] = in[j] - lz;
  }
  return push(std::move(out));
}

Var Graph::hadamard(Var a, Var b) {
  const Tensor &A = value(a), &B = value(b);
  if (A.size() != B.size() || dims(A).r != dims(B).r) shape_fail(OpKind::hadamard, A, B);
  Node out(OpKind::hadamard);
  out.parents = {a.id, b.id};
  out.value = Tensor::matrix(dims(A).r, dims(A).c);
  for (std::size_t i = 0; i < A.size(); ++i) out.value[i] = A[i] * B[i];
  return push(std::move(out));
}

Var Graph::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t n = dims(value(parts[0])).c;
  std::size_t m = 0;
  Node out(OpKind::concat_rows);
  for (Var p : parts) {
    const Tensor& P = value(p);
    if (dims(P).c != n) shape_fail(OpKind::concat_rows, value(parts[0]), P);
    m += dims(P).r;
    out.parents.push_back(p.id);
  }
  out.value = Tensor::matrix(m, n);
  double* o = out.value.data();
  for (Var p : parts) o = std::copy_n(value(p).data(), value(p).size(), o);
  return push(std::move(out));
}

Var Graph::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = dims(value(parts[0])).r;
  std::size_t n = 0;
  Node out(OpKind::concat_cols);
  for (Var p : parts) {
    const Tensor& P = value(p);
    if (dims(P).r != m) shape_fail(OpKind::concat_cols, value(parts[0]), P);
    n += dims(P).c;
    out.parents.push_back(p.id);
  }
  out.value = Tensor::matrix(m, n);
  std::size_t offset = 0;
  for (Var p : parts) {
    const Tensor& P = value(p);
    const std::size_t c = dims(P).c;
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(P.data() + i * c, c, out.value.data() + i * n + offset);
    offset += c;
  }
  return push(std::move(out));
}

Var Graph::mean_rows(Var a) {
  const Tensor& A = value(a);
  const auto [m, n] = dims(A);
  if (m == 0) shape_fail(OpKind::mean_rows, A, "no rows");
  Node out(OpKind::mean_rows);
  out.parents = {a.id};
  out.value = Tensor::matrix(1, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.value[j] += A[i * n + j];
  for (std::size_t j = 0; j < n; ++j) out.value[j] /= static_cast<double>(m);
  return push(std::move(out));
}

Var Graph::row_lookup(Var table, std::vector<std::size_t> ids) {
  const Tensor& T = value(table);
  const auto [m, n] = dims(T);
  Node out(OpKind::row_lookup);
  out.parents = {table.id};
  out.value = Tensor::matrix(ids.size(), n);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= m) {
      shape_fail(OpKind::row_lookup, T, "row id " + std::to_string(ids[i]) + " out of range");
    }
    std::copy_n(T.data() + ids[i] * n, n, out.value.data() + i * n);
  }
  out.indices = std::move(ids);
  return push(std::move(out));
}

Var Graph::scalar_mul(Var a, double s) {
  const Tensor& A = value(a);
  Node out(OpKind::scalar_mul);
  out.parents = {a.id};
  out.scalar = s;
  out.value = Tensor::matrix(dims(A).r, dims(A).c);
  for (std::size_t i = 0; i < A.size(); ++i) out.value[i] = s * A[i];
  return push(std::move(out));
}

Var Graph::slice_rows(Var a, std::size_t begin, std::size_t end) {
  const Tensor& A = value(a);
  const auto [m, n] = dims(A);
  if (begin >= end || end > m) shape_fail(OpKind::slice_rows, A, "bad row range");
  Node out(OpKind::slice_rows);
  out.parents = {a.id};
  out.indices = {begin, end};
  out.value = Tensor::matrix(end - begin, n);
  std::copy_n(A.data() + begin * n, (end - begin) * n, out.value.data());
  return push(std::move(out));
}

Var Graph::slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& A = value(a);
  const auto [m, n] = dims(A);
  if (begin >= end || end > n) shape_fail(OpKind::slice_cols, A, "bad column range");
  Node out(OpKind::slice_cols);
  out.parents = {a.id};
  out.indices = {begin, end};
  const std::size_t w = end - begin;
  out.value = Tensor::matrix(m, w);
  for (std::size_t i = 0; i < m; ++i) std::copy_n(A.data() + i * n + begin, w, out.value.data() + i * w);
  return push(std::move(out));
}

Var Graph::tile_rows(Var a, std::size_t times) {
  const Tensor& A = value(a);
  const auto [m, n] = dims(A);
  if (m != 1 || times == 0) shape_fail(OpKind::tile_rows, A, "expects a single row");
  Node out(OpKind::tile_rows);
  out.parents = {a.id};
  out.value = Tensor::matrix(times, n);
  for (std::size_t i = 0; i < times; ++i) std::copy_n(A.data(), n, out.value.data() + i * n);
  return push(std::move(out));
}

Var Graph::sum(Var a) {
  const Tensor& A = value(a);
  Node out(OpKind::sum);
  out.parents = {a.id};
  double s = 0.0;
  for (double v : A.values()) s += v;
  out.value = Tensor({1, 1}, std::vector<double>{s});
  return push(std::move(out));
}

Var Graph::pick_sum(Var a, std::vector<std::size_t> cols, std::vector<double> weights) {
  const Tensor& A = value(a);
  const auto [m, n] = dims(A);
  if (cols.size() != m || weights.size() != m) shape_fail(OpKind::pick_sum, A, "index count mismatch");
  Node out(OpKind::pick_sum);
  out.parents = {a.id};
  double s = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (weights[i] == 0.0) continue;
    if (cols[i] >= n) shape_fail(OpKind::pick_sum, A, "column index out of range");
    s += weights[i] * A[i * n + cols[i]];
  }
  out.value = Tensor({1, 1}, std::vector<double>{s});
  out.indices = std::move(cols);
  out.weights = std::move(weights);
  return push(std::move(out));
}

Var Graph::bce(Var probs, Tensor targets, double clamp) {
  const Tensor& S = value(probs);
  if (S.size() != targets.size()) shape_fail(OpKind::bce, S, targets);
  for (double t : targets.values()) {
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("bce: target outside [0,1]");
  }
  Node out(OpKind::bce);
  out.parents = {probs.id};
  out.scalar = clamp;
  double loss = 0.0;
  for (std::size_t i = 0; i < S.size(); ++i) {
    const double s = std::clamp(S[i], clamp, 1.0 - clamp);
    loss -= targets[i] * std::log(s) + (1.0 - targets[i]) * std::log(1.0 - s);
  }
  out.value = Tensor({1, 1}, std::vector<double>{loss / static_cast<double>(S.size())});
  out.aux = std::move(targets);
  return push(std::move(out));
}

Var Graph::apply(OpKind kind, std::span<const Var> in, const OpArgs& args) {
  auto need = [&](std::size_t n) {
    if (in.size() != n) {
      throw ShapeError(std::string(op_name(kind)) + ": expects " + std::to_string(n) +
                       " inputs, got " + std::to_string(in.size()));
    }
  };
  switch (kind) {
    case OpKind::matmul: need(2); return matmul(in[0], in[1]);
    case OpKind::matmul_nt: need(2); return matmul_nt(in[0], in[1]);
    case OpKind::affine: need(3); return affine(in[0], in[1], in[2]);
    case OpKind::add: need(2); return add(in[0], in[1]);
    case OpKind::sub: need(2); return sub(in[0], in[1]);
    case OpKind::tanh: need(1); return tanh(in[0]);
    case OpKind::sigmoid: need(1); return sigmoid(in[0]);
    case OpKind::softmax_row: need(1); return softmax_row(in[0]);
    case OpKind::log_softmax_row: need(1); return log_softmax_row(in[0]);
    case OpKind::hadamard: need(2); return hadamard(in[0], in[1]);
    case OpKind::concat_rows: return concat_rows(in);
    case OpKind::concat_cols: return concat_cols(in);
    case OpKind::mean_rows: need(1); return mean_rows(in[0]);
    case OpKind::row_lookup: need(1); return row_lookup(in[0], args.indices);
    case OpKind::scalar_mul: need(1); return scalar_mul(in[0], args.scalar);
    case OpKind::tile_rows: need(1); return tile_rows(in[0], args.indices.at(0));
    case OpKind::sum: need(1); return sum(in[0]);
    default:
      throw std::invalid_argument("apply: unsupported kind " + std::string(op_name(kind)));
  }
}

void Graph::reset_grads() {
  for (auto& n : nodes_) {
    if (!n.param) n.grad = Tensor();
  }
  backward_done_ = false;
}

void Graph::backward(Var root) {
  if (backward_done_) throw std::logic_error("backward: already run on this graph; call reset_grads()");
  const Node& r = node(root);
  if (value(root).size() != 1) {
    throw ShapeError("backward: root must be scalar, got " + shape_string(value(root).shape()));
  }
  backward_done_ = true;
  if (!r.requires_grad) return;
  grad_slot(nodes_[root.id]).fill(1.0);
  for (std::int64_t i = root.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || n.parents.empty()) continue;
    if (n.grad.empty()) continue;
    backward_node(n);
    for (auto p : n.parents) {
      Node& pn = nodes_[p];
      if (!pn.requires_grad) continue;
      const Tensor& g = pn.param ? pn.param->grad : pn.grad;
      if (!g.all_finite()) {
        throw NumericError("backward: non-finite gradient from op " + std::string(op_name(n.kind)));
      }
    }
  }
}

void Graph::backward_node(Node& n) {
  const Tensor& G = n.grad;
  auto parent = [&](std::size_t i) -> Node& { return nodes_[n.parents[i]]; };
  auto pval = [&](std::size_t i) -> const Tensor& {
    Node& p = parent(i);
    return p.param ? p.param->value : p.value;
  };
  auto wants = [&](std::size_t i) { return parent(i).requires_grad; };

  switch (n.kind) {
    case OpKind::matmul: {
      const Tensor &A = pval(0), &B = pval(1);
      const auto [m, k] = dims(A);
      const std::size_t cols = dims(B).c;
      if (wants(0)) gemm_nt(G.data(), B.data(), grad_slot(parent(0)).data(), m, cols, k);
      if (wants(1)) gemm_tn(A.data(), G.data(), grad_slot(parent(1)).data(), m, k, cols);
      break;
    }
    case OpKind::matmul_nt: {
      const Tensor &A = pval(0), &B = pval(1);
      const auto [m, k] = dims(A);
      const std::size_t rows_b = dims(B).r;
      if (wants(0)) gemm_nn(G.data(), B.data(), grad_slot(parent(0)).data(), m, rows_b, k);
      if (wants(1)) gemm_tn(G.data(), A.data(), grad_slot(parent(1)).data(), m, rows_b, k);
      break;
    }
    case OpKind::affine: {
      const Tensor &X = pval(0), &W = pval(1);
      const auto [m, k] = dims(X);
      const std::size_t out = dims(W).r;
      if (wants(0)) gemm_nn(G.data(), W.data(), grad_slot(parent(0)).data(), m, out, k);
      if (wants(1)) gemm_tn(G.data(), X.data(), grad_slot(parent(1)).data(), m, out, k);
      if (wants(2)) {
        Tensor& gb = grad_slot(parent(2));
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < out; ++j) gb[j] += G[i * out + j];
      }
      break;
    }
    case OpKind::add:
    case OpKind::sub: {
      const double sign = n.kind == OpKind::add ? 1.0 : -1.0;
      if (wants(0)) {
        Tensor& ga = grad_slot(parent(0));
        for (std::size_t i = 0; i < G.size(); ++i) ga[i] += G[i];
      }
      if (wants(1)) {
        Tensor& gb = grad_slot(parent(1));
        const std::size_t cols = gb.num_cols();
        if (gb.size() == G.size()) {
          for (std::size_t i = 0; i < G.size(); ++i) gb[i] += sign * G[i];
        } else {
          for (std::size_t i = 0; i < G.size(); ++i) gb[i % cols] += sign * G[i];
        }
      }
      break;
    }
    case OpKind::tanh: {
      Tensor& ga = grad_slot(parent(0));
      for (std::size_t i = 0; i < G.size(); ++i) {
        const double y = n.value[i];
        ga[i] += G[i] * (1.0 - y * y);
      }
      break;
    }
    case OpKind::sigmoid: {
      Tensor& ga = grad_slot(parent(0));
      for (std::size_t i = 0; i < G.size(); ++i) {
        const double y = n.value[i];
        ga[i] += G[i] * y * (1.0 - y);
      }
      break;
    }
    case OpKind::softmax_row: {
      Tensor& ga = grad_slot(parent(0));
      const auto [m, cols] = dims(n.value);
      for (std::size_t i = 0; i < m; ++i) {
        const double* y = n.value.data() + i * cols;
        const double* g = G.data() + i * cols;
        double dot = 0.0;
        for (std::size_t j = 0; j < cols; ++j) dot += g[j] * y[j];
        for (std::size_t j = 0; j < cols; ++j) ga[i * cols + j] += y[j] * (g[j] - dot);
      }
      break;
    }
    case OpKind::log_softmax_row: {
      Tensor& ga = grad_slot(parent(0));
      const auto [m, cols] = dims(n.value);
      for (std::size_t i = 0; i < m; ++i) {
        const double* y = n.value.data() + i * cols;
        const double* g = G.data() + i * cols;
        double gs = 0.0;
        for (std::size_t j = 0; j < cols; ++j) gs += g[j];
        for (std::size_t j = 0; j < cols; ++j) ga[i * cols + j] += g[j] - std::exp(y[j]) * gs;
      }
      break;
    }
    case OpKind::hadamard: {
      const Tensor &A = pval(0), &B = pval(1);
      if (wants(0)) {
        Tensor& ga = grad_slot(parent(0));
        for (std::size_t i = 0; i < G.size(); ++i) ga[i] += G[i] * B[i];
      }
      if (wants(1)) {
        Tensor& gb = grad_slot(parent(1));
        for (std::size_t i = 0; i < G.size(); ++i) gb[i] += G[i] * A[i];
      }
      break;
    }
    case OpKind::concat_rows: {
      std::size_t offset = 0;
      for (std::size_t p = 0; p < n.parents.size(); ++p) {
        const std::size_t len = pval(p).size();
        if (wants(p)) {
          Tensor& gp = grad_slot(parent(p));
          for (std::size_t i = 0; i < len; ++i) gp[i] += G[offset + i];
        }
        offset += len;
      }
      break;
    }
    case OpKind::concat_cols: {
      const auto [m, total] = dims(n.value);
      std::size_t offset = 0;
      for (std::size_t p = 0; p < n.parents.size(); ++p) {
        const std::size_t c = dims(pval(p)).c;
        if (wants(p)) {
          Tensor& gp = grad_slot(parent(p));
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < c; ++j) gp[i * c + j] += G[i * total + offset + j];
        }
        offset += c;
      }
      break;
    }
    case OpKind::mean_rows: {
      Tensor& ga = grad_slot(parent(0));
      const auto [m, cols] = dims(pval(0));
      const double inv = 1.0 / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < cols; ++j) ga[i * cols + j] += G[j] * inv;
      break;
    }
    case OpKind::row_lookup: {
      Tensor& gt = grad_slot(parent(0));
      const std::size_t cols = dims(n.value).c;
      for (std::size_t i = 0; i < n.indices.size(); ++i)
        for (std::size_t j = 0; j < cols; ++j) gt[n.indices[i] * cols + j] += G[i * cols + j];
      break;
    }
    case OpKind::scalar_mul: {
      Tensor& ga = grad_slot(parent(0));
      for (std::size_t i = 0; i < G.size(); ++i) ga[i] += n.scalar * G[i];
      break;
    }
    case OpKind::slice_rows: {
      Tensor& ga = grad_slot(parent(0));
      const std::size_t cols = dims(n.value).c;
      const std::size_t off = n.indices[0] * cols;
      for (std::size_t i = 0; i < G.size(); ++i) ga[off + i] += G[i];
      break;
    }
    case OpKind::slice_cols: {
      Tensor& ga = grad_slot(parent(0));
      const auto [m, w] = dims(n.value);
      const std::size_t cols = dims(pval(0)).c;
      const std::size_t begin = n.indices[0];
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) ga[i * cols + begin + j] += G[i * w + j];
      break;
    }
    case OpKind::tile_rows: {
      Tensor& ga = grad_slot(parent(0));
      const std::size_t cols = ga.size();
      for (std::size_t i = 0; i < G.size(); ++i) ga[i % cols] += G[i];
      break;
    }
    case OpKind::sum: {
      Tensor& ga = grad_slot(parent(0));
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += G[0];
      break;
    }
    case OpKind::pick_sum: {
      Tensor& ga = grad_slot(parent(0));
      const std::size_t cols = dims(pval(0)).c;
      for (std::size_t i = 0; i < n.indices.size(); ++i) {
        if (n.weights[i] == 0.0) continue;
        ga[i * cols + n.indices[i]] += G[0] * n.weights[i];
      }
      break;
    }
    case OpKind::bce: {
      Tensor& ga = grad_slot(parent(0));
      const Tensor& S = pval(0);
      const double clamp = n.scalar;
      const double inv = 1.0 / static_cast<double>(S.size());
      for (std::size_t i = 0; i < S.size(); ++i) {
        if (S[i] < clamp || S[i] > 1.0 - clamp) continue;  // clamped region is flat
        const double t = n.aux[i];
        ga[i] += G[0] * inv * (-t / S[i] + (1.0 - t) / (1.0 - S[i]));
      }
      break;
    }
    case OpKind::constant:
    case OpKind::input:
    case OpKind::param:
      break;
  }
}

}  // namespace updown
