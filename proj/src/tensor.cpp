#include "hmpa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>

#include "hmpa/rng.hpp"

namespace hmpa {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) {
    if (e == 0) throw invariant_error("tensor shape has zero extent");
    n *= e;
  }
  return n;
}

void check_finite(const Tensor& t, const char* op_name) {
  for (double v : t.data) {
    if (!std::isfinite(v)) {
      throw invariant_error(std::string("non-finite value produced by ") + op_name);
    }
  }
}

double norm_pdf(double x) {
  static const double inv_sqrt_2pi = 0.3989422804014327;
  return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

double norm_cdf(double x) {
  return 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape_in, double fill)
    : shape(std::move(shape_in)), data(shape_product(shape), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape_in, std::vector<double> data_in)
    : shape(std::move(shape_in)), data(std::move(data_in)) {
  if (shape_product(shape) != data.size()) {
    throw invariant_error("tensor data length does not match shape " + shape_str());
  }
}

std::size_t Tensor::numel() const { return data.size(); }

std::size_t Tensor::rows() const {
  if (shape.size() == 1) return 1;
  if (shape.size() == 2) return shape[0];
  throw invariant_error("rows() needs a 1-d or 2-d tensor, got " + shape_str());
}

std::size_t Tensor::cols() const {
  if (shape.size() == 1) return shape[0];
  if (shape.size() == 2) return shape[1];
  throw invariant_error("cols() needs a 1-d or 2-d tensor, got " + shape_str());
}

double& Tensor::at(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
double Tensor::at(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }

void Tensor::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() { grad.assign(data.size(), 0.0); }

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

TensorPtr make_tensor(std::vector<std::size_t> shape, double fill) {
  return std::make_shared<Tensor>(std::move(shape), fill);
}

TensorPtr make_tensor(std::vector<std::size_t> shape, std::vector<double> data) {
  return std::make_shared<Tensor>(std::move(shape), std::move(data));
}

const Tensor& Var::tensor() const {
  if (graph == nullptr || id < 0) throw invariant_error("use of uninitialized Var");
  return *graph->node(id).out;
}

Var Graph::leaf(const TensorPtr& t) {
  auto it = leaf_ids_.find(t.get());
  if (it != leaf_ids_.end()) return Var{this, it->second};
  Node n;
  n.op = Op::leaf;
  n.out = t;
  Var v = emit(std::move(n));
  leaf_ids_[t.get()] = v.id;
  return v;
}

Var Graph::constant(Tensor t) {
  Node n;
  n.op = Op::leaf;
  n.out = std::make_shared<Tensor>(std::move(t));
  return emit(std::move(n));
}

Var Graph::emit(Node n) {
  if (backward_done_) {
    throw invariant_error("graph is single-use: cannot extend after backward");
  }
  check_finite(*n.out, "op");
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

namespace {

Graph* same_graph(Var a, Var b) {
  if (a.graph == nullptr || a.graph != b.graph) {
    throw invariant_error("operands belong to different graphs");
  }
  return a.graph;
}

const Tensor& T(Var v) { return v.tensor(); }

}  // namespace

Var matmul(Var a, Var b) {
  Graph* g = same_graph(a, b);
  const Tensor& A = T(a);
  const Tensor& B = T(b);
  if (A.shape.size() != 2 || B.shape.size() != 2 || A.cols() != B.rows()) {
    throw invariant_error("matmul dimension mismatch: " + A.shape_str() + " x " + B.shape_str());
  }
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor C({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t t = 0; t < k; ++t) {
      const double av = A.at(i, t);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) C.at(i, j) += av * B.at(t, j);
    }
  }
  Graph::Node node;
  node.op = Graph::Op::matmul;
  node.inputs = {a.id, b.id};
  node.out = std::make_shared<Tensor>(std::move(C));
  return g->emit(std::move(node));
}

Var transpose(Var a) {
  const Tensor& A = T(a);
  if (A.shape.size() != 2) throw invariant_error("transpose needs a 2-d tensor");
  Tensor C({A.cols(), A.rows()});
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) C.at(j, i) = A.at(i, j);
  Graph::Node node;
  node.op = Graph::Op::transpose;
  node.inputs = {a.id};
  node.out = std::make_shared<Tensor>(std::move(C));
  return a.graph->emit(std::move(node));
}

Var add(Var a, Var b) {
  Graph* g = same_graph(a, b);
  const Tensor& A = T(a);
  const Tensor& B = T(b);
  if (A.shape != B.shape) {
    throw invariant_error("add shape mismatch: " + A.shape_str() + " vs " + B.shape_str());
  }
  Tensor C(A.shape);
  for (std::size_t i = 0; i < A.numel(); ++i) C.data[i] = A.data[i] + B.data[i];
  Graph::Node node;
  node.op = Graph::Op::add;
  node.inputs = {a.id, b.id};
  node.out = std::make_shared<Tensor>(std::move(C));
  return g->emit(std::move(node));
}

Var add_rowvec(Var m, Var row) {
  Graph* g = same_graph(m, row);
  const Tensor& A = T(m);
  const Tensor& R = T(row);
  if (R.numel() != A.cols()) {
    throw invariant_error("add_rowvec width mismatch: " + A.shape_str() + " vs " + R.shape_str());
  }
  Tensor C(A.shape);
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) C.at(i, j) = A.at(i, j) + R.data[j];
  Graph::Node node;
  node.op = Graph::Op::add_rowvec;
  node.inputs = {m.id, row.id};
  node.out = std::make_shared<Tensor>(std::move(C));
  return g->emit(std::move(node));
}

Var mul(Var a, Var b) {
  Graph* g = same_graph(a, b);
  const Tensor& A = T(a);
  const Tensor& B = T(b);
  if (A.shape != B.shape) {
    throw invariant_error("mul shape mismatch: " + A.shape_str() + " vs " + B.shape_str());
  }
  Tensor C(A.shape);
  for (std::size_t i = 0; i < A.numel(); ++i) C.data[i] = A.data[i] * B.data[i];
  Graph::Node node;
  node.op = Graph::Op::mul;
  node.inputs = {a.id, b.id};
  node.out = std::make_shared<Tensor>(std::move(C));
  return g->emit(std::move(node));
}

Var mul_colvec(Var m, Var col) {
  Graph* g = same_graph(m, col);
  const Tensor& A = T(m);
  const Tensor& C0 = T(col);
  if (C0.numel() != A.rows()) {
    throw invariant_error("mul_colvec height mismatch: " + A.shape_str() + " vs " + C0.shape_str());
  }
  Tensor C(A.shape);
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) C.at(i, j) = A.at(i, j) * C0.data[i];
  Graph::Node node;
  node.op = Graph::Op::mul_colvec;
  node.inputs = {m.id, col.id};
  node.out = std::make_shared<Tensor>(std::move(C));
  return g->emit(std::move(node));
}

Var scale(Var a, double c) {
  const Tensor& A = T(a);
  Tensor C(A.shape);
  for (std::size_t i = 0; i < A.numel(); ++i) C.data[i] = A.data[i] * c;
  Graph::Node node;
  node.op = Graph::Op::scale;
  node.inputs = {a.id};
  node.scalar = c;
  node.out = std::make_shared<Tensor>(std::move(C));
  return a.graph->emit(std::move(node));
}

Var gelu(Var a) {
  const Tensor& A = T(a);
  Tensor C(A.shape);
  for (std::size_t i = 0; i < A.numel(); ++i) C.data[i] = A.data[i] * norm_cdf(A.data[i]);
  Graph::Node node;
  node.op = Graph::Op::gelu;
  node.inputs = {a.id};
  node.out = std::make_shared<Tensor>(std::move(C));
  return a.graph->emit(std::move(node));
}

Var tanh(Var a) {
  const Tensor& A = T(a);
  Tensor C(A.shape);
  for (std::size_t i = 0; i < A.numel(); ++i) C.data[i] = std::tanh(A.data[i]);
  Graph::Node node;
  node.op = Graph::Op::tanh;
  node.inputs = {a.id};
  node.out = std::make_shared<Tensor>(std::move(C));
  return a.graph->emit(std::move(node));
}

Var softmax_rows(Var a) {
  const Tensor& A = T(a);
  if (A.cols() < 1) throw invariant_error("softmax_rows needs at least one column");
  Tensor C(A.shape);
  const std::size_t m = A.rows(), n = A.cols();
  for (std::size_t i = 0; i < m; ++i) {
    double mx = A.at(i, 0);
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, A.at(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = std::exp(A.at(i, j) - mx);
      C.at(i, j) = e;
      sum += e;
    }
    for (std::size_t j = 0; j < n; ++j) C.at(i, j) /= sum;
  }
  Graph::Node node;
  node.op = Graph::Op::softmax_rows;
  node.inputs = {a.id};
  node.out = std::make_shared<Tensor>(std::move(C));
  return a.graph->emit(std::move(node));
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Graph* g = same_graph(x, gamma);
  same_graph(x, beta);
  if (eps <= 0.0) throw invariant_error("layer_norm eps must be positive");
  const Tensor& X = T(x);
  const std::size_t d = X.shape.back();
  const Tensor& G = T(gamma);
  const Tensor& B = T(beta);
  if (G.numel() != d || B.numel() != d) {
    throw invariant_error("layer_norm affine size mismatch with last axis " + std::to_string(d));
  }
  const std::size_t m = X.numel() / d;
  Tensor C(X.shape);
  // aux layout: per row (inv_std), then the normalized values x_hat.
  std::vector<double> aux;
  aux.reserve(m + X.numel());
  std::vector<double> xhat(X.numel());
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = &X.data[i * d];
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(d);  // biased variance, matching transformer convention
    const double inv_std = 1.0 / std::sqrt(var + eps);
    aux.push_back(inv_std);
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mean) * inv_std;
      xhat[i * d + j] = h;
      C.data[i * d + j] = G.data[j] * h + B.data[j];
    }
  }
  aux.insert(aux.end(), xhat.begin(), xhat.end());
  Graph::Node node;
  node.op = Graph::Op::layer_norm;
  node.inputs = {x.id, gamma.id, beta.id};
  node.aux = std::move(aux);
  node.scalar = eps;
  node.out = std::make_shared<Tensor>(std::move(C));
  return g->emit(std::move(node));
}

Var slice_rows(Var a, std::size_t r0, std::size_t r1) {
  const Tensor& A = T(a);
  if (r0 >= r1 || r1 > A.rows()) throw invariant_error("slice_rows bounds out of range");
  const std::size_t n = A.cols();
  Tensor C({r1 - r0, n});
  for (std::size_t i = r0; i < r1; ++i)
    for (std::size_t j = 0; j < n; ++j) C.at(i - r0, j) = A.at(i, j);
  Graph::Node node;
  node.op = Graph::Op::slice_rows;
  node.inputs = {a.id};
  node.iaux = {r0, r1};
  node.out = std::make_shared<Tensor>(std::move(C));
  return a.graph->emit(std::move(node));
}

Var slice_cols(Var a, std::size_t c0, std::size_t c1) {
  const Tensor& A = T(a);
  if (c0 >= c1 || c1 > A.cols()) throw invariant_error("slice_cols bounds out of range");
  const std::size_t m = A.rows();
  Tensor C({m, c1 - c0});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = c0; j < c1; ++j) C.at(i, j - c0) = A.at(i, j);
  Graph::Node node;
  node.op = Graph::Op::slice_cols;
  node.inputs = {a.id};
  node.iaux = {c0, c1};
  node.out = std::make_shared<Tensor>(std::move(C));
  return a.graph->emit(std::move(node));
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw invariant_error("concat_rows needs at least one part");
  Graph* g = parts.front().graph;
  std::size_t total = 0;
  const std::size_t n = T(parts.front()).cols();
  for (Var p : parts) {
    same_graph(parts.front(), p);
    if (T(p).cols() != n) throw invariant_error("concat_rows width mismatch");
    total += T(p).rows();
  }
  Tensor C({total, n});
  std::size_t r = 0;
  Graph::Node node;
  node.op = Graph::Op::concat_rows;
  for (Var p : parts) {
    const Tensor& P = T(p);
    for (std::size_t i = 0; i < P.rows(); ++i)
      for (std::size_t j = 0; j < n; ++j) C.at(r + i, j) = P.at(i, j);
    node.inputs.push_back(p.id);
    node.iaux.push_back(P.rows());
    r += P.rows();
  }
  node.out = std::make_shared<Tensor>(std::move(C));
  return g->emit(std::move(node));
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw invariant_error("concat_cols needs at least one part");
  Graph* g = parts.front().graph;
  std::size_t total = 0;
  const std::size_t m = T(parts.front()).rows();
  for (Var p : parts) {
    same_graph(parts.front(), p);
    if (T(p).rows() != m) throw invariant_error("concat_cols height mismatch");
    total += T(p).cols();
  }
  Tensor C({m, total});
  std::size_t c = 0;
  Graph::Node node;
  node.op = Graph::Op::concat_cols;
  for (Var p : parts) {
    const Tensor& P = T(p);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < P.cols(); ++j) C.at(i, c + j) = P.at(i, j);
    node.inputs.push_back(p.id);
    node.iaux.push_back(P.cols());
    c += P.cols();
  }
  node.out = std::make_shared<Tensor>(std::move(C));
  return g->emit(std::move(node));
}

Var embed_rows(Var table, const std::vector<std::size_t>& ids) {
  const Tensor& A = T(table);
  if (A.shape.size() != 2) throw invariant_error("embed_rows table must be 2-d");
  const std::size_t d = A.cols();
  Tensor C({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= A.rows()) {
      throw invariant_error("embed_rows index " + std::to_string(ids[i]) +
                            " out of range for table " + A.shape_str());
    }
    for (std::size_t j = 0; j < d; ++j) C.at(i, j) = A.at(ids[i], j);
  }
  Graph::Node node;
  node.op = Graph::Op::embed_rows;
  node.inputs = {table.id};
  node.iaux = ids;
  node.out = std::make_shared<Tensor>(std::move(C));
  return table.graph->emit(std::move(node));
}

Var sum_all(Var a) {
  const Tensor& A = T(a);
  double s = 0.0;
  for (double v : A.data) s += v;
  Graph::Node node;
  node.op = Graph::Op::sum_all;
  node.inputs = {a.id};
  node.out = make_tensor({1}, std::vector<double>{s});
  return a.graph->emit(std::move(node));
}

Var cross_entropy(Var logits, std::size_t label) {
  const Tensor& A = T(logits);
  const std::size_t n = A.numel();
  if (label >= n) throw invariant_error("cross_entropy label out of range");
  // log-sum-exp with max subtraction; the softmax is saved for backward.
  double mx = A.data[0];
  for (double v : A.data) mx = std::max(mx, v);
  double sum = 0.0;
  std::vector<double> soft(n);
  for (std::size_t i = 0; i < n; ++i) {
    soft[i] = std::exp(A.data[i] - mx);
    sum += soft[i];
  }
  for (std::size_t i = 0; i < n; ++i) soft[i] /= sum;
  const double loss = std::log(sum) + mx - A.data[label];
  Graph::Node node;
  node.op = Graph::Op::cross_entropy;
  node.inputs = {logits.id};
  node.iaux = {label};
  node.aux = std::move(soft);
  node.out = make_tensor({1}, std::vector<double>{loss});
  return logits.graph->emit(std::move(node));
}

Var dropout(Var a, double rate, std::uint64_t seed) {
  if (rate < 0.0 || rate >= 1.0) throw invariant_error("dropout rate must be in [0,1)");
  const Tensor& A = T(a);
  Graph::Node node;
  node.op = Graph::Op::dropout;
  node.inputs = {a.id};
  node.scalar = rate;
  Tensor C(A.shape);
  std::vector<double> keep(A.numel());
  Rng rng(seed);
  const double inv_keep = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < A.numel(); ++i) {
    keep[i] = rand_uniform(rng) >= rate ? inv_keep : 0.0;
    C.data[i] = A.data[i] * keep[i];
  }
  node.aux = std::move(keep);
  node.out = std::make_shared<Tensor>(std::move(C));
  return a.graph->emit(std::move(node));
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw invariant_error("loss belongs to a different graph");
  if (backward_done_) throw invariant_error("second backward on a single-use graph");
  const Tensor& L = *nodes_.at(static_cast<std::size_t>(loss.id)).out;
  if (L.numel() != 1) {
    throw invariant_error("backward requires a scalar loss, got " + L.shape_str());
  }
  backward_done_ = true;

  for (auto& n : nodes_) n.out->ensure_grad();
  nodes_[static_cast<std::size_t>(loss.id)].out->grad[0] = 1.0;

  for (std::size_t idx = nodes_.size(); idx-- > 0;) {
    Node& n = nodes_[idx];
    const Tensor& out = *n.out;
    const std::vector<double>& go = out.grad;
    switch (n.op) {
      case Op::leaf:
        break;
      case Op::matmul: {
        Tensor& A = *nodes_[n.inputs[0]].out;
        Tensor& B = *nodes_[n.inputs[1]].out;
        const std::size_t m = A.rows(), k = A.cols(), c = B.cols();
        // dA = dC * B^T, dB = A^T * dC
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t t = 0; t < k; ++t) {
            double s = 0.0;
            for (std::size_t j = 0; j < c; ++j) s += go[i * c + j] * B.at(t, j);
            A.grad[i * k + t] += s;
          }
        for (std::size_t t = 0; t < k; ++t)
          for (std::size_t j = 0; j < c; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < m; ++i) s += A.at(i, t) * go[i * c + j];
            B.grad[t * c + j] += s;
          }
        break;
      }
      case Op::transpose: {
        Tensor& A = *nodes_[n.inputs[0]].out;
        for (std::size_t i = 0; i < A.rows(); ++i)
          for (std::size_t j = 0; j < A.cols(); ++j)
            A.grad[i * A.cols() + j] += go[j * A.rows() + i];
        break;
      }
      case Op::add: {
        Tensor& A = *nodes_[n.inputs[0]].out;
        Tensor& B = *nodes_[n.inputs[1]].out;
        for (std::size_t i = 0; i < go.size(); ++i) {
          A.grad[i] += go[i];
          B.grad[i] += go[i];
        }
        break;
      }
      case Op::add_rowvec: {
        Tensor& A = *nodes_[n.inputs[0]].out;
        Tensor& R = *nodes_[n.inputs[1]].out;
        const std::size_t cols = A.cols();
        for (std::size_t i = 0; i < A.rows(); ++i)
          for (std::size_t j = 0; j < cols; ++j) {
            A.grad[i * cols + j] += go[i * cols + j];
            R.grad[j] += go[i * cols + j];
          }
        break;
      }
      case Op::mul: {
        Tensor& A = *nodes_[n.inputs[0]].out;
        Tensor& B = *nodes_[n.inputs[1]].out;
        for (std::size_t i = 0; i < go.size(); ++i) {
          A.grad[i] += go[i] * B.data[i];
          B.grad[i] += go[i] * A.data[i];
        }
        break;
      }
      case Op::mul_colvec: {
        Tensor& A = *nodes_[n.inputs[0]].out;
        Tensor& C = *nodes_[n.inputs[1]].out;
        const std::size_t cols = A.cols();
        for (std::size_t i = 0; i < A.rows(); ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < cols; ++j) {
            A.grad[i * cols + j] += go[i * cols + j] * C.data[i];
            s += go[i * cols + j] * A.data[i * cols + j];
          }
          C.grad[i] += s;
        }
        break;
      }
      case Op::scale: {
        Tensor& A = *nodes_[n.inputs[0]].out;
        for (std::size_t i = 0; i < go.size(); ++i) A.grad[i] += go[i] * n.scalar;
        break;
      }
      case Op::gelu: {
        Tensor& A = *nodes_[n.inputs[0]].out;
        for (std::size_t i = 0; i < go.size(); ++i) {
          const double x = A.data[i];
          A.grad[i] += go[i] * (norm_cdf(x) + x * norm_pdf(x));
        }
        break;
      }
      case Op::tanh: {
        Tensor& A = *nodes_[n.inputs[0]].out;
        for (std::size_t i = 0; i < go.size(); ++i) {
          const double y = out.data[i];
          A.grad[i] += go[i] * (1.0 - y * y);
        }
        break;
      }
      case Op::softmax_rows: {
        Tensor& A = *nodes_[n.inputs[0]].out;
        const std::size_t m = out.rows(), c = out.cols();
        for (std::size_t i = 0; i < m; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < c; ++j) dot += go[i * c + j] * out.data[i * c + j];
          for (std::size_t j = 0; j < c; ++j)
            A.grad[i * c + j] += out.data[i * c + j] * (go[i * c + j] - dot);
        }
        break;
      }
      case Op::layer_norm: {
        Tensor& X = *nodes_[n.inputs[0]].out;
        Tensor& G = *nodes_[n.inputs[1]].out;
        Tensor& B = *nodes_[n.inputs[2]].out;
        const std::size_t d = X.shape.back();
        const std::size_t m = X.numel() / d;
        const double* inv_std = n.aux.data();
        const double* xhat = n.aux.data() + m;
        for (std::size_t i = 0; i < m; ++i) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double gg = go[i * d + j] * G.data[j];
            sum_g += gg;
            sum_gx += gg * xhat[i * d + j];
          }
          for (std::size_t j = 0; j < d; ++j) {
            const double gg = go[i * d + j] * G.data[j];
            X.grad[i * d + j] +=
                inv_std[i] * (gg - (sum_g + xhat[i * d + j] * sum_gx) / static_cast<double>(d));
            G.grad[j] += go[i * d + j] * xhat[i * d + j];
            B.grad[j] += go[i * d + j];
          }
        }
        break;
      }
      case Op::slice_rows: {
        Tensor& A = *nodes_[n.inputs[0]].out;
        const std::size_t r0 = n.iaux[0], r1 = n.iaux[1], c = A.cols();
        for (std::size_t i = r0; i < r1; ++i)
          for (std::size_t j = 0; j < c; ++j) A.grad[i * c + j] += go[(i - r0) * c + j];
        break;
      }
      case Op::slice_cols: {
        Tensor& A = *nodes_[n.inputs[0]].out;
        const std::size_t c0 = n.iaux[0], c1 = n.iaux[1], c = A.cols();
        for (std::size_t i = 0; i < A.rows(); ++i)
          for (std::size_t j = c0; j < c1; ++j)
            A.grad[i * c + j] += go[i * (c1 - c0) + (j - c0)];
        break;
      }
      case Op::concat_rows: {
        std::size_t r = 0;
        const std::size_t c = out.cols();
        for (std::size_t p = 0; p < n.inputs.size(); ++p) {
          Tensor& A = *nodes_[n.inputs[p]].out;
          for (std::size_t i = 0; i < n.iaux[p]; ++i)
            for (std::size_t j = 0; j < c; ++j) A.grad[i * c + j] += go[(r + i) * c + j];
          r += n.iaux[p];
        }
        break;
      }
      case Op::concat_cols: {
        std::size_t cbase = 0;
        const std::size_t c = out.cols();
        for (std::size_t p = 0; p < n.inputs.size(); ++p) {
          Tensor& A = *nodes_[n.inputs[p]].out;
          const std::size_t w = n.iaux[p];
          for (std::size_t i = 0; i < out.rows(); ++i)
            for (std::size_t j = 0; j < w; ++j) A.grad[i * w + j] += go[i * c + cbase + j];
          cbase += w;
        }
        break;
      }
      case Op::embed_rows: {
        Tensor& A = *nodes_[n.inputs[0]].out;
        const std::size_t d = A.cols();
        for (std::size_t i = 0; i < n.iaux.size(); ++i)
          for (std::size_t j = 0; j < d; ++j) A.grad[n.iaux[i] * d + j] += go[i * d + j];
        break;
      }
      case Op::sum_all: {
        Tensor& A = *nodes_[n.inputs[0]].out;
        for (std::size_t i = 0; i < A.numel(); ++i) A.grad[i] += go[0];
        break;
      }
      case Op::cross_entropy: {
        Tensor& A = *nodes_[n.inputs[0]].out;
        const std::size_t label = n.iaux[0];
        for (std::size_t i = 0; i < A.numel(); ++i) {
          const double onehot = (i == label) ? 1.0 : 0.0;
          A.grad[i] += go[0] * (n.aux[i] - onehot);
        }
        break;
      }
      case Op::dropout: {
        Tensor& A = *nodes_[n.inputs[0]].out;
        for (std::size_t i = 0; i < go.size(); ++i) A.grad[i] += go[i] * n.aux[i];
        break;
      }
    }
  }
}

}  // namespace hmpa
