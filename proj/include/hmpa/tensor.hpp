#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "hmpa/error.hpp"

namespace hmpa {

// Dense row-major float64 array. The whole stack runs in double precision;
// at this scale it is cheap and keeps finite-difference checks tight.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until a backward pass touches it

  Tensor() = default;
  Tensor(std::vector<std::size_t> shape_in, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape_in, std::vector<double> data_in);

  std::size_t numel() const;
  std::size_t rows() const;  // 2-d accessors; 1-d tensors count as one row
  std::size_t cols() const;
  double& at(std::size_t i, std::size_t j);
  double at(std::size_t i, std::size_t j) const;

  void ensure_grad();  // allocate and zero the grad buffer
  void zero_grad();
  std::string shape_str() const;
};

using TensorPtr = std::shared_ptr<Tensor>;

TensorPtr make_tensor(std::vector<std::size_t> shape, double fill = 0.0);
TensorPtr make_tensor(std::vector<std::size_t> shape, std::vector<double> data);

// Named, ordered collection of trainable arrays. std::map iterates in
// lexicographic name order, which anchors checkpoint layout and every
// other per-parameter loop in the project.
using ParameterSet = std::map<std::string, TensorPtr>;

class Graph;

// Handle to one node of a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Tensor& tensor() const;
  const std::vector<double>& value() const { return tensor().data; }
  const std::vector<std::size_t>& shape() const { return tensor().shape; }
};

// Define-by-run tape. Nodes are appended in execution order, so insertion
// order is a topological order and backward() walks it in exact reverse.
// A graph is single-use: build, run backward once, discard.
class Graph {
 public:
  enum class Op {
    leaf,
    matmul,
    transpose,
    add,
    add_rowvec,
    mul,
    mul_colvec,
    scale,
    gelu,
    tanh,
    softmax_rows,
    layer_norm,
    slice_rows,
    slice_cols,
    concat_rows,
    concat_cols,
    embed_rows,
    sum_all,
    cross_entropy,
    dropout,
  };

  struct Node {
    Op op;
    std::vector<int> inputs;
    TensorPtr out;
    std::vector<double> aux;       // saved forward values needed by backward
    std::vector<std::size_t> iaux; // op parameters (indices, bounds, label)
    double scalar = 0.0;           // op parameter (scale factor, eps, rate)
  };

  // Registers an existing tensor as a leaf. Idempotent per tensor, so the
  // same parameter used many times accumulates one gradient.
  Var leaf(const TensorPtr& t);
  // Leaf holding a plain value (inputs, masks); never receives gradient.
  Var constant(Tensor t);

  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  bool backward_done() const { return backward_done_; }

  // Used by the op builders below; not part of the public surface.
  Var emit(Node n);

 private:
  std::vector<Node> nodes_;
  std::map<const Tensor*, int> leaf_ids_;
  bool backward_done_ = false;
};

// Op builders. Each runs the forward computation immediately, verifies the
// result is finite, and records the node for the backward pass.
Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var add_rowvec(Var m, Var row);    // adds a length-n row to every row of [m x n]
Var mul(Var a, Var b);             // elementwise
Var mul_colvec(Var m, Var col);    // scales row i of [m x n] by col[i]
Var scale(Var a, double c);
Var gelu(Var a);                   // exact erf form, not the tanh approximation
Var tanh(Var a);
Var softmax_rows(Var a);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var slice_rows(Var a, std::size_t r0, std::size_t r1);
Var slice_cols(Var a, std::size_t c0, std::size_t c1);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var embed_rows(Var table, const std::vector<std::size_t>& ids);
Var sum_all(Var a);                                  // -> shape {1}
Var cross_entropy(Var logits, std::size_t label);    // -log softmax(logits)[label], shape {1}
// Inverted dropout with an explicit seed; keep_mask is drawn per call.
Var dropout(Var a, double rate, std::uint64_t seed);

}  // namespace hmpa
