#pragma once

#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tjstg/tensor.h"

namespace tjstg::ad {

// Entries of probability vectors are clamped at this floor before any log.
inline constexpr double kProbEps = 1e-12;

class Graph;

// Handle to a node on a Graph tape. Cheap to copy; only valid while the
// owning Graph is alive.
struct Var {
  Graph* graph = nullptr;
  int id = -1;
  bool valid() const { return graph != nullptr && id >= 0; }
};

// Reverse-mode tape. Nodes are recorded in topological (creation) order;
// backward() sweeps the tape once from the loss down to the leaves.
// Single-threaded by contract: use one Graph per example or batch.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaf that never receives a gradient (inputs, masks, labels).
  Var constant(Tensor value);
  // Leaf that accumulates a gradient (trainable parameter).
  Var param(Tensor value);

  const Tensor& value(Var v) const;
  // Gradient of the last backward() target w.r.t. v; zeros if untouched.
  Tensor grad(Var v) const;

  // Reverse sweep from a scalar loss recorded on this tape. Clears previous
  // gradients, so it may be called repeatedly with different losses.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

  // --- internal plumbing for op builders ---
  struct Node {
    Tensor value;
    Tensor grad;  // lazily allocated during backward
    bool requires_grad = false;
    std::function<void()> backprop;  // empty for leaves / constant subtrees
  };
  // Records a node whose requires_grad is inherited from the parents; the
  // backward rule is attached afterwards (it needs the new node's id) and is
  // dropped when no parent tracks gradients.
  Var emplace(Tensor value, std::span<const Var> parents);
  void set_backprop(Var v, std::function<void()> fn);
  void accumulate(int id, const Tensor& g);
  const Tensor& grad_ref(int id) const { return nodes_[id].grad; }

 private:
  void check_owned(Var v) const;
  // deque: node references stay valid while later ops are recorded
  std::deque<Node> nodes_;
};

// --- differentiable operations -------------------------------------------

Var matmul(Var a, Var b);
Var transpose(Var x);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // Hadamard
// alpha * x + beta, elementwise with scalar constants.
Var affine_scalar(Var x, double alpha, double beta);
inline Var scale(Var x, double a) { return affine_scalar(x, a, 0.0); }
inline Var neg(Var x) { return affine_scalar(x, -1.0, 0.0); }

Var tanh(Var x);
Var sigmoid(Var x);
Var relu(Var x);
// log(max(x, kProbEps)); gradient is 0 where the clamp is active.
Var log_clamped(Var x);

// Stable softmax over the last axis of any rank.
Var softmax(Var x);
// Softmax restricted to mask!=0 positions of each last-axis slice; masked
// entries get probability 0. The mask is a constant.
Var masked_softmax(Var x, Tensor mask);

Var sum_all(Var x);    // -> 1x1
Var mean_rows(Var x);  // RxC -> 1xC

Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
inline Var concat_rows(std::initializer_list<Var> parts) {
  return concat_rows(std::span<const Var>(parts.begin(), parts.size()));
}
inline Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

Var slice_cols(Var x, std::size_t start, std::size_t len);
Var gather_rows(Var x, std::vector<std::size_t> idx);
Var gather_cols(Var x, std::vector<std::size_t> idx);
Var reshape(Var x, std::vector<std::size_t> shape);

// y_i = x_i if x_i >= tau else 0; the indicator is treated as constant.
Var threshold_keep(Var x, double tau);
// y = x / sum(x)
Var normalize_sum(Var x);

// Sum p_i log(p_i / q_i) with entries clamped at kProbEps. Both inputs must
// lie on the probability simplex within 1e-9, else ContractError.
Var kl_divergence(Var p, Var q);
// 0.5 KL(p||m) + 0.5 KL(q||m), m = (p+q)/2; gradients flow through both KL
// terms and through m.
Var js_divergence(Var p, Var q);

// -log(max(p[label], kProbEps)) for a row-vector of class probabilities.
Var cross_entropy(Var p, std::size_t label);

// Broadcast-add a 1xC bias to every row of an RxC matrix.
Var add_rowvec(Var x, Var b);
// x*w + b
inline Var linear(Var x, Var w, Var b) { return add_rowvec(matmul(x, w), b); }
// 1xN . 1xN -> 1x1
inline Var dot(Var a, Var b) { return matmul(a, transpose(b)); }

// --- gradient checking -----------------------------------------------------

// Builds the loss for one parameter binding. Must be deterministic.
using LossFn =
    std::function<Var(Graph&, const std::map<std::string, Var>&)>;

struct GradCheckReport {
  struct Entry {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t coords = 0;
  };
  std::vector<Entry> entries;  // one per parameter, name-ordered
  double max_rel_err = 0.0;
  bool pass(double tol) const { return max_rel_err < tol; }
};

// Central finite differences (f(t+e) - f(t-e)) / 2e per coordinate against
// the tape gradient; relative error |a-n| / max(1, |a|, |n|). Throws
// ContractError if f is not deterministic or eps <= 0.
GradCheckReport grad_check(const LossFn& f,
                           const std::map<std::string, Tensor>& params,
                           double eps = 1e-5);

}  // namespace tjstg::ad
