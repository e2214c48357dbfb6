#pragma once

// Operator-level reverse-mode differentiation over dense matrices.
//
// A Tape records every operation applied to its Vars in execution order, so
// node ids are already a topological order and backward() is a reverse sweep.
// Nodes only keep a backward closure when at least one input needs a
// gradient; a tape without gradient leaves is a plain forward evaluator.

#include "adrl/common.hpp"

#include <deque>
#include <functional>
#include <span>
#include <utility>
#include <vector>

namespace adrl::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  // Non-owning constant; `value` must outlive the tape.
  Var reference(const Matrix& value);
  // Non-owning leaf that accumulates a gradient.
  Var parameter(const Matrix& value);
  // Owned leaf that accumulates a gradient.
  Var variable(Matrix value);

  Var record(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn);

  const Matrix& value(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  // Gradient of the last backward() loss w.r.t. v; zeros when v was not reached.
  Matrix grad(Var v) const;

  template <typename Expr>
  void accumulate(Var v, const Expr& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) {
      return;
    }
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  // Seeds d(loss)/d(loss) = 1 and sweeps backwards. Loss must be 1x1.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix owned;
    const Matrix* ref = nullptr;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Node node);

  std::deque<Node> nodes_;
};

// Elementwise / linear algebra.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double s);
Var mul(Var a, Var b);  // elementwise
Var add_row(Var a, Var row);  // broadcast a 1 x n row over every row of a
Var gelu(Var a);              // tanh approximation
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var sum(Var a);

// Indexing.
Var embedding(Var table, std::span<const int> ids);
Var select_rows(Var x, std::span<const int> rows);
Var slice_cols(Var x, Eigen::Index start, Eigen::Index count);
Var pick(Var x, Eigen::Index row, Eigen::Index col);

// Writes z (1 x cols) over / onto each listed row of x.
Var replace_rows(Var x, std::span<const int> rows, Var z);
Var add_to_rows(Var x, std::span<const int> rows, Var z);
// Constant overrides: the overwritten entries receive no gradient.
Var assign_rows(Var x, std::span<const int> rows, const Matrix& values);
Var assign_entries(Var x, std::span<const std::pair<int, int>> entries, std::span<const double> values);

// Probability.
Var softmax_rows(Var x);
Var log_softmax_rows(Var x);
// sum over rows of KL(p_r || q_r) with q floored at kKlFloor.
Var kl_rows(Var p, Var q);
// Mean of -log softmax(logits)[r, targets[r]] over rows with targets[r] >= 0.
Var cross_entropy(Var logits, std::span<const int> targets);

// Packed causal self-attention over several independent sequences.
//
// Tokens of all sequences are stacked into N rows. Score matrices are stored
// head-major as [H*N x Tmax]: row h*N + i holds query token i's scores for
// head h, column j is the key position inside i's own sequence. Entries with
// j beyond i's position are unused and kept at zero.
struct Segments {
  std::vector<int> offsets;  // size = sequences + 1, offsets.front() == 0

  static Segments single(int length);
  static Segments from_lengths(std::span<const int> lengths);

  int count() const { return static_cast<int>(offsets.size()) - 1; }
  int tokens() const { return offsets.back(); }
  int length(int s) const { return offsets[s + 1] - offsets[s]; }
  int max_length() const;
  std::vector<int> positions() const;  // position of every token within its sequence
};

Var attention_scores(Var q, Var k, const Segments& segs, int n_heads, double scale);
Var causal_softmax(Var scores, const Segments& segs, int n_heads);
Var attention_mix(Var probs, Var v, const Segments& segs, int n_heads);

}  // namespace adrl::ad
