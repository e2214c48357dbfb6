#include "adrl/numerics/autodiff.hpp"

#include "adrl/numerics/prob.hpp"

#include <algorithm>
#include <numbers>

namespace adrl::ad {

const Matrix& Var::value() const { return tape->value(*this); }

double Var::scalar() const {
  const Matrix& v = value();
  require(v.rows() == 1 && v.cols() == 1, "Var::scalar on a non-scalar node");
  return v(0, 0);
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Matrix value) {
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Tape::reference(const Matrix& value) {
  Node n;
  n.ref = &value;
  return push(std::move(n));
}

Var Tape::parameter(const Matrix& value) {
  Node n;
  n.ref = &value;
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::variable(Matrix value) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn) {
  Node n;
  n.owned = std::move(value);
  for (const Var& in : inputs) {
    if (in.valid() && nodes_[in.id].requires_grad) {
      n.requires_grad = true;
      break;
    }
  }
  if (n.requires_grad) {
    n.backward = std::move(fn);
  }
  return push(std::move(n));
}

const Matrix& Tape::value(Var v) const {
  const Node& n = nodes_.at(v.id);
  return n.ref != nullptr ? *n.ref : n.owned;
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.size() == 0) {
    return Matrix::Zero(value(v).rows(), value(v).cols());
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  require(loss.tape == this, "backward: loss belongs to another tape");
  const Matrix& lv = value(loss);
  require(lv.rows() == 1 && lv.cols() == 1,
          "backward: loss must be a scalar, got " + std::to_string(lv.rows()) + "x" + std::to_string(lv.cols()));
  for (Node& n : nodes_) {
    n.grad.resize(0, 0);
  }
  if (!nodes_[loss.id].requires_grad) {
    return;
  }
  nodes_[loss.id].grad = Matrix::Ones(1, 1);
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.backward && n.grad.size() != 0) {
      n.backward(*this, n.grad);
    }
  }
}

// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  require(a.cols() == b.rows(), "matmul: shape mismatch " + std::to_string(a.rows()) + "x" +
                                    std::to_string(a.cols()) + " * " + std::to_string(b.rows()) + "x" +
                                    std::to_string(b.cols()));
  Matrix out(a.rows(), b.cols());
  out.noalias() = a.value() * b.value();
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a)) {
      Matrix ga(g.rows(), b.rows());
      ga.noalias() = g * tp.value(b).transpose();
      tp.accumulate(a, ga);
    }
    if (tp.requires_grad(b)) {
      Matrix gb(a.cols(), g.cols());
      gb.noalias() = tp.value(a).transpose() * g;
      tp.accumulate(b, gb);
    }
  });
}

Var add(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  return a.tape->record(a.value() + b.value(), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  return a.tape->record(a.value() - b.value(), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, -g);
  });
}

Var scale(Var a, double s) {
  return a.tape->record(a.value() * s, {a}, [a, s](Tape& tp, const Matrix& g) { tp.accumulate(a, g * s); });
}

Var mul(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  Matrix out = a.value().cwiseProduct(b.value());
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a)) {
      tp.accumulate(a, Matrix(g.cwiseProduct(tp.value(b))));
    }
    if (tp.requires_grad(b)) {
      tp.accumulate(b, Matrix(g.cwiseProduct(tp.value(a))));
    }
  });
}

Var add_row(Var a, Var row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: bias shape mismatch");
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return a.tape->record(std::move(out), {a, row}, [a, row](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    if (tp.requires_grad(row)) {
      tp.accumulate(row, Matrix(g.colwise().sum()));
    }
  });
}

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Var gelu(Var a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    out.data()[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  }
  return a.tape->record(std::move(out), {a}, [a](Tape& tp, const Matrix& g) {
    const Matrix& xv = tp.value(a);
    Matrix gx(xv.rows(), xv.cols());
    for (Eigen::Index i = 0; i < xv.size(); ++i) {
      const double v = xv.data()[i];
      const double th = std::tanh(kGeluC * (v + kGeluA * v * v * v));
      const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      gx.data()[i] = g.data()[i] * d;
    }
    tp.accumulate(a, gx);
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Matrix& xv = x.value();
  const Eigen::Index n = xv.rows();
  const Eigen::Index d = xv.cols();
  require(gain.rows() == 1 && gain.cols() == d && bias.rows() == 1 && bias.cols() == d,
          "layer_norm: parameter shape mismatch");
  Matrix xhat(n, d);
  Vector inv_std(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * inv_std[r];
  }
  Matrix out = xhat.array().rowwise() * gain.value().row(0).array();
  out.rowwise() += bias.value().row(0);
  return x.tape->record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp, const Matrix& g) {
        if (tp.requires_grad(bias)) {
          tp.accumulate(bias, Matrix(g.colwise().sum()));
        }
        if (tp.requires_grad(gain)) {
          tp.accumulate(gain, Matrix((g.array() * xhat.array()).colwise().sum()));
        }
        if (tp.requires_grad(x)) {
          const Matrix gxhat = g.array().rowwise() * tp.value(gain).row(0).array();
          Matrix gx(gxhat.rows(), gxhat.cols());
          for (Eigen::Index r = 0; r < gxhat.rows(); ++r) {
            const double m1 = gxhat.row(r).mean();
            const double m2 = (gxhat.row(r).array() * xhat.row(r).array()).mean();
            gx.row(r) = inv_std[r] * (gxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
          }
          tp.accumulate(x, gx);
        }
      });
}

Var sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape->record(std::move(out), {a}, [a](Tape& tp, const Matrix& g) {
    tp.accumulate(a, Matrix::Constant(tp.value(a).rows(), tp.value(a).cols(), g(0, 0)));
  });
}

Var embedding(Var table, std::span<const int> ids) {
  const Matrix& tv = table.value();
  Matrix out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < tv.rows(), "embedding: id " + std::to_string(ids[i]) + " out of range");
    out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return table.tape->record(std::move(out), {table}, [table, idv = std::move(idv)](Tape& tp, const Matrix& g) {
    Matrix gt = Matrix::Zero(tp.value(table).rows(), tp.value(table).cols());
    for (std::size_t i = 0; i < idv.size(); ++i) {
      gt.row(idv[i]) += g.row(static_cast<Eigen::Index>(i));
    }
    tp.accumulate(table, gt);
  });
}

Var select_rows(Var x, std::span<const int> rows) {
  const Matrix& xv = x.value();
  Matrix out(static_cast<Eigen::Index>(rows.size()), xv.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < xv.rows(), "select_rows: row out of range");
    out.row(static_cast<Eigen::Index>(i)) = xv.row(rows[i]);
  }
  std::vector<int> rv(rows.begin(), rows.end());
  return x.tape->record(std::move(out), {x}, [x, rv = std::move(rv)](Tape& tp, const Matrix& g) {
    Matrix gx = Matrix::Zero(tp.value(x).rows(), tp.value(x).cols());
    for (std::size_t i = 0; i < rv.size(); ++i) {
      gx.row(rv[i]) += g.row(static_cast<Eigen::Index>(i));
    }
    tp.accumulate(x, gx);
  });
}

Var slice_cols(Var x, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= x.cols(), "slice_cols: range out of bounds");
  Matrix out = x.value().middleCols(start, count);
  return x.tape->record(std::move(out), {x}, [x, start, count](Tape& tp, const Matrix& g) {
    Matrix gx = Matrix::Zero(tp.value(x).rows(), tp.value(x).cols());
    gx.middleCols(start, count) = g;
    tp.accumulate(x, gx);
  });
}

Var pick(Var x, Eigen::Index row, Eigen::Index col) {
  require(row >= 0 && row < x.rows() && col >= 0 && col < x.cols(), "pick: index out of range");
  Matrix out(1, 1);
  out(0, 0) = x.value()(row, col);
  return x.tape->record(std::move(out), {x}, [x, row, col](Tape& tp, const Matrix& g) {
    Matrix gx = Matrix::Zero(tp.value(x).rows(), tp.value(x).cols());
    gx(row, col) = g(0, 0);
    tp.accumulate(x, gx);
  });
}

Var replace_rows(Var x, std::span<const int> rows, Var z) {
  require(z.rows() == 1 && z.cols() == x.cols(), "replace_rows: replacement shape mismatch");
  Matrix out = x.value();
  for (int r : rows) {
    require(r >= 0 && r < out.rows(), "replace_rows: row out of range");
    out.row(r) = z.value().row(0);
  }
  std::vector<int> rv(rows.begin(), rows.end());
  return x.tape->record(std::move(out), {x, z}, [x, z, rv = std::move(rv)](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(x)) {
      Matrix gx = g;
      for (int r : rv) {
        gx.row(r).setZero();
      }
      tp.accumulate(x, gx);
    }
    if (tp.requires_grad(z)) {
      Matrix gz = Matrix::Zero(1, g.cols());
      for (int r : rv) {
        gz.row(0) += g.row(r);
      }
      tp.accumulate(z, gz);
    }
  });
}

Var add_to_rows(Var x, std::span<const int> rows, Var z) {
  require(z.rows() == 1 && z.cols() == x.cols(), "add_to_rows: shape mismatch");
  Matrix out = x.value();
  for (int r : rows) {
    require(r >= 0 && r < out.rows(), "add_to_rows: row out of range");
    out.row(r) += z.value().row(0);
  }
  std::vector<int> rv(rows.begin(), rows.end());
  return x.tape->record(std::move(out), {x, z}, [x, z, rv = std::move(rv)](Tape& tp, const Matrix& g) {
    tp.accumulate(x, g);
    if (tp.requires_grad(z)) {
      Matrix gz = Matrix::Zero(1, g.cols());
      for (int r : rv) {
        gz.row(0) += g.row(r);
      }
      tp.accumulate(z, gz);
    }
  });
}

Var assign_rows(Var x, std::span<const int> rows, const Matrix& values) {
  require(values.rows() == static_cast<Eigen::Index>(rows.size()) && values.cols() == x.cols(),
          "assign_rows: value shape mismatch");
  Matrix out = x.value();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < out.rows(), "assign_rows: row out of range");
    out.row(rows[i]) = values.row(static_cast<Eigen::Index>(i));
  }
  std::vector<int> rv(rows.begin(), rows.end());
  return x.tape->record(std::move(out), {x}, [x, rv = std::move(rv)](Tape& tp, const Matrix& g) {
    Matrix gx = g;
    for (int r : rv) {
      gx.row(r).setZero();
    }
    tp.accumulate(x, gx);
  });
}

Var assign_entries(Var x, std::span<const std::pair<int, int>> entries, std::span<const double> values) {
  require(entries.size() == values.size(), "assign_entries: entry/value count mismatch");
  Matrix out = x.value();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto [r, c] = entries[i];
    require(r >= 0 && r < out.rows() && c >= 0 && c < out.cols(), "assign_entries: entry out of range");
    out(r, c) = values[i];
  }
  std::vector<std::pair<int, int>> ev(entries.begin(), entries.end());
  return x.tape->record(std::move(out), {x}, [x, ev = std::move(ev)](Tape& tp, const Matrix& g) {
    Matrix gx = g;
    for (const auto& [r, c] : ev) {
      gx(r, c) = 0.0;
    }
    tp.accumulate(x, gx);
  });
}

Var softmax_rows(Var x) {
  const Matrix& xv = x.value();
  Matrix out(xv.rows(), xv.cols());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double m = xv.row(r).maxCoeff();
    out.row(r) = (xv.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  Matrix y = out;
  return x.tape->record(std::move(out), {x}, [x, y = std::move(y)](Tape& tp, const Matrix& g) {
    Matrix gx(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double dot = (g.row(r).array() * y.row(r).array()).sum();
      gx.row(r) = y.row(r).array() * (g.row(r).array() - dot);
    }
    tp.accumulate(x, gx);
  });
}

Var log_softmax_rows(Var x) {
  const Matrix& xv = x.value();
  Matrix out(xv.rows(), xv.cols());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double m = xv.row(r).maxCoeff();
    const double lse = m + std::log((xv.row(r).array() - m).exp().sum());
    out.row(r) = xv.row(r).array() - lse;
  }
  Matrix y = out;
  return x.tape->record(std::move(out), {x}, [x, y = std::move(y)](Tape& tp, const Matrix& g) {
    Matrix gx(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double gs = g.row(r).sum();
      gx.row(r) = g.row(r).array() - y.row(r).array().exp() * gs;
    }
    tp.accumulate(x, gx);
  });
}

Var kl_rows(Var p, Var q) {
  const Matrix& pv = p.value();
  const Matrix& qv = q.value();
  require(pv.rows() == qv.rows() && pv.cols() == qv.cols(), "kl_rows: shape mismatch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < pv.size(); ++i) {
    const double pi = pv.data()[i];
    if (pi > 0.0) {
      total += pi * (std::log(pi) - std::log(std::max(qv.data()[i], kKlFloor)));
    }
  }
  Matrix out(1, 1);
  out(0, 0) = total;
  return p.tape->record(std::move(out), {p, q}, [p, q](Tape& tp, const Matrix& g) {
    const Matrix& pv2 = tp.value(p);
    const Matrix& qv2 = tp.value(q);
    const double s = g(0, 0);
    if (tp.requires_grad(q)) {
      Matrix gq = Matrix::Zero(qv2.rows(), qv2.cols());
      for (Eigen::Index i = 0; i < qv2.size(); ++i) {
        if (pv2.data()[i] > 0.0 && qv2.data()[i] > kKlFloor) {
          gq.data()[i] = -s * pv2.data()[i] / qv2.data()[i];
        }
      }
      tp.accumulate(q, gq);
    }
    if (tp.requires_grad(p)) {
      Matrix gp = Matrix::Zero(pv2.rows(), pv2.cols());
      for (Eigen::Index i = 0; i < pv2.size(); ++i) {
        const double pi = pv2.data()[i];
        if (pi > 0.0) {
          gp.data()[i] = s * (std::log(pi) - std::log(std::max(qv2.data()[i], kKlFloor)) + 1.0);
        }
      }
      tp.accumulate(p, gp);
    }
  });
}

Var cross_entropy(Var logits, std::span<const int> targets) {
  const Matrix& lv = logits.value();
  require(static_cast<Eigen::Index>(targets.size()) == lv.rows(), "cross_entropy: one target per row required");
  Matrix probs(lv.rows(), lv.cols());
  double total = 0.0;
  int count = 0;
  for (Eigen::Index r = 0; r < lv.rows(); ++r) {
    const double m = lv.row(r).maxCoeff();
    probs.row(r) = (lv.row(r).array() - m).exp();
    const double z = probs.row(r).sum();
    probs.row(r) /= z;
    const int t = targets[static_cast<std::size_t>(r)];
    if (t >= 0) {
      require(t < lv.cols(), "cross_entropy: target out of range");
      total -= lv(r, t) - m - std::log(z);
      ++count;
    }
  }
  require(count > 0, "cross_entropy: no valid targets");
  Matrix out(1, 1);
  out(0, 0) = total / count;
  std::vector<int> tv(targets.begin(), targets.end());
  return logits.tape->record(
      std::move(out), {logits},
      [logits, probs = std::move(probs), tv = std::move(tv), count](Tape& tp, const Matrix& g) {
        Matrix gl = probs * (g(0, 0) / count);
        for (Eigen::Index r = 0; r < gl.rows(); ++r) {
          const int t = tv[static_cast<std::size_t>(r)];
          if (t < 0) {
            gl.row(r).setZero();
          } else {
            gl(r, t) -= g(0, 0) / count;
          }
        }
        tp.accumulate(logits, gl);
      });
}

// ---------------------------------------------------------------------------

Segments Segments::single(int length) { return Segments{{0, length}}; }

Segments Segments::from_lengths(std::span<const int> lengths) {
  Segments s;
  s.offsets.reserve(lengths.size() + 1);
  s.offsets.push_back(0);
  for (int l : lengths) {
    require(l >= 1, "Segments: empty sequence");
    s.offsets.push_back(s.offsets.back() + l);
  }
  return s;
}

int Segments::max_length() const {
  int m = 0;
  for (int s = 0; s < count(); ++s) {
    m = std::max(m, length(s));
  }
  return m;
}

std::vector<int> Segments::positions() const {
  std::vector<int> pos(static_cast<std::size_t>(tokens()));
  for (int s = 0; s < count(); ++s) {
    for (int i = offsets[s]; i < offsets[s + 1]; ++i) {
      pos[static_cast<std::size_t>(i)] = i - offsets[s];
    }
  }
  return pos;
}

Var attention_scores(Var q, Var k, const Segments& segs, int n_heads, double scale) {
  const Matrix& qv = q.value();
  const Matrix& kv = k.value();
  const int n = segs.tokens();
  require(qv.rows() == n && kv.rows() == n && qv.cols() == kv.cols(), "attention_scores: shape mismatch");
  require(qv.cols() % n_heads == 0, "attention_scores: width not divisible by head count");
  const Eigen::Index dh = qv.cols() / n_heads;
  const int tmax = segs.max_length();
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(n_heads) * n, tmax);
  for (int s = 0; s < segs.count(); ++s) {
    const int o = segs.offsets[s];
    const int len = segs.length(s);
    for (int h = 0; h < n_heads; ++h) {
      Matrix sc(len, len);
      sc.noalias() = qv.block(o, h * dh, len, dh) * kv.block(o, h * dh, len, dh).transpose();
      for (int i = 0; i < len; ++i) {
        out.row(static_cast<Eigen::Index>(h) * n + o + i).head(i + 1) = scale * sc.row(i).head(i + 1);
      }
    }
  }
  return q.tape->record(std::move(out), {q, k}, [q, k, segs, n_heads, scale, dh, n](Tape& tp, const Matrix& g) {
    const Matrix& qv2 = tp.value(q);
    const Matrix& kv2 = tp.value(k);
    Matrix gq = Matrix::Zero(qv2.rows(), qv2.cols());
    Matrix gk = Matrix::Zero(kv2.rows(), kv2.cols());
    for (int s = 0; s < segs.count(); ++s) {
      const int o = segs.offsets[s];
      const int len = segs.length(s);
      for (int h = 0; h < n_heads; ++h) {
        Matrix gs = Matrix::Zero(len, len);
        for (int i = 0; i < len; ++i) {
          gs.row(i).head(i + 1) = scale * g.row(static_cast<Eigen::Index>(h) * n + o + i).head(i + 1);
        }
        gq.block(o, h * dh, len, dh).noalias() += gs * kv2.block(o, h * dh, len, dh);
        gk.block(o, h * dh, len, dh).noalias() += gs.transpose() * qv2.block(o, h * dh, len, dh);
      }
    }
    tp.accumulate(q, gq);
    tp.accumulate(k, gk);
  });
}

Var causal_softmax(Var scores, const Segments& segs, int n_heads) {
  const Matrix& sv = scores.value();
  const int n = segs.tokens();
  require(sv.rows() == static_cast<Eigen::Index>(n_heads) * n, "causal_softmax: row count mismatch");
  const std::vector<int> pos = segs.positions();
  Matrix out = Matrix::Zero(sv.rows(), sv.cols());
  for (Eigen::Index r = 0; r < sv.rows(); ++r) {
    const int width = pos[static_cast<std::size_t>(r % n)] + 1;
    auto row = sv.row(r).head(width);
    const double m = row.maxCoeff();
    out.row(r).head(width) = (row.array() - m).exp();
    out.row(r).head(width) /= out.row(r).head(width).sum();
  }
  Matrix y = out;
  return scores.tape->record(std::move(out), {scores},
                             [scores, y = std::move(y), pos, n](Tape& tp, const Matrix& g) {
                               Matrix gx = Matrix::Zero(y.rows(), y.cols());
                               for (Eigen::Index r = 0; r < y.rows(); ++r) {
                                 const int width = pos[static_cast<std::size_t>(r % n)] + 1;
                                 const double dot =
                                     (g.row(r).head(width).array() * y.row(r).head(width).array()).sum();
                                 gx.row(r).head(width) =
                                     y.row(r).head(width).array() * (g.row(r).head(width).array() - dot);
                               }
                               tp.accumulate(scores, gx);
                             });
}

Var attention_mix(Var probs, Var v, const Segments& segs, int n_heads) {
  const Matrix& pv = probs.value();
  const Matrix& vv = v.value();
  const int n = segs.tokens();
  require(vv.rows() == n && pv.rows() == static_cast<Eigen::Index>(n_heads) * n, "attention_mix: shape mismatch");
  const Eigen::Index dh = vv.cols() / n_heads;
  Matrix out = Matrix::Zero(n, vv.cols());
  for (int s = 0; s < segs.count(); ++s) {
    const int o = segs.offsets[s];
    const int len = segs.length(s);
    for (int h = 0; h < n_heads; ++h) {
      out.block(o, h * dh, len, dh).noalias() =
          pv.block(static_cast<Eigen::Index>(h) * n + o, 0, len, len) * vv.block(o, h * dh, len, dh);
    }
  }
  return probs.tape->record(std::move(out), {probs, v}, [probs, v, segs, n_heads, n, dh](Tape& tp, const Matrix& g) {
    const Matrix& pv2 = tp.value(probs);
    const Matrix& vv2 = tp.value(v);
    if (tp.requires_grad(probs)) {
      Matrix gp = Matrix::Zero(pv2.rows(), pv2.cols());
      for (int s = 0; s < segs.count(); ++s) {
        const int o = segs.offsets[s];
        const int len = segs.length(s);
        for (int h = 0; h < n_heads; ++h) {
          Matrix full(len, len);
          full.noalias() = g.block(o, h * dh, len, dh) * vv2.block(o, h * dh, len, dh).transpose();
          for (int i = 0; i < len; ++i) {
            gp.row(static_cast<Eigen::Index>(h) * n + o + i).head(i + 1) = full.row(i).head(i + 1);
          }
        }
      }
      tp.accumulate(probs, gp);
    }
    if (tp.requires_grad(v)) {
      Matrix gv = Matrix::Zero(vv2.rows(), vv2.cols());
      for (int s = 0; s < segs.count(); ++s) {
        const int o = segs.offsets[s];
        const int len = segs.length(s);
        for (int h = 0; h < n_heads; ++h) {
          gv.block(o, h * dh, len, dh).noalias() +=
              pv2.block(static_cast<Eigen::Index>(h) * n + o, 0, len, len).transpose() * g.block(o, h * dh, len, dh);
        }
      }
      tp.accumulate(v, gv);
    }
  });
}

}  // namespace adrl::ad
