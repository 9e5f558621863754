#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "scbch/ndmath/matrix.hpp"

namespace scbch::nd {

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  const Matrix& value() const;
  const Matrix& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode tape. Nodes are appended in evaluation order, so walking the
// node list backwards is a reverse topological order.
//
// backward() clears every accumulator before the sweep: calling it twice on
// the same output yields identical gradients.
class Tape {
 public:
  // Receives the node's own value and its accumulated gradient.
  using BackwardFn =
      std::function<void(Tape&, const Matrix& out_value, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var variable(Matrix value) { return push(std::move(value), true, {}); }
  Var constant(Matrix value) { return push(std::move(value), false, {}); }

  // Registers an op result. The node requires a gradient iff any parent does;
  // otherwise the backward closure is dropped.
  Var record(Matrix value, std::initializer_list<Var> parents, BackwardFn fn) {
    bool needs = false;
    for (const Var& p : parents) {
      check_owner(p);
      needs = needs || nodes_[p.id()].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
  }

  void backward(Var output) {
    check_owner(output);
    const Matrix& out = nodes_[output.id()].value;
    if (out.rows() != 1 || out.cols() != 1) {
      throw ContractError("backward: output must be 1x1, got " + out.shape_str());
    }
    for (Node& n : nodes_) {
      if (n.requires_grad) {
        n.grad = Matrix(n.value.rows(), n.value.cols());
      } else {
        n.grad = Matrix();
      }
    }
    backward_done_ = true;
    if (!nodes_[output.id()].requires_grad) return;
    nodes_[output.id()].grad[0] = 1.0;
    for (std::size_t i = output.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward) n.backward(*this, n.value, n.grad);
    }
  }

  bool needs_grad(Var v) const { return nodes_[v.id()].requires_grad; }

  void accumulate(Var v, const Matrix& g) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return;
    require_same_shape(n.grad, g, "accumulate");
    for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
  }

  const Matrix& value(Var v) const { return nodes_[v.id()].value; }

  // Zero-shaped gradient for nodes that never needed one.
  const Matrix& grad(Var v) const {
    if (!backward_done_) throw ContractError("grad: backward() has not run");
    return nodes_[v.id()].grad;
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Matrix value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Matrix(), requires_grad, std::move(fn)});
    return Var(this, nodes_.size() - 1);
  }

  void check_owner(Var v) const {
    if (v.tape() != this || v.id() >= nodes_.size()) {
      throw ContractError("Var does not belong to this tape");
    }
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

inline const Matrix& Var::value() const { return tape_->value(*this); }
inline const Matrix& Var::grad() const { return tape_->grad(*this); }

inline const Matrix& value_of(const Matrix& m) { return m; }
inline const Matrix& value_of(const Var& v) { return v.value(); }

namespace detail {

inline Var lift(Tape& t, const Matrix& m) { return t.constant(m); }

// local(input, output, out_grad) -> gradient w.r.t. the single operand.
template <class F>
Var unary(Var a, Matrix out, F local) {
  Tape& t = *a.tape();
  return t.record(std::move(out), {a},
                  [a, local](Tape& tp, const Matrix& y, const Matrix& g) {
                    tp.accumulate(a, local(a.value(), y, g));
                  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Taped ops. Same names as the pure versions so model and loss code can be
// written once as templates over Matrix / Var.
// ---------------------------------------------------------------------------

inline Var matmul(Var a, Var b) {
  Tape& t = *a.tape();
  return t.record(matmul(a.value(), b.value()), {a, b},
                  [a, b](Tape& tp, const Matrix&, const Matrix& g) {
                    if (tp.needs_grad(a)) tp.accumulate(a, matmul(g, transpose(b.value())));
                    if (tp.needs_grad(b)) tp.accumulate(b, matmul(transpose(a.value()), g));
                  });
}

inline Var transpose(Var a) {
  return detail::unary(a, transpose(a.value()),
                       [](const Matrix&, const Matrix&, const Matrix& g) {
                         return transpose(g);
                       });
}

inline Var add(Var a, Var b) {
  Tape& t = *a.tape();
  return t.record(add(a.value(), b.value()), {a, b},
                  [a, b](Tape& tp, const Matrix&, const Matrix& g) {
                    tp.accumulate(a, g);
                    tp.accumulate(b, g);
                  });
}

inline Var sub(Var a, Var b) {
  Tape& t = *a.tape();
  return t.record(sub(a.value(), b.value()), {a, b},
                  [a, b](Tape& tp, const Matrix&, const Matrix& g) {
                    tp.accumulate(a, g);
                    if (tp.needs_grad(b)) tp.accumulate(b, scale(g, -1.0));
                  });
}

inline Var mul(Var a, Var b) {
  Tape& t = *a.tape();
  return t.record(mul(a.value(), b.value()), {a, b},
                  [a, b](Tape& tp, const Matrix&, const Matrix& g) {
                    if (tp.needs_grad(a)) tp.accumulate(a, mul(g, b.value()));
                    if (tp.needs_grad(b)) tp.accumulate(b, mul(g, a.value()));
                  });
}

inline Var add(Var a, const Matrix& b) { return add(a, detail::lift(*a.tape(), b)); }
inline Var sub(Var a, const Matrix& b) { return sub(a, detail::lift(*a.tape(), b)); }
inline Var sub(const Matrix& a, Var b) { return sub(detail::lift(*b.tape(), a), b); }
inline Var mul(Var a, const Matrix& b) { return mul(a, detail::lift(*a.tape(), b)); }
inline Var mul(const Matrix& a, Var b) { return mul(detail::lift(*b.tape(), a), b); }

inline Var scale(Var a, double s) {
  return detail::unary(a, scale(a.value(), s),
                       [s](const Matrix&, const Matrix&, const Matrix& g) {
                         return scale(g, s);
                       });
}

inline Var add_scalar(Var a, double s) {
  return detail::unary(a, add_scalar(a.value(), s),
                       [](const Matrix&, const Matrix&, const Matrix& g) { return g; });
}

inline Var tanh(Var a) {
  return detail::unary(a, tanh(a.value()),
                       [](const Matrix&, const Matrix& y, const Matrix& g) {
                         return zip(y, g, "tanh'", [](double yv, double gv) {
                           return gv * (1.0 - yv * yv);
                         });
                       });
}

// Derivative 0 at x == 0.
inline Var relu(Var a) {
  return detail::unary(a, relu(a.value()),
                       [](const Matrix& x, const Matrix&, const Matrix& g) {
                         return zip(x, g, "relu'", [](double xv, double gv) {
                           return xv > 0.0 ? gv : 0.0;
                         });
                       });
}

inline Var sigmoid(Var a) {
  return detail::unary(a, sigmoid(a.value()),
                       [](const Matrix&, const Matrix& y, const Matrix& g) {
                         return zip(y, g, "sigmoid'", [](double yv, double gv) {
                           return gv * yv * (1.0 - yv);
                         });
                       });
}

inline Var exp(Var a) {
  return detail::unary(a, exp(a.value()),
                       [](const Matrix&, const Matrix& y, const Matrix& g) {
                         return mul(y, g);
                       });
}

inline Var log(Var a) {
  return detail::unary(a, log(a.value()),
                       [](const Matrix& x, const Matrix&, const Matrix& g) {
                         return zip(x, g, "log'", [](double xv, double gv) { return gv / xv; });
                       });
}

// Subgradient 0 at x == 0.
inline Var abs(Var a) {
  return detail::unary(a, abs(a.value()),
                       [](const Matrix& x, const Matrix&, const Matrix& g) {
                         return zip(x, g, "abs'", [](double xv, double gv) {
                           return xv > 0.0 ? gv : (xv < 0.0 ? -gv : 0.0);
                         });
                       });
}

// Gradient passes where lo <= x <= hi, zero where clipped.
inline Var clamp(Var a, double lo, double hi) {
  return detail::unary(a, clamp(a.value(), lo, hi),
                       [lo, hi](const Matrix& x, const Matrix&, const Matrix& g) {
                         return zip(x, g, "clamp'", [lo, hi](double xv, double gv) {
                           return (xv >= lo && xv <= hi) ? gv : 0.0;
                         });
                       });
}

inline Var add_row(Var a, Var r) {
  Tape& t = *a.tape();
  return t.record(add_row(a.value(), r.value()), {a, r},
                  [a, r](Tape& tp, const Matrix&, const Matrix& g) {
                    tp.accumulate(a, g);
                    if (!tp.needs_grad(r)) return;
                    Matrix gr(1, g.cols());
                    for (std::size_t i = 0; i < g.rows(); ++i)
                      for (std::size_t j = 0; j < g.cols(); ++j) gr[j] += g(i, j);
                    tp.accumulate(r, gr);
                  });
}

inline Var add_col(Var a, Var c) {
  Tape& t = *a.tape();
  return t.record(add_col(a.value(), c.value()), {a, c},
                  [a, c](Tape& tp, const Matrix&, const Matrix& g) {
                    tp.accumulate(a, g);
                    if (tp.needs_grad(c)) tp.accumulate(c, row_sum(g));
                  });
}

inline Var diag(Var a) {
  return detail::unary(a, diag(a.value()),
                       [](const Matrix& x, const Matrix&, const Matrix& g) {
                         Matrix ga(x.rows(), x.cols());
                         for (std::size_t i = 0; i < x.rows(); ++i) ga(i, i) = g[i];
                         return ga;
                       });
}

inline Var sum(Var a) {
  return detail::unary(a, sum(a.value()),
                       [](const Matrix& x, const Matrix&, const Matrix& g) {
                         return Matrix(x.rows(), x.cols(), g[0]);
                       });
}

inline Var mean(Var a) {
  return detail::unary(a, mean(a.value()),
                       [](const Matrix& x, const Matrix&, const Matrix& g) {
                         return Matrix(x.rows(), x.cols(), g[0] / static_cast<double>(x.size()));
                       });
}

inline Var row_sum(Var a) {
  return detail::unary(a, row_sum(a.value()),
                       [](const Matrix& x, const Matrix&, const Matrix& g) {
                         Matrix ga(x.rows(), x.cols());
                         for (std::size_t i = 0; i < x.rows(); ++i)
                           for (std::size_t j = 0; j < x.cols(); ++j) ga(i, j) = g[i];
                         return ga;
                       });
}

inline Var row_mean(Var a) {
  return scale(row_sum(a), 1.0 / static_cast<double>(a.cols()));
}

}  // namespace scbch::nd
