#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <deque>
#include <vector>

#include "endx/common.hpp"

namespace endx {

/// All tensors are dense row-major matrices. Vectors are 1xN or Nx1.
template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Handle into a Tape. Cheap to copy; only valid for the tape that made it.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

/// Reverse-mode autodiff tape. Every operation appends a node holding the
/// forward value and a closure that scatters the node's gradient into its
/// inputs. backward() walks nodes in reverse creation order, which is a
/// valid topological order because inputs always precede their consumers.
template <typename S>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, int)>;

    struct Node {
        Mat<S> value;
        Mat<S> grad;  // allocated lazily during backward
        std::vector<int> inputs;
        BackwardFn backward;
        const char* op = "leaf";
        bool needs_grad = false;
    };

    /// Trainable leaf (needs_grad=true) or plain input (needs_grad=false).
    Var leaf(Mat<S> value, bool needs_grad) {
        return push("leaf", std::move(value), {}, nullptr, needs_grad);
    }

    Var constant(Mat<S> value) { return leaf(std::move(value), false); }

    Var scalar(S v) {
        Mat<S> m(1, 1);
        m(0, 0) = v;
        return constant(std::move(m));
    }

    Var push(const char* op, Mat<S> value, std::vector<int> inputs,
             BackwardFn fn, bool force_needs_grad = false) {
        check_finite(value, op);
        bool ng = force_needs_grad;
        for (int i : inputs) ng = ng || node(i).needs_grad;
        nodes_.push_back(Node{std::move(value), Mat<S>(), std::move(inputs),
                              std::move(fn), op, ng});
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    const Node& node(int id) const { return at(id); }
    const Mat<S>& value(Var v) const { return at(v.id).value; }
    bool needs_grad(Var v) const { return at(v.id).needs_grad; }
    std::size_t size() const { return nodes_.size(); }

    /// Gradient of the last backward() root w.r.t. v (zeros if untouched).
    const Mat<S>& grad(Var v) {
        Node& n = mutable_at(v.id);
        if (n.grad.size() == 0)
            n.grad = Mat<S>::Zero(n.value.rows(), n.value.cols());
        return n.grad;
    }

    /// Adds g into the gradient slot of node id (no-op for nodes that do not
    /// require gradients, so backward closures can stay unconditional).
    template <typename Expr>
    void accumulate(int id, const Expr& g) {
        Node& n = mutable_at(id);
        if (!n.needs_grad) return;
        if (n.grad.size() == 0)
            n.grad = Mat<S>::Zero(n.value.rows(), n.value.cols());
        n.grad += g;
    }

    /// Reverse sweep from a scalar root. Resets gradients of every node that
    /// participates, seeds d(root)/d(root) = 1, then applies each node's
    /// backward closure in reverse creation order.
    void backward(Var root) {
        const Node& r = at(root.id);
        if (r.value.rows() != 1 || r.value.cols() != 1)
            fail("backward: root must be a 1x1 scalar, got " + shape_str(r.value));
        if (!r.needs_grad)
            fail("backward: root does not depend on any trainable leaf");

        std::vector<char> reachable(nodes_.size(), 0);
        std::vector<int> stack{root.id};
        reachable[static_cast<std::size_t>(root.id)] = 1;
        while (!stack.empty()) {
            int id = stack.back();
            stack.pop_back();
            for (int in : nodes_[static_cast<std::size_t>(id)].inputs) {
                auto u = static_cast<std::size_t>(in);
                if (!reachable[u] && nodes_[u].needs_grad) {
                    reachable[u] = 1;
                    stack.push_back(in);
                }
            }
        }

        for (std::size_t i = 0; i < nodes_.size(); ++i)
            if (reachable[i]) nodes_[i].grad.setZero(nodes_[i].value.rows(), nodes_[i].value.cols());
        mutable_at(root.id).grad(0, 0) = S(1);

        for (int id = root.id; id >= 0; --id) {
            auto u = static_cast<std::size_t>(id);
            if (!reachable[u] || !nodes_[u].backward) continue;
            nodes_[u].backward(*this, id);
        }

        for (std::size_t i = 0; i < nodes_.size(); ++i)
            if (reachable[i] && !nodes_[i].grad.allFinite())
                fail(std::string("non-finite gradient at op '") + nodes_[i].op + "'");
    }

    static void check_finite(const Mat<S>& m, const char* op) {
        if (!m.allFinite())
            fail(std::string("non-finite value produced by op '") + op + "'");
    }

    static std::string shape_str(const Mat<S>& m) {
        return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
    }

private:
    const Node& at(int id) const {
        if (id < 0 || id >= static_cast<int>(nodes_.size()))
            fail("tape: invalid var id " + std::to_string(id));
        return nodes_[static_cast<std::size_t>(id)];
    }
    Node& mutable_at(int id) {
        return const_cast<Node&>(at(id));
    }

    // Deque, not vector: ops hold references into node values while pushing
    // follow-up nodes, so element addresses must survive appends.
    std::deque<Node> nodes_;
};

namespace detail {

template <typename S>
void require_same_shape(const Tape<S>& t, Var a, Var b, const char* op) {
    const auto& va = t.value(a);
    const auto& vb = t.value(b);
    if (va.rows() != vb.rows() || va.cols() != vb.cols())
        fail(std::string(op) + ": shape mismatch (" + Tape<S>::shape_str(va) +
             " vs " + Tape<S>::shape_str(vb) + ")");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename S>
Var add(Tape<S>& t, Var a, Var b) {
    detail::require_same_shape(t, a, b, "add");
    Mat<S> y = t.value(a) + t.value(b);
    return t.push("add", std::move(y), {a.id, b.id}, [a, b](Tape<S>& t, int self) {
        const auto& g = t.node(self).grad;
        t.accumulate(a.id, g);
        t.accumulate(b.id, g);
    });
}

template <typename S>
Var sub(Tape<S>& t, Var a, Var b) {
    detail::require_same_shape(t, a, b, "sub");
    Mat<S> y = t.value(a) - t.value(b);
    return t.push("sub", std::move(y), {a.id, b.id}, [a, b](Tape<S>& t, int self) {
        const auto& g = t.node(self).grad;
        t.accumulate(a.id, g);
        t.accumulate(b.id, -g);
    });
}

/// Elementwise (Hadamard) product.
template <typename S>
Var mul(Tape<S>& t, Var a, Var b) {
    detail::require_same_shape(t, a, b, "mul");
    Mat<S> y = t.value(a).cwiseProduct(t.value(b));
    return t.push("mul", std::move(y), {a.id, b.id}, [a, b](Tape<S>& t, int self) {
        const auto& g = t.node(self).grad;
        t.accumulate(a.id, g.cwiseProduct(t.value(b)));
        t.accumulate(b.id, g.cwiseProduct(t.value(a)));
    });
}

template <typename S>
Var scale(Tape<S>& t, Var a, S c) {
    Mat<S> y = t.value(a) * c;
    return t.push("scale", std::move(y), {a.id}, [a, c](Tape<S>& t, int self) {
        t.accumulate(a.id, t.node(self).grad * c);
    });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <typename S>
Var matmul(Tape<S>& t, Var a, Var b) {
    const auto& va = t.value(a);
    const auto& vb = t.value(b);
    if (va.cols() != vb.rows())
        fail("matmul: inner dimensions differ (" + Tape<S>::shape_str(va) +
             " times " + Tape<S>::shape_str(vb) + ")");
    Mat<S> y = va * vb;
    return t.push("matmul", std::move(y), {a.id, b.id}, [a, b](Tape<S>& t, int self) {
        const auto& g = t.node(self).grad;
        t.accumulate(a.id, g * t.value(b).transpose());
        t.accumulate(b.id, t.value(a).transpose() * g);
    });
}

template <typename S>
Var transpose(Tape<S>& t, Var a) {
    Mat<S> y = t.value(a).transpose();
    return t.push("transpose", std::move(y), {a.id}, [a](Tape<S>& t, int self) {
        t.accumulate(a.id, t.node(self).grad.transpose());
    });
}

/// Row-major flatten to a 1 x (rows*cols) row vector.
template <typename S>
Var reshape_to_row(Tape<S>& t, Var a) {
    const auto& va = t.value(a);
    const Eigen::Index r = va.rows(), c = va.cols();
    Mat<S> y = Eigen::Map<const Mat<S>>(va.data(), 1, r * c);
    return t.push("reshape_to_row", std::move(y), {a.id}, [a, r, c](Tape<S>& t, int self) {
        const auto& g = t.node(self).grad;
        t.accumulate(a.id, Eigen::Map<const Mat<S>>(g.data(), r, c));
    });
}

// ---------------------------------------------------------------------------
// Nonlinearities
// ---------------------------------------------------------------------------

template <typename S>
Var relu(Tape<S>& t, Var a) {
    Mat<S> y = t.value(a).cwiseMax(S(0));
    return t.push("relu", std::move(y), {a.id}, [a](Tape<S>& t, int self) {
        const auto& g = t.node(self).grad;
        Mat<S> m = (t.value(a).array() > S(0)).template cast<S>();
        t.accumulate(a.id, g.cwiseProduct(m));
    });
}

template <typename S>
Var tanh_op(Tape<S>& t, Var a) {
    Mat<S> y = t.value(a).array().tanh().matrix();
    return t.push("tanh", std::move(y), {a.id}, [a](Tape<S>& t, int self) {
        const auto& g = t.node(self).grad;
        const auto& y = t.node(self).value;
        Mat<S> d = (S(1) - y.array().square()).matrix();
        t.accumulate(a.id, g.cwiseProduct(d));
    });
}

template <typename S>
Var sigmoid(Tape<S>& t, Var a) {
    const auto& va = t.value(a);
    Mat<S> y(va.rows(), va.cols());
    for (Eigen::Index i = 0; i < va.rows(); ++i)
        for (Eigen::Index j = 0; j < va.cols(); ++j) {
            S x = va(i, j);
            // Branch on sign so exp never overflows.
            y(i, j) = x >= S(0) ? S(1) / (S(1) + std::exp(-x))
                                : std::exp(x) / (S(1) + std::exp(x));
        }
    return t.push("sigmoid", std::move(y), {a.id}, [a](Tape<S>& t, int self) {
        const auto& g = t.node(self).grad;
        const auto& y = t.node(self).value;
        Mat<S> d = (y.array() * (S(1) - y.array())).matrix();
        t.accumulate(a.id, g.cwiseProduct(d));
    });
}

template <typename S>
Var exp_op(Tape<S>& t, Var a) {
    Mat<S> y = t.value(a).array().exp().matrix();
    return t.push("exp", std::move(y), {a.id}, [a](Tape<S>& t, int self) {
        const auto& g = t.node(self).grad;
        t.accumulate(a.id, g.cwiseProduct(t.node(self).value));
    });
}

template <typename S>
Var log_op(Tape<S>& t, Var a) {
    const auto& va = t.value(a);
    if ((va.array() <= S(0)).any())
        fail("log: input must be strictly positive");
    Mat<S> y = va.array().log().matrix();
    return t.push("log", std::move(y), {a.id}, [a](Tape<S>& t, int self) {
        const auto& g = t.node(self).grad;
        t.accumulate(a.id, g.cwiseQuotient(t.value(a)));
    });
}

/// Elementwise max(a, c). Gradient is zero where the floor is active.
template <typename S>
Var clamp_min(Tape<S>& t, Var a, S c) {
    Mat<S> y = t.value(a).cwiseMax(c);
    return t.push("clamp_min", std::move(y), {a.id}, [a, c](Tape<S>& t, int self) {
        const auto& g = t.node(self).grad;
        Mat<S> m = (t.value(a).array() > c).template cast<S>();
        t.accumulate(a.id, g.cwiseProduct(m));
    });
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

/// Row-wise softmax with an optional keep-mask (nonzero = keep). Masked
/// entries get probability exactly 0; a row whose support is empty is an
/// error. Max-subtraction keeps exponents in range.
template <typename S>
Var softmax_rows(Tape<S>& t, Var a, const Mat<S>* mask = nullptr) {
    const auto& x = t.value(a);
    if (mask && (mask->rows() != x.rows() || mask->cols() != x.cols()))
        fail("softmax_rows: mask shape mismatch (" + Tape<S>::shape_str(*mask) +
             " vs " + Tape<S>::shape_str(x) + ")");
    Mat<S> y(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        S m = -std::numeric_limits<S>::infinity();
        for (Eigen::Index j = 0; j < x.cols(); ++j)
            if (!mask || (*mask)(i, j) != S(0)) m = std::max(m, x(i, j));
        if (m == -std::numeric_limits<S>::infinity())
            fail("softmax_rows: empty support in row " + std::to_string(i));
        S sum = S(0);
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            if (!mask || (*mask)(i, j) != S(0)) {
                y(i, j) = std::exp(x(i, j) - m);
                sum += y(i, j);
            } else {
                y(i, j) = S(0);
            }
        }
        for (Eigen::Index j = 0; j < x.cols(); ++j) y(i, j) /= sum;
    }
    // Masked entries have y=0, which also zeroes their gradient, so the
    // backward pass needs no mask.
    return t.push("softmax_rows", std::move(y), {a.id}, [a](Tape<S>& t, int self) {
        const auto& g = t.node(self).grad;
        const auto& y = t.node(self).value;
        Mat<S> gy = g.cwiseProduct(y);
        Mat<S> row_dot = gy.rowwise().sum();  // rows x 1
        Mat<S> d = gy - y.cwiseProduct(row_dot.replicate(1, y.cols()));
        t.accumulate(a.id, d);
    });
}

/// Row-wise log(sum(exp(x))) with max-subtraction; returns rows x 1.
template <typename S>
Var logsumexp_rows(Tape<S>& t, Var a) {
    const auto& x = t.value(a);
    if (x.cols() == 0) fail("logsumexp_rows: empty rows");
    Mat<S> y(x.rows(), 1);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        S m = x.row(i).maxCoeff();
        S sum = S(0);
        for (Eigen::Index j = 0; j < x.cols(); ++j) sum += std::exp(x(i, j) - m);
        y(i, 0) = m + std::log(sum);
    }
    return t.push("logsumexp_rows", std::move(y), {a.id}, [a](Tape<S>& t, int self) {
        const auto& g = t.node(self).grad;   // rows x 1
        const auto& y = t.node(self).value;  // rows x 1
        const auto& x = t.value(a);
        Mat<S> d(x.rows(), x.cols());
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            for (Eigen::Index j = 0; j < x.cols(); ++j)
                d(i, j) = g(i, 0) * std::exp(x(i, j) - y(i, 0));
        t.accumulate(a.id, d);
    });
}

// ---------------------------------------------------------------------------
// Reductions and structure
// ---------------------------------------------------------------------------

/// Main diagonal of a square matrix as rows x 1.
template <typename S>
Var diag_part(Tape<S>& t, Var a) {
    const auto& x = t.value(a);
    if (x.rows() != x.cols())
        fail("diag_part: matrix must be square, got " + Tape<S>::shape_str(x));
    Mat<S> y = x.diagonal();
    return t.push("diag_part", std::move(y), {a.id}, [a](Tape<S>& t, int self) {
        const auto& g = t.node(self).grad;
        Mat<S> d = Mat<S>::Zero(g.rows(), g.rows());
        d.diagonal() = g.col(0);
        t.accumulate(a.id, d);
    });
}

template <typename S>
Var sum_all(Tape<S>& t, Var a) {
    Mat<S> y(1, 1);
    y(0, 0) = t.value(a).sum();
    return t.push("sum_all", std::move(y), {a.id}, [a](Tape<S>& t, int self) {
        const auto& va = t.value(a);
        S g = t.node(self).grad(0, 0);
        t.accumulate(a.id, Mat<S>::Constant(va.rows(), va.cols(), g));
    });
}

template <typename S>
Var mean_all(Tape<S>& t, Var a) {
    const auto& va = t.value(a);
    if (va.size() == 0) fail("mean_all: empty input");
    Mat<S> y(1, 1);
    y(0, 0) = va.sum() / static_cast<S>(va.size());
    return t.push("mean_all", std::move(y), {a.id}, [a](Tape<S>& t, int self) {
        const auto& va = t.value(a);
        S g = t.node(self).grad(0, 0) / static_cast<S>(va.size());
        t.accumulate(a.id, Mat<S>::Constant(va.rows(), va.cols(), g));
    });
}

/// Per-row sum; returns rows x 1.
template <typename S>
Var sum_rows(Tape<S>& t, Var a) {
    Mat<S> y = t.value(a).rowwise().sum();
    return t.push("sum_rows", std::move(y), {a.id}, [a](Tape<S>& t, int self) {
        const auto& g = t.node(self).grad;  // rows x 1
        const auto& va = t.value(a);
        t.accumulate(a.id, g.replicate(1, va.cols()));
    });
}

/// m + v broadcast over rows (v is 1 x cols).
template <typename S>
Var add_rowvec(Tape<S>& t, Var m, Var v) {
    const auto& vm = t.value(m);
    const auto& vv = t.value(v);
    if (vv.rows() != 1 || vv.cols() != vm.cols())
        fail("add_rowvec: expected 1x" + std::to_string(vm.cols()) +
             " vector, got " + Tape<S>::shape_str(vv));
    Mat<S> y = vm.rowwise() + vv.row(0);
    return t.push("add_rowvec", std::move(y), {m.id, v.id}, [m, v](Tape<S>& t, int self) {
        const auto& g = t.node(self).grad;
        t.accumulate(m.id, g);
        t.accumulate(v.id, g.colwise().sum());
    });
}

/// m + v broadcast over columns (v is rows x 1).
template <typename S>
Var add_colvec(Tape<S>& t, Var m, Var v) {
    const auto& vm = t.value(m);
    const auto& vv = t.value(v);
    if (vv.cols() != 1 || vv.rows() != vm.rows())
        fail("add_colvec: expected " + std::to_string(vm.rows()) +
             "x1 vector, got " + Tape<S>::shape_str(vv));
    Mat<S> y = vm.colwise() + vv.col(0);
    return t.push("add_colvec", std::move(y), {m.id, v.id}, [m, v](Tape<S>& t, int self) {
        const auto& g = t.node(self).grad;
        t.accumulate(m.id, g);
        t.accumulate(v.id, g.rowwise().sum());
    });
}

template <typename S>
Var concat_rows(Tape<S>& t, const std::vector<Var>& parts) {
    if (parts.empty()) fail("concat_rows: no inputs");
    Eigen::Index cols = t.value(parts[0]).cols(), rows = 0;
    for (Var p : parts) {
        if (t.value(p).cols() != cols) fail("concat_rows: column count mismatch");
        rows += t.value(p).rows();
    }
    Mat<S> y(rows, cols);
    Eigen::Index r = 0;
    std::vector<int> ids;
    ids.reserve(parts.size());
    for (Var p : parts) {
        const auto& vp = t.value(p);
        y.middleRows(r, vp.rows()) = vp;
        r += vp.rows();
        ids.push_back(p.id);
    }
    auto parts_copy = parts;
    return t.push("concat_rows", std::move(y), std::move(ids),
                  [parts_copy](Tape<S>& t, int self) {
                      const auto& g = t.node(self).grad;
                      Eigen::Index r = 0;
                      for (Var p : parts_copy) {
                          Eigen::Index n = t.value(p).rows();
                          t.accumulate(p.id, g.middleRows(r, n));
                          r += n;
                      }
                  });
}

template <typename S>
Var concat_cols(Tape<S>& t, const std::vector<Var>& parts) {
    if (parts.empty()) fail("concat_cols: no inputs");
    Eigen::Index rows = t.value(parts[0]).rows(), cols = 0;
    for (Var p : parts) {
        if (t.value(p).rows() != rows) fail("concat_cols: row count mismatch");
        cols += t.value(p).cols();
    }
    Mat<S> y(rows, cols);
    Eigen::Index c = 0;
    std::vector<int> ids;
    ids.reserve(parts.size());
    for (Var p : parts) {
        const auto& vp = t.value(p);
        y.middleCols(c, vp.cols()) = vp;
        c += vp.cols();
        ids.push_back(p.id);
    }
    auto parts_copy = parts;
    return t.push("concat_cols", std::move(y), std::move(ids),
                  [parts_copy](Tape<S>& t, int self) {
                      const auto& g = t.node(self).grad;
                      Eigen::Index c = 0;
                      for (Var p : parts_copy) {
                          Eigen::Index n = t.value(p).cols();
                          t.accumulate(p.id, g.middleCols(c, n));
                          c += n;
                      }
                  });
}

template <typename S>
Var slice_rows(Tape<S>& t, Var a, Eigen::Index start, Eigen::Index count) {
    const auto& va = t.value(a);
    if (start < 0 || count < 1 || start + count > va.rows())
        fail("slice_rows: range [" + std::to_string(start) + ", " +
             std::to_string(start + count) + ") out of bounds for " +
             Tape<S>::shape_str(va));
    Mat<S> y = va.middleRows(start, count);
    return t.push("slice_rows", std::move(y), {a.id},
                  [a, start, count](Tape<S>& t, int self) {
                      const auto& g = t.node(self).grad;
                      const auto& va = t.value(a);
                      Mat<S> d = Mat<S>::Zero(va.rows(), va.cols());
                      d.middleRows(start, count) = g;
                      t.accumulate(a.id, d);
                  });
}

template <typename S>
Var slice_cols(Tape<S>& t, Var a, Eigen::Index start, Eigen::Index count) {
    const auto& va = t.value(a);
    if (start < 0 || count < 1 || start + count > va.cols())
        fail("slice_cols: range [" + std::to_string(start) + ", " +
             std::to_string(start + count) + ") out of bounds for " +
             Tape<S>::shape_str(va));
    Mat<S> y = va.middleCols(start, count);
    return t.push("slice_cols", std::move(y), {a.id},
                  [a, start, count](Tape<S>& t, int self) {
                      const auto& g = t.node(self).grad;
                      const auto& va = t.value(a);
                      Mat<S> d = Mat<S>::Zero(va.rows(), va.cols());
                      d.middleCols(start, count) = g;
                      t.accumulate(a.id, d);
                  });
}

/// y[k, :] = a[ids[k], :]. Duplicate ids accumulate gradient, which is what
/// embedding lookups need.
template <typename S>
Var gather_rows(Tape<S>& t, Var a, std::vector<int> ids) {
    const auto& va = t.value(a);
    if (ids.empty()) fail("gather_rows: empty index list");
    for (int id : ids)
        if (id < 0 || id >= va.rows())
            fail("gather_rows: index " + std::to_string(id) +
                 " out of range [0, " + std::to_string(va.rows()) + ")");
    Mat<S> y(static_cast<Eigen::Index>(ids.size()), va.cols());
    for (std::size_t k = 0; k < ids.size(); ++k)
        y.row(static_cast<Eigen::Index>(k)) = va.row(ids[k]);
    return t.push("gather_rows", std::move(y), {a.id},
                  [a, ids = std::move(ids)](Tape<S>& t, int self) {
                      const auto& g = t.node(self).grad;
                      const auto& va = t.value(a);
                      Mat<S> d = Mat<S>::Zero(va.rows(), va.cols());
                      for (std::size_t k = 0; k < ids.size(); ++k)
                          d.row(ids[k]) += g.row(static_cast<Eigen::Index>(k));
                      t.accumulate(a.id, d);
                  });
}

/// Inverse of gather_rows: places row k of a at positions[k] in a zero
/// matrix with total_rows rows. Positions must be unique and in range.
template <typename S>
Var scatter_rows(Tape<S>& t, Var a, std::vector<int> positions,
                 Eigen::Index total_rows) {
    const auto& va = t.value(a);
    if (static_cast<Eigen::Index>(positions.size()) != va.rows())
        fail("scatter_rows: need one position per row");
    std::vector<char> seen(static_cast<std::size_t>(total_rows), 0);
    for (int p : positions) {
        if (p < 0 || p >= total_rows)
            fail("scatter_rows: position " + std::to_string(p) +
                 " out of range [0, " + std::to_string(total_rows) + ")");
        if (seen[static_cast<std::size_t>(p)]++)
            fail("scatter_rows: duplicate position " + std::to_string(p));
    }
    Mat<S> y = Mat<S>::Zero(total_rows, va.cols());
    for (std::size_t k = 0; k < positions.size(); ++k)
        y.row(positions[k]) = va.row(static_cast<Eigen::Index>(k));
    return t.push("scatter_rows", std::move(y), {a.id},
                  [a, positions = std::move(positions)](Tape<S>& t, int self) {
                      const auto& g = t.node(self).grad;
                      const auto& va = t.value(a);
                      Mat<S> d(va.rows(), va.cols());
                      for (std::size_t k = 0; k < positions.size(); ++k)
                          d.row(static_cast<Eigen::Index>(k)) = g.row(positions[k]);
                      t.accumulate(a.id, d);
                  });
}

// ---------------------------------------------------------------------------
// Layer normalization
// ---------------------------------------------------------------------------

/// Per-row normalization: (x - mean) / sqrt(var + eps) * gain + bias, with
/// population variance; gain and bias are 1 x cols.
template <typename S>
Var layer_norm_rows(Tape<S>& t, Var x, Var gain, Var bias, S eps = S(1e-5)) {
    const auto& vx = t.value(x);
    const auto& vg = t.value(gain);
    const auto& vb = t.value(bias);
    if (vg.rows() != 1 || vg.cols() != vx.cols() || vb.rows() != 1 ||
        vb.cols() != vx.cols())
        fail("layer_norm_rows: gain/bias must be 1x" + std::to_string(vx.cols()));
    if (vx.cols() < 1) fail("layer_norm_rows: empty rows");

    const Eigen::Index n = vx.cols();
    Mat<S> xhat(vx.rows(), n), inv(vx.rows(), 1);
    for (Eigen::Index i = 0; i < vx.rows(); ++i) {
        S mu = vx.row(i).mean();
        S var = (vx.row(i).array() - mu).square().sum() / static_cast<S>(n);
        S is = S(1) / std::sqrt(var + eps);
        inv(i, 0) = is;
        xhat.row(i) = (vx.row(i).array() - mu) * is;
    }
    Mat<S> y = (xhat.array().rowwise() * vg.row(0).array()).rowwise() +
               vb.row(0).array();
    return t.push(
        "layer_norm_rows", std::move(y), {x.id, gain.id, bias.id},
        [x, gain, bias, xhat = std::move(xhat), inv = std::move(inv)](Tape<S>& t, int self) {
            const auto& g = t.node(self).grad;
            const auto& vg = t.value(gain);
            const Eigen::Index n = g.cols();
            t.accumulate(gain.id, g.cwiseProduct(xhat).colwise().sum());
            t.accumulate(bias.id, g.colwise().sum());
            Mat<S> gy = g.array().rowwise() * vg.row(0).array();  // d/dxhat
            Mat<S> dx(g.rows(), n);
            for (Eigen::Index i = 0; i < g.rows(); ++i) {
                S sum_gy = gy.row(i).sum();
                S sum_gy_xhat = gy.row(i).cwiseProduct(xhat.row(i)).sum();
                dx.row(i) = (inv(i, 0) / static_cast<S>(n)) *
                            (static_cast<S>(n) * gy.row(i).array() - sum_gy -
                             xhat.row(i).array() * sum_gy_xhat);
            }
            t.accumulate(x.id, dx);
        });
}

// ---------------------------------------------------------------------------
// Divergence and graph surgery
// ---------------------------------------------------------------------------

/// Copies the value of a as a fresh constant; gradients do not flow back.
template <typename S>
Var detach(Tape<S>& t, Var a) {
    Mat<S> y = t.value(a);
    return t.push("detach", std::move(y), {}, nullptr, false);
}

/// KL(teacher || student) summed over all entries. Both sides are floored
/// before the logs; entries with teacher probability 0 contribute 0. The
/// teacher must be detached — only the student receives gradients.
template <typename S>
Var kl_div(Tape<S>& t, Var teacher, Var student, S floor = S(1e-12)) {
    detail::require_same_shape(t, teacher, student, "kl_div");
    if (t.needs_grad(teacher))
        fail("kl_div: teacher must be detached (use detach())");
    const auto& p = t.value(teacher);
    const auto& q = t.value(student);
    if ((p.array() < S(0)).any() || (q.array() < S(0)).any())
        fail("kl_div: probabilities must be non-negative");
    S total = S(0);
    for (Eigen::Index i = 0; i < p.rows(); ++i)
        for (Eigen::Index j = 0; j < p.cols(); ++j) {
            S pij = p(i, j);
            if (pij == S(0)) continue;
            total += pij * (std::log(std::max(pij, floor)) -
                            std::log(std::max(q(i, j), floor)));
        }
    Mat<S> y(1, 1);
    y(0, 0) = total;
    return t.push("kl_div", std::move(y), {teacher.id, student.id},
                  [teacher, student, floor](Tape<S>& t, int self) {
                      S g = t.node(self).grad(0, 0);
                      const auto& p = t.value(teacher);
                      const auto& q = t.value(student);
                      Mat<S> d = Mat<S>::Zero(q.rows(), q.cols());
                      for (Eigen::Index i = 0; i < q.rows(); ++i)
                          for (Eigen::Index j = 0; j < q.cols(); ++j)
                              if (p(i, j) != S(0) && q(i, j) > floor)
                                  d(i, j) = -g * p(i, j) / q(i, j);
                      t.accumulate(student.id, d);
                  });
}

}  // namespace endx
