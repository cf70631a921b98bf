#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "actra/tensor.hpp"

namespace actra {

// ---------------------------------------------------------------------------
// Raw matrix kernels (row-major). These carry nearly all of the flops, so
// they are written as plain contiguous loops the compiler can vectorize.
// Accumulating variants are used by the backward pass.
// ---------------------------------------------------------------------------
namespace detail {

// C = A(m,k) * B(k,n)
inline void mm_nn(const double* A, const double* B, double* C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* a = A + static_cast<std::size_t>(i) * k;
        double* c = C + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) c[j] = 0.0;
        for (int p = 0; p < k; ++p) {
            const double av = a[p];
            const double* b = B + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// C += A(m,k) * B(n,k)^T
inline void mm_nt_acc(const double* A, const double* B, double* C, int m, int k, int n) {
    // The row-dot formulation is a serial reduction the compiler must keep
    // scalar; transposing B once turns the inner loop into the same
    // independently-accumulating form as mm_nn.
    thread_local std::vector<double> bt;
    bt.resize(static_cast<std::size_t>(k) * n);
    for (int j = 0; j < n; ++j)
        for (int p = 0; p < k; ++p) bt[static_cast<std::size_t>(p) * n + j] = B[static_cast<std::size_t>(j) * k + p];
    for (int i = 0; i < m; ++i) {
        const double* a = A + static_cast<std::size_t>(i) * k;
        double* c = C + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = a[p];
            const double* b = bt.data() + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// C += A(k,m)^T * B(k,n)
inline void mm_tn_acc(const double* A, const double* B, double* C, int m, int k, int n) {
    for (int p = 0; p < k; ++p) {
        const double* a = A + static_cast<std::size_t>(p) * m;
        const double* b = B + static_cast<std::size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const double av = a[i];
            double* c = C + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

}  // namespace detail

enum class OpKind {
    Input,
    Param,
    Matmul,
    Add,
    AddRow,  // matrix + broadcast row vector
    Mul,
    Softmax,
    LayerNorm,
    Gelu,
    GatherRows,
    MaxPoolRows,
    CrossEntropy,
    Concat,
    Slice,
    Transpose,
    Scale,
    Dot,
    MaskedFill,
    Sum,
};

// Reverse-mode tape over Tensors. Built afresh for every forward pass
// (define-by-run); nodes are appended in construction order, which is the
// topological order the backward pass walks in reverse.
class Graph {
public:
    struct Var {
        int id = -1;
        bool valid() const { return id >= 0; }
    };

    struct Node {
        OpKind kind = OpKind::Input;
        std::vector<int> in;
        Tensor out;                 // unused for Param leaves
        Tensor* ext = nullptr;      // Param leaves: external storage
        std::vector<double> gbuf;   // gradient w.r.t. this node's output
        std::vector<int> iattr;     // indices / targets / slice bounds / axis
        double dattr = 0.0;
        const std::vector<std::uint8_t>* mask = nullptr;  // MaskedFill
        std::vector<double> aux;    // saved forward stats
        bool requires_grad = false;
    };

    // Leaf holding a copy of t. Gradients are reachable via grad() after
    // backward when t.requires_grad is set.
    Var input(const Tensor& t) {
        Node n;
        n.kind = OpKind::Input;
        n.out = t;
        n.requires_grad = t.requires_grad;
        return push(std::move(n));
    }

    Var constant(Tensor t) {
        t.requires_grad = false;
        return input(t);
    }

    // Leaf bound to external parameter storage (no copy). After backward,
    // gradients are accumulated into t.grad. t must outlive the graph.
    Var param(Tensor& t) {
        Node n;
        n.kind = OpKind::Param;
        n.ext = &t;
        n.requires_grad = true;
        return push(std::move(n));
    }

    const Tensor& value(Var v) const {
        const Node& n = node(v);
        return n.ext ? *n.ext : n.out;
    }

    // Gradient of the last backward() root w.r.t. v; zeros if v does not
    // reach the root.
    Tensor grad(Var v) const {
        const Node& n = node(v);
        Tensor g(value(v).shape);
        if (!n.gbuf.empty()) g.data = n.gbuf;
        return g;
    }

    std::size_t size() const { return nodes_.size(); }

    // -- operations ---------------------------------------------------------

    Var matmul(Var a, Var b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        require(A.rank() == 2 && B.rank() == 2, "matmul expects matrices, got " + shape_str(A.shape) + " and " + shape_str(B.shape));
        require(A.shape[1] == B.shape[0], "matmul inner dims differ: " + shape_str(A.shape) + " vs " + shape_str(B.shape));
        Node n;
        n.kind = OpKind::Matmul;
        n.in = {a.id, b.id};
        n.out = Tensor({A.shape[0], B.shape[1]});
        detail::mm_nn(A.data.data(), B.data.data(), n.out.data.data(), A.shape[0], A.shape[1], B.shape[1]);
        return push(std::move(n));
    }

    // Elementwise add for equal shapes; matrix + row vector broadcasts.
    Var add(Var a, Var b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (A.shape == B.shape) {
            Node n;
            n.kind = OpKind::Add;
            n.in = {a.id, b.id};
            n.out = Tensor(A.shape);
            for (std::size_t i = 0; i < A.data.size(); ++i) n.out.data[i] = A.data[i] + B.data[i];
            return push(std::move(n));
        }
        if (A.rank() == 2 && B.rank() == 1 && A.shape[1] == B.shape[0]) {
            Node n;
            n.kind = OpKind::AddRow;
            n.in = {a.id, b.id};
            n.out = Tensor(A.shape);
            const int rows = A.shape[0], cols = A.shape[1];
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < cols; ++j) n.out.at(i, j) = A.at(i, j) + B.data[j];
            return push(std::move(n));
        }
        throw std::invalid_argument("add shape mismatch: " + shape_str(A.shape) + " vs " + shape_str(B.shape));
    }

    Var mul(Var a, Var b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        require(A.shape == B.shape, "mul shape mismatch: " + shape_str(A.shape) + " vs " + shape_str(B.shape));
        Node n;
        n.kind = OpKind::Mul;
        n.in = {a.id, b.id};
        n.out = Tensor(A.shape);
        for (std::size_t i = 0; i < A.data.size(); ++i) n.out.data[i] = A.data[i] * B.data[i];
        return push(std::move(n));
    }

    // Row-wise softmax over the last axis, stabilized by max subtraction.
    Var softmax(Var x) {
        const Tensor& X = value(x);
        require(X.rank() == 1 || X.rank() == 2, "softmax expects rank 1 or 2, got " + shape_str(X.shape));
        require_finite(X, "softmax");
        Node n;
        n.kind = OpKind::Softmax;
        n.in = {x.id};
        n.out = Tensor(X.shape);
        const int rows = X.rows(), cols = X.cols();
        for (int i = 0; i < rows; ++i) {
            const double* xr = X.data.data() + static_cast<std::size_t>(i) * cols;
            double* yr = n.out.data.data() + static_cast<std::size_t>(i) * cols;
            double m = xr[0];
            for (int j = 1; j < cols; ++j) m = std::max(m, xr[j]);
            double s = 0.0;
            for (int j = 0; j < cols; ++j) {
                // exp underflows to exactly +0.0 long before -1e9, so the
                // branch is bit-identical to calling it; it skips the exp for
                // mask-filled scores, which dominate attention rows.
                const double d = xr[j] - m;
                yr[j] = d < -1e9 ? 0.0 : std::exp(d);
                s += yr[j];
            }
            const double inv = 1.0 / s;
            for (int j = 0; j < cols; ++j) yr[j] *= inv;
        }
        return push(std::move(n));
    }

    // softmax(masked_fill(x, mask, -1e30)) in one op and one output buffer.
    // Bit-identical to the two-op spelling: the row max over allowed entries
    // equals the max over filled rows, disallowed entries contribute +0.0 to
    // the sum in the same order, and allowed entries see the same exp
    // arguments. The backward formula is softmax's own (zero rows stay zero),
    // so the node is pushed as a Softmax.
    Var masked_softmax(Var x, const std::vector<std::uint8_t>* mask) {
        const Tensor& X = value(x);
        require(X.rank() == 2, "masked_softmax expects rank 2, got " + shape_str(X.shape));
        require(mask != nullptr && mask->size() == X.data.size(),
                "masked_softmax mask size " + std::to_string(mask ? mask->size() : 0) + " does not match " +
                    shape_str(X.shape));
        require_finite(X, "masked_softmax");
        Node n;
        n.kind = OpKind::Softmax;
        n.in = {x.id};
        n.out = Tensor(X.shape);
        const int rows = X.rows(), cols = X.cols();
        for (int i = 0; i < rows; ++i) {
            const double* xr = X.data.data() + static_cast<std::size_t>(i) * cols;
            const std::uint8_t* mr = mask->data() + static_cast<std::size_t>(i) * cols;
            double* yr = n.out.data.data() + static_cast<std::size_t>(i) * cols;
            double m = 0.0;
            bool any = false;
            for (int j = 0; j < cols; ++j)
                if (mr[j] && (!any || xr[j] > m)) m = xr[j], any = true;
            require(any, "masked_softmax row " + std::to_string(i) + " has no allowed entry");
            double s = 0.0;
            for (int j = 0; j < cols; ++j) {
                yr[j] = mr[j] ? std::exp(xr[j] - m) : 0.0;
                s += yr[j];
            }
            const double inv = 1.0 / s;
            for (int j = 0; j < cols; ++j) yr[j] *= inv;
        }
        return push(std::move(n));
    }

    // Row-wise layer norm over the last axis with learnable scale and shift.
    // Variance is clamped by eps, so a constant row maps to shift.
    Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5) {
        const Tensor& X = value(x);
        const Tensor& G = value(gamma);
        const Tensor& B = value(beta);
        require(X.rank() == 1 || X.rank() == 2, "layer_norm expects rank 1 or 2, got " + shape_str(X.shape));
        const int cols = X.cols();
        require(G.rank() == 1 && G.shape[0] == cols, "layer_norm scale shape " + shape_str(G.shape) + " does not match feature dim " + std::to_string(cols));
        require(B.rank() == 1 && B.shape[0] == cols, "layer_norm shift shape " + shape_str(B.shape) + " does not match feature dim " + std::to_string(cols));
        require_finite(X, "layer_norm");
        Node n;
        n.kind = OpKind::LayerNorm;
        n.in = {x.id, gamma.id, beta.id};
        n.out = Tensor(X.shape);
        n.dattr = eps;
        const int rows = X.rows();
        n.aux.resize(static_cast<std::size_t>(rows) * 2);
        for (int i = 0; i < rows; ++i) {
            const double* xr = X.data.data() + static_cast<std::size_t>(i) * cols;
            double* yr = n.out.data.data() + static_cast<std::size_t>(i) * cols;
            double mean = 0.0;
            for (int j = 0; j < cols; ++j) mean += xr[j];
            mean /= cols;
            double var = 0.0;
            for (int j = 0; j < cols; ++j) {
                const double d = xr[j] - mean;
                var += d * d;
            }
            var /= cols;
            const double invstd = 1.0 / std::sqrt(var + eps);
            n.aux[2 * i] = mean;
            n.aux[2 * i + 1] = invstd;
            for (int j = 0; j < cols; ++j) yr[j] = (xr[j] - mean) * invstd * G.data[j] + B.data[j];
        }
        return push(std::move(n));
    }

    // Exact gelu: 0.5 x (1 + erf(x / sqrt(2))).
    Var gelu(Var x) {
        const Tensor& X = value(x);
        Node n;
        n.kind = OpKind::Gelu;
        n.in = {x.id};
        n.out = Tensor(X.shape);
        for (std::size_t i = 0; i < X.data.size(); ++i) {
            const double v = X.data[i];
            n.out.data[i] = 0.5 * v * (1.0 + std::erf(v * 0.7071067811865476));
        }
        return push(std::move(n));
    }

    // Rows of a matrix selected by index (embedding lookup / row permutation).
    Var gather_rows(Var table, std::vector<int> idx) {
        const Tensor& T = value(table);
        require(T.rank() == 2, "gather_rows expects a matrix, got " + shape_str(T.shape));
        for (int i : idx)
            require(i >= 0 && i < T.shape[0], "gather_rows index " + std::to_string(i) + " out of range for " + shape_str(T.shape));
        Node n;
        n.kind = OpKind::GatherRows;
        n.in = {table.id};
        n.out = Tensor({static_cast<int>(idx.size()), T.shape[1]});
        const int cols = T.shape[1];
        for (std::size_t r = 0; r < idx.size(); ++r)
            std::memcpy(n.out.data.data() + r * cols, T.data.data() + static_cast<std::size_t>(idx[r]) * cols,
                        sizeof(double) * cols);
        n.iattr = std::move(idx);
        return push(std::move(n));
    }

    // Column-wise max over all rows: (m,n) -> (n). Ties resolve to the first
    // maximal row, and the gradient is routed there.
    Var max_pool_rows(Var x) {
        const Tensor& X = value(x);
        require(X.rank() == 2, "max_pool_rows expects a matrix, got " + shape_str(X.shape));
        Node n;
        n.kind = OpKind::MaxPoolRows;
        n.in = {x.id};
        n.out = Tensor({X.shape[1]});
        n.iattr.resize(X.shape[1]);
        for (int j = 0; j < X.shape[1]; ++j) {
            int arg = 0;
            double best = X.at(0, j);
            for (int i = 1; i < X.shape[0]; ++i) {
                if (X.at(i, j) > best) {
                    best = X.at(i, j);
                    arg = i;
                }
            }
            n.out.data[j] = best;
            n.iattr[j] = arg;
        }
        return push(std::move(n));
    }

    // Per-row -log softmax(logits)[target], computed via a stable
    // log-sum-exp. Output is one loss per row; always non-negative.
    Var cross_entropy_with_logits(Var logits, std::vector<int> targets) {
        const Tensor& X = value(logits);
        require(X.rank() == 1 || X.rank() == 2, "cross_entropy expects rank 1 or 2, got " + shape_str(X.shape));
        require_finite(X, "cross_entropy");
        const int rows = X.rows(), cols = X.cols();
        require(static_cast<int>(targets.size()) == rows,
                "cross_entropy needs " + std::to_string(rows) + " targets, got " + std::to_string(targets.size()));
        for (int t : targets)
            require(t >= 0 && t < cols, "cross_entropy target " + std::to_string(t) + " out of range [0," + std::to_string(cols) + ")");
        Node n;
        n.kind = OpKind::CrossEntropy;
        n.in = {logits.id};
        n.out = Tensor({rows});
        n.aux.resize(rows);  // per-row log-sum-exp
        for (int i = 0; i < rows; ++i) {
            const double* xr = X.data.data() + static_cast<std::size_t>(i) * cols;
            double m = xr[0];
            for (int j = 1; j < cols; ++j) m = std::max(m, xr[j]);
            double s = 0.0;
            for (int j = 0; j < cols; ++j) s += std::exp(xr[j] - m);
            const double lse = m + std::log(s);
            n.aux[i] = lse;
            n.out.data[i] = lse - xr[targets[i]];
        }
        n.iattr = std::move(targets);
        return push(std::move(n));
    }

    // Concatenate along axis 0 (rows / vector entries) or axis 1 (columns).
    Var concat(const std::vector<Var>& xs, int axis) {
        require(!xs.empty(), "concat of zero tensors");
        require(axis == 0 || axis == 1, "concat axis must be 0 or 1");
        const Tensor& first = value(xs[0]);
        Node n;
        n.kind = OpKind::Concat;
        n.iattr.push_back(axis);
        for (Var v : xs) n.in.push_back(v.id);
        if (first.rank() == 1 && axis == 0) {
            int total = 0;
            for (Var v : xs) {
                require(value(v).rank() == 1, "concat rank mismatch");
                total += value(v).shape[0];
            }
            n.out = Tensor({total});
            int o = 0;
            for (Var v : xs) {
                const Tensor& t = value(v);
                std::memcpy(n.out.data.data() + o, t.data.data(), sizeof(double) * t.data.size());
                o += static_cast<int>(t.data.size());
            }
            return push(std::move(n));
        }
        require(first.rank() == 2, "concat expects matrices or vectors, got " + shape_str(first.shape));
        if (axis == 0) {
            const int cols = first.shape[1];
            int rows = 0;
            for (Var v : xs) {
                require(value(v).rank() == 2 && value(v).shape[1] == cols,
                        "concat axis 0 column mismatch: " + shape_str(value(v).shape));
                rows += value(v).shape[0];
            }
            n.out = Tensor({rows, cols});
            double* o = n.out.data.data();
            for (Var v : xs) {
                const Tensor& t = value(v);
                std::memcpy(o, t.data.data(), sizeof(double) * t.data.size());
                o += t.data.size();
            }
        } else {
            const int rows = first.shape[0];
            int cols = 0;
            for (Var v : xs) {
                require(value(v).rank() == 2 && value(v).shape[0] == rows,
                        "concat axis 1 row mismatch: " + shape_str(value(v).shape));
                cols += value(v).shape[1];
            }
            n.out = Tensor({rows, cols});
            int co = 0;
            for (Var v : xs) {
                const Tensor& t = value(v);
                for (int i = 0; i < rows; ++i)
                    std::memcpy(n.out.data.data() + static_cast<std::size_t>(i) * cols + co,
                                t.data.data() + static_cast<std::size_t>(i) * t.shape[1],
                                sizeof(double) * t.shape[1]);
                co += t.shape[1];
            }
        }
        return push(std::move(n));
    }

    // Half-open range [start, stop) along the given axis.
    Var slice(Var x, int axis, int start, int stop) {
        const Tensor& X = value(x);
        require(axis >= 0 && axis < X.rank(), "slice axis out of range for " + shape_str(X.shape));
        require(0 <= start && start < stop && stop <= X.shape[axis],
                "slice range [" + std::to_string(start) + "," + std::to_string(stop) + ") invalid for " + shape_str(X.shape));
        Node n;
        n.kind = OpKind::Slice;
        n.in = {x.id};
        n.iattr = {axis, start, stop};
        if (X.rank() == 1) {
            n.out = Tensor({stop - start});
            std::memcpy(n.out.data.data(), X.data.data() + start, sizeof(double) * (stop - start));
        } else if (axis == 0) {
            const int cols = X.shape[1];
            n.out = Tensor({stop - start, cols});
            std::memcpy(n.out.data.data(), X.data.data() + static_cast<std::size_t>(start) * cols,
                        sizeof(double) * n.out.data.size());
        } else {
            const int rows = X.shape[0], cols = X.shape[1], w = stop - start;
            n.out = Tensor({rows, w});
            for (int i = 0; i < rows; ++i)
                std::memcpy(n.out.data.data() + static_cast<std::size_t>(i) * w,
                            X.data.data() + static_cast<std::size_t>(i) * cols + start, sizeof(double) * w);
        }
        return push(std::move(n));
    }

    Var transpose(Var x) {
        const Tensor& X = value(x);
        require(X.rank() == 2, "transpose expects a matrix, got " + shape_str(X.shape));
        Node n;
        n.kind = OpKind::Transpose;
        n.in = {x.id};
        n.out = Tensor({X.shape[1], X.shape[0]});
        for (int i = 0; i < X.shape[0]; ++i)
            for (int j = 0; j < X.shape[1]; ++j) n.out.at(j, i) = X.at(i, j);
        return push(std::move(n));
    }

    Var scale(Var x, double s) {
        const Tensor& X = value(x);
        Node n;
        n.kind = OpKind::Scale;
        n.in = {x.id};
        n.dattr = s;
        n.out = Tensor(X.shape);
        for (std::size_t i = 0; i < X.data.size(); ++i) n.out.data[i] = X.data[i] * s;
        return push(std::move(n));
    }

    // Full inner product of two same-shape tensors; scalar output.
    Var dot(Var a, Var b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        require(A.shape == B.shape, "dot shape mismatch: " + shape_str(A.shape) + " vs " + shape_str(B.shape));
        Node n;
        n.kind = OpKind::Dot;
        n.in = {a.id, b.id};
        double s = 0.0;
        for (std::size_t i = 0; i < A.data.size(); ++i) s += A.data[i] * B.data[i];
        n.out = Tensor::scalar(s);
        return push(std::move(n));
    }

    // Keep entries where mask is true; set the rest to fill. The mask is a
    // row-major boolean buffer matching x's element count; it is borrowed and
    // must outlive the graph. Gradient flows only through kept entries.
    Var masked_fill(Var x, const std::vector<std::uint8_t>* mask, double fill) {
        const Tensor& X = value(x);
        require(mask != nullptr && mask->size() == X.data.size(),
                "masked_fill mask size " + std::to_string(mask ? mask->size() : 0) + " does not match " + shape_str(X.shape));
        Node n;
        n.kind = OpKind::MaskedFill;
        n.in = {x.id};
        n.mask = mask;
        n.dattr = fill;
        n.out = Tensor(X.shape);
        for (std::size_t i = 0; i < X.data.size(); ++i) n.out.data[i] = (*mask)[i] ? X.data[i] : fill;
        return push(std::move(n));
    }

    Var sum(Var x) {
        const Tensor& X = value(x);
        Node n;
        n.kind = OpKind::Sum;
        n.in = {x.id};
        double s = 0.0;
        for (double v : X.data) s += v;
        n.out = Tensor::scalar(s);
        return push(std::move(n));
    }

    Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(value(x).size())); }

    // -- backward -----------------------------------------------------------

    // Reverse sweep from a scalar root. Gradients accumulate additively
    // across fan-out; leaves that do not reach the root keep zero gradient.
    // Param leaves additionally accumulate into their Tensor's grad buffer.
    void backward(Var root) {
        Node& r = node(root);
        require(value(root).size() == 1, "backward root must be scalar, got " + shape_str(value(root).shape));
        r.gbuf.assign(1, 1.0);
        for (int id = root.id; id >= 0; --id) {
            Node& n = nodes_[id];
            if (!n.requires_grad || n.gbuf.empty()) continue;
            step_backward(n);
            if (n.kind == OpKind::Param && n.ext->requires_grad) {
                n.ext->ensure_grad();
                for (std::size_t i = 0; i < n.gbuf.size(); ++i) n.ext->grad[i] += n.gbuf[i];
            }
        }
    }

private:
    std::vector<Node> nodes_;

    Var push(Node&& n) {
        if (n.kind != OpKind::Input && n.kind != OpKind::Param) {
            for (int id : n.in)
                if (nodes_[id].requires_grad) n.requires_grad = true;
        }
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    Node& node(Var v) {
        require(v.id >= 0 && v.id < static_cast<int>(nodes_.size()), "variable not on this graph");
        return nodes_[v.id];
    }
    const Node& node(Var v) const {
        require(v.id >= 0 && v.id < static_cast<int>(nodes_.size()), "variable not on this graph");
        return nodes_[v.id];
    }

    const Tensor& val(int id) const { return nodes_[id].ext ? *nodes_[id].ext : nodes_[id].out; }

    double* gradbuf(int id) {
        Node& n = nodes_[id];
        if (!n.requires_grad) return nullptr;
        if (n.gbuf.empty()) n.gbuf.assign(val(id).data.size(), 0.0);
        return n.gbuf.data();
    }

    static void require(bool ok, const std::string& msg) {
        if (!ok) throw std::invalid_argument(msg);
    }

    static void require_finite(const Tensor& t, const char* op) {
        if (!t.all_finite()) throw std::invalid_argument(std::string(op) + ": non-finite input rejected");
    }

    void step_backward(Node& n) {
        const double* g = n.gbuf.data();
        switch (n.kind) {
            case OpKind::Input:
            case OpKind::Param:
                break;
            case OpKind::Matmul: {
                const Tensor& A = val(n.in[0]);
                const Tensor& B = val(n.in[1]);
                const int m = A.shape[0], k = A.shape[1], c = B.shape[1];
                if (double* da = gradbuf(n.in[0])) detail::mm_nt_acc(g, B.data.data(), da, m, c, k);
                if (double* db = gradbuf(n.in[1])) detail::mm_tn_acc(A.data.data(), g, db, k, m, c);
                break;
            }
            case OpKind::Add: {
                for (int s = 0; s < 2; ++s)
                    if (double* d = gradbuf(n.in[s]))
                        for (std::size_t i = 0; i < n.gbuf.size(); ++i) d[i] += g[i];
                break;
            }
            case OpKind::AddRow: {
                const Tensor& A = val(n.in[0]);
                const int rows = A.shape[0], cols = A.shape[1];
                if (double* da = gradbuf(n.in[0]))
                    for (std::size_t i = 0; i < n.gbuf.size(); ++i) da[i] += g[i];
                if (double* db = gradbuf(n.in[1]))
                    for (int i = 0; i < rows; ++i)
                        for (int j = 0; j < cols; ++j) db[j] += g[static_cast<std::size_t>(i) * cols + j];
                break;
            }
            case OpKind::Mul: {
                const Tensor& A = val(n.in[0]);
                const Tensor& B = val(n.in[1]);
                if (double* da = gradbuf(n.in[0]))
                    for (std::size_t i = 0; i < n.gbuf.size(); ++i) da[i] += g[i] * B.data[i];
                if (double* db = gradbuf(n.in[1]))
                    for (std::size_t i = 0; i < n.gbuf.size(); ++i) db[i] += g[i] * A.data[i];
                break;
            }
            case OpKind::Softmax: {
                if (double* dx = gradbuf(n.in[0])) {
                    const int rows = n.out.rows(), cols = n.out.cols();
                    for (int i = 0; i < rows; ++i) {
                        const double* p = n.out.data.data() + static_cast<std::size_t>(i) * cols;
                        const double* gr = g + static_cast<std::size_t>(i) * cols;
                        double dotv = 0.0;
                        for (int j = 0; j < cols; ++j) dotv += gr[j] * p[j];
                        double* d = dx + static_cast<std::size_t>(i) * cols;
                        for (int j = 0; j < cols; ++j) d[j] += p[j] * (gr[j] - dotv);
                    }
                }
                break;
            }
            case OpKind::LayerNorm: {
                const Tensor& X = val(n.in[0]);
                const Tensor& G = val(n.in[1]);
                const int rows = X.rows(), cols = X.cols();
                double* dx = gradbuf(n.in[0]);
                double* dg = gradbuf(n.in[1]);
                double* db = gradbuf(n.in[2]);
                for (int i = 0; i < rows; ++i) {
                    const double mean = n.aux[2 * i];
                    const double invstd = n.aux[2 * i + 1];
                    const double* xr = X.data.data() + static_cast<std::size_t>(i) * cols;
                    const double* gr = g + static_cast<std::size_t>(i) * cols;
                    double gdot = 0.0, gxdot = 0.0;
                    for (int j = 0; j < cols; ++j) {
                        const double xhat = (xr[j] - mean) * invstd;
                        const double gg = gr[j] * G.data[j];
                        gdot += gg;
                        gxdot += gg * xhat;
                        if (dg) dg[j] += gr[j] * xhat;
                        if (db) db[j] += gr[j];
                    }
                    if (dx) {
                        const double inv_n = 1.0 / cols;
                        double* d = dx + static_cast<std::size_t>(i) * cols;
                        for (int j = 0; j < cols; ++j) {
                            const double xhat = (xr[j] - mean) * invstd;
                            d[j] += invstd * (gr[j] * G.data[j] - inv_n * gdot - xhat * inv_n * gxdot);
                        }
                    }
                }
                break;
            }
            case OpKind::Gelu: {
                if (double* dx = gradbuf(n.in[0])) {
                    const Tensor& X = val(n.in[0]);
                    for (std::size_t i = 0; i < n.gbuf.size(); ++i) {
                        const double v = X.data[i];
                        const double cdf = 0.5 * (1.0 + std::erf(v * 0.7071067811865476));
                        const double pdf = std::exp(-0.5 * v * v) * 0.3989422804014327;
                        dx[i] += g[i] * (cdf + v * pdf);
                    }
                }
                break;
            }
            case OpKind::GatherRows: {
                if (double* dt = gradbuf(n.in[0])) {
                    const int cols = n.out.shape[1];
                    for (std::size_t r = 0; r < n.iattr.size(); ++r) {
                        double* dst = dt + static_cast<std::size_t>(n.iattr[r]) * cols;
                        const double* src = g + r * cols;
                        for (int j = 0; j < cols; ++j) dst[j] += src[j];
                    }
                }
                break;
            }
            case OpKind::MaxPoolRows: {
                if (double* dx = gradbuf(n.in[0])) {
                    const int cols = n.out.shape[0];
                    for (int j = 0; j < cols; ++j) dx[static_cast<std::size_t>(n.iattr[j]) * cols + j] += g[j];
                }
                break;
            }
            case OpKind::CrossEntropy: {
                if (double* dx = gradbuf(n.in[0])) {
                    const Tensor& X = val(n.in[0]);
                    const int rows = X.rows(), cols = X.cols();
                    for (int i = 0; i < rows; ++i) {
                        const double* xr = X.data.data() + static_cast<std::size_t>(i) * cols;
                        double* d = dx + static_cast<std::size_t>(i) * cols;
                        const double lse = n.aux[i];
                        for (int j = 0; j < cols; ++j) d[j] += g[i] * std::exp(xr[j] - lse);
                        d[n.iattr[i]] -= g[i];
                    }
                }
                break;
            }
            case OpKind::Concat: {
                const int axis = n.iattr[0];
                if (val(n.in[0]).rank() == 1 || axis == 0) {
                    std::size_t o = 0;
                    for (int id : n.in) {
                        const std::size_t cnt = val(id).data.size();
                        if (double* d = gradbuf(id))
                            for (std::size_t i = 0; i < cnt; ++i) d[i] += g[o + i];
                        o += cnt;
                    }
                } else {
                    const int rows = n.out.shape[0], cols = n.out.shape[1];
                    int co = 0;
                    for (int id : n.in) {
                        const int w = val(id).shape[1];
                        if (double* d = gradbuf(id))
                            for (int i = 0; i < rows; ++i)
                                for (int j = 0; j < w; ++j)
                                    d[static_cast<std::size_t>(i) * w + j] += g[static_cast<std::size_t>(i) * cols + co + j];
                        co += w;
                    }
                }
                break;
            }
            case OpKind::Slice: {
                if (double* dx = gradbuf(n.in[0])) {
                    const Tensor& X = val(n.in[0]);
                    const int axis = n.iattr[0], start = n.iattr[1], stop = n.iattr[2];
                    if (X.rank() == 1) {
                        for (int i = start; i < stop; ++i) dx[i] += g[i - start];
                    } else if (axis == 0) {
                        const int cols = X.shape[1];
                        for (std::size_t i = 0; i < n.gbuf.size(); ++i)
                            dx[static_cast<std::size_t>(start) * cols + i] += g[i];
                    } else {
                        const int rows = X.shape[0], cols = X.shape[1], w = stop - start;
                        for (int i = 0; i < rows; ++i)
                            for (int j = 0; j < w; ++j)
                                dx[static_cast<std::size_t>(i) * cols + start + j] += g[static_cast<std::size_t>(i) * w + j];
                    }
                }
                break;
            }
            case OpKind::Transpose: {
                if (double* dx = gradbuf(n.in[0])) {
                    const int rows = n.out.shape[0], cols = n.out.shape[1];  // out is (rows, cols) = X^T
                    for (int i = 0; i < rows; ++i)
                        for (int j = 0; j < cols; ++j)
                            dx[static_cast<std::size_t>(j) * rows + i] += g[static_cast<std::size_t>(i) * cols + j];
                }
                break;
            }
            case OpKind::Scale: {
                if (double* dx = gradbuf(n.in[0]))
                    for (std::size_t i = 0; i < n.gbuf.size(); ++i) dx[i] += g[i] * n.dattr;
                break;
            }
            case OpKind::Dot: {
                const Tensor& A = val(n.in[0]);
                const Tensor& B = val(n.in[1]);
                if (double* da = gradbuf(n.in[0]))
                    for (std::size_t i = 0; i < A.data.size(); ++i) da[i] += g[0] * B.data[i];
                if (double* db = gradbuf(n.in[1]))
                    for (std::size_t i = 0; i < B.data.size(); ++i) db[i] += g[0] * A.data[i];
                break;
            }
            case OpKind::MaskedFill: {
                if (double* dx = gradbuf(n.in[0]))
                    for (std::size_t i = 0; i < n.gbuf.size(); ++i)
                        if ((*n.mask)[i]) dx[i] += g[i];
                break;
            }
            case OpKind::Sum: {
                if (double* dx = gradbuf(n.in[0]))
                    for (std::size_t i = 0; i < val(n.in[0]).data.size(); ++i) dx[i] += g[0];
                break;
            }
        }
    }
};

using Var = Graph::Var;

}  // namespace actra
