#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>

#include "plrn/tensor.hpp"

namespace plrn {

// Raw row-major matrix kernels shared by forward and backward passes.
// C is M x N in all three.
inline void gemm_nn(int M, int K, int N, const double* A, const double* B, double* C, bool acc) {
    if (!acc) std::fill(C, C + static_cast<size_t>(M) * N, 0.0);
    for (int i = 0; i < M; ++i) {
        const double* a = A + static_cast<size_t>(i) * K;
        double* c = C + static_cast<size_t>(i) * N;
        for (int l = 0; l < K; ++l) {
            const double av = a[l];
            if (av == 0.0) continue;
            const double* b = B + static_cast<size_t>(l) * N;
            for (int j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

// C = A^T B with A stored K x M, B stored K x N.
inline void gemm_tn(int M, int K, int N, const double* A, const double* B, double* C, bool acc) {
    if (!acc) std::fill(C, C + static_cast<size_t>(M) * N, 0.0);
    for (int l = 0; l < K; ++l) {
        const double* a = A + static_cast<size_t>(l) * M;
        const double* b = B + static_cast<size_t>(l) * N;
        for (int i = 0; i < M; ++i) {
            const double av = a[i];
            if (av == 0.0) continue;
            double* c = C + static_cast<size_t>(i) * N;
            for (int j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

// C = A B^T with A stored M x K, B stored N x K.
inline void gemm_nt(int M, int K, int N, const double* A, const double* B, double* C, bool acc) {
    for (int i = 0; i < M; ++i) {
        const double* a = A + static_cast<size_t>(i) * K;
        double* c = C + static_cast<size_t>(i) * N;
        for (int j = 0; j < N; ++j) {
            const double* b = B + static_cast<size_t>(j) * K;
            double s = 0.0;
            for (int l = 0; l < K; ++l) s += a[l] * b[l];
            if (acc)
                c[j] += s;
            else
                c[j] = s;
        }
    }
}

/// Reverse-mode tape. Every operation appends one record; backward() replays
/// the records in reverse, visiting each exactly once. Append order is the
/// topological order because operands must already exist when an op runs.
class Tape {
public:
    /// When false, operations compute forward values only (used by the
    /// finite-difference oracle, evaluation and prediction).
    bool recording = true;

    size_t size() const { return records_.size(); }
    void clear() { records_.clear(); }

    /// Seeds d(root)/d(root) = 1 and accumulates gradients into every
    /// requires_grad tensor reachable from root.
    void backward(const TensorPtr& root) {
        if (root->size() != 1)
            throw ContractError("backward: root must be scalar, got " + shape_str(root->shape));
        if (records_.empty()) throw ContractError("backward: tape is empty");
        if (!root->requires_grad)
            throw ContractError("backward: root does not require gradients");
        root->grad[0] += 1.0;
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
    }

    // ---- binary elementwise ----

    TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
        require_same_shape(a, b, "add");
        auto out = Tensor::make(a->shape);
        for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] + b->data[i];
        if (track(out, {a, b})) {
            push([a, b, out] {
                if (a->requires_grad)
                    for (size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += out->grad[i];
                if (b->requires_grad)
                    for (size_t i = 0; i < out->grad.size(); ++i) b->grad[i] += out->grad[i];
            });
        }
        return out;
    }

    TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
        require_same_shape(a, b, "sub");
        auto out = Tensor::make(a->shape);
        for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] - b->data[i];
        if (track(out, {a, b})) {
            push([a, b, out] {
                if (a->requires_grad)
                    for (size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += out->grad[i];
                if (b->requires_grad)
                    for (size_t i = 0; i < out->grad.size(); ++i) b->grad[i] -= out->grad[i];
            });
        }
        return out;
    }

    TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
        require_same_shape(a, b, "mul");
        auto out = Tensor::make(a->shape);
        for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] * b->data[i];
        if (track(out, {a, b})) {
            push([a, b, out] {
                if (a->requires_grad)
                    for (size_t i = 0; i < out->grad.size(); ++i)
                        a->grad[i] += out->grad[i] * b->data[i];
                if (b->requires_grad)
                    for (size_t i = 0; i < out->grad.size(); ++i)
                        b->grad[i] += out->grad[i] * a->data[i];
            });
        }
        return out;
    }

    // Column broadcast: v is added to / multiplied into every column of M.
    // This is the only broadcast the network needs.

    TensorPtr add_colvec(const TensorPtr& m, const TensorPtr& v) {
        check_colvec(m, v, "add_colvec");
        const int r = m->rows(), c = m->cols();
        auto out = Tensor::make({r, c});
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) out->at(i, j) = m->at(i, j) + v->data[i];
        if (track(out, {m, v})) {
            push([m, v, out, r, c] {
                if (m->requires_grad)
                    for (size_t i = 0; i < out->grad.size(); ++i) m->grad[i] += out->grad[i];
                if (v->requires_grad)
                    for (int i = 0; i < r; ++i) {
                        double s = 0.0;
                        for (int j = 0; j < c; ++j) s += out->grad[static_cast<size_t>(i) * c + j];
                        v->grad[i] += s;
                    }
            });
        }
        return out;
    }

    TensorPtr mul_colvec(const TensorPtr& m, const TensorPtr& v) {
        check_colvec(m, v, "mul_colvec");
        const int r = m->rows(), c = m->cols();
        auto out = Tensor::make({r, c});
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) out->at(i, j) = m->at(i, j) * v->data[i];
        if (track(out, {m, v})) {
            push([m, v, out, r, c] {
                for (int i = 0; i < r; ++i) {
                    const size_t row = static_cast<size_t>(i) * c;
                    if (m->requires_grad)
                        for (int j = 0; j < c; ++j) m->grad[row + j] += out->grad[row + j] * v->data[i];
                    if (v->requires_grad) {
                        double s = 0.0;
                        for (int j = 0; j < c; ++j) s += out->grad[row + j] * m->data[row + j];
                        v->grad[i] += s;
                    }
                }
            });
        }
        return out;
    }

    // ---- unary elementwise ----

    TensorPtr relu(const TensorPtr& x) {
        return unary(
            x, [](double v) { return v > 0.0 ? v : 0.0; },
            // subgradient at exactly 0 is defined as 0
            [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
    }

    TensorPtr tanh_op(const TensorPtr& x) {
        return unary(
            x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
    }

    TensorPtr sigmoid(const TensorPtr& x) {
        return unary(
            x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
            [](double, double y) { return y * (1.0 - y); });
    }

    /// log with a floor: log(max(x, eps)). Clamped entries get zero gradient.
    TensorPtr log_guarded(const TensorPtr& x, double eps) {
        return unary(
            x, [eps](double v) { return std::log(v < eps ? eps : v); },
            [eps](double v, double) { return v < eps ? 0.0 : 1.0 / v; });
    }

    /// Smooth L1: 0.5 z^2 for |z| < 1, |z| - 0.5 otherwise. C1 at |z| = 1.
    TensorPtr smooth_l1(const TensorPtr& x) {
        return unary(
            x,
            [](double z) { return std::fabs(z) < 1.0 ? 0.5 * z * z : std::fabs(z) - 0.5; },
            [](double z, double) { return std::fabs(z) < 1.0 ? z : (z > 0.0 ? 1.0 : -1.0); });
    }

    TensorPtr scale(const TensorPtr& x, double c) {
        auto out = Tensor::make(x->shape);
        for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = c * x->data[i];
        if (track(out, {x})) {
            push([x, out, c] {
                for (size_t i = 0; i < out->grad.size(); ++i) x->grad[i] += c * out->grad[i];
            });
        }
        return out;
    }

    // ---- matrix products ----

    TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
        if (a->rank() != 2 || b->rank() != 2 || a->cols() != b->rows())
            throw ShapeError("matmul: incompatible shapes " + shape_str(a->shape) + " x " +
                             shape_str(b->shape));
        const int m = a->rows(), k = a->cols(), n = b->cols();
        auto out = Tensor::make({m, n});
        gemm_nn(m, k, n, a->data.data(), b->data.data(), out->data.data(), false);
        if (track(out, {a, b})) {
            push([a, b, out, m, k, n] {
                if (a->requires_grad)
                    gemm_nt(m, n, k, out->grad.data(), b->data.data(), a->grad.data(), true);
                if (b->requires_grad)
                    gemm_tn(k, m, n, a->data.data(), out->grad.data(), b->grad.data(), true);
            });
        }
        return out;
    }

    /// A^T B for A: d x m, B: d x n. Used by the non-local attention scores.
    TensorPtr matmul_tn(const TensorPtr& a, const TensorPtr& b) {
        if (a->rank() != 2 || b->rank() != 2 || a->rows() != b->rows())
            throw ShapeError("matmul_tn: incompatible shapes " + shape_str(a->shape) + " x " +
                             shape_str(b->shape));
        const int d = a->rows(), m = a->cols(), n = b->cols();
        auto out = Tensor::make({m, n});
        gemm_tn(m, d, n, a->data.data(), b->data.data(), out->data.data(), false);
        if (track(out, {a, b})) {
            push([a, b, out, d, m, n] {
                if (a->requires_grad)
                    gemm_nt(d, n, m, b->data.data(), out->grad.data(), a->grad.data(), true);
                if (b->requires_grad)
                    gemm_nn(d, m, n, a->data.data(), out->grad.data(), b->grad.data(), true);
            });
        }
        return out;
    }

    /// A B^T for A: m x k, B: n x k. Used to apply attention rows to values.
    TensorPtr matmul_nt(const TensorPtr& a, const TensorPtr& b) {
        if (a->rank() != 2 || b->rank() != 2 || a->cols() != b->cols())
            throw ShapeError("matmul_nt: incompatible shapes " + shape_str(a->shape) + " x " +
                             shape_str(b->shape));
        const int m = a->rows(), k = a->cols(), n = b->rows();
        auto out = Tensor::make({m, n});
        gemm_nt(m, k, n, a->data.data(), b->data.data(), out->data.data(), false);
        if (track(out, {a, b})) {
            push([a, b, out, m, k, n] {
                if (a->requires_grad)
                    gemm_nn(m, n, k, out->grad.data(), b->data.data(), a->grad.data(), true);
                if (b->requires_grad)
                    gemm_tn(n, m, k, out->grad.data(), a->data.data(), b->grad.data(), true);
            });
        }
        return out;
    }

    TensorPtr matvec(const TensorPtr& a, const TensorPtr& x) {
        if (a->rank() != 2 || x->rank() != 1 || a->cols() != static_cast<int>(x->data.size()))
            throw ShapeError("matvec: incompatible shapes " + shape_str(a->shape) + " x " +
                             shape_str(x->shape));
        const int m = a->rows(), k = a->cols();
        auto out = Tensor::make({m});
        for (int i = 0; i < m; ++i) {
            const double* row = a->data.data() + static_cast<size_t>(i) * k;
            double s = 0.0;
            for (int l = 0; l < k; ++l) s += row[l] * x->data[l];
            out->data[i] = s;
        }
        if (track(out, {a, x})) {
            push([a, x, out, m, k] {
                for (int i = 0; i < m; ++i) {
                    const double g = out->grad[i];
                    if (g == 0.0) continue;
                    const size_t row = static_cast<size_t>(i) * k;
                    if (a->requires_grad)
                        for (int l = 0; l < k; ++l) a->grad[row + l] += g * x->data[l];
                    if (x->requires_grad)
                        for (int l = 0; l < k; ++l) x->grad[l] += g * a->data[row + l];
                }
            });
        }
        return out;
    }

    /// w^T M for w: d, M: d x n -> n. One score per column.
    TensorPtr vecmat(const TensorPtr& w, const TensorPtr& m) {
        if (m->rank() != 2 || w->rank() != 1 || m->rows() != static_cast<int>(w->data.size()))
            throw ShapeError("vecmat: incompatible shapes " + shape_str(w->shape) + " x " +
                             shape_str(m->shape));
        const int d = m->rows(), n = m->cols();
        auto out = Tensor::make({n});
        for (int i = 0; i < d; ++i) {
            const double wv = w->data[i];
            if (wv == 0.0) continue;
            const double* row = m->data.data() + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) out->data[j] += wv * row[j];
        }
        if (track(out, {w, m})) {
            push([w, m, out, d, n] {
                for (int i = 0; i < d; ++i) {
                    const size_t row = static_cast<size_t>(i) * n;
                    if (w->requires_grad) {
                        double s = 0.0;
                        for (int j = 0; j < n; ++j) s += m->data[row + j] * out->grad[j];
                        w->grad[i] += s;
                    }
                    if (m->requires_grad) {
                        const double wv = w->data[i];
                        for (int j = 0; j < n; ++j) m->grad[row + j] += wv * out->grad[j];
                    }
                }
            });
        }
        return out;
    }

    TensorPtr dot(const TensorPtr& a, const TensorPtr& b) {
        require_same_shape(a, b, "dot");
        double s = 0.0;
        for (size_t i = 0; i < a->data.size(); ++i) s += a->data[i] * b->data[i];
        auto out = Tensor::scalar(s);
        if (track(out, {a, b})) {
            push([a, b, out] {
                const double g = out->grad[0];
                if (a->requires_grad)
                    for (size_t i = 0; i < a->data.size(); ++i) a->grad[i] += g * b->data[i];
                if (b->requires_grad)
                    for (size_t i = 0; i < b->data.size(); ++i) b->grad[i] += g * a->data[i];
            });
        }
        return out;
    }

    // ---- reductions / indexing ----

    TensorPtr sum(const TensorPtr& x) {
        double s = 0.0;
        for (double v : x->data) s += v;
        auto out = Tensor::scalar(s);
        if (track(out, {x})) {
            push([x, out] {
                const double g = out->grad[0];
                for (size_t i = 0; i < x->data.size(); ++i) x->grad[i] += g;
            });
        }
        return out;
    }

    TensorPtr element(const TensorPtr& v, int i) {
        if (i < 0 || i >= static_cast<int>(v->data.size()))
            throw ShapeError("element: index " + std::to_string(i) + " out of range for " +
                             shape_str(v->shape));
        auto out = Tensor::scalar(v->data[i]);
        if (track(out, {v})) {
            push([v, out, i] { v->grad[i] += out->grad[0]; });
        }
        return out;
    }

    TensorPtr concat(const TensorPtr& a, const TensorPtr& b) {
        if (a->rank() != 1 || b->rank() != 1)
            throw ShapeError("concat: expects vectors, got " + shape_str(a->shape) + " and " +
                             shape_str(b->shape));
        const int m = static_cast<int>(a->data.size()), n = static_cast<int>(b->data.size());
        auto out = Tensor::make({m + n});
        std::copy(a->data.begin(), a->data.end(), out->data.begin());
        std::copy(b->data.begin(), b->data.end(), out->data.begin() + m);
        if (track(out, {a, b})) {
            push([a, b, out, m, n] {
                if (a->requires_grad)
                    for (int i = 0; i < m; ++i) a->grad[i] += out->grad[i];
                if (b->requires_grad)
                    for (int i = 0; i < n; ++i) b->grad[i] += out->grad[m + i];
            });
        }
        return out;
    }

    TensorPtr slice_rows(const TensorPtr& m, int r0, int nrows) {
        if (m->rank() != 2 || r0 < 0 || nrows <= 0 || r0 + nrows > m->rows())
            throw ShapeError("slice_rows: rows [" + std::to_string(r0) + ", " +
                             std::to_string(r0 + nrows) + ") of " + shape_str(m->shape));
        const int c = m->cols();
        auto out = Tensor::make({nrows, c});
        std::copy(m->data.begin() + static_cast<size_t>(r0) * c,
                  m->data.begin() + static_cast<size_t>(r0 + nrows) * c, out->data.begin());
        if (track(out, {m})) {
            push([m, out, r0, nrows, c] {
                const size_t base = static_cast<size_t>(r0) * c;
                for (size_t i = 0; i < static_cast<size_t>(nrows) * c; ++i)
                    m->grad[base + i] += out->grad[i];
            });
        }
        return out;
    }

    TensorPtr concat_rows(const std::vector<TensorPtr>& parts) {
        if (parts.empty()) throw ContractError("concat_rows: no inputs");
        const int c = parts[0]->cols();
        int r = 0;
        for (const auto& p : parts) {
            if (p->rank() != 2 || p->cols() != c)
                throw ShapeError("concat_rows: column mismatch at " + shape_str(p->shape));
            r += p->rows();
        }
        auto out = Tensor::make({r, c});
        size_t off = 0;
        for (const auto& p : parts) {
            std::copy(p->data.begin(), p->data.end(), out->data.begin() + off);
            off += p->data.size();
        }
        bool any = false;
        for (const auto& p : parts) any = any || p->requires_grad;
        if (recording && any) {
            out->set_requires_grad();
            push([parts, out] {
                size_t off = 0;
                for (const auto& p : parts) {
                    if (p->requires_grad)
                        for (size_t i = 0; i < p->data.size(); ++i) p->grad[i] += out->grad[off + i];
                    off += p->data.size();
                }
            });
        }
        return out;
    }

    TensorPtr stack_columns(const std::vector<TensorPtr>& cols) {
        if (cols.empty()) throw ContractError("stack_columns: no inputs");
        const int d = static_cast<int>(cols[0]->data.size());
        const int n = static_cast<int>(cols.size());
        for (const auto& v : cols)
            if (v->rank() != 1 || static_cast<int>(v->data.size()) != d)
                throw ShapeError("stack_columns: length mismatch at " + shape_str(v->shape));
        auto out = Tensor::make({d, n});
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < d; ++i) out->at(i, j) = cols[j]->data[i];
        bool any = false;
        for (const auto& v : cols) any = any || v->requires_grad;
        if (recording && any) {
            out->set_requires_grad();
            push([cols, out, d, n] {
                for (int j = 0; j < n; ++j) {
                    if (!cols[j]->requires_grad) continue;
                    for (int i = 0; i < d; ++i)
                        cols[j]->grad[i] += out->grad[static_cast<size_t>(i) * n + j];
                }
            });
        }
        return out;
    }

    TensorPtr column(const TensorPtr& m, int j) {
        if (m->rank() != 2 || j < 0 || j >= m->cols())
            throw ShapeError("column: index " + std::to_string(j) + " of " + shape_str(m->shape));
        const int r = m->rows(), c = m->cols();
        auto out = Tensor::make({r});
        for (int i = 0; i < r; ++i) out->data[i] = m->at(i, j);
        if (track(out, {m})) {
            push([m, out, r, c, j] {
                for (int i = 0; i < r; ++i) m->grad[static_cast<size_t>(i) * c + j] += out->grad[i];
            });
        }
        return out;
    }

    /// Embedding lookup: out column n is column indices[n] of m. Duplicate
    /// indices accumulate gradient into the same source column.
    TensorPtr gather_columns(const TensorPtr& m, const std::vector<int>& indices) {
        if (m->rank() != 2) throw ShapeError("gather_columns: expects matrix");
        const int r = m->rows(), c = m->cols(), n = static_cast<int>(indices.size());
        if (n == 0) throw ContractError("gather_columns: empty index list");
        for (int idx : indices)
            if (idx < 0 || idx >= c)
                throw ShapeError("gather_columns: index " + std::to_string(idx) + " out of range for " +
                                 shape_str(m->shape));
        auto out = Tensor::make({r, n});
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < n; ++j) out->at(i, j) = m->at(i, indices[j]);
        if (track(out, {m})) {
            push([m, out, indices, r, c, n] {
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < n; ++j)
                        m->grad[static_cast<size_t>(i) * c + indices[j]] +=
                            out->grad[static_cast<size_t>(i) * n + j];
            });
        }
        return out;
    }

    /// Zeroes columns whose mask entry is false; gradients of those columns
    /// are dropped. Keeps padded segments exactly zero through the stack.
    TensorPtr mask_columns(const TensorPtr& m, const std::vector<uint8_t>& keep) {
        if (m->rank() != 2 || static_cast<int>(keep.size()) != m->cols())
            throw ShapeError("mask_columns: mask length " + std::to_string(keep.size()) + " for " +
                             shape_str(m->shape));
        const int r = m->rows(), c = m->cols();
        auto out = Tensor::make({r, c});
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) out->at(i, j) = keep[j] ? m->at(i, j) : 0.0;
        if (track(out, {m})) {
            push([m, out, keep, r, c] {
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j)
                        if (keep[j]) m->grad[static_cast<size_t>(i) * c + j] +=
                            out->grad[static_cast<size_t>(i) * c + j];
            });
        }
        return out;
    }

    // ---- softmax ----

    /// Numerically stable softmax. rank-1: normalizes the whole vector.
    /// rank-2: axis=1 normalizes each row, axis=0 each column. `keep`, when
    /// given, masks positions along the normalized extent: masked entries are
    /// exactly 0 in the output and receive no gradient.
    TensorPtr softmax(const TensorPtr& x, int axis = 0,
                      const std::vector<uint8_t>* keep = nullptr) {
        if (x->rank() == 1) {
            auto out = Tensor::make(x->shape);
            softmax_slice(x->data.data(), out->data.data(), static_cast<int>(x->data.size()), 1,
                          keep);
            attach_softmax_grad(x, out, static_cast<int>(x->data.size()), 1, 1, keep);
            return out;
        }
        if (x->rank() != 2) throw ShapeError("softmax: rank must be 1 or 2");
        const int r = x->rows(), c = x->cols();
        auto out = Tensor::make(x->shape);
        if (axis == 1) {
            for (int i = 0; i < r; ++i)
                softmax_slice(x->data.data() + static_cast<size_t>(i) * c,
                              out->data.data() + static_cast<size_t>(i) * c, c, 1, keep);
            attach_softmax_grad(x, out, c, 1, r, keep);
        } else if (axis == 0) {
            for (int j = 0; j < c; ++j)
                softmax_slice(x->data.data() + j, out->data.data() + j, r, c, keep);
            attach_softmax_grad_cols(x, out, r, c, keep);
        } else {
            throw ShapeError("softmax: axis must be 0 or 1");
        }
        return out;
    }

    /// Same-length 1-D convolution: x is d_in x T, kernels d_out x d_in x k
    /// (k odd), zero padding (k-1)/2 on both ends.
    TensorPtr conv1d_same(const TensorPtr& x, const TensorPtr& kernels) {
        if (x->rank() != 2 || kernels->rank() != 3)
            throw ShapeError("conv1d_same: expects d_in x T input and d_out x d_in x k kernels");
        const int din = x->rows(), T = x->cols();
        const int dout = kernels->shape[0], kin = kernels->shape[1], k = kernels->shape[2];
        if (kin != din)
            throw ShapeError("conv1d_same: kernel d_in " + std::to_string(kin) +
                             " != input d_in " + std::to_string(din));
        if (k % 2 == 0) throw ConfigError("conv1d_same: kernel width must be odd, got " + std::to_string(k));
        const int pad = (k - 1) / 2;
        auto out = Tensor::make({dout, T});
        for (int o = 0; o < dout; ++o) {
            double* orow = out->data.data() + static_cast<size_t>(o) * T;
            for (int i = 0; i < din; ++i) {
                const double* xrow = x->data.data() + static_cast<size_t>(i) * T;
                const double* krow =
                    kernels->data.data() + (static_cast<size_t>(o) * din + i) * k;
                for (int u = 0; u < k; ++u) {
                    const double w = krow[u];
                    if (w == 0.0) continue;
                    const int shift = u - pad;
                    const int t0 = std::max(0, -shift), t1 = std::min(T, T - shift);
                    for (int t = t0; t < t1; ++t) orow[t] += w * xrow[t + shift];
                }
            }
        }
        if (track(out, {x, kernels})) {
            push([x, kernels, out, din, dout, T, k, pad] {
                for (int o = 0; o < dout; ++o) {
                    const double* ograd = out->grad.data() + static_cast<size_t>(o) * T;
                    for (int i = 0; i < din; ++i) {
                        const double* xrow = x->data.data() + static_cast<size_t>(i) * T;
                        double* xg = x->requires_grad
                                         ? x->grad.data() + static_cast<size_t>(i) * T
                                         : nullptr;
                        const size_t kbase = (static_cast<size_t>(o) * din + i) * k;
                        for (int u = 0; u < k; ++u) {
                            const int shift = u - pad;
                            const int t0 = std::max(0, -shift), t1 = std::min(T, T - shift);
                            if (kernels->requires_grad) {
                                double s = 0.0;
                                for (int t = t0; t < t1; ++t) s += ograd[t] * xrow[t + shift];
                                kernels->grad[kbase + u] += s;
                            }
                            if (xg) {
                                const double w = kernels->data[kbase + u];
                                if (w != 0.0)
                                    for (int t = t0; t < t1; ++t) xg[t + shift] += w * ograd[t];
                            }
                        }
                    }
                }
            });
        }
        return out;
    }

private:
    std::vector<std::function<void()>> records_;

    void push(std::function<void()> fn) { records_.push_back(std::move(fn)); }

    bool track(const TensorPtr& out, std::initializer_list<TensorPtr> inputs) {
        if (!recording) return false;
        bool any = false;
        for (const auto& t : inputs) any = any || t->requires_grad;
        if (any) out->set_requires_grad();
        return any;
    }

    void check_colvec(const TensorPtr& m, const TensorPtr& v, const char* op) {
        if (m->rank() != 2 || v->rank() != 1 ||
            m->rows() != static_cast<int>(v->data.size()))
            throw ShapeError(std::string(op) + ": matrix " + shape_str(m->shape) +
                             " vs column vector " + shape_str(v->shape));
    }

    template <typename Fwd, typename Dfn>
    TensorPtr unary(const TensorPtr& x, Fwd fwd, Dfn dfn) {
        auto out = Tensor::make(x->shape);
        for (size_t i = 0; i < x->data.size(); ++i) out->data[i] = fwd(x->data[i]);
        if (track(out, {x})) {
            push([x, out, dfn] {
                for (size_t i = 0; i < x->data.size(); ++i)
                    x->grad[i] += out->grad[i] * dfn(x->data[i], out->data[i]);
            });
        }
        return out;
    }

    static void softmax_slice(const double* x, double* y, int n, int stride,
                              const std::vector<uint8_t>* keep) {
        if (keep && static_cast<int>(keep->size()) != n)
            throw ShapeError("softmax: mask length " + std::to_string(keep->size()) +
                             " for extent " + std::to_string(n));
        double mx = -std::numeric_limits<double>::infinity();
        int kept = 0;
        for (int i = 0; i < n; ++i)
            if (!keep || (*keep)[i]) {
                mx = std::max(mx, x[static_cast<size_t>(i) * stride]);
                ++kept;
            }
        if (kept == 0) throw MaskError("softmax: all entries masked along axis");
        if (!std::isfinite(mx)) {
            // NaN (or all -inf) inputs: propagate instead of misreporting a mask
            for (int i = 0; i < n; ++i) {
                const size_t off = static_cast<size_t>(i) * stride;
                y[off] = (!keep || (*keep)[i]) ? std::numeric_limits<double>::quiet_NaN() : 0.0;
            }
            return;
        }
        double s = 0.0;
        for (int i = 0; i < n; ++i) {
            const size_t off = static_cast<size_t>(i) * stride;
            if (!keep || (*keep)[i]) {
                y[off] = std::exp(x[off] - mx);
                s += y[off];
            } else {
                y[off] = 0.0;
            }
        }
        for (int i = 0; i < n; ++i) {
            const size_t off = static_cast<size_t>(i) * stride;
            if (!keep || (*keep)[i]) y[off] /= s;
        }
    }

    // Rows (or the whole rank-1 vector when nslices == 1, extent n, stride 1).
    void attach_softmax_grad(const TensorPtr& x, const TensorPtr& out, int n, int stride,
                             int nslices, const std::vector<uint8_t>* keep) {
        if (!track(out, {x})) return;
        std::optional<std::vector<uint8_t>> mask;
        if (keep) mask = *keep;
        push([x, out, n, stride, nslices, mask] {
            for (int s = 0; s < nslices; ++s) {
                const size_t base = static_cast<size_t>(s) * n * stride;
                double inner = 0.0;
                for (int i = 0; i < n; ++i) {
                    const size_t off = base + static_cast<size_t>(i) * stride;
                    inner += out->grad[off] * out->data[off];
                }
                for (int i = 0; i < n; ++i) {
                    if (mask && !(*mask)[i]) continue;
                    const size_t off = base + static_cast<size_t>(i) * stride;
                    x->grad[off] += out->data[off] * (out->grad[off] - inner);
                }
            }
        });
    }

    // Column-wise softmax gradient for rank-2 axis=0.
    void attach_softmax_grad_cols(const TensorPtr& x, const TensorPtr& out, int r, int c,
                                  const std::vector<uint8_t>* keep) {
        if (!track(out, {x})) return;
        std::optional<std::vector<uint8_t>> mask;
        if (keep) mask = *keep;
        push([x, out, r, c, mask] {
            for (int j = 0; j < c; ++j) {
                double inner = 0.0;
                for (int i = 0; i < r; ++i) {
                    const size_t off = static_cast<size_t>(i) * c + j;
                    inner += out->grad[off] * out->data[off];
                }
                for (int i = 0; i < r; ++i) {
                    if (mask && !(*mask)[i]) continue;
                    const size_t off = static_cast<size_t>(i) * c + j;
                    x->grad[off] += out->data[off] * (out->grad[off] - inner);
                }
            }
        });
    }
};

}  // namespace plrn
