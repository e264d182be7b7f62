#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "mminforec/dropout.hpp"
#include "mminforec/tensor.hpp"

namespace mminforec {

// Handle into a Tape. Only meaningful for the tape that produced it.
struct ValueRef {
    int idx = -1;
    bool valid() const { return idx >= 0; }
};

// Reverse-mode tape. Recording is eager: every op computes its value
// immediately and pushes one node; creation order is the topological order
// and backward() walks it in exact reverse. A tape is single-use: build,
// read values, run backward once.
//
// With grads disabled (evaluation), param() degrades to constant() and no
// backward closures are recorded.
class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // --- leaves ---------------------------------------------------------

    // Leaf bound to an external parameter tensor; backward() accumulates
    // into t.grad (allocated and zeroed here if absent).
    ValueRef param(Tensor& t) {
        check_finite_input(t, "param");
        if (!grad_enabled_) return constant(t);
        t.ensure_grad();
        ValueRef v = push("param", t);
        nodes_[v.idx].bound = &t;
        return v;
    }

    ValueRef constant(Tensor t) {
        check_finite_input(t, "constant");
        return push("constant", std::move(t), /*needs_grad=*/false);
    }

    // --- primitives ------------------------------------------------------

    ValueRef matmul(ValueRef a, ValueRef b) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        if (A.cols != B.rows)
            fail("matmul", "inner dimensions differ: " + A.shape_str() + " * " + B.shape_str());
        Tensor C(A.rows, B.cols);
        for (int i = 0; i < A.rows; ++i)
            for (int k = 0; k < A.cols; ++k) {
                double aik = A.at(i, k);
                if (aik == 0.0) continue;
                const double* brow = &B.data[static_cast<size_t>(k) * B.cols];
                double* crow = &C.data[static_cast<size_t>(i) * C.cols];
                for (int j = 0; j < B.cols; ++j) crow[j] += aik * brow[j];
            }
        ValueRef out = push("matmul", std::move(C), needs(a) || needs(b));
        record(out, [this, a, b, out] {
            const Tensor& A2 = val(a);
            const Tensor& B2 = val(b);
            const std::vector<double>& g = grad_of(out);
            if (needs(a)) {
                std::vector<double>& ga = grad_slot(a);
                // dA += dC * B^T
                for (int i = 0; i < A2.rows; ++i)
                    for (int k = 0; k < A2.cols; ++k) {
                        double s = 0.0;
                        const double* grow = &g[static_cast<size_t>(i) * B2.cols];
                        const double* brow = &B2.data[static_cast<size_t>(k) * B2.cols];
                        for (int j = 0; j < B2.cols; ++j) s += grow[j] * brow[j];
                        ga[static_cast<size_t>(i) * A2.cols + k] += s;
                    }
            }
            if (needs(b)) {
                std::vector<double>& gb = grad_slot(b);
                // dB += A^T * dC
                for (int i = 0; i < A2.rows; ++i)
                    for (int k = 0; k < A2.cols; ++k) {
                        double aik = A2.at(i, k);
                        if (aik == 0.0) continue;
                        const double* grow = &g[static_cast<size_t>(i) * B2.cols];
                        double* gbrow = &gb[static_cast<size_t>(k) * B2.cols];
                        for (int j = 0; j < B2.cols; ++j) gbrow[j] += aik * grow[j];
                    }
            }
        });
        return out;
    }

    // C = A * B^T, with A (n,k) and B (m,k) -> C (n,m). Dot-product scoring.
    ValueRef matmul_nt(ValueRef a, ValueRef b) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        if (A.cols != B.cols)
            fail("matmul_nt", "column counts differ: " + A.shape_str() + " vs " + B.shape_str());
        Tensor C(A.rows, B.rows);
        for (int i = 0; i < A.rows; ++i)
            for (int j = 0; j < B.rows; ++j) {
                double s = 0.0;
                const double* arow = &A.data[static_cast<size_t>(i) * A.cols];
                const double* brow = &B.data[static_cast<size_t>(j) * B.cols];
                for (int k = 0; k < A.cols; ++k) s += arow[k] * brow[k];
                C.at(i, j) = s;
            }
        ValueRef out = push("matmul_nt", std::move(C), needs(a) || needs(b));
        record(out, [this, a, b, out] {
            const Tensor& A2 = val(a);
            const Tensor& B2 = val(b);
            const std::vector<double>& g = grad_of(out);
            if (needs(a)) {
                std::vector<double>& ga = grad_slot(a);
                // dA += dC * B
                for (int i = 0; i < A2.rows; ++i)
                    for (int j = 0; j < B2.rows; ++j) {
                        double gij = g[static_cast<size_t>(i) * B2.rows + j];
                        if (gij == 0.0) continue;
                        const double* brow = &B2.data[static_cast<size_t>(j) * B2.cols];
                        double* garow = &ga[static_cast<size_t>(i) * A2.cols];
                        for (int k = 0; k < A2.cols; ++k) garow[k] += gij * brow[k];
                    }
            }
            if (needs(b)) {
                std::vector<double>& gb = grad_slot(b);
                // dB += dC^T * A
                for (int i = 0; i < A2.rows; ++i)
                    for (int j = 0; j < B2.rows; ++j) {
                        double gij = g[static_cast<size_t>(i) * B2.rows + j];
                        if (gij == 0.0) continue;
                        const double* arow = &A2.data[static_cast<size_t>(i) * A2.cols];
                        double* gbrow = &gb[static_cast<size_t>(j) * B2.cols];
                        for (int k = 0; k < A2.cols; ++k) gbrow[k] += gij * arow[k];
                    }
            }
        });
        return out;
    }

    ValueRef add(ValueRef a, ValueRef b) { return binary_elementwise("add", a, b, 1.0); }
    ValueRef sub(ValueRef a, ValueRef b) { return binary_elementwise("sub", a, b, -1.0); }

    // (n,m) + broadcast row (1,m); bias gradient is the column sum.
    ValueRef add_rowvec(ValueRef a, ValueRef bias) {
        const Tensor& A = val(a);
        const Tensor& B = val(bias);
        if (B.rows != 1 || B.cols != A.cols)
            fail("add_rowvec", "bias " + B.shape_str() + " does not broadcast over " + A.shape_str());
        Tensor C = A;
        C.grad.clear();
        for (int i = 0; i < A.rows; ++i)
            for (int j = 0; j < A.cols; ++j) C.at(i, j) += B.at(0, j);
        ValueRef out = push("add_rowvec", std::move(C), needs(a) || needs(bias));
        record(out, [this, a, bias, out] {
            const std::vector<double>& g = grad_of(out);
            if (needs(a)) {
                std::vector<double>& ga = grad_slot(a);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (needs(bias)) {
                std::vector<double>& gb = grad_slot(bias);
                const Tensor& A2 = val(a);
                for (int i = 0; i < A2.rows; ++i)
                    for (int j = 0; j < A2.cols; ++j) gb[static_cast<size_t>(j)] += g[static_cast<size_t>(i) * A2.cols + j];
            }
        });
        return out;
    }

    ValueRef mul(ValueRef a, ValueRef b) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        if (!A.same_shape(B))
            fail("mul", "shape mismatch: " + A.shape_str() + " vs " + B.shape_str());
        Tensor C(A.rows, A.cols);
        for (size_t i = 0; i < C.data.size(); ++i) C.data[i] = A.data[i] * B.data[i];
        ValueRef out = push("mul", std::move(C), needs(a) || needs(b));
        record(out, [this, a, b, out] {
            const std::vector<double>& g = grad_of(out);
            const Tensor& A2 = val(a);
            const Tensor& B2 = val(b);
            if (needs(a)) {
                std::vector<double>& ga = grad_slot(a);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B2.data[i];
            }
            if (needs(b)) {
                std::vector<double>& gb = grad_slot(b);
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A2.data[i];
            }
        });
        return out;
    }

    // alpha * x + beta, elementwise.
    ValueRef affine(ValueRef a, double alpha, double beta) {
        const Tensor& A = val(a);
        Tensor C(A.rows, A.cols);
        for (size_t i = 0; i < C.data.size(); ++i) C.data[i] = alpha * A.data[i] + beta;
        ValueRef out = push("affine", std::move(C), needs(a));
        record(out, [this, a, out, alpha] {
            if (!needs(a)) return;
            const std::vector<double>& g = grad_of(out);
            std::vector<double>& ga = grad_slot(a);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += alpha * g[i];
        });
        return out;
    }

    ValueRef scale(ValueRef a, double s) { return affine(a, s, 0.0); }

    ValueRef relu(ValueRef a) {
        for (double v : val(a).data) min_abs_relu_input_ = std::min(min_abs_relu_input_, std::fabs(v));
        return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
                     [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
    }

    // Distance of the closest relu input to its kink over the whole tape.
    // Finite-difference oracles need this to exceed the probe step.
    double min_abs_relu_input() const { return min_abs_relu_input_; }

    ValueRef sigmoid(ValueRef a) {
        return unary("sigmoid", a,
                     [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                                    : std::exp(x) / (1.0 + std::exp(x)); },
                     [](double, double y) { return y * (1.0 - y); });
    }

    ValueRef tanh(ValueRef a) {
        return unary("tanh", a, [](double x) { return std::tanh(x); },
                     [](double, double y) { return 1.0 - y * y; });
    }

    // Exact gaussian-CDF GELU: x * Phi(x).
    ValueRef gelu(ValueRef a) {
        auto phi = [](double x) { return 0.5 * (1.0 + std::erf(x * 0.7071067811865475)); };
        return unary("gelu", a, [phi](double x) { return x * phi(x); },
                     [phi](double x, double) {
                         return phi(x) + x * std::exp(-0.5 * x * x) * 0.3989422804014327;
                     });
    }

    // log(1 + e^x), the stable form of -log(sigmoid(-x)).
    ValueRef softplus(ValueRef a) {
        return unary("softplus", a,
                     [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); },
                     [](double x, double) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                                            : std::exp(x) / (1.0 + std::exp(x)); });
    }

    // Row-wise stable softmax. Rows sum to 1 and entries are positive for
    // finite inputs; entries pushed to -1e30 by an additive mask underflow
    // to exactly 0.
    ValueRef softmax_rows(ValueRef a) {
        const Tensor& A = val(a);
        Tensor Y(A.rows, A.cols);
        for (int i = 0; i < A.rows; ++i) {
            const double* x = &A.data[static_cast<size_t>(i) * A.cols];
            double* y = &Y.data[static_cast<size_t>(i) * A.cols];
            double m = x[0];
            for (int j = 1; j < A.cols; ++j) m = std::max(m, x[j]);
            double denom = 0.0;
            for (int j = 0; j < A.cols; ++j) {
                y[j] = std::exp(x[j] - m);
                denom += y[j];
            }
            for (int j = 0; j < A.cols; ++j) y[j] /= denom;
        }
        ValueRef out = push("softmax", std::move(Y), needs(a));
        record(out, [this, a, out] {
            if (!needs(a)) return;
            const Tensor& Y2 = val(out);
            const std::vector<double>& g = grad_of(out);
            std::vector<double>& ga = grad_slot(a);
            for (int i = 0; i < Y2.rows; ++i) {
                const double* y = &Y2.data[static_cast<size_t>(i) * Y2.cols];
                const double* gr = &g[static_cast<size_t>(i) * Y2.cols];
                double dot = 0.0;
                for (int j = 0; j < Y2.cols; ++j) dot += y[j] * gr[j];
                double* gar = &ga[static_cast<size_t>(i) * Y2.cols];
                for (int j = 0; j < Y2.cols; ++j) gar[j] += y[j] * (gr[j] - dot);
            }
        });
        return out;
    }

    // Smallest per-row std seen by any layer norm on this tape. Like the
    // relu margin, finite-difference probes need rows that are not nearly
    // constant (the normalizer's curvature scales as 1/std^2).
    double min_layer_norm_row_std() const { return min_ln_row_std_; }

    // Row-wise layer norm with per-column gain/shift vectors (1,m).
    ValueRef layer_norm_rows(ValueRef x, ValueRef gain, ValueRef shift, double eps = 1e-5) {
        const Tensor& X = val(x);
        const Tensor& G = val(gain);
        const Tensor& S = val(shift);
        if (G.rows != 1 || G.cols != X.cols || S.rows != 1 || S.cols != X.cols)
            fail("layer_norm", "gain/shift must be 1x" + std::to_string(X.cols));
        int m = X.cols;
        Tensor Y(X.rows, m);
        std::vector<double> inv_std(static_cast<size_t>(X.rows));
        std::vector<double> xhat(X.data.size());
        for (int i = 0; i < X.rows; ++i) {
            const double* xr = &X.data[static_cast<size_t>(i) * m];
            double mean = 0.0;
            for (int j = 0; j < m; ++j) mean += xr[j];
            mean /= m;
            double var = 0.0;
            for (int j = 0; j < m; ++j) var += (xr[j] - mean) * (xr[j] - mean);
            var /= m;
            min_ln_row_std_ = std::min(min_ln_row_std_, std::sqrt(var));
            double is = 1.0 / std::sqrt(var + eps);
            inv_std[static_cast<size_t>(i)] = is;
            for (int j = 0; j < m; ++j) {
                double h = (xr[j] - mean) * is;
                xhat[static_cast<size_t>(i) * m + j] = h;
                Y.at(i, j) = h * G.at(0, j) + S.at(0, j);
            }
        }
        ValueRef out = push("layer_norm", std::move(Y), needs(x) || needs(gain) || needs(shift));
        record(out, [this, x, gain, shift, out, inv_std = std::move(inv_std), xhat = std::move(xhat)] {
            const Tensor& X2 = val(x);
            const Tensor& G2 = val(gain);
            const std::vector<double>& g = grad_of(out);
            int m2 = X2.cols;
            if (needs(gain)) {
                std::vector<double>& gg = grad_slot(gain);
                for (int i = 0; i < X2.rows; ++i)
                    for (int j = 0; j < m2; ++j)
                        gg[static_cast<size_t>(j)] += g[static_cast<size_t>(i) * m2 + j] * xhat[static_cast<size_t>(i) * m2 + j];
            }
            if (needs(shift)) {
                std::vector<double>& gs = grad_slot(shift);
                for (int i = 0; i < X2.rows; ++i)
                    for (int j = 0; j < m2; ++j) gs[static_cast<size_t>(j)] += g[static_cast<size_t>(i) * m2 + j];
            }
            if (needs(x)) {
                std::vector<double>& gx = grad_slot(x);
                for (int i = 0; i < X2.rows; ++i) {
                    const double* gr = &g[static_cast<size_t>(i) * m2];
                    const double* hr = &xhat[static_cast<size_t>(i) * m2];
                    double sum_gh = 0.0, sum_ghh = 0.0;
                    for (int j = 0; j < m2; ++j) {
                        double gh = gr[j] * G2.at(0, j);
                        sum_gh += gh;
                        sum_ghh += gh * hr[j];
                    }
                    double is = inv_std[static_cast<size_t>(i)];
                    for (int j = 0; j < m2; ++j) {
                        double gh = gr[j] * G2.at(0, j);
                        gx[static_cast<size_t>(i) * m2 + j] += is * (gh - sum_gh / m2 - hr[j] * sum_ghh / m2);
                    }
                }
            }
        });
        return out;
    }

    // Gather rows of a table by id. With grad_skip_row0 the backward pass
    // never scatters into row 0 (reserved padding row of embedding tables).
    ValueRef gather_rows(ValueRef table, std::vector<int> ids, bool grad_skip_row0 = false) {
        const Tensor& T = val(table);
        for (int id : ids)
            if (id < 0 || id >= T.rows)
                fail("gather_rows", "id " + std::to_string(id) + " out of range [0," + std::to_string(T.rows) + ")");
        if (ids.empty()) fail("gather_rows", "empty id list");
        Tensor Y(static_cast<int>(ids.size()), T.cols);
        for (size_t i = 0; i < ids.size(); ++i)
            std::copy_n(&T.data[static_cast<size_t>(ids[i]) * T.cols], T.cols, &Y.data[i * T.cols]);
        ValueRef out = push("gather_rows", std::move(Y), needs(table));
        record(out, [this, table, out, ids = std::move(ids), grad_skip_row0] {
            if (!needs(table)) return;
            const Tensor& T2 = val(table);
            const std::vector<double>& g = grad_of(out);
            std::vector<double>& gt = grad_slot(table);
            for (size_t i = 0; i < ids.size(); ++i) {
                if (grad_skip_row0 && ids[i] == 0) continue;
                double* dst = &gt[static_cast<size_t>(ids[i]) * T2.cols];
                const double* src = &g[i * T2.cols];
                for (int j = 0; j < T2.cols; ++j) dst[j] += src[j];
            }
        });
        return out;
    }

    // Multiply by a deterministic dropout pattern. rate 0 passes through
    // without recording a node.
    ValueRef dropout(ValueRef a, const DropoutMask& mask) {
        if (mask.identity()) return a;
        const Tensor& A = val(a);
        std::vector<double> pat = mask.pattern(A.size());
        Tensor Y(A.rows, A.cols);
        for (size_t i = 0; i < Y.data.size(); ++i) Y.data[i] = A.data[i] * pat[i];
        ValueRef out = push("dropout", std::move(Y), needs(a));
        record(out, [this, a, out, pat = std::move(pat)] {
            if (!needs(a)) return;
            const std::vector<double>& g = grad_of(out);
            std::vector<double>& ga = grad_slot(a);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pat[i];
        });
        return out;
    }

    ValueRef concat_rows(const std::vector<ValueRef>& parts) {
        if (parts.empty()) fail("concat_rows", "no inputs");
        int cols = val(parts[0]).cols;
        int rows = 0;
        bool ng = false;
        for (ValueRef p : parts) {
            const Tensor& T = val(p);
            if (T.cols != cols) fail("concat_rows", "column mismatch: " + T.shape_str());
            rows += T.rows;
            ng = ng || needs(p);
        }
        Tensor Y(rows, cols);
        size_t off = 0;
        for (ValueRef p : parts) {
            const Tensor& T = val(p);
            std::copy(T.data.begin(), T.data.end(), Y.data.begin() + static_cast<long>(off));
            off += T.data.size();
        }
        ValueRef out = push("concat_rows", std::move(Y), ng);
        record(out, [this, out, parts] {
            const std::vector<double>& g = grad_of(out);
            size_t off2 = 0;
            for (ValueRef p : parts) {
                const Tensor& T = val(p);
                if (needs(p)) {
                    std::vector<double>& gp = grad_slot(p);
                    for (size_t i = 0; i < T.data.size(); ++i) gp[i] += g[off2 + i];
                }
                off2 += T.data.size();
            }
        });
        return out;
    }

    ValueRef concat_cols(const std::vector<ValueRef>& parts) {
        if (parts.empty()) fail("concat_cols", "no inputs");
        int rows = val(parts[0]).rows;
        int cols = 0;
        bool ng = false;
        for (ValueRef p : parts) {
            const Tensor& T = val(p);
            if (T.rows != rows) fail("concat_cols", "row mismatch: " + T.shape_str());
            cols += T.cols;
            ng = ng || needs(p);
        }
        Tensor Y(rows, cols);
        int coff = 0;
        for (ValueRef p : parts) {
            const Tensor& T = val(p);
            for (int i = 0; i < rows; ++i)
                std::copy_n(&T.data[static_cast<size_t>(i) * T.cols], T.cols,
                            &Y.data[static_cast<size_t>(i) * cols + coff]);
            coff += T.cols;
        }
        ValueRef out = push("concat_cols", std::move(Y), ng);
        record(out, [this, out, parts, cols] {
            const std::vector<double>& g = grad_of(out);
            int coff2 = 0;
            for (ValueRef p : parts) {
                const Tensor& T = val(p);
                if (needs(p)) {
                    std::vector<double>& gp = grad_slot(p);
                    for (int i = 0; i < T.rows; ++i)
                        for (int j = 0; j < T.cols; ++j)
                            gp[static_cast<size_t>(i) * T.cols + j] += g[static_cast<size_t>(i) * cols + coff2 + j];
                }
                coff2 += T.cols;
            }
        });
        return out;
    }

    ValueRef slice_rows(ValueRef a, int row0, int nrows) {
        const Tensor& A = val(a);
        if (row0 < 0 || nrows <= 0 || row0 + nrows > A.rows)
            fail("slice_rows", "range [" + std::to_string(row0) + "," + std::to_string(row0 + nrows) +
                                   ") out of " + A.shape_str());
        Tensor Y(nrows, A.cols);
        std::copy_n(&A.data[static_cast<size_t>(row0) * A.cols], Y.data.size(), Y.data.begin());
        ValueRef out = push("slice_rows", std::move(Y), needs(a));
        record(out, [this, a, out, row0] {
            if (!needs(a)) return;
            const Tensor& A2 = val(a);
            const std::vector<double>& g = grad_of(out);
            std::vector<double>& ga = grad_slot(a);
            for (size_t i = 0; i < g.size(); ++i) ga[static_cast<size_t>(row0) * A2.cols + i] += g[i];
        });
        return out;
    }

    ValueRef slice_cols(ValueRef a, int col0, int ncols) {
        const Tensor& A = val(a);
        if (col0 < 0 || ncols <= 0 || col0 + ncols > A.cols)
            fail("slice_cols", "range [" + std::to_string(col0) + "," + std::to_string(col0 + ncols) +
                                   ") out of " + A.shape_str());
        Tensor Y(A.rows, ncols);
        for (int i = 0; i < A.rows; ++i)
            std::copy_n(&A.data[static_cast<size_t>(i) * A.cols + col0], ncols,
                        &Y.data[static_cast<size_t>(i) * ncols]);
        ValueRef out = push("slice_cols", std::move(Y), needs(a));
        record(out, [this, a, out, col0, ncols] {
            if (!needs(a)) return;
            const Tensor& A2 = val(a);
            const std::vector<double>& g = grad_of(out);
            std::vector<double>& ga = grad_slot(a);
            for (int i = 0; i < A2.rows; ++i)
                for (int j = 0; j < ncols; ++j)
                    ga[static_cast<size_t>(i) * A2.cols + col0 + j] += g[static_cast<size_t>(i) * ncols + j];
        });
        return out;
    }

    // Sum of all entries -> 1x1.
    ValueRef reduce_sum(ValueRef a) {
        const Tensor& A = val(a);
        double s = 0.0;
        for (double v : A.data) s += v;
        ValueRef out = push("reduce_sum", Tensor::scalar(s), needs(a));
        record(out, [this, a, out] {
            if (!needs(a)) return;
            double g = grad_of(out)[0];
            std::vector<double>& ga = grad_slot(a);
            for (double& v : ga) v += g;
        });
        return out;
    }

    // Stable log(sum(exp(row))) for a 1xN row -> 1x1.
    ValueRef logsumexp_row(ValueRef a) {
        const Tensor& A = val(a);
        if (A.rows != 1) fail("logsumexp", "expected a 1xN row, got " + A.shape_str());
        double m = A.data[0];
        for (double v : A.data) m = std::max(m, v);
        double s = 0.0;
        for (double v : A.data) s += std::exp(v - m);
        ValueRef out = push("logsumexp", Tensor::scalar(m + std::log(s)), needs(a));
        record(out, [this, a, out] {
            if (!needs(a)) return;
            const Tensor& A2 = val(a);
            double y = val(out).data[0];
            double g = grad_of(out)[0];
            std::vector<double>& ga = grad_slot(a);
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += g * std::exp(A2.data[i] - y);
        });
        return out;
    }

    // Pick columns of a 1xN row by index -> 1xK.
    ValueRef gather_cols(ValueRef a, std::vector<int> idx) {
        const Tensor& A = val(a);
        if (A.rows != 1) fail("gather_cols", "expected a 1xN row, got " + A.shape_str());
        if (idx.empty()) fail("gather_cols", "empty index list");
        for (int j : idx)
            if (j < 0 || j >= A.cols) fail("gather_cols", "index " + std::to_string(j) + " out of range");
        Tensor Y(1, static_cast<int>(idx.size()));
        for (size_t i = 0; i < idx.size(); ++i) Y.data[i] = A.data[static_cast<size_t>(idx[i])];
        ValueRef out = push("gather_cols", std::move(Y), needs(a));
        record(out, [this, a, out, idx = std::move(idx)] {
            if (!needs(a)) return;
            const std::vector<double>& g = grad_of(out);
            std::vector<double>& ga = grad_slot(a);
            for (size_t i = 0; i < idx.size(); ++i) ga[static_cast<size_t>(idx[i])] += g[i];
        });
        return out;
    }

    // --- execution --------------------------------------------------------

    const Tensor& val(ValueRef v) const {
        if (!v.valid() || v.idx >= static_cast<int>(nodes_.size()))
            throw std::logic_error("Tape: invalid value handle");
        return nodes_[static_cast<size_t>(v.idx)].value;
    }

    double scalar(ValueRef v) const { return val(v).item(); }

    void backward(ValueRef loss) {
        if (!grad_enabled_) throw std::logic_error("Tape: backward on a grad-disabled tape");
        if (nodes_.empty() || !loss.valid() || loss.idx >= static_cast<int>(nodes_.size()))
            throw std::logic_error("Tape: backward before forward");
        if (backward_done_) throw std::logic_error("Tape: backward already run");
        const Node& ln = nodes_[static_cast<size_t>(loss.idx)];
        if (ln.value.size() != 1)
            throw std::invalid_argument("Tape: backward requires a scalar loss, got " + ln.value.shape_str());
        if (!std::isfinite(ln.value.data[0]))
            throw std::runtime_error("Tape: loss is not finite");
        backward_done_ = true;
        grad_slot(loss)[0] = 1.0;
        for (int i = loss.idx; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (n.grad.empty()) continue;  // nothing flowed here
            if (n.back) n.back();
            if (n.bound) {
                std::vector<double>& pg = n.bound->grad;
                for (size_t k = 0; k < n.grad.size(); ++k) pg[k] += n.grad[k];
            }
        }
    }

private:
    struct Node {
        const char* op;
        Tensor value;
        std::vector<double> grad;  // allocated on first touch during backward
        std::function<void()> back;
        Tensor* bound = nullptr;
        bool needs_grad = false;
    };

    std::deque<Node> nodes_;  // deque: references from val() stay valid as the tape grows
    bool grad_enabled_;
    bool backward_done_ = false;
    double min_abs_relu_input_ = std::numeric_limits<double>::infinity();
    double min_ln_row_std_ = std::numeric_limits<double>::infinity();

    bool needs(ValueRef v) const { return nodes_[static_cast<size_t>(v.idx)].needs_grad; }

    ValueRef push(const char* op, Tensor value, bool needs_grad = true) {
        Node n;
        n.op = op;
        n.value = std::move(value);
        n.needs_grad = grad_enabled_ && needs_grad;
        nodes_.push_back(std::move(n));
        return ValueRef{static_cast<int>(nodes_.size()) - 1};
    }

    template <typename F>
    void record(ValueRef out, F&& fn) {
        Node& n = nodes_[static_cast<size_t>(out.idx)];
        if (n.needs_grad) n.back = std::forward<F>(fn);
    }

    std::vector<double>& grad_slot(ValueRef v) {
        Node& n = nodes_[static_cast<size_t>(v.idx)];
        if (n.grad.empty()) n.grad.assign(n.value.data.size(), 0.0);
        return n.grad;
    }

    const std::vector<double>& grad_of(ValueRef v) { return grad_slot(v); }

    ValueRef binary_elementwise(const char* op, ValueRef a, ValueRef b, double b_sign) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        if (!A.same_shape(B))
            fail(op, "shape mismatch: " + A.shape_str() + " vs " + B.shape_str());
        Tensor C(A.rows, A.cols);
        for (size_t i = 0; i < C.data.size(); ++i) C.data[i] = A.data[i] + b_sign * B.data[i];
        ValueRef out = push(op, std::move(C), needs(a) || needs(b));
        record(out, [this, a, b, out, b_sign] {
            const std::vector<double>& g = grad_of(out);
            if (needs(a)) {
                std::vector<double>& ga = grad_slot(a);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (needs(b)) {
                std::vector<double>& gb = grad_slot(b);
                for (size_t i = 0; i < g.size(); ++i) gb[i] += b_sign * g[i];
            }
        });
        return out;
    }

    template <typename Fwd, typename Bwd>
    ValueRef unary(const char* op, ValueRef a, Fwd fwd, Bwd dydx) {
        const Tensor& A = val(a);
        Tensor Y(A.rows, A.cols);
        for (size_t i = 0; i < Y.data.size(); ++i) Y.data[i] = fwd(A.data[i]);
        ValueRef out = push(op, std::move(Y), needs(a));
        record(out, [this, a, out, dydx] {
            if (!needs(a)) return;
            const Tensor& A2 = val(a);
            const Tensor& Y2 = val(out);
            const std::vector<double>& g = grad_of(out);
            std::vector<double>& ga = grad_slot(a);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dydx(A2.data[i], Y2.data[i]);
        });
        return out;
    }

    [[noreturn]] void fail(const char* op, const std::string& msg) const {
        throw std::invalid_argument(std::string("Tape node '") + op + "' (#" +
                                    std::to_string(nodes_.size()) + "): " + msg);
    }

    static void check_finite_input(const Tensor& t, const char* what) {
        if (!t.finite())
            throw std::invalid_argument(std::string("Tape ") + what + ": non-finite input value");
    }
};

}  // namespace mminforec
