#pragma once

#include <algorithm>
#include <cmath>

#include "nanocontrol/flops.hpp"
#include "nanocontrol/tensor.hpp"

// Autodiff primitives. Every op validates shapes, checks the output for
// non-finite values (NaN/Inf is surfaced as NumericsError, never propagated),
// and records a backward closure on the active tape when an input requires
// gradients.

namespace nanocontrol {

template <class Real>
inline void check_finite(const Tensor<Real>& t, const char* op) {
    const Real* p = t.data();
    const int64_t n = t.numel();
    bool ok = true;
    for (int64_t i = 0; i < n; ++i) ok &= std::isfinite(double(p[i]));
    if (!ok) throw NumericsError(std::string(op) + ": non-finite value in output");
}

namespace detail {

template <class Real>
inline bool wants_grad(std::initializer_list<const Tensor<Real>*> inputs) {
    if (!Tape<Real>::active()) return false;
    for (auto* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

// C[m x n] (+)= opA(A) * opB(B); A stored [k x m] when ta else [m x k],
// B stored [n x k] when tb else [k x n].
template <class Real>
void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k,
          const Real* A, const Real* B, Real* C, bool accumulate) {
    if (!ta && !tb) {
        for (int64_t i = 0; i < m; ++i) {
            Real* c = C + i * n;
            if (!accumulate)
                for (int64_t j = 0; j < n; ++j) c[j] = Real(0);
            const Real* a = A + i * k;
            for (int64_t p = 0; p < k; ++p) {
                const Real ap = a[p];
                const Real* b = B + p * n;
                for (int64_t j = 0; j < n; ++j) c[j] += ap * b[j];
            }
        }
    } else if (!ta && tb) {
        for (int64_t i = 0; i < m; ++i) {
            const Real* a = A + i * k;
            Real* c = C + i * n;
            for (int64_t j = 0; j < n; ++j) {
                const Real* b = B + j * k;
                Real s = 0;
                for (int64_t p = 0; p < k; ++p) s += a[p] * b[p];
                c[j] = accumulate ? c[j] + s : s;
            }
        }
    } else if (ta && !tb) {
        if (!accumulate)
            for (int64_t i = 0; i < m * n; ++i) C[i] = Real(0);
        for (int64_t p = 0; p < k; ++p) {
            const Real* a = A + p * m;
            const Real* b = B + p * n;
            for (int64_t i = 0; i < m; ++i) {
                const Real ap = a[i];
                Real* c = C + i * n;
                for (int64_t j = 0; j < n; ++j) c[j] += ap * b[j];
            }
        }
    } else {
        for (int64_t i = 0; i < m; ++i) {
            Real* c = C + i * n;
            for (int64_t j = 0; j < n; ++j) {
                const Real* b = B + j * k;
                Real s = 0;
                for (int64_t p = 0; p < k; ++p) s += A[p * m + i] * b[p];
                c[j] = accumulate ? c[j] + s : s;
            }
        }
    }
}

}  // namespace detail

template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b,
                    bool trans_a = false, bool trans_b = false) {
    if (a.dims() != 2 || b.dims() != 2)
        throw ShapeError("matmul: expected 2-d tensors, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    const int64_t m = trans_a ? a.dim(1) : a.dim(0);
    const int64_t ka = trans_a ? a.dim(0) : a.dim(1);
    const int64_t kb = trans_b ? b.dim(1) : b.dim(0);
    const int64_t n = trans_b ? b.dim(0) : b.dim(1);
    if (ka != kb)
        throw ShapeError(std::string("matmul: inner dimensions disagree: ") +
                         shape_str(a.shape()) + (trans_a ? "^T" : "") + " x " +
                         shape_str(b.shape()) + (trans_b ? "^T" : ""));
    FlopCounter::count_matmul(m, ka, n);
    auto y = Tensor<Real>::zeros({m, n});
    detail::gemm(trans_a, trans_b, m, n, ka, a.data(), b.data(), y.data(), false);
    check_finite(y, "matmul");

    if (detail::wants_grad<Real>({&a, &b})) {
        y.set_requires_grad(true);
        auto ai = a.impl_ptr(), bi = b.impl_ptr(), yi = y.impl_ptr();
        const int64_t k = ka;
        Tape<Real>::active()->record([ai, bi, yi, m, n, k, trans_a, trans_b] {
            if (!yi->has_grad()) return;
            const Real* G = yi->grad.data();
            if (ai->requires_grad) {
                ai->ensure_grad();
                Real* dA = ai->grad.data();
                if (!trans_a) {
                    // dA[m x k] = G * opB(B)^T
                    detail::gemm(false, !trans_b, m, k, n, G, bi->data.data(), dA, true);
                } else {
                    // dA stored [k x m] = opB(B) * G^T
                    detail::gemm(trans_b, true, k, m, n, bi->data.data(), G, dA, true);
                }
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                Real* dB = bi->grad.data();
                if (!trans_b) {
                    // dB[k x n] = opA(A)^T * G
                    detail::gemm(!trans_a, false, k, n, m, ai->data.data(), G, dB, true);
                } else {
                    // dB stored [n x k] = G^T * opA(A)
                    detail::gemm(true, trans_a, n, k, m, G, ai->data.data(), dB, true);
                }
            }
        });
    }
    return y;
}

namespace detail {

template <class Real, class Fwd, class Bwd>
Tensor<Real> elementwise_binary(const char* name, const Tensor<Real>& a,
                                const Tensor<Real>& b, Fwd fwd, Bwd bwd) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(name) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    auto y = Tensor<Real>::zeros(a.shape());
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) y.data()[i] = fwd(a.data()[i], b.data()[i]);
    check_finite(y, name);
    if (wants_grad<Real>({&a, &b})) {
        y.set_requires_grad(true);
        auto ai = a.impl_ptr(), bi = b.impl_ptr(), yi = y.impl_ptr();
        Tape<Real>::active()->record([ai, bi, yi, bwd, n] {
            if (!yi->has_grad()) return;
            const Real* g = yi->grad.data();
            Real* da = nullptr;
            Real* db = nullptr;
            if (ai->requires_grad) { ai->ensure_grad(); da = ai->grad.data(); }
            if (bi->requires_grad) { bi->ensure_grad(); db = bi->grad.data(); }
            for (int64_t i = 0; i < n; ++i)
                bwd(g[i], ai->data[i], bi->data[i],
                    da ? da + i : nullptr, db ? db + i : nullptr);
        });
    }
    return y;
}

}  // namespace detail

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    return detail::elementwise_binary<Real>(
        "add", a, b, [](Real x, Real y) { return x + y; },
        [](Real g, Real, Real, Real* da, Real* db) {
            if (da) *da += g;
            if (db) *db += g;
        });
}

template <class Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
    return detail::elementwise_binary<Real>(
        "sub", a, b, [](Real x, Real y) { return x - y; },
        [](Real g, Real, Real, Real* da, Real* db) {
            if (da) *da += g;
            if (db) *db -= g;
        });
}

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    return detail::elementwise_binary<Real>(
        "mul", a, b, [](Real x, Real y) { return x * y; },
        [](Real g, Real x, Real y, Real* da, Real* db) {
            if (da) *da += g * y;
            if (db) *db += g * x;
        });
}

namespace detail {

template <class Real, class Fwd, class Bwd>
Tensor<Real> elementwise_unary(const char* name, const Tensor<Real>& a, Fwd fwd, Bwd bwd) {
    auto y = Tensor<Real>::zeros(a.shape());
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) y.data()[i] = fwd(a.data()[i]);
    check_finite(y, name);
    if (wants_grad<Real>({&a})) {
        y.set_requires_grad(true);
        auto ai = a.impl_ptr();
        auto yi = y.impl_ptr();
        Tape<Real>::active()->record([ai, yi, bwd, n] {
            if (!yi->has_grad() || !ai->requires_grad) return;
            ai->ensure_grad();
            const Real* g = yi->grad.data();
            for (int64_t i = 0; i < n; ++i) ai->grad[i] += g[i] * bwd(ai->data[i]);
        });
    }
    return y;
}

}  // namespace detail

template <class Real>
Tensor<Real> scale(const Tensor<Real>& a, Real c) {
    return detail::elementwise_unary<Real>(
        "scale", a, [c](Real x) { return x * c; }, [c](Real) { return c; });
}

template <class Real>
Tensor<Real> add_scalar(const Tensor<Real>& a, Real c) {
    return detail::elementwise_unary<Real>(
        "add_scalar", a, [c](Real x) { return x + c; }, [](Real) { return Real(1); });
}

template <class Real>
Tensor<Real> silu(const Tensor<Real>& a) {
    return detail::elementwise_unary<Real>(
        "silu",
        a,
        [](Real x) {
            Real s = Real(1) / (Real(1) + std::exp(-x));
            return x * s;
        },
        [](Real x) {
            Real s = Real(1) / (Real(1) + std::exp(-x));
            return s * (Real(1) + x * (Real(1) - s));
        });
}

// tanh-approximated GELU, the usual transformer MLP nonlinearity.
template <class Real>
Tensor<Real> gelu(const Tensor<Real>& a) {
    constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double kA = 0.044715;
    return detail::elementwise_unary<Real>(
        "gelu",
        a,
        [](Real x) {
            double u = kC * (double(x) + kA * double(x) * double(x) * double(x));
            return Real(0.5 * double(x) * (1.0 + std::tanh(u)));
        },
        [](Real x) {
            double xd = double(x);
            double u = kC * (xd + kA * xd * xd * xd);
            double t = std::tanh(u);
            double du = kC * (1.0 + 3.0 * kA * xd * xd);
            return Real(0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du);
        });
}

namespace detail {

template <class Real>
inline void check_rowvec(const char* name, const Tensor<Real>& x, const Tensor<Real>& v) {
    bool ok = x.dims() == 2 &&
              ((v.dims() == 1 && v.dim(0) == x.dim(1)) ||
               (v.dims() == 2 && v.dim(0) == 1 && v.dim(1) == x.dim(1)));
    if (!ok)
        throw ShapeError(std::string(name) + ": cannot broadcast " + shape_str(v.shape()) +
                         " over rows of " + shape_str(x.shape()));
}

}  // namespace detail

// y[i,j] = x[i,j] + v[j]
template <class Real>
Tensor<Real> add_rowvec(const Tensor<Real>& x, const Tensor<Real>& v) {
    detail::check_rowvec("add_rowvec", x, v);
    const int64_t m = x.dim(0), n = x.dim(1);
    auto y = Tensor<Real>::zeros(x.shape());
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) y.data()[i * n + j] = x.data()[i * n + j] + v.data()[j];
    check_finite(y, "add_rowvec");
    if (detail::wants_grad<Real>({&x, &v})) {
        y.set_requires_grad(true);
        auto xi = x.impl_ptr(), vi = v.impl_ptr(), yi = y.impl_ptr();
        Tape<Real>::active()->record([xi, vi, yi, m, n] {
            if (!yi->has_grad()) return;
            const Real* g = yi->grad.data();
            if (xi->requires_grad) {
                xi->ensure_grad();
                for (int64_t i = 0; i < m * n; ++i) xi->grad[i] += g[i];
            }
            if (vi->requires_grad) {
                vi->ensure_grad();
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < n; ++j) vi->grad[j] += g[i * n + j];
            }
        });
    }
    return y;
}

// y[i,j] = x[i,j] * v[j]
template <class Real>
Tensor<Real> mul_rowvec(const Tensor<Real>& x, const Tensor<Real>& v) {
    detail::check_rowvec("mul_rowvec", x, v);
    const int64_t m = x.dim(0), n = x.dim(1);
    auto y = Tensor<Real>::zeros(x.shape());
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) y.data()[i * n + j] = x.data()[i * n + j] * v.data()[j];
    check_finite(y, "mul_rowvec");
    if (detail::wants_grad<Real>({&x, &v})) {
        y.set_requires_grad(true);
        auto xi = x.impl_ptr(), vi = v.impl_ptr(), yi = y.impl_ptr();
        Tape<Real>::active()->record([xi, vi, yi, m, n] {
            if (!yi->has_grad()) return;
            const Real* g = yi->grad.data();
            if (xi->requires_grad) {
                xi->ensure_grad();
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < n; ++j) xi->grad[i * n + j] += g[i * n + j] * vi->data[j];
            }
            if (vi->requires_grad) {
                vi->ensure_grad();
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < n; ++j) vi->grad[j] += g[i * n + j] * xi->data[i * n + j];
            }
        });
    }
    return y;
}

// Row-wise softmax with max subtraction; rows sum to 1.
template <class Real>
Tensor<Real> softmax_rows(const Tensor<Real>& x) {
    if (x.dims() != 2) throw ShapeError("softmax_rows: expected 2-d, got " + shape_str(x.shape()));
    const int64_t m = x.dim(0), n = x.dim(1);
    auto y = Tensor<Real>::zeros(x.shape());
    for (int64_t i = 0; i < m; ++i) {
        const Real* xr = x.data() + i * n;
        Real* yr = y.data() + i * n;
        Real mx = xr[0];
        for (int64_t j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
        Real s = 0;
        for (int64_t j = 0; j < n; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            s += yr[j];
        }
        const Real inv = Real(1) / s;
        for (int64_t j = 0; j < n; ++j) yr[j] *= inv;
    }
    check_finite(y, "softmax_rows");
    if (detail::wants_grad<Real>({&x})) {
        y.set_requires_grad(true);
        auto xi = x.impl_ptr(), yi = y.impl_ptr();
        Tape<Real>::active()->record([xi, yi, m, n] {
            if (!yi->has_grad() || !xi->requires_grad) return;
            xi->ensure_grad();
            for (int64_t i = 0; i < m; ++i) {
                const Real* g = yi->grad.data() + i * n;
                const Real* yr = yi->data.data() + i * n;
                Real dot = 0;
                for (int64_t j = 0; j < n; ++j) dot += g[j] * yr[j];
                Real* dx = xi->grad.data() + i * n;
                for (int64_t j = 0; j < n; ++j) dx[j] += yr[j] * (g[j] - dot);
            }
        });
    }
    return y;
}

// Layer norm over the last dimension, optional affine. eps = 1e-5.
template <class Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>* gamma = nullptr,
                        const Tensor<Real>* beta = nullptr) {
    if (x.dims() < 1 || x.dim(x.dims() - 1) == 0)
        throw ShapeError("layer_norm: empty last dimension in " + shape_str(x.shape()));
    const int64_t d = x.dim(x.dims() - 1);
    const int64_t rows = x.numel() / d;
    if (gamma && (gamma->numel() != d))
        throw ShapeError("layer_norm: gamma " + shape_str(gamma->shape()) + " vs last dim " +
                         std::to_string(d));
    if (beta && (beta->numel() != d))
        throw ShapeError("layer_norm: beta " + shape_str(beta->shape()) + " vs last dim " +
                         std::to_string(d));
    constexpr Real kEps = Real(1e-5);
    auto y = Tensor<Real>::zeros(x.shape());
    auto mean = std::make_shared<std::vector<Real>>(size_t(rows));
    auto rstd = std::make_shared<std::vector<Real>>(size_t(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const Real* xr = x.data() + r * d;
        Real mu = 0;
        for (int64_t j = 0; j < d; ++j) mu += xr[j];
        mu /= Real(d);
        Real var = 0;
        for (int64_t j = 0; j < d; ++j) {
            Real t = xr[j] - mu;
            var += t * t;
        }
        var /= Real(d);
        Real rs = Real(1) / std::sqrt(var + kEps);
        (*mean)[size_t(r)] = mu;
        (*rstd)[size_t(r)] = rs;
        Real* yr = y.data() + r * d;
        for (int64_t j = 0; j < d; ++j) {
            Real xhat = (xr[j] - mu) * rs;
            if (gamma) xhat *= gamma->data()[j];
            if (beta) xhat += beta->data()[j];
            yr[j] = xhat;
        }
    }
    check_finite(y, "layer_norm");
    bool need = gamma ? detail::wants_grad<Real>({&x, gamma, beta})
                      : detail::wants_grad<Real>({&x});
    if (need) {
        y.set_requires_grad(true);
        auto xi = x.impl_ptr(), yi = y.impl_ptr();
        auto gi = gamma ? gamma->impl_ptr() : nullptr;
        auto bi = beta ? beta->impl_ptr() : nullptr;
        Tape<Real>::active()->record([xi, yi, gi, bi, mean, rstd, rows, d] {
            if (!yi->has_grad()) return;
            for (int64_t r = 0; r < rows; ++r) {
                const Real* g = yi->grad.data() + r * d;
                const Real* xr = xi->data.data() + r * d;
                const Real mu = (*mean)[size_t(r)];
                const Real rs = (*rstd)[size_t(r)];
                if (bi && bi->requires_grad) {
                    bi->ensure_grad();
                    for (int64_t j = 0; j < d; ++j) bi->grad[j] += g[j];
                }
                if (gi && gi->requires_grad) {
                    gi->ensure_grad();
                    for (int64_t j = 0; j < d; ++j)
                        gi->grad[j] += g[j] * (xr[j] - mu) * rs;
                }
                if (xi->requires_grad) {
                    xi->ensure_grad();
                    Real dn_mean = 0, dnx_mean = 0;
                    for (int64_t j = 0; j < d; ++j) {
                        Real xhat = (xr[j] - mu) * rs;
                        Real dn = gi ? g[j] * gi->data[j] : g[j];
                        dn_mean += dn;
                        dnx_mean += dn * xhat;
                    }
                    dn_mean /= Real(d);
                    dnx_mean /= Real(d);
                    Real* dx = xi->grad.data() + r * d;
                    for (int64_t j = 0; j < d; ++j) {
                        Real xhat = (xr[j] - mu) * rs;
                        Real dn = gi ? g[j] * gi->data[j] : g[j];
                        dx[j] += (dn - dn_mean - xhat * dnx_mean) * rs;
                    }
                }
            }
        });
    }
    return y;
}

template <class Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta) {
    return layer_norm(x, &gamma, &beta);
}

template <class Real>
Tensor<Real> concat_rows(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.dims() != 2 || b.dims() != 2 || a.dim(1) != b.dim(1))
        throw ShapeError("concat_rows: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const int64_t ma = a.dim(0), mb = b.dim(0), n = a.dim(1);
    auto y = Tensor<Real>::zeros({ma + mb, n});
    std::copy(a.data(), a.data() + ma * n, y.data());
    std::copy(b.data(), b.data() + mb * n, y.data() + ma * n);
    if (detail::wants_grad<Real>({&a, &b})) {
        y.set_requires_grad(true);
        auto ai = a.impl_ptr(), bi = b.impl_ptr(), yi = y.impl_ptr();
        Tape<Real>::active()->record([ai, bi, yi, ma, mb, n] {
            if (!yi->has_grad()) return;
            const Real* g = yi->grad.data();
            if (ai->requires_grad) {
                ai->ensure_grad();
                for (int64_t i = 0; i < ma * n; ++i) ai->grad[i] += g[i];
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                for (int64_t i = 0; i < mb * n; ++i) bi->grad[i] += g[ma * n + i];
            }
        });
    }
    return y;
}

template <class Real>
Tensor<Real> slice_rows(const Tensor<Real>& x, int64_t r0, int64_t r1) {
    if (x.dims() != 2 || r0 < 0 || r1 > x.dim(0) || r0 >= r1)
        throw ShapeError("slice_rows: rows [" + std::to_string(r0) + "," + std::to_string(r1) +
                         ") of " + shape_str(x.shape()));
    const int64_t n = x.dim(1), m = r1 - r0;
    auto y = Tensor<Real>::zeros({m, n});
    std::copy(x.data() + r0 * n, x.data() + r1 * n, y.data());
    if (detail::wants_grad<Real>({&x})) {
        y.set_requires_grad(true);
        auto xi = x.impl_ptr(), yi = y.impl_ptr();
        Tape<Real>::active()->record([xi, yi, r0, m, n] {
            if (!yi->has_grad() || !xi->requires_grad) return;
            xi->ensure_grad();
            for (int64_t i = 0; i < m * n; ++i) xi->grad[r0 * n + i] += yi->grad[i];
        });
    }
    return y;
}

template <class Real>
Tensor<Real> slice_cols(const Tensor<Real>& x, int64_t c0, int64_t c1) {
    if (x.dims() != 2 || c0 < 0 || c1 > x.dim(1) || c0 >= c1)
        throw ShapeError("slice_cols: cols [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") of " + shape_str(x.shape()));
    const int64_t m = x.dim(0), n = x.dim(1), w = c1 - c0;
    auto y = Tensor<Real>::zeros({m, w});
    for (int64_t i = 0; i < m; ++i)
        std::copy(x.data() + i * n + c0, x.data() + i * n + c1, y.data() + i * w);
    if (detail::wants_grad<Real>({&x})) {
        y.set_requires_grad(true);
        auto xi = x.impl_ptr(), yi = y.impl_ptr();
        Tape<Real>::active()->record([xi, yi, c0, m, n, w] {
            if (!yi->has_grad() || !xi->requires_grad) return;
            xi->ensure_grad();
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < w; ++j) xi->grad[i * n + c0 + j] += yi->grad[i * w + j];
        });
    }
    return y;
}

template <class Real>
Tensor<Real> concat_cols(const std::vector<Tensor<Real>>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: empty input list");
    const int64_t m = parts[0].dim(0);
    int64_t n = 0;
    for (auto& p : parts) {
        if (p.dims() != 2 || p.dim(0) != m)
            throw ShapeError("concat_cols: row mismatch at " + shape_str(p.shape()));
        n += p.dim(1);
    }
    auto y = Tensor<Real>::zeros({m, n});
    int64_t off = 0;
    for (auto& p : parts) {
        const int64_t w = p.dim(1);
        for (int64_t i = 0; i < m; ++i)
            std::copy(p.data() + i * w, p.data() + (i + 1) * w, y.data() + i * n + off);
        off += w;
    }
    bool need = false;
    if (Tape<Real>::active())
        for (auto& p : parts) need = need || p.requires_grad();
    if (need) {
        y.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorImpl<Real>>> impls;
        impls.reserve(parts.size());
        for (auto& p : parts) impls.push_back(p.impl_ptr());
        auto yi = y.impl_ptr();
        Tape<Real>::active()->record([impls, yi, m, n] {
            if (!yi->has_grad()) return;
            int64_t off = 0;
            for (auto& pi : impls) {
                const int64_t w = pi->shape[1];
                if (pi->requires_grad) {
                    pi->ensure_grad();
                    for (int64_t i = 0; i < m; ++i)
                        for (int64_t j = 0; j < w; ++j)
                            pi->grad[i * w + j] += yi->grad[i * n + off + j];
                }
                off += w;
            }
        });
    }
    return y;
}

template <class Real>
Tensor<Real> sum_all(const Tensor<Real>& x) {
    auto y = Tensor<Real>::zeros({1});
    Real s = 0;
    for (int64_t i = 0; i < x.numel(); ++i) s += x.data()[i];
    y.data()[0] = s;
    check_finite(y, "sum_all");
    if (detail::wants_grad<Real>({&x})) {
        y.set_requires_grad(true);
        auto xi = x.impl_ptr(), yi = y.impl_ptr();
        Tape<Real>::active()->record([xi, yi] {
            if (!yi->has_grad() || !xi->requires_grad) return;
            xi->ensure_grad();
            const Real g = yi->grad[0];
            for (auto& v : xi->grad) v += g;
        });
    }
    return y;
}

template <class Real>
Tensor<Real> mean_all(const Tensor<Real>& x) {
    return scale(sum_all(x), Real(1) / Real(x.numel()));
}

template <class Real>
Tensor<Real> mse_loss(const Tensor<Real>& a, const Tensor<Real>& b) {
    auto d = sub(a, b);
    return mean_all(mul(d, d));
}

}  // namespace nanocontrol
