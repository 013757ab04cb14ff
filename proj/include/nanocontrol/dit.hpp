#pragma once

#include <optional>

#include "nanocontrol/ops.hpp"

namespace nanocontrol {

// Architecture hyperparameters for the toy backbone. The defaults are the
// minutes-scale CPU configuration; every field can be overridden from the
// run config.
struct DiTConfig {
    int64_t d_model = 64;
    int64_t n_heads = 4;
    int64_t n_blocks = 4;
    int64_t patch_size = 2;
    int64_t image_channels = 3;
    int64_t image_side = 16;
    int64_t text_tokens = 4;  // M learned tokens per class label
    int64_t num_classes = 3;
    double mlp_ratio = 4.0;
    int64_t rank_kv = 4;
    int64_t rank_embed = 32;

    int64_t head_dim() const { return d_model / n_heads; }
    int64_t grid_side() const { return image_side / patch_size; }
    int64_t n_image_tokens() const { return grid_side() * grid_side(); }
    int64_t patch_dim() const { return image_channels * patch_size * patch_size; }
    int64_t d_ff() const { return int64_t(double(d_model) * mlp_ratio); }

    void validate() const {
        if (d_model <= 0 || n_heads <= 0 || n_blocks <= 0 || patch_size <= 0 ||
            image_channels <= 0 || image_side <= 0 || text_tokens <= 0 || num_classes <= 0)
            throw ContractError("DiTConfig: all sizes must be positive");
        if (d_model % n_heads != 0)
            throw ContractError("DiTConfig: d_model " + std::to_string(d_model) +
                                " not divisible by n_heads " + std::to_string(n_heads));
        if (image_side % patch_size != 0)
            throw ContractError("DiTConfig: image_side " + std::to_string(image_side) +
                                " not divisible by patch_size " + std::to_string(patch_size));
        if (rank_kv < 1 || rank_embed < 1)
            throw ContractError("DiTConfig: ranks must be >= 1");
    }
};

// [C,H,W] -> [N, C*p*p]; non-overlapping patches, row-major within each patch,
// tokens ordered row-major over the patch grid. unpatchify inverts exactly.
template <class Real>
Tensor<Real> patchify(const Tensor<Real>& img, int64_t p) {
    if (img.dims() != 3)
        throw ShapeError("patchify: expected [C,H,W], got " + shape_str(img.shape()));
    const int64_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
    if (H % p != 0 || W % p != 0)
        throw ShapeError("patchify: dims " + shape_str(img.shape()) + " not divisible by patch " +
                         std::to_string(p));
    const int64_t gh = H / p, gw = W / p, N = gh * gw, pd = C * p * p;
    auto y = Tensor<Real>::zeros({N, pd});
    for (int64_t gy = 0; gy < gh; ++gy)
        for (int64_t gx = 0; gx < gw; ++gx) {
            Real* dst = y.data() + (gy * gw + gx) * pd;
            for (int64_t c = 0; c < C; ++c)
                for (int64_t py = 0; py < p; ++py)
                    for (int64_t px = 0; px < p; ++px)
                        dst[c * p * p + py * p + px] =
                            img.data()[c * H * W + (gy * p + py) * W + (gx * p + px)];
        }
    if (detail::wants_grad<Real>({&img})) {
        y.set_requires_grad(true);
        auto xi = img.impl_ptr(), yi = y.impl_ptr();
        Tape<Real>::active()->record([xi, yi, C, H, W, p, gh, gw, pd] {
            if (!yi->has_grad() || !xi->requires_grad) return;
            xi->ensure_grad();
            for (int64_t gy = 0; gy < gh; ++gy)
                for (int64_t gx = 0; gx < gw; ++gx) {
                    const Real* g = yi->grad.data() + (gy * gw + gx) * pd;
                    for (int64_t c = 0; c < C; ++c)
                        for (int64_t py = 0; py < p; ++py)
                            for (int64_t px = 0; px < p; ++px)
                                xi->grad[c * H * W + (gy * p + py) * W + (gx * p + px)] +=
                                    g[c * p * p + py * p + px];
                }
        });
    }
    return y;
}

template <class Real>
Tensor<Real> unpatchify(const Tensor<Real>& tokens, int64_t C, int64_t H, int64_t W, int64_t p) {
    const int64_t gh = H / p, gw = W / p, N = gh * gw, pd = C * p * p;
    if (tokens.dims() != 2 || tokens.dim(0) != N || tokens.dim(1) != pd)
        throw ShapeError("unpatchify: got " + shape_str(tokens.shape()) + ", want [" +
                         std::to_string(N) + "x" + std::to_string(pd) + "]");
    auto y = Tensor<Real>::zeros({C, H, W});
    for (int64_t gy = 0; gy < gh; ++gy)
        for (int64_t gx = 0; gx < gw; ++gx) {
            const Real* src = tokens.data() + (gy * gw + gx) * pd;
            for (int64_t c = 0; c < C; ++c)
                for (int64_t py = 0; py < p; ++py)
                    for (int64_t px = 0; px < p; ++px)
                        y.data()[c * H * W + (gy * p + py) * W + (gx * p + px)] =
                            src[c * p * p + py * p + px];
        }
    if (detail::wants_grad<Real>({&tokens})) {
        y.set_requires_grad(true);
        auto xi = tokens.impl_ptr(), yi = y.impl_ptr();
        Tape<Real>::active()->record([xi, yi, C, H, W, p, gh, gw, pd] {
            if (!yi->has_grad() || !xi->requires_grad) return;
            xi->ensure_grad();
            for (int64_t gy = 0; gy < gh; ++gy)
                for (int64_t gx = 0; gx < gw; ++gx) {
                    Real* g = xi->grad.data() + (gy * gw + gx) * pd;
                    for (int64_t c = 0; c < C; ++c)
                        for (int64_t py = 0; py < p; ++py)
                            for (int64_t px = 0; px < p; ++px)
                                g[c * p * p + py * p + px] +=
                                    yi->grad[c * H * W + (gy * p + py) * W + (gx * p + px)];
                }
        });
    }
    return y;
}

// Sinusoidal timestep features, [1 x dim]: geometric frequencies, cos half
// then sin half, t scaled by 1000. Constant w.r.t. the tape.
template <class Real>
Tensor<Real> timestep_features(Real t, int64_t dim) {
    auto y = Tensor<Real>::zeros({1, dim});
    const int64_t half = dim / 2;
    for (int64_t i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
        double a = double(t) * 1000.0 * freq;
        y.data()[i] = Real(std::cos(a));
        y.data()[half + i] = Real(std::sin(a));
    }
    return y;
}

// Multi-head scaled dot-product attention over row-token matrices.
// q: [Tq x d]; k,v: [S x d]; optional condition keys/values kc,vc: [P x d]
// appended to k/v per head (queries never include condition tokens).
// mask_condition forces the condition scores to a large negative constant,
// used to verify masked equivalence with plain attention.
// attn_tap, when set, receives each head's softmaxed weight matrix.
template <class Real>
Tensor<Real> multihead_attention(const Tensor<Real>& q, const Tensor<Real>& k,
                                 const Tensor<Real>& v, int64_t n_heads,
                                 const Tensor<Real>* kc = nullptr,
                                 const Tensor<Real>* vc = nullptr,
                                 bool mask_condition = false,
                                 std::vector<Tensor<Real>>* attn_tap = nullptr) {
    if (q.dims() != 2 || k.dims() != 2 || v.dims() != 2)
        throw ShapeError("attention: q/k/v must be 2-d");
    const int64_t d = q.dim(1);
    if (k.dim(1) != d || v.dim(1) != d)
        throw ShapeError("attention: width mismatch q" + shape_str(q.shape()) + " k" +
                         shape_str(k.shape()) + " v" + shape_str(v.shape()));
    if (k.dim(0) != v.dim(0))
        throw ShapeError("attention: key/value counts differ: " + shape_str(k.shape()) +
                         " vs " + shape_str(v.shape()));
    if (d % n_heads != 0)
        throw ShapeError("attention: width " + std::to_string(d) + " not divisible by " +
                         std::to_string(n_heads) + " heads");
    const bool with_cond = kc && kc->dim(0) > 0;
    if (with_cond) {
        if (!vc || vc->dim(0) != kc->dim(0))
            throw ShapeError("attention: condition key/value counts differ");
        if (kc->dim(1) != d || vc->dim(1) != d)
            throw ShapeError("attention: condition width " + shape_str(kc->shape()) +
                             " vs model width " + std::to_string(d));
    }
    Tensor<Real> kf = with_cond ? concat_rows(k, *kc) : k;
    Tensor<Real> vf = with_cond ? concat_rows(v, *vc) : v;

    const int64_t dh = d / n_heads;
    const int64_t s_main = k.dim(0);
    const int64_t s_full = kf.dim(0);
    const Real inv_sqrt = Real(1) / Real(std::sqrt(double(dh)));

    Tensor<Real> mask;
    if (mask_condition && with_cond) {
        mask = Tensor<Real>::zeros({q.dim(0), s_full});
        for (int64_t i = 0; i < q.dim(0); ++i)
            for (int64_t j = s_main; j < s_full; ++j)
                mask.data()[i * s_full + j] = Real(-1e30);
    }

    std::vector<Tensor<Real>> heads;
    heads.reserve(size_t(n_heads));
    for (int64_t h = 0; h < n_heads; ++h) {
        auto qh = slice_cols(q, h * dh, (h + 1) * dh);
        auto kh = slice_cols(kf, h * dh, (h + 1) * dh);
        auto vh = slice_cols(vf, h * dh, (h + 1) * dh);
        auto scores = scale(matmul(qh, kh, false, true), inv_sqrt);
        if (mask.defined()) scores = add(scores, mask);
        auto w = softmax_rows(scores);
        if (attn_tap) attn_tap->push_back(w);
        heads.push_back(matmul(w, vh));
    }
    return concat_cols(heads);
}

}  // namespace nanocontrol
