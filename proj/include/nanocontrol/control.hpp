#pragma once

#include <utility>

#include "nanocontrol/dit.hpp"

namespace nanocontrol {

enum class ControlScheme {
    kNone,
    kNanoControl,
    kControlNetDup,
    kUnifiedSeq,
    kAdditive,
    kLayerByLayer,
};

inline const char* to_string(ControlScheme s) {
    switch (s) {
        case ControlScheme::kNone: return "none";
        case ControlScheme::kNanoControl: return "nanocontrol";
        case ControlScheme::kControlNetDup: return "controlnet_dup";
        case ControlScheme::kUnifiedSeq: return "unified_seq";
        case ControlScheme::kAdditive: return "additive";
        case ControlScheme::kLayerByLayer: return "layer_by_layer";
    }
    return "?";
}

inline ControlScheme parse_scheme(const std::string& s) {
    if (s == "none") return ControlScheme::kNone;
    if (s == "nanocontrol") return ControlScheme::kNanoControl;
    if (s == "controlnet_dup") return ControlScheme::kControlNetDup;
    if (s == "unified_seq") return ControlScheme::kUnifiedSeq;
    if (s == "additive") return ControlScheme::kAdditive;
    if (s == "layer_by_layer") return ControlScheme::kLayerByLayer;
    throw ParseError("unknown control scheme '" + s + "'");
}

// Whether the scheme consumes a condition image at all.
inline bool scheme_conditioned(ControlScheme s) { return s != ControlScheme::kNone; }

// Factorized linear map, trained from scratch: [in x r] times [r x out].
// Both factors init N(0, 0.02), no bias.
template <class Real>
struct LowRankLinear {
    Tensor<Real> down;  // [in x r]
    Tensor<Real> up;    // [r x out]

    static LowRankLinear init(int64_t in, int64_t r, int64_t out, Rng& rng) {
        LowRankLinear l;
        l.down = Tensor<Real>::randn({in, r}, rng, Real(0.02)).set_requires_grad(true);
        l.up = Tensor<Real>::randn({r, out}, rng, Real(0.02)).set_requires_grad(true);
        return l;
    }

    Tensor<Real> apply(const Tensor<Real>& x) const { return matmul(matmul(x, down), up); }

    // Effective [in x out] weight; used by rank certificates at toy scale,
    // never at full scale.
    Tensor<Real> materialize() const { return matmul(down, up); }

    int64_t param_count() const { return down.numel() + up.numel(); }
};

// Image embedder: patchify -> low-rank embed -> silu -> low-rank -> layer norm.
template <class Real>
struct CondEncoder {
    LowRankLinear<Real> l1;  // [patch_dim x r_e][r_e x d]
    LowRankLinear<Real> l2;  // [d x r_e][r_e x d]
    Tensor<Real> ln_gamma, ln_beta;

    static CondEncoder init(const DiTConfig& cfg, Rng& rng) {
        CondEncoder e;
        e.l1 = LowRankLinear<Real>::init(cfg.patch_dim(), cfg.rank_embed, cfg.d_model, rng);
        e.l2 = LowRankLinear<Real>::init(cfg.d_model, cfg.rank_embed, cfg.d_model, rng);
        e.ln_gamma = Tensor<Real>::full({cfg.d_model}, Real(1)).set_requires_grad(true);
        e.ln_beta = Tensor<Real>::zeros({cfg.d_model}).set_requires_grad(true);
        return e;
    }
};

template <class Real>
struct KvPair {
    LowRankLinear<Real> k, v;
};

// Rank-r adapters over a block's four linear maps (unified-sequence scheme).
template <class Real>
struct LoraAdapter {
    LowRankLinear<Real> qkv;   // [d x r][r x 3d]
    LowRankLinear<Real> out;   // [d x r][r x d]
    LowRankLinear<Real> mlp1;  // [d x r][r x ff]
    LowRankLinear<Real> mlp2;  // [ff x r][r x d]
};

// Encodes a condition image into C_h [N x d]. Content only: token positions
// are the image-token grid positions and are injected by the model, not here.
template <class Real>
Tensor<Real> encode_condition(const Tensor<Real>& cond_img, const DiTConfig& cfg,
                              const CondEncoder<Real>& enc) {
    if (cond_img.dims() != 3 || cond_img.dim(0) != cfg.image_channels ||
        cond_img.dim(1) != cfg.image_side || cond_img.dim(2) != cfg.image_side)
        throw ShapeError("encode_condition: condition " + shape_str(cond_img.shape()) +
                         " does not match backbone grid [" +
                         std::to_string(cfg.image_channels) + "x" +
                         std::to_string(cfg.image_side) + "x" +
                         std::to_string(cfg.image_side) + "]");
    auto tok = patchify(cond_img, cfg.patch_size);  // [N x pd]
    auto h = enc.l1.apply(tok);                     // [N x d]
    h = silu(h);
    h = enc.l2.apply(h);
    return layer_norm(h, enc.ln_gamma, enc.ln_beta);
}

// Side-branch K/V projections for one block.
template <class Real>
std::pair<Tensor<Real>, Tensor<Real>> cond_kv(const Tensor<Real>& c_h, const KvPair<Real>& p) {
    return {p.k.apply(c_h), p.v.apply(c_h)};
}

// KV-context augmented attention: keys/values are [backbone; condition],
// queries stay the backbone's text+image tokens. P = 0 degenerates to plain
// attention bit-exactly.
template <class Real>
Tensor<Real> kv_augmented_attention(const Tensor<Real>& q, const Tensor<Real>& k,
                                    const Tensor<Real>& v, const Tensor<Real>& k_c,
                                    const Tensor<Real>& v_c, int64_t n_heads,
                                    bool mask_condition = false) {
    return multihead_attention(q, k, v, n_heads, &k_c, &v_c, mask_condition);
}

}  // namespace nanocontrol
