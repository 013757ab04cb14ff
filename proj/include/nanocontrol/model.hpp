#pragma once

#include <optional>

#include "nanocontrol/adamw.hpp"
#include "nanocontrol/control.hpp"

namespace nanocontrol {

template <class Real>
struct BlockParams {
    Tensor<Real> w_qkv, b_qkv;  // [d x 3d], [3d]
    Tensor<Real> w_out, b_out;  // [d x d], [d]
    Tensor<Real> w_mod, b_mod;  // [d x 6d], [6d], zero-init (adaLN-zero)
    Tensor<Real> w_mlp1, b_mlp1, w_mlp2, b_mlp2;

    static BlockParams init(const DiTConfig& cfg, Rng& rng) {
        const int64_t d = cfg.d_model, ff = cfg.d_ff();
        BlockParams b;
        b.w_qkv = Tensor<Real>::randn({d, 3 * d}, rng, Real(0.02)).set_requires_grad(true);
        b.b_qkv = Tensor<Real>::zeros({3 * d}).set_requires_grad(true);
        b.w_out = Tensor<Real>::randn({d, d}, rng, Real(0.02)).set_requires_grad(true);
        b.b_out = Tensor<Real>::zeros({d}).set_requires_grad(true);
        b.w_mod = Tensor<Real>::zeros({d, 6 * d}).set_requires_grad(true);
        b.b_mod = Tensor<Real>::zeros({6 * d}).set_requires_grad(true);
        b.w_mlp1 = Tensor<Real>::randn({d, ff}, rng, Real(0.02)).set_requires_grad(true);
        b.b_mlp1 = Tensor<Real>::zeros({ff}).set_requires_grad(true);
        b.w_mlp2 = Tensor<Real>::randn({ff, d}, rng, Real(0.02)).set_requires_grad(true);
        b.b_mlp2 = Tensor<Real>::zeros({d}).set_requires_grad(true);
        return b;
    }
};

template <class Real>
struct BackboneParams {
    Tensor<Real> patch_w, patch_b;  // [pd x d], [d]
    Tensor<Real> pos_img;           // [N x d], learned absolute positions
    Tensor<Real> text_table;        // [(classes+1)*M x d]; last group = null text
    Tensor<Real> text_slot;         // [M x d]
    Tensor<Real> time_w1, time_b1, time_w2, time_b2;
    std::vector<BlockParams<Real>> blocks;
    Tensor<Real> final_mod_w, final_mod_b;  // [d x 2d], zero-init
    Tensor<Real> final_w, final_b;          // [d x pd], zero-init
};

template <class Real>
struct ControlParams {
    // nanocontrol / additive / layer_by_layer
    CondEncoder<Real> encoder;
    std::vector<KvPair<Real>> kv;  // one K/V projection pair per block
    // unified_seq
    std::vector<LoraAdapter<Real>> lora;
    // controlnet_dup
    Tensor<Real> cnet_embed_w, cnet_embed_b;  // condition patch embed (own weights)
    Tensor<Real> z1_w, z1_b;                  // zero-init entry fusion
    std::vector<BlockParams<Real>> copies;    // trainable duplicates of the first blocks
    std::vector<Tensor<Real>> z2_w, z2_b;     // zero-init per-copy fusions
    int64_t dup_depth = 0;
};

// Per-forward debug taps used by tests.
template <class Real>
struct ForwardTap {
    Tensor<Real> initial_tokens;                  // [M+N x d] before block 0
    Tensor<Real> final_tokens;                    // tokens after the last block
    std::vector<const void*> cond_input_per_block;  // side-branch input identity
    std::vector<Tensor<Real>>* attn_weights = nullptr;
};

// The toy MM-DiT with a pluggable conditioning mechanism. Backbone and
// control parameters live in disjoint name sets; control schemes train with
// the backbone frozen.
template <class Real>
class CondModel {
public:
    CondModel(const DiTConfig& cfg, ControlScheme scheme, uint64_t seed)
        : cfg_(cfg), scheme_(scheme) {
        cfg_.validate();
        Rng root(seed);
        Rng brng = root.split(0);
        init_backbone(brng);
        Rng crng = root.split(1);
        init_control(crng);
    }

    const DiTConfig& config() const { return cfg_; }
    ControlScheme scheme() const { return scheme_; }
    BackboneParams<Real>& backbone() { return bb_; }
    ControlParams<Real>& control() { return ctl_; }

    // v prediction with the input image's shape. `cond` may be dropped
    // explicitly (classifier-free); a conditioned scheme with neither a
    // condition nor the drop flag is a contract violation.
    Tensor<Real> forward_velocity(const Tensor<Real>& img, std::optional<int64_t> label, Real t,
                                  const Tensor<Real>* cond, bool drop_cond = false,
                                  ForwardTap<Real>* tap = nullptr) const {
        const int64_t C = cfg_.image_channels, side = cfg_.image_side;
        if (img.dims() != 3 || img.dim(0) != C || img.dim(1) != side || img.dim(2) != side)
            throw ShapeError("forward: image " + shape_str(img.shape()) + ", model expects [" +
                             std::to_string(C) + "x" + std::to_string(side) + "x" +
                             std::to_string(side) + "]");
        if (t < Real(0) || t > Real(1))
            throw ContractError("forward: t must be in [0,1], got " + std::to_string(double(t)));
        if (scheme_ == ControlScheme::kNone && cond)
            throw ContractError("forward: scheme 'none' takes no condition");
        const bool use_cond = scheme_conditioned(scheme_) && !drop_cond;
        if (scheme_conditioned(scheme_) && !drop_cond && !cond)
            throw ContractError(
                "forward: scheme '" + std::string(to_string(scheme_)) +
                "' needs a condition image (or an explicit drop flag)");
        if (label && (*label < 0 || *label >= cfg_.num_classes))
            throw ContractError("forward: label " + std::to_string(*label) + " out of range");

        const int64_t M = cfg_.text_tokens, N = cfg_.n_image_tokens(), d = cfg_.d_model;

        // Token embeddings.
        auto x_img = linear(patchify(img, cfg_.patch_size), bb_.patch_w, bb_.patch_b);
        x_img = add(x_img, bb_.pos_img);
        const int64_t group = label ? *label : cfg_.num_classes;
        auto x_txt = add(slice_rows(bb_.text_table, group * M, (group + 1) * M), bb_.text_slot);

        // Timestep embedding.
        auto t_emb = linear(silu(linear(timestep_features(t, d), bb_.time_w1, bb_.time_b1)),
                            bb_.time_w2, bb_.time_b2);  // [1 x d]

        // Scheme-specific condition preparation, once per forward.
        Tensor<Real> cond_stream;  // nanocontrol family: C_h + image positions
        Tensor<Real> h;
        Tensor<Real> side_h;  // controlnet duplicate stream
        if (use_cond &&
            (scheme_ == ControlScheme::kNanoControl || scheme_ == ControlScheme::kAdditive ||
             scheme_ == ControlScheme::kLayerByLayer)) {
            auto c_h = encode_condition(*cond, cfg_, ctl_.encoder);
            cond_stream = add(c_h, bb_.pos_img);  // spatial alignment via shared grid positions
        }
        if (use_cond && scheme_ == ControlScheme::kUnifiedSeq) {
            auto c_tok = linear(patchify(*cond, cfg_.patch_size), bb_.patch_w, bb_.patch_b);
            c_tok = add(c_tok, bb_.pos_img);
            h = concat_rows(concat_rows(x_txt, x_img), c_tok);  // [M+N+P x d]
        } else {
            h = concat_rows(x_txt, x_img);  // [M+N x d]
        }
        if (use_cond && scheme_ == ControlScheme::kControlNetDup) {
            auto c_tok = linear(patchify(*cond, cfg_.patch_size), ctl_.cnet_embed_w, ctl_.cnet_embed_b);
            auto z1c = linear(c_tok, ctl_.z1_w, ctl_.z1_b);
            side_h = concat_rows(x_txt, add(x_img, z1c));
        }
        if (tap) tap->initial_tokens = h;

        Tensor<Real> chain = cond_stream;  // layer_by_layer per-block condition state
        for (int64_t i = 0; i < cfg_.n_blocks; ++i) {
            if (tap && cond_stream.defined())
                tap->cond_input_per_block.push_back(
                    scheme_ == ControlScheme::kLayerByLayer ? chain.impl() : cond_stream.impl());

            Tensor<Real> kc, vc;
            if (use_cond && (scheme_ == ControlScheme::kNanoControl ||
                             scheme_ == ControlScheme::kAdditive)) {
                auto kvp = cond_kv(cond_stream, ctl_.kv[size_t(i)]);
                kc = kvp.first;
                vc = kvp.second;
            } else if (use_cond && scheme_ == ControlScheme::kLayerByLayer) {
                auto kvp = cond_kv(chain, ctl_.kv[size_t(i)]);
                kc = kvp.first;
                vc = kvp.second;
                chain = add(chain, vc);  // next block consumes this block's condition output
            }

            const LoraAdapter<Real>* lora =
                (use_cond && scheme_ == ControlScheme::kUnifiedSeq) ? &ctl_.lora[size_t(i)] : nullptr;
            const bool kv_concat =
                use_cond && (scheme_ == ControlScheme::kNanoControl ||
                             scheme_ == ControlScheme::kLayerByLayer);
            const bool cross_add = use_cond && scheme_ == ControlScheme::kAdditive;

            h = block_forward(bb_.blocks[size_t(i)], h, t_emb,
                              kv_concat ? &kc : nullptr, kv_concat ? &vc : nullptr,
                              cross_add ? &kc : nullptr, cross_add ? &vc : nullptr,
                              lora, tap ? tap->attn_weights : nullptr);

            if (use_cond && scheme_ == ControlScheme::kControlNetDup &&
                i < ctl_.dup_depth) {
                side_h = block_forward(ctl_.copies[size_t(i)], side_h, t_emb, nullptr, nullptr,
                                       nullptr, nullptr, nullptr, nullptr);
                h = add(h, linear(side_h, ctl_.z2_w[size_t(i)], ctl_.z2_b[size_t(i)]));
            }
        }
        if (tap) tap->final_tokens = h;

        // Final layer over image tokens only; condition tokens (unified) and
        // text tokens are stripped, so token ownership of the output is fixed.
        auto x_out = slice_rows(h, M, M + N);
        auto fmod = linear(t_emb, bb_.final_mod_w, bb_.final_mod_b);  // [1 x 2d]
        auto f_shift = slice_cols(fmod, 0, d);
        auto f_scale = slice_cols(fmod, d, 2 * d);
        auto f_in = modulate(layer_norm(x_out), f_scale, f_shift);
        auto out_tok = linear(f_in, bb_.final_w, bb_.final_b);  // [N x pd]
        return unpatchify(out_tok, C, side, side, cfg_.patch_size);
    }

    // One joint-attention block; exposed for block-level tests.
    Tensor<Real> block_forward(const BlockParams<Real>& bp, const Tensor<Real>& h_in,
                               const Tensor<Real>& t_emb, const Tensor<Real>* kc,
                               const Tensor<Real>* vc, const Tensor<Real>* cross_k,
                               const Tensor<Real>* cross_v, const LoraAdapter<Real>* lora,
                               std::vector<Tensor<Real>>* attn_tap) const {
        const int64_t d = cfg_.d_model;
        auto mod = linear(t_emb, bp.w_mod, bp.b_mod);  // [1 x 6d]
        auto shift1 = slice_cols(mod, 0, d);
        auto scale1 = slice_cols(mod, d, 2 * d);
        auto gate1 = slice_cols(mod, 2 * d, 3 * d);
        auto shift2 = slice_cols(mod, 3 * d, 4 * d);
        auto scale2 = slice_cols(mod, 4 * d, 5 * d);
        auto gate2 = slice_cols(mod, 5 * d, 6 * d);

        auto a_in = modulate(layer_norm(h_in), scale1, shift1);
        auto qkv = linear(a_in, bp.w_qkv, bp.b_qkv);
        if (lora) qkv = add(qkv, lora->qkv.apply(a_in));
        auto q = slice_cols(qkv, 0, d);
        auto k = slice_cols(qkv, d, 2 * d);
        auto v = slice_cols(qkv, 2 * d, 3 * d);

        auto attn = multihead_attention(q, k, v, cfg_.n_heads, kc, vc, false, attn_tap);
        if (cross_k) {
            // Cross-attention with the same queries, added to the attention
            // output ahead of the shared output projection.
            attn = add(attn, multihead_attention(q, *cross_k, *cross_v, cfg_.n_heads));
        }
        auto o = linear(attn, bp.w_out, bp.b_out);
        if (lora) o = add(o, lora->out.apply(attn));
        auto h = add(h_in, mul_rowvec(o, gate1));

        auto m_in = modulate(layer_norm(h), scale2, shift2);
        auto pre = linear(m_in, bp.w_mlp1, bp.b_mlp1);
        if (lora) pre = add(pre, lora->mlp1.apply(m_in));
        auto m_h = gelu(pre);
        auto m_o = linear(m_h, bp.w_mlp2, bp.b_mlp2);
        if (lora) m_o = add(m_o, lora->mlp2.apply(m_h));
        return add(h, mul_rowvec(m_o, gate2));
    }

    // All parameters, prefixed "backbone." / "control.".
    std::vector<NamedParam<Real>> named_params() {
        std::vector<NamedParam<Real>> out;
        collect_backbone(out);
        collect_control(out);
        return out;
    }
    std::vector<NamedParam<Real>> backbone_params() {
        std::vector<NamedParam<Real>> out;
        collect_backbone(out);
        return out;
    }
    std::vector<NamedParam<Real>> control_params() {
        std::vector<NamedParam<Real>> out;
        collect_control(out);
        return out;
    }
    // The optimizer's view: control schemes freeze the backbone.
    std::vector<NamedParam<Real>> trainable_params() {
        return scheme_ == ControlScheme::kNone ? backbone_params() : control_params();
    }

    uint64_t backbone_checksum() {
        uint64_t h = 0xcbf29ce484222325ULL;
        for (auto& p : backbone_params())
            h = fnv1a64(p.tensor.data(), size_t(p.tensor.numel()) * sizeof(Real), h);
        return h;
    }

    int64_t control_param_count() {
        int64_t n = 0;
        for (auto& p : control_params()) n += p.tensor.numel();
        return n;
    }

    // ControlNet duplicates start from the (possibly just-loaded) backbone.
    void sync_controlnet_copies() {
        if (scheme_ != ControlScheme::kControlNetDup) return;
        for (int64_t i = 0; i < ctl_.dup_depth; ++i) {
            const auto& src = bb_.blocks[size_t(i)];
            auto& dst = ctl_.copies[size_t(i)];
            auto cp = [](const Tensor<Real>& s, Tensor<Real>& t) {
                std::copy(s.data(), s.data() + s.numel(), t.data());
            };
            cp(src.w_qkv, dst.w_qkv);
            cp(src.b_qkv, dst.b_qkv);
            cp(src.w_out, dst.w_out);
            cp(src.b_out, dst.b_out);
            cp(src.w_mod, dst.w_mod);
            cp(src.b_mod, dst.b_mod);
            cp(src.w_mlp1, dst.w_mlp1);
            cp(src.b_mlp1, dst.b_mlp1);
            cp(src.w_mlp2, dst.w_mlp2);
            cp(src.b_mlp2, dst.b_mlp2);
        }
    }

    static Tensor<Real> modulate(const Tensor<Real>& x, const Tensor<Real>& scale_row,
                                 const Tensor<Real>& shift_row) {
        return add_rowvec(mul_rowvec(x, add_scalar(scale_row, Real(1))), shift_row);
    }

private:
    static Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& b) {
        return add_rowvec(matmul(x, w), b);
    }

    void init_backbone(Rng& rng) {
        const int64_t d = cfg_.d_model, pd = cfg_.patch_dim(), N = cfg_.n_image_tokens(),
                      M = cfg_.text_tokens;
        bb_.patch_w = Tensor<Real>::randn({pd, d}, rng, Real(0.02)).set_requires_grad(true);
        bb_.patch_b = Tensor<Real>::zeros({d}).set_requires_grad(true);
        bb_.pos_img = Tensor<Real>::randn({N, d}, rng, Real(0.02)).set_requires_grad(true);
        bb_.text_table = Tensor<Real>::randn({(cfg_.num_classes + 1) * M, d}, rng, Real(0.02))
                             .set_requires_grad(true);
        bb_.text_slot = Tensor<Real>::randn({M, d}, rng, Real(0.02)).set_requires_grad(true);
        bb_.time_w1 = Tensor<Real>::randn({d, d}, rng, Real(0.02)).set_requires_grad(true);
        bb_.time_b1 = Tensor<Real>::zeros({d}).set_requires_grad(true);
        bb_.time_w2 = Tensor<Real>::randn({d, d}, rng, Real(0.02)).set_requires_grad(true);
        bb_.time_b2 = Tensor<Real>::zeros({d}).set_requires_grad(true);
        bb_.blocks.clear();
        for (int64_t i = 0; i < cfg_.n_blocks; ++i)
            bb_.blocks.push_back(BlockParams<Real>::init(cfg_, rng));
        bb_.final_mod_w = Tensor<Real>::zeros({d, 2 * d}).set_requires_grad(true);
        bb_.final_mod_b = Tensor<Real>::zeros({2 * d}).set_requires_grad(true);
        bb_.final_w = Tensor<Real>::zeros({d, pd}).set_requires_grad(true);
        bb_.final_b = Tensor<Real>::zeros({pd}).set_requires_grad(true);
    }

    void init_control(Rng& rng) {
        const int64_t d = cfg_.d_model, pd = cfg_.patch_dim();
        switch (scheme_) {
            case ControlScheme::kNone:
                break;
            case ControlScheme::kNanoControl:
            case ControlScheme::kAdditive:
            case ControlScheme::kLayerByLayer:
                ctl_.encoder = CondEncoder<Real>::init(cfg_, rng);
                for (int64_t i = 0; i < cfg_.n_blocks; ++i)
                    ctl_.kv.push_back({LowRankLinear<Real>::init(d, cfg_.rank_kv, d, rng),
                                       LowRankLinear<Real>::init(d, cfg_.rank_kv, d, rng)});
                break;
            case ControlScheme::kUnifiedSeq:
                for (int64_t i = 0; i < cfg_.n_blocks; ++i) {
                    LoraAdapter<Real> a;
                    a.qkv = LowRankLinear<Real>::init(d, cfg_.rank_kv, 3 * d, rng);
                    a.out = LowRankLinear<Real>::init(d, cfg_.rank_kv, d, rng);
                    a.mlp1 = LowRankLinear<Real>::init(d, cfg_.rank_kv, cfg_.d_ff(), rng);
                    a.mlp2 = LowRankLinear<Real>::init(cfg_.d_ff(), cfg_.rank_kv, d, rng);
                    ctl_.lora.push_back(std::move(a));
                }
                break;
            case ControlScheme::kControlNetDup: {
                ctl_.dup_depth = (cfg_.n_blocks + 1) / 2;
                ctl_.cnet_embed_w =
                    Tensor<Real>::randn({pd, d}, rng, Real(0.02)).set_requires_grad(true);
                ctl_.cnet_embed_b = Tensor<Real>::zeros({d}).set_requires_grad(true);
                ctl_.z1_w = Tensor<Real>::zeros({d, d}).set_requires_grad(true);
                ctl_.z1_b = Tensor<Real>::zeros({d}).set_requires_grad(true);
                for (int64_t i = 0; i < ctl_.dup_depth; ++i) {
                    ctl_.copies.push_back(BlockParams<Real>::init(cfg_, rng));
                    ctl_.z2_w.push_back(Tensor<Real>::zeros({d, d}).set_requires_grad(true));
                    ctl_.z2_b.push_back(Tensor<Real>::zeros({d}).set_requires_grad(true));
                }
                sync_controlnet_copies();
                break;
            }
        }
    }

    void collect_backbone(std::vector<NamedParam<Real>>& out) {
        auto add = [&](const std::string& n, Tensor<Real>& t) { out.push_back({"backbone." + n, t}); };
        add("patch_embed.weight", bb_.patch_w);
        add("patch_embed.bias", bb_.patch_b);
        add("pos_img", bb_.pos_img);
        add("text_table", bb_.text_table);
        add("text_slot", bb_.text_slot);
        add("time_mlp.w1", bb_.time_w1);
        add("time_mlp.b1", bb_.time_b1);
        add("time_mlp.w2", bb_.time_w2);
        add("time_mlp.b2", bb_.time_b2);
        for (size_t i = 0; i < bb_.blocks.size(); ++i)
            collect_block("block" + std::to_string(i), bb_.blocks[i], "backbone.", out);
        add("final.mod.weight", bb_.final_mod_w);
        add("final.mod.bias", bb_.final_mod_b);
        add("final.proj.weight", bb_.final_w);
        add("final.proj.bias", bb_.final_b);
    }

    static void collect_block(const std::string& base, BlockParams<Real>& b,
                              const std::string& prefix, std::vector<NamedParam<Real>>& out) {
        auto add = [&](const std::string& n, Tensor<Real>& t) {
            out.push_back({prefix + base + "." + n, t});
        };
        add("attn.w_qkv", b.w_qkv);
        add("attn.b_qkv", b.b_qkv);
        add("attn.w_out", b.w_out);
        add("attn.b_out", b.b_out);
        add("adaln.weight", b.w_mod);
        add("adaln.bias", b.b_mod);
        add("mlp.w1", b.w_mlp1);
        add("mlp.b1", b.b_mlp1);
        add("mlp.w2", b.w_mlp2);
        add("mlp.b2", b.b_mlp2);
    }

    void collect_control(std::vector<NamedParam<Real>>& out) {
        auto add = [&](const std::string& n, Tensor<Real>& t) { out.push_back({"control." + n, t}); };
        switch (scheme_) {
            case ControlScheme::kNone:
                break;
            case ControlScheme::kNanoControl:
            case ControlScheme::kAdditive:
            case ControlScheme::kLayerByLayer:
                add("embed.l1.down", ctl_.encoder.l1.down);
                add("embed.l1.up", ctl_.encoder.l1.up);
                add("embed.l2.down", ctl_.encoder.l2.down);
                add("embed.l2.up", ctl_.encoder.l2.up);
                add("embed.ln.gamma", ctl_.encoder.ln_gamma);
                add("embed.ln.beta", ctl_.encoder.ln_beta);
                for (size_t i = 0; i < ctl_.kv.size(); ++i) {
                    const std::string b = "block" + std::to_string(i);
                    add(b + ".k.down", ctl_.kv[i].k.down);
                    add(b + ".k.up", ctl_.kv[i].k.up);
                    add(b + ".v.down", ctl_.kv[i].v.down);
                    add(b + ".v.up", ctl_.kv[i].v.up);
                }
                break;
            case ControlScheme::kUnifiedSeq:
                for (size_t i = 0; i < ctl_.lora.size(); ++i) {
                    const std::string b = "lora.block" + std::to_string(i);
                    add(b + ".qkv.down", ctl_.lora[i].qkv.down);
                    add(b + ".qkv.up", ctl_.lora[i].qkv.up);
                    add(b + ".out.down", ctl_.lora[i].out.down);
                    add(b + ".out.up", ctl_.lora[i].out.up);
                    add(b + ".mlp1.down", ctl_.lora[i].mlp1.down);
                    add(b + ".mlp1.up", ctl_.lora[i].mlp1.up);
                    add(b + ".mlp2.down", ctl_.lora[i].mlp2.down);
                    add(b + ".mlp2.up", ctl_.lora[i].mlp2.up);
                }
                break;
            case ControlScheme::kControlNetDup:
                add("cnet.embed.weight", ctl_.cnet_embed_w);
                add("cnet.embed.bias", ctl_.cnet_embed_b);
                add("cnet.z1.weight", ctl_.z1_w);
                add("cnet.z1.bias", ctl_.z1_b);
                for (size_t i = 0; i < ctl_.copies.size(); ++i) {
                    collect_block("cnet.copy" + std::to_string(i), ctl_.copies[i], "control.", out);
                    add("cnet.z2_" + std::to_string(i) + ".weight", ctl_.z2_w[i]);
                    add("cnet.z2_" + std::to_string(i) + ".bias", ctl_.z2_b[i]);
                }
                break;
        }
    }

    DiTConfig cfg_;
    ControlScheme scheme_;
    BackboneParams<Real> bb_;
    ControlParams<Real> ctl_;
};

}  // namespace nanocontrol
