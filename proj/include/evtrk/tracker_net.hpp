#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "evtrk/layers.hpp"
#include "evtrk/net_config.hpp"

namespace evtrk {

// Feature-pyramid patch encoder: strided/valid conv blocks down to a 1x1
// bottleneck, then bilinear top-down refinement with 1x1 lateral projections
// back to full patch resolution.
class PatchEncoder {
public:
    PatchEncoder() = default;
    PatchEncoder(const NetConfig& cfg, int in_ch, Rng& rng) : cfg_(&cfg) {
        int ch = in_ch;
        int size = cfg.patch_size;
        for (const auto& block : cfg.enc_down) {
            block_first_.push_back(static_cast<int>(down_.size()));
            for (const ConvGeom& g : block) {
                down_.emplace_back(ch, g.out_ch, g.kernel, g.stride, g.pad, rng);
                size = conv_out_size(size, g.kernel, g.stride, g.pad);
                ch = g.out_ch;
            }
            block_out_ch_.push_back(ch);
            block_out_size_.push_back(size);
        }
        if (size != 1) throw std::invalid_argument("encoder must end at 1x1");
        if (ch != cfg.feat_ch) throw std::invalid_argument("bottleneck width != feat_ch");
        for (size_t i = 0; i < cfg.up_sizes.size(); ++i) {
            int src_block = cfg.lateral_blocks[i];
            ups_.emplace_back(cfg.up_sizes[i], cfg.up_sizes[i]);
            laterals_.emplace_back(block_out_ch_[src_block], cfg.feat_ch, 1, 1, 0, rng);
            refines_.emplace_back(cfg.feat_ch, cfg.feat_ch, 3, 1, 1, rng);
            if (block_out_size_[src_block] != cfg.up_sizes[i])
                throw std::invalid_argument("lateral block size mismatch");
        }
        for (int i = 0; i < cfg.final_convs; ++i)
            finals_.emplace_back(cfg.feat_ch, cfg.feat_ch, 3, 1, 1, rng);
    }

    struct Ctx {
        std::vector<ConvBlock::Ctx> down;
        std::vector<BilinearUpsample::Ctx> up;
        std::vector<ConvBlock::Ctx> lateral;
        std::vector<ConvBlock::Ctx> refine;
        std::vector<ConvBlock::Ctx> finals;
        bool recorded = false;
    };

    struct Out {
        Tensor4 fmap;        // (N, feat_ch, S, S)
        Tensor4 bottleneck;  // (N, feat_ch, 1, 1)
    };

    Out forward(const Tensor4& x, Mode mode, Ctx* ctx = nullptr) {
        Tensor4 cur = x;
        if (ctx != nullptr) {
            ctx->down.resize(down_.size());
            ctx->up.resize(ups_.size());
            ctx->lateral.resize(ups_.size());
            ctx->refine.resize(ups_.size());
            ctx->finals.resize(finals_.size());
        }
        std::vector<Tensor4> block_out;
        size_t conv_i = 0;
        for (size_t b = 0; b < block_first_.size(); ++b) {
            size_t end = b + 1 < block_first_.size() ? block_first_[b + 1] : down_.size();
            for (; conv_i < end; ++conv_i)
                cur = down_[conv_i].forward(cur, mode,
                                            ctx != nullptr ? &ctx->down[conv_i] : nullptr);
            block_out.push_back(cur);
        }
        Tensor4 bottleneck = cur;
        for (size_t i = 0; i < ups_.size(); ++i) {
            Tensor4 up = ups_[i].forward(cur, ctx != nullptr ? &ctx->up[i] : nullptr);
            Tensor4 lat = laterals_[i].forward(block_out[cfg_->lateral_blocks[i]], mode,
                                               ctx != nullptr ? &ctx->lateral[i] : nullptr);
            for (size_t k = 0; k < up.size(); ++k) up.data()[k] += lat.data()[k];
            cur = refines_[i].forward(up, mode, ctx != nullptr ? &ctx->refine[i] : nullptr);
        }
        for (size_t i = 0; i < finals_.size(); ++i)
            cur = finals_[i].forward(cur, mode, ctx != nullptr ? &ctx->finals[i] : nullptr);
        if (ctx != nullptr) ctx->recorded = true;
        return {cur, bottleneck};
    }

    // Returns the input gradient; accumulates parameter gradients. Pass an
    // empty tensor for d_bottleneck when nothing feeds back into it directly.
    Tensor4 backward(const Ctx& ctx, const Tensor4& d_fmap, const Tensor4& d_bottleneck) {
        if (!ctx.recorded) throw std::logic_error("PatchEncoder: backward without forward");
        std::vector<Tensor4> d_block(block_first_.size());
        Tensor4 cur = d_fmap;
        for (int i = static_cast<int>(finals_.size()) - 1; i >= 0; --i)
            cur = finals_[i].backward(ctx.finals[i], cur);
        for (int i = static_cast<int>(ups_.size()) - 1; i >= 0; --i) {
            Tensor4 d_sum = refines_[i].backward(ctx.refine[i], cur);
            Tensor4 d_lat = laterals_[i].backward(ctx.lateral[i], d_sum);
            int src = cfg_->lateral_blocks[i];
            if (d_block[src].empty()) d_block[src] = d_lat;
            else
                for (size_t k = 0; k < d_lat.size(); ++k)
                    d_block[src].data()[k] += d_lat.data()[k];
            cur = ups_[i].backward(ctx.up[i], d_sum);
        }
        if (!d_bottleneck.empty())
            for (size_t k = 0; k < cur.size(); ++k) cur.data()[k] += d_bottleneck.data()[k];
        size_t conv_i = down_.size();
        for (int b = static_cast<int>(block_first_.size()) - 1; b >= 0; --b) {
            if (b + 1 < static_cast<int>(block_first_.size()) && !d_block[b].empty()) {
                // grads flowing into this block's output through a lateral
                for (size_t k = 0; k < cur.size(); ++k) cur.data()[k] += d_block[b].data()[k];
            }
            size_t begin = block_first_[b];
            while (conv_i > begin) {
                --conv_i;
                cur = down_[conv_i].backward(ctx.down[conv_i], cur);
            }
        }
        return cur;
    }

    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
        for (size_t i = 0; i < down_.size(); ++i)
            down_[i].collect_params(prefix + ".down" + std::to_string(i), out);
        for (size_t i = 0; i < ups_.size(); ++i) {
            laterals_[i].collect_params(prefix + ".lateral" + std::to_string(i), out);
            refines_[i].collect_params(prefix + ".refine" + std::to_string(i), out);
        }
        for (size_t i = 0; i < finals_.size(); ++i)
            finals_[i].collect_params(prefix + ".final" + std::to_string(i), out);
    }

    const std::vector<int>& block_sizes() const { return block_out_size_; }
    const std::vector<int>& block_channels() const { return block_out_ch_; }

private:
    const NetConfig* cfg_ = nullptr;
    std::vector<ConvBlock> down_;
    std::vector<int> block_first_;
    std::vector<int> block_out_ch_, block_out_size_;
    std::vector<BilinearUpsample> ups_;
    std::vector<ConvBlock> laterals_, refines_;
    std::vector<ConvBlock> finals_;
};

// Joint encoder over [template features, event features, correlation map]:
// refinement convs, strided reduction, one ConvLSTM, reduction to a single
// feature vector.
class JointEncoder {
public:
    JointEncoder() = default;
    JointEncoder(const NetConfig& cfg, Rng& rng) : cfg_(&cfg) {
        int in_ch = 2 * cfg.feat_ch + 1;
        post_.emplace_back(in_ch, cfg.post_corr_ch, 3, 1, 1, rng);
        post_.emplace_back(cfg.post_corr_ch, cfg.post_corr_ch, 3, 1, 1, rng);
        int ch = cfg.post_corr_ch;
        int size = cfg.patch_size;
        for (const auto& block : cfg.joint_down)
            for (const ConvGeom& g : block) {
                down_.emplace_back(ch, g.out_ch, g.kernel, g.stride, g.pad, rng);
                size = conv_out_size(size, g.kernel, g.stride, g.pad);
                ch = g.out_ch;
            }
        lstm_size_ = size;
        lstm_ = ConvLstm(ch, cfg.lstm_ch, cfg.lstm_kernel, rng);
        ch = cfg.lstm_ch;
        for (const auto& block : cfg.joint_tail)
            for (const ConvGeom& g : block) {
                tail_.emplace_back(ch, g.out_ch, g.kernel, g.stride, g.pad, rng);
                size = conv_out_size(size, g.kernel, g.stride, g.pad);
                ch = g.out_ch;
            }
        if (size != 1) throw std::invalid_argument("joint encoder must end at 1x1");
        if (ch != cfg.out_dim) throw std::invalid_argument("joint tail width != out_dim");
    }

    struct Ctx {
        std::vector<ConvBlock::Ctx> post, down, tail;
        ConvLstm::Ctx lstm;
        bool recorded = false;
    };

    std::pair<Tensor4, ConvLstmState> forward(const Tensor4& cat, Mode mode,
                                              const ConvLstmState& state, Ctx* ctx = nullptr) {
        if (ctx != nullptr) {
            ctx->post.resize(post_.size());
            ctx->down.resize(down_.size());
            ctx->tail.resize(tail_.size());
        }
        Tensor4 cur = cat;
        for (size_t i = 0; i < post_.size(); ++i)
            cur = post_[i].forward(cur, mode, ctx != nullptr ? &ctx->post[i] : nullptr);
        for (size_t i = 0; i < down_.size(); ++i)
            cur = down_[i].forward(cur, mode, ctx != nullptr ? &ctx->down[i] : nullptr);
        auto [h, new_state] = lstm_.step(cur, state, ctx != nullptr ? &ctx->lstm : nullptr);
        cur = h;
        for (size_t i = 0; i < tail_.size(); ++i)
            cur = tail_[i].forward(cur, mode, ctx != nullptr ? &ctx->tail[i] : nullptr);
        if (ctx != nullptr) ctx->recorded = true;
        return {cur, new_state};
    }

    std::pair<Tensor4, ConvLstmState> backward(const Ctx& ctx, const Tensor4& d_out,
                                               const ConvLstmState& d_state_future) {
        if (!ctx.recorded) throw std::logic_error("JointEncoder: backward without forward");
        Tensor4 cur = d_out;
        for (int i = static_cast<int>(tail_.size()) - 1; i >= 0; --i)
            cur = tail_[i].backward(ctx.tail[i], cur);
        Tensor4 dh = cur;
        if (!d_state_future.hidden.empty())
            for (size_t k = 0; k < dh.size(); ++k)
                dh.data()[k] += d_state_future.hidden.data()[k];
        auto [dx, d_state_prev] = lstm_.backward(ctx.lstm, dh, d_state_future.cell);
        cur = dx;
        for (int i = static_cast<int>(down_.size()) - 1; i >= 0; --i)
            cur = down_[i].backward(ctx.down[i], cur);
        for (int i = static_cast<int>(post_.size()) - 1; i >= 0; --i)
            cur = post_[i].backward(ctx.post[i], cur);
        return {cur, d_state_prev};
    }

    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
        for (size_t i = 0; i < post_.size(); ++i)
            post_[i].collect_params(prefix + ".post" + std::to_string(i), out);
        for (size_t i = 0; i < down_.size(); ++i)
            down_[i].collect_params(prefix + ".down" + std::to_string(i), out);
        lstm_.collect_params(prefix + ".lstm", out);
        for (size_t i = 0; i < tail_.size(); ++i)
            tail_[i].collect_params(prefix + ".tail" + std::to_string(i), out);
    }

    int lstm_size() const { return lstm_size_; }
    int lstm_channels() const { return cfg_->lstm_ch; }

private:
    const NetConfig* cfg_ = nullptr;
    std::vector<ConvBlock> post_, down_, tail_;
    ConvLstm lstm_;
    int lstm_size_ = 0;
};

// Cross-track fusion: per-feature state fusion through two linear layers,
// multi-head self-attention over all features of the frame with a
// LayerScale-weighted skip connection, a gating update of the per-feature
// state, and a linear displacement head.
class FrameAttention {
public:
    FrameAttention() = default;
    FrameAttention(const NetConfig& cfg, Rng& rng)
        : dim_(cfg.out_dim), use_attention_(cfg.use_attention),
          fuse1_(2 * cfg.out_dim, cfg.out_dim, rng), fuse2_(cfg.out_dim, cfg.out_dim, rng),
          mha_(cfg.out_dim, cfg.attn_heads, rng), scale_(cfg.out_dim, cfg.layerscale_init),
          gate_(cfg.out_dim, rng), head_(cfg.out_dim, 2, rng) {
        for (double& w : head_.weight.flat()) w *= cfg.head_init_scale;
        head_.bias.fill(0.0);
    }

    struct Ctx {
        Linear::Ctx f1, f2;
        LeakyReLU::Ctx a1, a2;
        MultiHeadAttention::Ctx mha;
        LayerScale::Ctx ls;
        GatingUnit::Ctx gate;
        Linear::Ctx head;
        bool attention_used = false;
        bool recorded = false;
    };

    // (features N x D, states N x D) -> (displacements N x 2, new states)
    std::pair<Tensor4, Tensor4> forward(const Tensor4& feat, const Tensor4& state,
                                        Ctx* ctx = nullptr) {
        if (feat.n() < 1) throw std::invalid_argument("FrameAttention: empty feature set");
        Ctx local;
        Ctx* c = ctx != nullptr ? ctx : &local;
        Tensor4 joint = concat_channels({&feat, &state});
        Tensor4 fused = act_.forward(fuse1_.forward(joint, &c->f1), &c->a1);
        fused = act_.forward(fuse2_.forward(fused, &c->f2), &c->a2);
        Tensor4 z = fused;
        c->attention_used = use_attention_;
        if (use_attention_) {
            Tensor4 att = mha_.forward(fused, &c->mha);
            att = scale_.forward(att, &c->ls);
            for (size_t k = 0; k < z.size(); ++k) z.data()[k] += att.data()[k];
        }
        Tensor4 new_state = gate_.forward(z, state, &c->gate);
        Tensor4 disp = head_.forward(new_state, &c->head);
        if (ctx != nullptr) ctx->recorded = true;
        return {disp, new_state};
    }

    // (d_disp, d_state_next) -> (d_feat, d_state_prev)
    std::pair<Tensor4, Tensor4> backward(const Ctx& ctx, const Tensor4& d_disp,
                                         const Tensor4& d_state_next) {
        if (!ctx.recorded) throw std::logic_error("FrameAttention: backward without forward");
        Tensor4 d_state = head_.backward(ctx.head, d_disp);
        if (!d_state_next.empty())
            for (size_t k = 0; k < d_state.size(); ++k)
                d_state.data()[k] += d_state_next.data()[k];
        auto [dz, d_sprev_gate] = gate_.backward(ctx.gate, d_state);
        Tensor4 d_fused = dz;
        if (ctx.attention_used) {
            Tensor4 d_att = scale_.backward(ctx.ls, dz);
            Tensor4 d_from_att = mha_.backward(ctx.mha, d_att);
            for (size_t k = 0; k < d_fused.size(); ++k)
                d_fused.data()[k] += d_from_att.data()[k];
        }
        Tensor4 d = act_.backward(ctx.a2, d_fused);
        d = fuse2_.backward(ctx.f2, d);
        d = act_.backward(ctx.a1, d);
        d = fuse1_.backward(ctx.f1, d);
        auto parts = split_channels(d, {dim_, dim_});
        Tensor4 d_sprev = std::move(parts[1]);
        for (size_t k = 0; k < d_sprev.size(); ++k)
            d_sprev.data()[k] += d_sprev_gate.data()[k];
        return {std::move(parts[0]), std::move(d_sprev)};
    }

    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
        fuse1_.collect_params(prefix + ".fuse1", out);
        fuse2_.collect_params(prefix + ".fuse2", out);
        mha_.collect_params(prefix + ".mha", out);
        scale_.collect_params(prefix + ".layerscale", out);
        gate_.collect_params(prefix + ".gate", out);
        head_.collect_params(prefix + ".head", out);
    }

    void set_use_attention(bool on) { use_attention_ = on; }
    bool use_attention() const { return use_attention_; }
    LayerScale& layerscale() { return scale_; }
    Linear& head() { return head_; }

private:
    int dim_ = 0;
    bool use_attention_ = true;
    Linear fuse1_, fuse2_;
    LeakyReLU act_;
    MultiHeadAttention mha_;
    LayerScale scale_;
    GatingUnit gate_;
    Linear head_;
};

struct TemplateContext {
    Tensor4 feature_map;  // (N, feat_ch, S, S), fixed for the track's lifetime
    Tensor4 bottleneck;   // (N, feat_ch, 1, 1)
};

// Batched recurrent state over the features of one frame.
struct NetState {
    ConvLstmState lstm;
    Tensor4 attention;  // (N, out_dim, 1, 1)
};

// The full tracker: two patch encoders, correlation, joint recurrent encoder
// and the frame attention module.
class TrackerNet {
public:
    explicit TrackerNet(const NetConfig& cfg, std::uint64_t seed = 7)
        : cfg_(cfg), rng_(seed) {
        template_enc_ = PatchEncoder(cfg_, cfg_.template_in_ch, rng_);
        event_enc_ = PatchEncoder(cfg_, cfg_.event_in_ch, rng_);
        joint_ = JointEncoder(cfg_, rng_);
        attn_ = FrameAttention(cfg_, rng_);
    }

    const NetConfig& config() const { return cfg_; }

    NetState zero_state(int n_features) const {
        NetState s;
        s.lstm = ConvLstmState::zeros(n_features, cfg_.lstm_ch, joint_.lstm_size(),
                                      joint_.lstm_size());
        s.attention = Tensor4(n_features, cfg_.out_dim, 1, 1);
        return s;
    }

    TemplateContext encode_template(const Tensor4& patches, Mode mode,
                                    PatchEncoder::Ctx* train_ctx = nullptr) {
        if (patches.c() != cfg_.template_in_ch || patches.h() != cfg_.patch_size)
            throw std::invalid_argument("encode_template: wrong patch shape");
        PatchEncoder::Ctx local;
        PatchEncoder::Ctx* ctx = train_ctx != nullptr ? train_ctx : &local;
        auto out = template_enc_.forward(patches, mode, ctx);
        return {std::move(out.fmap), std::move(out.bottleneck)};
    }

    // c(u, v) = <bottleneck, event_feature(u, v)> / sqrt(feat_ch)
    Tensor4 correlation_map(const Tensor4& bottleneck, const Tensor4& event_fmap) const {
        int n = event_fmap.n(), s = event_fmap.h(), ch = event_fmap.c();
        if (bottleneck.c() != ch) throw std::invalid_argument("correlation: width mismatch");
        Tensor4 corr(n, 1, s, s);
        double scale = 1.0 / std::sqrt(static_cast<double>(ch));
        for (int in = 0; in < n; ++in) {
            const double* r0 = bottleneck.slice(in);
            const double* f = event_fmap.slice(in);
            double* out = corr.slice(in);
            size_t plane = static_cast<size_t>(s) * s;
            for (size_t p = 0; p < plane; ++p) out[p] = 0.0;
            for (int c = 0; c < ch; ++c) {
                double w = r0[c] * scale;
                const double* fp = f + static_cast<size_t>(c) * plane;
                for (size_t p = 0; p < plane; ++p) out[p] += w * fp[p];
            }
        }
        return corr;
    }

    struct StepCtx {
        PatchEncoder::Ctx event_enc;
        Tensor4 event_fmap;     // saved for the correlation backward
        Tensor4 bottleneck;     // template bottleneck used this step
        JointEncoder::Ctx joint;
        FrameAttention::Ctx attn;
        bool recorded = false;
    };

    // One tracking step for all features of a frame.
    // patches: (N, event_in_ch, S, S) event representations.
    std::pair<Tensor4, NetState> step(const TemplateContext& tmpl, const Tensor4& patches,
                                      const NetState& state, Mode mode,
                                      StepCtx* ctx = nullptr) {
        if (patches.c() != cfg_.event_in_ch || patches.h() != cfg_.patch_size)
            throw std::invalid_argument("step: wrong event patch shape");
        if (state.lstm.hidden.empty()) throw std::invalid_argument("step: uninitialized state");
        StepCtx local;
        StepCtx* c = ctx != nullptr ? ctx : &local;
        auto ev = event_enc_.forward(patches, mode, &c->event_enc);
        Tensor4 corr = correlation_map(tmpl.bottleneck, ev.fmap);
        Tensor4 cat = concat_channels({&tmpl.feature_map, &ev.fmap, &corr});
        auto [vec, lstm_state] = joint_.forward(cat, mode, state.lstm, &c->joint);
        auto [disp, new_attn_state] = attn_.forward(vec, state.attention, &c->attn);
        if (ctx != nullptr) {
            ctx->event_fmap = std::move(ev.fmap);
            ctx->bottleneck = tmpl.bottleneck;
            ctx->recorded = true;
        }
        NetState ns;
        ns.lstm = std::move(lstm_state);
        ns.attention = std::move(new_attn_state);
        return {std::move(disp), std::move(ns)};
    }

    struct StepGrad {
        ConvLstmState d_lstm;  // gradient flowing into this step's output state
        Tensor4 d_attention;
    };

    // Reverse one step; accumulates parameter grads and the gradients into
    // the (fixed) template feature map and bottleneck.
    StepGrad backward_step(const StepCtx& ctx, const Tensor4& d_disp, const StepGrad& future,
                           Tensor4& d_template_fmap, Tensor4& d_bottleneck) {
        if (!ctx.recorded) throw std::logic_error("TrackerNet: backward without forward");
        auto [d_vec, d_attn_prev] = attn_.backward(ctx.attn, d_disp, future.d_attention);
        auto [d_cat, d_lstm_prev] = joint_.backward(ctx.joint, d_vec, future.d_lstm);
        auto parts = split_channels(d_cat, {cfg_.feat_ch, cfg_.feat_ch, 1});
        // template feature map grads accumulate across steps
        if (d_template_fmap.empty()) d_template_fmap = Tensor4(parts[0].n(), parts[0].c(),
                                                               parts[0].h(), parts[0].w());
        for (size_t k = 0; k < parts[0].size(); ++k)
            d_template_fmap.data()[k] += parts[0].data()[k];
        // correlation backward
        Tensor4 d_event_fmap = std::move(parts[1]);
        const Tensor4& d_corr = parts[2];
        if (d_bottleneck.empty())
            d_bottleneck = Tensor4(ctx.bottleneck.n(), ctx.bottleneck.c(), 1, 1);
        int s = cfg_.patch_size;
        size_t plane = static_cast<size_t>(s) * s;
        double scale = 1.0 / std::sqrt(static_cast<double>(cfg_.feat_ch));
        for (int in = 0; in < d_corr.n(); ++in) {
            const double* dc = d_corr.slice(in);
            const double* f = ctx.event_fmap.slice(in);
            const double* r0 = ctx.bottleneck.slice(in);
            double* db = d_bottleneck.slice(in);
            double* df = d_event_fmap.slice(in);
            for (int c = 0; c < cfg_.feat_ch; ++c) {
                const double* fp = f + static_cast<size_t>(c) * plane;
                double* dfp = df + static_cast<size_t>(c) * plane;
                double acc = 0.0;
                for (size_t p = 0; p < plane; ++p) {
                    acc += dc[p] * fp[p];
                    dfp[p] += dc[p] * r0[c] * scale;
                }
                db[c] += acc * scale;
            }
        }
        event_enc_.backward(ctx.event_enc, d_event_fmap, Tensor4());
        StepGrad prev;
        prev.d_lstm = std::move(d_lstm_prev);
        prev.d_attention = std::move(d_attn_prev);
        return prev;
    }

    void backward_template(const PatchEncoder::Ctx& ctx, const Tensor4& d_fmap,
                           const Tensor4& d_bottleneck) {
        template_enc_.backward(ctx, d_fmap, d_bottleneck);
    }

    std::vector<ParamRef> params() {
        std::vector<ParamRef> out;
        template_enc_.collect_params("template_enc", out);
        event_enc_.collect_params("event_enc", out);
        joint_.collect_params("joint", out);
        attn_.collect_params("frame_attn", out);
        return out;
    }

    void zero_grad() {
        for (auto& p : params())
            if (p.trainable) p.value->zero_grad();
    }

    // Declared per-row architecture: block outputs of the shared encoder
    // column, the FPN path, the correlation/joint column and the attention
    // dims. Construction already validates declared sizes against the conv
    // arithmetic.
    std::vector<LayerShape> architecture_report() const {
        std::vector<LayerShape> rows;
        for (size_t b = 0; b < cfg_.enc_down.size(); ++b)
            rows.push_back({"encoder_block" + std::to_string(b), cfg_.enc_down[b].back().out_ch,
                            template_enc_.block_sizes()[b]});
        for (size_t i = 0; i < cfg_.up_sizes.size(); ++i)
            rows.push_back({"fpn_up" + std::to_string(i), cfg_.feat_ch, cfg_.up_sizes[i]});
        rows.push_back({"feature_map", cfg_.feat_ch, cfg_.patch_size});
        rows.push_back({"correlation", 1, cfg_.patch_size});
        rows.push_back({"joint_post", cfg_.post_corr_ch, cfg_.patch_size});
        int size = cfg_.patch_size;
        for (size_t b = 0; b < cfg_.joint_down.size(); ++b) {
            for (const ConvGeom& g : cfg_.joint_down[b])
                size = conv_out_size(size, g.kernel, g.stride, g.pad);
            rows.push_back({"joint_down" + std::to_string(b), cfg_.joint_down[b].back().out_ch,
                            size});
        }
        rows.push_back({"convlstm", cfg_.lstm_ch, size});
        for (size_t b = 0; b < cfg_.joint_tail.size(); ++b) {
            for (const ConvGeom& g : cfg_.joint_tail[b])
                size = conv_out_size(size, g.kernel, g.stride, g.pad);
            rows.push_back({"joint_tail" + std::to_string(b), cfg_.joint_tail[b].back().out_ch,
                            size});
        }
        rows.push_back({"attn_fuse1", cfg_.out_dim, 1});
        rows.push_back({"attn_fuse2", cfg_.out_dim, 1});
        rows.push_back({"attn_mha", cfg_.out_dim, 1});
        rows.push_back({"attn_layerscale", cfg_.out_dim, 1});
        rows.push_back({"attn_gating", cfg_.out_dim, 1});
        rows.push_back({"attn_head", 2, 1});
        return rows;
    }

    FrameAttention& frame_attention() { return attn_; }
    JointEncoder& joint_encoder() { return joint_; }

private:
    NetConfig cfg_;
    Rng rng_;
    PatchEncoder template_enc_, event_enc_;
    JointEncoder joint_;
    FrameAttention attn_;
};

}  // namespace evtrk
