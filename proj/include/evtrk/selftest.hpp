#pragma once

#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "evtrk/augmentation.hpp"
#include "evtrk/gradcheck.hpp"
#include "evtrk/layers.hpp"
#include "evtrk/losses.hpp"
#include "evtrk/metrics.hpp"
#include "evtrk/representation.hpp"
#include "evtrk/runtime.hpp"
#include "evtrk/tracker_net.hpp"

namespace evtrk {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

namespace selftest {

// ---- oracles (independent scan implementations) ---------------------------

inline Tensor4 naive_conv(const Conv2d& conv, const Tensor4& x) {
    int oh = conv_out_size(x.h(), conv.kernel(), conv.stride(), conv.pad());
    int ow = conv_out_size(x.w(), conv.kernel(), conv.stride(), conv.pad());
    Tensor4 y(x.n(), conv.out_channels(), oh, ow);
    for (int n = 0; n < x.n(); ++n)
        for (int oc = 0; oc < conv.out_channels(); ++oc)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = conv.bias.data()[oc];
                    for (int ic = 0; ic < conv.in_channels(); ++ic)
                        for (int ky = 0; ky < conv.kernel(); ++ky)
                            for (int kx = 0; kx < conv.kernel(); ++kx) {
                                int sy = oy * conv.stride() - conv.pad() + ky;
                                int sx = ox * conv.stride() - conv.pad() + kx;
                                if (sy < 0 || sx < 0 || sy >= x.h() || sx >= x.w()) continue;
                                acc += x.at(n, ic, sy, sx) * conv.weight.at(oc, ic, ky, kx);
                            }
                    y.at(n, oc, oy, ox) = acc;
                }
    return y;
}

inline PatchTensor sbt_max_scan(std::span<const Event> slice, std::int64_t t0,
                                const RepresentationConfig& cfg, int cx, int cy) {
    int side = 2 * cfg.patch_radius + 1;
    int bins = cfg.bins_per_polarity;
    PatchTensor out(2 * bins, side, side, ChannelSemantics::sbt_max);
    double bin_w = static_cast<double>(cfg.window_us) / bins;
    for (int ch = 0; ch < 2 * bins; ++ch) {
        int pol = ch < bins ? 1 : -1;
        int bin = ch % bins;
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x) {
                std::int64_t best_t = INT64_MIN;
                double value = 0.0;
                for (const Event& e : slice) {
                    if (e.polarity != pol) continue;
                    if (e.x != cx - cfg.patch_radius + x || e.y != cy - cfg.patch_radius + y)
                        continue;
                    std::int64_t dt = e.t - t0;
                    if (dt < 0 || dt >= cfg.window_us) continue;
                    int b = std::min(bins - 1, static_cast<int>(dt / bin_w));
                    if (b != bin || e.t < best_t) continue;
                    best_t = e.t;
                    value = (dt - b * bin_w) / bin_w;
                }
                out.at(ch, y, x) = value;
            }
    }
    return out;
}

inline PatchTensor sbt_scan(std::span<const Event> slice, std::int64_t t0,
                            const RepresentationConfig& cfg, int cx, int cy, bool norm) {
    int side = 2 * cfg.patch_radius + 1;
    int bins = cfg.bins_per_polarity;
    PatchTensor out(2 * bins, side, side, norm ? ChannelSemantics::sbt
                                               : ChannelSemantics::sbt_no_norm);
    double bin_w = static_cast<double>(cfg.window_us) / bins;
    std::int64_t total = 0;
    for (const Event& e : slice) {
        std::int64_t dt = e.t - t0;
        if (dt < 0 || dt >= cfg.window_us) continue;
        int px = e.x - (cx - cfg.patch_radius), py = e.y - (cy - cfg.patch_radius);
        if (px < 0 || py < 0 || px >= side || py >= side) continue;
        out.at((e.polarity > 0 ? 0 : bins) + std::min(bins - 1, static_cast<int>(dt / bin_w)),
               py, px) += 1.0;
        ++total;
    }
    if (norm && total > 0)
        for (double& v : out.data) v /= static_cast<double>(total);
    return out;
}

inline PatchTensor voxel_scan(std::span<const Event> slice, std::int64_t t0,
                              const RepresentationConfig& cfg, int cx, int cy) {
    int side = 2 * cfg.patch_radius + 1;
    int bins = cfg.bins_per_polarity;
    PatchTensor out(bins, side, side, ChannelSemantics::voxel_grid);
    for (const Event& e : slice) {
        std::int64_t dt = e.t - t0;
        if (dt < 0 || dt >= cfg.window_us) continue;
        int px = e.x - (cx - cfg.patch_radius), py = e.y - (cy - cfg.patch_radius);
        if (px < 0 || py < 0 || px >= side || py >= side) continue;
        double p = e.polarity > 0 ? 1.0 : -1.0;
        double ts = static_cast<double>(dt) / static_cast<double>(cfg.window_us) * (bins - 1);
        int k0 = std::min(bins - 2, static_cast<int>(std::floor(ts)));
        out.at(k0, py, px) += p * (1.0 - (ts - k0));
        out.at(k0 + 1, py, px) += p * (ts - k0);
    }
    return out;
}

// Exhaustive (track, threshold, timestep) metric scan.
inline MetricReport metrics_scan(const std::vector<FeatureTrack>& pred,
                                 const std::vector<FeatureTrack>& gt, int lo, int hi) {
    MetricReport rep;
    double sfa = 0, sexp = 0, sir = 0;
    for (int eps = lo; eps <= hi; ++eps) {
        ThresholdMetrics tm;
        tm.threshold_px = eps;
        double fa_acc = 0.0;
        for (const FeatureTrack& g : gt) {
            const FeatureTrack* p = nullptr;
            for (const FeatureTrack& cand : pred)
                if (cand.feature_id == g.feature_id) p = &cand;
            std::vector<double> dist;
            for (const TrackSample& gs : g.samples) {
                double d = std::numeric_limits<double>::infinity();
                if (p != nullptr)
                    for (const TrackSample& ps : p->samples)
                        if (ps.t_us == gs.t_us) {
                            double du = ps.u - gs.u, dv = ps.v - gs.v;
                            d = std::sqrt(du * du + dv * dv);
                        }
                dist.push_back(d);
            }
            if (!(dist[1] <= eps)) continue;
            ++tm.stable_tracks;
            size_t k = 0;
            while (k < dist.size() && dist[k] <= eps) ++k;
            double fa = 1.0;
            if (k < dist.size())
                fa = static_cast<double>(g.samples[k].t_us - g.samples.front().t_us) /
                     static_cast<double>(g.samples.back().t_us - g.samples.front().t_us);
            fa_acc += fa;
        }
        tm.inlier_ratio = static_cast<double>(tm.stable_tracks) / static_cast<double>(gt.size());
        tm.feature_age = tm.stable_tracks > 0 ? fa_acc / tm.stable_tracks : 0.0;
        tm.expected_fa = tm.feature_age * tm.inlier_ratio;
        rep.per_threshold.push_back(tm);
        sfa += tm.feature_age;
        sexp += tm.expected_fa;
        sir += tm.inlier_ratio;
    }
    int n = hi - lo + 1;
    rep.feature_age = sfa / n;
    rep.expected_fa = sexp / n;
    rep.inlier_ratio = sir / n;
    return rep;
}

}  // namespace selftest

// ---- check suites ----------------------------------------------------------

// Criterion: every differentiable layer and both losses pass central finite
// differences (h = 1e-5, relative error < 1e-4) on >= 5 seeds each.
inline std::vector<CheckResult> selftest_gradients(int n_seeds = 5) {
    Stopwatch watch;
    std::vector<CheckResult> results;
    auto add = [&](const std::string& name, double max_rel) {
        CheckResult r;
        r.name = "gradcheck " + name;
        r.pass = max_rel < 1e-4;
        char buf[64];
        std::snprintf(buf, sizeof(buf), "max rel err %.3g", max_rel);
        r.detail = buf;
        results.push_back(r);
    };

    auto with_seeds = [&](const std::string& name,
                          const std::function<double(Rng&)>& body) {
        double worst = 0.0;
        for (int s = 1; s <= n_seeds; ++s) {
            Rng rng(static_cast<std::uint64_t>(s) * 77 + 5);
            worst = std::max(worst, body(rng));
        }
        add(name, worst);
    };

    with_seeds("conv", [](Rng& rng) {
        Conv2d conv(2, 3, 3, 2, 1, rng);
        Tensor4 x(2, 2, 6, 6);
        rng.fill_uniform(x, -1, 1);
        WeightedSum ws(2 * 3 * 3 * 3, rng);
        auto loss = [&]() { return ws(conv.forward(x)); };
        Conv2d::Ctx ctx;
        Tensor4 y = conv.forward(x, &ctx);
        conv.weight.zero_grad();
        conv.bias.zero_grad();
        Tensor4 dx = conv.backward(ctx, ws.upstream(y.n(), y.c(), y.h(), y.w()));
        double worst = finite_difference_check(x.flat(), dx.flat(), loss, rng).max_rel_err;
        worst = std::max(worst, finite_difference_check(conv.weight.flat(),
                                                        conv.weight.grad(), loss, rng)
                                    .max_rel_err);
        worst = std::max(worst, finite_difference_check(conv.bias.flat(), conv.bias.grad(),
                                                        loss, rng)
                                    .max_rel_err);
        return worst;
    });

    with_seeds("upsample", [](Rng& rng) {
        BilinearUpsample up(7, 7);
        Tensor4 x(1, 2, 3, 3);
        rng.fill_uniform(x, -1, 1);
        WeightedSum ws(2 * 7 * 7, rng);
        auto loss = [&]() { return ws(up.forward(x)); };
        BilinearUpsample::Ctx ctx;
        up.forward(x, &ctx);
        Tensor4 dx = up.backward(ctx, ws.upstream(1, 2, 7, 7));
        return finite_difference_check(x.flat(), dx.flat(), loss, rng).max_rel_err;
    });

    with_seeds("leaky_relu", [](Rng& rng) {
        LeakyReLU act;
        Tensor4 x(2, 2, 4, 4);
        rng.fill_uniform(x, -1, 1);
        for (double& v : x.flat())
            if (std::abs(v) < 1e-3) v += 0.1;
        WeightedSum ws(2 * 2 * 4 * 4, rng);
        auto loss = [&]() { return ws(act.forward(x)); };
        LeakyReLU::Ctx ctx;
        act.forward(x, &ctx);
        Tensor4 dx = act.backward(ctx, ws.upstream(2, 2, 4, 4));
        return finite_difference_check(x.flat(), dx.flat(), loss, rng).max_rel_err;
    });

    with_seeds("batchnorm", [](Rng& rng) {
        BatchNorm2d bn(2);
        rng.fill_uniform(bn.gamma, 0.5, 1.5);
        rng.fill_uniform(bn.beta, -0.5, 0.5);
        Tensor4 x(3, 2, 4, 4);
        rng.fill_uniform(x, -1, 1);
        WeightedSum ws(3 * 2 * 4 * 4, rng);
        auto loss = [&]() { return ws(bn.forward(x, Mode::train)); };
        BatchNorm2d::Ctx ctx;
        bn.forward(x, Mode::train, &ctx);
        bn.gamma.zero_grad();
        bn.beta.zero_grad();
        Tensor4 dx = bn.backward(ctx, ws.upstream(3, 2, 4, 4));
        double worst = finite_difference_check(x.flat(), dx.flat(), loss, rng).max_rel_err;
        worst = std::max(worst, finite_difference_check(bn.gamma.flat(), bn.gamma.grad(), loss,
                                                        rng)
                                    .max_rel_err);
        return worst;
    });

    with_seeds("convlstm_3steps", [](Rng& rng) {
        ConvLstm lstm(2, 3, 3, rng);
        std::vector<Tensor4> xs;
        for (int k = 0; k < 3; ++k) {
            Tensor4 x(1, 2, 4, 4);
            rng.fill_uniform(x, -1, 1);
            xs.push_back(x);
        }
        WeightedSum ws(3 * 4 * 4, rng);
        auto run = [&](std::vector<ConvLstm::Ctx>* ctxs) {
            auto state = ConvLstmState::zeros(1, 3, 4, 4);
            double total = 0.0;
            for (int k = 0; k < 3; ++k) {
                ConvLstm::Ctx c;
                auto [h, s] = lstm.step(xs[k], state, ctxs != nullptr ? &c : nullptr);
                total += ws(h);
                state = s;
                if (ctxs != nullptr) ctxs->push_back(std::move(c));
            }
            return total;
        };
        auto loss = [&]() { return run(nullptr); };
        std::vector<ConvLstm::Ctx> ctxs;
        run(&ctxs);
        lstm.gates.weight.zero_grad();
        lstm.gates.bias.zero_grad();
        Tensor4 dh(1, 3, 4, 4, 0.0), dc(1, 3, 4, 4, 0.0);
        std::vector<Tensor4> dxs(3);
        for (int k = 2; k >= 0; --k) {
            Tensor4 up = ws.upstream(1, 3, 4, 4);
            for (size_t i = 0; i < up.size(); ++i) up.data()[i] += dh.data()[i];
            auto [dx, dstate] = lstm.backward(ctxs[k], up, dc);
            dxs[k] = std::move(dx);
            dh = std::move(dstate.hidden);
            dc = std::move(dstate.cell);
        }
        double worst = 0.0;
        for (int k = 0; k < 3; ++k)
            worst = std::max(worst,
                             finite_difference_check(xs[k].flat(), dxs[k].flat(), loss, rng)
                                 .max_rel_err);
        worst = std::max(worst, finite_difference_check(lstm.gates.weight.flat(),
                                                        lstm.gates.weight.grad(), loss, rng)
                                    .max_rel_err);
        return worst;
    });

    with_seeds("linear", [](Rng& rng) {
        Linear lin(4, 5, rng);
        Tensor4 x(3, 4, 1, 1);
        rng.fill_uniform(x, -1, 1);
        WeightedSum ws(3 * 5, rng);
        auto loss = [&]() { return ws(lin.forward(x)); };
        Linear::Ctx ctx;
        lin.forward(x, &ctx);
        lin.weight.zero_grad();
        lin.bias.zero_grad();
        Tensor4 dx = lin.backward(ctx, ws.upstream(3, 5, 1, 1));
        double worst = finite_difference_check(x.flat(), dx.flat(), loss, rng).max_rel_err;
        worst = std::max(worst, finite_difference_check(lin.weight.flat(), lin.weight.grad(),
                                                        loss, rng)
                                    .max_rel_err);
        return worst;
    });

    with_seeds("attention", [](Rng& rng) {
        MultiHeadAttention mha(8, 2, rng);
        Tensor4 x(3, 8, 1, 1);
        rng.fill_uniform(x, -1, 1);
        WeightedSum ws(3 * 8, rng);
        auto loss = [&]() { return ws(mha.forward(x)); };
        MultiHeadAttention::Ctx ctx;
        mha.forward(x, &ctx);
        std::vector<ParamRef> params;
        mha.collect_params("mha", params);
        for (auto& p : params) p.value->zero_grad();
        Tensor4 dx = mha.backward(ctx, ws.upstream(3, 8, 1, 1));
        double worst = finite_difference_check(x.flat(), dx.flat(), loss, rng).max_rel_err;
        for (auto& p : params)
            worst = std::max(worst, finite_difference_check(p.value->flat(), p.value->grad(),
                                                            loss, rng)
                                        .max_rel_err);
        return worst;
    });

    with_seeds("layerscale", [](Rng& rng) {
        LayerScale ls(4, 0.3);
        Tensor4 x(3, 4, 1, 1);
        rng.fill_uniform(x, -1, 1);
        WeightedSum ws(3 * 4, rng);
        auto loss = [&]() { return ws(ls.forward(x)); };
        LayerScale::Ctx ctx;
        ls.forward(x, &ctx);
        ls.gamma.zero_grad();
        Tensor4 dx = ls.backward(ctx, ws.upstream(3, 4, 1, 1));
        double worst = finite_difference_check(x.flat(), dx.flat(), loss, rng).max_rel_err;
        worst = std::max(worst, finite_difference_check(ls.gamma.flat(), ls.gamma.grad(), loss,
                                                        rng)
                                    .max_rel_err);
        return worst;
    });

    with_seeds("gating", [](Rng& rng) {
        GatingUnit gate(4, rng);
        Tensor4 x(3, 4, 1, 1), s(3, 4, 1, 1);
        rng.fill_uniform(x, -1, 1);
        rng.fill_uniform(s, -1, 1);
        WeightedSum ws(3 * 4, rng);
        auto loss = [&]() { return ws(gate.forward(x, s)); };
        GatingUnit::Ctx ctx;
        gate.forward(x, s, &ctx);
        gate.lin.weight.zero_grad();
        gate.lin.bias.zero_grad();
        auto [dx, ds] = gate.backward(ctx, ws.upstream(3, 4, 1, 1));
        double worst = finite_difference_check(x.flat(), dx.flat(), loss, rng).max_rel_err;
        worst = std::max(worst,
                         finite_difference_check(s.flat(), ds.flat(), loss, rng).max_rel_err);
        worst = std::max(worst, finite_difference_check(gate.lin.weight.flat(),
                                                        gate.lin.weight.grad(), loss, rng)
                                    .max_rel_err);
        return worst;
    });

    with_seeds("truncated_l1_loss", [](Rng& rng) {
        std::vector<Eigen::Vector2d> pred, gt;
        for (int i = 0; i < 8; ++i) {
            gt.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1)});
            double scale = i % 4 == 0 ? 20.0 : 3.0;
            pred.push_back(gt.back() +
                           Eigen::Vector2d(rng.uniform(0.3, scale), rng.uniform(0.3, scale)));
        }
        std::vector<Eigen::Vector2d> grad;
        truncated_l1_loss(pred, gt, 8.0, &grad);
        double h = 1e-5, worst = 0.0;
        for (size_t j = 0; j < pred.size(); ++j)
            for (int d = 0; d < 2; ++d) {
                double saved = pred[j](d);
                pred[j](d) = saved + h;
                double lp = truncated_l1_loss(pred, gt, 8.0).value;
                pred[j](d) = saved - h;
                double lm = truncated_l1_loss(pred, gt, 8.0).value;
                pred[j](d) = saved;
                double numeric = (lp - lm) / (2 * h);
                double denom = std::max({std::abs(numeric), std::abs(grad[j](d)), 1e-4});
                worst = std::max(worst, std::abs(numeric - grad[j](d)) / denom);
            }
        return worst;
    });

    with_seeds("pose_supervision_loss", [](Rng& rng) {
        CameraModel cam;
        cam.fx = cam.fy = 100.0;
        cam.cx = cam.cy = 64.0;
        cam.width = cam.height = 128;
        std::vector<Pose> poses;
        for (int j = 0; j < 6; ++j) {
            Pose p;
            p.T = Eigen::Vector3d(0.14 * j, 0.03 * j, 0.0);
            p.t_us = 1000 * j;
            poses.push_back(p);
        }
        std::vector<FeatureTrack> tracks;
        for (int i = 0; i < 3; ++i) {
            Eigen::Vector3d x(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), 4.0);
            FeatureTrack tr;
            tr.feature_id = i;
            for (const Pose& p : poses) {
                Eigen::Vector2d uv = project(cam, p, x);
                tr.append(p.t_us, uv.x() + rng.uniform(0.2, 1.5),
                          uv.y() + rng.uniform(0.2, 1.5));
            }
            tracks.push_back(tr);
        }
        PoseLossOptions opt;
        PoseLossGrad grad;
        pose_supervision_loss(tracks, poses, cam, opt, &grad);
        double h = 1e-5, worst = 0.0;
        for (size_t ti = 0; ti < tracks.size(); ++ti)
            for (size_t si = 1; si < tracks[ti].samples.size(); si += 2)
                for (int d = 0; d < 2; ++d) {
                    double& coord =
                        d == 0 ? tracks[ti].samples[si].u : tracks[ti].samples[si].v;
                    double saved = coord;
                    coord = saved + h;
                    double lp = pose_supervision_loss(tracks, poses, cam, opt).value;
                    coord = saved - h;
                    double lm = pose_supervision_loss(tracks, poses, cam, opt).value;
                    coord = saved;
                    double numeric = (lp - lm) / (2 * h);
                    double analytic = grad.d_position[ti][si](d);
                    double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-4});
                    worst = std::max(worst, std::abs(numeric - analytic) / denom);
                }
        return worst;
    });

    results.front().seconds = watch.seconds();  // total stored on the first row
    return results;
}

// Criterion: SBT-Max / SBT / voxel match brute-force per-pixel oracles to
// 1e-12 on random streams; SBT-Max values stay in [0, 1].
inline std::vector<CheckResult> selftest_representations(int n_streams = 100) {
    Stopwatch watch;
    Rng rng(4242);
    RepresentationConfig cfg;
    cfg.bins_per_polarity = 5;
    cfg.window_us = 10000;
    cfg.patch_radius = 6;
    double worst = 0.0;
    bool range_ok = true;
    for (int trial = 0; trial < n_streams; ++trial) {
        std::vector<Event> events;
        int count = 200 + static_cast<int>(rng.uniform_int(0, 400));
        for (int i = 0; i < count; ++i) {
            Event e;
            e.x = static_cast<std::uint16_t>(rng.uniform_int(0, 23));
            e.y = static_cast<std::uint16_t>(rng.uniform_int(0, 23));
            e.t = rng.uniform_int(0, cfg.window_us - 1);
            e.polarity = rng.uniform(0, 1) < 0.5 ? -1 : 1;
            events.push_back(e);
        }
        std::stable_sort(events.begin(), events.end(),
                         [](const Event& a, const Event& b) { return a.t < b.t; });
        int cx = static_cast<int>(rng.uniform_int(6, 17));
        int cy = static_cast<int>(rng.uniform_int(6, 17));
        auto diff = [&](const PatchTensor& a, const PatchTensor& b) {
            double m = 0.0;
            for (size_t i = 0; i < a.data.size(); ++i)
                m = std::max(m, std::abs(a.data[i] - b.data[i]));
            return m;
        };
        auto got_max = build_sbt_max(events, 0, cfg, cx, cy, 24, 24);
        worst = std::max(worst, diff(got_max, selftest::sbt_max_scan(events, 0, cfg, cx, cy)));
        for (double v : got_max.data)
            if (v < 0.0 || v > 1.0) range_ok = false;
        worst = std::max(worst,
                         diff(build_sbt(events, 0, cfg, cx, cy, 24, 24, SbtNormalize::none),
                              selftest::sbt_scan(events, 0, cfg, cx, cy, false)));
        worst = std::max(
            worst, diff(build_sbt(events, 0, cfg, cx, cy, 24, 24, SbtNormalize::per_event_count),
                        selftest::sbt_scan(events, 0, cfg, cx, cy, true)));
        worst = std::max(worst, diff(build_voxel_grid(events, 0, cfg, cx, cy, 24, 24),
                                     selftest::voxel_scan(events, 0, cfg, cx, cy)));
    }
    CheckResult r;
    r.name = "representation oracles (" + std::to_string(n_streams) + " streams)";
    r.pass = worst < 1e-12 && range_ok;
    char buf[96];
    std::snprintf(buf, sizeof(buf), "max abs diff %.3g, sbt-max range %s", worst,
                  range_ok ? "ok" : "violated");
    r.detail = buf;
    r.seconds = watch.seconds();
    return {r};
}

// Criterion: noise-free DLT round trip < 1e-6 m over 1000 configurations and
// reprojection RMSE < 1 px under 0.5 px noise across 10 views.
inline std::vector<CheckResult> selftest_triangulation() {
    Stopwatch watch;
    Rng rng(1234);
    CameraModel cam;
    cam.fx = 120.0;
    cam.fy = 118.0;
    cam.cx = 64.0;
    cam.cy = 48.0;
    cam.width = 128;
    cam.height = 96;
    double worst_err = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        Eigen::Vector3d x(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(3, 8));
        std::vector<Pose> poses;
        std::vector<Observation> obs;
        for (int j = 0; j < 4; ++j) {
            Pose pose;
            Eigen::Quaterniond q(1.0, 0.05 * rng.normal(), 0.05 * rng.normal(),
                                 0.05 * rng.normal());
            q.normalize();
            pose.R = q.toRotationMatrix();
            pose.T = Eigen::Vector3d(rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6),
                                     rng.uniform(-0.1, 0.1));
            pose.t_us = j;
            poses.push_back(pose);
            obs.push_back({j, project(cam, pose, x)});
        }
        worst_err = std::max(worst_err, (triangulate_dlt(obs, poses, cam) - x).norm());
    }
    CheckResult round_trip;
    round_trip.name = "triangulation round trip (1000 configurations)";
    round_trip.pass = worst_err < 1e-6;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "max error %.3g m", worst_err);
    round_trip.detail = buf;

    double worst_rmse = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        Eigen::Vector3d x(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), 5.0);
        std::vector<Pose> poses;
        std::vector<Observation> obs;
        for (int j = 0; j < 10; ++j) {
            Pose pose;
            pose.T = Eigen::Vector3d(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                                     rng.uniform(-0.1, 0.1));
            pose.t_us = j;
            poses.push_back(pose);
            Eigen::Vector2d uv = project(cam, pose, x);
            obs.push_back({j, uv + Eigen::Vector2d(rng.normal(0, 0.5), rng.normal(0, 0.5))});
        }
        Eigen::Vector3d got = triangulate_dlt(obs, poses, cam);
        double se = 0.0;
        for (int j = 0; j < 10; ++j)
            se += (project(cam, poses[j], got) - project(cam, poses[j], x)).squaredNorm();
        worst_rmse = std::max(worst_rmse, std::sqrt(se / 10.0));
    }
    CheckResult noisy;
    noisy.name = "triangulation under 0.5 px noise (10 views)";
    noisy.pass = worst_rmse < 1.0;
    std::snprintf(buf, sizeof(buf), "worst reprojection RMSE %.3g px", worst_rmse);
    noisy.detail = buf;
    noisy.seconds = watch.seconds();
    round_trip.seconds = watch.seconds();
    return {round_trip, noisy};
}

// Criterion: the printed loss unit cases and the augmentation round trip.
inline std::vector<CheckResult> selftest_loss_semantics() {
    Stopwatch watch;
    std::vector<CheckResult> out;
    auto check = [&](const std::string& name, bool ok, const std::string& detail = "") {
        out.push_back({"loss semantics: " + name, ok, detail, 0.0});
    };
    std::vector<Eigen::Vector2d> gt = {{0, 0}};
    std::vector<Eigen::Vector2d> pred = {{1, 2}};
    check("err 3 kept", truncated_l1_loss(pred, gt, 15.0).value == 3.0);
    pred = {{20, 5}};
    LossReport r = truncated_l1_loss(pred, gt, 15.0);
    check("err 20 truncated", r.value == 0.0 && r.truncated_count == 1);
    std::vector<Eigen::Vector2d> gt3 = {{0, 0}, {0, 0}, {0, 0}};
    std::vector<Eigen::Vector2d> pred3 = {{3, 0}, {20, 0}, {0, 5}};
    check("mean over nonzero = 4", truncated_l1_loss(pred3, gt3, 15.0).value == 4.0);

    Rng rng(99);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        AugmentationParams theta;
        theta.theta_r = rng.uniform(-0.5, 0.5);
        theta.theta_s = rng.uniform(0.85, 1.15);
        theta.theta_t = {rng.uniform(-3, 3), rng.uniform(-3, 3)};
        AffineWarp warp = AffineWarp::from_params(theta);
        Eigen::Vector2d d(rng.uniform(-6, 6), rng.uniform(-6, 6));
        Eigen::Vector2d back = map_displacement(
            map_displacement(d, warp, WarpDirection::forward), warp, WarpDirection::inverse);
        worst = std::max(worst, (back - d).norm());
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "max round-trip error %.3g", worst);
    check("augmentation inverse(forward) = identity", worst < 1e-12, buf);
    out.front().seconds = watch.seconds();
    return out;
}

// Criterion: compute_metrics equals the exhaustive scan exactly on randomized
// track sets; per-track age and expected FA are monotone; expected FA <= FA.
inline std::vector<CheckResult> selftest_metrics(int n_sets = 200) {
    Stopwatch watch;
    Rng rng(777);
    bool equal = true, monotone = true, bounded = true;
    for (int trial = 0; trial < n_sets; ++trial) {
        int n_tracks = 1 + static_cast<int>(rng.uniform_int(0, 9));
        int n_steps = 5 + static_cast<int>(rng.uniform_int(0, 15));
        std::vector<FeatureTrack> gt, pred;
        for (int i = 0; i < n_tracks; ++i) {
            FeatureTrack g, p;
            g.feature_id = p.feature_id = i * 2 + 1;
            double u = rng.uniform(10, 50), v = rng.uniform(10, 50);
            double pu = u, pv = v;
            for (int k = 0; k < n_steps; ++k) {
                g.append(1000 * k, u, v);
                if (!(i % 4 == 0 && k > n_steps / 2)) p.append(1000 * k, pu, pv);
                u += rng.uniform(-2, 2);
                v += rng.uniform(-2, 2);
                double sigma = rng.uniform(0, 8);
                pu = u + rng.normal(0, sigma);
                pv = v + rng.normal(0, sigma);
            }
            gt.push_back(g);
            pred.push_back(p);
        }
        MetricReport a = compute_metrics(pred, gt);
        MetricReport b = selftest::metrics_scan(pred, gt, 1, 31);
        if (a.feature_age != b.feature_age || a.expected_fa != b.expected_fa ||
            a.inlier_ratio != b.inlier_ratio)
            equal = false;
        for (size_t i = 0; i < a.per_threshold.size(); ++i)
            if (a.per_threshold[i].feature_age != b.per_threshold[i].feature_age ||
                a.per_threshold[i].stable_tracks != b.per_threshold[i].stable_tracks)
                equal = false;
        for (size_t i = 1; i < a.per_threshold.size(); ++i)
            if (a.per_threshold[i].expected_fa < a.per_threshold[i - 1].expected_fa - 1e-15)
                monotone = false;
        for (const auto& tm : a.per_threshold)
            if (tm.expected_fa > tm.feature_age + 1e-15) bounded = false;
        if (a.expected_fa > a.feature_age + 1e-15) bounded = false;
        // per-track age is monotone in the threshold by construction; verify
        // through the scan oracle on a random paired track
        const FeatureTrack& g0 = gt[0];
        const FeatureTrack* p0 = nullptr;
        for (const FeatureTrack& cand : pred)
            if (cand.feature_id == g0.feature_id) p0 = &cand;
        double prev = -1.0;
        for (int eps = 1; eps <= 31; ++eps) {
            std::vector<double> dist;
            for (const TrackSample& gs : g0.samples) {
                double d = std::numeric_limits<double>::infinity();
                for (const TrackSample& ps : p0->samples)
                    if (ps.t_us == gs.t_us)
                        d = std::hypot(ps.u - gs.u, ps.v - gs.v);
                dist.push_back(d);
            }
            size_t k = 0;
            while (k < dist.size() && dist[k] <= eps) ++k;
            double fa = k == dist.size()
                            ? 1.0
                            : static_cast<double>(g0.samples[k].t_us - g0.samples[0].t_us) /
                                  static_cast<double>(g0.samples.back().t_us -
                                                      g0.samples[0].t_us);
            if (fa < prev - 1e-15) monotone = false;
            prev = fa;
        }
    }
    CheckResult r;
    r.name = "metric oracle (" + std::to_string(n_sets) + " track sets)";
    r.pass = equal && monotone && bounded;
    r.detail = std::string("oracle ") + (equal ? "equal" : "MISMATCH") + ", monotone " +
               (monotone ? "ok" : "VIOLATED") + ", expected<=fa " + (bounded ? "ok" : "VIOLATED");
    r.seconds = watch.seconds();
    return {r};
}

// Criterion: paper-preset spatial sizes and channel counts.
inline std::vector<CheckResult> selftest_architecture(bool run_forward = true) {
    Stopwatch watch;
    NetConfig cfg = NetConfig::paper();
    TrackerNet net(cfg, 1);
    auto rows = net.architecture_report();
    auto expect = [&](size_t i, int ch, int sp) {
        return rows[i].channels == ch && rows[i].spatial == sp;
    };
    bool ok = true;
    ok &= expect(0, 32, 31) && expect(1, 64, 23) && expect(2, 128, 15) && expect(3, 256, 5) &&
          expect(4, 384, 1) && expect(5, 384, 1);
    ok &= expect(6, 384, 5) && expect(7, 384, 15) && expect(8, 384, 23) && expect(9, 384, 31);
    ok &= expect(10, 384, 31);  // feature map
    ok &= expect(11, 1, 31);    // correlation
    ok &= expect(12, 128, 31) && expect(13, 64, 15) && expect(14, 128, 7);
    ok &= rows[15].layer == "convlstm" && expect(15, 128, 7);
    ok &= expect(16, 256, 3) && expect(17, 256, 1);
    ok &= expect(18, 256, 1) && expect(19, 256, 1) && rows.back().channels == 2;

    bool forward_ok = true;
    if (run_forward) {
        Rng rng(3);
        Tensor4 tpatch(1, 1, 31, 31);
        Tensor4 epatch(1, 10, 31, 31);
        rng.fill_uniform(tpatch, 0, 1);
        rng.fill_uniform(epatch, 0, 1);
        TemplateContext tc = net.encode_template(tpatch, Mode::eval);
        forward_ok &= tc.feature_map.c() == 384 && tc.feature_map.h() == 31 &&
                      tc.bottleneck.c() == 384 && tc.bottleneck.h() == 1;
        auto [disp, state] = net.step(tc, epatch, net.zero_state(1), Mode::eval);
        forward_ok &= disp.c() == 2 && disp.h() == 1;
        forward_ok &= state.lstm.hidden.c() == 128 && state.lstm.hidden.h() == 7;
        forward_ok &= state.attention.c() == 256;
    }
    CheckResult r;
    r.name = "paper-preset architecture conformance";
    r.pass = ok && forward_ok;
    r.detail = std::string("declared rows ") + (ok ? "ok" : "MISMATCH") +
               (run_forward ? (forward_ok ? ", forward shapes ok" : ", forward MISMATCH") : "");
    r.seconds = watch.seconds();
    return {r};
}

inline int print_results(const std::vector<CheckResult>& results) {
    int failures = 0;
    for (const CheckResult& r : results) {
        std::printf("[%s] %s%s%s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(),
                    r.detail.empty() ? "" : " — ", r.detail.c_str());
        if (!r.pass) ++failures;
    }
    return failures;
}

}  // namespace evtrk
