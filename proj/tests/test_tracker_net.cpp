#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "evtrk/checkpoint.hpp"
#include "evtrk/gradcheck.hpp"
#include "evtrk/tracker_net.hpp"

using namespace evtrk;

namespace {

Tensor4 random_patches(int n, int c, int s, Rng& rng, double lo = 0.0, double hi = 1.0) {
    Tensor4 t(n, c, s, s);
    rng.fill_uniform(t, lo, hi);
    return t;
}

void zero_conv_biases(TrackerNet& net) {
    for (auto& p : net.params())
        if (p.name.find(".bias") != std::string::npos) p.value->fill(0.0);
}

}  // namespace

TEST_CASE("paper preset architecture matches the published column") {
    NetConfig cfg = NetConfig::paper();
    TrackerNet net(cfg, 1);
    auto rows = net.architecture_report();
    // encoder: 31 -> 23 -> 15 -> 5 -> 1 -> 1 with widths 32..384
    std::vector<std::pair<int, int>> enc = {{32, 31}, {64, 23}, {128, 15},
                                            {256, 5}, {384, 1}, {384, 1}};
    for (size_t i = 0; i < enc.size(); ++i) {
        CHECK(rows[i].channels == enc[i].first);
        CHECK(rows[i].spatial == enc[i].second);
    }
    // FPN path 5 -> 15 -> 23 -> 31 at 384 channels
    std::vector<int> up = {5, 15, 23, 31};
    for (size_t i = 0; i < up.size(); ++i) {
        CHECK(rows[6 + i].layer == "fpn_up" + std::to_string(i));
        CHECK(rows[6 + i].channels == 384);
        CHECK(rows[6 + i].spatial == up[i]);
    }
    // correlation at 31, joint encoder 31 -> 15 -> 7 -> ConvLSTM(7) -> 3 -> 1
    int base = 6 + 4;
    CHECK(rows[base].layer == "feature_map");
    CHECK(rows[base].spatial == 31);
    CHECK(rows[base + 1].layer == "correlation");
    CHECK(rows[base + 2].layer == "joint_post");
    CHECK(rows[base + 2].channels == 128);
    CHECK(rows[base + 2].spatial == 31);
    CHECK(rows[base + 3].channels == 64);
    CHECK(rows[base + 3].spatial == 15);
    CHECK(rows[base + 4].channels == 128);
    CHECK(rows[base + 4].spatial == 7);
    CHECK(rows[base + 5].layer == "convlstm");
    CHECK(rows[base + 5].channels == 128);
    CHECK(rows[base + 5].spatial == 7);
    CHECK(rows[base + 6].channels == 256);
    CHECK(rows[base + 6].spatial == 3);
    CHECK(rows[base + 7].channels == 256);
    CHECK(rows[base + 7].spatial == 1);
    // frame attention 256 -> 256 -> attention -> 2
    CHECK(rows[base + 8].channels == 256);
    CHECK(rows[base + 9].channels == 256);
    CHECK(rows.back().layer == "attn_head");
    CHECK(rows.back().channels == 2);
}

TEST_CASE("zero template patch with zero biases yields a zero bottleneck") {
    NetConfig cfg = NetConfig::micro();
    TrackerNet net(cfg, 3);
    zero_conv_biases(net);
    Tensor4 zeros(2, cfg.template_in_ch, cfg.patch_size, cfg.patch_size, 0.0);
    TemplateContext tc = net.encode_template(zeros, Mode::eval);
    for (double v : tc.bottleneck.flat()) CHECK(v == 0.0);
    for (double v : tc.feature_map.flat()) CHECK(v == 0.0);
}

TEST_CASE("different template patches produce distinct bottlenecks") {
    NetConfig cfg = NetConfig::micro();
    TrackerNet net(cfg, 4);
    Rng rng(9);
    Tensor4 a = random_patches(1, cfg.template_in_ch, cfg.patch_size, rng);
    Tensor4 b = random_patches(1, cfg.template_in_ch, cfg.patch_size, rng);
    TemplateContext ta = net.encode_template(a, Mode::eval);
    TemplateContext tb = net.encode_template(b, Mode::eval);
    double diff = 0.0;
    for (size_t i = 0; i < ta.bottleneck.size(); ++i)
        diff += std::abs(ta.bottleneck.data()[i] - tb.bottleneck.data()[i]);
    CHECK(diff > 1e-6);
}

TEST_CASE("correlation map: dot-product peak, zero template, per-pixel oracle") {
    NetConfig cfg = NetConfig::micro();
    TrackerNet net(cfg, 5);
    int s = cfg.patch_size, ch = cfg.feat_ch;
    Rng rng(11);

    // feature map equal to R0 at one pixel, orthogonal (zero) elsewhere
    Tensor4 r0(1, ch, 1, 1);
    rng.fill_uniform(r0, 0.5, 1.0);
    Tensor4 fmap(1, ch, s, s, 0.0);
    int py = 4, px = 9;
    double norm2 = 0.0;
    for (int c = 0; c < ch; ++c) {
        fmap.at(0, c, py, px) = r0.at(0, c, 0, 0);
        norm2 += r0.at(0, c, 0, 0) * r0.at(0, c, 0, 0);
    }
    Tensor4 corr = net.correlation_map(r0, fmap);
    CHECK(corr.at(0, 0, py, px) == Catch::Approx(norm2 / std::sqrt(double(ch))).margin(1e-12));
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x)
            if (y != py || x != px) CHECK(corr.at(0, 0, y, x) == 0.0);

    // zero template vector -> all-zero map
    Tensor4 zero_r0(1, ch, 1, 1, 0.0);
    Tensor4 rand_fmap = random_patches(1, ch, s, rng, -1, 1);
    Tensor4 zc = net.correlation_map(zero_r0, rand_fmap);
    for (double v : zc.flat()) CHECK(v == 0.0);

    // random inputs match the naive per-pixel dot product
    Tensor4 rr0(2, ch, 1, 1);
    rng.fill_uniform(rr0, -1, 1);
    Tensor4 rf = random_patches(2, ch, s, rng, -1, 1);
    Tensor4 rc = net.correlation_map(rr0, rf);
    for (int n = 0; n < 2; ++n)
        for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x) {
                double acc = 0.0;
                for (int c = 0; c < ch; ++c) acc += rr0.at(n, c, 0, 0) * rf.at(n, c, y, x);
                acc /= std::sqrt(double(ch));
                CHECK(rc.at(n, 0, y, x) == Catch::Approx(acc).margin(1e-12));
            }
}

TEST_CASE("tracker step: output width, recurrence, uninitialized state error") {
    NetConfig cfg = NetConfig::toy();
    TrackerNet net(cfg, 6);
    Rng rng(13);
    Tensor4 tpatch = random_patches(3, cfg.template_in_ch, cfg.patch_size, rng);
    TemplateContext tc = net.encode_template(tpatch, Mode::eval);
    Tensor4 epatch = random_patches(3, cfg.event_in_ch, cfg.patch_size, rng);
    NetState state = net.zero_state(3);
    auto [disp, s1] = net.step(tc, epatch, state, Mode::eval);
    CHECK(disp.n() == 3);
    CHECK(disp.c() == 2);
    CHECK(s1.lstm.hidden.c() == cfg.lstm_ch);
    CHECK(s1.attention.c() == cfg.out_dim);

    // identical input twice: different output once the state is nonzero
    auto [disp2, s2] = net.step(tc, epatch, s1, Mode::eval);
    double diff = 0.0;
    for (size_t i = 0; i < disp.size(); ++i)
        diff += std::abs(disp.data()[i] - disp2.data()[i]);
    CHECK(diff > 1e-9);

    NetState empty;
    CHECK_THROWS_AS(net.step(tc, epatch, empty, Mode::eval), std::invalid_argument);
}

TEST_CASE("joint tracking is permutation-equivariant") {
    NetConfig cfg = NetConfig::toy();
    TrackerNet net(cfg, 8);
    Rng rng(17);
    int n = 5;
    Tensor4 tpatch = random_patches(n, cfg.template_in_ch, cfg.patch_size, rng);
    Tensor4 epatch = random_patches(n, cfg.event_in_ch, cfg.patch_size, rng);
    std::vector<int> perm = {3, 1, 4, 0, 2};
    Tensor4 tpatch_p(n, cfg.template_in_ch, cfg.patch_size, cfg.patch_size);
    Tensor4 epatch_p(n, cfg.event_in_ch, cfg.patch_size, cfg.patch_size);
    for (int i = 0; i < n; ++i) {
        std::copy(tpatch.slice(perm[i]), tpatch.slice(perm[i]) + tpatch.sample_size(),
                  tpatch_p.slice(i));
        std::copy(epatch.slice(perm[i]), epatch.slice(perm[i]) + epatch.sample_size(),
                  epatch_p.slice(i));
    }
    // two steps to also exercise permuted recurrent state
    TemplateContext tc = net.encode_template(tpatch, Mode::eval);
    NetState st = net.zero_state(n);
    auto [d1, s1] = net.step(tc, epatch, st, Mode::eval);
    auto [d2, s2] = net.step(tc, epatch, s1, Mode::eval);

    TemplateContext tcp = net.encode_template(tpatch_p, Mode::eval);
    NetState stp = net.zero_state(n);
    auto [p1, sp1] = net.step(tcp, epatch_p, stp, Mode::eval);
    auto [p2, sp2] = net.step(tcp, epatch_p, sp1, Mode::eval);

    for (int i = 0; i < n; ++i)
        for (int d = 0; d < 2; ++d) {
            CHECK(p1.at(i, d, 0, 0) == Catch::Approx(d1.at(perm[i], d, 0, 0)).margin(1e-10));
            CHECK(p2.at(i, d, 0, 0) == Catch::Approx(d2.at(perm[i], d, 0, 0)).margin(1e-10));
        }
}

TEST_CASE("layerscale at zero isolates features from each other") {
    NetConfig cfg = NetConfig::toy();
    TrackerNet net(cfg, 21);
    net.frame_attention().layerscale().gamma.fill(0.0);
    Rng rng(19);
    int n = 3;
    Tensor4 tpatch = random_patches(n, cfg.template_in_ch, cfg.patch_size, rng);
    Tensor4 epatch = random_patches(n, cfg.event_in_ch, cfg.patch_size, rng);
    TemplateContext tc = net.encode_template(tpatch, Mode::eval);
    NetState st = net.zero_state(n);
    auto [d1, s1] = net.step(tc, epatch, st, Mode::eval);

    // perturb feature 2's patch: features 0 and 1 must not change
    Tensor4 epatch2 = epatch;
    for (size_t k = 0; k < epatch2.sample_size(); ++k) epatch2.slice(2)[k] += 0.37;
    auto [d2, s2] = net.step(tc, epatch2, net.zero_state(n), Mode::eval);
    for (int i = 0; i < 2; ++i)
        for (int d = 0; d < 2; ++d)
            CHECK(d2.at(i, d, 0, 0) == Catch::Approx(d1.at(i, d, 0, 0)).margin(1e-12));

    // single feature works
    Tensor4 t1 = random_patches(1, cfg.template_in_ch, cfg.patch_size, rng);
    Tensor4 e1 = random_patches(1, cfg.event_in_ch, cfg.patch_size, rng);
    TemplateContext tc1 = net.encode_template(t1, Mode::eval);
    auto [dd, ss] = net.step(tc1, e1, net.zero_state(1), Mode::eval);
    CHECK(dd.n() == 1);
}

TEST_CASE("finite differences through 4 unrolled tracker steps at micro widths") {
    NetConfig cfg = NetConfig::micro();
    cfg.head_init_scale = 1.0;  // keep upstream gradients well above FD noise
    TrackerNet net(cfg, 33);
    Rng rng(23);
    int n = 2, steps = 4;
    Tensor4 tpatch = random_patches(n, cfg.template_in_ch, cfg.patch_size, rng);
    std::vector<Tensor4> epatches;
    for (int k = 0; k < steps; ++k)
        epatches.push_back(random_patches(n, cfg.event_in_ch, cfg.patch_size, rng));
    WeightedSum ws(static_cast<size_t>(n) * 2, rng);

    auto run = [&](std::vector<TrackerNet::StepCtx>* ctxs, PatchEncoder::Ctx* tctx) {
        TemplateContext tc = net.encode_template(tpatch, Mode::train, tctx);
        NetState st = net.zero_state(n);
        double total = 0.0;
        for (int k = 0; k < steps; ++k) {
            TrackerNet::StepCtx sc;
            auto [disp, ns] = net.step(tc, epatches[k], st,
                                       Mode::train, ctxs != nullptr ? &sc : nullptr);
            total += ws(disp);
            st = std::move(ns);
            if (ctxs != nullptr) ctxs->push_back(std::move(sc));
        }
        return total;
    };
    auto loss = [&]() { return run(nullptr, nullptr); };

    std::vector<TrackerNet::StepCtx> ctxs;
    PatchEncoder::Ctx tctx;
    run(&ctxs, &tctx);
    net.zero_grad();
    Tensor4 d_tmpl_fmap, d_bottleneck;
    TrackerNet::StepGrad future;
    for (int k = steps - 1; k >= 0; --k) {
        Tensor4 d_disp = ws.upstream(n, 2, 1, 1);
        future = net.backward_step(ctxs[k], d_disp, future, d_tmpl_fmap, d_bottleneck);
    }
    net.backward_template(tctx, d_tmpl_fmap, d_bottleneck);

    // sample parameters from every submodule
    auto params = net.params();
    int checked = 0;
    for (auto& p : params) {
        if (!p.trainable) continue;
        bool pick = p.name == "template_enc.down0.conv.weight" ||
                    p.name == "event_enc.down2.conv.weight" ||
                    p.name == "event_enc.refine1.conv.weight" ||
                    p.name == "joint.post0.conv.weight" ||
                    p.name == "joint.lstm.gates.weight" ||
                    p.name == "joint.tail0.conv.weight" ||
                    p.name == "frame_attn.mha.wq.weight" ||
                    p.name == "frame_attn.layerscale.gamma" ||
                    p.name == "frame_attn.gate.lin.weight" ||
                    p.name == "frame_attn.head.weight" ||
                    p.name == "template_enc.lateral0.conv.weight" ||
                    p.name == "joint.post0.bn.gamma";
        if (!pick) continue;
        ++checked;
        // h = 1e-6: the 4-step graph stacks ~30 LeakyReLU layers, and a
        // larger step flips pre-activation signs between the two evaluations
        auto rep = finite_difference_check(p.value->flat(), p.value->grad(), loss, rng, 12,
                                           1e-6);
        INFO(p.name << " max_rel_err=" << rep.max_rel_err);
        CHECK(rep.ok());
    }
    CHECK(checked == 12);
}

TEST_CASE("tracker checkpoint round trip reproduces outputs bit-exactly") {
    NetConfig cfg = NetConfig::micro();
    TrackerNet net(cfg, 55);
    Rng rng(29);
    Tensor4 tpatch = random_patches(2, cfg.template_in_ch, cfg.patch_size, rng);
    Tensor4 epatch = random_patches(2, cfg.event_in_ch, cfg.patch_size, rng);
    TemplateContext tc = net.encode_template(tpatch, Mode::eval);
    auto [disp, st] = net.step(tc, epatch, net.zero_state(2), Mode::eval);

    auto path = (std::filesystem::temp_directory_path() / "evtrk_net_ckpt.bin").string();
    auto params = net.params();
    save_checkpoint(path, params, {{"preset", cfg.preset}});

    TrackerNet net2(cfg, 999);  // different init
    auto params2 = net2.params();
    restore_params(load_checkpoint(path), params2);
    TemplateContext tc2 = net2.encode_template(tpatch, Mode::eval);
    auto [disp2, st2] = net2.step(tc2, epatch, net2.zero_state(2), Mode::eval);
    for (size_t i = 0; i < disp.size(); ++i) CHECK(disp.data()[i] == disp2.data()[i]);
    std::filesystem::remove(path);
}
