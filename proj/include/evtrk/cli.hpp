#pragma once

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include "evtrk/checkpoint.hpp"
#include "evtrk/config.hpp"
#include "evtrk/dataset.hpp"
#include "evtrk/event_sim.hpp"
#include "evtrk/logging.hpp"
#include "evtrk/metrics.hpp"
#include "evtrk/parallel.hpp"
#include "evtrk/png.hpp"
#include "evtrk/runner.hpp"
#include "evtrk/selftest.hpp"
#include "evtrk/trainer.hpp"

namespace evtrk::cli {

namespace fs = std::filesystem;

// Removes declared outputs if the command throws, so failed runs leave no
// partial artifacts behind.
class OutputGuard {
public:
    void add(const std::string& path) { paths_.push_back(path); }
    void commit() { paths_.clear(); }
    ~OutputGuard() {
        for (const std::string& p : paths_) {
            std::error_code ec;
            fs::remove_all(p, ec);
        }
    }

private:
    std::vector<std::string> paths_;
};

inline std::pair<int, int> parse_threshold_range(const std::string& text) {
    auto dots = text.find("..");
    if (dots == std::string::npos) {
        int v = std::stoi(text);
        return {v, v};
    }
    return {std::stoi(text.substr(0, dots)), std::stoi(text.substr(dots + 2))};
}

inline SceneConfig scene_from_kv(const KeyValues& kv) {
    SceneConfig c;
    c.width = static_cast<int>(kv_int(kv, "width", c.width));
    c.height = static_cast<int>(kv_int(kv, "height", c.height));
    c.focal = kv_double(kv, "focal", c.focal);
    c.distance = kv_double(kv, "distance", c.distance);
    c.duration_s = kv_double(kv, "duration_s", c.duration_s);
    c.sim_rate_hz = kv_double(kv, "sim_rate_hz", c.sim_rate_hz);
    c.pose_rate_hz = kv_double(kv, "pose_rate_hz", c.pose_rate_hz);
    c.frame_rate_hz = kv_double(kv, "frame_rate_hz", c.frame_rate_hz);
    c.contrast_threshold = kv_double(kv, "contrast_threshold", c.contrast_threshold);
    c.n_features = static_cast<int>(kv_int(kv, "n_features", c.n_features));
    c.feature_margin = static_cast<int>(kv_int(kv, "feature_margin", c.feature_margin));
    c.plane_extent_factor = kv_double(kv, "plane_extent_factor", c.plane_extent_factor);
    c.noise_sigma_c = kv_double(kv, "noise_sigma_c", c.noise_sigma_c);
    c.background_rate_hz = kv_double(kv, "background_rate_hz", c.background_rate_hz);
    c.texture.size = static_cast<int>(kv_int(kv, "texture_size", c.texture.size));
    c.texture.cell = static_cast<int>(kv_int(kv, "texture_cell", c.texture.cell));
    c.texture.lo = kv_double(kv, "texture_lo", c.texture.lo);
    c.texture.hi = kv_double(kv, "texture_hi", c.texture.hi);
    c.texture.blur = kv_double(kv, "texture_blur", c.texture.blur);
    c.trajectory.lin_x = kv_double(kv, "traj_lin_x", c.trajectory.lin_x);
    c.trajectory.lin_y = kv_double(kv, "traj_lin_y", c.trajectory.lin_y);
    c.trajectory.amp_x = kv_double(kv, "traj_amp_x", c.trajectory.amp_x);
    c.trajectory.amp_y = kv_double(kv, "traj_amp_y", c.trajectory.amp_y);
    c.trajectory.amp_z = kv_double(kv, "traj_amp_z", c.trajectory.amp_z);
    c.trajectory.freq_x = kv_double(kv, "traj_freq_x", c.trajectory.freq_x);
    c.trajectory.freq_y = kv_double(kv, "traj_freq_y", c.trajectory.freq_y);
    c.trajectory.freq_z = kv_double(kv, "traj_freq_z", c.trajectory.freq_z);
    c.trajectory.rot_amp_deg = kv_double(kv, "traj_rot_deg", c.trajectory.rot_amp_deg);
    c.trajectory.rot_freq = kv_double(kv, "traj_rot_freq", c.trajectory.rot_freq);
    return c;
}

struct CommonOptions {
    std::string config_path;
    std::string preset = "toy";
    std::uint64_t seed = 1;
    int jobs = 0;
    std::int64_t window_us = 10000;
    std::string representation = "sbt_max";
    std::string thresholds = "1..31";
};

inline void write_runtime_json(const RuntimeReport& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.precision(17);
    out << "{\n  \"compute_time_s\": " << r.compute_time_s
        << ",\n  \"data_time_s\": " << r.data_time_s
        << ",\n  \"real_time_factor\": " << r.real_time_factor << "\n}\n";
}

inline TrackerNet net_from_checkpoint(const std::string& path, TrackRunConfig* rc = nullptr) {
    CheckpointContents contents = load_checkpoint(path);
    std::string preset = contents.meta.count("preset") ? contents.meta.at("preset") : "toy";
    int event_ch = contents.meta.count("event_channels")
                       ? std::stoi(contents.meta.at("event_channels"))
                       : 10;
    NetConfig cfg = NetConfig::by_name(preset).with_event_channels(event_ch);
    if (contents.meta.count("use_attention") && contents.meta.at("use_attention") == "0")
        cfg.use_attention = false;
    TrackerNet net(cfg, 1);
    auto params = net.params();
    restore_params(contents, params);
    if (rc != nullptr) {
        if (contents.meta.count("representation"))
            rc->representation = representation_by_name(contents.meta.at("representation"));
        if (contents.meta.count("bins_per_polarity"))
            rc->bins_per_polarity = std::stoi(contents.meta.at("bins_per_polarity"));
        if (contents.meta.count("window_us"))
            rc->window_us = std::stoll(contents.meta.at("window_us"));
    }
    return net;
}

inline std::map<std::string, std::string> checkpoint_meta(const NetConfig& net_cfg,
                                                          const TrackRunConfig& rc) {
    return {{"preset", net_cfg.preset},
            {"event_channels", std::to_string(net_cfg.event_in_ch)},
            {"use_attention", net_cfg.use_attention ? "1" : "0"},
            {"representation", rc.representation == EventRepresentation::sbt_max ? "sbt_max"
                               : rc.representation == EventRepresentation::sbt   ? "sbt"
                               : rc.representation == EventRepresentation::sbt_nonorm
                                   ? "sbt_nonorm"
                                   : "voxel"},
            {"bins_per_polarity", std::to_string(rc.bins_per_polarity)},
            {"window_us", std::to_string(rc.window_us)}};
}

inline std::vector<Eigen::Vector2d> seed_features(const Image& frame, int count, int margin) {
    auto corners = harris_corners(frame, count, margin);
    std::vector<Eigen::Vector2d> pts;
    for (const Corner& c : corners) pts.push_back({c.u, c.v});
    if (pts.empty()) throw std::runtime_error("no corners detected in the first frame");
    return pts;
}

// ---- subcommands -----------------------------------------------------------

inline int cmd_generate(const CommonOptions& common, const std::string& out_dir, int count,
                        const std::string& events_format) {
    SceneConfig base = common.config_path.empty()
                           ? SceneConfig{}
                           : scene_from_kv(parse_kv_file(common.config_path));
    OutputGuard guard;
    fs::create_directories(out_dir);
    for (int i = 0; i < count; ++i) {
        SceneConfig cfg = base;
        cfg.seed = common.seed + static_cast<std::uint64_t>(i) * 1000;
        char name[32];
        std::snprintf(name, sizeof(name), "seq_%04d", i);
        std::string dir = (fs::path(out_dir) / name).string();
        guard.add(dir);
        SyntheticSequence seq = generate_sequence(cfg);
        write_sequence(dir, seq, events_format == "binary");
        EVTRK_INFO("generated %s: %zu events, %zu tracks, %zu frames", dir.c_str(),
                   seq.events.size(), seq.gt_tracks.size(), seq.frames.size());
    }
    guard.commit();
    return 0;
}

inline int cmd_train(const CommonOptions& common, const std::string& data_dir,
                     const std::string& out_ckpt, const std::string& loss_csv,
                     std::int64_t steps_override, const std::string& init_ckpt,
                     bool finetune) {
    TrainConfig cfg = common.config_path.empty()
                          ? TrainConfig{}
                          : TrainConfig::from_kv(parse_kv_file(common.config_path));
    cfg.seed = common.seed;
    if (steps_override > 0) cfg.steps = steps_override;
    cfg.track.representation = representation_by_name(common.representation);
    cfg.track.window_us = common.window_us;

    std::vector<SyntheticSequence> dataset;
    for (const std::string& dir : list_sequence_dirs(data_dir))
        dataset.push_back(load_sequence(dir));
    if (dataset.empty()) throw std::runtime_error("no sequences under " + data_dir);

    int event_ch =
        representation_channels(cfg.track.representation, cfg.track.bins_per_polarity);
    TrackerNet net = [&]() {
        if (!init_ckpt.empty()) return net_from_checkpoint(init_ckpt);
        NetConfig nc = NetConfig::by_name(common.preset).with_event_channels(event_ch);
        return TrackerNet(nc, common.seed);
    }();

    OutputGuard guard;
    guard.add(out_ckpt);
    if (!loss_csv.empty()) guard.add(loss_csv);
    TrainResult result = train(net, dataset, cfg,
                               finetune ? TrainMode::pose_finetune
                                        : TrainMode::synthetic_supervised);
    if (result.aborted) {
        std::string snapshot = out_ckpt + ".abort";
        save_checkpoint(snapshot, net.params(), checkpoint_meta(net.config(), cfg.track));
        EVTRK_ERROR("training aborted (%s); diagnostic snapshot at %s",
                    result.abort_reason.c_str(), snapshot.c_str());
        return 1;
    }
    save_checkpoint(out_ckpt, net.params(), checkpoint_meta(net.config(), cfg.track));
    if (!loss_csv.empty()) write_loss_csv(loss_csv, result.curve);
    guard.commit();
    EVTRK_INFO("checkpoint written to %s", out_ckpt.c_str());
    return 0;
}

inline int cmd_track(const CommonOptions& common, const std::string& data_dir,
                     const std::string& ckpt, const std::string& out_tracks,
                     const std::string& runtime_json, int max_features) {
    TrackRunConfig rc;
    rc.window_us = common.window_us;
    rc.representation = representation_by_name(common.representation);
    TrackerNet net = net_from_checkpoint(ckpt, &rc);
    SyntheticSequence seq = load_sequence(data_dir);
    auto features = seed_features(seq.frames[0].second, max_features,
                                  net.config().patch_radius() + 1);
    OutputGuard guard;
    guard.add(out_tracks);
    auto result = track_sequence(net, seq.frames[0].second, seq.frames[0].first, features,
                                 seq.events, rc);
    save_tracks(result.tracks, out_tracks);
    if (!runtime_json.empty()) {
        guard.add(runtime_json);
        write_runtime_json(result.runtime, runtime_json);
    }
    guard.commit();
    EVTRK_INFO("tracked %zu features; real-time factor %.3f", result.tracks.size(),
               result.runtime.real_time_factor);
    return 0;
}

inline int cmd_hybrid(const CommonOptions& common, const std::string& data_dir,
                      const std::string& ckpt, const std::string& out_tracks,
                      const std::string& runtime_json, int max_features, int frame_skip) {
    HybridConfig hc;
    hc.track.window_us = common.window_us;
    hc.track.representation = representation_by_name(common.representation);
    TrackerNet net = net_from_checkpoint(ckpt, &hc.track);
    SyntheticSequence seq = load_sequence(data_dir);
    std::vector<std::pair<std::int64_t, Image>> frames;
    for (size_t i = 0; i < seq.frames.size(); i += std::max(1, frame_skip))
        frames.push_back(seq.frames[i]);
    auto features = seed_features(frames[0].second, max_features,
                                  net.config().patch_radius() + 1);
    OutputGuard guard;
    guard.add(out_tracks);
    auto result = hybrid_track(net, frames, seq.events, features, hc);
    save_tracks(result.tracks, out_tracks);
    if (!runtime_json.empty()) {
        guard.add(runtime_json);
        write_runtime_json(result.runtime, runtime_json);
    }
    guard.commit();
    EVTRK_INFO("hybrid tracked %zu features over %zu frames", result.tracks.size(),
               frames.size());
    return 0;
}

inline int cmd_evaluate(const CommonOptions& common, const std::string& pred_path,
                        const std::string& gt_path, const std::string& out_json) {
    auto [lo, hi] = parse_threshold_range(common.thresholds);
    std::vector<FeatureTrack> pred = load_tracks(pred_path);
    std::vector<FeatureTrack> gt = load_tracks(gt_path);
    // resample predictions to the ground-truth timestamps
    std::map<int, const FeatureTrack*> by_id;
    for (const FeatureTrack& p : pred) by_id[p.feature_id] = &p;
    std::vector<FeatureTrack> resampled;
    for (const FeatureTrack& g : gt) {
        auto it = by_id.find(g.feature_id);
        if (it == by_id.end()) continue;
        std::vector<std::int64_t> targets;
        for (const TrackSample& s : g.samples) targets.push_back(s.t_us);
        resampled.push_back(interpolate_track(*it->second, targets));
    }
    MetricReport report = compute_metrics(resampled, gt, lo, hi);
    OutputGuard guard;
    guard.add(out_json);
    std::ofstream out(out_json);
    if (!out) throw std::runtime_error("cannot open for writing: " + out_json);
    out << metrics_to_json(report);
    out.close();
    guard.commit();
    std::printf("fa %.4f expected_fa %.4f inlier_ratio %.4f", report.feature_age,
                report.expected_fa, report.inlier_ratio);
    if (report.tne_defined) std::printf(" tne %.4f", report.normalized_track_error);
    std::printf("\n");
    return 0;
}

inline int cmd_plot(const std::string& data_dir, const std::string& tracks_path,
                    const std::string& out_dir, int stride) {
    SyntheticSequence seq = load_sequence(data_dir);
    std::vector<FeatureTrack> tracks = load_tracks(tracks_path);
    OutputGuard guard;
    fs::create_directories(out_dir);
    for (size_t i = 0; i < seq.frames.size(); i += std::max(1, stride)) {
        Canvas canvas = render_tracks(seq.frames[i].second, tracks, seq.frames[i].first);
        std::string path =
            (fs::path(out_dir) / ("plot_" + std::to_string(seq.frames[i].first) + ".png"))
                .string();
        guard.add(path);
        save_png(canvas, path);
    }
    guard.commit();
    return 0;
}

inline int cmd_selftest(bool fast) {
    std::vector<CheckResult> all;
    auto append = [&](std::vector<CheckResult> v) {
        for (auto& r : v) all.push_back(std::move(r));
    };
    append(selftest_gradients(fast ? 2 : 5));
    append(selftest_representations(fast ? 20 : 100));
    append(selftest_triangulation());
    append(selftest_loss_semantics());
    append(selftest_metrics(fast ? 40 : 200));
    append(selftest_architecture(!fast));
    int failures = print_results(all);
    std::printf("%d/%zu checks passed\n", static_cast<int>(all.size()) - failures, all.size());
    return failures == 0 ? 0 : 1;
}

// ---- entry point -----------------------------------------------------------

inline int run(int argc, const char* const* argv) {
    CLI::App app{"event-camera feature tracking toolkit"};
    app.require_subcommand(1);

    CommonOptions common;
    common.jobs = static_cast<int>(std::thread::hardware_concurrency());
    app.add_option("--jobs", common.jobs, "worker threads (default: logical cores)");

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config_path, "key=value config file");
        sub->add_option("--preset", common.preset, "network preset: paper|toy")
            ->check(CLI::IsMember({"paper", "toy", "micro"}));
        sub->add_option("--seed", common.seed, "RNG seed");
        sub->add_option("--window-us", common.window_us, "event window in microseconds");
        sub->add_option("--representation", common.representation,
                        "sbt_max|sbt|sbt_nonorm|voxel")
            ->check(CLI::IsMember({"sbt_max", "sbt", "sbt_nonorm", "voxel"}));
        sub->add_option("--thresholds", common.thresholds, "threshold range, e.g. 1..31");
    };

    // generate
    std::string out_dir, events_format = "binary";
    int count = 1;
    CLI::App* generate = app.add_subcommand("generate", "render synthetic sequences");
    add_common(generate);
    generate->add_option("--out", out_dir, "output directory")->required();
    generate->add_option("--count", count, "number of sequences");
    generate->add_option("--events-format", events_format, "text|binary")
        ->check(CLI::IsMember({"text", "binary"}));

    // train / finetune
    std::string data_dir, out_ckpt, loss_csv, init_ckpt;
    std::int64_t steps_override = 0;
    CLI::App* train_cmd = app.add_subcommand("train", "supervised training on synthetic data");
    add_common(train_cmd);
    train_cmd->add_option("--data", data_dir, "dataset root")->required();
    train_cmd->add_option("--out", out_ckpt, "checkpoint output path")->required();
    train_cmd->add_option("--loss-csv", loss_csv, "loss curve output");
    train_cmd->add_option("--steps", steps_override, "override step count");
    train_cmd->add_option("--init", init_ckpt, "initialize from checkpoint");

    std::string ft_data, ft_out, ft_csv, ft_init;
    std::int64_t ft_steps = 0;
    CLI::App* finetune = app.add_subcommand("finetune", "pose-supervision fine-tuning");
    add_common(finetune);
    finetune->add_option("--data", ft_data, "dataset root")->required();
    finetune->add_option("--checkpoint", ft_init, "checkpoint to fine-tune")->required();
    finetune->add_option("--out", ft_out, "checkpoint output path")->required();
    finetune->add_option("--loss-csv", ft_csv, "loss curve output");
    finetune->add_option("--steps", ft_steps, "override step count");

    // track / hybrid
    std::string tr_data, tr_ckpt, tr_out, tr_runtime;
    int tr_features = 16;
    CLI::App* track_cmd = app.add_subcommand("track", "run the event tracker on a sequence");
    add_common(track_cmd);
    track_cmd->add_option("--data", tr_data, "sequence directory")->required();
    track_cmd->add_option("--checkpoint", tr_ckpt, "trained checkpoint")->required();
    track_cmd->add_option("--out", tr_out, "track file output")->required();
    track_cmd->add_option("--runtime-json", tr_runtime, "runtime report output");
    track_cmd->add_option("--features", tr_features, "max features to seed");

    std::string hy_data, hy_ckpt, hy_out, hy_runtime;
    int hy_features = 16, frame_skip = 1;
    CLI::App* hybrid = app.add_subcommand("hybrid", "event tracker + KLT refinement");
    add_common(hybrid);
    hybrid->add_option("--data", hy_data, "sequence directory")->required();
    hybrid->add_option("--checkpoint", hy_ckpt, "trained checkpoint")->required();
    hybrid->add_option("--out", hy_out, "track file output")->required();
    hybrid->add_option("--runtime-json", hy_runtime, "runtime report output");
    hybrid->add_option("--features", hy_features, "max features to seed");
    hybrid->add_option("--frame-skip", frame_skip, "use every k-th frame");

    // evaluate / plot / selftest
    std::string ev_pred, ev_gt, ev_out;
    CLI::App* evaluate = app.add_subcommand("evaluate", "feature-age metrics");
    add_common(evaluate);
    evaluate->add_option("--pred", ev_pred, "predicted tracks")->required();
    evaluate->add_option("--gt", ev_gt, "ground-truth tracks")->required();
    evaluate->add_option("--out", ev_out, "metrics JSON output")->required();

    std::string pl_data, pl_tracks, pl_out;
    int pl_stride = 1;
    CLI::App* plot = app.add_subcommand("plot", "render track overlays to PNG");
    plot->add_option("--data", pl_data, "sequence directory")->required();
    plot->add_option("--tracks", pl_tracks, "track file")->required();
    plot->add_option("--out", pl_out, "output directory")->required();
    plot->add_option("--stride", pl_stride, "frame stride");

    bool fast = false;
    CLI::App* selftest = app.add_subcommand("selftest", "gradient and oracle suites");
    selftest->add_flag("--fast", fast, "reduced trial counts");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    set_worker_count(common.jobs);
    try {
        if (generate->parsed()) return cmd_generate(common, out_dir, count, events_format);
        if (train_cmd->parsed())
            return cmd_train(common, data_dir, out_ckpt, loss_csv, steps_override, init_ckpt,
                             false);
        if (finetune->parsed())
            return cmd_train(common, ft_data, ft_out, ft_csv, ft_steps, ft_init, true);
        if (track_cmd->parsed())
            return cmd_track(common, tr_data, tr_ckpt, tr_out, tr_runtime, tr_features);
        if (hybrid->parsed())
            return cmd_hybrid(common, hy_data, hy_ckpt, hy_out, hy_runtime, hy_features,
                              frame_skip);
        if (evaluate->parsed()) return cmd_evaluate(common, ev_pred, ev_gt, ev_out);
        if (plot->parsed()) return cmd_plot(pl_data, pl_tracks, pl_out, pl_stride);
        if (selftest->parsed()) return cmd_selftest(fast);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}

inline int run(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("evtrk");
    for (const std::string& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace evtrk::cli
