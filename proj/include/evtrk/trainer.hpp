#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "evtrk/adam.hpp"
#include "evtrk/augmentation.hpp"
#include "evtrk/checkpoint.hpp"
#include "evtrk/config.hpp"
#include "evtrk/logging.hpp"
#include "evtrk/losses.hpp"
#include "evtrk/runner.hpp"
#include "evtrk/scene.hpp"
#include "evtrk/tracker_net.hpp"

namespace evtrk {

struct TrainConfig {
    double learning_rate = 1e-4;
    double finetune_learning_rate = 1e-6;  // paper keeps a 1e-2 ratio to the train rate
    std::vector<std::pair<std::int64_t, int>> unroll_schedule = {{0, 4}, {80000, 16},
                                                                 {120000, 24}};
    AugmentationRanges augmentation;  // R15 S10 T3 defaults
    std::uint64_t seed = 1;
    std::int64_t steps = 2000;
    int features_per_sample = 16;
    int batch_sequences = 8;
    double grad_clip = 1.0;
    int finetune_unroll = 8;
    TrackRunConfig track;

    void validate() const {
        if (unroll_schedule.empty()) throw std::invalid_argument("empty unroll schedule");
        for (size_t i = 1; i < unroll_schedule.size(); ++i) {
            if (unroll_schedule[i].first <= unroll_schedule[i - 1].first)
                throw std::invalid_argument("unroll schedule thresholds must increase");
            if (unroll_schedule[i].second <= unroll_schedule[i - 1].second)
                throw std::invalid_argument("unroll lengths must increase");
        }
    }

    int unroll_at(std::int64_t step) const {
        int u = unroll_schedule.front().second;
        for (const auto& [threshold, len] : unroll_schedule)
            if (step >= threshold) u = len;
        return u;
    }

    static std::vector<std::pair<std::int64_t, int>> parse_schedule(const std::string& text) {
        std::vector<std::pair<std::int64_t, int>> sched;
        std::stringstream ss(text);
        std::string item;
        while (std::getline(ss, item, ',')) {
            auto colon = item.find(':');
            if (colon == std::string::npos)
                throw std::invalid_argument("bad unroll schedule entry: " + item);
            sched.emplace_back(std::stoll(item.substr(0, colon)),
                               std::stoi(item.substr(colon + 1)));
        }
        return sched;
    }

    static TrainConfig from_kv(const KeyValues& kv) {
        TrainConfig c;
        c.learning_rate = kv_double(kv, "learning_rate", c.learning_rate);
        c.finetune_learning_rate =
            kv_double(kv, "finetune_learning_rate", c.finetune_learning_rate);
        c.steps = kv_int(kv, "steps", c.steps);
        c.features_per_sample =
            static_cast<int>(kv_int(kv, "features_per_sample", c.features_per_sample));
        c.batch_sequences = static_cast<int>(kv_int(kv, "batch_sequences", c.batch_sequences));
        c.grad_clip = kv_double(kv, "grad_clip", c.grad_clip);
        c.seed = static_cast<std::uint64_t>(kv_int(kv, "seed", static_cast<std::int64_t>(c.seed)));
        c.finetune_unroll = static_cast<int>(kv_int(kv, "finetune_unroll", c.finetune_unroll));
        if (kv.count("unroll_schedule"))
            c.unroll_schedule = parse_schedule(kv.at("unroll_schedule"));
        c.augmentation.rot_deg = kv_double(kv, "aug_rot_deg", c.augmentation.rot_deg);
        c.augmentation.scale_pct = kv_double(kv, "aug_scale_pct", c.augmentation.scale_pct);
        c.augmentation.trans_px = kv_double(kv, "aug_trans_px", c.augmentation.trans_px);
        c.track.window_us = kv_int(kv, "window_us", c.track.window_us);
        c.track.bins_per_polarity =
            static_cast<int>(kv_int(kv, "bins_per_polarity", c.track.bins_per_polarity));
        c.track.representation =
            representation_by_name(kv_string(kv, "representation", "sbt_max"));
        c.validate();
        return c;
    }
};

enum class TrainMode { synthetic_supervised, pose_finetune };

struct TrainCsvRow {
    std::int64_t step;
    double loss;
    int unroll_len;
    double truncated_frac;
};

struct TrainResult {
    std::vector<TrainCsvRow> curve;
    bool aborted = false;
    std::string abort_reason;
};

inline void write_loss_csv(const std::string& path, const std::vector<TrainCsvRow>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "step,loss,unroll_len,truncated_frac\n";
    for (const TrainCsvRow& r : rows)
        out << r.step << "," << r.loss << "," << r.unroll_len << "," << r.truncated_frac << "\n";
}

namespace detail {

struct SequenceIndex {
    std::map<std::int64_t, int> frame_at;
    std::map<std::int64_t, int> pose_at;
};

inline SequenceIndex index_sequence(const SyntheticSequence& seq) {
    SequenceIndex idx;
    for (size_t i = 0; i < seq.frames.size(); ++i)
        idx.frame_at[seq.frames[i].first] = static_cast<int>(i);
    for (size_t i = 0; i < seq.poses.size(); ++i)
        idx.pose_at[seq.poses[i].t_us] = static_cast<int>(i);
    return idx;
}

// Closest stored frame at or before t.
inline const Image& frame_at_or_before(const SyntheticSequence& seq, const SequenceIndex& idx,
                                       std::int64_t t) {
    auto it = idx.frame_at.upper_bound(t);
    if (it == idx.frame_at.begin()) throw std::runtime_error("no frame at or before timestamp");
    --it;
    return seq.frames[it->second].second;
}

inline double clamp_coord(double v, int r, int size) {
    return std::clamp(v, static_cast<double>(r), static_cast<double>(size - 1 - r));
}

}  // namespace detail

// Unrolled truncated-BPTT trainer. Synthetic mode applies per-step affine
// augmentation to the event patch and supervises the augmented displacement
// with the truncated L1; fine-tune mode supervises accumulated positions with
// the pose-triangulation loss. Deterministic under the config seed.
class Trainer {
public:
    Trainer(TrackerNet& net, const std::vector<SyntheticSequence>& dataset, TrainConfig cfg,
            TrainMode mode)
        : net_(net), dataset_(dataset), cfg_(cfg), mode_(mode), rng_(cfg.seed) {
        cfg_.validate();
        if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
        for (const auto& seq : dataset) indices_.push_back(detail::index_sequence(seq));
        AdamConfig ac;
        ac.learning_rate =
            mode == TrainMode::pose_finetune ? cfg_.finetune_learning_rate : cfg_.learning_rate;
        opt_ = Adam(net_.params(), ac);
        radius_ = net_.config().patch_radius();
        rep_cfg_ = cfg_.track.rep_config(radius_);
    }

    TrainResult run() {
        TrainResult result;
        for (std::int64_t step = 1; step <= cfg_.steps; ++step) {
            int unroll = mode_ == TrainMode::pose_finetune ? cfg_.finetune_unroll
                                                           : cfg_.unroll_at(step - 1);
            net_.zero_grad();
            double loss_acc = 0.0;
            double truncated = 0.0, active = 0.0;
            int contributing = 0;
            for (int b = 0; b < cfg_.batch_sequences; ++b) {
                SampleStats stats = mode_ == TrainMode::pose_finetune
                                        ? run_finetune_sample(unroll)
                                        : run_synthetic_sample(unroll);
                if (stats.skipped) continue;
                ++contributing;
                loss_acc += stats.loss;
                truncated += stats.truncated;
                active += stats.active;
            }
            if (contributing == 0) {
                result.curve.push_back({step, 0.0, unroll, 1.0});
                continue;  // an all-truncated batch is skipped for the optimizer
            }
            double loss = loss_acc / contributing;
            if (!std::isfinite(loss)) {
                result.aborted = true;
                result.abort_reason = "non-finite loss at step " + std::to_string(step);
                EVTRK_ERROR("%s", result.abort_reason.c_str());
                return result;
            }
            // gradients were accumulated as sums; scale to the batch mean
            if (contributing > 1)
                for (auto& p : net_.params())
                    if (p.trainable)
                        for (double& g : p.value->grad()) g /= contributing;
            opt_.step(cfg_.grad_clip);
            double tf = (active + truncated) > 0 ? truncated / (active + truncated) : 0.0;
            result.curve.push_back({step, loss, unroll, tf});
            if (step % 100 == 0 || step == cfg_.steps)
                EVTRK_INFO("train step %lld/%lld loss %.5f unroll %d trunc %.3f",
                           static_cast<long long>(step), static_cast<long long>(cfg_.steps),
                           loss, unroll, tf);
        }
        return result;
    }

private:
    struct SampleStats {
        double loss = 0.0;
        int truncated = 0;
        int active = 0;
        bool skipped = false;
    };

    // Shared unrolled forward pass. Returns displacements per step and keeps
    // every context for the backward sweep.
    struct Unrolled {
        std::vector<TrackerNet::StepCtx> ctxs;
        std::vector<Tensor4> disps;                 // per step (F, 2, 1, 1)
        std::vector<std::vector<AffineWarp>> warps; // per step per feature
        std::vector<std::vector<Eigen::Vector2d>> positions;  // [step 0..U][feature]
        PatchEncoder::Ctx template_ctx;
        int start_pose = 0;
        const SyntheticSequence* seq = nullptr;
        std::vector<int> feature_ids;
    };

    Unrolled unroll_forward(int unroll, bool augment) {
        const auto seq_i = static_cast<size_t>(rng_.uniform_int(0, dataset_.size() - 1));
        const SyntheticSequence& seq = dataset_[seq_i];
        const auto& idx = indices_[seq_i];
        int n_poses = static_cast<int>(seq.poses.size());
        if (n_poses < unroll + 1) throw std::runtime_error("sequence shorter than unroll");
        int start = static_cast<int>(rng_.uniform_int(0, n_poses - 1 - unroll));
        int n_feat = std::min<int>(cfg_.features_per_sample,
                                   static_cast<int>(seq.gt_tracks.size()));
        std::vector<int> feats;
        {
            std::vector<int> all(seq.gt_tracks.size());
            for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
            for (int i = 0; i < n_feat; ++i) {
                int j = static_cast<int>(rng_.uniform_int(i, all.size() - 1));
                std::swap(all[i], all[j]);
            }
            feats.assign(all.begin(), all.begin() + n_feat);
        }

        Unrolled u;
        u.seq = &seq;
        u.start_pose = start;
        u.feature_ids = feats;
        std::int64_t t_start = seq.poses[start].t_us;
        const Image& frame = detail::frame_at_or_before(seq, idx, t_start);

        int side = 2 * radius_ + 1;
        Tensor4 templates(n_feat, 1, side, side);
        std::vector<Eigen::Vector2d> pos(n_feat);
        for (int i = 0; i < n_feat; ++i) {
            const TrackSample& s = seq.gt_tracks[feats[i]].samples[start];
            pos[i] = {s.u, s.v};
            PatchTensor p = extract_patch(frame, detail::clamp_coord(s.u, radius_, frame.width()),
                                          detail::clamp_coord(s.v, radius_, frame.height()),
                                          radius_);
            std::copy(p.data.begin(), p.data.end(), templates.slice(i));
        }
        TemplateContext tmpl = net_.encode_template(templates, Mode::train, &u.template_ctx);
        NetState state = net_.zero_state(n_feat);
        u.positions.push_back(pos);

        for (int k = 1; k <= unroll; ++k) {
            std::int64_t t0 = seq.poses[start + k - 1].t_us;
            std::int64_t t1 = seq.poses[start + k].t_us;
            auto slice = seq.events.window(t0, t1);
            Tensor4 patches(n_feat, net_.config().event_in_ch, side, side);
            std::vector<AffineWarp> warps(n_feat);
            for (int i = 0; i < n_feat; ++i) {
                double cu = detail::clamp_coord(pos[i].x(), radius_, seq.events.width());
                double cv = detail::clamp_coord(pos[i].y(), radius_, seq.events.height());
                RepresentationConfig rc = rep_cfg_;
                rc.window_us = t1 - t0;
                PatchTensor p = build_event_patch(cfg_.track.representation, slice, t0, rc, cu,
                                                  cv, seq.events.width(), seq.events.height());
                if (augment && !cfg_.augmentation.empty()) {
                    AugmentationParams theta = cfg_.augmentation.sample(rng_);
                    p = apply_augmentation(p, theta, &warps[i]);
                }
                std::copy(p.data.begin(), p.data.end(), patches.slice(i));
            }
            TrackerNet::StepCtx sc;
            auto [disp, new_state] = net_.step(tmpl, patches, state, Mode::train, &sc);
            state = std::move(new_state);
            u.ctxs.push_back(std::move(sc));
            for (int i = 0; i < n_feat; ++i) {
                Eigen::Vector2d d_aug(disp.at(i, 0, 0, 0), disp.at(i, 1, 0, 0));
                pos[i] += warps[i].is_identity()
                              ? d_aug
                              : map_displacement(d_aug, warps[i], WarpDirection::inverse);
            }
            u.disps.push_back(std::move(disp));
            u.warps.push_back(std::move(warps));
            u.positions.push_back(pos);
        }
        return u;
    }

    void backward_unrolled(Unrolled& u, const std::vector<Tensor4>& d_disps) {
        Tensor4 d_tmpl_fmap, d_bottleneck;
        TrackerNet::StepGrad future;
        for (int k = static_cast<int>(u.ctxs.size()) - 1; k >= 0; --k)
            future = net_.backward_step(u.ctxs[k], d_disps[k], future, d_tmpl_fmap,
                                        d_bottleneck);
        net_.backward_template(u.template_ctx, d_tmpl_fmap, d_bottleneck);
    }

    SampleStats run_synthetic_sample(int unroll) {
        Unrolled u = unroll_forward(unroll, true);
        const SyntheticSequence& seq = *u.seq;
        int n_feat = static_cast<int>(u.feature_ids.size());

        SampleStats stats;
        double sum = 0.0;
        std::vector<Tensor4> d_disps;
        std::vector<std::vector<Eigen::Vector2d>> signs(u.ctxs.size());
        for (size_t k = 0; k < u.ctxs.size(); ++k) {
            signs[k].assign(n_feat, Eigen::Vector2d::Zero());
            for (int i = 0; i < n_feat; ++i) {
                const TrackSample& target =
                    seq.gt_tracks[u.feature_ids[i]].samples[u.start_pose + k + 1];
                Eigen::Vector2d gt =
                    Eigen::Vector2d(target.u, target.v) - u.positions[k][i];
                Eigen::Vector2d gt_aug =
                    u.warps[k][i].is_identity()
                        ? gt
                        : map_displacement(gt, u.warps[k][i], WarpDirection::forward);
                Eigen::Vector2d pred(u.disps[k].at(i, 0, 0, 0), u.disps[k].at(i, 1, 0, 0));
                Eigen::Vector2d d = pred - gt_aug;
                double l1 = std::abs(d.x()) + std::abs(d.y());
                if (l1 < radius_) {
                    if (l1 != 0.0) {
                        sum += l1;
                        ++stats.active;
                        signs[k][i] = {d.x() > 0 ? 1.0 : (d.x() < 0 ? -1.0 : 0.0),
                                       d.y() > 0 ? 1.0 : (d.y() < 0 ? -1.0 : 0.0)};
                    }
                } else {
                    ++stats.truncated;
                }
            }
        }
        if (stats.active == 0) {
            stats.skipped = true;
            return stats;
        }
        stats.loss = sum / stats.active;
        for (size_t k = 0; k < u.ctxs.size(); ++k) {
            Tensor4 g(n_feat, 2, 1, 1);
            for (int i = 0; i < n_feat; ++i) {
                g.at(i, 0, 0, 0) = signs[k][i].x() / stats.active;
                g.at(i, 1, 0, 0) = signs[k][i].y() / stats.active;
            }
            d_disps.push_back(std::move(g));
        }
        backward_unrolled(u, d_disps);
        return stats;
    }

    SampleStats run_finetune_sample(int unroll) {
        Unrolled u = unroll_forward(unroll, false);
        const SyntheticSequence& seq = *u.seq;
        int n_feat = static_cast<int>(u.feature_ids.size());

        std::vector<FeatureTrack> tracks(n_feat);
        for (int i = 0; i < n_feat; ++i) {
            tracks[i].feature_id = u.feature_ids[i];
            for (size_t k = 0; k < u.positions.size(); ++k)
                tracks[i].append(seq.poses[u.start_pose + k].t_us, u.positions[k][i].x(),
                                 u.positions[k][i].y());
        }
        PoseLossOptions opt;
        opt.truncation_radius = radius_;
        PoseLossGrad grad;
        GtTrackReport skipped;
        LossReport rep = pose_supervision_loss(tracks, seq.poses, seq.cam, opt, &grad, &skipped);
        SampleStats stats;
        stats.truncated = rep.truncated_count;
        stats.active = rep.active_count;
        if (rep.active_count == 0) {
            stats.skipped = true;
            return stats;
        }
        stats.loss = rep.value;

        // dL/d(step k displacement) = sum over accumulated positions >= k
        std::vector<Tensor4> d_disps;
        for (size_t k = 1; k < u.positions.size(); ++k) {
            Tensor4 g(n_feat, 2, 1, 1);
            for (int i = 0; i < n_feat; ++i) {
                Eigen::Vector2d acc = Eigen::Vector2d::Zero();
                for (size_t j = k; j < u.positions.size(); ++j) acc += grad.d_position[i][j];
                g.at(i, 0, 0, 0) = acc.x();
                g.at(i, 1, 0, 0) = acc.y();
            }
            d_disps.push_back(std::move(g));
        }
        backward_unrolled(u, d_disps);
        return stats;
    }

    TrackerNet& net_;
    const std::vector<SyntheticSequence>& dataset_;
    TrainConfig cfg_;
    TrainMode mode_;
    Rng rng_;
    Adam opt_;
    int radius_ = 0;
    RepresentationConfig rep_cfg_;
    std::vector<detail::SequenceIndex> indices_;
};

inline TrainResult train(TrackerNet& net, const std::vector<SyntheticSequence>& dataset,
                         const TrainConfig& cfg, TrainMode mode) {
    Trainer trainer(net, dataset, cfg, mode);
    return trainer.run();
}

}  // namespace evtrk
