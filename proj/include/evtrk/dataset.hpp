#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "evtrk/event.hpp"
#include "evtrk/image.hpp"
#include "evtrk/scene.hpp"
#include "evtrk/track.hpp"

namespace evtrk {

// On-disk sequence layout:
//   <dir>/calib.txt, poses.txt, events.txt|events.bin, tracks_gt.txt,
//   frames/frame_<t_us>.pgm
inline void write_sequence(const std::string& dir, const SyntheticSequence& seq,
                           bool binary_events = true) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "frames");
    save_calibration(seq.cam, (fs::path(dir) / "calib.txt").string());
    save_poses(seq.poses, (fs::path(dir) / "poses.txt").string());
    if (binary_events)
        save_events_binary(seq.events, (fs::path(dir) / "events.bin").string());
    else
        save_events_text(seq.events, (fs::path(dir) / "events.txt").string());
    save_tracks(seq.gt_tracks, (fs::path(dir) / "tracks_gt.txt").string());
    for (const auto& [t, img] : seq.frames)
        save_pgm(img, (fs::path(dir) / "frames" / ("frame_" + std::to_string(t) + ".pgm")).string());
}

inline SyntheticSequence load_sequence(const std::string& dir) {
    namespace fs = std::filesystem;
    SyntheticSequence seq;
    seq.cam = load_calibration((fs::path(dir) / "calib.txt").string());
    seq.poses = load_poses((fs::path(dir) / "poses.txt").string());
    if (fs::exists(fs::path(dir) / "events.bin"))
        seq.events = load_events_binary((fs::path(dir) / "events.bin").string());
    else
        seq.events = load_events_text((fs::path(dir) / "events.txt").string());
    if (fs::exists(fs::path(dir) / "tracks_gt.txt"))
        seq.gt_tracks = load_tracks((fs::path(dir) / "tracks_gt.txt").string());
    std::vector<std::string> frame_files;
    for (const auto& entry : fs::directory_iterator(fs::path(dir) / "frames"))
        frame_files.push_back(entry.path().string());
    std::sort(frame_files.begin(), frame_files.end(), [](const std::string& a, const std::string& b) {
        auto stamp = [](const std::string& p) {
            auto base = fs::path(p).stem().string();  // frame_<t_us>
            return std::stoll(base.substr(base.find('_') + 1));
        };
        return stamp(a) < stamp(b);
    });
    for (const std::string& f : frame_files) {
        auto base = fs::path(f).stem().string();
        std::int64_t t = std::stoll(base.substr(base.find('_') + 1));
        seq.frames.emplace_back(t, load_pgm(f));
    }
    return seq;
}

inline std::vector<std::string> list_sequence_dirs(const std::string& root) {
    namespace fs = std::filesystem;
    std::vector<std::string> dirs;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory() && fs::exists(entry.path() / "calib.txt"))
            dirs.push_back(entry.path().string());
    std::sort(dirs.begin(), dirs.end());
    return dirs;
}

}  // namespace evtrk
