#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace evtrk {

// One brightness-change spike: pixel, microsecond timestamp, polarity {-1,+1}.
struct Event {
    std::uint16_t x = 0;
    std::uint16_t y = 0;
    std::int64_t t = 0;  // microseconds
    std::int8_t polarity = 1;
};

// Time-ordered event sequence with the sensor resolution it came from.
// Immutable after construction.
class EventStream {
public:
    EventStream() = default;
    EventStream(std::vector<Event> events, int width, int height)
        : events_(std::move(events)), width_(width), height_(height) {
        if (width <= 0 || height <= 0)
            throw std::invalid_argument("EventStream: non-positive resolution");
        for (size_t i = 0; i < events_.size(); ++i) {
            const Event& e = events_[i];
            if (e.x >= width_ || e.y >= height_)
                throw std::invalid_argument("EventStream: event outside sensor bounds");
            if (i > 0 && e.t < events_[i - 1].t)
                throw std::invalid_argument("EventStream: events not sorted by timestamp");
        }
    }

    const std::vector<Event>& events() const { return events_; }
    int width() const { return width_; }
    int height() const { return height_; }
    bool empty() const { return events_.empty(); }
    size_t size() const { return events_.size(); }

    std::int64_t t_begin() const { return events_.empty() ? 0 : events_.front().t; }
    std::int64_t t_end() const { return events_.empty() ? 0 : events_.back().t; }

    // Events with t in [t0, t1). Binary search on the sorted sequence.
    std::span<const Event> window(std::int64_t t0, std::int64_t t1) const {
        auto lo = std::lower_bound(events_.begin(), events_.end(), t0,
                                   [](const Event& e, std::int64_t t) { return e.t < t; });
        auto hi = std::lower_bound(lo, events_.end(), t1,
                                   [](const Event& e, std::int64_t t) { return e.t < t; });
        return {&*lo, static_cast<size_t>(hi - lo)};
    }

private:
    std::vector<Event> events_;
    std::uint16_t width_ = 0;
    std::uint16_t height_ = 0;
};

// --- text format: header "# width height", then one "t_us x y p" per line,
// p in {0,1} mapped to {-1,+1} ------------------------------------------

inline void save_events_text(const EventStream& stream, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "# " << stream.width() << " " << stream.height() << "\n";
    for (const Event& e : stream.events())
        out << e.t << " " << e.x << " " << e.y << " " << (e.polarity > 0 ? 1 : 0) << "\n";
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline EventStream load_events_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string header;
    std::getline(in, header);
    int width = 0, height = 0;
    if (std::sscanf(header.c_str(), "# %d %d", &width, &height) != 2)
        throw std::runtime_error("bad event file header: " + path);
    std::vector<Event> events;
    std::int64_t t;
    int x, y, p;
    while (in >> t >> x >> y >> p) {
        Event e;
        e.t = t;
        e.x = static_cast<std::uint16_t>(x);
        e.y = static_cast<std::uint16_t>(y);
        e.polarity = (p != 0) ? 1 : -1;
        events.push_back(e);
    }
    return EventStream(std::move(events), width, height);
}

// --- binary format: 16-byte header (8-byte magic "EVTRK001", u16 width,
// u16 height, 4 reserved bytes), then records (u64 t, u16 x, u16 y, i8 p) --

inline constexpr char kEventMagic[8] = {'E', 'V', 'T', 'R', 'K', '0', '0', '1'};

inline void save_events_binary(const EventStream& stream, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    char header[16] = {0};
    std::memcpy(header, kEventMagic, 8);
    std::uint16_t w = static_cast<std::uint16_t>(stream.width());
    std::uint16_t h = static_cast<std::uint16_t>(stream.height());
    std::memcpy(header + 8, &w, 2);
    std::memcpy(header + 10, &h, 2);
    out.write(header, 16);
    for (const Event& e : stream.events()) {
        std::uint64_t t = static_cast<std::uint64_t>(e.t);
        out.write(reinterpret_cast<const char*>(&t), 8);
        out.write(reinterpret_cast<const char*>(&e.x), 2);
        out.write(reinterpret_cast<const char*>(&e.y), 2);
        out.write(reinterpret_cast<const char*>(&e.polarity), 1);
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline EventStream load_events_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    char header[16];
    in.read(header, 16);
    if (!in || std::memcmp(header, kEventMagic, 8) != 0)
        throw std::runtime_error("bad event binary magic: " + path);
    std::uint16_t w, h;
    std::memcpy(&w, header + 8, 2);
    std::memcpy(&h, header + 10, 2);
    std::vector<Event> events;
    while (true) {
        char rec[13];
        in.read(rec, 13);
        if (in.gcount() == 0) break;
        if (in.gcount() != 13) throw std::runtime_error("truncated event record: " + path);
        Event e;
        std::uint64_t t;
        std::memcpy(&t, rec, 8);
        e.t = static_cast<std::int64_t>(t);
        std::memcpy(&e.x, rec + 8, 2);
        std::memcpy(&e.y, rec + 10, 2);
        e.polarity = static_cast<std::int8_t>(rec[12]);
        events.push_back(e);
    }
    return EventStream(std::move(events), w, h);
}

}  // namespace evtrk
