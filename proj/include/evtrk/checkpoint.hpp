#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "evtrk/layers.hpp"

namespace evtrk {

inline constexpr const char* kCheckpointMagic = "EVTRKCKPT1";

// Flat archive of named f64 arrays. Layout:
//   EVTRKCKPT1\n
//   meta <key>=<value>\n        (zero or more)
//   params <count>\n
//   <name> <d0> <d1> <d2> <d3>\n   (manifest, count lines)
//   data\n
//   then per parameter: <name>\n f64\n <d0 d1 d2 d3>\n <raw LE bytes>\n
inline void save_checkpoint(const std::string& path, const std::vector<ParamRef>& params,
                            const std::map<std::string, std::string>& meta = {}) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << kCheckpointMagic << "\n";
    for (const auto& [k, v] : meta) out << "meta " << k << "=" << v << "\n";
    out << "params " << params.size() << "\n";
    for (const ParamRef& p : params) {
        const auto& s = p.value->shape();
        out << p.name << " " << s[0] << " " << s[1] << " " << s[2] << " " << s[3] << "\n";
    }
    out << "data\n";
    for (const ParamRef& p : params) {
        const auto& s = p.value->shape();
        out << p.name << "\nf64\n" << s[0] << " " << s[1] << " " << s[2] << " " << s[3] << "\n";
        out.write(reinterpret_cast<const char*>(p.value->data()),
                  static_cast<std::streamsize>(p.value->size() * sizeof(double)));
        out << "\n";
    }
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

struct CheckpointContents {
    std::map<std::string, std::string> meta;
    std::map<std::string, Tensor4> params;
};

inline CheckpointContents load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string line;
    std::getline(in, line);
    if (line != kCheckpointMagic) throw std::runtime_error("bad checkpoint magic: " + path);
    CheckpointContents contents;
    size_t count = 0;
    while (std::getline(in, line)) {
        if (line.rfind("meta ", 0) == 0) {
            auto eq = line.find('=', 5);
            if (eq == std::string::npos) throw std::runtime_error("bad meta line: " + path);
            contents.meta[line.substr(5, eq - 5)] = line.substr(eq + 1);
        } else if (line.rfind("params ", 0) == 0) {
            count = std::stoul(line.substr(7));
            break;
        } else {
            throw std::runtime_error("unexpected checkpoint line: " + line);
        }
    }
    std::vector<std::pair<std::string, std::array<int, 4>>> manifest;
    for (size_t i = 0; i < count; ++i) {
        std::getline(in, line);
        std::istringstream ls(line);
        std::string name;
        std::array<int, 4> shape{};
        ls >> name >> shape[0] >> shape[1] >> shape[2] >> shape[3];
        if (!ls) throw std::runtime_error("bad manifest line: " + line);
        manifest.emplace_back(name, shape);
    }
    std::getline(in, line);
    if (line != "data") throw std::runtime_error("missing data section: " + path);
    for (const auto& [name, shape] : manifest) {
        std::string rec_name, dtype, shape_line;
        std::getline(in, rec_name);
        std::getline(in, dtype);
        std::getline(in, shape_line);
        if (rec_name != name || dtype != "f64")
            throw std::runtime_error("checkpoint record does not match manifest: " + rec_name);
        Tensor4 t(shape[0], shape[1], shape[2], shape[3]);
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
        if (!in) throw std::runtime_error("truncated checkpoint record: " + name);
        in.get();  // trailing newline
        contents.params.emplace(name, std::move(t));
    }
    return contents;
}

// Copies stored arrays into the live parameters; throws on any missing name
// or shape mismatch.
inline void restore_params(const CheckpointContents& contents,
                           const std::vector<ParamRef>& params) {
    for (const ParamRef& p : params) {
        auto it = contents.params.find(p.name);
        if (it == contents.params.end())
            throw std::runtime_error("checkpoint is missing parameter: " + p.name);
        if (!(it->second.shape() == p.value->shape()))
            throw std::runtime_error("checkpoint shape mismatch for: " + p.name);
        std::copy(it->second.flat().begin(), it->second.flat().end(), p.value->data());
    }
}

}  // namespace evtrk
