#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace evtrk {

enum class LogLevel { error = 0, info = 1, debug = 2 };

// Level comes from EVTRK_LOG={error,info,debug}; default info.
inline LogLevel log_level() {
    static LogLevel level = [] {
        const char* env = std::getenv("EVTRK_LOG");
        if (env == nullptr) return LogLevel::info;
        if (std::strcmp(env, "error") == 0) return LogLevel::error;
        if (std::strcmp(env, "debug") == 0) return LogLevel::debug;
        return LogLevel::info;
    }();
    return level;
}

template <typename... Args>
inline void log_at(LogLevel lvl, const char* tag, const char* fmt, Args... args) {
    if (lvl > log_level()) return;
    std::fprintf(stderr, "[%s] ", tag);
    std::fprintf(stderr, fmt, args...);
    std::fputc('\n', stderr);
}

#define EVTRK_ERROR(...) ::evtrk::log_at(::evtrk::LogLevel::error, "error", __VA_ARGS__)
#define EVTRK_INFO(...) ::evtrk::log_at(::evtrk::LogLevel::info, "info", __VA_ARGS__)
#define EVTRK_DEBUG(...) ::evtrk::log_at(::evtrk::LogLevel::debug, "debug", __VA_ARGS__)

}  // namespace evtrk
