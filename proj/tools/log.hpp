#pragma once

#include <cstdio>
#include <cstdlib>
#include <string>
#include <string_view>

// Minimal leveled logging to stderr. TRIDO_LOG=error|warn|info|debug
// (default info) picks the threshold.
namespace trido::log {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

inline Level threshold() {
    static const Level level = [] {
        const char* env = std::getenv("TRIDO_LOG");
        if (!env) return Level::info;
        const std::string_view v(env);
        if (v == "error" || v == "0") return Level::error;
        if (v == "warn" || v == "1") return Level::warn;
        if (v == "debug" || v == "3") return Level::debug;
        return Level::info;
    }();
    return level;
}

inline void write(Level lvl, const std::string& msg) {
    if (static_cast<int>(lvl) > static_cast<int>(threshold())) return;
    static constexpr const char* tags[] = {"error", "warn", "info", "debug"};
    std::fprintf(stderr, "[%s] %s\n", tags[static_cast<int>(lvl)], msg.c_str());
}

inline void error(const std::string& m) { write(Level::error, m); }
inline void warn(const std::string& m) { write(Level::warn, m); }
inline void info(const std::string& m) { write(Level::info, m); }
inline void debug(const std::string& m) { write(Level::debug, m); }

}  // namespace trido::log
