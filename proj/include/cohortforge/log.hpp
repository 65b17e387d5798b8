#pragma once

#include <sstream>
#include <string>

namespace cohortforge::logging {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

// Threshold comes from COHORT_FORGE_LOG (error|warn|info|debug); default warn.
Level threshold();
void set_threshold(Level lvl);
void emit(Level lvl, const std::string& msg);

template <typename... Args>
void log(Level lvl, Args&&... args) {
    if (lvl > threshold()) return;
    std::ostringstream os;
    (os << ... << args);
    emit(lvl, os.str());
}

template <typename... Args>
void error(Args&&... args) { log(Level::error, std::forward<Args>(args)...); }
template <typename... Args>
void warn(Args&&... args) { log(Level::warn, std::forward<Args>(args)...); }
template <typename... Args>
void info(Args&&... args) { log(Level::info, std::forward<Args>(args)...); }
template <typename... Args>
void debug(Args&&... args) { log(Level::debug, std::forward<Args>(args)...); }

}  // namespace cohortforge::logging
