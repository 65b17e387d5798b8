#include "cohortforge/log.hpp"

#include <cstdlib>
#include <iostream>
#include <mutex>

namespace cohortforge::logging {

namespace {

Level parse_env() {
    const char* env = std::getenv("COHORT_FORGE_LOG");
    if (!env) return Level::warn;
    std::string v(env);
    if (v == "error") return Level::error;
    if (v == "warn") return Level::warn;
    if (v == "info") return Level::info;
    if (v == "debug") return Level::debug;
    return Level::warn;
}

Level g_threshold = parse_env();
std::mutex g_mutex;

const char* name(Level lvl) {
    switch (lvl) {
        case Level::error: return "error";
        case Level::warn: return "warn";
        case Level::info: return "info";
        case Level::debug: return "debug";
    }
    return "?";
}

}  // namespace

Level threshold() { return g_threshold; }

void set_threshold(Level lvl) { g_threshold = lvl; }

void emit(Level lvl, const std::string& msg) {
    std::lock_guard<std::mutex> lock(g_mutex);
    std::cerr << "[cohortforge:" << name(lvl) << "] " << msg << "\n";
}

}  // namespace cohortforge::logging
