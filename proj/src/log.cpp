#include "cfhmm/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>

namespace cfhmm::log {

namespace {

Level from_env() {
    const char* v = std::getenv("CFHMM_LOG");
    if (v == nullptr) return Level::Warn;
    const std::string s(v);
    if (s == "error") return Level::Error;
    if (s == "info") return Level::Info;
    if (s == "debug") return Level::Debug;
    return Level::Warn;
}

std::atomic<int>& level_store() {
    static std::atomic<int> lvl{static_cast<int>(from_env())};
    return lvl;
}

}  // namespace

Level threshold() { return static_cast<Level>(level_store().load()); }

void set_threshold(Level level) { level_store().store(static_cast<int>(level)); }

void write(Level level, std::string_view message) {
    if (static_cast<int>(level) > level_store().load()) return;
    static std::mutex mu;
    static constexpr const char* names[] = {"error", "warn", "info", "debug"};
    std::lock_guard lock(mu);
    std::cerr << "[cfhmm " << names[static_cast<int>(level)] << "] " << message << '\n';
}

}  // namespace cfhmm::log
