#include "mtca/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace mtca {

namespace {

std::mutex& sink_mutex() {
    static std::mutex m;
    return m;
}

WarningSink& current_sink() {
    static WarningSink sink;
    return sink;
}

}  // namespace

WarningSink set_warning_sink(WarningSink sink) {
    std::lock_guard lock(sink_mutex());
    return std::exchange(current_sink(), std::move(sink));
}

void warn(std::string_view message) {
    std::lock_guard lock(sink_mutex());
    if (current_sink()) {
        current_sink()(message);
    } else {
        std::cerr << "warning: " << message << '\n';
    }
}

namespace {
std::atomic<bool> g_progress{false};
}  // namespace

void set_progress(bool enabled) { g_progress = enabled; }

void info(std::string_view message) {
    if (!g_progress) return;
    std::lock_guard lock(sink_mutex());
    std::cerr << "info: " << message << '\n';
}

WarningCapture::WarningCapture() {
    previous_ = set_warning_sink([this](std::string_view m) { messages_.emplace_back(m); });
}

WarningCapture::~WarningCapture() { set_warning_sink(std::move(previous_)); }

}  // namespace mtca
