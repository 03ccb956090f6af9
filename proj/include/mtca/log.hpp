#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace mtca {

using WarningSink = std::function<void(std::string_view)>;

// Warnings go to stderr unless a sink is installed. Returns the previous sink.
WarningSink set_warning_sink(WarningSink sink);
void warn(std::string_view message);

// Progress lines on stderr, off unless enabled.
void set_progress(bool enabled);
void info(std::string_view message);

// Installs a sink for the lifetime of the object, collecting messages.
class WarningCapture {
public:
    WarningCapture();
    ~WarningCapture();
    WarningCapture(const WarningCapture&) = delete;
    WarningCapture& operator=(const WarningCapture&) = delete;

    const std::vector<std::string>& messages() const noexcept { return messages_; }

private:
    std::vector<std::string> messages_;
    WarningSink previous_;
};

}  // namespace mtca
