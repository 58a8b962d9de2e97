#pragma once

#include <functional>
#include <string>

namespace st5 {

using WarningSink = std::function<void(const std::string&)>;

// Replaces the warning sink (default: "warning: <msg>" on stderr). Passing an
// empty function restores the default. Returns the previous sink.
WarningSink set_warning_sink(WarningSink sink);

void warn(const std::string& message);

}  // namespace st5
