#ifndef HSFM_LOG_HPP
#define HSFM_LOG_HPP

#include <functional>
#include <string>

namespace hsfm {

// Warnings are routed through a replaceable sink (stderr by default).
using WarningSink = std::function<void(const std::string&)>;

void set_warning_sink(WarningSink sink);
void warn(const std::string& message);

} // namespace hsfm

#endif
