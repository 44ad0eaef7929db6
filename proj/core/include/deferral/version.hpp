#pragma once

#include <string_view>

namespace deferral {

// Schema version shared by the JSONL log header and the calibrator file.
inline constexpr int kFormatVersion = 1;

inline constexpr std::string_view kToolkitVersion = "0.1.0";

}  // namespace deferral
