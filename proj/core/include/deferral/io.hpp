#pragma once

#include <string>
#include <string_view>

namespace deferral {

// Writes `content` to a sibling temp file and renames it over `path`, so a
// crashed run can never leave a half-written artifact behind.
void write_file_atomic(const std::string& path, std::string_view content);

std::string read_file(const std::string& path);

// 64-bit FNV-1a of `bytes`, as 16 lowercase hex digits. Used for the data
// digests recorded in fit_meta and fitted policies.
std::string fnv1a_hex(std::string_view bytes);

// Shortest decimal form that parses back to exactly the same double.
std::string format_double(double value);

}  // namespace deferral
