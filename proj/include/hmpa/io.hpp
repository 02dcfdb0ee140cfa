#pragma once

#include <string>

namespace hmpa {

// Writes via a temp file in the same directory plus rename, so a failed run
// never leaves a truncated output behind.
void atomic_write_file(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

}  // namespace hmpa
