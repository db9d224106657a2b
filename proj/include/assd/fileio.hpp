#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace assd {

std::vector<std::uint8_t> readFileBytes(const std::string& path);

// Writes to a temporary sibling and renames on success so a failed command
// never leaves a partial output file behind.
void atomicWriteFile(const std::string& path, const void* data, std::size_t len);
void atomicWriteFile(const std::string& path, const std::vector<std::uint8_t>& bytes);
void atomicWriteFile(const std::string& path, const std::string& text);

} // namespace assd
