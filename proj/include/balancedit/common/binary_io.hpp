#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace balancedit {

void append_f64_le(std::vector<std::uint8_t>& out, std::span<const double> values);
std::vector<double> read_f64_le(std::span<const std::uint8_t> bytes, std::size_t offset,
                                std::size_t count);

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::span<const double> values, std::uint64_t h = 0xcbf29ce484222325ULL);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes);
void write_file_text(const std::string& path, const std::string& text);

// Files written here are "<one-line JSON header>\n<binary blob>".
struct HeaderAndBlob {
    std::string header;
    std::span<const std::uint8_t> blob;
};
HeaderAndBlob split_header(std::span<const std::uint8_t> bytes, const std::string& what);

std::string hex64(std::uint64_t v);

}  // namespace balancedit
