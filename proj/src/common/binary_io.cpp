#include "balancedit/common/binary_io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include "balancedit/common/error.hpp"

namespace balancedit {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

namespace {

std::uint64_t to_le(std::uint64_t v) {
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        std::uint64_t r = 0;
        for (int i = 0; i < 8; ++i) {
            r = (r << 8) | ((v >> (8 * i)) & 0xffU);
        }
        return r;
    }
}

}  // namespace

void append_f64_le(std::vector<std::uint8_t>& out, std::span<const double> values) {
    const std::size_t start = out.size();
    out.resize(start + values.size() * 8);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const std::uint64_t bits = to_le(std::bit_cast<std::uint64_t>(values[i]));
        std::memcpy(out.data() + start + i * 8, &bits, 8);
    }
}

std::vector<double> read_f64_le(std::span<const std::uint8_t> bytes, std::size_t offset,
                                std::size_t count) {
    if (offset > bytes.size() || count > (bytes.size() - offset) / 8) {
        fail(ErrorKind::format, "weight blob truncated: need " + std::to_string(count * 8) +
                                    " bytes at offset " + std::to_string(offset) + ", blob has " +
                                    std::to_string(bytes.size()));
    }
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint64_t bits = 0;
        std::memcpy(&bits, bytes.data() + offset + i * 8, 8);
        values[i] = std::bit_cast<double>(to_le(bits));
    }
    return values;
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t h) {
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a64(std::span<const double> values, std::uint64_t h) {
    std::vector<std::uint8_t> buf;
    append_f64_le(buf, values);
    return fnv1a64(buf, h);
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::io, "cannot open '" + path + "'");
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        fail(ErrorKind::io, "cannot write '" + path + "'");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        fail(ErrorKind::io, "short write to '" + path + "'");
    }
}

void write_file_text(const std::string& path, const std::string& text) {
    write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

HeaderAndBlob split_header(std::span<const std::uint8_t> bytes, const std::string& what) {
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        if (bytes[i] == '\n') {
            return {std::string(reinterpret_cast<const char*>(bytes.data()), i), bytes.subspan(i + 1)};
        }
    }
    fail(ErrorKind::format, what + ": missing header line");
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace balancedit
