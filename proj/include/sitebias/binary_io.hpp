#pragma once

// Little-endian primitive readers/writers shared by the binary file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "sitebias/errors.hpp"

namespace sitebias::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

template <typename T>
    requires std::is_arithmetic_v<T>
void write_le(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
    requires std::is_arithmetic_v<T>
T read_le(std::istream& in) {
    T value{};
    if (!in.read(reinterpret_cast<char*>(&value), sizeof(T)))
        throw FormatError("truncated file");
    return value;
}

inline void write_magic(std::ostream& out, const char (&magic)[5]) { out.write(magic, 4); }

inline void expect_magic(std::istream& in, const char (&magic)[5]) {
    char buf[4];
    if (!in.read(buf, 4)) throw FormatError("truncated file");
    if (std::memcmp(buf, magic, 4) != 0)
        throw FormatError(std::string("bad magic bytes, expected ") + magic);
}

/// u32 byte length followed by UTF-8 bytes.
inline void write_string(std::ostream& out, const std::string& s) {
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in) {
    const auto n = read_le<std::uint32_t>(in);
    std::string s(n, '\0');
    if (n > 0 && !in.read(s.data(), n)) throw FormatError("truncated file");
    return s;
}

}  // namespace sitebias::io
