// Copyright 2026 The sskn Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "sskn/binio.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

namespace sskn {

// ============================================================================
// fp16
// ============================================================================

std::uint16_t float_to_half(double value) {
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(value);
    const std::uint16_t sign = static_cast<std::uint16_t>((bits >> 48) & 0x8000u);
    if (std::isnan(value)) return sign | 0x7e00u;
    const double a = std::abs(value);
    if (a >= 65520.0) return sign | 0x7c00u;  // rounds past max finite 65504
    if (a < 0x1.0p-25) return sign;           // below half the smallest subnormal
    int exp;
    std::frexp(a, &exp);  // a = m * 2^exp, m in [0.5, 1)
    // Quantum of the destination grid: 2^(exp-11) for normals, 2^-24 for subnormals.
    const int q = std::max(exp - 11, -24);
    const double scaled = std::ldexp(a, -q);  // exact
    double r = std::nearbyint(scaled);        // default rounding mode: ties to even
    std::uint32_t mant = static_cast<std::uint32_t>(r);
    int e = q + 10 + 15;  // biased exponent assuming mant in [1024, 2048)
    if (exp < -13) {
        // Subnormal range (a < 2^-14): mant in [0, 1024], 1024 promotes to the first normal.
        if (mant >= 1024u) return sign | static_cast<std::uint16_t>(0x0400u);
        return sign | static_cast<std::uint16_t>(mant);
    }
    if (mant == 2048u) {
        mant = 1024u;
        ++e;
    }
    if (e >= 31) return sign | 0x7c00u;
    return sign | static_cast<std::uint16_t>((e << 10) | (mant & 0x3ffu));
}

double half_to_double(std::uint16_t h) {
    const double sign = (h & 0x8000u) ? -1.0 : 1.0;
    const int e = (h >> 10) & 0x1f;
    const int m = h & 0x3ff;
    if (e == 0) return sign * std::ldexp(static_cast<double>(m), -24);
    if (e == 31) return m ? std::nan("") : sign * INFINITY;
    return sign * std::ldexp(static_cast<double>(m + 1024), e - 25);
}

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
    uLong c = ::crc32(0L, Z_NULL, 0);
    std::size_t off = 0;
    while (off < bytes.size()) {
        const std::size_t n = std::min<std::size_t>(bytes.size() - off, 1u << 30);
        c = ::crc32(c, bytes.data() + off, static_cast<uInt>(n));
        off += n;
    }
    return static_cast<std::uint32_t>(c);
}

// ============================================================================
// Writer / reader
// ============================================================================

void ByteWriter::u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
}
void ByteWriter::u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
}
void ByteWriter::u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
}
void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
void ByteWriter::str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    for (char c : s) u8(static_cast<std::uint8_t>(c));
}

void ByteReader::need(std::size_t n) const {
    if (n > remaining()) {
        throw Truncated("need " + std::to_string(n) + " bytes at offset " + std::to_string(pos_));
    }
}
std::uint8_t ByteReader::u8() {
    need(1);
    return buf_[pos_++];
}
std::uint16_t ByteReader::u16() {
    need(2);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(buf_[pos_++]) << (8 * i);
    return v;
}
std::uint32_t ByteReader::u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_++]) << (8 * i);
    return v;
}
std::uint64_t ByteReader::u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_++]) << (8 * i);
    return v;
}
double ByteReader::f64() { return std::bit_cast<double>(u64()); }
std::string ByteReader::str() {
    const std::uint32_t n = u32();
    auto b = bytes(n);
    return std::string(b.begin(), b.end());
}
std::span<const std::uint8_t> ByteReader::bytes(std::size_t n) {
    need(n);
    auto s = buf_.subspan(pos_, n);
    pos_ += n;
    return s;
}
void ByteReader::expect_magic(const char (&m)[5]) {
    need(4);
    if (std::memcmp(buf_.data() + pos_, m, 4) != 0) {
        throw BadMagic(std::string("expected '") + m + "'");
    }
    pos_ += 4;
}

std::span<const std::uint8_t> verify_sealed(std::span<const std::uint8_t> file) {
    if (file.size() < 8) throw Truncated("file too short");
    auto payload = file.first(file.size() - 4);
    ByteReader tail(file.last(4));
    const std::uint32_t stored = tail.u32();
    if (stored != crc32(payload)) throw ChecksumMismatch("CRC32 does not match contents");
    return payload;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write to '" + path + "' failed");
}

}  // namespace sskn
