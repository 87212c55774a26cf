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

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sskn/errors.hpp"

namespace sskn {

// IEEE 754 binary16 conversion, round to nearest even. Overflow goes to inf.
std::uint16_t float_to_half(double value);
double half_to_double(std::uint16_t bits);
// The fp16-representable value nearest to `value`.
inline double round_to_half(double value) { return half_to_double(float_to_half(value)); }

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

// Little-endian byte sink.
class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v);
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f64(double v);
    void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
    void magic(const char (&m)[5]) { for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(m[i])); }
    void str(const std::string& s);
    // Appends CRC32 of everything written so far.
    void seal() { u32(crc32(buf_)); }

    const std::vector<std::uint8_t>& buffer() const { return buf_; }
    std::size_t size() const { return buf_.size(); }

private:
    std::vector<std::uint8_t> buf_;
};

// Little-endian byte source with bounds checks (throws Truncated).
class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> b) : buf_(b) {}

    std::uint8_t u8();
    std::uint16_t u16();
    std::uint32_t u32();
    std::uint64_t u64();
    double f64();
    std::string str();
    std::span<const std::uint8_t> bytes(std::size_t n);
    // Throws BadMagic unless the next 4 bytes equal `m`.
    void expect_magic(const char (&m)[5]);

    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return buf_.size() - pos_; }

private:
    void need(std::size_t n) const;
    std::span<const std::uint8_t> buf_;
    std::size_t pos_ = 0;
};

// Verifies the trailing CRC32 and returns the payload without it.
std::span<const std::uint8_t> verify_sealed(std::span<const std::uint8_t> file);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace sskn
