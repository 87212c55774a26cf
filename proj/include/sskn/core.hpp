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

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "sskn/errors.hpp"

namespace sskn {

using TokenId = std::uint32_t;
using Embedding = std::vector<double>;
using SpeakerVector = std::vector<double>;
// Probability vector over the vocabulary.
using TokenDistribution = std::vector<double>;

inline constexpr TokenId kBos = 0;
inline constexpr TokenId kEos = 1;

// ============================================================================
// Vocabulary
// ============================================================================

class Vocab {
public:
    Vocab() = default;
    // `tokens[0]` and `tokens[1]` are the BOS and EOS strings.
    explicit Vocab(std::vector<std::string> tokens);

    // "<bos>", "<eos>", then "t2".."t{V-1}".
    static Vocab synthetic(std::size_t size);

    std::size_t size() const { return tokens_.size(); }
    const std::string& token(TokenId id) const;
    TokenId id(const std::string& token) const;
    bool contains(const std::string& token) const { return index_.count(token) > 0; }
    const std::vector<std::string>& tokens() const { return tokens_; }

    bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> index_;
};

std::vector<TokenId> encode_tokens(const std::vector<std::string>& text, const Vocab& vocab);
std::vector<std::string> decode_tokens(const std::vector<TokenId>& ids, const Vocab& vocab);

// ============================================================================
// Numerics
// ============================================================================

double log_sum_exp(std::span<const double> values);
std::vector<double> softmax(std::span<const double> logits);

// True when entries are finite, non-negative and sum to 1 within `tol`.
bool is_distribution(std::span<const double> p, double tol = 1e-9);

std::size_t argmax(std::span<const double> values);

// Row-major dense matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
    double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
    void append_row(std::span<const double> values);
};

double squared_distance(std::span<const double> a, std::span<const double> b);
double dot(std::span<const double> a, std::span<const double> b);

// ============================================================================
// Deterministic randomness
// ============================================================================

// mt19937_64 plus hand-written distributions; the standard library
// distributions are not specified bit-exactly across implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(mix(seed)) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t next_u64() { return engine_(); }
    // Uniform on [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Uniform integer on [0, n). n must be positive.
    std::uint64_t uniform_int(std::uint64_t n);
    double normal();
    bool bernoulli(double p) { return uniform() < p; }

    // Independent child stream; does not advance this generator.
    Rng child(std::uint64_t stream) const;

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[uniform_int(i)]);
        }
    }

    static std::uint64_t mix(std::uint64_t x);

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Runs fn(i) for i in [0, n) on up to `threads` workers. Work is split into
// contiguous blocks so results written by index are independent of `threads`.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace sskn
