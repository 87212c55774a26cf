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

#include "sskn/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

namespace sskn {

// ============================================================================
// Vocabulary
// ============================================================================

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.size() < 3) {
        throw InvalidConfig("vocabulary needs at least 3 tokens, got " + std::to_string(tokens_.size()));
    }
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
            throw InvalidConfig("duplicate token '" + tokens_[i] + "'");
        }
    }
}

Vocab Vocab::synthetic(std::size_t size) {
    std::vector<std::string> tokens{"<bos>", "<eos>"};
    for (std::size_t i = 2; i < size; ++i) tokens.push_back("t" + std::to_string(i));
    return Vocab(std::move(tokens));
}

const std::string& Vocab::token(TokenId id) const {
    if (id >= tokens_.size()) throw UnknownToken("id " + std::to_string(id));
    return tokens_[id];
}

TokenId Vocab::id(const std::string& token) const {
    auto it = index_.find(token);
    if (it == index_.end()) throw UnknownToken(token);
    return it->second;
}

std::vector<TokenId> encode_tokens(const std::vector<std::string>& text, const Vocab& vocab) {
    std::vector<TokenId> ids;
    ids.reserve(text.size());
    for (const auto& t : text) ids.push_back(vocab.id(t));
    return ids;
}

std::vector<std::string> decode_tokens(const std::vector<TokenId>& ids, const Vocab& vocab) {
    std::vector<std::string> text;
    text.reserve(ids.size());
    for (TokenId id : ids) text.push_back(vocab.token(id));
    return text;
}

// ============================================================================
// Numerics
// ============================================================================

double log_sum_exp(std::span<const double> values) {
    if (values.empty()) throw EmptyInput("log_sum_exp of empty vector");
    double m = -std::numeric_limits<double>::infinity();
    for (double v : values) m = std::max(m, v);
    if (!std::isfinite(m)) {
        if (m > 0) return m;
        throw EmptyInput("log_sum_exp needs at least one finite value");
    }
    double s = 0.0;
    for (double v : values) s += std::exp(v - m);
    return m + std::log(s);
}

std::vector<double> softmax(std::span<const double> logits) {
    const double z = log_sum_exp(logits);
    std::vector<double> p(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) p[i] = std::exp(logits[i] - z);
    return p;
}

bool is_distribution(std::span<const double> p, double tol) {
    if (p.empty()) return false;
    double s = 0.0;
    for (double v : p) {
        if (!std::isfinite(v) || v < 0.0) return false;
        s += v;
    }
    return std::abs(s - 1.0) <= tol;
}

std::size_t argmax(std::span<const double> values) {
    if (values.empty()) throw EmptyInput("argmax of empty vector");
    return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

void Matrix::append_row(std::span<const double> values) {
    if (rows == 0 && data.empty()) cols = values.size();
    if (values.size() != cols) {
        throw DimensionMismatch("row of width " + std::to_string(values.size()) + ", expected " +
                                std::to_string(cols));
    }
    data.insert(data.end(), values.begin(), values.end());
    ++rows;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// ============================================================================
// Deterministic randomness
// ============================================================================

std::uint64_t Rng::mix(std::uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

double Rng::uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::uniform_int(std::uint64_t n) {
    if (n == 0) throw InvalidConfig("uniform_int needs n > 0");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return x % n;
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // Marsaglia polar method.
    double u, v, s;
    do {
        u = 2.0 * uniform() - 1.0;
        v = 2.0 * uniform() - 1.0;
        s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
}

Rng Rng::child(std::uint64_t stream) const {
    return Rng(mix(seed_ ^ mix(stream + 0x632be59bd9b4e019ULL)));
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    const std::size_t block = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w * block; i < std::min(n, (w + 1) * block); ++i) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace sskn
