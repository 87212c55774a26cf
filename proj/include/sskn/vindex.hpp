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
#include <unordered_set>
#include <vector>

#include "sskn/binio.hpp"
#include "sskn/core.hpp"

namespace sskn {

using EntryId = std::uint64_t;

// k nearest entries, squared Euclidean distances ascending, ties by id.
struct SearchResult {
    std::vector<EntryId> ids;
    std::vector<double> sq_dists;

    std::size_t size() const { return ids.size(); }
};

// Sorts (dist, id) candidates and keeps the first k.
SearchResult top_k(std::vector<std::pair<double, EntryId>>& candidates, std::size_t k);

// ============================================================================
// Exact index
// ============================================================================

class FlatIndex {
public:
    FlatIndex() = default;
    explicit FlatIndex(std::size_t dim) : dim_(dim) { keys_.cols = dim; }

    void add(const Matrix& keys, std::span<const EntryId> ids);
    SearchResult search(std::span<const double> query, std::size_t k) const;

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return ids_.size(); }

private:
    std::size_t dim_ = 0;
    Matrix keys_;
    std::vector<EntryId> ids_;
};

// Ids are row positions 0..N-1.
FlatIndex build_flat(const Matrix& keys);
SearchResult search_flat(const FlatIndex& index, std::span<const double> query, std::size_t k);

// ============================================================================
// k-means
// ============================================================================

struct KMeansOptions {
    int iterations = 25;
};

// k-means++ seeding, Lloyd iterations, empty clusters re-seeded from the
// point farthest from its centroid. Returns a k x D centroid matrix.
Matrix kmeans(const Matrix& data, std::size_t k, Rng& rng, const KMeansOptions& opts = {});

// Index of the nearest row of `centroids`; ties go to the smaller index.
std::size_t nearest_centroid(const Matrix& centroids, std::span<const double> x, double* sq_dist = nullptr);

// ============================================================================
// Inverted file + product quantization
// ============================================================================

class IvfPqIndex {
public:
    static constexpr std::size_t kCodebookSize = 256;

    IvfPqIndex() = default;

    std::size_t dim() const { return dim_; }
    std::size_t num_lists() const { return coarse_.rows; }
    std::size_t num_subquantizers() const { return m_; }
    std::size_t nprobe() const { return nprobe_; }
    void set_nprobe(std::size_t nprobe);
    bool trained() const { return trained_; }
    std::size_t size() const { return ids_.size(); }

    const Matrix& coarse_centroids() const { return coarse_; }
    const std::vector<Matrix>& codebooks() const { return codebooks_; }
    // Posting list of centroid `c`: ids and M-byte codes.
    const std::vector<EntryId>& list_ids(std::size_t c) const { return lists_[c].ids; }
    const std::vector<std::uint8_t>& list_codes(std::size_t c) const { return lists_[c].codes; }

    void add(const Matrix& keys, std::span<const EntryId> ids);
    SearchResult search(std::span<const double> query, std::size_t k) const;

    void write(ByteWriter& w) const;
    static IvfPqIndex read(ByteReader& r);

    friend IvfPqIndex train_ivfpq(const Matrix& sample, std::size_t C, std::size_t M, Rng& rng);

private:
    struct PostingList {
        std::vector<EntryId> ids;
        std::vector<std::uint8_t> codes;
    };

    std::size_t dim_ = 0;
    std::size_t m_ = 0;
    std::size_t nprobe_ = 1;
    bool trained_ = false;
    Matrix coarse_;
    std::vector<Matrix> codebooks_;  // M matrices of 256 x (D/M)
    std::vector<PostingList> lists_;
    std::unordered_set<EntryId> ids_;
};

// Needs sample.rows >= max(C, 256) and D % M == 0. nprobe starts at max(1, C/8).
IvfPqIndex train_ivfpq(const Matrix& sample, std::size_t C, std::size_t M, Rng& rng);
void add_ivfpq(IvfPqIndex& index, const Matrix& keys, std::span<const EntryId> ids);
SearchResult search_ivfpq(const IvfPqIndex& index, std::span<const double> query, std::size_t k);

// C = 4*sqrt(N) rounded to a power of two, at least 1.
std::size_t default_num_lists(std::size_t n);

}  // namespace sskn
