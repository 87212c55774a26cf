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

#include "sskn/vindex.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sskn {

SearchResult top_k(std::vector<std::pair<double, EntryId>>& candidates, std::size_t k) {
    const std::size_t n = std::min(k, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(n),
                      candidates.end());
    SearchResult out;
    out.ids.reserve(n);
    out.sq_dists.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.sq_dists.push_back(candidates[i].first);
        out.ids.push_back(candidates[i].second);
    }
    return out;
}

// ============================================================================
// Exact index
// ============================================================================

void FlatIndex::add(const Matrix& keys, std::span<const EntryId> ids) {
    if (keys.rows == 0) return;
    if (keys.cols != dim_) {
        throw DimensionMismatch("keys of dim " + std::to_string(keys.cols) + ", index dim " +
                                std::to_string(dim_));
    }
    if (ids.size() != keys.rows) throw DimensionMismatch("ids and keys differ in length");
    keys_.data.insert(keys_.data.end(), keys.data.begin(), keys.data.end());
    keys_.rows += keys.rows;
    ids_.insert(ids_.end(), ids.begin(), ids.end());
}

SearchResult FlatIndex::search(std::span<const double> query, std::size_t k) const {
    if (query.size() != dim_) {
        throw DimensionMismatch("query of dim " + std::to_string(query.size()) + ", index dim " +
                                std::to_string(dim_));
    }
    std::vector<std::pair<double, EntryId>> cand(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        cand[i] = {squared_distance(query, keys_.row(i)), ids_[i]};
    }
    return top_k(cand, k);
}

FlatIndex build_flat(const Matrix& keys) {
    FlatIndex index(keys.cols);
    std::vector<EntryId> ids(keys.rows);
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    index.add(keys, ids);
    return index;
}

SearchResult search_flat(const FlatIndex& index, std::span<const double> query, std::size_t k) {
    return index.search(query, k);
}

// ============================================================================
// k-means
// ============================================================================

std::size_t nearest_centroid(const Matrix& centroids, std::span<const double> x, double* sq_dist) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.rows; ++c) {
        const double d = squared_distance(x, centroids.row(c));
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    if (sq_dist) *sq_dist = best_d;
    return best;
}

Matrix kmeans(const Matrix& data, std::size_t k, Rng& rng, const KMeansOptions& opts) {
    const std::size_t n = data.rows;
    const std::size_t dim = data.cols;
    if (k == 0 || n < k) {
        throw InsufficientTrainingData("k-means with k=" + std::to_string(k) + " on " +
                                       std::to_string(n) + " points");
    }
    Matrix cent(k, dim);

    // Greedy k-means++ seeding: each step draws 2 + ln k candidates by D^2
    // sampling and keeps the one that lowers the potential most.
    const std::size_t trials = 2 + static_cast<std::size_t>(std::log(static_cast<double>(k)));
    std::vector<double> d2(n);
    const std::size_t first = rng.uniform_int(n);
    std::copy(data.row(first).begin(), data.row(first).end(), cent.row(0).begin());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        d2[i] = squared_distance(data.row(i), cent.row(0));
        total += d2[i];
    }
    std::vector<double> cand_d2(n), best_d2(n);
    for (std::size_t c = 1; c < k; ++c) {
        std::size_t best = n;
        double best_total = std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < trials; ++t) {
            std::size_t pick = n - 1;
            if (total > 0.0) {
                double r = rng.uniform() * total;
                for (std::size_t i = 0; i < n; ++i) {
                    r -= d2[i];
                    if (r < 0.0) {
                        pick = i;
                        break;
                    }
                }
            } else {
                pick = rng.uniform_int(n);
            }
            double cand_total = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                cand_d2[i] = std::min(d2[i], squared_distance(data.row(i), data.row(pick)));
                cand_total += cand_d2[i];
            }
            if (cand_total < best_total) {
                best_total = cand_total;
                best = pick;
                best_d2.swap(cand_d2);
            }
        }
        std::copy(data.row(best).begin(), data.row(best).end(), cent.row(c).begin());
        d2.swap(best_d2);
        total = best_total;
    }

    // Lloyd iterations
    std::vector<std::size_t> assign(n);
    std::vector<double> dist(n);
    std::vector<std::size_t> count(k);
    for (int it = 0; it < opts.iterations; ++it) {
        for (std::size_t i = 0; i < n; ++i) assign[i] = nearest_centroid(cent, data.row(i), &dist[i]);
        std::fill(cent.data.begin(), cent.data.end(), 0.0);
        std::fill(count.begin(), count.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            auto dst = cent.row(assign[i]);
            auto src = data.row(i);
            for (std::size_t j = 0; j < dim; ++j) dst[j] += src[j];
            ++count[assign[i]];
        }
        std::vector<std::size_t> by_dist;
        std::size_t next_far = 0;
        for (std::size_t c = 0; c < k; ++c) {
            auto row = cent.row(c);
            if (count[c] > 0) {
                for (double& v : row) v /= static_cast<double>(count[c]);
                continue;
            }
            if (by_dist.empty()) {
                by_dist.resize(n);
                for (std::size_t i = 0; i < n; ++i) by_dist[i] = i;
                std::stable_sort(by_dist.begin(), by_dist.end(),
                                 [&](std::size_t a, std::size_t b) { return dist[a] > dist[b]; });
            }
            const std::size_t far = by_dist[std::min(next_far++, n - 1)];
            std::copy(data.row(far).begin(), data.row(far).end(), row.begin());
        }
    }
    return cent;
}

// ============================================================================
// Inverted file + product quantization
// ============================================================================

namespace {

void check_dim(std::size_t got, std::size_t want) {
    if (got != want) {
        throw DimensionMismatch("dim " + std::to_string(got) + ", expected " + std::to_string(want));
    }
}

}  // namespace

std::size_t default_num_lists(std::size_t n) {
    if (n == 0) return 1;
    const double target = 4.0 * std::sqrt(static_cast<double>(n));
    const int p = static_cast<int>(std::lround(std::log2(target)));
    return static_cast<std::size_t>(1) << std::max(0, p);
}

IvfPqIndex train_ivfpq(const Matrix& sample, std::size_t C, std::size_t M, Rng& rng) {
    if (M == 0 || sample.cols % M != 0) {
        throw DimensionMismatch("D=" + std::to_string(sample.cols) + " not divisible by M=" +
                                std::to_string(M));
    }
    if (C == 0 || sample.rows < std::max(C, IvfPqIndex::kCodebookSize)) {
        throw InsufficientTrainingData("need at least max(C, 256) training vectors, got " +
                                       std::to_string(sample.rows));
    }
    IvfPqIndex idx;
    idx.dim_ = sample.cols;
    idx.m_ = M;
    idx.nprobe_ = std::max<std::size_t>(1, C / 8);
    Rng coarse_rng = rng.child(0);
    idx.coarse_ = kmeans(sample, C, coarse_rng);

    const std::size_t dsub = sample.cols / M;
    Matrix residual(sample.rows, sample.cols);
    for (std::size_t i = 0; i < sample.rows; ++i) {
        const std::size_t c = nearest_centroid(idx.coarse_, sample.row(i));
        for (std::size_t j = 0; j < sample.cols; ++j) {
            residual.at(i, j) = sample.at(i, j) - idx.coarse_.at(c, j);
        }
    }
    for (std::size_t m = 0; m < M; ++m) {
        Matrix sub(sample.rows, dsub);
        for (std::size_t i = 0; i < sample.rows; ++i) {
            for (std::size_t j = 0; j < dsub; ++j) sub.at(i, j) = residual.at(i, m * dsub + j);
        }
        Rng sub_rng = rng.child(1 + m);
        idx.codebooks_.push_back(kmeans(sub, IvfPqIndex::kCodebookSize, sub_rng));
    }
    idx.lists_.assign(C, {});
    idx.trained_ = true;
    return idx;
}

void IvfPqIndex::set_nprobe(std::size_t nprobe) {
    if (nprobe == 0 || nprobe > std::max<std::size_t>(1, coarse_.rows)) {
        throw InvalidConfig("nprobe must be in [1, C]");
    }
    nprobe_ = nprobe;
}

void IvfPqIndex::add(const Matrix& keys, std::span<const EntryId> ids) {
    if (keys.rows == 0) return;
    if (!trained_) throw Untrained("add_ivfpq on an untrained index");
    check_dim(keys.cols, dim_);
    if (ids.size() != keys.rows) throw DimensionMismatch("ids and keys differ in length");
    std::unordered_set<EntryId> batch;
    for (EntryId id : ids) {
        if (ids_.count(id) || !batch.insert(id).second) {
            throw DuplicateId("id " + std::to_string(id));
        }
    }
    const std::size_t dsub = dim_ / m_;
    std::vector<double> res(dim_);
    for (std::size_t i = 0; i < keys.rows; ++i) {
        auto x = keys.row(i);
        const std::size_t c = nearest_centroid(coarse_, x);
        for (std::size_t j = 0; j < dim_; ++j) res[j] = x[j] - coarse_.at(c, j);
        PostingList& list = lists_[c];
        list.ids.push_back(ids[i]);
        for (std::size_t m = 0; m < m_; ++m) {
            std::span<const double> part(res.data() + m * dsub, dsub);
            list.codes.push_back(static_cast<std::uint8_t>(nearest_centroid(codebooks_[m], part)));
        }
        ids_.insert(ids[i]);
    }
}

SearchResult IvfPqIndex::search(std::span<const double> query, std::size_t k) const {
    if (ids_.empty()) throw EmptyIndex("search on an empty index");
    check_dim(query.size(), dim_);
    const std::size_t C = coarse_.rows;
    std::vector<std::pair<double, std::size_t>> coarse(C);
    for (std::size_t c = 0; c < C; ++c) coarse[c] = {squared_distance(query, coarse_.row(c)), c};
    const std::size_t probes = std::min(nprobe_, C);
    std::partial_sort(coarse.begin(), coarse.begin() + static_cast<std::ptrdiff_t>(probes), coarse.end());

    const std::size_t dsub = dim_ / m_;
    std::vector<double> res(dim_);
    std::vector<double> table(m_ * kCodebookSize);
    std::vector<std::pair<double, EntryId>> cand;
    for (std::size_t p = 0; p < probes; ++p) {
        const std::size_t c = coarse[p].second;
        const PostingList& list = lists_[c];
        if (list.ids.empty()) continue;
        for (std::size_t j = 0; j < dim_; ++j) res[j] = query[j] - coarse_.at(c, j);
        for (std::size_t m = 0; m < m_; ++m) {
            std::span<const double> part(res.data() + m * dsub, dsub);
            for (std::size_t j = 0; j < kCodebookSize; ++j) {
                table[m * kCodebookSize + j] = squared_distance(part, codebooks_[m].row(j));
            }
        }
        for (std::size_t e = 0; e < list.ids.size(); ++e) {
            const std::uint8_t* code = list.codes.data() + e * m_;
            double d = 0.0;
            for (std::size_t m = 0; m < m_; ++m) d += table[m * kCodebookSize + code[m]];
            cand.emplace_back(d, list.ids[e]);
        }
    }
    return top_k(cand, k);
}

void IvfPqIndex::write(ByteWriter& w) const {
    w.u32(static_cast<std::uint32_t>(dim_));
    w.u32(static_cast<std::uint32_t>(coarse_.rows));
    w.u32(static_cast<std::uint32_t>(m_));
    w.u32(static_cast<std::uint32_t>(nprobe_));
    for (double v : coarse_.data) w.f64(v);
    for (const Matrix& cb : codebooks_) {
        for (double v : cb.data) w.f64(v);
    }
    for (const PostingList& list : lists_) {
        w.u64(list.ids.size());
        for (EntryId id : list.ids) w.u64(id);
        w.bytes(list.codes);
    }
}

IvfPqIndex IvfPqIndex::read(ByteReader& r) {
    IvfPqIndex idx;
    idx.dim_ = r.u32();
    const std::size_t C = r.u32();
    idx.m_ = r.u32();
    idx.nprobe_ = r.u32();
    if (idx.m_ == 0 || idx.dim_ % idx.m_ != 0 || C == 0) throw ShapeMismatch("index block shape");
    idx.coarse_ = Matrix(C, idx.dim_);
    for (double& v : idx.coarse_.data) v = r.f64();
    const std::size_t dsub = idx.dim_ / idx.m_;
    for (std::size_t m = 0; m < idx.m_; ++m) {
        Matrix cb(kCodebookSize, dsub);
        for (double& v : cb.data) v = r.f64();
        idx.codebooks_.push_back(std::move(cb));
    }
    idx.lists_.resize(C);
    for (PostingList& list : idx.lists_) {
        const std::uint64_t n = r.u64();
        if (n > r.remaining()) throw Truncated("posting list length");
        list.ids.resize(n);
        for (EntryId& id : list.ids) {
            id = r.u64();
            idx.ids_.insert(id);
        }
        auto codes = r.bytes(n * idx.m_);
        list.codes.assign(codes.begin(), codes.end());
    }
    idx.trained_ = true;
    return idx;
}

void add_ivfpq(IvfPqIndex& index, const Matrix& keys, std::span<const EntryId> ids) { index.add(keys, ids); }

SearchResult search_ivfpq(const IvfPqIndex& index, std::span<const double> query, std::size_t k) {
    return index.search(query, k);
}

}  // namespace sskn
