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


#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "doctest.h"
#include "sskn/vindex.hpp"

using namespace sskn;

namespace {

Matrix random_matrix(std::size_t n, std::size_t d, Rng& rng, double scale = 1.0) {
    Matrix m(n, d);
    for (double& x : m.data) x = scale * rng.normal();
    return m;
}

// Independent O(N*D) scan: full sort by (distance, id).
SearchResult scan_oracle(const Matrix& keys, std::span<const double> q, std::size_t k) {
    std::vector<std::pair<double, EntryId>> all;
    for (std::size_t i = 0; i < keys.rows; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < keys.cols; ++j) {
            const double diff = keys.at(i, j) - q[j];
            s += diff * diff;
        }
        all.emplace_back(s, i);
    }
    std::sort(all.begin(), all.end());
    SearchResult r;
    for (std::size_t i = 0; i < std::min(k, all.size()); ++i) {
        r.sq_dists.push_back(all[i].first);
        r.ids.push_back(all[i].second);
    }
    return r;
}

std::vector<EntryId> iota_ids(std::size_t n, EntryId first = 0) {
    std::vector<EntryId> ids(n);
    std::iota(ids.begin(), ids.end(), first);
    return ids;
}

double recall(const SearchResult& got, const SearchResult& truth) {
    const std::set<EntryId> t(truth.ids.begin(), truth.ids.end());
    std::size_t hit = 0;
    for (EntryId id : got.ids) hit += t.count(id);
    return truth.ids.empty() ? 1.0 : static_cast<double>(hit) / static_cast<double>(truth.ids.size());
}

}  // namespace

TEST_CASE("flat index: empty, singleton and 3-4-5 cases") {
    const FlatIndex empty = build_flat(Matrix(0, 3));
    CHECK(search_flat(empty, std::vector<double>{1, 2, 3}, 5).size() == 0);

    Matrix one(0, 2);
    one.append_row(std::vector<double>{1.0, 2.0});
    const auto r1 = search_flat(build_flat(one), std::vector<double>{4.0, 6.0}, 1);
    REQUIRE(r1.size() == 1);
    CHECK(r1.ids[0] == 0);
    CHECK(r1.sq_dists[0] == 25.0);

    Matrix tri(0, 2);
    tri.append_row(std::vector<double>{0.0, 0.0});
    tri.append_row(std::vector<double>{3.0, 4.0});
    const auto r2 = search_flat(build_flat(tri), std::vector<double>{0.0, 0.0}, 2);
    CHECK(r2.sq_dists == std::vector<double>{0.0, 25.0});
    CHECK(r2.ids == std::vector<EntryId>{0, 1});
}

TEST_CASE("flat index matches a brute-force scan") {
    Rng rng(11);
    for (std::size_t n : {100, 1000}) {
        const Matrix keys = random_matrix(n, 16, rng);
        const FlatIndex idx = build_flat(keys);
        for (int q = 0; q < 50; ++q) {
            const Matrix query = random_matrix(1, 16, rng);
            const auto got = search_flat(idx, query.row(0), 32);
            const auto want = scan_oracle(keys, query.row(0), 32);
            CHECK(got.ids == want.ids);
            CHECK(got.sq_dists == want.sq_dists);
        }
        // A stored key comes back first at distance zero.
        const auto self = search_flat(idx, keys.row(n / 2), 3);
        CHECK(self.ids[0] == n / 2);
        CHECK(self.sq_dists[0] == 0.0);
    }
}

TEST_CASE("flat index breaks distance ties by ascending id") {
    Matrix keys(0, 2);
    for (int i = 0; i < 5; ++i) keys.append_row(std::vector<double>{1.0, 1.0});
    FlatIndex idx(2);
    const std::vector<EntryId> ids{40, 10, 30, 20, 50};
    idx.add(keys, ids);
    const auto r = idx.search(std::vector<double>{0.0, 0.0}, 3);
    CHECK(r.ids == std::vector<EntryId>{10, 20, 30});
}

TEST_CASE("flat index dimension errors") {
    FlatIndex idx(3);
    CHECK_THROWS_AS(idx.add(Matrix(2, 4), iota_ids(2)), DimensionMismatch);
    CHECK_THROWS_AS(idx.search(std::vector<double>{1.0}, 1), DimensionMismatch);
}

TEST_CASE("default list count is 4 sqrt(N) rounded to a power of two") {
    CHECK(default_num_lists(0) == 1);
    CHECK(default_num_lists(1) == 4);
    CHECK(default_num_lists(100) == 32);      // 40 -> 2^5.32
    CHECK(default_num_lists(10000) == 512);   // 400 -> 2^8.64
    CHECK(default_num_lists(65536) == 1024);  // exactly 2^10
}

TEST_CASE("kmeans handles fewer distinct points than clusters") {
    Matrix data(0, 2);
    for (int i = 0; i < 50; ++i) data.append_row(std::vector<double>{static_cast<double>(i % 3), 0.0});
    Rng rng(1);
    const Matrix c = kmeans(data, 8, rng);
    CHECK(c.rows == 8);
    for (std::size_t i = 0; i < data.rows; ++i) {
        double d = -1.0;
        nearest_centroid(c, data.row(i), &d);
        CHECK(d == 0.0);
    }
}

TEST_CASE("nearest_centroid ties go to the smaller index") {
    Matrix c(0, 1);
    c.append_row(std::vector<double>{-1.0});
    c.append_row(std::vector<double>{1.0});
    CHECK(nearest_centroid(c, std::vector<double>{0.0}) == 0);
}

TEST_CASE("train_ivfpq preconditions") {
    Rng rng(2);
    CHECK_THROWS_AS(train_ivfpq(random_matrix(255, 8, rng), 4, 2, rng), InsufficientTrainingData);
    CHECK_THROWS_AS(train_ivfpq(random_matrix(300, 8, rng), 512, 2, rng), InsufficientTrainingData);
    CHECK_THROWS_AS(train_ivfpq(random_matrix(300, 8, rng), 4, 3, rng), DimensionMismatch);
    IvfPqIndex untrained;
    CHECK_THROWS_AS(untrained.add(random_matrix(1, 8, rng), iota_ids(1)), Untrained);
}

TEST_CASE("train_ivfpq degenerate C=1, M=1 and determinism") {
    Rng data_rng(3);
    const Matrix sample = random_matrix(400, 8, data_rng);
    Rng a(17), b(17);
    const IvfPqIndex ia = train_ivfpq(sample, 1, 1, a);
    const IvfPqIndex ib = train_ivfpq(sample, 1, 1, b);
    CHECK(ia.num_lists() == 1);
    CHECK(ia.num_subquantizers() == 1);
    CHECK(ia.nprobe() == 1);
    CHECK(ia.codebooks()[0].cols == 8);
    CHECK(ia.coarse_centroids().data == ib.coarse_centroids().data);
    CHECK(ia.codebooks()[0].data == ib.codebooks()[0].data);

    Rng c(17), d(17);
    const IvfPqIndex big_a = train_ivfpq(sample, 16, 4, c);
    const IvfPqIndex big_b = train_ivfpq(sample, 16, 4, d);
    CHECK(big_a.nprobe() == 2);
    CHECK(big_a.coarse_centroids().data == big_b.coarse_centroids().data);
    for (std::size_t m = 0; m < 4; ++m) CHECK(big_a.codebooks()[m].data == big_b.codebooks()[m].data);
}

TEST_CASE("coarse k-means recovers well-separated clusters") {
    const std::size_t C = 64, D = 16, per = 157;  // about 10k points
    Rng rng(4);
    Matrix means = random_matrix(C, D, rng, 20.0);
    double gap = 1e300;
    for (std::size_t i = 0; i < C; ++i) {
        for (std::size_t j = i + 1; j < C; ++j) gap = std::min(gap, std::sqrt(squared_distance(means.row(i), means.row(j))));
    }
    REQUIRE(gap > 10.0);  // noise radius is about sqrt(D) = 4
    Matrix pts(0, D);
    std::vector<std::size_t> truth;
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t p = 0; p < per; ++p) {
            std::vector<double> x(means.row(c).begin(), means.row(c).end());
            for (double& v : x) v += rng.normal();
            pts.append_row(x);
            truth.push_back(c);
        }
    }
    Rng train_rng(5);
    const IvfPqIndex idx = train_ivfpq(pts, C, 8, train_rng);
    const Matrix& cent = idx.coarse_centroids();
    std::size_t near = 0;
    for (std::size_t k = 0; k < C; ++k) {
        double best = 1e300;
        for (std::size_t c = 0; c < C; ++c) best = std::min(best, std::sqrt(squared_distance(cent.row(k), means.row(c))));
        near += best < 0.5 * gap;
    }
    CHECK(near == C);
    // Purity: each centroid's points mostly share one true cluster.
    std::vector<std::vector<std::size_t>> votes(C, std::vector<std::size_t>(C, 0));
    for (std::size_t i = 0; i < pts.rows; ++i) ++votes[nearest_centroid(cent, pts.row(i))][truth[i]];
    std::size_t majority = 0;
    for (const auto& v : votes) majority += *std::max_element(v.begin(), v.end());
    CHECK(static_cast<double>(majority) / static_cast<double>(pts.rows) >= 0.95);
}

TEST_CASE("ivfpq add and search basics") {
    Rng rng(6);
    const Matrix keys = random_matrix(600, 16, rng);
    Rng train_rng(7);
    IvfPqIndex idx = train_ivfpq(keys, 8, 4, train_rng);
    CHECK_THROWS_AS(idx.search(keys.row(0), 5), EmptyIndex);
    idx.add(Matrix(0, 16), {});
    CHECK(idx.size() == 0);

    idx.add(keys, iota_ids(keys.rows));
    CHECK(idx.size() == 600);
    CHECK_THROWS_AS(idx.add(random_matrix(1, 16, rng), std::vector<EntryId>{5}), DuplicateId);
    CHECK_THROWS_AS(idx.add(random_matrix(2, 16, rng), std::vector<EntryId>{900, 900}), DuplicateId);
    CHECK_THROWS_AS(idx.search(std::vector<double>{1.0}, 1), DimensionMismatch);

    // Every id sits in exactly one posting list, with M-byte codes.
    std::multiset<EntryId> seen;
    for (std::size_t c = 0; c < idx.num_lists(); ++c) {
        seen.insert(idx.list_ids(c).begin(), idx.list_ids(c).end());
        CHECK(idx.list_codes(c).size() == idx.list_ids(c).size() * 4);
    }
    CHECK(seen.size() == 600);
    CHECK(std::set<EntryId>(seen.begin(), seen.end()).size() == 600);

    idx.set_nprobe(idx.num_lists());
    const auto all = idx.search(keys.row(0), 10000);
    CHECK(all.size() == 600);
    CHECK(std::is_sorted(all.sq_dists.begin(), all.sq_dists.end()));

    // A fresh vector is its own nearest neighbor under exhaustive probing.
    const Matrix fresh = random_matrix(1, 16, rng);
    idx.add(fresh, std::vector<EntryId>{12345});
    CHECK(idx.search(fresh.row(0), 1).ids[0] == 12345);
}

TEST_CASE("ivfpq results do not depend on batching or insertion order") {
    Rng rng(8);
    const Matrix keys = random_matrix(800, 16, rng);
    Rng ta(9);
    const IvfPqIndex trained = train_ivfpq(keys, 8, 4, ta);

    IvfPqIndex once = trained, twice = trained, shuffled = trained;
    once.add(keys, iota_ids(800));
    Matrix first(0, 16), second(0, 16);
    for (std::size_t i = 0; i < 800; ++i) (i < 300 ? first : second).append_row(keys.row(i));
    twice.add(first, iota_ids(300));
    twice.add(second, iota_ids(500, 300));

    std::vector<std::size_t> perm(800);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Matrix pkeys(0, 16);
    std::vector<EntryId> pids;
    for (std::size_t i : perm) {
        pkeys.append_row(keys.row(i));
        pids.push_back(i);
    }
    shuffled.add(pkeys, pids);

    for (int q = 0; q < 100; ++q) {
        const Matrix query = random_matrix(1, 16, rng);
        const auto a = once.search(query.row(0), 32);
        const auto b = twice.search(query.row(0), 32);
        const auto c = shuffled.search(query.row(0), 32);
        CHECK(a.ids == b.ids);
        CHECK(a.sq_dists == b.sq_dists);
        CHECK(a.ids == c.ids);
        CHECK(a.sq_dists == c.sq_dists);
    }
}

TEST_CASE("ivfpq distances are unchanged by relabeling ids") {
    Rng rng(10);
    const Matrix keys = random_matrix(500, 8, rng);
    Rng ta(1);
    IvfPqIndex a = train_ivfpq(keys, 4, 2, ta);
    IvfPqIndex b = a;
    a.add(keys, iota_ids(500));
    std::vector<EntryId> relabeled(500);
    for (std::size_t i = 0; i < 500; ++i) relabeled[i] = 100000 - 7 * i;
    b.add(keys, relabeled);
    for (int q = 0; q < 50; ++q) {
        const Matrix query = random_matrix(1, 8, rng);
        CHECK(a.search(query.row(0), 20).sq_dists == b.search(query.row(0), 20).sq_dists);
    }
}

TEST_CASE("ivfpq is exact in the lossless quantization regime") {
    // C=1 keeps residuals on the original coordinate grid; one dimension per
    // subquantizer and <= 256 distinct values per coordinate make codes exact.
    Rng rng(12);
    const std::size_t D = 4;
    Matrix keys(0, D);
    for (int i = 0; i < 1000; ++i) {
        std::vector<double> x(D);
        for (double& v : x) v = static_cast<double>(rng.uniform_int(40)) * 0.25;
        keys.append_row(x);
    }
    Rng ta(2);
    IvfPqIndex idx = train_ivfpq(keys, 1, D, ta);
    idx.set_nprobe(1);
    idx.add(keys, iota_ids(keys.rows));
    for (int q = 0; q < 100; ++q) {
        std::vector<double> query(D);
        for (double& v : query) v = rng.uniform(0.0, 10.0);
        const auto got = idx.search(query, 16);
        const auto want = scan_oracle(keys, query, 16);
        CHECK(got.ids == want.ids);
        for (std::size_t i = 0; i < want.size(); ++i) CHECK(got.sq_dists[i] == doctest::Approx(want.sq_dists[i]).epsilon(1e-9));
    }
}

TEST_CASE("mean recall never drops as nprobe grows") {
    Rng rng(13);
    const Matrix keys = random_matrix(4000, 32, rng);
    Rng ta(3);
    IvfPqIndex idx = train_ivfpq(keys, 32, 8, ta);
    idx.add(keys, iota_ids(keys.rows));
    const FlatIndex flat = build_flat(keys);
    std::vector<Matrix> queries;
    for (int q = 0; q < 100; ++q) queries.push_back(random_matrix(1, 32, rng));
    double prev = -1.0;
    for (std::size_t nprobe : {1, 2, 4, 8, 16, 32}) {
        idx.set_nprobe(nprobe);
        double total = 0.0;
        for (const auto& q : queries) total += recall(idx.search(q.row(0), 32), flat.search(q.row(0), 32));
        const double mean = total / static_cast<double>(queries.size());
        CHECK(mean >= prev);
        prev = mean;
    }
}

TEST_CASE("ivfpq finds the nearest neighbor within its top 32 on clustered keys") {
    // 10k keys from 64 Gaussian clusters, D=64, C=64, M=8, nprobe=8. Recall@32
    // is the share of queries whose exact nearest neighbor is returned.
    Rng rng(21);
    const Matrix centers = random_matrix(64, 64, rng, 4.0);
    auto draw = [&](std::size_t n) {
        Matrix m(n, 64);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t c = rng.uniform_int(64);
            for (std::size_t j = 0; j < 64; ++j) m.at(i, j) = centers.at(c, j) + rng.normal();
        }
        return m;
    };
    const Matrix keys = draw(10000);
    const Matrix queries = draw(200);
    Rng ta(11);
    IvfPqIndex idx = train_ivfpq(keys, 64, 8, ta);
    CHECK(idx.nprobe() == 8);
    idx.add(keys, iota_ids(keys.rows));
    const FlatIndex flat = build_flat(keys);
    std::size_t found = 0;
    for (std::size_t q = 0; q < queries.rows; ++q) {
        const auto got = idx.search(queries.row(q), 32);
        const EntryId nearest = flat.search(queries.row(q), 1).ids.at(0);
        found += std::count(got.ids.begin(), got.ids.end(), nearest);
    }
    CHECK(static_cast<double>(found) / static_cast<double>(queries.rows) >= 0.95);
}

TEST_CASE("ivfpq serialization round-trips search results") {
    Rng rng(14);
    const Matrix keys = random_matrix(600, 16, rng);
    Rng ta(4);
    IvfPqIndex idx = train_ivfpq(keys, 8, 4, ta);
    idx.add(keys, iota_ids(600));
    ByteWriter w;
    idx.write(w);
    ByteReader r(w.buffer());
    const IvfPqIndex back = IvfPqIndex::read(r);
    CHECK(r.remaining() == 0);
    for (int q = 0; q < 20; ++q) {
        const Matrix query = random_matrix(1, 16, rng);
        const auto a = idx.search(query.row(0), 10);
        const auto b = back.search(query.row(0), 10);
        CHECK(a.ids == b.ids);
        CHECK(a.sq_dists == b.sq_dists);
    }
}
