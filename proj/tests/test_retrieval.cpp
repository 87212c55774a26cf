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
#include <set>

#include "doctest.h"
#include "sskn/retrieval.hpp"

using namespace sskn;

namespace {

NeighborSet make_ns(std::vector<TokenId> values, std::vector<double> d) {
    NeighborSet ns;
    ns.values = std::move(values);
    ns.sq_dists = std::move(d);
    ns.speaker_sims.assign(ns.values.size(), 0.0);
    return ns;
}

NeighborSet random_ns(Rng& rng, std::size_t V, double max_d) {
    const std::size_t K = 1 + rng.uniform_int(64);
    NeighborSet ns;
    for (std::size_t i = 0; i < K; ++i) {
        ns.values.push_back(static_cast<TokenId>(1 + rng.uniform_int(V - 1)));
        ns.sq_dists.push_back(rng.uniform(0.0, max_d));
        ns.speaker_sims.push_back(rng.uniform(-1.0, 1.0));
    }
    std::sort(ns.sq_dists.begin(), ns.sq_dists.end());
    return ns;
}

Datastore random_store(std::size_t n, Rng& rng) {
    Datastore ds(Vocab::synthetic(12), 8, 3);
    std::vector<DatastoreEntry> entries;
    for (std::size_t i = 0; i < n; ++i) {
        DatastoreEntry e;
        e.key.resize(8);
        for (double& x : e.key) x = 5.0 * rng.normal();
        e.value = static_cast<TokenId>(1 + rng.uniform_int(11));
        e.speaker_vec = {rng.normal(), rng.normal(), rng.normal()};
        entries.push_back(e);
    }
    ds.push_entries(entries);
    ds.build_index();
    return ds;
}

}  // namespace

TEST_CASE("gather_neighbors matches a brute-force scan of the stored keys") {
    Rng rng(1);
    const Datastore ds = random_store(1000, rng);
    for (int q = 0; q < 50; ++q) {
        std::vector<double> query(8), xvec{rng.normal(), rng.normal(), rng.normal()};
        for (double& x : query) x = 5.0 * rng.normal();
        const NeighborSet ns = gather_neighbors(ds, query, xvec, 16);

        std::vector<std::pair<double, std::size_t>> all;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < 8; ++j) s += (ds.key(i)[j] - query[j]) * (ds.key(i)[j] - query[j]);
            all.emplace_back(s, i);
        }
        std::sort(all.begin(), all.end());
        REQUIRE(ns.size() == 16);
        for (std::size_t r = 0; r < 16; ++r) {
            const std::size_t id = all[r].second;
            CHECK(ns.sq_dists[r] == all[r].first);
            CHECK(ns.values[r] == ds.value(id));
            double sim = 0.0;
            for (std::size_t j = 0; j < 3; ++j) sim += xvec[j] * ds.speaker_vec(id)[j];
            CHECK(ns.speaker_sims[r] == doctest::Approx(sim).epsilon(1e-14));
        }
    }
}

TEST_CASE("gather_neighbors trivial cases and errors") {
    Rng rng(2);
    const Datastore ds = random_store(50, rng);
    const std::vector<double> zeros(3, 0.0);
    const NeighborSet ns = gather_neighbors(ds, ds.key(7), zeros, 5);
    CHECK(ns.sq_dists[0] == 0.0);
    for (double s : ns.speaker_sims) CHECK(s == 0.0);
    CHECK(gather_neighbors(ds, ds.key(0), zeros, 500).size() == 50);

    const NeighborSet big = gather_neighbors(ds, ds.key(3), zeros, 20);
    const NeighborSet small = big.prefix(5);
    CHECK(small.size() == 5);
    CHECK(std::equal(small.values.begin(), small.values.end(), big.values.begin()));

    Datastore empty(Vocab::synthetic(12), 8, 3);
    empty.build_index();
    CHECK_THROWS_AS(gather_neighbors(empty, ds.key(0), zeros, 4), EmptyDatastore);
    CHECK_THROWS_AS(gather_neighbors(ds, ds.key(0), std::vector<double>(2, 0.0), 4), DimensionMismatch);
}

TEST_CASE("distinct_counts examples and invariants") {
    CHECK(distinct_counts(std::vector<TokenId>{5, 5, 5}) == std::vector<std::uint32_t>{1, 1, 1});
    CHECK(distinct_counts(std::vector<TokenId>{5, 6, 7}) == std::vector<std::uint32_t>{1, 2, 3});
    CHECK(distinct_counts(std::vector<TokenId>{5, 5, 6, 5, 7}) == std::vector<std::uint32_t>{1, 1, 2, 2, 3});
    CHECK_THROWS_AS(distinct_counts(std::vector<TokenId>{}), EmptyInput);

    Rng rng(3);
    for (int t = 0; t < 500; ++t) {
        const std::size_t V = 2 + rng.uniform_int(10);
        std::vector<TokenId> v(1 + rng.uniform_int(40));
        for (auto& x : v) x = static_cast<TokenId>(rng.uniform_int(V));
        const auto c = distinct_counts(v);
        CHECK(c[0] == 1);
        for (std::size_t i = 1; i < c.size(); ++i) CHECK((c[i] - c[i - 1] == 0 || c[i] - c[i - 1] == 1));
        CHECK(c.back() <= std::min<std::size_t>(v.size(), V));
        CHECK(c.back() == std::set<TokenId>(v.begin(), v.end()).size());
    }
}

TEST_CASE("knn_distribution examples") {
    const auto one = knn_distribution(make_ns({3}, {42.0}), 1000.0, 5);
    CHECK(one == std::vector<double>{0, 0, 0, 1, 0});

    const auto sym = knn_distribution(make_ns({2, 3}, {7.0, 7.0}), 1.0, 4);
    CHECK(sym[2] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(sym[3] == doctest::Approx(0.5).epsilon(1e-15));

    // e^-1 / (e^-1 + e^-2) and its complement, to 16 digits.
    const auto p = knn_distribution(make_ns({2, 3}, {1.0, 2.0}), 1.0, 4);
    CHECK(std::abs(p[2] - 0.7310585786300049) < 1e-15);
    CHECK(std::abs(p[3] - 0.2689414213699951) < 1e-15);
    CHECK(p[0] == 0.0);
    CHECK(p[1] == 0.0);

    CHECK_THROWS_AS(knn_distribution(make_ns({}, {}), 1.0, 4), EmptyNeighbors);
    CHECK_THROWS_AS(knn_distribution(make_ns({2}, {1.0}), 0.0, 4), NonPositiveTemperature);
    CHECK_THROWS_AS(knn_distribution(make_ns({2}, {1.0}), -3.0, 4), NonPositiveTemperature);
}

TEST_CASE("knn_distribution stays normalized for large distances") {
    Rng rng(4);
    for (int t = 0; t < 1000; ++t) {
        const NeighborSet ns = random_ns(rng, 30, t % 2 ? 1e6 : 1e3);
        const auto p = knn_distribution(ns, 1000.0, 30);
        CHECK(is_distribution(p, 1e-9));
        for (std::size_t v = 0; v < 30; ++v) {
            if (std::find(ns.values.begin(), ns.values.end(), v) == ns.values.end()) CHECK(p[v] == 0.0);
        }
    }
}

TEST_CASE("temperature limits") {
    Rng rng(5);
    for (int t = 0; t < 200; ++t) {
        const NeighborSet ns = random_ns(rng, 10, 1e3);
        // T -> infinity: value frequencies among neighbors.
        const auto hot = knn_distribution(ns, 1e9, 10);
        for (TokenId v = 0; v < 10; ++v) {
            const double freq = static_cast<double>(std::count(ns.values.begin(), ns.values.end(), v)) /
                                static_cast<double>(ns.size());
            CHECK(std::abs(hot[v] - freq) < 1e-6);
        }
        // T -> 0+: point mass on the nearest value when the minimum is unique.
        if (ns.size() > 1 && ns.sq_dists[1] - ns.sq_dists[0] < 1e-3) continue;
        const auto cold = knn_distribution(ns, 1e-6, 10);
        CHECK(cold[ns.values[0]] == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("interpolate examples and normalization") {
    const std::vector<double> pk{1.0, 0.0}, pm{0.5, 0.5};
    const auto mix = interpolate(pk, pm, 0.4);
    CHECK(mix[0] == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(mix[1] == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(interpolate(pk, pm, 0.0) == pm);
    CHECK(interpolate(pk, pm, 1.0) == pk);
    CHECK_THROWS_AS(interpolate(pk, std::vector<double>{1.0}, 0.5), DimensionMismatch);
    CHECK_THROWS_AS(interpolate(pk, pm, 1.5), LambdaOutOfRange);
    CHECK_THROWS_AS(interpolate(pk, pm, -0.1), LambdaOutOfRange);
    CHECK_THROWS_AS(interpolate(pk, pm, std::nan("")), LambdaOutOfRange);

    Rng rng(6);
    for (int t = 0; t < 1000; ++t) {
        std::vector<double> a(20), b(20);
        for (double& x : a) x = rng.uniform(-5, 5);
        for (double& x : b) x = rng.uniform(-5, 5);
        const auto p = interpolate(softmax(a), softmax(b), rng.uniform());
        double s = 0.0;
        for (double x : p) s += x;
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
}
