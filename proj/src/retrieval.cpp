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

#include "sskn/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace sskn {

NeighborSet NeighborSet::prefix(std::size_t k) const {
    const std::size_t n = std::min(k, size());
    NeighborSet out;
    out.values.assign(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(n));
    out.sq_dists.assign(sq_dists.begin(), sq_dists.begin() + static_cast<std::ptrdiff_t>(n));
    out.speaker_sims.assign(speaker_sims.begin(), speaker_sims.begin() + static_cast<std::ptrdiff_t>(n));
    return out;
}

NeighborSet gather_neighbors(const Datastore& ds, std::span<const double> query_ctx,
                             std::span<const double> query_xvec, std::size_t k) {
    if (k == 0) throw InvalidConfig("k must be at least 1");
    if (ds.empty()) throw EmptyDatastore("no entries to retrieve from");
    if (query_xvec.size() != ds.speaker_dim()) {
        throw DimensionMismatch("query speaker vector of dim " + std::to_string(query_xvec.size()) +
                                ", datastore dim " + std::to_string(ds.speaker_dim()));
    }
    const SearchResult res = ds.search(query_ctx, k);
    NeighborSet ns;
    ns.values.reserve(res.size());
    ns.sq_dists = res.sq_dists;
    ns.speaker_sims.reserve(res.size());
    for (EntryId id : res.ids) {
        ns.values.push_back(ds.value(id));
        ns.speaker_sims.push_back(dot(query_xvec, ds.speaker_vec(id)));
    }
    return ns;
}

std::vector<std::uint32_t> distinct_counts(std::span<const TokenId> values) {
    if (values.empty()) throw EmptyInput("distinct_counts of no neighbors");
    std::unordered_set<TokenId> seen;
    std::vector<std::uint32_t> c;
    c.reserve(values.size());
    for (TokenId v : values) {
        seen.insert(v);
        c.push_back(static_cast<std::uint32_t>(seen.size()));
    }
    return c;
}

std::vector<double> neighbor_weights(std::span<const double> sq_dists, double temperature) {
    if (sq_dists.empty()) throw EmptyNeighbors("no neighbors");
    if (!(temperature > 0.0)) throw NonPositiveTemperature("T=" + std::to_string(temperature));
    std::vector<double> logits(sq_dists.size());
    for (std::size_t i = 0; i < sq_dists.size(); ++i) logits[i] = -sq_dists[i] / temperature;
    return softmax(logits);
}

TokenDistribution knn_distribution(const NeighborSet& ns, double temperature, std::size_t vocab_size) {
    const std::vector<double> w = neighbor_weights(ns.sq_dists, temperature);
    TokenDistribution p(vocab_size, 0.0);
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (ns.values[i] >= vocab_size) throw UnknownToken("neighbor value " + std::to_string(ns.values[i]));
        p[ns.values[i]] += w[i];
    }
    return p;
}

TokenDistribution interpolate(std::span<const double> p_knn, std::span<const double> p_model, double lambda) {
    if (p_knn.size() != p_model.size()) throw DimensionMismatch("distributions over different vocabularies");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw LambdaOutOfRange("lambda=" + std::to_string(lambda));
    TokenDistribution p(p_knn.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = lambda * p_knn[i] + (1.0 - lambda) * p_model[i];
    return p;
}

}  // namespace sskn
