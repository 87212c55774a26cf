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
#include <vector>

#include "sskn/datastore.hpp"

namespace sskn {

// Retrieval results for one decoding step, ascending distance.
struct NeighborSet {
    std::vector<TokenId> values;
    std::vector<double> sq_dists;
    std::vector<double> speaker_sims;

    std::size_t size() const { return values.size(); }
    bool empty() const { return values.empty(); }
    // The first `k` neighbors; search results for k are prefixes of those for larger k.
    NeighborSet prefix(std::size_t k) const;
};

// Top-k search plus dot-product speaker similarity against each entry.
NeighborSet gather_neighbors(const Datastore& ds, std::span<const double> query_ctx,
                             std::span<const double> query_xvec, std::size_t k);

// c_i = number of distinct values among the first i neighbors.
std::vector<std::uint32_t> distinct_counts(std::span<const TokenId> values);

// Softmax of -sq_dists / T over neighbors, computed with a max shift.
std::vector<double> neighbor_weights(std::span<const double> sq_dists, double temperature);

// p(v) proportional to the sum of exp(-d_i / T) over neighbors with value v.
TokenDistribution knn_distribution(const NeighborSet& ns, double temperature, std::size_t vocab_size);

// lambda * p_knn + (1 - lambda) * p_model.
TokenDistribution interpolate(std::span<const double> p_knn, std::span<const double> p_model, double lambda);

}  // namespace sskn
