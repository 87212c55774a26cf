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

#include "sskn/retrieval.hpp"

namespace sskn {

// Which distribution the estimated mixing weight multiplies.
enum class LambdaConvention { knn_weight, asr_weight };

// How raw squared distances become network inputs.
enum class DistanceFeatures {
    mean_normalized,  // d_i / (mean d + 1e-8)
    log_scaled,       // log(1 + d_i / reference)
};

struct SmootherOptions {
    DistanceFeatures distance_features = DistanceFeatures::mean_normalized;
    double distance_reference = 1000.0;
    LambdaConvention convention = LambdaConvention::knn_weight;
    double min_temperature = 1e-2;
    double max_temperature = 1e6;
};

// Temperature net: T = exp(W1 [d; s] + b1).
// Mixing net:      lambda = sigmoid(W3 relu(W2 [d; c] + b2) + b3).
struct SmootherParams {
    std::size_t K = 0;
    std::size_t H = 0;
    std::vector<double> W1;  // 2K
    double b1 = 0.0;
    std::vector<double> W2;  // H x 2K, row-major
    std::vector<double> b2;  // H
    std::vector<double> W3;  // H
    double b3 = 0.0;

    SmootherParams() = default;
    SmootherParams(std::size_t k, std::size_t h);

    std::size_t num_params() const { return 2 * K + 1 + H * 2 * K + H + H + 1; }
    // Fixed order W1, b1, W2, b2, W3, b3.
    std::vector<double> flat() const;
    void set_flat(std::span<const double> values);

    bool operator==(const SmootherParams& o) const { return K == o.K && H == o.H && flat() == o.flat(); }
};

// Zero weights with b1 = ln 1000 and b3 = logit 0.4.
SmootherParams constant_params(std::size_t K, std::size_t H, double temperature = 1000.0, double lambda = 0.4);
// Glorot-uniform weights, b1 = ln 1000, b3 = logit 0.4, b2 = 0.
SmootherParams init_params(std::size_t K, std::size_t H, Rng& rng);

// Padded, normalized features of width K.
struct SmootherInput {
    std::vector<double> d;
    std::vector<double> c;
    std::vector<double> s;
    std::size_t valid = 0;
};

SmootherInput make_input(const NeighborSet& ns, std::size_t K, const SmootherOptions& opts = {});

// Returns log T before clamping.
double temperature_logit(const SmootherParams& p, const SmootherInput& in);
double estimate_temperature(const SmootherParams& p, const SmootherInput& in, const SmootherOptions& opts = {});
double estimate_lambda(const SmootherParams& p, const SmootherInput& in);

struct SmoothedOutput {
    TokenDistribution dist;
    double temperature = 0.0;
    double lambda = 0.0;
    bool clamped = false;
};

SmoothedOutput smoothed_distribution(const SmootherParams& p, const NeighborSet& ns,
                                     std::span<const double> p_base, const SmootherOptions& opts = {});

struct TrainingExample {
    SmootherInput input;
    NeighborSet neighbors;
    TokenDistribution p_base;
    TokenId gold = 0;
};

TrainingExample make_example(const NeighborSet& ns, TokenDistribution p_base, TokenId gold, std::size_t K,
                             const SmootherOptions& opts = {});

struct LossResult {
    double loss = 0.0;
    std::vector<double> grads;  // flat(), same order as SmootherParams::flat
    std::size_t gold_zero = 0;  // examples whose gold probability hit the floor
    std::size_t clamped = 0;    // examples whose temperature was clamped
};

inline constexpr double kProbabilityFloor = 1e-12;

// Mean cross-entropy of the gold tokens and its exact gradient.
LossResult loss_and_gradients(const SmootherParams& p, std::span<const TrainingExample* const> batch,
                              const SmootherOptions& opts = {});
LossResult loss_and_gradients(const SmootherParams& p, const std::vector<TrainingExample>& batch,
                              const SmootherOptions& opts = {});

struct TrainConfig {
    std::size_t K = 32;
    std::size_t hidden = 32;
    double learning_rate = 3e-4;
    std::size_t batch_size = 32;
    std::size_t steps = 4000;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t seed = 0;
};

struct TrainResult {
    SmootherParams params;
    std::vector<double> loss_trace;  // one batch loss per step
    std::size_t gold_zero = 0;
    std::size_t clamped = 0;
};

// Adam on shuffled mini-batches.
TrainResult train_smoother(const TrainConfig& config, const std::vector<TrainingExample>& dataset,
                           const SmootherOptions& opts = {});

void save_params(const SmootherParams& p, const std::string& path);
std::vector<std::uint8_t> serialize_params(const SmootherParams& p);
SmootherParams deserialize_params(std::span<const std::uint8_t> bytes);
SmootherParams load_params(const std::string& path);
// Throws ShapeMismatch when the stored K differs from `expected_K`.
SmootherParams load_params(const std::string& path, std::size_t expected_K);

}  // namespace sskn
