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
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "sskn/binio.hpp"
#include "sskn/smoother.hpp"

using namespace sskn;

namespace {

constexpr double kLogit04 = -0.40546510810816438;  // ln(0.4 / 0.6)

SmootherParams random_params(std::size_t K, std::size_t H, Rng& rng, double scale) {
    SmootherParams p(K, H);
    std::vector<double> v(p.num_params());
    for (double& x : v) x = scale * rng.uniform(-1.0, 1.0);
    p.set_flat(v);
    return p;
}

SmootherInput random_input(std::size_t K, Rng& rng) {
    SmootherInput in;
    in.valid = K;
    for (std::size_t i = 0; i < K; ++i) {
        in.d.push_back(rng.uniform(0.0, 3.0));
        in.c.push_back(static_cast<double>(1 + rng.uniform_int(K)) / static_cast<double>(K));
        in.s.push_back(rng.uniform(-1.0, 1.0));
    }
    return in;
}

NeighborSet random_ns(std::size_t K, std::size_t V, Rng& rng) {
    NeighborSet ns;
    for (std::size_t i = 0; i < K; ++i) {
        ns.values.push_back(static_cast<TokenId>(1 + rng.uniform_int(V - 1)));
        ns.sq_dists.push_back(rng.uniform(100.0, 5000.0));
        ns.speaker_sims.push_back(rng.uniform(-1.0, 1.0));
    }
    std::sort(ns.sq_dists.begin(), ns.sq_dists.end());
    return ns;
}

TokenDistribution random_dist(std::size_t V, Rng& rng) {
    std::vector<double> logits(V);
    for (double& x : logits) x = 2.0 * rng.normal();
    logits[kBos] = -1e9;
    return softmax(logits);
}

// Independent re-implementations of the two estimator formulas.
double oracle_temperature(const SmootherParams& p, const SmootherInput& in) {
    double a = p.b1;
    for (std::size_t i = 0; i < p.K; ++i) a += p.W1[i] * in.d[i];
    for (std::size_t i = 0; i < p.K; ++i) a += p.W1[p.K + i] * in.s[i];
    return std::exp(a);
}

double oracle_lambda(const SmootherParams& p, const SmootherInput& in) {
    std::vector<double> x(in.d);
    x.insert(x.end(), in.c.begin(), in.c.end());
    double z = p.b3;
    for (std::size_t j = 0; j < p.H; ++j) {
        double a = p.b2[j];
        for (std::size_t i = 0; i < x.size(); ++i) a += p.W2[j * x.size() + i] * x[i];
        z += p.W3[j] * std::max(a, 0.0);
    }
    return 1.0 / (1.0 + std::exp(-z));
}

// Smallest |pre-activation| over the hidden units, scaled by the largest step a
// finite difference of size h can move it. Values <= 1 mean a ReLU kink is in reach.
double kink_margin(const SmootherParams& p, const TrainingExample& ex, double h) {
    double margin = 1e300;
    const std::size_t w = 2 * p.K;
    for (std::size_t j = 0; j < p.H; ++j) {
        double a = p.b2[j], reach = h;
        for (std::size_t i = 0; i < p.K; ++i) {
            a += p.W2[j * w + i] * ex.input.d[i] + p.W2[j * w + p.K + i] * ex.input.c[i];
            reach = std::max({reach, h * std::abs(ex.input.d[i]), h * std::abs(ex.input.c[i])});
        }
        margin = std::min(margin, std::abs(a) / reach);
    }
    return margin;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("sskn_test_" + name)).string();
}

}  // namespace

TEST_CASE("constant nets reproduce fixed temperature and weight") {
    Rng rng(1);
    const SmootherInput in = random_input(4, rng);
    SmootherParams zero(4, 3);
    CHECK(estimate_temperature(zero, in) == 1.0);
    CHECK(estimate_lambda(zero, in) == 0.5);
    const SmootherParams c = constant_params(4, 3);
    CHECK(c.b1 == std::log(1000.0));
    CHECK(std::abs(c.b3 - kLogit04) < 1e-15);
    CHECK(estimate_temperature(c, in) == doctest::Approx(1000.0).epsilon(1e-13));
    CHECK(estimate_lambda(c, in) == doctest::Approx(0.4).epsilon(1e-15));
}

TEST_CASE("estimators match a frozen hand-computed case") {
    SmootherParams p(2, 2);
    p.W1 = {0.1, -0.2, 0.3, 0.05};
    p.b1 = std::log(1000.0);
    p.W2 = {0.2, -0.1, 0.4, 0.3, -0.5, 0.2, 0.1, -0.3};
    p.b2 = {0.05, -0.02};
    p.W3 = {0.7, -1.1};
    p.b3 = kLogit04;
    SmootherInput in;
    in.d = {0.5, 1.2};
    in.s = {0.9, 0.1};
    in.c = {0.5, 1.0};
    in.valid = 2;
    // Values from a 30-digit evaluation of the formulas.
    CHECK(std::abs(estimate_temperature(p, in) - 1088.71706669839871735) < 1e-9);
    CHECK(std::abs(estimate_lambda(p, in) - 0.491384575770842105) < 1e-15);
}

TEST_CASE("estimators match an independent implementation on random cases") {
    Rng rng(2);
    for (int t = 0; t < 500; ++t) {
        const std::size_t K = 1 + rng.uniform_int(16), H = 1 + rng.uniform_int(8);
        const SmootherParams p = random_params(K, H, rng, 0.5);
        const SmootherInput in = random_input(K, rng);
        const double T = std::clamp(oracle_temperature(p, in), 1e-2, 1e6);
        CHECK(estimate_temperature(p, in) == doctest::Approx(T).epsilon(1e-12));
        CHECK(estimate_lambda(p, in) == doctest::Approx(oracle_lambda(p, in)).epsilon(1e-12));
    }
    SmootherParams p(3, 2);
    CHECK_THROWS_AS(estimate_temperature(p, random_input(4, rng)), ShapeMismatch);
    CHECK_THROWS_AS(estimate_lambda(p, random_input(2, rng)), ShapeMismatch);
}

TEST_CASE("estimator outputs stay in range") {
    Rng rng(3);
    for (int t = 0; t < 10000; ++t) {
        const std::size_t K = 1 + rng.uniform_int(8);
        const SmootherParams p = random_params(K, 4, rng, std::pow(10.0, rng.uniform(-2.0, 1.0)));
        const SmootherInput in = random_input(K, rng);
        const double T = estimate_temperature(p, in);
        const double lam = estimate_lambda(p, in);
        CHECK(T > 0.0);
        CHECK(T >= 1e-2);
        CHECK(T <= 1e6);
        CHECK(lam >= 0.0);  // sigmoid saturates in fp64
        CHECK(lam <= 1.0);
    }
}

TEST_CASE("make_input normalizes and pads") {
    NeighborSet ns;
    ns.values = {4, 4, 7};
    ns.sq_dists = {1.0, 2.0, 3.0};
    ns.speaker_sims = {0.5, -0.25, 1.0};
    SmootherOptions mean_opts;
    mean_opts.distance_features = DistanceFeatures::mean_normalized;
    const SmootherInput m = make_input(ns, 5, mean_opts);
    CHECK(m.valid == 3);
    CHECK(m.d[0] == doctest::Approx(0.5).epsilon(1e-8));
    CHECK(m.d[2] == doctest::Approx(1.5).epsilon(1e-8));
    CHECK(m.d[3] == 2.0);
    CHECK(m.d[4] == 2.0);
    CHECK(m.c == std::vector<double>{0.2, 0.2, 0.4, 0.4, 0.4});
    CHECK(m.s == std::vector<double>{0.5, -0.25, 1.0, 0.0, 0.0});

    SmootherOptions log_opts;
    log_opts.distance_features = DistanceFeatures::log_scaled;
    log_opts.distance_reference = 2.0;
    const SmootherInput l = make_input(ns, 4, log_opts);
    CHECK(l.d[0] == doctest::Approx(std::log(1.5)).epsilon(1e-15));
    CHECK(l.d[3] == doctest::Approx(std::log(3.0)).epsilon(1e-15));  // pads at twice the mean

    // More neighbors than K: only the first K are used.
    const SmootherInput cut = make_input(ns, 2, mean_opts);
    CHECK(cut.valid == 2);
    CHECK(cut.d[1] == doctest::Approx(2.0 / 1.5).epsilon(1e-8));
    CHECK_THROWS_AS(make_input(NeighborSet{}, 4), EmptyNeighbors);
}

TEST_CASE("smoothed distribution composes retrieval and interpolation") {
    Rng rng(4);
    for (int t = 0; t < 300; ++t) {
        const std::size_t K = 1 + rng.uniform_int(12), V = 20;
        const SmootherParams p = random_params(K, 5, rng, 0.3);
        const NeighborSet ns = random_ns(1 + rng.uniform_int(K), V, rng);
        const TokenDistribution pb = random_dist(V, rng);
        for (LambdaConvention conv : {LambdaConvention::knn_weight, LambdaConvention::asr_weight}) {
            SmootherOptions opts;
            opts.convention = conv;
            const SmoothedOutput out = smoothed_distribution(p, ns, pb, opts);
            const double w = conv == LambdaConvention::knn_weight ? out.lambda : 1.0 - out.lambda;
            const auto want = interpolate(knn_distribution(ns, out.temperature, V), pb, w);
            REQUIRE(out.dist.size() == V);
            for (std::size_t v = 0; v < V; ++v) CHECK(out.dist[v] == want[v]);
            CHECK(is_distribution(out.dist, 1e-9));
            CHECK(out.temperature == doctest::Approx(estimate_temperature(p, make_input(ns, K, opts), opts)));
        }
    }
}

TEST_CASE("smoothed distribution reduces to the fixed pipeline and to the base model") {
    Rng rng(5);
    for (int t = 0; t < 100; ++t) {
        const NeighborSet ns = random_ns(32, 30, rng);
        const TokenDistribution pb = random_dist(30, rng);
        const auto fixed = interpolate(knn_distribution(ns, 1000.0, 30), pb, 0.4);
        const auto out = smoothed_distribution(constant_params(32, 32), ns, pb);
        for (std::size_t v = 0; v < 30; ++v) CHECK(std::abs(out.dist[v] - fixed[v]) < 1e-12);

        SmootherParams off = constant_params(32, 32);
        off.b3 = -40.0;
        const auto base = smoothed_distribution(off, ns, pb);
        for (std::size_t v = 0; v < 30; ++v) CHECK(std::abs(base.dist[v] - pb[v]) < 1e-12);
    }
}

TEST_CASE("temperature clamp is reported") {
    Rng rng(6);
    const NeighborSet ns = random_ns(4, 10, rng);
    const TokenDistribution pb = random_dist(10, rng);
    SmootherParams hot = constant_params(4, 2);
    hot.b1 = 50.0;
    const auto out = smoothed_distribution(hot, ns, pb);
    CHECK(out.clamped);
    CHECK(out.temperature == doctest::Approx(1e6));
    SmootherParams cold = constant_params(4, 2);
    cold.b1 = -50.0;
    CHECK(smoothed_distribution(cold, ns, pb).temperature == doctest::Approx(1e-2));
}

TEST_CASE("loss is zero with zero gradient when the gold token is certain") {
    NeighborSet ns;
    ns.values = {5, 5, 5};
    ns.sq_dists = {10.0, 20.0, 30.0};
    ns.speaker_sims = {0.1, 0.2, 0.3};
    TokenDistribution pb(8, 0.0);
    pb[5] = 1.0;
    Rng rng(7);
    const SmootherParams p = random_params(4, 3, rng, 0.5);
    const std::vector<TrainingExample> batch{make_example(ns, pb, 5, 4)};
    const LossResult r = loss_and_gradients(p, batch);
    CHECK(std::abs(r.loss) < 1e-14);
    for (double g : r.grads) CHECK(std::abs(g) < 1e-13);
}

TEST_CASE("loss and gradients are invariant to duplicating the batch") {
    Rng rng(8);
    const SmootherParams p = random_params(6, 4, rng, 0.5);
    std::vector<TrainingExample> batch;
    for (int i = 0; i < 5; ++i) {
        const NeighborSet ns = random_ns(6, 12, rng);
        batch.push_back(make_example(ns, random_dist(12, rng), ns.values[0], 6));
    }
    std::vector<TrainingExample> doubled = batch;
    doubled.insert(doubled.end(), batch.begin(), batch.end());
    const LossResult a = loss_and_gradients(p, batch);
    const LossResult b = loss_and_gradients(p, doubled);
    CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-14));
    for (std::size_t i = 0; i < a.grads.size(); ++i) CHECK(a.grads[i] == doctest::Approx(b.grads[i]).epsilon(1e-12));
}

TEST_CASE("a gold token with zero probability hits the floor and is counted") {
    NeighborSet ns;
    ns.values = {3, 4};
    ns.sq_dists = {1.0, 2.0};
    ns.speaker_sims = {0.0, 0.0};
    TokenDistribution pb(6, 0.0);
    pb[3] = 1.0;
    const std::vector<TrainingExample> batch{make_example(ns, pb, 5, 2)};
    const LossResult r = loss_and_gradients(constant_params(2, 2), batch);
    CHECK(r.gold_zero == 1);
    CHECK(r.loss == doctest::Approx(-std::log(kProbabilityFloor)));
    CHECK(std::isfinite(r.loss));
    CHECK_THROWS_AS(loss_and_gradients(constant_params(2, 2), std::vector<TrainingExample>{}), EmptyDataset);
}

TEST_CASE("analytic gradients match central finite differences") {
    Rng rng(9);
    const double h = 1e-3;
    for (LambdaConvention conv : {LambdaConvention::knn_weight, LambdaConvention::asr_weight}) {
        SmootherOptions opts;
        opts.convention = conv;
        for (int b = 0; b < 10; ++b) {
            const std::size_t K = 8, H = 6, V = 15;
            SmootherParams p = init_params(K, H, rng);
            for (double& x : p.b2) x = rng.uniform(-0.5, 0.5);
            std::vector<TrainingExample> batch;
            // The loss is not differentiable at a ReLU kink; resample examples near one.
            while (batch.size() < 6) {
                const std::size_t i = batch.size();
                const NeighborSet ns = random_ns(K - i % 3, V, rng);
                const TokenId gold = rng.bernoulli(0.7) ? ns.values[rng.uniform_int(ns.size())]
                                                        : static_cast<TokenId>(1 + rng.uniform_int(V - 1));
                TrainingExample ex = make_example(ns, random_dist(V, rng), gold, K, opts);
                if (kink_margin(p, ex, h) > 10.0) batch.push_back(std::move(ex));
            }
            const LossResult r = loss_and_gradients(p, batch, opts);
            REQUIRE(r.clamped == 0);
            std::vector<double> theta = p.flat();
            for (std::size_t j = 0; j < theta.size(); ++j) {
                const double keep = theta[j];
                theta[j] = keep + h;
                p.set_flat(theta);
                const double up = loss_and_gradients(p, batch, opts).loss;
                theta[j] = keep - h;
                p.set_flat(theta);
                const double down = loss_and_gradients(p, batch, opts).loss;
                theta[j] = keep;
                p.set_flat(theta);
                const double numeric = (up - down) / (2.0 * h);
                const double scale = std::max({std::abs(numeric), std::abs(r.grads[j]), 1e-8});
                CAPTURE(j);
                CHECK(std::abs(numeric - r.grads[j]) / scale < 1e-4);
            }
        }
    }
}

TEST_CASE("training: zero steps, determinism and loss decrease") {
    Rng rng(10);
    // Neighbors that agree with the gold token at small distances and disagree
    // at large ones: the optimum moves away from the initial weights.
    std::vector<TrainingExample> data;
    for (int i = 0; i < 400; ++i) {
        NeighborSet ns = random_ns(8, 10, rng);
        const TokenId gold = static_cast<TokenId>(2 + rng.uniform_int(8));
        for (std::size_t k = 0; k < 5; ++k) ns.values[k] = gold;
        TokenDistribution pb(10, 0.02);
        pb[kBos] = 0.0;
        pb[gold == 2 ? 3 : 2] += 1.0 - 0.02 * 9;
        data.push_back(make_example(ns, pb, gold, 8));
    }
    TrainConfig cfg;
    cfg.K = 8;
    cfg.hidden = 4;
    cfg.seed = 77;
    cfg.steps = 0;
    const TrainResult none = train_smoother(cfg, data);
    Rng init_rng = Rng(77).child(0);
    CHECK(none.params == init_params(8, 4, init_rng));
    CHECK(none.loss_trace.empty());

    cfg.steps = 600;
    cfg.learning_rate = 1e-2;
    const TrainResult a = train_smoother(cfg, data);
    const TrainResult b = train_smoother(cfg, data);
    CHECK(serialize_params(a.params) == serialize_params(b.params));
    REQUIRE(a.loss_trace.size() == 600);
    double first = 0.0, last = 0.0;
    for (int i = 0; i < 100; ++i) {
        first += a.loss_trace[i];
        last += a.loss_trace[500 + i];
    }
    CHECK(last < first);
    for (double l : a.loss_trace) CHECK(std::isfinite(l));

    CHECK_THROWS_AS(train_smoother(cfg, {}), EmptyDataset);
}

TEST_CASE("params files round-trip and detect damage") {
    Rng rng(11);
    const SmootherParams p = random_params(5, 3, rng, 1.0);
    const std::string path = temp_path("params.sskp");
    save_params(p, path);
    CHECK(load_params(path) == p);
    CHECK(load_params(path, 5) == p);
    CHECK_THROWS_AS(load_params(path, 6), ShapeMismatch);

    auto bytes = read_file_bytes(path);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "SSKP");
    CHECK(bytes.size() == 4 + 4 * 3 + 8 * p.num_params() + 4);
    auto flipped = bytes;
    flipped[30] ^= 0x04;
    CHECK_THROWS_AS(deserialize_params(flipped), ChecksumMismatch);
    auto magic = bytes;
    magic[1] = 'Q';
    CHECK_THROWS_AS(deserialize_params(magic), BadMagic);
    CHECK_THROWS_AS(load_params(temp_path("missing.sskp")), IoError);
    std::remove(path.c_str());
}
