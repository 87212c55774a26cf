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

#include "sskn/smoother.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sskn {

namespace {

constexpr std::uint32_t kParamsVersion = 1;

double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

void check_shape(const SmootherParams& p, const SmootherInput& in) {
    if (in.d.size() != p.K || in.c.size() != p.K || in.s.size() != p.K) {
        throw ShapeMismatch("input width " + std::to_string(in.d.size()) + ", params K=" + std::to_string(p.K));
    }
    if (p.W1.size() != 2 * p.K || p.W2.size() != p.H * 2 * p.K || p.b2.size() != p.H || p.W3.size() != p.H) {
        throw ShapeMismatch("inconsistent parameter tensors");
    }
}

struct Forward {
    double log_t = 0.0;  // clamped
    bool clamped = false;
    double temperature = 0.0;
    std::vector<double> pre;     // W2 x2 + b2
    std::vector<double> hidden;  // relu(pre)
    double lambda = 0.0;
};

Forward forward(const SmootherParams& p, const SmootherInput& in, const SmootherOptions& opts) {
    check_shape(p, in);
    Forward f;
    const double raw = temperature_logit(p, in);
    const double lo = std::log(opts.min_temperature);
    const double hi = std::log(opts.max_temperature);
    f.clamped = raw < lo || raw > hi;
    f.log_t = std::clamp(raw, lo, hi);
    f.temperature = std::exp(f.log_t);

    const std::size_t K = p.K;
    f.pre.assign(p.H, 0.0);
    f.hidden.assign(p.H, 0.0);
    double z = p.b3;
    for (std::size_t j = 0; j < p.H; ++j) {
        const double* w = p.W2.data() + j * 2 * K;
        double a = p.b2[j];
        for (std::size_t i = 0; i < K; ++i) a += w[i] * in.d[i] + w[K + i] * in.c[i];
        f.pre[j] = a;
        f.hidden[j] = a > 0.0 ? a : 0.0;
        z += p.W3[j] * f.hidden[j];
    }
    f.lambda = sigmoid(z);
    return f;
}

// Weight on the retrieval distribution under the given convention.
double knn_weight(double lambda, LambdaConvention conv) {
    return conv == LambdaConvention::knn_weight ? lambda : 1.0 - lambda;
}

}  // namespace

// ============================================================================
// Parameters
// ============================================================================

SmootherParams::SmootherParams(std::size_t k, std::size_t h)
    : K(k), H(h), W1(2 * k, 0.0), W2(h * 2 * k, 0.0), b2(h, 0.0), W3(h, 0.0) {
    if (k == 0 || h == 0) throw ShapeMismatch("K and H must be positive");
}

std::vector<double> SmootherParams::flat() const {
    std::vector<double> v;
    v.reserve(num_params());
    v.insert(v.end(), W1.begin(), W1.end());
    v.push_back(b1);
    v.insert(v.end(), W2.begin(), W2.end());
    v.insert(v.end(), b2.begin(), b2.end());
    v.insert(v.end(), W3.begin(), W3.end());
    v.push_back(b3);
    return v;
}

void SmootherParams::set_flat(std::span<const double> v) {
    if (v.size() != num_params()) throw ShapeMismatch("flat parameter vector of wrong length");
    auto it = v.begin();
    auto take = [&](std::vector<double>& dst) {
        std::copy(it, it + static_cast<std::ptrdiff_t>(dst.size()), dst.begin());
        it += static_cast<std::ptrdiff_t>(dst.size());
    };
    take(W1);
    b1 = *it++;
    take(W2);
    take(b2);
    take(W3);
    b3 = *it++;
}

SmootherParams constant_params(std::size_t K, std::size_t H, double temperature, double lambda) {
    SmootherParams p(K, H);
    p.b1 = std::log(temperature);
    p.b3 = std::log(lambda / (1.0 - lambda));
    return p;
}

SmootherParams init_params(std::size_t K, std::size_t H, Rng& rng) {
    SmootherParams p = constant_params(K, H);
    auto glorot = [&](std::vector<double>& w, std::size_t fan_in, std::size_t fan_out) {
        const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (double& x : w) x = rng.uniform(-a, a);
    };
    glorot(p.W1, 2 * K, 1);
    glorot(p.W2, 2 * K, H);
    glorot(p.W3, H, 1);
    return p;
}

// ============================================================================
// Features and estimators
// ============================================================================

SmootherInput make_input(const NeighborSet& ns, std::size_t K, const SmootherOptions& opts) {
    if (ns.empty()) throw EmptyNeighbors("no neighbors to featurize");
    if (K == 0) throw ShapeMismatch("K must be positive");
    SmootherInput in;
    in.valid = std::min(K, ns.size());
    const double mean =
        std::accumulate(ns.sq_dists.begin(), ns.sq_dists.begin() + static_cast<std::ptrdiff_t>(in.valid), 0.0) /
        static_cast<double>(in.valid);
    auto scale = [&](double d) {
        return opts.distance_features == DistanceFeatures::mean_normalized
                   ? d / (mean + 1e-8)
                   : std::log1p(d / opts.distance_reference);
    };
    const double pad_d = opts.distance_features == DistanceFeatures::mean_normalized ? 2.0 : scale(2.0 * mean);
    const auto counts = distinct_counts(std::span<const TokenId>(ns.values.data(), in.valid));
    in.d.resize(K);
    in.c.resize(K);
    in.s.resize(K);
    for (std::size_t i = 0; i < K; ++i) {
        if (i < in.valid) {
            in.d[i] = scale(ns.sq_dists[i]);
            in.c[i] = static_cast<double>(counts[i]) / static_cast<double>(K);
            in.s[i] = ns.speaker_sims[i];
        } else {
            in.d[i] = pad_d;
            in.c[i] = in.c[in.valid - 1];
            in.s[i] = 0.0;
        }
    }
    return in;
}

double temperature_logit(const SmootherParams& p, const SmootherInput& in) {
    check_shape(p, in);
    double t = p.b1;
    for (std::size_t i = 0; i < p.K; ++i) t += p.W1[i] * in.d[i] + p.W1[p.K + i] * in.s[i];
    return t;
}

double estimate_temperature(const SmootherParams& p, const SmootherInput& in, const SmootherOptions& opts) {
    return forward(p, in, opts).temperature;
}

double estimate_lambda(const SmootherParams& p, const SmootherInput& in) {
    return forward(p, in, SmootherOptions{}).lambda;
}

SmoothedOutput smoothed_distribution(const SmootherParams& p, const NeighborSet& ns,
                                     std::span<const double> p_base, const SmootherOptions& opts) {
    const SmootherInput in = make_input(ns, p.K, opts);
    const Forward f = forward(p, in, opts);
    const NeighborSet used = ns.size() > p.K ? ns.prefix(p.K) : ns;
    const TokenDistribution p_knn = knn_distribution(used, f.temperature, p_base.size());
    SmoothedOutput out;
    out.dist = interpolate(p_knn, p_base, knn_weight(f.lambda, opts.convention));
    out.temperature = f.temperature;
    out.lambda = f.lambda;
    out.clamped = f.clamped;
    return out;
}

// ============================================================================
// Loss and gradients
// ============================================================================

TrainingExample make_example(const NeighborSet& ns, TokenDistribution p_base, TokenId gold, std::size_t K,
                             const SmootherOptions& opts) {
    if (gold >= p_base.size()) throw UnknownToken("gold id " + std::to_string(gold));
    TrainingExample ex;
    ex.input = make_input(ns, K, opts);
    ex.neighbors = ns.size() > K ? ns.prefix(K) : ns;
    ex.p_base = std::move(p_base);
    ex.gold = gold;
    return ex;
}

LossResult loss_and_gradients(const SmootherParams& p, std::span<const TrainingExample* const> batch,
                              const SmootherOptions& opts) {
    if (batch.empty()) throw EmptyDataset("empty batch");
    const std::size_t K = p.K;
    const std::size_t H = p.H;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    LossResult res;
    res.grads.assign(p.num_params(), 0.0);
    double* gW1 = res.grads.data();
    double* gb1 = gW1 + 2 * K;
    double* gW2 = gb1 + 1;
    double* gb2 = gW2 + H * 2 * K;
    double* gW3 = gb2 + H;
    double* gb3 = gW3 + H;

    for (const TrainingExample* ex : batch) {
        if (ex->gold >= ex->p_base.size()) throw UnknownToken("gold id " + std::to_string(ex->gold));
        const SmootherInput& in = ex->input;
        const Forward f = forward(p, in, opts);
        if (f.clamped) ++res.clamped;
        const std::vector<double> w = neighbor_weights(ex->neighbors.sq_dists, f.temperature);
        double pk = 0.0, wd = 0.0, wmd = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double d = ex->neighbors.sq_dists[i];
            wd += w[i] * d;
            if (ex->neighbors.values[i] == ex->gold) {
                pk += w[i];
                wmd += w[i] * d;
            }
        }
        const double pb = ex->p_base[ex->gold];
        const double mix = knn_weight(f.lambda, opts.convention);
        const double pg = mix * pk + (1.0 - mix) * pb;
        if (!(pg >= kProbabilityFloor)) {
            ++res.gold_zero;
            res.loss -= std::log(kProbabilityFloor) * inv_b;
            continue;  // the floor is constant, so no gradient flows
        }
        res.loss -= std::log(pg) * inv_b;
        const double dpg = -inv_b / pg;

        // Mixing net
        const double dmix = dpg * (pk - pb);
        const double dlambda = opts.convention == LambdaConvention::knn_weight ? dmix : -dmix;
        const double dz = dlambda * f.lambda * (1.0 - f.lambda);
        *gb3 += dz;
        for (std::size_t j = 0; j < H; ++j) {
            gW3[j] += dz * f.hidden[j];
            if (f.pre[j] <= 0.0) continue;
            const double da = dz * p.W3[j];
            gb2[j] += da;
            double* row = gW2 + j * 2 * K;
            for (std::size_t i = 0; i < K; ++i) {
                row[i] += da * in.d[i];
                row[K + i] += da * in.c[i];
            }
        }

        // Temperature net, through the retrieval softmax
        if (f.clamped) continue;
        const double dpk = dpg * mix;
        const double t = f.temperature;
        const double dpk_dt = (wmd - pk * wd) / (t * t);
        const double dlog_t = dpk * dpk_dt * t;
        *gb1 += dlog_t;
        for (std::size_t i = 0; i < K; ++i) {
            gW1[i] += dlog_t * in.d[i];
            gW1[K + i] += dlog_t * in.s[i];
        }
    }
    return res;
}

LossResult loss_and_gradients(const SmootherParams& p, const std::vector<TrainingExample>& batch,
                              const SmootherOptions& opts) {
    std::vector<const TrainingExample*> ptrs;
    ptrs.reserve(batch.size());
    for (const auto& ex : batch) ptrs.push_back(&ex);
    return loss_and_gradients(p, ptrs, opts);
}

// ============================================================================
// Training
// ============================================================================

TrainResult train_smoother(const TrainConfig& config, const std::vector<TrainingExample>& dataset,
                           const SmootherOptions& opts) {
    if (dataset.empty()) throw EmptyDataset("no training examples");
    if (config.batch_size == 0 || config.hidden == 0 || config.K == 0 || !(config.learning_rate > 0.0)) {
        throw InvalidConfig("training hyperparameters must be positive");
    }
    Rng rng(config.seed);
    Rng init_rng = rng.child(0);
    Rng order_rng = rng.child(1);
    TrainResult out;
    out.params = init_params(config.K, config.hidden, init_rng);
    std::vector<double> theta = out.params.flat();
    std::vector<double> m(theta.size(), 0.0), v(theta.size(), 0.0);

    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();
    std::vector<const TrainingExample*> batch(config.batch_size);
    double b1t = 1.0, b2t = 1.0;
    for (std::size_t step = 0; step < config.steps; ++step) {
        for (auto& slot : batch) {
            if (cursor == order.size()) {
                order_rng.shuffle(order);
                cursor = 0;
            }
            slot = &dataset[order[cursor++]];
        }
        const LossResult lr = loss_and_gradients(out.params, batch, opts);
        out.loss_trace.push_back(lr.loss);
        out.gold_zero += lr.gold_zero;
        out.clamped += lr.clamped;
        b1t *= config.beta1;
        b2t *= config.beta2;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double g = lr.grads[i];
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
            const double mhat = m[i] / (1.0 - b1t);
            const double vhat = v[i] / (1.0 - b2t);
            theta[i] -= config.learning_rate * mhat / (std::sqrt(vhat) + config.epsilon);
        }
        out.params.set_flat(theta);
    }
    return out;
}

// ============================================================================
// Persistence
// ============================================================================

std::vector<std::uint8_t> serialize_params(const SmootherParams& p) {
    ByteWriter w;
    w.magic("SSKP");
    w.u32(kParamsVersion);
    w.u32(static_cast<std::uint32_t>(p.K));
    w.u32(static_cast<std::uint32_t>(p.H));
    for (double x : p.flat()) w.f64(x);
    w.seal();
    return w.buffer();
}

SmootherParams deserialize_params(std::span<const std::uint8_t> bytes) {
    ByteReader head(bytes);
    head.expect_magic("SSKP");
    auto payload = verify_sealed(bytes);
    ByteReader r(payload);
    r.bytes(4);
    const std::uint32_t version = r.u32();
    if (version != kParamsVersion) throw VersionMismatch("params version " + std::to_string(version));
    const std::size_t K = r.u32();
    const std::size_t H = r.u32();
    if (K == 0 || H == 0 || K > (1u << 16) || H > (1u << 16)) throw ShapeMismatch("params header");
    SmootherParams p(K, H);
    std::vector<double> flat(p.num_params());
    for (double& x : flat) x = r.f64();
    if (r.remaining() != 0) throw ShapeMismatch("params payload length does not match K and H");
    p.set_flat(flat);
    return p;
}

void save_params(const SmootherParams& p, const std::string& path) {
    write_file_bytes(path, serialize_params(p));
}

SmootherParams load_params(const std::string& path) { return deserialize_params(read_file_bytes(path)); }

SmootherParams load_params(const std::string& path, std::size_t expected_K) {
    SmootherParams p = load_params(path);
    if (p.K != expected_K) {
        throw ShapeMismatch("params trained for K=" + std::to_string(p.K) + ", expected K=" +
                            std::to_string(expected_K));
    }
    return p;
}

}  // namespace sskn
