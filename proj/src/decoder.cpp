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

#include "sskn/decoder.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>

namespace sskn {

const char* mode_name(DecodeMode mode) {
    switch (mode) {
        case DecodeMode::base: return "base";
        case DecodeMode::knn_fixed: return "knn_fixed";
        case DecodeMode::smoothed: return "smoothed";
    }
    return "?";
}

DecodeMode parse_mode(const std::string& name) {
    if (name == "base") return DecodeMode::base;
    if (name == "knn_fixed") return DecodeMode::knn_fixed;
    if (name == "smoothed") return DecodeMode::smoothed;
    throw InvalidConfig("unknown mode '" + name + "'");
}

void StepStats::merge(const StepStats& o) {
    steps += o.steps;
    lambda_sum += o.lambda_sum;
    log_temperature_sum += o.log_temperature_sum;
    clamped += o.clamped;
}

// ============================================================================
// Single step
// ============================================================================

StepContext::StepContext(const BaseModel& model, const Datastore* ds, const SmootherParams* params,
                         const DecodeConfig& config, std::size_t utterance, std::span<const double> query_xvec)
    : model_(model), ds_(ds), params_(params), config_(config), utterance_(utterance),
      xvec_(query_xvec.begin(), query_xvec.end()) {
    if (config.mode != DecodeMode::base && (ds == nullptr || ds->empty())) {
        throw EmptyDatastore(std::string("mode ") + mode_name(config.mode) + " needs a datastore");
    }
    if (config.mode == DecodeMode::smoothed && params == nullptr) {
        throw MissingParams("smoothed mode needs smoother parameters");
    }
    if (config.mode == DecodeMode::smoothed && params->K != config.k) {
        throw ShapeMismatch("params trained for K=" + std::to_string(params->K) + ", decoding with k=" +
                            std::to_string(config.k));
    }
}

const NeighborSet& StepContext::neighbors(const Embedding& context) {
    auto it = cache_.find(context);
    if (it != cache_.end()) return it->second;
    return cache_.emplace(context, gather_neighbors(*ds_, context, xvec_, config_.k)).first->second;
}

TokenDistribution StepContext::distribution(std::span<const TokenId> prefix) {
    StepOutput out = model_.step(utterance_, prefix);
    switch (config_.mode) {
        case DecodeMode::base:
            return std::move(out.p_base);
        case DecodeMode::knn_fixed: {
            const NeighborSet& ns = neighbors(out.context);
            ++stats_.steps;
            stats_.lambda_sum += config_.lambda;
            stats_.log_temperature_sum += std::log(config_.temperature);
            return interpolate(knn_distribution(ns, config_.temperature, out.p_base.size()), out.p_base,
                               config_.lambda);
        }
        case DecodeMode::smoothed: {
            const NeighborSet& ns = neighbors(out.context);
            SmoothedOutput s = smoothed_distribution(*params_, ns, out.p_base, config_.smoother);
            ++stats_.steps;
            stats_.lambda_sum += s.lambda;
            stats_.log_temperature_sum += std::log(s.temperature);
            if (s.clamped) ++stats_.clamped;
            return std::move(s.dist);
        }
    }
    throw InvalidConfig("unknown decode mode");
}

TokenDistribution decode_step(const BaseModel& model, const Datastore* ds, const SmootherParams* params,
                              const DecodeConfig& config, std::size_t utterance, const Hypothesis& hyp,
                              std::span<const double> query_xvec) {
    if (hyp.finished) throw InvalidConfig("decode_step on a finished hypothesis");
    StepContext ctx(model, ds, params, config, utterance, query_xvec);
    return ctx.distribution(hyp.tokens);
}

// ============================================================================
// Beam search
// ============================================================================

namespace {

double ranking_score(const Hypothesis& h, bool length_normalize) {
    if (!length_normalize) return h.log_prob;
    return h.log_prob / static_cast<double>(std::max<std::size_t>(1, h.tokens.size() - 1));
}

// Higher score first, then lexicographically smaller token ids.
bool better(const Hypothesis& a, const Hypothesis& b, bool length_normalize) {
    const double sa = ranking_score(a, length_normalize);
    const double sb = ranking_score(b, length_normalize);
    if (sa != sb) return sa > sb;
    return a.tokens < b.tokens;
}

}  // namespace

DecodeResult decode_beam(const BaseModel& model, const Datastore* ds, const SmootherParams* params,
                         const DecodeConfig& config, std::size_t utterance, std::span<const double> query_xvec) {
    if (config.max_len == 0) throw InvalidConfig("max_len must be at least 1");
    if (config.beam == 0) throw InvalidConfig("beam must be at least 1");
    StepContext ctx(model, ds, params, config, utterance, query_xvec);
    const bool norm = config.length_normalize;

    std::vector<Hypothesis> active{Hypothesis{{kBos}, 0.0, false}};
    std::vector<Hypothesis> finished;
    for (std::size_t step = 0; step < config.max_len && !active.empty(); ++step) {
        std::vector<Hypothesis> cand;
        for (const Hypothesis& h : active) {
            const TokenDistribution p = ctx.distribution(h.tokens);
            for (std::size_t v = 0; v < p.size(); ++v) {
                if (v == kBos || !(p[v] > 0.0)) continue;
                Hypothesis next{h.tokens, h.log_prob + std::log(p[v]), v == kEos};
                next.tokens.push_back(static_cast<TokenId>(v));
                cand.push_back(std::move(next));
            }
        }
        // Beam selection always uses raw log-probabilities.
        const std::size_t keep = std::min(config.beam, cand.size());
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(),
                          [](const Hypothesis& a, const Hypothesis& b) { return better(a, b, false); });
        active.clear();
        for (std::size_t i = 0; i < keep; ++i) {
            (cand[i].finished ? finished : active).push_back(std::move(cand[i]));
        }
        if (!finished.empty() && !active.empty() && !norm) {
            const auto best_fin = std::min_element(finished.begin(), finished.end(),
                                                   [](const Hypothesis& a, const Hypothesis& b) { return better(a, b, false); });
            // Scores only decrease as hypotheses grow.
            if (best_fin->log_prob >= active.front().log_prob) break;
        }
    }

    const std::vector<Hypothesis>& pool = finished.empty() ? active : finished;
    DecodeResult r;
    r.stats = ctx.stats();
    if (pool.empty()) return r;
    const Hypothesis& best = *std::min_element(pool.begin(), pool.end(),
                                               [norm](const Hypothesis& a, const Hypothesis& b) { return better(a, b, norm); });
    r.score = best.log_prob;
    r.finished = best.finished;
    r.tokens.assign(best.tokens.begin() + 1, best.tokens.end());
    if (!r.tokens.empty() && r.tokens.back() == kEos) r.tokens.pop_back();
    return r;
}

CorpusReport decode_corpus(const BaseModel& model, const Datastore* ds, const SmootherParams* params,
                           const DecodeConfig& config, const std::vector<DecodeRequest>& requests, int threads) {
    CorpusReport rep;
    rep.results.resize(requests.size());
    const auto t0 = std::chrono::steady_clock::now();
    parallel_for(requests.size(), threads, [&](std::size_t i) {
        DecodeResult& r = rep.results[i];
        try {
            r = decode_beam(model, ds, params, config, requests[i].utterance, requests[i].xvec);
        } catch (const std::exception& e) {
            r = DecodeResult{};
            r.error = e.what();
        }
        r.utterance_id = requests[i].utterance_id;
    });
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (const DecodeResult& r : rep.results) {
        if (!r.error.empty()) {
            ++rep.failures;
            continue;
        }
        rep.tokens += r.tokens.size() + (r.finished ? 1 : 0);
        rep.stats.merge(r.stats);
    }
    return rep;
}

std::string format_transcript(const DecodeResult& r, DecodeMode mode, const Vocab& vocab) {
    char score[64];
    std::snprintf(score, sizeof(score), "%.6f", r.score);
    std::string line = std::to_string(r.utterance_id) + "\t" + mode_name(mode) + "\t" + score + "\t";
    for (std::size_t i = 0; i < r.tokens.size(); ++i) {
        if (i) line += ' ';
        line += vocab.token(r.tokens[i]);
    }
    return line;
}

}  // namespace sskn
