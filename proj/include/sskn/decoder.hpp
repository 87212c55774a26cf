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
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sskn/model.hpp"
#include "sskn/smoother.hpp"

namespace sskn {

enum class DecodeMode { base, knn_fixed, smoothed };

const char* mode_name(DecodeMode mode);
DecodeMode parse_mode(const std::string& name);

struct DecodeConfig {
    DecodeMode mode = DecodeMode::base;
    std::size_t beam = 5;
    std::size_t k = 32;
    double temperature = 1000.0;
    double lambda = 0.4;
    std::size_t max_len = 32;
    bool length_normalize = false;
    SmootherOptions smoother;
};

struct Hypothesis {
    std::vector<TokenId> tokens;  // starts with BOS
    double log_prob = 0.0;
    bool finished = false;
};

// Running totals of the dynamic parameters seen while decoding.
struct StepStats {
    std::size_t steps = 0;
    double lambda_sum = 0.0;
    double log_temperature_sum = 0.0;
    std::size_t clamped = 0;

    void merge(const StepStats& o);
};

// Everything decode_step needs besides the hypothesis. Retrieval results are
// memoized per context vector for the lifetime of the object.
class StepContext {
public:
    StepContext(const BaseModel& model, const Datastore* ds, const SmootherParams* params, const DecodeConfig& config,
                std::size_t utterance, std::span<const double> query_xvec);

    TokenDistribution distribution(std::span<const TokenId> prefix);
    const StepStats& stats() const { return stats_; }
    const DecodeConfig& config() const { return config_; }

private:
    const NeighborSet& neighbors(const Embedding& context);

    const BaseModel& model_;
    const Datastore* ds_;
    const SmootherParams* params_;
    const DecodeConfig& config_;
    std::size_t utterance_;
    std::vector<double> xvec_;
    std::map<std::vector<double>, NeighborSet> cache_;
    StepStats stats_;
};

TokenDistribution decode_step(const BaseModel& model, const Datastore* ds, const SmootherParams* params,
                              const DecodeConfig& config, std::size_t utterance, const Hypothesis& hyp,
                              std::span<const double> query_xvec);

struct DecodeResult {
    std::uint32_t utterance_id = 0;
    std::vector<TokenId> tokens;  // without BOS and EOS
    double score = 0.0;
    bool finished = false;
    StepStats stats;
    std::string error;  // set when decoding this utterance failed
};

DecodeResult decode_beam(const BaseModel& model, const Datastore* ds, const SmootherParams* params,
                         const DecodeConfig& config, std::size_t utterance, std::span<const double> query_xvec);

struct DecodeRequest {
    std::size_t utterance = 0;
    std::uint32_t utterance_id = 0;
    SpeakerVector xvec;
};

struct CorpusReport {
    std::vector<DecodeResult> results;  // in request order
    double seconds = 0.0;
    std::size_t tokens = 0;  // emitted tokens including EOS
    StepStats stats;
    std::size_t failures = 0;
};

CorpusReport decode_corpus(const BaseModel& model, const Datastore* ds, const SmootherParams* params,
                           const DecodeConfig& config, const std::vector<DecodeRequest>& requests, int threads = 1);

// "utterance_id \t mode \t score \t tokens"
std::string format_transcript(const DecodeResult& r, DecodeMode mode, const Vocab& vocab);

}  // namespace sskn
