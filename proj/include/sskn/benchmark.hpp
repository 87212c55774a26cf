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
#include <string>
#include <vector>

#include "sskn/decoder.hpp"
#include "sskn/synthbench.hpp"

namespace sskn {

// Split sizes of the synthetic benchmark. Speakers of every accent are split
// into store / dev / test groups by local index.
struct BenchConfig {
    WorldConfig world;
    std::size_t store_speakers = 6;  // local ids [0, 6)
    std::size_t dev_speakers = 2;    // local ids [6, 8); the rest are test speakers
    std::size_t store_utts_train_accent = 450;
    std::size_t store_utts_heldout_accent = 90;  // multi-speaker store only
    std::size_t dev_utts_per_speaker = 30;
    std::size_t test_utts_per_speaker = 12;  // multi-speaker split
    std::size_t adapt_tokens = 300;          // per target speaker
    std::size_t target_test_tokens = 600;    // per target speaker
    std::size_t single_accent = 0;
};

struct EvalResult {
    double cer = 0.0;
    std::size_t errors = 0;
    std::size_t ref_tokens = 0;
    std::size_t utterances = 0;
    std::size_t hyp_tokens = 0;
    double seconds = 0.0;
    StepStats stats;
    std::size_t failures = 0;
};

// One held-out-accent speaker with private adaptation and test utterances.
struct TargetSpeaker {
    std::size_t speaker = 0;
    std::vector<std::size_t> adapt;
    std::vector<std::size_t> test;
};

// A generated world plus its fixed splits. Everything is a pure function of
// (config, seed).
class SynthBench {
public:
    SynthBench(const BenchConfig& config, std::uint64_t seed);
    SynthBench(const SynthBench&) = delete;
    SynthBench& operator=(const SynthBench&) = delete;

    const BenchConfig& config() const { return config_; }
    const SynthWorld& world() const { return world_; }
    const std::vector<SynthUtterance>& corpus() const { return corpus_; }
    const BaseModel& model() const { return model_; }

    // Utterance index lists (indices into corpus()).
    const std::vector<std::size_t>& store_train_accents() const { return store_train_; }
    const std::vector<std::size_t>& store_heldout_accents() const { return store_heldout_; }
    std::vector<std::size_t> store_multi() const;
    std::vector<std::size_t> store_accent(std::size_t accent) const;
    const std::vector<std::size_t>& dev() const { return dev_; }
    const std::vector<TargetSpeaker>& dev_targets() const { return dev_targets_; }
    const std::vector<std::size_t>& test_multi() const { return test_multi_; }
    const std::vector<TargetSpeaker>& targets() const { return targets_; }
    std::vector<std::size_t> named_split(const std::string& name) const;

    Datastore build(const std::vector<std::size_t>& utts, const DatastoreConfig& config = {}) const;
    std::vector<DatastoreEntry> entries(const std::vector<std::size_t>& utts) const;

    // Teacher-forced retrieval examples for smoother training.
    std::vector<TrainingExample> examples(const Datastore& ds, const std::vector<std::size_t>& utts, std::size_t K,
                                          const SmootherOptions& opts = {}, int threads = 1) const;

    std::vector<DecodeRequest> requests(const std::vector<std::size_t>& utts) const;
    EvalResult evaluate(const Datastore* ds, const SmootherParams* params, const DecodeConfig& config,
                        const std::vector<std::size_t>& utts, int threads = 1,
                        CorpusReport* report_out = nullptr) const;

private:
    std::vector<std::size_t> draw(const std::vector<std::size_t>& speakers, std::size_t n, Rng& rng);
    std::vector<std::size_t> draw_tokens(std::size_t speaker, std::size_t tokens, Rng& rng);

    BenchConfig config_;
    SynthWorld world_;
    std::vector<SynthUtterance> corpus_;
    SynthModel model_;
    std::vector<std::size_t> store_train_, store_heldout_, dev_, test_multi_;
    std::vector<TargetSpeaker> dev_targets_, targets_;
};

// ============================================================================
// Experiments behind the sweep command and the acceptance suite
// ============================================================================

struct ExperimentOptions {
    TrainConfig train;
    DecodeConfig decode;  // beam, T, lambda, max_len, smoother options
    int threads = 1;
};

struct ModeCers {
    double base = 0.0;
    double knn_fixed = 0.0;
    double smoothed = 0.0;
    double mean_lambda = 0.0;
    double mean_log_temperature = 0.0;
};

// Trains a smoother for `ds` on the dev split (or `dev_utts`).
TrainResult train_for_store(const SynthBench& bench, const Datastore& ds, const std::vector<std::size_t>& dev_utts,
                            std::size_t K, const ExperimentOptions& opts);

ModeCers evaluate_modes(const SynthBench& bench, const Datastore& ds, const SmootherParams* params, std::size_t k,
                        const std::vector<std::size_t>& utts, const ExperimentOptions& opts);

struct SingleSpeakerResult {
    ModeCers before;  // target adaptation not yet appended
    ModeCers after;   // appended without index retraining
};

// Held-out-accent targets: smoother trained once on dev targets, then each
// target's adaptation split is appended to a copy of the store.
SingleSpeakerResult run_single_speaker(const SynthBench& bench, const ExperimentOptions& opts);

struct SweepRow {
    double axis = 0.0;
    ModeCers cers;
    std::size_t store_size = 0;
};

std::vector<SweepRow> run_topk_sweep(const SynthBench& bench, const std::vector<std::size_t>& ks,
                                     const ExperimentOptions& opts);
std::vector<SweepRow> run_store_frac_sweep(const SynthBench& bench, const std::vector<double>& fracs,
                                           const ExperimentOptions& opts);

// Mixed-accent test split against a datastore of one accent.
ModeCers run_single_accent_store(const SynthBench& bench, const ExperimentOptions& opts);

}  // namespace sskn
