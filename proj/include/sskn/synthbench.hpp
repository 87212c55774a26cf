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
#include <utility>
#include <vector>

#include "sskn/datastore.hpp"
#include "sskn/model.hpp"

namespace sskn {

struct WorldConfig {
    std::size_t vocab_size = 40;
    std::size_t context_dim = 64;
    std::size_t speaker_dim = 16;
    std::size_t accents = 4;
    std::size_t speakers_per_accent = 10;
    // The last `heldout_accents` accents are unseen by the base model.
    std::size_t heldout_accents = 2;
    std::size_t pairs_per_accent = 3;
    // Fraction of the pair gap each accent's offset moves toward the partner,
    // cycled over that accent's pairs.
    std::vector<double> pair_shift{0.2, 0.5, 0.8};
    // Same for accents the base model was trained on.
    std::vector<double> train_pair_shift{0.0, 0.0, 0.0};
    double rho = 0.35;
    double rho_train = 0.05;
    double eta = 0.05;
    // Norm of the per-step context noise, in anchor units.
    double sigma = 0.3;
    double accent_offset = 1.0;
    double anchor_std = 0.5;
    // Norm of each speaker's private context shift, in units of sigma.
    double speaker_shift = 0.5;
    double speaker_spread = 0.3;
    // Multiplies every context coordinate; sets distances relative to T.
    double embed_scale = 45.0;
    std::uint64_t seed = 0;

    // Throws InvalidConfig on out-of-range values.
    void validate() const;
};

// key=value lines; '#' starts a comment. Unknown keys throw InvalidConfig.
WorldConfig parse_world_config(const std::string& text, WorldConfig base = {});
WorldConfig load_world_config(const std::string& path, WorldConfig base = {});
std::string format_world_config(const WorldConfig& c);

struct SynthSpeaker {
    std::size_t accent = 0;
    SpeakerVector xvec;    // unit norm
    Embedding shift;       // private context shift
};

struct SynthWorld {
    WorldConfig config;
    Vocab vocab;
    Matrix anchors;  // V x D, scaled
    Matrix offsets;  // A x D, scaled
    std::vector<std::vector<std::pair<TokenId, TokenId>>> pairs;  // per accent
    std::vector<SynthSpeaker> speakers;                            // accent-major

    bool heldout(std::size_t accent) const;
    // Confusable partner of `token` for `accent`, or -1.
    int partner(std::size_t accent, TokenId token) const;
    std::size_t accent_of(std::size_t speaker) const { return speakers.at(speaker).accent; }
    std::size_t speaker_index(std::size_t accent, std::size_t local) const;
    std::vector<std::uint8_t> serialize() const;
};

SynthWorld gen_world(const WorldConfig& config);

struct SynthUtterance {
    std::uint32_t utterance_id = 0;
    std::uint32_t speaker_id = 0;
    std::vector<TokenId> reference;  // 5..20 tokens, no BOS/EOS
    Matrix contexts;                 // reference.size() + 1 rows, the last for EOS
    std::vector<std::uint8_t> misheard;  // per step, swaps the pair masses
};

// Uniform speakers from `speakers`, uniform tokens in [2, V), lengths in [5, 20].
// Ids count up from `first_id`; noise is drawn from world seed x utterance id.
std::vector<SynthUtterance> gen_corpus(const SynthWorld& world, std::size_t n_utts,
                                       const std::vector<std::size_t>& speakers, Rng& rng,
                                       std::uint32_t first_id = 0);

// Base posterior for step `prefix_len` (number of tokens after BOS).
TokenDistribution synth_base_posterior(const SynthWorld& world, const SynthUtterance& utt, std::size_t prefix_len);

// Levenshtein distance with unit costs.
std::size_t edit_distance(std::span<const TokenId> a, std::span<const TokenId> b);
double cer(std::span<const TokenId> reference, std::span<const TokenId> hypothesis);

// BaseModel over a corpus; the utterance handle indexes `corpus`. Prefixes
// past the reference repeat the EOS step.
class SynthModel : public BaseModel {
public:
    SynthModel(const SynthWorld& world, const std::vector<SynthUtterance>& corpus) : world_(world), corpus_(corpus) {}
    std::size_t vocab_size() const override { return world_.config.vocab_size; }
    std::size_t context_dim() const override { return world_.config.context_dim; }
    StepOutput step(std::size_t utterance, std::span<const TokenId> prefix) const override;

private:
    const SynthWorld& world_;
    const std::vector<SynthUtterance>& corpus_;
};

// Corpus items for build_datastore over selected utterances (handles index `corpus`).
std::vector<CorpusItem> corpus_items(const std::vector<SynthUtterance>& corpus, std::span<const std::size_t> which);
SpeakerVectorFn synth_xvec(const SynthWorld& world);

}  // namespace sskn
