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

#include "sskn/synthbench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace sskn {

// ============================================================================
// Configuration
// ============================================================================

void WorldConfig::validate() const {
    auto fail = [](const std::string& m) { throw InvalidConfig(m); };
    if (vocab_size < 3) fail("vocab_size must be at least 3");
    if (context_dim == 0 || speaker_dim == 0) fail("dimensions must be positive");
    if (accents == 0 || speakers_per_accent == 0) fail("need at least one accent and one speaker");
    if (heldout_accents > accents) fail("heldout_accents exceeds accents");
    if (2 * pairs_per_accent * accents > vocab_size - 2) fail("not enough tokens for disjoint confusable pairs");
    if (pairs_per_accent > 0 && pair_shift.empty()) fail("pair_shift needs at least one value");
    if (!(rho >= 0.0 && rho <= 1.0) || !(rho_train >= 0.0 && rho_train <= 1.0)) fail("rho must lie in [0, 1]");
    if (!(eta >= 0.0) || rho + eta > 1.0 || rho_train + eta > 1.0) fail("rho + eta must not exceed 1");
    if (!(sigma > 0.0)) fail("sigma must be positive");
    if (!(embed_scale > 0.0)) fail("embed_scale must be positive");
    if (!(anchor_std > 0.0)) fail("anchor_std must be positive");
}

WorldConfig parse_world_config(const std::string& text, WorldConfig c) {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
        const auto eq = line.find('=');
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        if (trim(line).empty()) continue;
        if (eq == std::string::npos) throw InvalidConfig("expected key=value, got '" + trim(line) + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        try {
            if (key == "vocab_size") c.vocab_size = std::stoul(val);
            else if (key == "context_dim") c.context_dim = std::stoul(val);
            else if (key == "speaker_dim") c.speaker_dim = std::stoul(val);
            else if (key == "accents") c.accents = std::stoul(val);
            else if (key == "speakers_per_accent") c.speakers_per_accent = std::stoul(val);
            else if (key == "heldout_accents") c.heldout_accents = std::stoul(val);
            else if (key == "pairs_per_accent") c.pairs_per_accent = std::stoul(val);
            else if (key == "rho") c.rho = std::stod(val);
            else if (key == "rho_train") c.rho_train = std::stod(val);
            else if (key == "eta") c.eta = std::stod(val);
            else if (key == "sigma") c.sigma = std::stod(val);
            else if (key == "accent_offset") c.accent_offset = std::stod(val);
            else if (key == "anchor_std") c.anchor_std = std::stod(val);
            else if (key == "speaker_shift") c.speaker_shift = std::stod(val);
            else if (key == "speaker_spread") c.speaker_spread = std::stod(val);
            else if (key == "embed_scale") c.embed_scale = std::stod(val);
            else if (key == "seed") c.seed = std::stoull(val);
            else if (key == "pair_shift" || key == "train_pair_shift") {
                auto& dst = key == "pair_shift" ? c.pair_shift : c.train_pair_shift;
                dst.clear();
                std::istringstream vs(val);
                std::string item;
                while (std::getline(vs, item, ',')) dst.push_back(std::stod(item));
            } else {
                throw InvalidConfig("unknown world config key '" + key + "'");
            }
        } catch (const std::logic_error&) {
            throw InvalidConfig("bad value for '" + key + "': '" + val + "'");
        }
    }
    c.validate();
    return c;
}

WorldConfig load_world_config(const std::string& path, WorldConfig base) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open world config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_world_config(ss.str(), base);
}

std::string format_world_config(const WorldConfig& c) {
    std::ostringstream o;
    o.precision(17);
    o << "vocab_size=" << c.vocab_size << "\ncontext_dim=" << c.context_dim << "\nspeaker_dim=" << c.speaker_dim
      << "\naccents=" << c.accents << "\nspeakers_per_accent=" << c.speakers_per_accent
      << "\nheldout_accents=" << c.heldout_accents << "\npairs_per_accent=" << c.pairs_per_accent
      << "\npair_shift=";
    for (std::size_t i = 0; i < c.pair_shift.size(); ++i) o << (i ? "," : "") << c.pair_shift[i];
    o << "\ntrain_pair_shift=";
    for (std::size_t i = 0; i < c.train_pair_shift.size(); ++i) o << (i ? "," : "") << c.train_pair_shift[i];
    o << "\nrho=" << c.rho << "\nrho_train=" << c.rho_train << "\neta=" << c.eta << "\nsigma=" << c.sigma
      << "\naccent_offset=" << c.accent_offset << "\nanchor_std=" << c.anchor_std
      << "\nspeaker_shift=" << c.speaker_shift << "\nspeaker_spread=" << c.speaker_spread
      << "\nembed_scale=" << c.embed_scale << "\nseed=" << c.seed << "\n";
    return o.str();
}

// ============================================================================
// World
// ============================================================================

namespace {

std::vector<double> random_unit(std::size_t dim, Rng& rng) {
    std::vector<double> v(dim);
    double n2 = 0.0;
    do {
        n2 = 0.0;
        for (double& x : v) {
            x = rng.normal();
            n2 += x * x;
        }
    } while (n2 == 0.0);
    const double inv = 1.0 / std::sqrt(n2);
    for (double& x : v) x *= inv;
    return v;
}

}  // namespace

bool SynthWorld::heldout(std::size_t accent) const {
    return accent >= config.accents - config.heldout_accents;
}

int SynthWorld::partner(std::size_t accent, TokenId token) const {
    for (const auto& [y, z] : pairs.at(accent)) {
        if (y == token) return static_cast<int>(z);
        if (z == token) return static_cast<int>(y);
    }
    return -1;
}

std::size_t SynthWorld::speaker_index(std::size_t accent, std::size_t local) const {
    return accent * config.speakers_per_accent + local;
}

std::vector<std::uint8_t> SynthWorld::serialize() const {
    ByteWriter w;
    w.str(format_world_config(config));
    for (double v : anchors.data) w.f64(v);
    for (double v : offsets.data) w.f64(v);
    for (const auto& ps : pairs) {
        for (const auto& [y, z] : ps) {
            w.u32(y);
            w.u32(z);
        }
    }
    for (const auto& s : speakers) {
        w.u32(static_cast<std::uint32_t>(s.accent));
        for (double v : s.xvec) w.f64(v);
        for (double v : s.shift) w.f64(v);
    }
    return w.buffer();
}

SynthWorld gen_world(const WorldConfig& config) {
    config.validate();
    const std::size_t V = config.vocab_size;
    const std::size_t D = config.context_dim;
    const double sigma = config.sigma;
    Rng root(config.seed);
    Rng anchor_rng = root.child(1);
    Rng pair_rng = root.child(2);
    Rng offset_rng = root.child(3);
    Rng speaker_rng = root.child(4);

    SynthWorld w;
    w.config = config;
    w.vocab = Vocab::synthetic(V);

    // Disjoint confusable pairs, each with a unit direction from y to z.
    std::vector<TokenId> shuffled;
    for (TokenId t = 2; t < V; ++t) shuffled.push_back(t);
    pair_rng.shuffle(shuffled);
    w.pairs.assign(config.accents, {});
    std::vector<int> partner_of(V, -1);
    std::vector<std::vector<double>> pair_dir(V);
    std::size_t next = 0;
    for (std::size_t a = 0; a < config.accents; ++a) {
        for (std::size_t p = 0; p < config.pairs_per_accent; ++p) {
            const TokenId y = shuffled[next++], z = shuffled[next++];
            w.pairs[a].emplace_back(y, z);
            partner_of[z] = static_cast<int>(y);
            partner_of[y] = -2;  // leader of a pair
            pair_dir[z] = random_unit(D, pair_rng);
        }
    }

    // Anchors: Gaussian, confusable partners at exactly 2 sigma, all other
    // pairs at least 6 sigma apart (rejection on violation).
    w.anchors = Matrix(V, D);
    auto place = [&](TokenId t) {
        for (double& x : w.anchors.row(t)) x = config.anchor_std * anchor_rng.normal();
    };
    auto place_partner = [&](TokenId z) {
        const TokenId y = static_cast<TokenId>(partner_of[z]);
        for (std::size_t j = 0; j < D; ++j) w.anchors.at(z, j) = w.anchors.at(y, j) + 2.0 * sigma * pair_dir[z][j];
    };
    for (TokenId t = 0; t < V; ++t) {
        if (partner_of[t] < 0) place(t);
    }
    for (TokenId t = 0; t < V; ++t) {
        if (partner_of[t] >= 0) place_partner(t);
    }
    const double min_sep2 = 36.0 * sigma * sigma;
    bool ok = false;
    for (int round = 0; round < 200 && !ok; ++round) {
        ok = true;
        for (TokenId i = 1; i < V && ok; ++i) {
            for (TokenId j = i + 1; j < V; ++j) {
                if (partner_of[j] == static_cast<int>(i) || partner_of[i] == static_cast<int>(j)) continue;
                if (squared_distance(w.anchors.row(i), w.anchors.row(j)) >= min_sep2) continue;
                // Move j (and its pair) to a fresh spot.
                const TokenId lead = partner_of[j] >= 0 ? static_cast<TokenId>(partner_of[j]) : j;
                place(lead);
                for (TokenId t = 0; t < V; ++t) {
                    if (partner_of[t] == static_cast<int>(lead)) place_partner(t);
                }
                ok = false;
                break;
            }
        }
    }
    if (!ok) throw SeparationUnsatisfiable("could not separate anchors by 6 sigma in " + std::to_string(D) + " dims");

    // Accent offsets: random direction, moved by a prescribed fraction of
    // the gap along the accent's own pair directions and orthogonal to every
    // other pair direction (Gauss-Seidel on the nearly orthogonal system).
    w.offsets = Matrix(config.accents, D);
    for (std::size_t a = 0; a < config.accents; ++a) {
        std::vector<double> g = random_unit(D, offset_rng);
        for (double& x : g) x *= config.accent_offset;
        for (int pass = 0; pass < 50; ++pass) {
            for (std::size_t b = 0; b < config.accents; ++b) {
                const auto& shifts = w.heldout(b) ? config.pair_shift : config.train_pair_shift;
                for (std::size_t p = 0; p < w.pairs[b].size(); ++p) {
                    const auto& u = pair_dir[w.pairs[b][p].second];
                    const double want = (a == b && !shifts.empty()) ? shifts[p % shifts.size()] * 2.0 * sigma : 0.0;
                    const double delta = want - dot(g, u);
                    for (std::size_t j = 0; j < D; ++j) g[j] += delta * u[j];
                }
            }
        }
        std::copy(g.begin(), g.end(), w.offsets.row(a).begin());
    }

    // Speakers: x-vectors around a per-accent center, plus a private shift.
    std::vector<std::vector<double>> centers;
    for (std::size_t a = 0; a < config.accents; ++a) centers.push_back(random_unit(config.speaker_dim, speaker_rng));
    for (std::size_t a = 0; a < config.accents; ++a) {
        for (std::size_t s = 0; s < config.speakers_per_accent; ++s) {
            SynthSpeaker sp;
            sp.accent = a;
            sp.xvec = centers[a];
            const double spread = config.speaker_spread / std::sqrt(static_cast<double>(config.speaker_dim));
            for (double& x : sp.xvec) x += spread * speaker_rng.normal();
            const double n = std::sqrt(dot(sp.xvec, sp.xvec));
            for (double& x : sp.xvec) x /= n;
            sp.shift = random_unit(D, speaker_rng);
            for (double& x : sp.shift) x *= config.speaker_shift * sigma * config.embed_scale;
            w.speakers.push_back(std::move(sp));
        }
    }
    for (double& x : w.anchors.data) x *= config.embed_scale;
    for (double& x : w.offsets.data) x *= config.embed_scale;
    return w;
}

// ============================================================================
// Corpus and base model
// ============================================================================

std::vector<SynthUtterance> gen_corpus(const SynthWorld& world, std::size_t n_utts,
                                       const std::vector<std::size_t>& speakers, Rng& rng, std::uint32_t first_id) {
    if (speakers.empty()) throw EmptySpeakerSet("gen_corpus needs at least one speaker");
    const WorldConfig& c = world.config;
    const std::size_t D = c.context_dim;
    const double noise = c.sigma * c.embed_scale / std::sqrt(static_cast<double>(D));
    const Rng noise_root(Rng::mix(c.seed) ^ 0x5eedULL);
    std::vector<SynthUtterance> out;
    out.reserve(n_utts);
    for (std::size_t u = 0; u < n_utts; ++u) {
        SynthUtterance utt;
        utt.utterance_id = first_id + static_cast<std::uint32_t>(u);
        const std::size_t spk = speakers[rng.uniform_int(speakers.size())];
        if (spk >= world.speakers.size()) throw InvalidConfig("speaker index out of range");
        utt.speaker_id = static_cast<std::uint32_t>(spk);
        const std::size_t len = 5 + rng.uniform_int(16);
        for (std::size_t t = 0; t < len; ++t) {
            utt.reference.push_back(static_cast<TokenId>(2 + rng.uniform_int(c.vocab_size - 2)));
        }
        const SynthSpeaker& sp = world.speakers[spk];
        const double rho = world.heldout(sp.accent) ? c.rho : c.rho_train;
        Rng nr = noise_root.child(utt.utterance_id);
        utt.contexts = Matrix(len + 1, D);
        for (std::size_t t = 0; t <= len; ++t) {
            const TokenId y = t < len ? utt.reference[t] : kEos;
            auto row = utt.contexts.row(t);
            for (std::size_t j = 0; j < D; ++j) {
                row[j] = world.anchors.at(y, j) + world.offsets.at(sp.accent, j) + sp.shift[j] + noise * nr.normal();
            }
            utt.misheard.push_back(nr.uniform() < rho ? 1 : 0);
        }
        out.push_back(std::move(utt));
    }
    return out;
}

TokenDistribution synth_base_posterior(const SynthWorld& world, const SynthUtterance& utt, std::size_t prefix_len) {
    const std::size_t len = utt.reference.size();
    if (prefix_len > len) {
        throw PrefixTooLong("prefix of " + std::to_string(prefix_len) + " tokens, reference has " + std::to_string(len));
    }
    const WorldConfig& c = world.config;
    const std::size_t V = c.vocab_size;
    const TokenId y = prefix_len < len ? utt.reference[prefix_len] : kEos;
    const std::size_t accent = world.accent_of(utt.speaker_id);
    const int z = world.partner(accent, y);
    const double rho = (world.heldout(accent) && z >= 0) ? c.rho : c.rho_train;

    // eta is spread over every token except BOS and the gold one; without a
    // partner, the confusion mass is spread the same way.
    const double others = static_cast<double>(V - 2);
    TokenDistribution p(V, 0.0);
    const double spread = (z >= 0 ? c.eta : c.eta + rho) / others;
    for (TokenId v = 1; v < V; ++v) {
        if (v != y) p[v] = spread;
    }
    p[y] = 1.0 - rho - c.eta;
    if (z >= 0) {
        p[z] += rho;
        if (utt.misheard[prefix_len]) std::swap(p[y], p[z]);
    }
    return p;
}

StepOutput SynthModel::step(std::size_t utterance, std::span<const TokenId> prefix) const {
    const SynthUtterance& utt = corpus_.at(utterance);
    if (prefix.empty() || prefix.front() != kBos) throw InvalidConfig("prefix must start with BOS");
    const std::size_t t = std::min(prefix.size() - 1, utt.reference.size());
    StepOutput out;
    out.p_base = synth_base_posterior(world_, utt, t);
    out.context.assign(utt.contexts.row(t).begin(), utt.contexts.row(t).end());
    return out;
}

// ============================================================================
// Evaluation helpers
// ============================================================================

std::size_t edit_distance(std::span<const TokenId> a, std::span<const TokenId> b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double cer(std::span<const TokenId> reference, std::span<const TokenId> hypothesis) {
    if (reference.empty()) throw EmptyReference("CER needs a nonempty reference");
    return static_cast<double>(edit_distance(reference, hypothesis)) / static_cast<double>(reference.size());
}

std::vector<CorpusItem> corpus_items(const std::vector<SynthUtterance>& corpus, std::span<const std::size_t> which) {
    std::vector<CorpusItem> items;
    items.reserve(which.size());
    for (std::size_t i : which) {
        const SynthUtterance& u = corpus.at(i);
        items.push_back({i, u.reference, u.speaker_id, u.utterance_id});
    }
    return items;
}

SpeakerVectorFn synth_xvec(const SynthWorld& world) {
    return [&world](const CorpusItem& item) { return world.speakers.at(item.speaker_id).xvec; };
}

}  // namespace sskn
