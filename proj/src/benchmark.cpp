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

#include "sskn/benchmark.hpp"

#include <cmath>

namespace sskn {

// ============================================================================
// Splits
// ============================================================================

namespace {

WorldConfig seeded(WorldConfig c, std::uint64_t seed) {
    c.seed = seed;
    return c;
}

}  // namespace

SynthBench::SynthBench(const BenchConfig& config, std::uint64_t seed)
    : config_(config), world_(gen_world(seeded(config.world, seed))), model_(world_, corpus_) {
    config_.world.seed = seed;
    const WorldConfig& wc = world_.config;
    if (config.store_speakers + config.dev_speakers >= wc.speakers_per_accent) {
        throw InvalidConfig("store and dev speakers leave no test speakers");
    }
    Rng rng = Rng(seed).child(100);
    auto group = [&](std::size_t a, std::size_t lo, std::size_t hi) {
        std::vector<std::size_t> s;
        for (std::size_t i = lo; i < hi; ++i) s.push_back(world_.speaker_index(a, i));
        return s;
    };
    const std::size_t dev_lo = config.store_speakers;
    const std::size_t test_lo = config.store_speakers + config.dev_speakers;
    for (std::size_t a = 0; a < wc.accents; ++a) {
        const auto store = group(a, 0, dev_lo);
        if (world_.heldout(a)) {
            auto u = draw(store, config.store_utts_heldout_accent, rng);
            store_heldout_.insert(store_heldout_.end(), u.begin(), u.end());
        } else {
            auto u = draw(store, config.store_utts_train_accent, rng);
            store_train_.insert(store_train_.end(), u.begin(), u.end());
        }
    }
    for (std::size_t a = 0; a < wc.accents; ++a) {
        for (std::size_t s : group(a, dev_lo, test_lo)) {
            auto u = draw({s}, config.dev_utts_per_speaker, rng);
            dev_.insert(dev_.end(), u.begin(), u.end());
            if (world_.heldout(a)) dev_targets_.push_back({s, draw_tokens(s, config.adapt_tokens, rng), u});
        }
    }
    for (std::size_t a = 0; a < wc.accents; ++a) {
        for (std::size_t s : group(a, test_lo, wc.speakers_per_accent)) {
            auto u = draw({s}, config.test_utts_per_speaker, rng);
            test_multi_.insert(test_multi_.end(), u.begin(), u.end());
        }
    }
    for (std::size_t a = 0; a < wc.accents; ++a) {
        if (!world_.heldout(a)) continue;
        for (std::size_t s : group(a, test_lo, wc.speakers_per_accent)) {
            TargetSpeaker t;
            t.speaker = s;
            t.adapt = draw_tokens(s, config.adapt_tokens, rng);
            t.test = draw_tokens(s, config.target_test_tokens, rng);
            targets_.push_back(std::move(t));
        }
    }
}

std::vector<std::size_t> SynthBench::draw(const std::vector<std::size_t>& speakers, std::size_t n, Rng& rng) {
    const std::size_t first = corpus_.size();
    auto utts = gen_corpus(world_, n, speakers, rng, static_cast<std::uint32_t>(first));
    std::vector<std::size_t> idx;
    for (auto& u : utts) {
        idx.push_back(corpus_.size());
        corpus_.push_back(std::move(u));
    }
    return idx;
}

std::vector<std::size_t> SynthBench::draw_tokens(std::size_t speaker, std::size_t tokens, Rng& rng) {
    std::vector<std::size_t> idx;
    std::size_t total = 0;
    while (total < tokens) {
        auto one = draw({speaker}, 1, rng);
        total += corpus_[one[0]].reference.size();
        idx.push_back(one[0]);
    }
    return idx;
}

std::vector<std::size_t> SynthBench::store_multi() const {
    std::vector<std::size_t> s = store_train_;
    s.insert(s.end(), store_heldout_.begin(), store_heldout_.end());
    return s;
}

std::vector<std::size_t> SynthBench::store_accent(std::size_t accent) const {
    std::vector<std::size_t> s;
    for (std::size_t i : store_multi()) {
        if (world_.accent_of(corpus_[i].speaker_id) == accent) s.push_back(i);
    }
    return s;
}

std::vector<std::size_t> SynthBench::named_split(const std::string& name) const {
    auto flatten = [](const std::vector<TargetSpeaker>& ts, bool adapt) {
        std::vector<std::size_t> out;
        for (const auto& t : ts) {
            const auto& v = adapt ? t.adapt : t.test;
            out.insert(out.end(), v.begin(), v.end());
        }
        return out;
    };
    if (name == "store") return store_multi();
    if (name == "store-train") return store_train_;
    if (name == "store-accent") return store_accent(config_.single_accent);
    if (name == "dev") return dev_;
    if (name == "test") return test_multi_;
    if (name == "target-adapt") return flatten(targets_, true);
    if (name == "target-test") return flatten(targets_, false);
    if (name == "dev-adapt") return flatten(dev_targets_, true);
    throw InvalidConfig("unknown split '" + name + "'");
}

Datastore SynthBench::build(const std::vector<std::size_t>& utts, const DatastoreConfig& config) const {
    return build_datastore(corpus_items(corpus_, utts), model_, synth_xvec(world_), world_.vocab,
                           world_.config.speaker_dim, config);
}

std::vector<DatastoreEntry> SynthBench::entries(const std::vector<std::size_t>& utts) const {
    std::vector<DatastoreEntry> out;
    for (std::size_t i : utts) {
        const SynthUtterance& u = corpus_[i];
        const auto& xv = world_.speakers[u.speaker_id].xvec;
        for (std::size_t t = 0; t <= u.reference.size(); ++t) {
            const TokenId gold = t < u.reference.size() ? u.reference[t] : kEos;
            Embedding key(u.contexts.row(t).begin(), u.contexts.row(t).end());
            out.push_back({std::move(key), gold, xv, u.speaker_id, u.utterance_id});
        }
    }
    return out;
}

std::vector<TrainingExample> SynthBench::examples(const Datastore& ds, const std::vector<std::size_t>& utts,
                                                  std::size_t K, const SmootherOptions& opts, int threads) const {
    std::vector<std::vector<TrainingExample>> per(utts.size());
    parallel_for(utts.size(), threads, [&](std::size_t i) {
        const SynthUtterance& u = corpus_[utts[i]];
        const auto& xv = world_.speakers[u.speaker_id].xvec;
        for (std::size_t t = 0; t <= u.reference.size(); ++t) {
            const TokenId gold = t < u.reference.size() ? u.reference[t] : kEos;
            NeighborSet ns = gather_neighbors(ds, u.contexts.row(t), xv, K);
            per[i].push_back(make_example(ns, synth_base_posterior(world_, u, t), gold, K, opts));
        }
    });
    std::vector<TrainingExample> out;
    for (auto& v : per) {
        for (auto& ex : v) out.push_back(std::move(ex));
    }
    return out;
}

std::vector<DecodeRequest> SynthBench::requests(const std::vector<std::size_t>& utts) const {
    std::vector<DecodeRequest> reqs;
    reqs.reserve(utts.size());
    for (std::size_t i : utts) {
        reqs.push_back({i, corpus_[i].utterance_id, world_.speakers[corpus_[i].speaker_id].xvec});
    }
    return reqs;
}

EvalResult SynthBench::evaluate(const Datastore* ds, const SmootherParams* params, const DecodeConfig& config,
                                const std::vector<std::size_t>& utts, int threads, CorpusReport* report_out) const {
    CorpusReport rep = decode_corpus(model_, ds, params, config, requests(utts), threads);
    EvalResult r;
    r.utterances = utts.size();
    r.seconds = rep.seconds;
    r.stats = rep.stats;
    r.failures = rep.failures;
    for (std::size_t i = 0; i < utts.size(); ++i) {
        const auto& ref = corpus_[utts[i]].reference;
        r.errors += edit_distance(ref, rep.results[i].tokens);
        r.ref_tokens += ref.size();
        r.hyp_tokens += rep.results[i].tokens.size();
    }
    r.cer = r.ref_tokens ? static_cast<double>(r.errors) / static_cast<double>(r.ref_tokens) : 0.0;
    if (report_out) *report_out = std::move(rep);
    return r;
}

// ============================================================================
// Experiments
// ============================================================================

TrainResult train_for_store(const SynthBench& bench, const Datastore& ds, const std::vector<std::size_t>& dev_utts,
                            std::size_t K, const ExperimentOptions& opts) {
    TrainConfig tc = opts.train;
    tc.K = K;
    const auto data = bench.examples(ds, dev_utts, K, opts.decode.smoother, opts.threads);
    return train_smoother(tc, data, opts.decode.smoother);
}

namespace {

struct Tally {
    std::size_t errors = 0;
    std::size_t tokens = 0;
    StepStats stats;
    void add(const EvalResult& r) {
        errors += r.errors;
        tokens += r.ref_tokens;
        stats.merge(r.stats);
    }
    double cer() const { return tokens ? static_cast<double>(errors) / static_cast<double>(tokens) : 0.0; }
};

DecodeConfig with_mode(const ExperimentOptions& opts, DecodeMode mode, std::size_t k) {
    DecodeConfig c = opts.decode;
    c.mode = mode;
    c.k = k;
    return c;
}

void fill_stats(ModeCers& m, const StepStats& s) {
    if (s.steps == 0) return;
    m.mean_lambda = s.lambda_sum / static_cast<double>(s.steps);
    m.mean_log_temperature = s.log_temperature_sum / static_cast<double>(s.steps);
}

}  // namespace

ModeCers evaluate_modes(const SynthBench& bench, const Datastore& ds, const SmootherParams* params, std::size_t k,
                        const std::vector<std::size_t>& utts, const ExperimentOptions& opts) {
    ModeCers m;
    m.base = bench.evaluate(&ds, nullptr, with_mode(opts, DecodeMode::base, k), utts, opts.threads).cer;
    m.knn_fixed = bench.evaluate(&ds, nullptr, with_mode(opts, DecodeMode::knn_fixed, k), utts, opts.threads).cer;
    if (params) {
        const EvalResult r = bench.evaluate(&ds, params, with_mode(opts, DecodeMode::smoothed, k), utts, opts.threads);
        m.smoothed = r.cer;
        fill_stats(m, r.stats);
    }
    return m;
}

SingleSpeakerResult run_single_speaker(const SynthBench& bench, const ExperimentOptions& opts) {
    const std::size_t k = opts.decode.k;
    const Datastore store = bench.build(bench.store_train_accents());

    Datastore dev_store = store;
    for (const auto& t : bench.dev_targets()) dev_store.append_entries(bench.entries(t.adapt));
    const TrainResult tr = train_for_store(bench, dev_store, bench.dev(), k, opts);

    Tally before[3], after[3];
    const DecodeMode modes[3] = {DecodeMode::base, DecodeMode::knn_fixed, DecodeMode::smoothed};
    for (const auto& t : bench.targets()) {
        Datastore ds = store;
        for (int phase = 0; phase < 2; ++phase) {
            if (phase == 1) ds.append_entries(bench.entries(t.adapt));
            for (int m = 0; m < 3; ++m) {
                const SmootherParams* p = modes[m] == DecodeMode::smoothed ? &tr.params : nullptr;
                const EvalResult r = bench.evaluate(&ds, p, with_mode(opts, modes[m], k), t.test, opts.threads);
                (phase == 0 ? before : after)[m].add(r);
            }
        }
    }
    SingleSpeakerResult res;
    res.before = {before[0].cer(), before[1].cer(), before[2].cer(), 0.0, 0.0};
    res.after = {after[0].cer(), after[1].cer(), after[2].cer(), 0.0, 0.0};
    fill_stats(res.before, before[2].stats);
    fill_stats(res.after, after[2].stats);
    return res;
}

std::vector<SweepRow> run_topk_sweep(const SynthBench& bench, const std::vector<std::size_t>& ks,
                                     const ExperimentOptions& opts) {
    const Datastore ds = bench.build(bench.store_multi());
    const double base =
        bench.evaluate(&ds, nullptr, with_mode(opts, DecodeMode::base, 1), bench.test_multi(), opts.threads).cer;
    std::vector<SweepRow> rows;
    for (std::size_t k : ks) {
        const TrainResult tr = train_for_store(bench, ds, bench.dev(), k, opts);
        SweepRow row;
        row.axis = static_cast<double>(k);
        row.store_size = ds.size();
        row.cers.base = base;
        row.cers.knn_fixed =
            bench.evaluate(&ds, nullptr, with_mode(opts, DecodeMode::knn_fixed, k), bench.test_multi(), opts.threads).cer;
        const EvalResult r =
            bench.evaluate(&ds, &tr.params, with_mode(opts, DecodeMode::smoothed, k), bench.test_multi(), opts.threads);
        row.cers.smoothed = r.cer;
        fill_stats(row.cers, r.stats);
        rows.push_back(row);
    }
    return rows;
}

std::vector<SweepRow> run_store_frac_sweep(const SynthBench& bench, const std::vector<double>& fracs,
                                           const ExperimentOptions& opts) {
    const std::size_t k = opts.decode.k;
    const Datastore full = bench.build(bench.store_multi());
    const double base =
        bench.evaluate(&full, nullptr, with_mode(opts, DecodeMode::base, k), bench.test_multi(), opts.threads).cer;
    std::vector<SweepRow> rows;
    Rng rng = Rng(bench.config().world.seed).child(200);
    for (double f : fracs) {
        Rng sub_rng = rng.child(static_cast<std::uint64_t>(std::llround(f * 1e6)));
        const Datastore ds = subsample(full, f, sub_rng);
        const TrainResult tr = train_for_store(bench, ds, bench.dev(), k, opts);
        SweepRow row;
        row.axis = f;
        row.store_size = ds.size();
        row.cers.base = base;
        row.cers.knn_fixed =
            bench.evaluate(&ds, nullptr, with_mode(opts, DecodeMode::knn_fixed, k), bench.test_multi(), opts.threads).cer;
        const EvalResult r =
            bench.evaluate(&ds, &tr.params, with_mode(opts, DecodeMode::smoothed, k), bench.test_multi(), opts.threads);
        row.cers.smoothed = r.cer;
        fill_stats(row.cers, r.stats);
        rows.push_back(row);
    }
    return rows;
}

ModeCers run_single_accent_store(const SynthBench& bench, const ExperimentOptions& opts) {
    const std::size_t k = opts.decode.k;
    const Datastore ds = bench.build(bench.store_accent(bench.config().single_accent));
    const TrainResult tr = train_for_store(bench, ds, bench.dev(), k, opts);
    return evaluate_modes(bench, ds, &tr.params, k, bench.test_multi(), opts);
}

}  // namespace sskn
