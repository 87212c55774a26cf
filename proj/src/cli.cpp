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


#include "sskn/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "sskn/benchmark.hpp"
#include "sskn/errors.hpp"

namespace sskn::cli {

namespace {

using Fields = std::vector<std::pair<std::string, std::string>>;

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string exact(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Flag values shared by the subcommands. Defaults are the published decoding
// and training settings.
struct Options {
    std::uint64_t seed = 0;
    int threads = 1;
    std::string world_config;
    std::string store;
    std::string params;
    std::string out;
    std::string mode = "all";
    std::size_t k = 32;
    double temperature = 1000.0;
    double lambda = 0.4;
    std::size_t beam = 5;
    std::size_t max_len = 32;
    std::string convention = "knn-weight";
    std::size_t steps = 4000;
    double lr = 3e-4;
    std::size_t batch = 32;
    std::size_t hidden = 32;
    std::string axis;
    std::vector<std::string> splits;
    std::size_t utterances = 0;
    std::string input;
    std::string index = "flat";
    std::size_t num_lists = 0;
    std::size_t subquantizers = 8;
    bool dump = false;
    std::string trace;
    bool check = false;
    std::size_t cap = 200;
};

BenchConfig bench_config(const Options& o) {
    BenchConfig bc;
    if (!o.world_config.empty()) bc.world = load_world_config(o.world_config, bc.world);
    return bc;
}

DecodeConfig decode_config(const Options& o) {
    DecodeConfig dc;
    dc.k = o.k;
    dc.temperature = o.temperature;
    dc.lambda = o.lambda;
    dc.beam = o.beam;
    dc.max_len = o.max_len;
    dc.smoother.convention = o.convention == "asr-weight" ? LambdaConvention::asr_weight : LambdaConvention::knn_weight;
    return dc;
}

TrainConfig train_config(const Options& o) {
    TrainConfig tc;
    tc.K = o.k;
    tc.hidden = o.hidden;
    tc.learning_rate = o.lr;
    tc.batch_size = o.batch;
    tc.steps = o.steps;
    tc.seed = o.seed;
    return tc;
}

Fields config_echo(const std::string& command, const Options& o) {
    return {{"command", command},
            {"kind", "config"},
            {"seed", std::to_string(o.seed)},
            {"k", std::to_string(o.k)},
            {"temperature", exact(o.temperature)},
            {"lambda", exact(o.lambda)},
            {"beam", std::to_string(o.beam)},
            {"max_len", std::to_string(o.max_len)},
            {"lambda_convention", o.convention},
            {"steps", std::to_string(o.steps)},
            {"lr", exact(o.lr)},
            {"batch", std::to_string(o.batch)},
            {"hidden", std::to_string(o.hidden)},
            {"threads", std::to_string(o.threads)}};
}

void require(bool ok, const std::string& what) {
    if (!ok) throw CLI::ValidationError(what);
}

// The store must have been built over the same synthetic world.
void check_compatible(const Datastore& ds, const SynthWorld& world) {
    if (!(ds.vocab() == world.vocab) || ds.key_dim() != world.config.context_dim ||
        ds.speaker_dim() != world.config.speaker_dim) {
        throw ShapeMismatch("datastore vocabulary or dimensions do not match the synthetic world");
    }
}

std::vector<std::size_t> resolve_splits(const SynthBench& bench, const std::vector<std::string>& names) {
    std::vector<std::size_t> out;
    for (const auto& n : names) {
        const auto part = bench.named_split(n);
        out.insert(out.end(), part.begin(), part.end());
    }
    return out;
}

std::string joined(const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : ",") + x;
    return s;
}

class OutFile {
public:
    explicit OutFile(const std::string& path) : path_(path), f_(path, std::ios::binary | std::ios::trunc) {
        if (!f_) throw IoError("cannot open '" + path + "' for writing");
    }
    std::ofstream& stream() { return f_; }
    void close() {
        f_.close();
        if (!f_) throw IoError("write failed for '" + path_ + "'");
    }

private:
    std::string path_;
    std::ofstream f_;
};

std::vector<DecodeMode> selected_modes(const Options& o) {
    if (o.mode == "all") {
        std::vector<DecodeMode> m{DecodeMode::base, DecodeMode::knn_fixed};
        if (!o.params.empty()) m.push_back(DecodeMode::smoothed);
        return m;
    }
    const DecodeMode m = parse_mode(o.mode);
    if (m == DecodeMode::base) return {m};
    return {DecodeMode::base, m};  // base is always run for the delta column
}

// ---------------------------------------------------------------------------

int cmd_build_datastore(const Options& o, std::ostream& out) {
    require(!o.out.empty(), "--out is required");
    DatastoreConfig dc;
    dc.index.kind = o.index == "ivfpq" ? IndexKind::ivfpq : IndexKind::flat;
    dc.index.num_lists = o.num_lists;
    dc.index.num_subquantizers = o.subquantizers;
    dc.index.seed = o.seed;
    Datastore ds;
    std::string source;
    if (!o.input.empty()) {
        ds = load_any(o.input, dc.index);
        source = "dump";
    } else {
        SynthBench bench(bench_config(o), o.seed);
        if (o.utterances > 0) {
            std::vector<std::size_t> speakers(bench.world().speakers.size());
            for (std::size_t i = 0; i < speakers.size(); ++i) speakers[i] = i;
            Rng rng = Rng(o.seed).child(200);
            const auto corpus = gen_corpus(bench.world(), o.utterances, speakers, rng);
            const SynthModel model(bench.world(), corpus);
            std::vector<std::size_t> all(corpus.size());
            for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
            ds = build_datastore(corpus_items(corpus, all), model, synth_xvec(bench.world()), bench.world().vocab,
                                 bench.world().config.speaker_dim, dc);
            source = "fresh:" + std::to_string(o.utterances);
        } else {
            const auto names = o.splits.empty() ? std::vector<std::string>{"store"} : o.splits;
            ds = bench.build(resolve_splits(bench, names), dc);
            source = joined(names);
        }
    }
    if (o.dump) {
        save_dump(ds, o.out);
    } else {
        save(ds, o.out);
    }
    out << "built datastore: " << ds.size() << " entries, key dim " << ds.key_dim() << ", speaker dim "
        << ds.speaker_dim() << "\n";
    out << result_line({{"command", "build-datastore"},
                        {"source", source},
                        {"entries", std::to_string(ds.size())},
                        {"key_dim", std::to_string(ds.key_dim())},
                        {"speaker_dim", std::to_string(ds.speaker_dim())},
                        {"vocab", std::to_string(ds.vocab().size())},
                        {"index", ds.is_ivfpq() ? "ivfpq" : "flat"},
                        {"format", o.dump ? "SSKD" : "SSKN"}})
        << "\n";
    return kExitOk;
}

int cmd_train_smoother(const Options& o, std::ostream& out) {
    require(!o.store.empty(), "--store is required");
    require(!o.out.empty(), "--out is required");
    SynthBench bench(bench_config(o), o.seed);
    const Datastore ds = load_any(o.store);
    check_compatible(ds, bench.world());
    const DecodeConfig dc = decode_config(o);
    const auto names = o.splits.empty() ? std::vector<std::string>{"dev"} : o.splits;
    const auto data = bench.examples(ds, resolve_splits(bench, names), o.k, dc.smoother, o.threads);
    const TrainResult tr = train_smoother(train_config(o), data, dc.smoother);
    save_params(tr.params, o.out);

    const std::string trace_path = o.trace.empty() ? o.out + ".loss.tsv" : o.trace;
    OutFile trace(trace_path);
    for (std::size_t i = 0; i < tr.loss_trace.size(); ++i) trace.stream() << i << "\t" << exact(tr.loss_trace[i]) << "\n";
    trace.close();

    auto window_mean = [&](bool head) {
        const std::size_t n = std::min<std::size_t>(100, tr.loss_trace.size());
        if (n == 0) return 0.0;
        const auto first = head ? tr.loss_trace.begin() : tr.loss_trace.end() - static_cast<std::ptrdiff_t>(n);
        double s = 0.0;
        for (auto it = first; it != first + static_cast<std::ptrdiff_t>(n); ++it) s += *it;
        return s / static_cast<double>(n);
    };
    out << result_line(config_echo("train-smoother", o)) << "\n";
    out << "trained smoother on " << data.size() << " examples for " << tr.loss_trace.size() << " steps\n";
    out << result_line({{"command", "train-smoother"},
                        {"examples", std::to_string(data.size())},
                        {"steps", std::to_string(tr.loss_trace.size())},
                        {"loss_first100", fixed(window_mean(true), 6)},
                        {"loss_last100", fixed(window_mean(false), 6)},
                        {"gold_zero", std::to_string(tr.gold_zero)},
                        {"clamped", std::to_string(tr.clamped)},
                        {"trace", trace_path}})
        << "\n";
    return kExitOk;
}

int cmd_evaluate(const Options& o, std::ostream& out, std::ostream& err) {
    require(!o.store.empty(), "--store is required");
    SynthBench bench(bench_config(o), o.seed);
    const Datastore ds = load_any(o.store);
    check_compatible(ds, bench.world());
    if (o.mode == "smoothed" && o.params.empty()) throw MissingParams("--mode smoothed needs --params");
    std::optional<SmootherParams> params;
    if (!o.params.empty()) params = load_params(o.params, o.k);
    const auto names = o.splits.empty() ? std::vector<std::string>{"test"} : o.splits;
    const auto utts = resolve_splits(bench, names);
    const std::string corpus = joined(names);

    std::unique_ptr<OutFile> transcripts;
    if (!o.out.empty()) transcripts = std::make_unique<OutFile>(o.out);

    out << result_line(config_echo("evaluate", o)) << "\n";
    out << "mode\tcer\tdelta_vs_base\n";
    std::map<DecodeMode, double> cers;
    for (DecodeMode m : selected_modes(o)) {
        DecodeConfig dc = decode_config(o);
        dc.mode = m;
        CorpusReport rep;
        const EvalResult r = bench.evaluate(&ds, params ? &*params : nullptr, dc, utts, o.threads, &rep);
        cers[m] = r.cer;
        const double delta = r.cer - cers[DecodeMode::base];
        const double steps = static_cast<double>(std::max<std::size_t>(1, r.stats.steps));
        out << mode_name(m) << "\t" << fixed(r.cer, 6) << "\t" << (delta >= 0 ? "+" : "") << fixed(delta, 6) << "\n";
        out << result_line({{"command", "evaluate"},
                            {"mode", mode_name(m)},
                            {"corpus", corpus},
                            {"cer", fixed(r.cer, 6)},
                            {"delta_vs_base", fixed(delta, 6)},
                            {"errors", std::to_string(r.errors)},
                            {"ref_tokens", std::to_string(r.ref_tokens)},
                            {"hyp_tokens", std::to_string(r.hyp_tokens)},
                            {"utterances", std::to_string(r.utterances)},
                            {"failures", std::to_string(r.failures)},
                            {"mean_lambda", fixed(r.stats.lambda_sum / steps, 6)},
                            {"mean_log_temperature", fixed(r.stats.log_temperature_sum / steps, 6)},
                            {"store_size", std::to_string(ds.size())}})
            << "\n";
        // Wall-clock time is the only run-dependent field; keep it off stdout.
        err << "#TIMING\tmode=" << mode_name(m) << "\tseconds=" << fixed(r.seconds, 3) << "\n";
        if (transcripts) {
            for (const auto& res : rep.results) transcripts->stream() << format_transcript(res, m, ds.vocab()) << "\n";
        }
    }
    if (transcripts) transcripts->close();
    if (o.check && cers.count(DecodeMode::smoothed) && cers.count(DecodeMode::knn_fixed) &&
        cers[DecodeMode::smoothed] > cers[DecodeMode::knn_fixed]) {
        err << "check failed: smoothed CER " << fixed(cers[DecodeMode::smoothed], 6) << " > knn_fixed CER "
            << fixed(cers[DecodeMode::knn_fixed], 6) << "\n";
        return kExitAssert;
    }
    return kExitOk;
}

int cmd_sweep(const Options& o, std::ostream& out) {
    SynthBench bench(bench_config(o), o.seed);
    ExperimentOptions eo;
    eo.train = train_config(o);
    eo.decode = decode_config(o);
    eo.threads = o.threads;
    std::vector<SweepRow> rows;
    if (o.axis == "topk") {
        rows = run_topk_sweep(bench, {1, 2, 4, 8, 16, 32, 64}, eo);
    } else {
        rows = run_store_frac_sweep(bench, {1.0, 0.5, 0.25, 0.1, 0.05}, eo);
    }
    out << result_line(config_echo("sweep", o)) << "\n";
    out << o.axis << "\tstore_size\tbase\tknn_fixed\tsmoothed\n";
    for (const auto& r : rows) {
        out << exact(r.axis) << "\t" << r.store_size << "\t" << fixed(r.cers.base, 6) << "\t"
            << fixed(r.cers.knn_fixed, 6) << "\t" << fixed(r.cers.smoothed, 6) << "\n";
    }
    for (const auto& r : rows) {
        out << result_line({{"command", "sweep"},
                            {"axis", o.axis},
                            {"value", exact(r.axis)},
                            {"store_size", std::to_string(r.store_size)},
                            {"base", fixed(r.cers.base, 6)},
                            {"knn_fixed", fixed(r.cers.knn_fixed, 6)},
                            {"smoothed", fixed(r.cers.smoothed, 6)},
                            {"mean_lambda", fixed(r.cers.mean_lambda, 6)},
                            {"mean_log_temperature", fixed(r.cers.mean_log_temperature, 6)}})
            << "\n";
    }
    return kExitOk;
}

int cmd_bench_latency(const Options& o, std::ostream& out) {
    require(!o.store.empty(), "--store is required");
    require(!o.params.empty(), "--params is required");
    SynthBench bench(bench_config(o), o.seed);
    const Datastore ds = load_any(o.store);
    check_compatible(ds, bench.world());
    const SmootherParams params = load_params(o.params, o.k);
    const auto names = o.splits.empty() ? std::vector<std::string>{"test"} : o.splits;
    const auto utts = resolve_splits(bench, names);

    out << result_line(config_echo("bench-latency", o)) << "\n";
    out << result_line({{"command", "bench-latency"},
                        {"kind", "setup"},
                        {"store_size", std::to_string(ds.size())},
                        {"k", std::to_string(o.k)},
                        {"utterances", std::to_string(utts.size())}})
        << "\n";
    double base_rate = 0.0;
    for (DecodeMode m : {DecodeMode::base, DecodeMode::knn_fixed, DecodeMode::smoothed}) {
        DecodeConfig dc = decode_config(o);
        dc.mode = m;
        const auto reqs = bench.requests(utts);
        decode_corpus(bench.model(), &ds, &params, dc, reqs, o.threads);  // warmup
        const CorpusReport rep = decode_corpus(bench.model(), &ds, &params, dc, reqs, o.threads);
        const double rate = static_cast<double>(rep.tokens) / std::max(rep.seconds, 1e-9);
        if (m == DecodeMode::base) base_rate = rate;
        out << result_line({{"command", "bench-latency"},
                            {"kind", "timing"},
                            {"mode", mode_name(m)},
                            {"store_size", std::to_string(ds.size())},
                            {"k", std::to_string(o.k)},
                            {"tokens", std::to_string(rep.tokens)},
                            {"seconds", fixed(rep.seconds, 6)},
                            {"tokens_per_s", fixed(rate, 3)},
                            {"ratio_vs_base", fixed(rate / base_rate, 3)}})
            << "\n";
    }
    return kExitOk;
}

int cmd_export_embeddings(const Options& o, std::ostream& out) {
    require(!o.store.empty(), "--store is required");
    require(o.cap > 0, "--cap must be positive");
    SynthBench bench(bench_config(o), o.seed);
    const Datastore ds = load_any(o.store);
    const auto& speakers = bench.world().speakers;

    // Up to `cap` entries per (token, speaker) group, chosen uniformly.
    std::map<std::pair<TokenId, std::uint32_t>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < ds.size(); ++i) groups[{ds.value(i), ds.speaker_id(i)}].push_back(i);
    Rng rng = Rng(o.seed).child(300);
    std::vector<std::size_t> keep;
    for (auto& [key, rows] : groups) {
        if (rows.size() > o.cap) {
            rng.shuffle(rows);
            rows.resize(o.cap);
        }
        keep.insert(keep.end(), rows.begin(), rows.end());
    }
    std::sort(keep.begin(), keep.end());

    std::unique_ptr<OutFile> file;
    if (!o.out.empty()) file = std::make_unique<OutFile>(o.out);
    std::ostream& dst = file ? static_cast<std::ostream&>(file->stream()) : out;
    dst << "entry\ttoken\tspeaker\taccent";
    for (std::size_t j = 0; j < ds.key_dim(); ++j) dst << "\tk" << j;
    dst << "\n";
    char buf[32];
    for (std::size_t i : keep) {
        const std::uint32_t spk = ds.speaker_id(i);
        const std::string accent = spk < speakers.size() ? std::to_string(speakers[spk].accent) : "-1";
        dst << i << "\t" << ds.vocab().token(ds.value(i)) << "\t" << spk << "\t" << accent;
        for (double v : ds.key(i)) {
            std::snprintf(buf, sizeof buf, "%.9g", v);
            dst << "\t" << buf;
        }
        dst << "\n";
    }
    if (file) {
        file->close();
        out << result_line({{"command", "export-embeddings"},
                            {"rows", std::to_string(keep.size())},
                            {"groups", std::to_string(groups.size())},
                            {"columns", std::to_string(4 + ds.key_dim())}})
            << "\n";
    }
    return kExitOk;
}

}  // namespace

std::string result_line(const Fields& fields) {
    std::string s = "#RESULT";
    for (const auto& [k, v] : fields) s += "\t" + k + "=" + v;
    return s;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Options o;
    CLI::App app{"Speaker-aware kNN decoding on a synthetic speech benchmark", "sskn"};
    app.require_subcommand(1);

    auto add_common = [&](CLI::App* c) {
        c->add_option("--seed", o.seed, "World and run seed");
        c->add_option("--threads", o.threads, "Worker threads")->check(CLI::Range(1, 1024));
        c->add_option("--world-config", o.world_config, "key=value world settings file");
    };
    auto add_decode = [&](CLI::App* c) {
        c->add_option("--k", o.k, "Neighbors per step")->check(CLI::PositiveNumber);
        c->add_option("--temperature", o.temperature, "Fixed kNN temperature")->check(CLI::PositiveNumber);
        c->add_option("--lambda", o.lambda, "Fixed interpolation weight")->check(CLI::Range(0.0, 1.0));
        c->add_option("--beam", o.beam, "Beam width")->check(CLI::PositiveNumber);
        c->add_option("--max-len", o.max_len, "Maximum emitted tokens")->check(CLI::PositiveNumber);
        c->add_option("--lambda-convention", o.convention, "Which distribution the weight multiplies")
            ->check(CLI::IsMember({"knn-weight", "asr-weight"}));
    };
    auto add_train = [&](CLI::App* c) {
        c->add_option("--steps", o.steps, "Optimizer steps");
        c->add_option("--lr", o.lr, "Adam learning rate")->check(CLI::PositiveNumber);
        c->add_option("--batch", o.batch, "Mini-batch size")->check(CLI::PositiveNumber);
        c->add_option("--hidden", o.hidden, "Hidden width of the weight network")->check(CLI::PositiveNumber);
    };
    auto add_splits = [&](CLI::App* c, const std::string& def) {
        c->add_option("--split", o.splits, "Named corpus split(s), default " + def)->delimiter(',');
    };

    auto* build = app.add_subcommand("build-datastore", "Build a datastore file");
    add_common(build);
    add_splits(build, "store");
    build->add_option("--out", o.out, "Output datastore path");
    build->add_option("--utterances", o.utterances, "Fresh utterances instead of a named split");
    build->add_option("--input", o.input, "Import a dump instead of generating")->check(CLI::ExistingFile);
    build->add_option("--index", o.index, "Index kind")->check(CLI::IsMember({"flat", "ivfpq"}));
    build->add_option("--num-lists", o.num_lists, "IVF lists, 0 picks from the entry count");
    build->add_option("--subquantizers", o.subquantizers, "PQ subquantizers")->check(CLI::PositiveNumber);
    build->add_flag("--dump", o.dump, "Write the index-free import layout");

    auto* train = app.add_subcommand("train-smoother", "Train the temperature and weight networks");
    add_common(train);
    add_decode(train);
    add_train(train);
    add_splits(train, "dev");
    train->add_option("--store", o.store, "Datastore path");
    train->add_option("--out", o.out, "Output params path");
    train->add_option("--trace", o.trace, "Loss trace path, default <out>.loss.tsv");

    auto* eval = app.add_subcommand("evaluate", "Decode a split and report CER per mode");
    add_common(eval);
    add_decode(eval);
    add_splits(eval, "test");
    eval->add_option("--store", o.store, "Datastore path");
    eval->add_option("--params", o.params, "Smoother params path");
    eval->add_option("--mode", o.mode, "base, knn_fixed, smoothed or all")
        ->check(CLI::IsMember({"all", "base", "knn_fixed", "smoothed"}));
    eval->add_option("--out", o.out, "Transcript output path");
    eval->add_flag("--check", o.check, "Exit 4 unless smoothed CER <= knn_fixed CER");

    auto* sweep = app.add_subcommand("sweep", "CER per mode across top-k or datastore fraction");
    add_common(sweep);
    add_decode(sweep);
    add_train(sweep);
    sweep->add_option("--axis", o.axis, "topk or store-frac")->required();

    auto* lat = app.add_subcommand("bench-latency", "Decoding throughput per mode");
    add_common(lat);
    add_decode(lat);
    add_splits(lat, "test");
    lat->add_option("--store", o.store, "Datastore path");
    lat->add_option("--params", o.params, "Smoother params path");

    auto* emb = app.add_subcommand("export-embeddings", "Sampled datastore keys as TSV");
    add_common(emb);
    emb->add_option("--store", o.store, "Datastore path");
    emb->add_option("--out", o.out, "Output path, default stdout");
    emb->add_option("--cap", o.cap, "Rows per (token, speaker) group");

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
        if (sweep->parsed() && o.axis != "topk" && o.axis != "store-frac") {
            throw CLI::ValidationError("--axis must be topk or store-frac, got '" + o.axis + "'");
        }
        if (build->parsed()) return cmd_build_datastore(o, out);
        if (train->parsed()) return cmd_train_smoother(o, out);
        if (eval->parsed()) return cmd_evaluate(o, out, err);
        if (sweep->parsed()) return cmd_sweep(o, out);
        if (lat->parsed()) return cmd_bench_latency(o, out);
        return cmd_export_embeddings(o, out);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n" << app.help();
        return kExitUsage;
    } catch (const FormatError& e) {
        err << "error (" << e.kind() << "): " << e.what() << "\n";
        return kExitIo;
    } catch (const Error& e) {
        err << "error (" << e.kind() << "): " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace sskn::cli
