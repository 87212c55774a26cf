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

#include "sskn/datastore.hpp"

#include <algorithm>
#include <cmath>

namespace sskn {

namespace {

constexpr std::uint32_t kFormatVersion = 1;
constexpr std::uint32_t kFlatTag = 0x54414c46;   // "FLAT"
constexpr std::uint32_t kIvfPqTag = 0x51505649;  // "IVPQ"
constexpr std::size_t kMaxIvfTrainRows = 65536;

void check_entry(const DatastoreEntry& e, std::size_t key_dim, std::size_t speaker_dim, std::size_t vocab) {
    if (e.key.size() != key_dim) {
        throw DimensionMismatch("key of dim " + std::to_string(e.key.size()) + ", datastore dim " +
                                std::to_string(key_dim));
    }
    if (e.speaker_vec.size() != speaker_dim) {
        throw DimensionMismatch("speaker vector of dim " + std::to_string(e.speaker_vec.size()) +
                                ", datastore dim " + std::to_string(speaker_dim));
    }
    if (e.value >= vocab) throw UnknownToken("value id " + std::to_string(e.value));
    for (double v : e.key) {
        if (!std::isfinite(v)) throw InvalidConfig("non-finite key coordinate");
    }
}

}  // namespace

Datastore::Datastore(Vocab vocab, std::size_t key_dim, std::size_t speaker_dim, DatastoreConfig config)
    : vocab_(std::move(vocab)), key_dim_(key_dim), speaker_dim_(speaker_dim), config_(config),
      keys_(0, key_dim), speaker_vecs_(0, speaker_dim), index_(FlatIndex(key_dim)) {
    if (key_dim == 0) throw DimensionMismatch("key dimension must be positive");
}

double Datastore::store_value(double v) const {
    return config_.precision == KeyPrecision::fp16 ? round_to_half(v)
                                                   : static_cast<double>(static_cast<float>(v));
}

DatastoreEntry Datastore::entry(std::size_t i) const {
    DatastoreEntry e;
    e.key.assign(keys_.row(i).begin(), keys_.row(i).end());
    e.value = values_[i];
    e.speaker_vec.assign(speaker_vecs_.row(i).begin(), speaker_vecs_.row(i).end());
    e.speaker_id = speaker_ids_[i];
    e.utterance_id = utterance_ids_[i];
    return e;
}

void Datastore::push_entries(const std::vector<DatastoreEntry>& entries) {
    for (const auto& e : entries) check_entry(e, key_dim_, speaker_dim_, vocab_.size());
    for (const auto& e : entries) {
        for (double v : e.key) keys_.data.push_back(store_value(v));
        ++keys_.rows;
        for (double v : e.speaker_vec) speaker_vecs_.data.push_back(round_to_half(v));
        ++speaker_vecs_.rows;
        values_.push_back(e.value);
        speaker_ids_.push_back(e.speaker_id);
        utterance_ids_.push_back(e.utterance_id);
    }
}

void Datastore::index_rows(std::size_t first) {
    const std::size_t n = size() - first;
    if (n == 0) return;
    Matrix rows(n, key_dim_);
    std::copy(keys_.data.begin() + static_cast<std::ptrdiff_t>(first * key_dim_), keys_.data.end(),
              rows.data.begin());
    std::vector<EntryId> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = first + i;
    std::visit([&](auto& index) { index.add(rows, ids); }, index_);
}

void Datastore::build_index() {
    if (config_.index.kind == IndexKind::flat) {
        index_ = FlatIndex(key_dim_);
        index_rows(0);
        return;
    }
    const std::size_t n = size();
    const std::size_t C = config_.index.num_lists ? config_.index.num_lists : default_num_lists(n);
    Rng rng(config_.index.seed);
    Matrix sample;
    if (n <= kMaxIvfTrainRows) {
        sample = keys_;
    } else {
        std::vector<std::size_t> rows(n);
        for (std::size_t i = 0; i < n; ++i) rows[i] = i;
        Rng pick = rng.child(99);
        pick.shuffle(rows);
        rows.resize(kMaxIvfTrainRows);
        std::sort(rows.begin(), rows.end());
        sample = Matrix(0, key_dim_);
        for (std::size_t r : rows) sample.append_row(keys_.row(r));
    }
    IvfPqIndex idx = train_ivfpq(sample, C, config_.index.num_subquantizers, rng);
    if (config_.index.nprobe) idx.set_nprobe(std::min(config_.index.nprobe, C));
    index_ = std::move(idx);
    index_rows(0);
}

void Datastore::append_entries(const std::vector<DatastoreEntry>& entries) {
    const std::size_t first = size();
    push_entries(entries);
    index_rows(first);
}

SearchResult Datastore::search(std::span<const double> query, std::size_t k) const {
    if (empty()) throw EmptyDatastore("search on an empty datastore");
    return std::visit([&](const auto& index) { return index.search(query, k); }, index_);
}

std::vector<std::uint8_t> Datastore::serialize(bool with_index) const {
    if (config_.precision != KeyPrecision::fp16) {
        throw InvalidConfig("datastore files store fp16 keys; this datastore holds fp32 keys");
    }
    ByteWriter w;
    w.magic(with_index ? "SSKN" : "SSKD");
    w.u32(kFormatVersion);
    w.u32(static_cast<std::uint32_t>(vocab_.size()));
    w.u32(static_cast<std::uint32_t>(key_dim_));
    w.u32(static_cast<std::uint32_t>(speaker_dim_));
    w.u64(size());
    for (const auto& t : vocab_.tokens()) w.str(t);
    for (double v : keys_.data) w.u16(float_to_half(v));
    for (TokenId v : values_) w.u32(v);
    for (double v : speaker_vecs_.data) w.u16(float_to_half(v));
    for (auto v : speaker_ids_) w.u32(v);
    for (auto v : utterance_ids_) w.u32(v);
    if (with_index) {
        if (const IvfPqIndex* idx = ivfpq()) {
            w.u32(kIvfPqTag);
            idx->write(w);
        } else {
            w.u32(kFlatTag);
        }
    }
    w.seal();
    return w.buffer();
}

Datastore Datastore::deserialize(std::span<const std::uint8_t> bytes, const IndexConfig& import_index) {
    if (bytes.size() < 4) throw Truncated("file too short");
    ByteReader probe(bytes);
    bool with_index = true;
    try {
        probe.expect_magic("SSKN");
    } catch (const BadMagic&) {
        ByteReader again(bytes);
        again.expect_magic("SSKD");
        with_index = false;
    }
    auto payload = verify_sealed(bytes);
    ByteReader r(payload);
    r.bytes(4);
    const std::uint32_t version = r.u32();
    if (version != kFormatVersion) {
        throw VersionMismatch("format version " + std::to_string(version) + ", expected " +
                              std::to_string(kFormatVersion));
    }
    const std::size_t V = r.u32();
    const std::size_t D = r.u32();
    const std::size_t Ds = r.u32();
    const std::uint64_t N = r.u64();
    if (D == 0 || N > payload.size()) throw ShapeMismatch("datastore header");
    std::vector<std::string> tokens(V);
    for (auto& t : tokens) t = r.str();
    DatastoreConfig config;
    config.index = import_index;
    Datastore ds(Vocab(std::move(tokens)), D, Ds, config);
    ds.keys_ = Matrix(N, D);
    for (double& v : ds.keys_.data) v = half_to_double(r.u16());
    ds.values_.resize(N);
    for (auto& v : ds.values_) {
        v = r.u32();
        if (v >= V) throw ShapeMismatch("value id out of vocabulary");
    }
    ds.speaker_vecs_ = Matrix(N, Ds);
    for (double& v : ds.speaker_vecs_.data) v = half_to_double(r.u16());
    ds.speaker_ids_.resize(N);
    for (auto& v : ds.speaker_ids_) v = r.u32();
    ds.utterance_ids_.resize(N);
    for (auto& v : ds.utterance_ids_) v = r.u32();
    if (!with_index) {
        ds.build_index();
    } else {
        const std::uint32_t tag = r.u32();
        if (tag == kFlatTag) {
            ds.config_.index.kind = IndexKind::flat;
            ds.index_ = FlatIndex(D);
            ds.index_rows(0);
        } else if (tag == kIvfPqTag) {
            IvfPqIndex idx = IvfPqIndex::read(r);
            if (idx.dim() != D || idx.size() != N) throw ShapeMismatch("index block does not match entries");
            ds.config_.index.kind = IndexKind::ivfpq;
            ds.config_.index.num_subquantizers = idx.num_subquantizers();
            ds.index_ = std::move(idx);
        } else {
            throw BadMagic("unknown index block tag");
        }
    }
    if (r.remaining() != 0) throw ShapeMismatch("trailing bytes after datastore payload");
    return ds;
}

// ============================================================================
// Free operations
// ============================================================================

Datastore build_datastore(const std::vector<CorpusItem>& corpus, const BaseModel& model,
                          const SpeakerVectorFn& xvec, const Vocab& vocab, std::size_t speaker_dim,
                          const DatastoreConfig& config) {
    if (corpus.empty()) throw EmptyCorpus("build_datastore needs at least one utterance");
    if (model.vocab_size() != vocab.size()) throw DimensionMismatch("model and vocabulary sizes differ");
    Datastore ds(vocab, model.context_dim(), speaker_dim, config);
    std::vector<DatastoreEntry> entries;
    for (const CorpusItem& item : corpus) {
        const SpeakerVector sv = xvec(item);
        std::vector<TokenId> prefix{kBos};
        for (std::size_t t = 0; t <= item.reference.size(); ++t) {
            const TokenId gold = t < item.reference.size() ? item.reference[t] : kEos;
            StepOutput out = model.step(item.utterance, prefix);
            entries.push_back({std::move(out.context), gold, sv, item.speaker_id, item.utterance_id});
            prefix.push_back(gold);
        }
    }
    ds.push_entries(entries);
    ds.build_index();
    return ds;
}

void append_entries(Datastore& ds, const std::vector<DatastoreEntry>& entries) { ds.append_entries(entries); }

Datastore subsample(const Datastore& ds, double fraction, Rng& rng) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidConfig("fraction must lie in (0, 1]");
    const std::size_t n = ds.size();
    const auto keep = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
    if (keep == 0) throw EmptyResult("subsample keeps no entries");
    std::vector<std::size_t> rows(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = i;
    if (keep < n) {
        // Partial Fisher-Yates
        for (std::size_t i = 0; i < keep; ++i) {
            std::swap(rows[i], rows[i + rng.uniform_int(n - i)]);
        }
        rows.resize(keep);
        std::sort(rows.begin(), rows.end());
    }
    Datastore out(ds.vocab(), ds.key_dim(), ds.speaker_dim(), ds.config());
    std::vector<DatastoreEntry> entries;
    entries.reserve(keep);
    for (std::size_t r : rows) entries.push_back(ds.entry(r));
    out.push_entries(entries);
    out.build_index();
    return out;
}

void save(const Datastore& ds, const std::string& path) { write_file_bytes(path, ds.serialize(true)); }

Datastore load(const std::string& path) {
    auto bytes = read_file_bytes(path);
    ByteReader r(bytes);
    r.expect_magic("SSKN");
    return Datastore::deserialize(bytes);
}

void save_dump(const Datastore& ds, const std::string& path) { write_file_bytes(path, ds.serialize(false)); }

Datastore load_any(const std::string& path, const IndexConfig& index) {
    return Datastore::deserialize(read_file_bytes(path), index);
}

}  // namespace sskn
