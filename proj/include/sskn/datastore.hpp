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
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "sskn/model.hpp"
#include "sskn/vindex.hpp"

namespace sskn {

struct DatastoreEntry {
    Embedding key;
    TokenId value = 0;
    SpeakerVector speaker_vec;
    std::uint32_t speaker_id = 0;
    std::uint32_t utterance_id = 0;
};

enum class KeyPrecision { fp16, fp32 };
enum class IndexKind { flat, ivfpq };

struct IndexConfig {
    IndexKind kind = IndexKind::flat;
    std::size_t num_lists = 0;  // 0 picks default_num_lists(N)
    std::size_t num_subquantizers = 8;
    std::size_t nprobe = 0;  // 0 picks max(1, C/8)
    std::uint64_t seed = 0;
};

struct DatastoreConfig {
    KeyPrecision precision = KeyPrecision::fp16;
    IndexConfig index;
};

// One reference-forced utterance for datastore construction.
struct CorpusItem {
    std::size_t utterance = 0;  // model handle
    std::vector<TokenId> reference;  // without BOS and EOS
    std::uint32_t speaker_id = 0;
    std::uint32_t utterance_id = 0;
};

using SpeakerVectorFn = std::function<SpeakerVector(const CorpusItem&)>;

// Token-level (key, value, speaker vector) store with a search index.
// Index ids are entry positions.
class Datastore {
public:
    Datastore() = default;
    Datastore(Vocab vocab, std::size_t key_dim, std::size_t speaker_dim, DatastoreConfig config = {});

    const Vocab& vocab() const { return vocab_; }
    std::size_t key_dim() const { return key_dim_; }
    std::size_t speaker_dim() const { return speaker_dim_; }
    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }
    const DatastoreConfig& config() const { return config_; }

    // Keys and speaker vectors as stored, widened to double.
    std::span<const double> key(std::size_t i) const { return keys_.row(i); }
    std::span<const double> speaker_vec(std::size_t i) const { return speaker_vecs_.row(i); }
    TokenId value(std::size_t i) const { return values_[i]; }
    std::uint32_t speaker_id(std::size_t i) const { return speaker_ids_[i]; }
    std::uint32_t utterance_id(std::size_t i) const { return utterance_ids_[i]; }
    DatastoreEntry entry(std::size_t i) const;
    const Matrix& keys() const { return keys_; }

    // Stores entries at the configured precision without touching the index.
    void push_entries(const std::vector<DatastoreEntry>& entries);
    // (Re)builds the index over all entries.
    void build_index();
    // Adds entries to the existing index without retraining.
    void append_entries(const std::vector<DatastoreEntry>& entries);

    SearchResult search(std::span<const double> query, std::size_t k) const;

    bool is_ivfpq() const { return std::holds_alternative<IvfPqIndex>(index_); }
    const IvfPqIndex* ivfpq() const { return std::get_if<IvfPqIndex>(&index_); }
    IvfPqIndex* ivfpq() { return std::get_if<IvfPqIndex>(&index_); }

    // Serialized forms. `with_index` false gives the import ("SSKD") layout.
    std::vector<std::uint8_t> serialize(bool with_index = true) const;
    static Datastore deserialize(std::span<const std::uint8_t> bytes, const IndexConfig& import_index = {});

private:
    double store_value(double v) const;
    void index_rows(std::size_t first);

    Vocab vocab_;
    std::size_t key_dim_ = 0;
    std::size_t speaker_dim_ = 0;
    DatastoreConfig config_;
    Matrix keys_;
    std::vector<TokenId> values_;
    Matrix speaker_vecs_;
    std::vector<std::uint32_t> speaker_ids_;
    std::vector<std::uint32_t> utterance_ids_;
    std::variant<FlatIndex, IvfPqIndex> index_;
};

// One entry per reference token plus one for EOS, keys from teacher forcing.
Datastore build_datastore(const std::vector<CorpusItem>& corpus, const BaseModel& model,
                          const SpeakerVectorFn& xvec, const Vocab& vocab, std::size_t speaker_dim,
                          const DatastoreConfig& config = {});

void append_entries(Datastore& ds, const std::vector<DatastoreEntry>& entries);

// floor(fraction * N) entries drawn uniformly without replacement, original
// order kept, fresh index.
Datastore subsample(const Datastore& ds, double fraction, Rng& rng);

void save(const Datastore& ds, const std::string& path);
Datastore load(const std::string& path);
// Writes the "SSKD" import layout (no index block).
void save_dump(const Datastore& ds, const std::string& path);
// Reads either layout; dumps get a fresh index per `index`.
Datastore load_any(const std::string& path, const IndexConfig& index = {});

}  // namespace sskn
