#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ote/errors.hpp"
#include "ote/rng.hpp"

namespace ote {

using EntityId = std::int32_t;
using RelationId = std::int32_t;

struct Triple {
    EntityId head = 0;
    RelationId rel = 0;
    EntityId tail = 0;

    friend bool operator==(const Triple&, const Triple&) = default;
};

inline std::uint64_t pack_pair(std::int32_t a, std::int32_t b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
           static_cast<std::uint32_t>(b);
}

// Entity and relation name tables with dense ids in first-appearance order.
class Vocabulary {
public:
    EntityId intern_entity(std::string_view name) {
        auto it = entity_ids_.find(std::string(name));
        if (it != entity_ids_.end()) return it->second;
        EntityId id = static_cast<EntityId>(entity_names_.size());
        entity_names_.emplace_back(name);
        entity_ids_.emplace(entity_names_.back(), id);
        return id;
    }

    RelationId intern_relation(std::string_view name) {
        auto it = relation_ids_.find(std::string(name));
        if (it != relation_ids_.end()) return it->second;
        RelationId id = static_cast<RelationId>(relation_names_.size());
        relation_names_.emplace_back(name);
        relation_ids_.emplace(relation_names_.back(), id);
        return id;
    }

    std::optional<EntityId> entity_id(std::string_view name) const {
        auto it = entity_ids_.find(std::string(name));
        if (it == entity_ids_.end()) return std::nullopt;
        return it->second;
    }

    std::optional<RelationId> relation_id(std::string_view name) const {
        auto it = relation_ids_.find(std::string(name));
        if (it == relation_ids_.end()) return std::nullopt;
        return it->second;
    }

    const std::string& entity_name(EntityId id) const { return entity_names_.at(id); }
    const std::string& relation_name(RelationId id) const { return relation_names_.at(id); }

    std::size_t entity_count() const { return entity_names_.size(); }
    std::size_t relation_count() const { return relation_names_.size(); }

    // Order-sensitive content hashes; stored in checkpoints so a model can
    // refuse to load against the wrong vocabulary.
    std::uint64_t entity_hash() const { return hash_names(entity_names_); }
    std::uint64_t relation_hash() const { return hash_names(relation_names_); }

    void dump(const std::filesystem::path& entities_path,
              const std::filesystem::path& relations_path) const {
        write_table(entities_path, entity_names_);
        write_table(relations_path, relation_names_);
    }

private:
    static std::uint64_t hash_names(const std::vector<std::string>& names) {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& n : names) {
            for (unsigned char c : n) {
                h ^= c;
                h *= 0x100000001b3ULL;
            }
            h ^= '\n';
            h *= 0x100000001b3ULL;
        }
        return h;
    }

    static void write_table(const std::filesystem::path& path,
                            const std::vector<std::string>& names) {
        std::ofstream out(path);
        if (!out) throw DataError("cannot write vocabulary dump: " + path.string());
        for (std::size_t i = 0; i < names.size(); ++i) out << i << '\t' << names[i] << '\n';
    }

    std::vector<std::string> entity_names_;
    std::vector<std::string> relation_names_;
    std::unordered_map<std::string, EntityId> entity_ids_;
    std::unordered_map<std::string, RelationId> relation_ids_;
};

struct TripleStore {
    std::string split;
    std::vector<Triple> triples;

    std::size_t size() const { return triples.size(); }
    bool empty() const { return triples.empty(); }
};

struct LoadStats {
    std::size_t lines = 0;
    std::size_t duplicates = 0;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    const char* ws = " \t\r\n";
    auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

} // namespace detail

// Tab-separated triples, one per line: head \t relation \t tail.
// In build mode unseen names grow the vocabulary; in fixed mode they are an error.
inline TripleStore load_triples(const std::filesystem::path& path, Vocabulary& vocab,
                                bool build_vocab_mode, std::string split_label = {},
                                LoadStats* stats_out = nullptr) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open triple file: " + path.string());

    TripleStore store;
    store.split = split_label.empty() ? path.filename().string() : std::move(split_label);

    std::unordered_map<std::uint64_t, std::unordered_set<EntityId>> seen;
    LoadStats stats;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string_view sv = detail::trim(line);
        if (sv.empty()) continue;
        ++stats.lines;

        // Split on tabs; fields keep internal spaces but lose surrounding whitespace.
        std::array<std::string_view, 3> fields;
        std::size_t nfields = 0;
        std::size_t start = 0;
        const std::string_view raw = line;
        for (std::size_t i = 0; i <= raw.size(); ++i) {
            if (i == raw.size() || raw[i] == '\t') {
                std::string_view f = detail::trim(raw.substr(start, i - start));
                if (nfields < 3) fields[nfields] = f;
                ++nfields;
                start = i + 1;
            }
        }
        if (nfields != 3 || fields[0].empty() || fields[1].empty() || fields[2].empty())
            throw DataError(path.string() + ":" + std::to_string(line_no) +
                            ": expected 3 tab-separated fields (head, relation, tail)");

        Triple t;
        if (build_vocab_mode) {
            t.head = vocab.intern_entity(fields[0]);
            t.rel = vocab.intern_relation(fields[1]);
            t.tail = vocab.intern_entity(fields[2]);
        } else {
            auto h = vocab.entity_id(fields[0]);
            auto r = vocab.relation_id(fields[1]);
            auto tl = vocab.entity_id(fields[2]);
            if (!h || !r || !tl)
                throw DataError(path.string() + ":" + std::to_string(line_no) +
                                ": unknown " + (!h ? "entity: " + std::string(fields[0])
                                                : !r ? "relation: " + std::string(fields[1])
                                                     : "entity: " + std::string(fields[2])));
            t.head = *h;
            t.rel = *r;
            t.tail = *tl;
        }
        if (!seen[pack_pair(t.head, t.rel)].insert(t.tail).second) ++stats.duplicates;
        store.triples.push_back(t);
    }

    if (stats.duplicates > 0)
        std::cerr << "warning: " << path.string() << ": " << stats.duplicates
                  << " duplicate triple line(s) kept\n";
    if (stats_out) *stats_out = stats;
    return store;
}

inline Vocabulary build_vocab(std::span<const std::filesystem::path> paths) {
    Vocabulary vocab;
    for (const auto& p : paths) load_triples(p, vocab, /*build_vocab_mode=*/true);
    return vocab;
}

// Standard benchmark layout: <dir>/train.txt, valid.txt, test.txt.
// Vocabulary ids follow first appearance over (train, valid, test) in that order.
struct Dataset {
    Vocabulary vocab;
    TripleStore train;
    TripleStore valid;
    TripleStore test;

    static Dataset load(const std::filesystem::path& dir) {
        Dataset d;
        d.train = load_triples(dir / "train.txt", d.vocab, true, "train");
        d.valid = load_triples(dir / "valid.txt", d.vocab, true, "valid");
        d.test = load_triples(dir / "test.txt", d.vocab, true, "test");
        return d;
    }
};

// Directed neighborhoods from the training split only, CSR over entity id.
// A pair occurring in k triples appears k times.
struct ContextIndex {
    // incoming: (h', r') with (h', r', e) in train
    std::vector<std::pair<EntityId, RelationId>> in_pairs;
    std::vector<std::size_t> in_off;
    // outgoing: (r', t') with (e, r', t') in train
    std::vector<std::pair<RelationId, EntityId>> out_pairs;
    std::vector<std::size_t> out_off;

    std::span<const std::pair<EntityId, RelationId>> incoming(EntityId e) const {
        return {in_pairs.data() + in_off[e], in_off[e + 1] - in_off[e]};
    }
    std::span<const std::pair<RelationId, EntityId>> outgoing(EntityId e) const {
        return {out_pairs.data() + out_off[e], out_off[e + 1] - out_off[e]};
    }
    std::size_t entity_count() const { return in_off.empty() ? 0 : in_off.size() - 1; }
};

inline ContextIndex build_context_index(const TripleStore& train, std::size_t entity_count) {
    ContextIndex idx;
    idx.in_off.assign(entity_count + 1, 0);
    idx.out_off.assign(entity_count + 1, 0);
    for (const Triple& t : train.triples) {
        ++idx.in_off[t.tail + 1];
        ++idx.out_off[t.head + 1];
    }
    for (std::size_t e = 0; e < entity_count; ++e) {
        idx.in_off[e + 1] += idx.in_off[e];
        idx.out_off[e + 1] += idx.out_off[e];
    }
    idx.in_pairs.resize(train.size());
    idx.out_pairs.resize(train.size());
    std::vector<std::size_t> in_cursor(idx.in_off.begin(), idx.in_off.end() - 1);
    std::vector<std::size_t> out_cursor(idx.out_off.begin(), idx.out_off.end() - 1);
    for (const Triple& t : train.triples) {
        idx.in_pairs[in_cursor[t.tail]++] = {t.head, t.rel};
        idx.out_pairs[out_cursor[t.head]++] = {t.rel, t.tail};
    }
    return idx;
}

// All true triples of every split, keyed both ways for filtered evaluation.
class FilterIndex {
public:
    void add(const TripleStore& store) {
        for (const Triple& t : store.triples) {
            if (triples_.insert(key(t)).second) {
                tails_[pack_pair(t.head, t.rel)].push_back(t.tail);
                heads_[pack_pair(t.rel, t.tail)].push_back(t.head);
            }
        }
        finalized_ = false;
    }

    void finalize() {
        for (auto& [k, v] : tails_) std::sort(v.begin(), v.end());
        for (auto& [k, v] : heads_) std::sort(v.begin(), v.end());
        finalized_ = true;
    }

    bool contains(const Triple& t) const { return triples_.count(key(t)) > 0; }

    // Sorted true tails for (h, r); nullptr when none.
    const std::vector<EntityId>* true_tails(EntityId h, RelationId r) const {
        auto it = tails_.find(pack_pair(h, r));
        return it == tails_.end() ? nullptr : &it->second;
    }
    const std::vector<EntityId>* true_heads(RelationId r, EntityId t) const {
        auto it = heads_.find(pack_pair(r, t));
        return it == heads_.end() ? nullptr : &it->second;
    }

    std::size_t size() const { return triples_.size(); }
    bool finalized() const { return finalized_; }

private:
    static std::uint64_t key(const Triple& t) {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (std::uint64_t v : {static_cast<std::uint64_t>(static_cast<std::uint32_t>(t.head)),
                                static_cast<std::uint64_t>(static_cast<std::uint32_t>(t.rel)),
                                static_cast<std::uint64_t>(static_cast<std::uint32_t>(t.tail))}) {
            h ^= v;
            h *= 0x100000001b3ULL;
            h ^= v << 17;
            h *= 0x100000001b3ULL;
        }
        return h;
    }

    std::unordered_set<std::uint64_t> triples_;
    std::unordered_map<std::uint64_t, std::vector<EntityId>> tails_;
    std::unordered_map<std::uint64_t, std::vector<EntityId>> heads_;
    bool finalized_ = false;
};

inline FilterIndex build_filter_index(const TripleStore& train, const TripleStore& valid,
                                      const TripleStore& test) {
    FilterIndex f;
    f.add(train);
    f.add(valid);
    f.add(test);
    f.finalize();
    return f;
}

// (head, relation) and (relation, tail) pair frequencies over the training split.
struct PairCounts {
    std::unordered_map<std::uint64_t, std::int32_t> hr;
    std::unordered_map<std::uint64_t, std::int32_t> rt;

    std::int32_t c_hr(EntityId h, RelationId r) const {
        auto it = hr.find(pack_pair(h, r));
        return it == hr.end() ? 0 : it->second;
    }
    std::int32_t c_rt(RelationId r, EntityId t) const {
        auto it = rt.find(pack_pair(r, t));
        return it == rt.end() ? 0 : it->second;
    }
};

inline PairCounts build_pair_counts(const TripleStore& train) {
    PairCounts c;
    for (const Triple& t : train.triples) {
        ++c.hr[pack_pair(t.head, t.rel)];
        ++c.rt[pack_pair(t.rel, t.tail)];
    }
    return c;
}

enum class Category { one_to_n, n_to_1, n_to_n, other };

inline const char* to_string(Category c) {
    switch (c) {
        case Category::one_to_n: return "1-to-N";
        case Category::n_to_1: return "N-to-1";
        case Category::n_to_n: return "N-to-N";
        case Category::other: return "other";
    }
    return "?";
}

inline Category classify_triple(const Triple& t, const PairCounts& counts) {
    const bool hr_many = counts.c_hr(t.head, t.rel) > 1;
    const bool rt_many = counts.c_rt(t.rel, t.tail) > 1;
    if (hr_many && !rt_many) return Category::n_to_1;
    if (!hr_many && rt_many) return Category::one_to_n;
    if (hr_many && rt_many) return Category::n_to_n;
    return Category::other;
}

} // namespace ote
