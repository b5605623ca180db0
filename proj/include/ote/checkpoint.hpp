#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "ote/errors.hpp"
#include "ote/kg_data.hpp"
#include "ote/model.hpp"
#include "ote/optim.hpp"

namespace ote {

enum class Stage { pretrain, finetune };

inline const char* to_string(Stage s) { return s == Stage::pretrain ? "pretrain" : "finetune"; }

inline Stage parse_stage(std::string_view s) {
    if (s == "pretrain") return Stage::pretrain;
    if (s == "finetune") return Stage::finetune;
    throw ConfigError("unknown stage: " + std::string(s));
}

// Binary checkpoint layout, all integers and floats little-endian:
//   magic "OTECKPT1" | u32 format | u32 variant | u32 d | u32 d_s | u32 K
//   u32 stage | u64 step | u32 entity_count | u32 relation_count
//   u64 entity_vocab_hash | u64 relation_vocab_hash
//   u32 has_moments | u64 adam_t
//   f32 entities (row-major) | f32 relation matrices | f32 scales
//   [f32 adam m | f32 adam v]  over the same flattened order
inline constexpr char kCheckpointMagic[8] = {'O', 'T', 'E', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointFormat = 1;

struct CheckpointHeader {
    std::uint32_t format = kCheckpointFormat;
    Variant variant = Variant::ote;
    std::uint32_t d = 0;
    std::uint32_t d_s = 0;
    std::uint32_t groups = 0;
    Stage stage = Stage::pretrain;
    std::uint64_t step = 0;
    std::uint32_t entity_count = 0;
    std::uint32_t relation_count = 0;
    std::uint64_t entity_hash = 0;
    std::uint64_t relation_hash = 0;
    bool has_moments = false;
    std::uint64_t adam_t = 0;
};

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

template <class T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is, const std::string& what) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
        throw DataError("checkpoint: truncated while reading " + what);
    return v;
}

template <class Real>
void write_f32_block(std::ostream& os, const std::vector<Real>& xs) {
    for (Real x : xs) write_pod(os, static_cast<float>(x));
}

template <class Real>
void read_f32_block(std::istream& is, std::vector<Real>& xs, std::size_t n,
                    const std::string& what) {
    xs.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        xs[i] = static_cast<Real>(read_pod<float>(is, what));
}

} // namespace detail

// Everything a training stage hands to the next one.
template <class Real>
struct Checkpoint {
    ModelState<Real> state;
    Stage stage = Stage::pretrain;
    std::uint64_t step = 0;
    std::uint64_t entity_hash = 0;
    std::uint64_t relation_hash = 0;
    std::optional<AdamState<Real>> adam;
};

template <class Real>
void save_checkpoint(const Checkpoint<Real>& ckpt, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("checkpoint: cannot open for writing: " + path);
    const ModelState<Real>& st = ckpt.state;
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::write_pod(os, kCheckpointFormat);
    detail::write_pod(os, static_cast<std::uint32_t>(st.cfg.variant));
    detail::write_pod(os, static_cast<std::uint32_t>(st.cfg.d));
    detail::write_pod(os, static_cast<std::uint32_t>(st.cfg.d_s));
    detail::write_pod(os, static_cast<std::uint32_t>(st.cfg.groups()));
    detail::write_pod(os, static_cast<std::uint32_t>(ckpt.stage));
    detail::write_pod(os, ckpt.step);
    detail::write_pod(os, static_cast<std::uint32_t>(st.entities.count));
    detail::write_pod(os, static_cast<std::uint32_t>(st.relations.count));
    detail::write_pod(os, ckpt.entity_hash);
    detail::write_pod(os, ckpt.relation_hash);
    detail::write_pod(os, static_cast<std::uint32_t>(ckpt.adam ? 1 : 0));
    detail::write_pod(os, ckpt.adam ? ckpt.adam->t : std::uint64_t(0));
    detail::write_f32_block(os, st.entities.data);
    detail::write_f32_block(os, st.relations.mats);
    detail::write_f32_block(os, st.relations.scales);
    if (ckpt.adam) {
        if (ckpt.adam->m.size() != st.parameter_count())
            throw InvariantError("checkpoint: optimizer moments do not match parameter count");
        detail::write_f32_block(os, ckpt.adam->m);
        detail::write_f32_block(os, ckpt.adam->v);
    }
    os.flush();
    if (!os) throw DataError("checkpoint: write failed: " + path);
}

inline CheckpointHeader read_checkpoint_header(std::istream& is) {
    char magic[8];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw DataError("checkpoint: bad magic");
    CheckpointHeader h;
    h.format = detail::read_pod<std::uint32_t>(is, "format");
    if (h.format != kCheckpointFormat)
        throw DataError("checkpoint: unsupported format version " + std::to_string(h.format));
    const auto variant_raw = detail::read_pod<std::uint32_t>(is, "variant");
    if (variant_raw > 3) throw DataError("checkpoint: bad variant tag");
    h.variant = static_cast<Variant>(variant_raw);
    h.d = detail::read_pod<std::uint32_t>(is, "d");
    h.d_s = detail::read_pod<std::uint32_t>(is, "d_s");
    h.groups = detail::read_pod<std::uint32_t>(is, "groups");
    const auto stage_raw = detail::read_pod<std::uint32_t>(is, "stage");
    if (stage_raw > 1) throw DataError("checkpoint: bad stage tag");
    h.stage = static_cast<Stage>(stage_raw);
    h.step = detail::read_pod<std::uint64_t>(is, "step");
    h.entity_count = detail::read_pod<std::uint32_t>(is, "entity count");
    h.relation_count = detail::read_pod<std::uint32_t>(is, "relation count");
    h.entity_hash = detail::read_pod<std::uint64_t>(is, "entity hash");
    h.relation_hash = detail::read_pod<std::uint64_t>(is, "relation hash");
    h.has_moments = detail::read_pod<std::uint32_t>(is, "moments flag") != 0;
    h.adam_t = detail::read_pod<std::uint64_t>(is, "adam step");
    if (h.d == 0 || h.d_s == 0 || h.d % h.d_s != 0 || h.groups != h.d / h.d_s)
        throw DataError("checkpoint: inconsistent dimensions in header");
    return h;
}

inline CheckpointHeader read_checkpoint_header(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open: " + path);
    return read_checkpoint_header(is);
}

template <class Real>
Checkpoint<Real> load_checkpoint(const std::string& path, const Vocabulary* expected_vocab) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open: " + path);
    const CheckpointHeader h = read_checkpoint_header(is);
    if (expected_vocab) {
        if (h.entity_hash != expected_vocab->entity_hash() ||
            h.relation_hash != expected_vocab->relation_hash())
            throw DataError("checkpoint: vocabulary hash mismatch (checkpoint was built from a "
                            "different dataset)");
        if (h.entity_count != static_cast<std::uint32_t>(expected_vocab->entity_count()) ||
            h.relation_count != static_cast<std::uint32_t>(expected_vocab->relation_count()))
            throw DataError("checkpoint: vocabulary size mismatch");
    }
    Checkpoint<Real> ckpt;
    ckpt.stage = h.stage;
    ckpt.step = h.step;
    ckpt.entity_hash = h.entity_hash;
    ckpt.relation_hash = h.relation_hash;
    ModelConfig cfg;
    cfg.d = static_cast<int>(h.d);
    cfg.d_s = static_cast<int>(h.d_s);
    cfg.variant = h.variant;
    cfg.validate();
    ckpt.state.cfg = cfg;
    ckpt.state.entities.resize(static_cast<int>(h.entity_count), cfg.d);
    ckpt.state.relations.resize(cfg, static_cast<int>(h.relation_count));
    detail::read_f32_block(is, ckpt.state.entities.data, ckpt.state.entities.data.size(),
                           "entity block");
    detail::read_f32_block(is, ckpt.state.relations.mats, ckpt.state.relations.mats.size(),
                           "relation matrix block");
    detail::read_f32_block(is, ckpt.state.relations.scales, ckpt.state.relations.scales.size(),
                           "scale block");
    if (h.has_moments) {
        AdamState<Real> adam;
        adam.t = h.adam_t;
        detail::read_f32_block(is, adam.m, ckpt.state.parameter_count(), "adam m block");
        detail::read_f32_block(is, adam.v, ckpt.state.parameter_count(), "adam v block");
        ckpt.adam = std::move(adam);
    }
    char extra;
    if (is.read(&extra, 1)) throw DataError("checkpoint: trailing bytes after parameter blocks");
    ckpt.state.version = 1;
    return ckpt;
}

} // namespace ote
