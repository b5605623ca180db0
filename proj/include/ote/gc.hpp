#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "ote/errors.hpp"
#include "ote/kg_data.hpp"
#include "ote/model.hpp"
#include "ote/rng.hpp"

namespace ote {

// Uniform subset of {0..total-1} of size cap (ascending), or everything when
// cap is non-positive or not binding. Deterministic in (total, cap, seed).
inline std::vector<std::uint32_t> select_context_neighbors(std::size_t total, int cap,
                                                           std::uint64_t seed) {
    std::vector<std::uint32_t> idx(total);
    std::iota(idx.begin(), idx.end(), 0u);
    if (cap <= 0 || total <= static_cast<std::size_t>(cap)) return idx;
    Rng rng(seed);
    for (std::size_t i = 0; i < static_cast<std::size_t>(cap); ++i) {
        const std::size_t j = i + rng.next_index(total - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(static_cast<std::size_t>(cap));
    std::sort(idx.begin(), idx.end());
    return idx;
}

// Tail-side context representation: the smoothed average of the forward
// projections of all (h', r') pairs pointing into t, plus e_t itself.
template <class Real>
void context_repr_tail_into(const ModelState<Real>& st, const RelationOpsBank<Real>& bank,
                            const ContextIndex& index, EntityId t, int cap, std::uint64_t seed,
                            std::span<Real> out) {
    const int d = st.cfg.d;
    const auto neighbors = index.incoming(t);
    const auto picked =
        select_context_neighbors(neighbors.size(), cap, derive_seed(seed, "ctx-tail", t));
    const std::span<const Real> self = st.entities.row(t);
    for (int i = 0; i < d; ++i) out[i] = self[i];
    std::vector<Real> proj(d);
    for (std::uint32_t pi : picked) {
        const auto& [h2, r2] = neighbors[pi];
        bank[r2].forward(st.entities.row(h2), std::span<Real>(proj));
        for (int i = 0; i < d; ++i) out[i] += proj[i];
    }
    const Real denom = static_cast<Real>(picked.size() + 1);
    for (int i = 0; i < d; ++i) out[i] /= denom;
}

// Head-side context representation: reverse projections of (r', t') pairs
// leaving h, plus e_h.
template <class Real>
void context_repr_head_into(const ModelState<Real>& st, const RelationOpsBank<Real>& bank,
                            const ContextIndex& index, EntityId h, int cap, std::uint64_t seed,
                            std::span<Real> out) {
    const int d = st.cfg.d;
    const auto neighbors = index.outgoing(h);
    const auto picked =
        select_context_neighbors(neighbors.size(), cap, derive_seed(seed, "ctx-head", h));
    const std::span<const Real> self = st.entities.row(h);
    for (int i = 0; i < d; ++i) out[i] = self[i];
    std::vector<Real> proj(d);
    for (std::uint32_t pi : picked) {
        const auto& [r2, t2] = neighbors[pi];
        bank[r2].reverse(st.entities.row(t2), std::span<Real>(proj));
        for (int i = 0; i < d; ++i) out[i] += proj[i];
    }
    const Real denom = static_cast<Real>(picked.size() + 1);
    for (int i = 0; i < d; ++i) out[i] /= denom;
}

template <class Real>
std::vector<Real> context_repr_tail(const ModelState<Real>& st, const RelationOpsBank<Real>& bank,
                                    const ContextIndex& index, EntityId t, int cap = 0,
                                    std::uint64_t seed = 0) {
    std::vector<Real> out(st.cfg.d);
    context_repr_tail_into(st, bank, index, t, cap, seed, std::span<Real>(out));
    return out;
}

template <class Real>
std::vector<Real> context_repr_head(const ModelState<Real>& st, const RelationOpsBank<Real>& bank,
                                    const ContextIndex& index, EntityId h, int cap = 0,
                                    std::uint64_t seed = 0) {
    std::vector<Real> out(st.cfg.d);
    context_repr_head_into(st, bank, index, h, cap, seed, std::span<Real>(out));
    return out;
}

// Sum over groups of ||proj_fwd(h)_g - repr_tail(t)_g||.
template <class Real>
Real distance_context_tail(const ModelState<Real>& st, const RelationOpsBank<Real>& bank,
                           const ContextIndex& index, EntityId h, RelationId r, EntityId t,
                           int cap = 0, std::uint64_t seed = 0) {
    std::vector<Real> proj = project_forward(st, bank[r], h);
    std::vector<Real> repr = context_repr_tail(st, bank, index, t, cap, seed);
    return group_distance(st.cfg.groups(), st.cfg.d_s, proj.data(), repr.data());
}

// Sum over groups of ||proj_bwd(t)_g - repr_head(h)_g||.
template <class Real>
Real distance_context_head(const ModelState<Real>& st, const RelationOpsBank<Real>& bank,
                           const ContextIndex& index, EntityId h, RelationId r, EntityId t,
                           int cap = 0, std::uint64_t seed = 0) {
    std::vector<Real> proj = project_backward(st, bank[r], t);
    std::vector<Real> repr = context_repr_head(st, bank, index, h, cap, seed);
    return group_distance(st.cfg.groups(), st.cfg.d_s, proj.data(), repr.data());
}

// Four-term combined distance. When both neighborhoods are empty the context
// terms collapse onto the plain terms and this equals twice their sum.
template <class Real>
Real score_all(const ModelState<Real>& st, const RelationOpsBank<Real>& bank,
               const ContextIndex& index, EntityId h, RelationId r, EntityId t, int cap = 0,
               std::uint64_t seed = 0) {
    return distance_forward(st, bank[r], h, t) +
           distance_context_head(st, bank, index, h, r, t, cap, seed) +
           distance_backward(st, bank[r], h, t) +
           distance_context_tail(st, bank, index, h, r, t, cap, seed);
}

// Inference-time store of both context representations for every entity,
// valid for exactly one parameter version. Built with the full (uncapped)
// neighborhood.
template <class Real>
struct ContextCache {
    std::uint64_t version = static_cast<std::uint64_t>(-1);
    int count = 0;
    int d = 0;
    std::vector<Real> tail;
    std::vector<Real> head;

    bool fresh(const ModelState<Real>& st) const {
        return version == st.version && count == st.entities.count && d == st.cfg.d;
    }
    std::span<const Real> tail_repr(EntityId e) const {
        return {tail.data() + static_cast<std::size_t>(e) * d, static_cast<std::size_t>(d)};
    }
    std::span<const Real> head_repr(EntityId e) const {
        return {head.data() + static_cast<std::size_t>(e) * d, static_cast<std::size_t>(d)};
    }
};

template <class Real>
void refresh_context_cache(ContextCache<Real>& cache, const ModelState<Real>& st,
                           const RelationOpsBank<Real>& bank, const ContextIndex& index) {
    if (bank.version != st.version)
        throw InvariantError("refresh_context_cache: ops bank is stale");
    const int n = st.entities.count;
    const int d = st.cfg.d;
    cache.count = n;
    cache.d = d;
    cache.tail.resize(static_cast<std::size_t>(n) * d);
    cache.head.resize(static_cast<std::size_t>(n) * d);
    for (EntityId e = 0; e < n; ++e) {
        context_repr_tail_into(st, bank, index, e, 0, 0,
                               {cache.tail.data() + static_cast<std::size_t>(e) * d,
                                static_cast<std::size_t>(d)});
        context_repr_head_into(st, bank, index, e, 0, 0,
                               {cache.head.data() + static_cast<std::size_t>(e) * d,
                                static_cast<std::size_t>(d)});
    }
    cache.version = st.version;
}

// Cached combined distance for evaluation; requires a fresh cache.
template <class Real>
Real score_all_cached(const ModelState<Real>& st, const RelationOps<Real>& ops,
                      const ContextCache<Real>& cache, EntityId h, EntityId t) {
    const int K = st.cfg.groups();
    const int ds = st.cfg.d_s;
    std::vector<Real> fwd = project_forward(st, ops, h);
    std::vector<Real> bwd = project_backward(st, ops, t);
    return group_distance(K, ds, fwd.data(), st.entities.row(t).data()) +
           group_distance(K, ds, bwd.data(), cache.head_repr(h).data()) +
           group_distance(K, ds, bwd.data(), st.entities.row(h).data()) +
           group_distance(K, ds, fwd.data(), cache.tail_repr(t).data());
}

} // namespace ote
