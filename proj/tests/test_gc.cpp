#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include "ote/gc.hpp"
#include "ote/kg_data.hpp"
#include "ote/model.hpp"
#include "ote/rng.hpp"

using namespace ote;

namespace {

TripleStore make_store(std::vector<Triple> ts) {
    TripleStore s;
    s.split = "train";
    s.triples = std::move(ts);
    return s;
}

} // namespace

TEST_CASE("neighbor selection returns everything when the cap is not binding") {
    for (int cap : {0, -1, 10, 50}) {
        const auto idx = select_context_neighbors(10, cap, 123);
        if (cap <= 0 || cap >= 10) {
            REQUIRE(idx.size() == 10);
            for (std::uint32_t i = 0; i < 10; ++i) CHECK(idx[i] == i);
        }
    }
}

TEST_CASE("neighbor selection under a binding cap is a sorted uniform subset") {
    const auto idx = select_context_neighbors(100, 16, 7);
    REQUIRE(idx.size() == 16);
    CHECK(std::is_sorted(idx.begin(), idx.end()));
    CHECK(std::set<std::uint32_t>(idx.begin(), idx.end()).size() == 16);
    for (std::uint32_t v : idx) CHECK(v < 100);

    CHECK(select_context_neighbors(100, 16, 7) == idx);
    CHECK(select_context_neighbors(100, 16, 8) != idx);

    // Every position is reachable: over many seeds the union covers 0..99.
    std::set<std::uint32_t> seen;
    for (std::uint64_t s = 0; s < 200; ++s)
        for (std::uint32_t v : select_context_neighbors(100, 16, s)) seen.insert(v);
    CHECK(seen.size() == 100);
}

TEST_CASE("tail context representation is the smoothed projection average") {
    ModelConfig cfg;
    cfg.d = 8;
    cfg.d_s = 4;
    const auto st = init_model<double>(cfg, 5, 2, 6.0, 17);
    const RelationOpsBank<double> bank(st);
    const auto train = make_store({{0, 0, 4}, {1, 1, 4}, {2, 0, 4}});
    const ContextIndex ctx = build_context_index(train, 5);

    const auto repr = context_repr_tail(st, bank, ctx, 4, 0, 0);
    std::vector<double> want(st.entities.row(4).begin(), st.entities.row(4).end());
    std::vector<double> proj(8);
    for (const auto& [h, r] : std::vector<std::pair<EntityId, RelationId>>{{0, 0}, {1, 1}, {2, 0}}) {
        bank[r].forward(st.entities.row(h), std::span<double>(proj));
        for (int i = 0; i < 8; ++i) want[static_cast<std::size_t>(i)] += proj[static_cast<std::size_t>(i)];
    }
    for (auto& x : want) x /= 4.0;
    REQUIRE(repr.size() == 8);
    for (int i = 0; i < 8; ++i)
        CHECK(repr[static_cast<std::size_t>(i)] ==
              Catch::Approx(want[static_cast<std::size_t>(i)]).margin(1e-15));
}

TEST_CASE("context averaging is invariant to training-triple order") {
    ModelConfig cfg;
    cfg.d = 8;
    cfg.d_s = 2;
    const auto st = init_model<double>(cfg, 6, 3, 6.0, 23);
    const RelationOpsBank<double> bank(st);
    std::vector<Triple> ts{{0, 0, 5}, {1, 1, 5}, {2, 2, 5}, {3, 0, 5}, {5, 1, 0}, {5, 2, 1}};
    const ContextIndex a = build_context_index(make_store(ts), 6);
    std::reverse(ts.begin(), ts.end());
    const ContextIndex b = build_context_index(make_store(ts), 6);

    const auto ra = context_repr_tail(st, bank, a, 5, 0, 0);
    const auto rb = context_repr_tail(st, bank, b, 5, 0, 0);
    for (int i = 0; i < 8; ++i)
        CHECK(ra[static_cast<std::size_t>(i)] ==
              Catch::Approx(rb[static_cast<std::size_t>(i)]).margin(1e-15));
    const auto ha = context_repr_head(st, bank, a, 5, 0, 0);
    const auto hb = context_repr_head(st, bank, b, 5, 0, 0);
    for (int i = 0; i < 8; ++i)
        CHECK(ha[static_cast<std::size_t>(i)] ==
              Catch::Approx(hb[static_cast<std::size_t>(i)]).margin(1e-15));
}

TEST_CASE("empty context collapses to twice the two-term distance exactly") {
    ModelConfig cfg;
    cfg.d = 8;
    cfg.d_s = 4;
    const auto st = init_model<double>(cfg, 4, 2, 6.0, 29);
    const RelationOpsBank<double> bank(st);
    // Entity 3 is fully isolated; 0 -> 1 is the only edge.
    const auto train = make_store({{0, 0, 1}});
    const ContextIndex ctx = build_context_index(train, 4);

    const double plain =
        distance_forward(st, bank[1], 3, 3) + distance_backward(st, bank[1], 3, 3);
    CHECK(score_all(st, bank, ctx, 3, 1, 3) == 2.0 * plain);

    // The same collapse through the inference cache.
    ContextCache<double> cache;
    refresh_context_cache(cache, st, bank, ctx);
    CHECK(score_all_cached(st, bank[1], cache, 3, 3) == 2.0 * plain);
}

TEST_CASE("capped online scoring matches the uncapped cache when nothing is dropped") {
    ModelConfig cfg;
    cfg.d = 8;
    cfg.d_s = 2;
    const auto st = init_model<double>(cfg, 6, 3, 6.0, 31);
    const RelationOpsBank<double> bank(st);
    const auto train =
        make_store({{0, 0, 1}, {1, 1, 2}, {2, 2, 3}, {3, 0, 4}, {4, 1, 5}, {5, 2, 0}, {0, 1, 2}});
    const ContextIndex ctx = build_context_index(train, 6);

    ContextCache<double> cache;
    refresh_context_cache(cache, st, bank, ctx);
    for (EntityId h = 0; h < 6; ++h)
        for (EntityId t = 0; t < 6; ++t) {
            const double online = score_all(st, bank, ctx, h, 1, t, 64, 99);
            const double cached = score_all_cached(st, bank[1], cache, h, t);
            CHECK(online == Catch::Approx(cached).margin(1e-12));
        }
}

TEST_CASE("binding cap drops neighbors deterministically per entity") {
    ModelConfig cfg;
    cfg.d = 4;
    cfg.d_s = 2;
    const auto st = init_model<double>(cfg, 8, 1, 6.0, 37);
    const RelationOpsBank<double> bank(st);
    std::vector<Triple> ts;
    for (EntityId h = 0; h < 7; ++h) ts.push_back({h, 0, 7});
    const ContextIndex ctx = build_context_index(make_store(ts), 8);

    const auto full = context_repr_tail(st, bank, ctx, 7, 0, 0);
    const auto capped = context_repr_tail(st, bank, ctx, 7, 3, 5);
    const auto capped2 = context_repr_tail(st, bank, ctx, 7, 3, 5);
    CHECK(capped == capped2);
    bool differs = false;
    for (std::size_t i = 0; i < capped.size(); ++i)
        if (capped[i] != full[i]) differs = true;
    CHECK(differs);
}

TEST_CASE("cache freshness tracks the model version") {
    ModelConfig cfg;
    cfg.d = 4;
    cfg.d_s = 2;
    auto st = init_model<double>(cfg, 3, 1, 6.0, 41);
    const auto train = make_store({{0, 0, 1}, {1, 0, 2}});
    const ContextIndex ctx = build_context_index(train, 3);

    ContextCache<double> cache;
    CHECK_FALSE(cache.fresh(st));
    {
        const RelationOpsBank<double> bank(st);
        refresh_context_cache(cache, st, bank, ctx);
    }
    CHECK(cache.fresh(st));

    const RelationOpsBank<double> stale_bank(st);
    st.bump_version();
    CHECK_FALSE(cache.fresh(st));
    CHECK_THROWS_AS(refresh_context_cache(cache, st, stale_bank, ctx), InvariantError);

    const RelationOpsBank<double> fresh_bank(st);
    refresh_context_cache(cache, st, fresh_bank, ctx);
    CHECK(cache.fresh(st));
}
