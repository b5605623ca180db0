#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ote/errors.hpp"
#include "ote/gc.hpp"
#include "ote/kg_data.hpp"
#include "ote/model.hpp"
#include "ote/parallel.hpp"

namespace ote {

struct RankResult {
    Triple triple;
    bool tail_direction = true;
    double rank = 0;
    Category category = Category::other;
};

struct MetricAccum {
    std::size_t n = 0;
    double sum_rr = 0;
    std::size_t h1 = 0, h3 = 0, h10 = 0;

    void add(double rank) {
        ++n;
        sum_rr += 1.0 / rank;
        if (rank <= 1.0) ++h1;
        if (rank <= 3.0) ++h3;
        if (rank <= 10.0) ++h10;
    }
    void merge(const MetricAccum& o) {
        n += o.n;
        sum_rr += o.sum_rr;
        h1 += o.h1;
        h3 += o.h3;
        h10 += o.h10;
    }
    double mrr() const { return n ? sum_rr / static_cast<double>(n) : 0.0; }
    double hits1() const { return n ? static_cast<double>(h1) / n : 0.0; }
    double hits3() const { return n ? static_cast<double>(h3) / n : 0.0; }
    double hits10() const { return n ? static_cast<double>(h10) / n : 0.0; }
};

struct EvalReport {
    MetricAccum head, tail, all;
    // [category][0 = head direction, 1 = tail direction]
    std::array<std::array<MetricAccum, 2>, 4> category{};

    const MetricAccum& cat(Category c, int dir) const {
        return category[static_cast<int>(c)][dir];
    }
    MetricAccum cat_merged(Category c) const {
        MetricAccum m = category[static_cast<int>(c)][0];
        m.merge(category[static_cast<int>(c)][1]);
        return m;
    }
    // Hits@10 over both directions: micro averages instances, macro averages
    // the two per-direction rates.
    double cat_micro_h10(Category c) const { return cat_merged(c).hits10(); }
    double cat_macro_h10(Category c) const {
        return 0.5 * (cat(c, 0).hits10() + cat(c, 1).hits10());
    }
};

// Filtered rank of the true entity among all candidates, excluding candidates
// that form a known-true triple in any split (never the query's own entity).
// Tie-averaged: 1 + #{strictly better} + #{tied}/2, lower distance = better.
template <class Real>
double rank_one(const ModelState<Real>& st, const RelationOpsBank<Real>& bank,
                const ContextCache<Real>* cache, const FilterIndex& filter, const Triple& q,
                bool tail_direction) {
    const int K = st.cfg.groups();
    const int ds = st.cfg.d_s;
    const int d = st.cfg.d;
    const EntityId n = st.entities.count;
    const RelationOps<Real>& ops = bank[q.rel];

    std::vector<Real> fixed_proj(d);
    std::vector<Real> cand_proj(d);
    const EntityId true_entity = tail_direction ? q.tail : q.head;
    const EntityId anchor = tail_direction ? q.head : q.tail;
    const std::vector<EntityId>* known = tail_direction
                                             ? filter.true_tails(q.head, q.rel)
                                             : filter.true_heads(q.rel, q.tail);

    if (tail_direction)
        ops.forward(st.entities.row(anchor), std::span<Real>(fixed_proj));
    else
        ops.reverse(st.entities.row(anchor), std::span<Real>(fixed_proj));
    const std::span<const Real> anchor_row = st.entities.row(anchor);
    std::span<const Real> anchor_rep;
    if (cache) anchor_rep = tail_direction ? cache->head_repr(anchor) : cache->tail_repr(anchor);

    auto score = [&](EntityId cand) -> double {
        const std::span<const Real> cand_row = st.entities.row(cand);
        double s;
        if (tail_direction) {
            ops.reverse(cand_row, std::span<Real>(cand_proj));
            s = static_cast<double>(group_distance(K, ds, fixed_proj.data(), cand_row.data())) +
                static_cast<double>(group_distance(K, ds, cand_proj.data(), anchor_row.data()));
            if (cache)
                s += static_cast<double>(
                         group_distance(K, ds, cand_proj.data(), anchor_rep.data())) +
                     static_cast<double>(group_distance(K, ds, fixed_proj.data(),
                                                        cache->tail_repr(cand).data()));
        } else {
            ops.forward(cand_row, std::span<Real>(cand_proj));
            s = static_cast<double>(group_distance(K, ds, cand_proj.data(), anchor_row.data())) +
                static_cast<double>(group_distance(K, ds, fixed_proj.data(), cand_row.data()));
            if (cache)
                s += static_cast<double>(group_distance(K, ds, fixed_proj.data(),
                                                        cache->head_repr(cand).data())) +
                     static_cast<double>(
                         group_distance(K, ds, cand_proj.data(), anchor_rep.data()));
        }
        return s;
    };

    const double true_score = score(true_entity);
    std::size_t better = 0, tied = 0;
    for (EntityId cand = 0; cand < n; ++cand) {
        if (cand == true_entity) continue;
        if (known && std::binary_search(known->begin(), known->end(), cand)) continue;
        const double s = score(cand);
        if (s < true_score)
            ++better;
        else if (s == true_score)
            ++tied;
    }
    return 1.0 + static_cast<double>(better) + static_cast<double>(tied) / 2.0;
}

template <class Real>
RankResult rank_triple(const ModelState<Real>& st, const RelationOpsBank<Real>& bank,
                       const ContextCache<Real>* cache, const FilterIndex& filter,
                       const Triple& q, bool tail_direction,
                       const PairCounts* counts = nullptr) {
    RankResult r;
    r.triple = q;
    r.tail_direction = tail_direction;
    r.rank = rank_one(st, bank, cache, filter, q, tail_direction);
    r.category = counts ? classify_triple(q, *counts) : Category::other;
    return r;
}

// Both directions for every triple of the split; aggregation is a plain sum,
// so the result is independent of triple order and thread count.
template <class Real>
EvalReport evaluate(const ModelState<Real>& st, const RelationOpsBank<Real>& bank,
                    const ContextCache<Real>* cache, const TripleStore& split,
                    const FilterIndex& filter, const PairCounts& counts, int threads = 1) {
    const std::size_t m = split.size();
    std::vector<double> head_ranks(m), tail_ranks(m);
    parallel_for(m, threads, [&](std::size_t i) {
        head_ranks[i] = rank_one(st, bank, cache, filter, split.triples[i], false);
        tail_ranks[i] = rank_one(st, bank, cache, filter, split.triples[i], true);
    });
    EvalReport rep;
    for (std::size_t i = 0; i < m; ++i) {
        const Category c = classify_triple(split.triples[i], counts);
        rep.head.add(head_ranks[i]);
        rep.tail.add(tail_ranks[i]);
        rep.all.add(head_ranks[i]);
        rep.all.add(tail_ranks[i]);
        rep.category[static_cast<int>(c)][0].add(head_ranks[i]);
        rep.category[static_cast<int>(c)][1].add(tail_ranks[i]);
    }
    return rep;
}

inline const std::array<Category, 4>& all_categories() {
    static const std::array<Category, 4> cats = {Category::one_to_n, Category::n_to_1,
                                                 Category::n_to_n, Category::other};
    return cats;
}

inline std::string render_text(const EvalReport& r) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "direction  count    MRR     H@1     H@3     H@10\n";
    auto row = [&](const char* name, const MetricAccum& m) {
        os << std::left << std::setw(10) << name << ' ' << std::right << std::setw(7) << m.n
           << ' ' << std::setw(6) << m.mrr() << ' ' << std::setw(7) << m.hits1() << ' '
           << std::setw(7) << m.hits3() << ' ' << std::setw(7) << m.hits10() << '\n';
    };
    row("head", r.head);
    row("tail", r.tail);
    row("all", r.all);
    os << "\ncategory   direction  count    H@10\n";
    for (Category c : all_categories()) {
        for (int dir = 0; dir < 2; ++dir) {
            const MetricAccum& m = r.cat(c, dir);
            os << std::left << std::setw(10) << to_string(c) << ' ' << std::setw(10)
               << (dir == 0 ? "head" : "tail") << ' ' << std::right << std::setw(7) << m.n << ' '
               << std::setw(7) << m.hits10() << '\n';
        }
        os << std::left << std::setw(10) << to_string(c) << ' ' << std::setw(10) << "a-micro"
           << ' ' << std::right << std::setw(7) << r.cat_merged(c).n << ' ' << std::setw(7)
           << r.cat_micro_h10(c) << '\n';
        os << std::left << std::setw(10) << to_string(c) << ' ' << std::setw(10) << "a-macro"
           << ' ' << std::right << std::setw(7) << r.cat_merged(c).n << ' ' << std::setw(7)
           << r.cat_macro_h10(c) << '\n';
    }
    return os.str();
}

// One `key value` pair per line; floats carry max_digits10 so a parse-back
// reproduces the exact doubles.
inline std::string render_structured(const EvalReport& r) {
    std::ostringstream os;
    os << std::setprecision(17);
    auto block = [&](const std::string& prefix, const MetricAccum& m) {
        os << prefix << ".count " << m.n << '\n';
        os << prefix << ".mrr " << m.mrr() << '\n';
        os << prefix << ".h1 " << m.hits1() << '\n';
        os << prefix << ".h3 " << m.hits3() << '\n';
        os << prefix << ".h10 " << m.hits10() << '\n';
    };
    block("overall", r.all);
    block("head", r.head);
    block("tail", r.tail);
    for (Category c : all_categories()) {
        const std::string base = std::string("cat.") + to_string(c);
        block(base + ".head", r.cat(c, 0));
        block(base + ".tail", r.cat(c, 1));
        os << base << ".a_micro.h10 " << r.cat_micro_h10(c) << '\n';
        os << base << ".a_macro.h10 " << r.cat_macro_h10(c) << '\n';
    }
    return os.str();
}

inline std::map<std::string, double> parse_structured(std::istream& is) {
    std::map<std::string, double> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const std::size_t sp = line.find(' ');
        if (sp == std::string::npos)
            throw DataError("structured report: malformed line: " + line);
        out[line.substr(0, sp)] = std::stod(line.substr(sp + 1));
    }
    return out;
}

inline std::map<std::string, double> parse_structured(const std::string& text) {
    std::istringstream is(text);
    return parse_structured(is);
}

} // namespace ote
