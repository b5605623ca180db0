#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ote/checkpoint.hpp"
#include "ote/errors.hpp"
#include "ote/evaluator.hpp"
#include "ote/gc.hpp"
#include "ote/kg_data.hpp"
#include "ote/model.hpp"
#include "ote/optim.hpp"
#include "ote/parallel.hpp"
#include "ote/rng.hpp"

namespace ote {

struct TrainConfig {
    double lr = 1e-3;
    double gamma = 9.0;
    double alpha = 1.0;
    int n_neg = 256;
    int batch_size = 1024;
    std::int64_t max_steps = 1000;
    std::int64_t valid_interval = 10000;
    int patience = 5;
    Stage stage = Stage::pretrain;
    int neighbor_cap = 64;
    std::uint64_t seed = 0;
    std::uint64_t start_step = 0;
    int threads = 1;
    bool freeze_context_neighbors = false;

    void validate() const {
        if (!(gamma > 0)) throw ConfigError("margin gamma must be positive");
        if (!(alpha >= 0)) throw ConfigError("adversarial temperature alpha must be >= 0");
        if (n_neg < 1) throw ConfigError("n_neg must be at least 1");
        if (batch_size < 1) throw ConfigError("batch size must be at least 1");
        if (max_steps <= 0) throw ConfigError("max steps must be positive");
        if (start_step >= static_cast<std::uint64_t>(max_steps))
            throw ConfigError("start step must be below max steps");
        if (valid_interval <= 0) throw ConfigError("validation interval must be positive");
        if (patience < 1) throw ConfigError("patience must be at least 1");
        if (threads < 1) throw ConfigError("thread count must be at least 1");
    }
};

inline double stable_sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double softplus(double x) {
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// log sigma(x), safe across the whole real line.
inline double log_sigmoid(double x) { return -softplus(-x); }

// Uniform over the n-1 entities other than the corrupted side of `pos`;
// duplicates allowed, draws independent of everything but the seed.
inline std::vector<EntityId> sample_negatives(const Triple& pos, int n_neg, bool tail_mode,
                                              EntityId n_entities, std::uint64_t seed) {
    if (n_entities < 2)
        throw InvariantError("sample_negatives: need at least two entities");
    const EntityId original = tail_mode ? pos.tail : pos.head;
    std::vector<EntityId> out(static_cast<std::size_t>(n_neg));
    Rng rng(seed);
    for (auto& e : out) {
        const auto idx =
            static_cast<EntityId>(rng.next_index(static_cast<std::uint64_t>(n_entities) - 1));
        e = idx >= original ? idx + 1 : idx;
    }
    return out;
}

// Softened-ratio weights over negative distances: w_j proportional to
// exp(-alpha * d_j), max-subtracted. Shift-invariant in the distances;
// alpha = 0 gives uniform weights.
inline std::vector<double> adversarial_weights(std::span<const double> neg_scores, double alpha) {
    std::vector<double> w(neg_scores.size());
    if (neg_scores.empty()) return w;
    double zmax = -neg_scores[0] * alpha;
    for (double d : neg_scores) zmax = std::max(zmax, -alpha * d);
    double total = 0;
    for (std::size_t j = 0; j < w.size(); ++j) {
        w[j] = std::exp(-alpha * neg_scores[j] - zmax);
        total += w[j];
    }
    for (double& x : w) x /= total;
    return w;
}

// Sparse per-sample gradient accumulator, flattened and key-sorted before the
// ordered batch reduction.
template <class Real>
struct SampleGrad {
    const ModelConfig* cfg = nullptr;
    double loss = 0;
    std::unordered_map<EntityId, std::vector<Real>> ent;
    std::unordered_map<RelationId, RelOpsGrad<Real>> rel;

    explicit SampleGrad(const ModelConfig& c) : cfg(&c) {}

    Real* ent_grad(EntityId e) {
        auto [it, fresh] = ent.try_emplace(e);
        if (fresh) it->second.assign(static_cast<std::size_t>(cfg->d), Real(0));
        return it->second.data();
    }
    RelOpsGrad<Real>& rel_grad(RelationId r) {
        auto [it, fresh] = rel.try_emplace(r);
        if (fresh) it->second.resize(*cfg);
        return it->second;
    }
};

// Stage objective for one triple: the two-term distance for pretrain, the
// four-term combined distance (capped contexts) for finetune.
template <class Real>
double triple_score(const ModelState<Real>& st, const RelationOpsBank<Real>& bank,
                    const ContextIndex& ctx, EntityId h, RelationId r, EntityId t, Stage stage,
                    int cap, std::uint64_t ctx_seed) {
    const int K = st.cfg.groups();
    const int ds = st.cfg.d_s;
    const RelationOps<Real>& ops = bank[r];
    std::vector<Real> fwd(st.cfg.d), bwd(st.cfg.d);
    ops.forward(st.entities.row(h), std::span<Real>(fwd));
    ops.reverse(st.entities.row(t), std::span<Real>(bwd));
    double s =
        static_cast<double>(group_distance(K, ds, fwd.data(), st.entities.row(t).data())) +
        static_cast<double>(group_distance(K, ds, bwd.data(), st.entities.row(h).data()));
    if (stage == Stage::finetune) {
        std::vector<Real> rep_h = context_repr_head(st, bank, ctx, h, cap, ctx_seed);
        std::vector<Real> rep_t = context_repr_tail(st, bank, ctx, t, cap, ctx_seed);
        s += static_cast<double>(group_distance(K, ds, bwd.data(), rep_h.data())) +
             static_cast<double>(group_distance(K, ds, fwd.data(), rep_t.data()));
    }
    return s;
}

// Accumulates dscore * d(triple_score)/d(params) into `acc`, recomputing the
// forward pass internally. Context sub-seeds must match the scoring call.
template <class Real>
void triple_score_backward(const ModelState<Real>& st, const RelationOpsBank<Real>& bank,
                           const ContextIndex& ctx, EntityId h, RelationId r, EntityId t,
                           Stage stage, int cap, std::uint64_t ctx_seed, Real dscore,
                           bool freeze_neighbors, SampleGrad<Real>& acc) {
    const int K = st.cfg.groups();
    const int ds = st.cfg.d_s;
    const int d = st.cfg.d;
    const RelationOps<Real>& ops = bank[r];
    std::vector<Real> fwd(d), bwd(d), dfwd(d, Real(0)), dbwd(d, Real(0));
    ops.forward(st.entities.row(h), std::span<Real>(fwd));
    ops.reverse(st.entities.row(t), std::span<Real>(bwd));

    group_distance_backward(K, ds, fwd.data(), st.entities.row(t).data(), dscore, dfwd.data(),
                            acc.ent_grad(t));
    group_distance_backward(K, ds, bwd.data(), st.entities.row(h).data(), dscore, dbwd.data(),
                            acc.ent_grad(h));

    if (stage == Stage::finetune) {
        std::vector<Real> rep_h = context_repr_head(st, bank, ctx, h, cap, ctx_seed);
        std::vector<Real> rep_t = context_repr_tail(st, bank, ctx, t, cap, ctx_seed);
        std::vector<Real> drep_h(d, Real(0)), drep_t(d, Real(0));
        group_distance_backward(K, ds, bwd.data(), rep_h.data(), dscore, dbwd.data(),
                                drep_h.data());
        group_distance_backward(K, ds, fwd.data(), rep_t.data(), dscore, dfwd.data(),
                                drep_t.data());

        // Head-side context: (r', t') pairs leaving h, reverse projections.
        {
            const auto neighbors = ctx.outgoing(h);
            const auto picked = select_context_neighbors(neighbors.size(), cap,
                                                         derive_seed(ctx_seed, "ctx-head", h));
            const Real f = Real(1) / static_cast<Real>(picked.size() + 1);
            Real* dh = acc.ent_grad(h);
            for (int i = 0; i < d; ++i) dh[i] += f * drep_h[i];
            if (!freeze_neighbors) {
                std::vector<Real> proj(d), dproj(d);
                for (std::uint32_t pi : picked) {
                    const auto& [r2, t2] = neighbors[pi];
                    bank[r2].reverse(st.entities.row(t2), std::span<Real>(proj));
                    for (int i = 0; i < d; ++i) dproj[i] = f * drep_h[i];
                    reverse_backward(bank[r2], st.entities.row(t2).data(), proj.data(),
                                     dproj.data(), acc.ent_grad(t2), &acc.rel_grad(r2));
                }
            }
        }
        // Tail-side context: (h', r') pairs pointing into t, forward projections.
        {
            const auto neighbors = ctx.incoming(t);
            const auto picked = select_context_neighbors(neighbors.size(), cap,
                                                         derive_seed(ctx_seed, "ctx-tail", t));
            const Real f = Real(1) / static_cast<Real>(picked.size() + 1);
            Real* dt = acc.ent_grad(t);
            for (int i = 0; i < d; ++i) dt[i] += f * drep_t[i];
            if (!freeze_neighbors) {
                std::vector<Real> proj(d), dproj(d);
                for (std::uint32_t pi : picked) {
                    const auto& [h2, r2] = neighbors[pi];
                    bank[r2].forward(st.entities.row(h2), std::span<Real>(proj));
                    for (int i = 0; i < d; ++i) dproj[i] = f * drep_t[i];
                    forward_backward(bank[r2], st.entities.row(h2).data(), proj.data(),
                                     dproj.data(), acc.ent_grad(h2), &acc.rel_grad(r2));
                }
            }
        }
    }

    forward_backward(ops, st.entities.row(h).data(), fwd.data(), dfwd.data(), acc.ent_grad(h),
                     &acc.rel_grad(r));
    reverse_backward(ops, st.entities.row(t).data(), bwd.data(), dbwd.data(), acc.ent_grad(t),
                     &acc.rel_grad(r));
}

// The adversarial weights of every (sample, direction) slot of one batch.
// Capturing and re-feeding them lets a finite-difference check evaluate the
// objective the gradients actually differentiate (weights are detached).
struct BatchWeights {
    std::vector<std::vector<double>> slots;

    void resize(std::size_t samples) { slots.assign(samples * 2, {}); }
    std::vector<double>& slot(std::size_t sample_idx, int dir) {
        return slots[sample_idx * 2 + static_cast<std::size_t>(dir)];
    }
    const std::vector<double>& slot(std::size_t sample_idx, int dir) const {
        return slots[sample_idx * 2 + static_cast<std::size_t>(dir)];
    }
};

// One positive trained in both corruption directions:
//   L = -sum_j w_j log sigma(d_j - gamma) - log sigma(gamma - d_pos)
// summed over directions, with the adversarial weights treated as constants.
// Gradients are scaled by loss_scale (the 1/batch factor).
template <class Real>
SampleGrad<Real> sample_loss_and_grad(const ModelState<Real>& st, const RelationOpsBank<Real>& bank,
                                      const ContextIndex& ctx, const Triple& pos,
                                      const TrainConfig& tc, std::uint64_t step,
                                      std::uint64_t sample_idx, double loss_scale,
                                      const BatchWeights* frozen_weights = nullptr,
                                      BatchWeights* captured_weights = nullptr) {
    SampleGrad<Real> acc(st.cfg);
    const std::uint64_t ctx_seed = derive_seed(tc.seed, "context", step);
    for (int dir = 0; dir < 2; ++dir) {
        const bool tail_mode = dir == 0;
        const std::vector<EntityId> negs =
            sample_negatives(pos, tc.n_neg, tail_mode, st.entities.count,
                             derive_seed(tc.seed, "negatives", step, sample_idx * 2 + dir));

        const double pos_score = triple_score(st, bank, ctx, pos.head, pos.rel, pos.tail,
                                              tc.stage, tc.neighbor_cap, ctx_seed);
        std::vector<double> neg_scores(negs.size());
        for (std::size_t j = 0; j < negs.size(); ++j) {
            const EntityId hj = tail_mode ? pos.head : negs[j];
            const EntityId tj = tail_mode ? negs[j] : pos.tail;
            neg_scores[j] =
                triple_score(st, bank, ctx, hj, pos.rel, tj, tc.stage, tc.neighbor_cap, ctx_seed);
        }
        const std::vector<double> w = frozen_weights
                                          ? frozen_weights->slot(sample_idx, dir)
                                          : adversarial_weights(neg_scores, tc.alpha);
        if (captured_weights) captured_weights->slot(sample_idx, dir) = w;

        double loss = -log_sigmoid(tc.gamma - pos_score);
        for (std::size_t j = 0; j < negs.size(); ++j)
            loss -= w[j] * log_sigmoid(neg_scores[j] - tc.gamma);
        if (!std::isfinite(loss)) {
            std::ostringstream os;
            os << "non-finite loss at step " << step << " sample " << sample_idx << " ("
               << pos.head << "," << pos.rel << "," << pos.tail << ") pos_score " << pos_score;
            throw NumericError(os.str());
        }
        acc.loss += loss;

        const Real dpos = static_cast<Real>(stable_sigmoid(pos_score - tc.gamma) * loss_scale);
        triple_score_backward(st, bank, ctx, pos.head, pos.rel, pos.tail, tc.stage,
                              tc.neighbor_cap, ctx_seed, dpos, tc.freeze_context_neighbors, acc);
        for (std::size_t j = 0; j < negs.size(); ++j) {
            const EntityId hj = tail_mode ? pos.head : negs[j];
            const EntityId tj = tail_mode ? negs[j] : pos.tail;
            const Real dneg = static_cast<Real>(-w[j] * stable_sigmoid(tc.gamma - neg_scores[j]) *
                                                loss_scale);
            triple_score_backward(st, bank, ctx, hj, pos.rel, tj, tc.stage, tc.neighbor_cap,
                                  ctx_seed, dneg, tc.freeze_context_neighbors, acc);
        }
    }
    return acc;
}

// Dense raw-parameter gradients, laid out exactly like the model tables.
template <class Real>
struct ModelGrads {
    std::vector<Real> ent;
    std::vector<Real> mats;
    std::vector<Real> scales;

    void resize(const ModelState<Real>& st) {
        ent.assign(st.entities.data.size(), Real(0));
        mats.assign(st.relations.mats.size(), Real(0));
        scales.assign(st.relations.scales.size(), Real(0));
    }
};

template <class Real>
struct BatchResult {
    double loss = 0;
    ModelGrads<Real> grads;
};

// Per-sample gradients are computed in parallel against frozen parameters and
// reduced in sample order (entity/relation keys sorted within each sample),
// so the result is bit-identical at any thread count. The orthogonal-factor
// gradients are folded through Gram-Schmidt once per relation at the end.
template <class Real>
BatchResult<Real> batch_loss_and_grad(const ModelState<Real>& st, const ContextIndex& ctx,
                                      std::span<const Triple> positives, const TrainConfig& tc,
                                      std::uint64_t step,
                                      const BatchWeights* frozen_weights = nullptr,
                                      BatchWeights* captured_weights = nullptr) {
    const RelationOpsBank<Real> bank(st, /*keep_workspace=*/true);
    const std::size_t B = positives.size();
    const double loss_scale = 1.0 / static_cast<double>(B);

    if (captured_weights) captured_weights->resize(B);
    std::vector<std::optional<SampleGrad<Real>>> packets(B);
    parallel_for(B, tc.threads, [&](std::size_t i) {
        packets[i] = sample_loss_and_grad(st, bank, ctx, positives[i], tc, step, i, loss_scale,
                                          frozen_weights, captured_weights);
    });

    BatchResult<Real> out;
    out.grads.resize(st);
    std::vector<RelOpsGrad<Real>> rel_acc(st.relations.count);
    std::vector<bool> rel_touched(st.relations.count, false);

    std::vector<EntityId> ent_keys;
    std::vector<RelationId> rel_keys;
    const int d = st.cfg.d;
    for (std::size_t i = 0; i < B; ++i) {
        SampleGrad<Real>& p = *packets[i];
        out.loss += p.loss;
        ent_keys.clear();
        for (const auto& kv : p.ent) ent_keys.push_back(kv.first);
        std::sort(ent_keys.begin(), ent_keys.end());
        for (EntityId e : ent_keys) {
            const std::vector<Real>& g = p.ent.at(e);
            Real* dst = out.grads.ent.data() + static_cast<std::size_t>(e) * d;
            for (int k = 0; k < d; ++k) dst[k] += g[k];
        }
        rel_keys.clear();
        for (const auto& kv : p.rel) rel_keys.push_back(kv.first);
        std::sort(rel_keys.begin(), rel_keys.end());
        for (RelationId r : rel_keys) {
            if (!rel_touched[r]) {
                rel_acc[r].resize(st.cfg);
                rel_touched[r] = true;
            }
            rel_acc[r].add(p.rel.at(r));
        }
        packets[i].reset();
    }
    out.loss *= loss_scale;

    const std::size_t mat_block = st.cfg.mat_block();
    const std::size_t scale_block = st.cfg.scale_block();
    for (RelationId r = 0; r < st.relations.count; ++r) {
        if (!rel_touched[r]) continue;
        fold_relation_grad(st.cfg, bank[r], rel_acc[r],
                           out.grads.mats.data() + static_cast<std::size_t>(r) * mat_block,
                           scale_block ? out.grads.scales.data() +
                                             static_cast<std::size_t>(r) * scale_block
                                       : nullptr);
    }
    return out;
}

// One Adam update over the three parameter sections (moments stored
// concatenated: entities, matrices, scales).
template <class Real>
void adam_step_model(ModelState<Real>& st, const ModelGrads<Real>& g, AdamState<Real>& opt,
                     double lr) {
    const std::size_t E = st.entities.data.size();
    const std::size_t M = st.relations.mats.size();
    const std::size_t S = st.relations.scales.size();
    if (opt.m.size() != E + M + S) throw InvariantError("adam_step_model: moment size mismatch");
    ++opt.t;
    auto mspan = std::span<Real>(opt.m);
    auto vspan = std::span<Real>(opt.v);
    adam_update(std::span<Real>(st.entities.data), std::span<const Real>(g.ent),
                mspan.subspan(0, E), vspan.subspan(0, E), opt.t, lr, opt.beta1, opt.beta2,
                opt.epsilon);
    adam_update(std::span<Real>(st.relations.mats), std::span<const Real>(g.mats),
                mspan.subspan(E, M), vspan.subspan(E, M), opt.t, lr, opt.beta1, opt.beta2,
                opt.epsilon);
    adam_update(std::span<Real>(st.relations.scales), std::span<const Real>(g.scales),
                mspan.subspan(E + M, S), vspan.subspan(E + M, S), opt.t, lr, opt.beta1,
                opt.beta2, opt.epsilon);
    st.bump_version();
}

// Re-initializes any raw matrix that collapsed (determinant under kTauDet, or
// a Gram-Schmidt residual under kTauRepairResidual for orthogonalizing
// variants); returns how many groups were reset. Redraws are seeded by
// (step, relation, group) only.
template <class Real>
int repair_degenerate_relations(ModelState<Real>& st, std::uint64_t seed, std::uint64_t step,
                                std::ostream* log) {
    if (!st.cfg.uses_gram_schmidt() && st.cfg.variant != Variant::lne) return 0;
    const bool orthogonalizes = st.cfg.uses_gram_schmidt();
    const int K = st.cfg.groups();
    const int ds = st.cfg.d_s;
    int repaired = 0;
    auto healthy = [&](const Real* m) {
        if (abs_det(m, ds) < kTauDet) return false;
        return !orthogonalizes || min_gs_residual(m, ds) >= kTauRepairResidual;
    };
    std::vector<Real> q(static_cast<std::size_t>(ds) * ds);
    for (RelationId r = 0; r < st.relations.count; ++r)
        for (int g = 0; g < K; ++g) {
            Real* m = st.relations.mat(r, g);
            if (healthy(m)) continue;
            // The transform only sees the orthonormalized matrix, so when the
            // factorization still goes through, swapping the raw matrix for
            // its own orthonormalization restores conditioning without
            // changing the model. A random redraw is the last resort.
            bool recovered = false;
            if (orthogonalizes && min_gs_residual(m, ds) > kTauGramSchmidt) {
                gram_schmidt(m, ds, q.data());
                std::copy(q.begin(), q.end(), m);
                recovered = healthy(m);
            }
            if (!recovered) {
                Rng rng(derive_seed(seed, "det-repair", step,
                                    (static_cast<std::uint64_t>(r) << 16) |
                                        static_cast<unsigned>(g)));
                for (int attempt = 0; attempt < 100; ++attempt) {
                    for (int i = 0; i < ds * ds; ++i) m[i] = static_cast<Real>(rng.next_normal());
                    if (!healthy(m)) continue;
                    if (orthogonalizes && det_sign(m, ds) < 0)
                        for (int i = 0; i < ds; ++i) m[i * ds + ds - 1] = -m[i * ds + ds - 1];
                    break;
                }
            }
            ++repaired;
            if (log)
                (*log) << "warning: step " << step << ": relation " << r << " group " << g
                       << " near-singular, matrix " << (recovered ? "re-orthonormalized" : "re-initialized")
                       << "\n";
        }
    if (repaired) st.bump_version();
    return repaired;
}

template <class Real>
struct TrainResult {
    Checkpoint<Real> best;
    Checkpoint<Real> last;
    double best_mrr = -1.0;
    std::uint64_t best_step = 0;
    std::vector<double> loss_history;
};

// Batched self-adversarial training with periodic filtered-MRR validation,
// best-checkpoint selection, and early stopping.
template <class Real>
TrainResult<Real> train(ModelState<Real> st, const Dataset& data, const TrainConfig& tc,
                        std::ostream* log = nullptr,
                        const AdamState<Real>* resume_adam = nullptr) {
    tc.validate();
    if (data.train.size() == 0) throw DataError("train: empty training split");

    const ContextIndex ctx = build_context_index(data.train, st.entities.count);
    const FilterIndex filter = build_filter_index(data.train, data.valid, data.test);
    const PairCounts counts = build_pair_counts(data.train);

    AdamState<Real> opt;
    if (resume_adam) {
        opt = *resume_adam;
        if (opt.m.size() != st.parameter_count())
            throw InvariantError("train: resumed optimizer state does not match model");
    } else {
        opt.resize(st.parameter_count());
    }

    TrainResult<Real> result;
    result.loss_history.reserve(static_cast<std::size_t>(tc.max_steps));

    auto run_validation = [&](std::uint64_t step) -> std::pair<double, double> {
        const RelationOpsBank<Real> bank(st);
        ContextCache<Real> cache;
        const ContextCache<Real>* cache_ptr = nullptr;
        if (tc.stage == Stage::finetune) {
            refresh_context_cache(cache, st, bank, ctx);
            cache_ptr = &cache;
        }
        const EvalReport rep =
            evaluate(st, bank, cache_ptr, data.valid, filter, counts, tc.threads);
        (void)step;
        return {rep.all.mrr(), rep.all.hits10()};
    };

    const auto t0 = std::chrono::steady_clock::now();
    double interval_loss = 0;
    std::int64_t interval_n = 0;
    int stale_validations = 0;
    std::uint64_t last_step = tc.start_step;
    std::vector<Triple> batch(static_cast<std::size_t>(tc.batch_size));

    for (std::uint64_t step = tc.start_step + 1; step <= static_cast<std::uint64_t>(tc.max_steps);
         ++step) {
        last_step = step;
        repair_degenerate_relations(st, tc.seed, step, log);

        Rng batch_rng(derive_seed(tc.seed, "batch", step));
        for (auto& t : batch)
            t = data.train.triples[batch_rng.next_index(data.train.size())];

        BatchResult<Real> res;
        try {
            res = batch_loss_and_grad(st, ctx, std::span<const Triple>(batch), tc, step);
        } catch (const NumericError& e) {
            throw NumericError(std::string(e.what()) + " [stage " + to_string(tc.stage) + "]");
        }
        adam_step_model(st, res.grads, opt, tc.lr);

        result.loss_history.push_back(res.loss);
        interval_loss += res.loss;
        ++interval_n;

        const bool at_end = step == static_cast<std::uint64_t>(tc.max_steps);
        if (step % static_cast<std::uint64_t>(tc.valid_interval) == 0 || at_end) {
            const auto [mrr, h10] = run_validation(step);
            const double elapsed =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            if (log) {
                (*log) << "step " << step << " loss " << std::setprecision(6)
                       << (interval_loss / std::max<std::int64_t>(interval_n, 1)) << " valid_mrr "
                       << mrr << " valid_h10 " << h10 << " elapsed_s " << std::setprecision(1)
                       << std::fixed << elapsed << std::defaultfloat << '\n';
            }
            interval_loss = 0;
            interval_n = 0;
            if (mrr > result.best_mrr) {
                result.best_mrr = mrr;
                result.best_step = step;
                result.best.state = st;
                result.best.stage = tc.stage;
                result.best.step = step;
                result.best.entity_hash = data.vocab.entity_hash();
                result.best.relation_hash = data.vocab.relation_hash();
                result.best.adam = opt;
                stale_validations = 0;
            } else {
                ++stale_validations;
                if (stale_validations >= tc.patience) {
                    if (log)
                        (*log) << "early stop at step " << step << " (best MRR "
                               << std::setprecision(6) << result.best_mrr << " at step "
                               << result.best_step << ")\n";
                    break;
                }
            }
            if (at_end) break;
        }
    }

    result.last.state = std::move(st);
    result.last.stage = tc.stage;
    result.last.step = last_step;
    result.last.entity_hash = data.vocab.entity_hash();
    result.last.relation_hash = data.vocab.relation_hash();
    result.last.adam = std::move(opt);
    return result;
}

} // namespace ote
