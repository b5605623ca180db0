#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ote/errors.hpp"
#include "ote/rng.hpp"

namespace ote {

// Finite-difference contract for every trainable parameter block: whatever
// produces the analytic gradients (hand-derived chains here), central
// differences must agree. Runs in 64-bit only.

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    std::size_t worst_block = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;

    bool pass(double tolerance) const { return checked > 0 && max_rel_err < tolerance; }
};

// `loss` re-evaluates the objective from the (mutated) parameter blocks.
// `params` and `analytic` are parallel lists of equally-shaped blocks.
// Above `max_coords` total coordinates, a seeded uniform subset is checked.
inline GradCheckReport check_gradients(const std::function<double()>& loss,
                                       std::span<const std::span<double>> params,
                                       std::span<const std::span<const double>> analytic,
                                       double epsilon = 1e-5, double tolerance = 1e-4,
                                       std::size_t max_coords = 4096,
                                       std::uint64_t seed = 0) {
    if (params.size() != analytic.size())
        throw NumericError("check_gradients: block count mismatch");
    std::size_t total = 0;
    for (std::size_t b = 0; b < params.size(); ++b) {
        if (params[b].size() != analytic[b].size())
            throw NumericError("check_gradients: gradient shape does not mirror parameter shape");
        total += params[b].size();
    }

    std::vector<std::pair<std::size_t, std::size_t>> coords;
    if (total <= max_coords) {
        coords.reserve(total);
        for (std::size_t b = 0; b < params.size(); ++b)
            for (std::size_t i = 0; i < params[b].size(); ++i) coords.emplace_back(b, i);
    } else {
        Rng rng(derive_seed(seed, "grad-check-subset"));
        coords.reserve(max_coords);
        for (std::size_t k = 0; k < max_coords; ++k) {
            std::size_t flat = rng.next_index(total);
            for (std::size_t b = 0; b < params.size(); ++b) {
                if (flat < params[b].size()) {
                    coords.emplace_back(b, flat);
                    break;
                }
                flat -= params[b].size();
            }
        }
    }

    GradCheckReport rep;
    for (auto [b, i] : coords) {
        double& p = params[b][i];
        const double saved = p;
        p = saved + epsilon;
        const double f_plus = loss();
        p = saved - epsilon;
        const double f_minus = loss();
        p = saved;
        if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
            throw NumericError("check_gradients: non-finite loss during finite differences");
        const double numeric = (f_plus - f_minus) / (2.0 * epsilon);
        const double an = analytic[b][i];
        const double denom = std::max({1.0, std::abs(numeric), std::abs(an)});
        const double rel = std::abs(numeric - an) / denom;
        ++rep.checked;
        if (rel > rep.max_rel_err) {
            rep.max_rel_err = rel;
            rep.worst_block = b;
            rep.worst_index = i;
            rep.worst_analytic = an;
            rep.worst_numeric = numeric;
        }
    }
    (void)tolerance;
    return rep;
}

} // namespace ote
