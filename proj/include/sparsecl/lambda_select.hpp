#pragma once

#include "sparsecl/errors.hpp"
#include "sparsecl/score_stats.hpp"
#include "sparsecl/sparse_solver.hpp"

#include <algorithm>
#include <span>
#include <string_view>
#include <vector>

namespace sparsecl {

enum class SelectionKind { TraceRatio, RelativeTolerance };

inline constexpr double kDefaultTau = 0.9;
inline constexpr double kDefaultDelta = 0.9;

struct SelectionRule {
    SelectionKind kind = SelectionKind::TraceRatio;
    double threshold = kDefaultTau;

    static SelectionRule trace(double tau) { return make(SelectionKind::TraceRatio, tau); }
    static SelectionRule relative(double delta) { return make(SelectionKind::RelativeTolerance, delta); }

private:
    static SelectionRule make(SelectionKind kind, double threshold) {
        if (!(threshold > 0.0 && threshold <= 1.0)) throw ConfigError("selection threshold must lie in (0, 1]");
        return {kind, threshold};
    }
};

SelectionKind selection_kind_from_string(std::string_view name);

template <typename Scalar>
struct GridPoint {
    Scalar lambda = 0;
    CompositionRule<Scalar> rule;
};

template <typename Scalar>
struct Selection {
    Scalar lambda = 0;
    CompositionRule<Scalar> rule;
    Scalar ratio = 0;          // phi(lambda) or the relative trace ratio
    std::size_t grid_index = 0;
    bool fallback = false;     // no grid value met the threshold
};

/// The lambda grid: path knots (plus `extra` values) whose rule has a
/// non-empty active set, in decreasing lambda order.
template <typename Scalar>
std::vector<GridPoint<Scalar>> selection_grid(const SolutionPath<Scalar>& path, const ScoreCovariance<Scalar>& j,
                                              std::span<const Scalar> extra = {}) {
    std::vector<GridPoint<Scalar>> grid;
    for (const auto& knot : path.knots)
        if (!knot.rule.active_set.empty()) grid.push_back({knot.lambda, knot.rule});
    for (Scalar lambda : extra) {
        if (lambda < path.knots.back().lambda) continue;
        auto rule = rule_at(path, j, lambda);
        if (!rule.active_set.empty()) grid.push_back({lambda, std::move(rule)});
    }
    std::sort(grid.begin(), grid.end(), [](const auto& a, const auto& b) { return a.lambda > b.lambda; });
    grid.erase(std::unique(grid.begin(), grid.end(), [](const auto& a, const auto& b) { return a.lambda == b.lambda; }),
               grid.end());
    return grid;
}

template <typename Scalar>
Scalar active_trace(const typename SolutionPath<Scalar>::VectorType& diagonal, const std::vector<Index>& active) {
    Scalar t = 0;
    for (Index k : active) t += diagonal(k);
    return t;
}

/// phi(lambda) = tr{J_active} / tr{J} for every knot of the path.
template <typename Scalar>
std::vector<Scalar> trace_ratio_along_path(const SolutionPath<Scalar>& path, const ScoreCovariance<Scalar>& j) {
    std::vector<Scalar> out;
    out.reserve(path.knots.size());
    for (const auto& knot : path.knots) out.push_back(trace_ratio(j, knot.rule.active_set));
    return out;
}

/// Largest grid lambda with phi(lambda) > tau; the smallest grid lambda with
/// `fallback` set when none qualifies.
template <typename Scalar>
Selection<Scalar> select_lambda_trace(const SolutionPath<Scalar>& path, const ScoreCovariance<Scalar>& j_full,
                                      Scalar tau, std::span<const Scalar> extra = {}) {
    if (!(tau > Scalar(0) && tau <= Scalar(1))) throw ConfigError("tau must lie in (0, 1]");
    if (path.empty()) throw ConfigError("empty solution path");
    if (!(j_full.trace() > Scalar(0))) throw DegenerateError("score covariance has zero trace");
    const auto grid = selection_grid(path, j_full, extra);
    if (grid.empty()) throw DegenerateError("solution path has no knot with a non-empty active set");
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const Scalar phi = trace_ratio(j_full, grid[i].rule.active_set);
        if (phi > tau) return {grid[i].lambda, grid[i].rule, phi, i, false};
    }
    const auto& last = grid.back();
    return {last.lambda, last.rule, trace_ratio(j_full, last.rule.active_set), grid.size() - 1, true};
}

/// Largest grid lambda whose trace ratio to the next smaller grid value
/// exceeds delta; the smallest grid value compares with itself (ratio 1).
template <typename Scalar>
Selection<Scalar> select_lambda_relative(const SolutionPath<Scalar>& path, const ScoreCovariance<Scalar>& j,
                                         Scalar delta, std::span<const Scalar> extra = {}) {
    if (!(delta > Scalar(0) && delta < Scalar(1))) throw ConfigError("delta must lie in (0, 1)");
    if (path.empty()) throw ConfigError("empty solution path");
    const auto grid = selection_grid(path, j, extra);
    if (grid.empty()) throw DegenerateError("solution path has no knot with a non-empty active set");
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const std::size_t next = i + 1 < grid.size() ? i + 1 : i;
        const Scalar num = active_trace<Scalar>(path.diagonal, grid[i].rule.active_set);
        const Scalar den = active_trace<Scalar>(path.diagonal, grid[next].rule.active_set);
        const Scalar ratio = den > Scalar(0) ? num / den : Scalar(0);
        if (ratio > delta) return {grid[i].lambda, grid[i].rule, ratio, i, false};
    }
    const auto& last = grid.back();
    return {last.lambda, last.rule, Scalar(1), grid.size() - 1, true};
}

template <typename Scalar>
Selection<Scalar> select_lambda(const SolutionPath<Scalar>& path, const ScoreCovariance<Scalar>& j,
                                const SelectionRule& rule, std::span<const Scalar> extra = {}) {
    if (rule.kind == SelectionKind::TraceRatio) return select_lambda_trace(path, j, Scalar(rule.threshold), extra);
    return select_lambda_relative(path, j, Scalar(rule.threshold), extra);
}

}  // namespace sparsecl
