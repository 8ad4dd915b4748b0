#pragma once

#include "sparsecl/errors.hpp"
#include "sparsecl/score_stats.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <iterator>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace sparsecl {

/// Minimizer of 1/2 w'Jw - w'diag(J) + lambda ||w||_1 at one lambda.
template <typename Scalar>
struct CompositionRule {
    using VectorType = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    Scalar lambda = 0;
    VectorType weights;             // zero off active_set
    std::vector<Index> active_set;  // ascending
    std::vector<int> signs;         // aligned with active_set
    Scalar objective = 0;

    Index size() const noexcept { return weights.size(); }
    Index n_active() const noexcept { return static_cast<Index>(active_set.size()); }
};

enum class EventKind { Start, Enter, Leave, EnterLeave, End };

/// Working-set change applied at a knot: `entered` coordinates become active
/// just below the knot, `left` ones reach zero at the knot and are dropped.
struct PathEvent {
    EventKind kind = EventKind::Start;
    std::vector<Index> entered;
    std::vector<Index> left;
};

template <typename Scalar>
struct PathKnot {
    Scalar lambda = 0;
    CompositionRule<Scalar> rule;    // exact solution at `lambda`
    PathEvent event;
    std::vector<Index> active_below;  // working set on the segment just below `lambda`
    std::vector<int> signs_below;
};

/// Piecewise-linear homotopy of the optimal weights from lambda_start = max diag(J)
/// down to lambda_min. Knot lambdas are strictly decreasing.
template <typename Scalar>
struct SolutionPath {
    using VectorType = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    std::vector<PathKnot<Scalar>> knots;
    Vector theta;
    VectorType diagonal;
    Scalar lambda_start = 0;
    Scalar lambda_min = 0;
    bool truncated = false;  // ended early at a singular entry

    bool empty() const noexcept { return knots.empty(); }
    std::size_t size() const noexcept { return knots.size(); }
};

enum class SolverMethod { Homotopy, CoordinateDescent };

struct SolverOptions {
    SolverMethod method = SolverMethod::Homotopy;
    bool coordinate_descent_fallback = true;
    double cd_tolerance = 1e-12;
    int cd_max_sweeps = 200000;
    double kkt_tolerance = 1e-9;       // relative to max diag(J)
    double tie_tolerance = 1e-10;      // relative to lambda_start
    double singular_tolerance = 1e-10; // Schur complement relative to J_jj
    bool stop_at_singular_entry = false; // end the path instead of throwing
};

template <typename Scalar, typename DerivedJ, typename DerivedW>
Scalar penalized_objective(const Eigen::MatrixBase<DerivedJ>& j, const Eigen::MatrixBase<DerivedW>& w, Scalar lambda) {
    return Scalar(0.5) * w.dot(j * w) - w.dot(j.diagonal()) + lambda * w.template lpNorm<1>();
}

template <typename Scalar>
Scalar penalized_objective(const ScoreCovariance<Scalar>& j, const typename CompositionRule<Scalar>::VectorType& w,
                           Scalar lambda) {
    return penalized_objective<Scalar>(j.matrix(), w, lambda);
}

/// Builds a rule from dense weights; exact zeros define the inactive set.
template <typename Scalar>
CompositionRule<Scalar> rule_from_weights(const ScoreCovariance<Scalar>& j,
                                          typename CompositionRule<Scalar>::VectorType weights, Scalar lambda) {
    CompositionRule<Scalar> rule;
    rule.lambda = lambda;
    for (Index k = 0; k < weights.size(); ++k)
        if (weights(k) != Scalar(0)) {
            rule.active_set.push_back(k);
            rule.signs.push_back(weights(k) > Scalar(0) ? 1 : -1);
        }
    rule.objective = penalized_objective(j, weights, lambda);
    rule.weights = std::move(weights);
    return rule;
}

template <typename Scalar>
CompositionRule<Scalar> zero_rule(const ScoreCovariance<Scalar>& j, Scalar lambda) {
    return rule_from_weights(j, CompositionRule<Scalar>::VectorType::Zero(j.size()).eval(), lambda);
}

/// KKT residual check: |(Jw)_j - J_jj + lambda sign(w_j)| <= tol on the active
/// set and |(Jw)_j - J_jj| <= lambda + tol elsewhere.
template <typename Scalar>
bool kkt_verify(const ScoreCovariance<Scalar>& j, Scalar lambda, const CompositionRule<Scalar>& rule, Scalar tol) {
    if (rule.weights.size() != j.size()) return false;
    const auto grad = (j.matrix() * rule.weights - j.diagonal()).eval();
    for (Index k = 0; k < j.size(); ++k) {
        const Scalar w = rule.weights(k);
        if (w != Scalar(0)) {
            const Scalar s = w > Scalar(0) ? Scalar(1) : Scalar(-1);
            if (!(std::abs(grad(k) + lambda * s) <= tol)) return false;
        } else if (!(std::abs(grad(k)) <= lambda + tol)) {
            return false;
        }
    }
    return true;
}

template <typename Scalar>
Scalar default_kkt_tolerance(const ScoreCovariance<Scalar>& j, const SolverOptions& options = {}) {
    const Scalar top = j.size() ? j.diagonal().maxCoeff() : Scalar(0);
    return Scalar(options.kkt_tolerance) * std::max(top, std::numeric_limits<Scalar>::min());
}

namespace detail {

inline std::string format_set(const std::vector<Index>& set) {
    std::ostringstream os;
    os << "{";
    for (std::size_t i = 0; i < set.size(); ++i) os << (i ? "," : "") << set[i];
    os << "}";
    return os.str();
}

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Solves J_E x = rhs, throwing ConditioningError when J_E is numerically singular.
template <typename Scalar>
Vec<Scalar> solve_active_system(const Mat<Scalar>& j, const std::vector<Index>& active, const Vec<Scalar>& rhs,
                                double singular_tolerance) {
    const auto k = static_cast<Index>(active.size());
    Mat<Scalar> sub(k, k);
    for (Index r = 0; r < k; ++r)
        for (Index c = 0; c < k; ++c) sub(r, c) = j(active[static_cast<std::size_t>(r)], active[static_cast<std::size_t>(c)]);
    Eigen::LDLT<Mat<Scalar>> ldlt(sub);
    const Vec<Scalar> piv = ldlt.vectorD().cwiseAbs();
    const Scalar top = sub.diagonal().cwiseAbs().maxCoeff();
    if (ldlt.info() != Eigen::Success || !(piv.minCoeff() > Scalar(singular_tolerance) * top))
        throw ConditioningError("active-set system is numerically singular for set " + format_set(active));
    return ldlt.solve(rhs);
}

/// Inverse of J restricted to an ordered working set, maintained by bordering.
template <typename Scalar>
class ActiveInverse {
public:
    explicit ActiveInverse(const Mat<Scalar>& j) : j_(&j) {}

    const std::vector<Index>& set() const noexcept { return set_; }
    const Mat<Scalar>& inverse() const noexcept { return inv_; }
    Index size() const noexcept { return static_cast<Index>(set_.size()); }

    /// Schur complement of adding `idx`; non-positive means singular.
    Scalar schur(Index idx) const {
        if (set_.empty()) return (*j_)(idx, idx);
        const Vec<Scalar> b = column(idx);
        return (*j_)(idx, idx) - b.dot(inv_ * b);
    }

    void add(Index idx) {
        const Index k = size();
        Mat<Scalar> next(k + 1, k + 1);
        if (k == 0) {
            next(0, 0) = Scalar(1) / (*j_)(idx, idx);
        } else {
            const Vec<Scalar> b = column(idx);
            const Vec<Scalar> u = inv_ * b;
            const Scalar s = (*j_)(idx, idx) - b.dot(u);
            next.topLeftCorner(k, k) = inv_ + u * u.transpose() / s;
            next.topRightCorner(k, 1) = -u / s;
            next.bottomLeftCorner(1, k) = -u.transpose() / s;
            next(k, k) = Scalar(1) / s;
        }
        inv_ = std::move(next);
        set_.push_back(idx);
        ++updates_;
    }

    void remove(Index idx) {
        const auto it = std::find(set_.begin(), set_.end(), idx);
        const auto t = static_cast<Index>(it - set_.begin());
        const Index k = size();
        Mat<Scalar> p = inv_;
        // move position t to the end, then take the Schur complement
        std::vector<Index> order;
        for (Index r = 0; r < k; ++r)
            if (r != t) order.push_back(r);
        order.push_back(t);
        Mat<Scalar> q(k, k);
        for (Index r = 0; r < k; ++r)
            for (Index c = 0; c < k; ++c) q(r, c) = p(order[static_cast<std::size_t>(r)], order[static_cast<std::size_t>(c)]);
        inv_ = q.topLeftCorner(k - 1, k - 1) - q.topRightCorner(k - 1, 1) * q.bottomLeftCorner(1, k - 1) / q(k - 1, k - 1);
        set_.erase(it);
        ++updates_;
    }

    /// Rebuilds the inverse from scratch when the bordered updates have drifted.
    void refresh_if_needed() {
        if (set_.empty() || updates_ < 8) return;
        const Index k = size();
        Mat<Scalar> sub(k, k);
        for (Index r = 0; r < k; ++r)
            for (Index c = 0; c < k; ++c) sub(r, c) = (*j_)(set_[static_cast<std::size_t>(r)], set_[static_cast<std::size_t>(c)]);
        const Vec<Scalar> probe = Vec<Scalar>::Ones(k);
        const Scalar residual = (sub * (inv_ * probe) - probe).cwiseAbs().maxCoeff();
        updates_ = 0;
        if (residual < Scalar(1e-11)) return;
        // entries were admitted one Schur complement at a time; only a breakdown is fatal here
        Eigen::LDLT<Mat<Scalar>> ldlt(sub);
        if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > Scalar(0)))
            throw ConditioningError("active-set system is numerically singular for set " + format_set(sorted()));
        inv_ = ldlt.solve(Mat<Scalar>::Identity(k, k));
    }

    std::vector<Index> sorted() const {
        std::vector<Index> s = set_;
        std::sort(s.begin(), s.end());
        return s;
    }

private:
    Vec<Scalar> column(Index idx) const {
        Vec<Scalar> b(size());
        for (Index r = 0; r < size(); ++r) b(r) = (*j_)(set_[static_cast<std::size_t>(r)], idx);
        return b;
    }

    const Mat<Scalar>* j_;
    std::vector<Index> set_;
    Mat<Scalar> inv_;
    int updates_ = 0;
};

template <typename Scalar>
[[noreturn]] void throw_singular_entry(const ScoreCovariance<Scalar>& j, Scalar lambda_min, std::vector<Index> set) {
    const Scalar eta = eta_threshold(j);
    std::sort(set.begin(), set.end());
    if (lambda_min <= eta) {
        std::ostringstream os;
        os << "lambda_min = " << static_cast<double>(lambda_min) << " does not exceed eta = " << static_cast<double>(eta)
           << " on a singular score covariance; the penalized criterion has no unique minimizer";
        throw IllPosedError(os.str());
    }
    throw ConditioningError("active-set system is numerically singular for set " + format_set(set));
}

}  // namespace detail

/// Closed-form weights on a given active set and sign pattern:
/// w_E = (J_E)^{-1} [diag(J_E) - lambda sign_E], zero elsewhere.
template <typename Scalar>
typename CompositionRule<Scalar>::VectorType active_set_refit(const ScoreCovariance<Scalar>& j,
                                                              const std::vector<Index>& active,
                                                              const std::vector<int>& signs, Scalar lambda,
                                                              double singular_tolerance = 1e-13) {
    using VectorType = typename CompositionRule<Scalar>::VectorType;
    if (active.size() != signs.size()) throw ConfigError("active set and sign pattern differ in length");
    VectorType w = VectorType::Zero(j.size());
    if (active.empty()) return w;
    VectorType rhs(static_cast<Index>(active.size()));
    for (std::size_t r = 0; r < active.size(); ++r) {
        if (active[r] < 0 || active[r] >= j.size()) throw ConfigError("active index out of range");
        rhs(static_cast<Index>(r)) = j.diagonal()(active[r]) - lambda * Scalar(signs[r]);
    }
    const VectorType sol = detail::solve_active_system<Scalar>(j.matrix(), active, rhs, singular_tolerance);
    for (std::size_t r = 0; r < active.size(); ++r) w(active[r]) = sol(static_cast<Index>(r));
    return w;
}

/// Homotopy over lambda from max diag(J) down to lambda_min.
///
/// Coordinates enter when their KKT bound |(diag J - Jw)_j| <= lambda becomes
/// tight and leave when their weight crosses zero. Ties enter together unless
/// the joint system is singular or inconsistent, in which case the lowest index
/// enters first.
template <typename Scalar>
SolutionPath<Scalar> solution_path(const ScoreCovariance<Scalar>& j, Scalar lambda_min, const SolverOptions& options = {}) {
    using VectorType = detail::Vec<Scalar>;
    if (!(lambda_min >= Scalar(0))) throw ConfigError("lambda_min must be non-negative");
    const Index m = j.size();
    const auto& jm = j.matrix();
    const VectorType& d = j.diagonal();

    SolutionPath<Scalar> path;
    path.theta = j.theta();
    path.diagonal = d;
    path.lambda_min = lambda_min;
    path.lambda_start = m ? d.maxCoeff() : Scalar(0);

    auto make_rule = [&](const VectorType& w, Scalar lambda) { return rule_from_weights(j, w, lambda); };

    if (m == 0 || path.lambda_start <= lambda_min || !(path.lambda_start > Scalar(0))) {
        const Scalar at = std::max(path.lambda_start, lambda_min);
        PathKnot<Scalar> knot{at, make_rule(VectorType::Zero(m), at), {EventKind::Start, {}, {}}, {}, {}};
        path.knots.push_back(knot);
        if (at > lambda_min) {
            PathKnot<Scalar> end{lambda_min, make_rule(VectorType::Zero(m), lambda_min), {EventKind::End, {}, {}}, {}, {}};
            path.knots.push_back(end);
        }
        return path;
    }

    const Scalar tie = Scalar(options.tie_tolerance) * path.lambda_start;
    detail::ActiveInverse<Scalar> active(jm);
    std::vector<Scalar> sign(static_cast<std::size_t>(m), Scalar(0));
    std::vector<char> in_set(static_cast<std::size_t>(m), 0);
    std::map<std::vector<Index>, long> visits;
    const long visit_limit = static_cast<long>(m) * static_cast<long>(m);

    // Tries to add `candidates` (with their signs) jointly; falls back to the lowest
    // index alone when the joint system is singular or an entrant would move the wrong way.
    bool blocked = false;
    auto enter = [&](std::vector<std::pair<Index, Scalar>> candidates) -> std::vector<Index> {
        std::sort(candidates.begin(), candidates.end(), [](auto& a, auto& b) { return a.first < b.first; });
        auto attempt = [&](std::size_t count) -> bool {
            if (active.size() + Index(count) > j.rank_bound()) return false;
            detail::ActiveInverse<Scalar> trial = active;
            for (std::size_t c = 0; c < count; ++c) {
                const Index idx = candidates[c].first;
                const Scalar s = trial.schur(idx);
                if (!(s > Scalar(options.singular_tolerance) * std::max(jm(idx, idx), std::numeric_limits<Scalar>::min())))
                    return false;
                trial.add(idx);
            }
            if (count > 1) {
                VectorType sv(trial.size());
                for (Index r = 0; r < trial.size(); ++r) {
                    const Index idx = trial.set()[static_cast<std::size_t>(r)];
                    sv(r) = in_set[static_cast<std::size_t>(idx)] ? sign[static_cast<std::size_t>(idx)] : Scalar(0);
                }
                for (std::size_t c = 0; c < count; ++c) sv(trial.size() - Index(count) + Index(c)) = candidates[c].second;
                const VectorType b = trial.inverse() * sv;
                for (std::size_t c = 0; c < count; ++c)
                    if (!(b(trial.size() - Index(count) + Index(c)) * candidates[c].second > Scalar(0))) return false;
            }
            active = std::move(trial);
            return true;
        };
        std::size_t count = candidates.size();
        if (!attempt(count)) {
            count = 1;
            if (!attempt(count)) {
                if (options.stop_at_singular_entry) {
                    blocked = true;
                    return {};
                }
                std::vector<Index> set = active.set();
                set.push_back(candidates.front().first);
                detail::throw_singular_entry(j, lambda_min, set);
            }
        }
        std::vector<Index> added;
        for (std::size_t c = 0; c < count; ++c) {
            const Index idx = candidates[c].first;
            sign[static_cast<std::size_t>(idx)] = candidates[c].second;
            in_set[static_cast<std::size_t>(idx)] = 1;
            added.push_back(idx);
        }
        std::sort(added.begin(), added.end());
        return added;
    };

    auto working = [&]() {
        std::vector<Index> set = active.sorted();
        std::vector<int> signs;
        for (Index idx : set) signs.push_back(sign[static_cast<std::size_t>(idx)] > Scalar(0) ? 1 : -1);
        return std::make_pair(set, signs);
    };

    Scalar lambda = path.lambda_start;
    {
        std::vector<std::pair<Index, Scalar>> first;
        for (Index k = 0; k < m; ++k)
            if (d(k) >= lambda - tie) first.emplace_back(k, Scalar(1));
        PathKnot<Scalar> knot;
        knot.lambda = lambda;
        knot.rule = make_rule(VectorType::Zero(m), lambda);
        knot.event.kind = EventKind::Start;
        knot.event.entered = enter(first);
        std::tie(knot.active_below, knot.signs_below) = working();
        path.knots.push_back(std::move(knot));
    }

    // the last entrants made the working set numerically singular: undo them and stop there
    auto truncate_at_last = [&]() {
        auto& last = path.knots.back();
        std::vector<Index> kept;
        std::set_difference(last.active_below.begin(), last.active_below.end(), last.event.entered.begin(),
                            last.event.entered.end(), std::back_inserter(kept));
        std::vector<int> kept_signs;
        for (Index idx : kept) kept_signs.push_back(sign[static_cast<std::size_t>(idx)] > Scalar(0) ? 1 : -1);
        last.active_below = std::move(kept);
        last.signs_below = std::move(kept_signs);
        last.event.entered.clear();
        last.event.kind = EventKind::End;
        path.truncated = true;
        path.lambda_min = last.lambda;
    };
    const Scalar kkt_tol = default_kkt_tolerance(j, options);

    std::vector<Index> changed_last = path.knots.back().event.entered;
    while (true) {
        try {
            active.refresh_if_needed();
        } catch (const ConditioningError&) {
            if (!options.stop_at_singular_entry) throw;
            truncate_at_last();
            break;
        }
        const Index k = active.size();
        const auto& set = active.set();
        VectorType dw(k), sw(k);
        for (Index r = 0; r < k; ++r) {
            const Index idx = set[static_cast<std::size_t>(r)];
            dw(r) = d(idx);
            sw(r) = sign[static_cast<std::size_t>(idx)];
        }
        VectorType a = active.inverse() * dw;  // w_W(lambda) = a - lambda b
        VectorType b = active.inverse() * sw;
        if (k > 0) {
            // one step of iterative refinement against the drift of the bordered inverse
            detail::Mat<Scalar> sub(k, k);
            for (Index r = 0; r < k; ++r)
                for (Index c = 0; c < k; ++c) sub(r, c) = jm(set[static_cast<std::size_t>(r)], set[static_cast<std::size_t>(c)]);
            a += active.inverse() * (dw - sub * a);
            b += active.inverse() * (sw - sub * b);
        }

        // inactive gradients g(lambda) = c + lambda e
        Eigen::Matrix<Scalar, Eigen::Dynamic, 2> ab(k, 2);
        ab.col(0) = a;
        ab.col(1) = b;
        Eigen::Matrix<Scalar, Eigen::Dynamic, 2> ce = Eigen::Matrix<Scalar, Eigen::Dynamic, 2>::Zero(m, 2);
        if (k > 0) {
            detail::Mat<Scalar> cols(m, k);
            for (Index r = 0; r < k; ++r) cols.col(r) = jm.col(set[static_cast<std::size_t>(r)]);
            ce = cols * ab;
        }

        const Scalar margin = tie;
        auto recently_changed = [&](Index idx) {
            return std::find(changed_last.begin(), changed_last.end(), idx) != changed_last.end();
        };
        Scalar next = -std::numeric_limits<Scalar>::infinity();
        std::vector<std::pair<Index, Scalar>> hits;  // (index, sign for entries; 0 for leaves)
        auto consider = [&](Index idx, Scalar at, Scalar s) {
            if (!(at < lambda - margin) || !(at >= Scalar(0)) || !std::isfinite(static_cast<double>(at))) return;
            if (recently_changed(idx) && at > lambda - Scalar(1e3) * margin) return;
            if (at > next + tie) {
                next = at;
                hits.clear();
                hits.emplace_back(idx, s);
            } else if (at >= next - tie) {
                hits.emplace_back(idx, s);
                next = std::max(next, at);
            }
        };
        for (Index idx = 0; idx < m; ++idx) {
            if (in_set[static_cast<std::size_t>(idx)]) continue;
            const Scalar c = d(idx) - ce(idx, 0);
            const Scalar e = ce(idx, 1);
            if (Scalar(1) - e > Scalar(0)) consider(idx, c / (Scalar(1) - e), Scalar(1));
            if (Scalar(1) + e > Scalar(0)) consider(idx, -c / (Scalar(1) + e), Scalar(-1));
        }
        for (Index r = 0; r < k; ++r)
            if (b(r) != Scalar(0)) consider(set[static_cast<std::size_t>(r)], a(r) / b(r), Scalar(0));

        auto weights_at = [&](Scalar at, const std::vector<Index>& zeroed) {
            VectorType w = VectorType::Zero(m);
            for (Index r = 0; r < k; ++r) w(set[static_cast<std::size_t>(r)]) = a(r) - at * b(r);
            for (Index idx : zeroed) w(idx) = Scalar(0);
            return w;
        };

        if (hits.empty() || next <= lambda_min) {
            PathKnot<Scalar> knot;
            knot.lambda = lambda_min;
            auto [ws, signs] = working();
            VectorType w = weights_at(lambda_min, {});
            try {
                w = active_set_refit(j, ws, signs, lambda_min);
            } catch (const ConditioningError&) {
            }
            knot.rule = make_rule(w, lambda_min);
            knot.event.kind = EventKind::End;
            knot.active_below = ws;
            knot.signs_below = signs;
            path.knots.push_back(std::move(knot));
            break;
        }

        std::vector<std::pair<Index, Scalar>> entering;
        std::vector<Index> leaving;
        for (const auto& [idx, s] : hits) {
            if (in_set[static_cast<std::size_t>(idx)])
                leaving.push_back(idx);
            else
                entering.emplace_back(idx, s);
        }
        std::sort(leaving.begin(), leaving.end());

        PathKnot<Scalar> knot;
        knot.lambda = next;
        knot.rule = make_rule(weights_at(next, leaving), next);
        if (!kkt_verify(j, next, knot.rule, kkt_tol)) {
            if (!options.stop_at_singular_entry)
                throw ConditioningError("homotopy lost accuracy on set " + detail::format_set(active.sorted()) +
                                        " at lambda " + std::to_string(static_cast<double>(next)));
            truncate_at_last();
            break;
        }
        for (Index idx : leaving) {
            active.remove(idx);
            in_set[static_cast<std::size_t>(idx)] = 0;
            sign[static_cast<std::size_t>(idx)] = Scalar(0);
        }
        knot.event.left = leaving;
        if (!entering.empty()) knot.event.entered = enter(entering);
        if (blocked) {
            knot.event.kind = EventKind::End;
            std::tie(knot.active_below, knot.signs_below) = working();
            path.truncated = true;
            path.lambda_min = next;
            path.knots.push_back(std::move(knot));
            break;
        }
        knot.event.kind = knot.event.entered.empty() ? EventKind::Leave
                          : knot.event.left.empty()  ? EventKind::Enter
                                                     : EventKind::EnterLeave;
        std::tie(knot.active_below, knot.signs_below) = working();
        if (++visits[knot.active_below] > visit_limit)
            throw CyclingError("homotopy revisited active set " + detail::format_set(knot.active_below) +
                               " more than m^2 times");
        changed_last = knot.event.entered;
        changed_last.insert(changed_last.end(), leaving.begin(), leaving.end());
        lambda = next;
        path.knots.push_back(std::move(knot));
    }
    return path;
}

/// Cyclic coordinate descent with soft-threshold updates.
template <typename Scalar>
CompositionRule<Scalar> coordinate_descent(const ScoreCovariance<Scalar>& j, Scalar lambda,
                                           const SolverOptions& options = {}) {
    using VectorType = detail::Vec<Scalar>;
    const Index m = j.size();
    const auto& jm = j.matrix();
    const VectorType& d = j.diagonal();
    VectorType w = VectorType::Zero(m);
    VectorType jw = VectorType::Zero(m);
    for (int sweep = 0; sweep < options.cd_max_sweeps; ++sweep) {
        Scalar biggest = 0;
        for (Index k = 0; k < m; ++k) {
            const Scalar jkk = jm(k, k);
            Scalar updated = 0;
            if (jkk > Scalar(0)) {
                const Scalar r = d(k) - (jw(k) - jkk * w(k));
                const Scalar mag = std::max(std::abs(r) - lambda, Scalar(0));
                updated = (r > Scalar(0) ? mag : -mag) / jkk;
            }
            const Scalar change = updated - w(k);
            if (change != Scalar(0)) {
                jw += jm.col(k) * change;
                w(k) = updated;
                biggest = std::max(biggest, std::abs(change));
            }
        }
        if (biggest < Scalar(options.cd_tolerance) * std::max(Scalar(1), w.cwiseAbs().maxCoeff()))
            return rule_from_weights(j, std::move(w), lambda);
    }
    throw NumericalError("coordinate descent did not converge");
}

/// Minimizer of 1/2 w'Jw - w'diag(J) + lambda ||w||_1.
template <typename Scalar>
CompositionRule<Scalar> solve_weights(const ScoreCovariance<Scalar>& j, Scalar lambda, const SolverOptions& options = {}) {
    if (!(lambda >= Scalar(0))) throw ConfigError("lambda must be non-negative");
    if (j.size() == 0 || lambda >= j.diagonal().maxCoeff()) return zero_rule(j, lambda);
    const Scalar tol = default_kkt_tolerance(j, options);
    if (options.method == SolverMethod::CoordinateDescent) return coordinate_descent(j, lambda, options);
    try {
        const auto path = solution_path(j, lambda, options);
        const auto& end = path.knots.back();
        auto rule = rule_from_weights(j, active_set_refit(j, end.active_below, end.signs_below, lambda), lambda);
        if (kkt_verify(j, lambda, rule, tol)) return rule;
        if (!options.coordinate_descent_fallback)
            throw ConditioningError("homotopy solution fails the KKT check on set " + detail::format_set(rule.active_set));
    } catch (const ConditioningError&) {
        if (!options.coordinate_descent_fallback) throw;
    }
    auto rule = coordinate_descent(j, lambda, options);
    if (!kkt_verify(j, lambda, rule, tol))
        throw ConditioningError("coordinate descent solution fails the KKT check on set " +
                                detail::format_set(rule.active_set));
    return rule;
}

/// Enumerates all 3^m sign patterns (m <= 12) and keeps the feasible KKT point
/// with the lowest objective. Test oracle.
template <typename Scalar>
CompositionRule<Scalar> brute_force_oracle(const ScoreCovariance<Scalar>& j, Scalar lambda) {
    using VectorType = detail::Vec<Scalar>;
    const Index m = j.size();
    if (m > 12) throw ConfigError("brute_force_oracle supports m <= 12");
    const Scalar tol = default_kkt_tolerance(j);
    long total = 1;
    for (Index k = 0; k < m; ++k) total *= 3;
    bool found = false;
    CompositionRule<Scalar> best;
    std::vector<Index> active;
    std::vector<int> signs;
    for (long code = 0; code < total; ++code) {
        active.clear();
        signs.clear();
        long c = code;
        for (Index k = 0; k < m; ++k, c /= 3) {
            const int digit = static_cast<int>(c % 3);
            if (digit == 0) continue;
            active.push_back(k);
            signs.push_back(digit == 1 ? 1 : -1);
        }
        VectorType w;
        try {
            w = active_set_refit(j, active, signs, lambda, 1e-12);
        } catch (const ConditioningError&) {
            continue;
        }
        bool consistent = true;
        for (std::size_t r = 0; r < active.size() && consistent; ++r)
            consistent = w(active[r]) * Scalar(signs[r]) > Scalar(0);
        if (!consistent) continue;
        auto rule = rule_from_weights(j, std::move(w), lambda);
        if (!kkt_verify(j, lambda, rule, tol)) continue;
        if (!found || rule.objective < best.objective) {
            best = std::move(rule);
            found = true;
        }
    }
    if (!found) throw IllPosedError("no sign pattern satisfies the KKT conditions (lambda <= eta?)");
    return best;
}

/// Rule at an arbitrary lambda on the path (linear between knots).
template <typename Scalar>
CompositionRule<Scalar> rule_at(const SolutionPath<Scalar>& path, const ScoreCovariance<Scalar>& j, Scalar lambda) {
    if (path.empty()) throw ConfigError("empty solution path");
    if (lambda >= path.knots.front().lambda) return zero_rule(j, lambda);
    if (lambda < path.knots.back().lambda) throw ConfigError("lambda lies below the end of the solution path");
    for (std::size_t k = 0; k + 1 < path.knots.size(); ++k) {
        const auto& hi = path.knots[k];
        const auto& lo = path.knots[k + 1];
        if (lambda == lo.lambda) return lo.rule;
        if (lambda < hi.lambda && lambda > lo.lambda) {
            try {
                return rule_from_weights(j, active_set_refit(j, hi.active_below, hi.signs_below, lambda), lambda);
            } catch (const ConditioningError&) {
                const Scalar t = (hi.lambda - lambda) / (hi.lambda - lo.lambda);
                detail::Vec<Scalar> w = (Scalar(1) - t) * hi.rule.weights + t * lo.rule.weights;
                return rule_from_weights(j, std::move(w), lambda);
            }
        }
    }
    return path.knots.back().rule;
}

}  // namespace sparsecl
