/*
   Copyright 2026 The lmmscore Authors

   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.
*/

#include "lmmscore/regions.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

#include <boost/math/special_functions/gamma.hpp>
#include <json.hpp>

#include "lmmscore/errors.hpp"
#include "lmmscore/io.hpp"

namespace lmmscore {

double chi2_cdf(double df, double x) {
    if (!(df > 0.0)) throw InvalidArgument("χ² degrees of freedom must be positive");
    if (!(x > 0.0)) return 0.0;
    if (std::isinf(x)) return 1.0;
    return boost::math::gamma_p(0.5 * df, 0.5 * x);
}

double chi2_quantile(double df, double prob) {
    if (!(df > 0.0)) throw InvalidArgument("χ² degrees of freedom must be positive");
    if (!(prob > 0.0 && prob < 1.0)) throw InvalidArgument("probability must lie in (0, 1)");
    double lo = 0.0;
    double hi = std::max(1.0, df);
    while (chi2_cdf(df, hi) < prob) {
        lo = hi;
        hi *= 2.0;
    }
    while (hi - lo > 1e-10) {
        const double mid = 0.5 * (lo + hi);
        if (chi2_cdf(df, mid) < prob) lo = mid;
        else hi = mid;
    }
    return 0.5 * (lo + hi);
}

std::string_view statistic_name(StatisticKind kind) {
    switch (kind) {
        case StatisticKind::Score: return "scr";
        case StatisticKind::ProfileScore: return "pscr";
        case StatisticKind::RestrictedScore: return "rscr";
        case StatisticKind::Wald: return "wld";
        case StatisticKind::LikelihoodRatio: return "lrt";
    }
    return "?";
}

StatisticKind parse_statistic(std::string_view name) {
    for (const StatisticKind k : {StatisticKind::Score, StatisticKind::ProfileScore, StatisticKind::RestrictedScore,
                                  StatisticKind::Wald, StatisticKind::LikelihoodRatio}) {
        if (statistic_name(k) == name) return k;
    }
    throw InvalidArgument("unknown statistic '" + std::string(name) + "' (expected scr, pscr, rscr, wld or lrt)");
}

namespace {

FreeMask mask_from(const std::vector<std::optional<double>>& fixed, int r) {
    FreeMask free(static_cast<std::size_t>(r), true);
    if (fixed.empty()) return free;
    if (static_cast<int>(fixed.size()) != r) throw DimensionMismatch("fixed-value list must have length r");
    for (int j = 0; j < r; ++j) free[static_cast<std::size_t>(j)] = !fixed[static_cast<std::size_t>(j)].has_value();
    return free;
}

} // namespace

StatisticEvaluator::StatisticEvaluator(const LmmDesign& design, std::shared_ptr<const CovarianceBackend> backend,
                                       std::vector<std::optional<double>> fixed, FitOptions fit_options)
    : structure_(&design.structure()),
      p_(design.p()),
      known_(backend, design.X(), LikelihoodMode::KnownBeta),
      profile_(backend, design.X(), design.p() > 0 ? LikelihoodMode::Profile : LikelihoodMode::KnownBeta),
      restricted_(backend, design.X(), design.p() > 0 ? LikelihoodMode::Restricted : LikelihoodMode::KnownBeta),
      fixed_(std::move(fixed)),
      free_(mask_from(fixed_, design.r())),
      fit_options_(std::move(fit_options)) {
    fit_options_.fixed = fixed_;
}

void StatisticEvaluator::set_data(const Vector& y, std::optional<Vector> known_beta) {
    if (y.size() != known_.n()) throw DimensionMismatch("response length does not match the design");
    if (known_beta && known_beta->size() != p_) throw DimensionMismatch("β has the wrong length");
    y_ = y;
    beta_ = std::move(known_beta);
    fit_.reset();
}

int StatisticEvaluator::df(StatisticKind kind) const {
    const int r = static_cast<int>(std::count(free_.begin(), free_.end(), true));
    return kind == StatisticKind::Score ? r + static_cast<int>(p_) : r;
}

const FitResult& StatisticEvaluator::fit() {
    if (!fit_) fit_ = fit_engine(restricted_, *structure_, y_, fit_options_);
    return *fit_;
}

double StatisticEvaluator::score_quadratic(const LikelihoodEngine& engine, const Vector& y, const Vector& psi) const {
    const EngineEvaluation ev = engine.evaluate(psi, y);
    double t = standardize_score(select(ev.score, free_), select(ev.information, free_)).t;
    if (engine.mode() == LikelihoodMode::KnownBeta && p_ > 0) t += standardize_score(ev.score_beta, ev.info_beta).t;
    return t;
}

double StatisticEvaluator::evaluate(StatisticKind kind, const Vector& psi) {
    if (psi.size() != structure_->r()) throw DimensionMismatch("ψ length must equal r");
    switch (kind) {
        case StatisticKind::Score: {
            if (p_ > 0 && !beta_) throw InvalidArgument("the score statistic needs a known β when p > 0");
            const Vector centered = p_ > 0 ? Vector(y_ - known_.X() * *beta_) : y_;
            return score_quadratic(known_, centered, psi);
        }
        case StatisticKind::ProfileScore: return score_quadratic(profile_, y_, psi);
        case StatisticKind::RestrictedScore: return score_quadratic(restricted_, y_, psi);
        case StatisticKind::Wald: {
            const FitResult& f = fit();
            return wald_statistic(select(psi, free_), select(f.theta_hat.psi, free_), select(f.information, free_));
        }
        case StatisticKind::LikelihoodRatio: {
            const FitResult& f = fit();
            return clamp_lrt(2.0 * (f.loglik_at_hat - restricted_.loglik(psi, y_)));
        }
    }
    throw InvalidArgument("unsupported statistic");
}

MembershipResult region_membership(const LmmDesign& design, const Vector& y, const Vector& psi, const RegionSpec& spec) {
    if (!(spec.alpha > 0.0 && spec.alpha < 1.0)) throw InvalidArgument("alpha must lie in (0, 1)");
    StatisticEvaluator ev(design, make_backend(design), spec.fixed);
    ev.set_data(y, spec.beta);
    MembershipResult out;
    out.df = spec.df > 0 ? spec.df : ev.df(spec.statistic);
    out.critical = chi2_quantile(out.df, 1.0 - spec.alpha);
    out.statistic = ev.evaluate(spec.statistic, psi);
    out.member = out.statistic <= out.critical;
    return out;
}

Vector RegionGrid::point(Index flat) const {
    Vector v(static_cast<Index>(axes.size()));
    for (Index k = static_cast<Index>(axes.size()) - 1; k >= 0; --k) {
        const GridAxis& a = axes[static_cast<std::size_t>(k)];
        v(k) = a.at(flat % a.count);
        flat /= a.count;
    }
    return v;
}

Index RegionGrid::members() const { return std::count(state.begin(), state.end(), CellState::Member); }
Index RegionGrid::infeasible() const { return std::count(state.begin(), state.end(), CellState::Infeasible); }

RegionGrid region_grid(const LmmDesign& design, const Vector& y, std::vector<GridAxis> axes, const RegionSpec& spec) {
    if (static_cast<int>(axes.size()) != design.r()) throw DimensionMismatch("grid needs one axis per parameter");
    if (!(spec.alpha > 0.0 && spec.alpha < 1.0)) throw InvalidArgument("alpha must lie in (0, 1)");
    Index total = 1;
    for (const GridAxis& a : axes) {
        if (a.count < 1) throw InvalidArgument("grid resolution must be positive");
        if (!std::isfinite(a.lo) || !std::isfinite(a.hi) || a.hi < a.lo) throw InvalidArgument("invalid grid box");
        total *= a.count;
    }
    StatisticEvaluator ev(design, make_backend(design), spec.fixed);
    ev.set_data(y, spec.beta);

    RegionGrid grid;
    grid.axes = std::move(axes);
    grid.spec = spec;
    grid.df = spec.df > 0 ? spec.df : ev.df(spec.statistic);
    grid.critical = chi2_quantile(grid.df, 1.0 - spec.alpha);
    grid.statistic.assign(static_cast<std::size_t>(total), std::numeric_limits<double>::quiet_NaN());
    grid.state.assign(static_cast<std::size_t>(total), CellState::Infeasible);
    for (Index i = 0; i < total; ++i) {
        const Vector psi = grid.point(i);
        bool feasible = check_parameter(design.structure(), psi) != ParameterStatus::Outside;
        for (std::size_t j = 0; feasible && j < spec.fixed.size(); ++j) {
            if (spec.fixed[j] && psi(static_cast<Index>(j)) != *spec.fixed[j]) feasible = false;
        }
        if (!feasible) continue;
        try {
            const double t = ev.evaluate(spec.statistic, psi);
            grid.statistic[static_cast<std::size_t>(i)] = t;
            grid.state[static_cast<std::size_t>(i)] = t <= grid.critical ? CellState::Member : CellState::Outside;
        } catch (const Error&) {
            grid.state[static_cast<std::size_t>(i)] = CellState::Failed;
        }
    }
    return grid;
}

std::string region_grid_json(const RegionGrid& grid) {
    nlohmann::json j;
    nlohmann::json box = nlohmann::json::array();
    nlohmann::json res = nlohmann::json::array();
    for (const GridAxis& a : grid.axes) {
        box.push_back({a.lo, a.hi});
        res.push_back(a.count);
    }
    j["box"] = box;
    j["resolution"] = res;
    j["order"] = "row-major, last coordinate fastest";
    j["spec"] = {{"alpha", grid.spec.alpha},
                 {"statistic", std::string(statistic_name(grid.spec.statistic))},
                 {"df", grid.df},
                 {"critical", grid.critical}};
    nlohmann::json mask = nlohmann::json::array();
    for (const CellState s : grid.state) mask.push_back(static_cast<int>(s));
    j["mask"] = mask;
    j["legend"] = {{"1", "member"}, {"0", "non-member"}, {"-1", "infeasible"}, {"-2", "evaluation failed"}};
    j["members"] = grid.members();
    j["infeasible"] = grid.infeasible();
    return j.dump(2) + "\n";
}

std::string region_grid_csv(const RegionGrid& grid) {
    std::string out;
    for (std::size_t k = 0; k < grid.axes.size(); ++k) out += "psi" + std::to_string(k + 1) + ",";
    out += "statistic,member,state\n";
    for (Index i = 0; i < grid.size(); ++i) {
        const Vector p = grid.point(i);
        for (Index k = 0; k < p.size(); ++k) out += format_double(p(k)) + ",";
        const auto s = grid.state[static_cast<std::size_t>(i)];
        const double t = grid.statistic[static_cast<std::size_t>(i)];
        out += (std::isnan(t) ? std::string("") : format_double(t)) + "," + (s == CellState::Member ? "1" : "0") + "," +
               std::to_string(static_cast<int>(s)) + "\n";
    }
    return out;
}

} // namespace lmmscore
