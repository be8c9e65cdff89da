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

#pragma once

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lmmscore/estimation.hpp"

namespace lmmscore {

/// χ²_df distribution function via the regularized lower incomplete gamma.
double chi2_cdf(double df, double x);
/// Inverse of chi2_cdf by bisection to absolute tolerance 1e-10.
double chi2_quantile(double df, double prob);

/// Short names used on the command line and in tables: scr, pscr, rscr, wld, lrt.
std::string_view statistic_name(StatisticKind kind);
StatisticKind parse_statistic(std::string_view name);

/// Evaluates any supported statistic for one dataset at arbitrary ψ. Wald
/// and likelihood-ratio statistics share one fit per dataset: REML when
/// p > 0, ML with known β = 0 otherwise. Not thread-safe; build one per
/// worker (the backend itself is shared).
class StatisticEvaluator {
public:
    StatisticEvaluator(const LmmDesign& design, std::shared_ptr<const CovarianceBackend> backend,
                       std::vector<std::optional<double>> fixed = {}, FitOptions fit_options = {});

    /// `known_beta` is required by the Score statistic when p > 0.
    void set_data(const Vector& y, std::optional<Vector> known_beta = std::nullopt);

    double evaluate(StatisticKind kind, const Vector& psi);
    /// r (free coordinates) for ψ statistics, p + r for the joint score.
    int df(StatisticKind kind) const;
    const FitResult& fit();
    const FreeMask& free() const noexcept { return free_; }

private:
    double score_quadratic(const LikelihoodEngine& engine, const Vector& y, const Vector& psi) const;

    const CovarianceStructure* structure_;
    Index p_;
    LikelihoodEngine known_;
    LikelihoodEngine profile_;
    LikelihoodEngine restricted_;
    std::vector<std::optional<double>> fixed_;
    FreeMask free_;
    FitOptions fit_options_;
    Vector y_;
    std::optional<Vector> beta_;
    std::optional<FitResult> fit_;
};

struct RegionSpec {
    double alpha = 0.05;
    StatisticKind statistic = StatisticKind::RestrictedScore;
    /// 0 selects the convention of StatisticEvaluator::df.
    int df = 0;
    std::optional<Vector> beta;                      // joint score regions
    std::vector<std::optional<double>> fixed;        // known coordinates of ψ
};

struct MembershipResult {
    bool member = false;
    double statistic = 0.0;
    double critical = 0.0;
    int df = 0;
};

MembershipResult region_membership(const LmmDesign& design, const Vector& y, const Vector& psi,
                                   const RegionSpec& spec);

struct GridAxis {
    double lo = 0.0;
    double hi = 0.0;
    Index count = 1;
    double at(Index i) const { return count == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1); }
};

enum class CellState : int { Failed = -2, Infeasible = -1, Outside = 0, Member = 1 };

/// Lattice over ψ, row-major with the last coordinate varying fastest.
struct RegionGrid {
    std::vector<GridAxis> axes;
    RegionSpec spec;
    int df = 0;
    double critical = 0.0;
    std::vector<double> statistic;   // NaN where not evaluated
    std::vector<CellState> state;

    Index size() const noexcept { return static_cast<Index>(state.size()); }
    Vector point(Index flat) const;
    Index members() const;
    Index infeasible() const;
};

/// Every lattice point inside P (boundary included) is evaluated; points
/// outside P are marked Infeasible.
RegionGrid region_grid(const LmmDesign& design, const Vector& y, std::vector<GridAxis> axes, const RegionSpec& spec);

std::string region_grid_json(const RegionGrid& grid);
/// Long format: one row per lattice point.
std::string region_grid_csv(const RegionGrid& grid);

} // namespace lmmscore
