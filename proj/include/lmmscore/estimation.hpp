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

#include <optional>
#include <vector>

#include "lmmscore/likelihood.hpp"

namespace lmmscore {

struct FitOptions {
    int max_iter = 500;
    int starts = 3;
    double tol = 1e-8;
    /// Optional per-parameter values held fixed during the fit (empty: none).
    std::vector<std::optional<double>> fixed;
};

struct FitResult {
    Parameter theta_hat;
    double loglik_at_hat = 0.0;
    bool converged = false;
    bool on_boundary = false;
    double gradient_norm = 0.0;
    int iterations = 0;
    int start_index = 0;
    Matrix information;   // expected information of the fitted likelihood at ψ̂
};

/// {ψ : Ψ(ψ) ⪰ 0, ψ_r ≥ floor} with optional fixed coordinates.
class FeasibleSet {
public:
    FeasibleSet(const CovarianceStructure& structure, double error_floor,
                std::vector<std::optional<double>> fixed = {});

    int r() const noexcept { return r_; }
    double error_floor() const noexcept { return floor_; }
    const FreeMask& free() const noexcept { return free_; }
    Index free_count() const noexcept { return free_count_; }
    /// Every Ψ pattern is a single cell: the set is a box.
    bool box_only() const noexcept { return box_only_; }
    const std::vector<std::optional<double>>& fixed() const noexcept { return fixed_; }

    bool contains(const Vector& psi, double tol = 1e-12) const;

    /// Projection of the free coordinates z, where ψ_free = scale ⊙ z, in
    /// the metric that gives every pattern matrix its Frobenius norm. The
    /// scale must come from congruence_scale (or be all ones).
    Vector project(const Vector& z, const Vector& scale) const;
    /// Weight of each free coordinate in that metric.
    Vector metric_weights() const;
    /// Per-parameter scale c (length r) that is a congruence Ψ → DΨD of
    /// every pattern, chosen so the scaled information has unit diagonal
    /// where possible.
    Vector congruence_scale(const Matrix& information) const;

    Vector to_free(const Vector& psi, const Vector& scale) const;
    Vector from_free(const Vector& z, const Vector& scale) const;

private:
    struct Pattern {
        Eigen::MatrixXi local;
    };

    int r_;
    double floor_;
    std::vector<std::optional<double>> fixed_;
    FreeMask free_;
    Index free_count_ = 0;
    std::vector<Index> free_index_;   // parameter → position in z, or -1
    std::vector<Pattern> patterns_;
    bool box_only_ = true;
    bool scalable_ = true;
    bool single_clip_ = true;         // one eigen-clip per pattern is the exact projection
    std::vector<std::pair<Index, Index>> home_;   // parameter → (pattern, local a·k+b) for scaling
    std::vector<double> weights_;     // parameter → Frobenius weight
};

/// Projected Fisher scoring over ψ for a likelihood engine; β is profiled
/// (Profile) or absent (KnownBeta, Restricted). `structure` defines P.
FitResult fit_engine(const LikelihoodEngine& engine, const CovarianceStructure& structure, const Vector& y,
                     const FitOptions& options = {});

/// ML fit: β profiled by GLS when p > 0, β = 0 known when p = 0.
FitResult fit_ml(const LmmDesign& design, const Vector& y, const FitOptions& options = {});
/// REML fit; returns ψ̂ only.
FitResult fit_reml(const LmmDesign& design, const Vector& y, const FitOptions& options = {});

struct Example1Stats {
    double w_score;
    double w_wald;
    double t_lrt;
    double psi_hat;
};

/// Closed forms for Y ~ N(0, (1+ψ) I_n): M_n = ‖y‖²/n, ψ̂ = max(M_n - 1, 0).
Example1Stats example1_stats(const Vector& y, double psi);
Example1Stats example1_stats_from_moment(double mean_square, Index n, double psi);

/// The same model in generic form: Z = I_n, Ψ = ψ_1 I_n, X empty, r = 2.
LmmDesign example1_design(Index n);
/// Fit options holding the error variance at 1, as the model requires.
FitOptions example1_fit_options();

} // namespace lmmscore
