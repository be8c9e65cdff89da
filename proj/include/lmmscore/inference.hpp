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

#include <vector>

#include "lmmscore/model.hpp"

namespace lmmscore {

/// Scores, information blocks and log-likelihood at one parameter value.
/// Only the fields filled by the producing call are meaningful; empty
/// vectors/matrices mean "not computed".
struct ScoreReport {
    Vector score_beta;
    Vector score_psi;
    Matrix info_beta;
    Matrix info_psi;
    double loglik = 0.0;
};

enum class StatisticKind { Score, ProfileScore, RestrictedScore, Wald, LikelihoodRatio };

/// Per-parameter flag selecting the free coordinates of ψ; empty means all.
using FreeMask = std::vector<bool>;

Vector select(const Vector& v, const FreeMask& free);
Matrix select(const Matrix& m, const FreeMask& free);

struct ScoreStatistic {
    Vector w;       // I^{-1/2} S
    double t = 0.0; // ‖w‖²
};

/// ℓ(θ) = -½{log|Σ(ψ)| + (y - Xβ)^T Σ(ψ)^{-1}(y - Xβ)}; β absent means β = 0.
double log_likelihood(const LmmDesign& design, const Vector& y, const Parameter& theta);

/// Score for ψ (always) and β (when θ carries β), plus ℓ(θ).
ScoreReport score(const LmmDesign& design, const Vector& y, const Parameter& theta,
                  WhitenerKind kind = WhitenerKind::Symmetric);

/// info_psi[i][j] = tr(A_i A_j)/2 and info_beta = X^T Σ^{-1} X.
ScoreReport fisher_information(const LmmDesign& design, const Vector& psi);

/// Whether I(ψ) is positive definite for every ψ: the Gram matrix of the
/// Σ(e_j) in the Frobenius inner product is positive definite.
bool information_positive_definite(const LmmDesign& design, double tol = 1e-10);

/// Gram matrix G_ij = ⟨Σ(e_i), Σ(e_j)⟩_F.
Matrix derivative_gram(const LmmDesign& design);

/// W^S = I^{-1/2} S for a score vector and its information.
ScoreStatistic standardize_score(const Vector& score, const Matrix& information);

/// W^S(θ); uses the β block too when θ carries β. `free` restricts the ψ
/// block to a subset of coordinates (the others treated as known).
ScoreStatistic score_statistic(const LmmDesign& design, const Vector& y, const Parameter& theta,
                               const FreeMask& free = {});

/// β̃(ψ) = (X^T Σ^{-1} X)^{-1} X^T Σ^{-1} y. Throws RankDeficient.
Vector gls_beta(const LmmDesign& design, const Vector& y, const Vector& psi);

/// T^P(ψ) = S(ψ; β̃)^T I(ψ)^{-1} S(ψ; β̃).
double profile_score_statistic(const LmmDesign& design, const Vector& y, const Vector& psi);

/// (ψ̂ - ψ)^T I (ψ̂ - ψ).
double wald_statistic(const Vector& psi, const Vector& psi_hat, const Matrix& info_at_hat);

/// 2{ℓ(θ̂) - ℓ(θ_ψ)} where θ_ψ uses β̃(ψ) when θ̂ carries β and β = 0
/// otherwise. Values in [-1e-8, 0) clamp to zero; lower values throw
/// OptimizationFailure.
double lrt_statistic(const LmmDesign& design, const Vector& y, const Vector& psi,
                     const Parameter& theta_hat);

inline constexpr double kLrtNegativeTolerance = 1e-8;

/// Applies the clamp rule of lrt_statistic to a raw 2{ℓ̂ - ℓ} value.
double clamp_lrt(double value);

} // namespace lmmscore
