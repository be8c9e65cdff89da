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

#include "lmmscore/inference.hpp"

namespace lmmscore {

inline constexpr double kRankTolerance = 1e-10;

/// Orthonormal basis V (n×(n-p)) of the orthogonal complement of col(X).
/// Throws RankDeficient when X is rank deficient or p ≥ n.
Matrix null_basis(const Matrix& X);

struct RemlTransform {
    Matrix V;
    LmmDesign reduced_design;   // X empty, Z̃ = V^T Z
    Index reduced_n() const noexcept { return V.cols(); }
};

RemlTransform reml_transform(const LmmDesign& design);
/// Uses a caller-provided basis; V must satisfy V^T V = I and V^T X = 0.
RemlTransform reml_transform(const LmmDesign& design, Matrix V);

struct RemlReduction {
    RemlTransform transform;
    Vector y;   // V^T y
};

RemlReduction reml_reduce(const LmmDesign& design, const Vector& y);

/// W̃^S(ψ) = Ĩ(ψ)^{-1/2} S̃(ψ), the known-β score statistic of the reduced model.
ScoreStatistic restricted_score_statistic(const LmmDesign& design, const Vector& y, const Vector& psi,
                                          const FreeMask& free = {});

} // namespace lmmscore
