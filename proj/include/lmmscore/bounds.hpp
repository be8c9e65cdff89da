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

#include <cstdint>
#include <optional>
#include <span>

#include "lmmscore/inference.hpp"

namespace lmmscore {

struct ApproximationBound {
    double a_value = 1.0;
    std::optional<double> density_bound;   // present iff a² < 1/8
    bool degenerate = false;               // ‖A‖_F = 0, a set to 1 by convention
};

/// a(v, ψ) = ‖A(v, ψ)‖ / ‖A(v, ψ)‖_F.
ApproximationBound a_ratio(const LmmDesign& design, const Vector& psi, const Vector& v);

/// a from the eigenvalues of A; shared by the dense and spectral paths.
ApproximationBound a_from_eigenvalues(const Vector& eigenvalues);
ApproximationBound a_from_spectrum(std::span<const double> eigenvalues, std::span<const double> multiplicity);

/// 0.14(4 + 0.29/(1 - 8a²)²)·a, defined for a² < 1/8.
std::optional<double> lemma4_density_bound(double a);

/// a(ṽ, ψ) and its density bound for ṽ = I(ψ)^{-1/2} v, ‖v‖ = 1. With a
/// non-empty `free`, v and ṽ live on the free coordinates only.
ApproximationBound a_tilde_direction(const LmmDesign& design, const Vector& psi, const Vector& v_unit,
                                     const FreeMask& free = {});

/// ‖Σ(ψ)^{-1}‖‖Σ(ψ)‖ · ‖Σ(v)‖/‖Σ(v)‖_F. Throws InvalidArgument if Σ(v) = 0.
double separable_bound(const LmmDesign& design, const Vector& psi, const Vector& v);

/// c3 m^{-1/2}(1 + ‖ψ_{-r}‖/ψ_r); c3 defaults to √2·c2 (equal Z_i).
double cluster_bound(Index m, double c2, const Vector& psi, std::optional<double> c3_override = std::nullopt);

/// c2 for a cluster block: the smallest c > 1 with c^{-1} ≤ γ(Z_1^T Z_1) ≤ c.
double cluster_c2(const Matrix& z_block);

/// √ of the crossed-design a² bound (unrestricted or restricted).
double crossed_bound(std::span<const Index> factor_sizes, bool restricted);

/// Lower bound on sup_{‖v‖=1} a(v, ψ): random directions followed by
/// coordinate ascent from the best one. Deterministic given `seed`.
double sup_a_estimate(const LmmDesign& design, const Vector& psi, Index samples, std::uint64_t seed,
                      const FreeMask& free = {}, int ascent_steps = 50);

} // namespace lmmscore
