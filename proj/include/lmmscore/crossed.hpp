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
#include <vector>

#include "lmmscore/bounds.hpp"
#include "lmmscore/covariance_operator.hpp"

namespace lmmscore {

/// Fully crossed factors with n_1..n_{r-1} levels. Observation order is
/// row-major over the factor levels with the last factor varying fastest.
class CrossedLayout {
public:
    explicit CrossedLayout(std::vector<Index> factor_sizes);

    const std::vector<Index>& factor_sizes() const noexcept { return sizes_; }
    Index factors() const noexcept { return static_cast<Index>(sizes_.size()); }
    int r() const noexcept { return static_cast<int>(sizes_.size()) + 1; }
    Index n() const noexcept { return n_; }
    /// n_(j) = Π_{i≠j} n_i (0-based j).
    Index n_without(Index j) const { return n_ / sizes_[static_cast<std::size_t>(j)]; }
    /// ñ = n - 1 - Σ(n_j - 1).
    Index n_tilde() const noexcept;

private:
    std::vector<Index> sizes_;
    Index n_;
};

inline constexpr Index kDenseLimit = 4096;

/// Z = [Z^(1), ..., Z^(r-1)], Ψ = bdiag(ψ_j I_{n_j}), X = 1_n.
/// Throws InvalidArgument when n exceeds `dense_limit`.
LmmDesign build_crossed_design(const CrossedLayout& layout, Index dense_limit = kDenseLimit);

/// One joint eigenspace of the averaging projections: factors in
/// `constant_mask` (bit j for factor j) are averaged, the rest are contrasts.
struct SpectralComponent {
    double eigenvalue;
    Index multiplicity;
    std::uint32_t constant_mask;
};

/// Eigenvalues of Σ(v) with multiplicities (v may be any real vector).
std::vector<SpectralComponent> crossed_spectrum(const CrossedLayout& layout, const Vector& psi);

/// a(v, ψ) from the spectrum. With `restricted`, the component spanned by
/// 1_n is dropped, which is the intercept-only reduced model.
ApproximationBound crossed_a_ratio(const CrossedLayout& layout, const Vector& psi, const Vector& v,
                                   bool restricted);

/// Σ via the spectrum; O(n 2^{r-1}) per product, no n×n storage.
class CrossedBackend final : public CovarianceBackend {
public:
    explicit CrossedBackend(CrossedLayout layout);

    Index n() const override { return layout_.n(); }
    int r() const override { return layout_.r(); }
    std::string name() const override { return "crossed"; }
    std::unique_ptr<CovarianceOperator> at(const Vector& psi) const override;
    Matrix apply_derivative(int j, const Matrix& b) const override;
    Vector derivative_traces() const override;

    const CrossedLayout& layout() const noexcept { return layout_; }
    /// Replaces every factor in `mask` by its average (broadcast back).
    Matrix average(std::uint32_t mask, const Matrix& b) const;

private:
    CrossedLayout layout_;
};

} // namespace lmmscore
