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
#include <span>
#include <vector>

#include "lmmscore/linalg.hpp"

namespace lmmscore {

/// A cell (row, col) of the random-effect covariance Ψ.
struct Cell {
    Index row;
    Index col;
};

/// A group of random-effect coordinates coupled through Ψ, together with every
/// other group sharing the same local parameter layout. Positive
/// semi-definiteness of Ψ is equivalent to that of each distinct pattern.
struct PatternBlock {
    Eigen::MatrixXi local;                     // local cell → parameter (or -1)
    std::vector<std::vector<Index>> members;   // coordinate lists using this pattern
};

/// Maps ψ to Ψ(ψ) = Σ_j ψ_j H_j. Parameters are 0-based: 0..r-2 enter Ψ,
/// r-1 is the error variance (H_{r-1} = 0).
class CovarianceStructure {
public:
    static constexpr int kFixedZero = -1;

    /// `assignment` is q×q symmetric, each entry kFixedZero or a parameter in
    /// 0..r-2; every such parameter must own at least one cell.
    CovarianceStructure(Index q, int r, Eigen::MatrixXi assignment);

    /// Ψ = ψ_0 I_q (r = 2).
    static CovarianceStructure scaled_identity(Index q);
    /// Ψ = bdiag(ψ_0 I_{s_0}, ψ_1 I_{s_1}, ...); r = blocks + 1.
    static CovarianceStructure diagonal_blocks(std::span<const Index> block_sizes);
    /// Ψ = I_m ⊗ Ψ_1 with ψ_{-r} = vech(Ψ_1), lower triangle stacked by column.
    static CovarianceStructure clustered(Index clusters, Index block_dim);

    Index q() const noexcept { return q_; }
    int r() const noexcept { return r_; }
    int cell(Index row, Index col) const { return assignment_(row, col); }
    const Eigen::MatrixXi& assignment() const noexcept { return assignment_; }

    /// Cells carrying parameter j (both triangles); empty for j = r-1.
    std::span<const Cell> cells(int j) const;
    Matrix indicator(int j) const;
    /// Ψ(v) for any real v of length r.
    Matrix build(const Vector& v) const;
    const std::vector<PatternBlock>& patterns() const noexcept { return patterns_; }
    /// The local matrix of a pattern with parameter values substituted.
    Matrix pattern_matrix(const PatternBlock& block, const Vector& v) const;

private:
    void index_cells();

    Index q_;
    int r_;
    Eigen::MatrixXi assignment_;
    std::vector<std::vector<Cell>> cells_;
    std::vector<PatternBlock> patterns_;
};

/// Fixed-effect design X (n×p), random-effect design Z (n×q) and Ψ layout.
class LmmDesign {
public:
    LmmDesign(Matrix X, Matrix Z, CovarianceStructure structure);

    Index n() const noexcept { return Z_.rows(); }
    Index p() const noexcept { return X_.cols(); }
    Index q() const noexcept { return Z_.cols(); }
    int r() const noexcept { return structure_.r(); }
    const Matrix& X() const noexcept { return X_; }
    const Matrix& Z() const noexcept { return Z_; }
    const CovarianceStructure& structure() const noexcept { return structure_; }

    /// ∂Σ/∂ψ_j = Z H_j Z^T, or I_n for the error variance.
    Matrix derivative(int j) const;

private:
    Matrix X_;
    Matrix Z_;
    CovarianceStructure structure_;
};

/// ψ ∈ R^r and, when the mean is not treated as known zero, β ∈ R^p.
struct Parameter {
    Vector psi;
    std::optional<Vector> beta;
};

enum class ParameterStatus { Interior, Boundary, Outside };

enum class WhitenerKind {
    Symmetric,   // Σ^{-1/2} from the eigendecomposition
    Cholesky,    // L^{-1} with Σ = LL^T
};

struct WhitenedState {
    Matrix sigma;
    Matrix whitener;   // W with W Σ W^T = I
    Vector residual;   // W (y - Xβ)
};

inline constexpr double kDefaultPsdTolerance = 1e-10;

Matrix build_psi(const CovarianceStructure& structure, const Vector& psi);

/// Σ(v) = Z Ψ(v) Z^T + v_r I_n for an arbitrary real v.
Matrix build_sigma(const LmmDesign& design, const Vector& v);

ParameterStatus check_parameter(const CovarianceStructure& structure, const Vector& psi,
                                double tol = kDefaultPsdTolerance);

/// A whitener for Σ(ψ); throws SingularCovariance unless Σ is positive definite.
Matrix whitener_for(const Matrix& sigma, WhitenerKind kind = WhitenerKind::Symmetric);

WhitenedState whiten(const LmmDesign& design, const Vector& y, const Parameter& theta,
                     WhitenerKind kind = WhitenerKind::Symmetric);

/// A(v, ψ) = W Σ(v) W^T with W the whitener of Σ(ψ).
Matrix a_combination(const LmmDesign& design, const Vector& psi, const Vector& v,
                     WhitenerKind kind = WhitenerKind::Symmetric);

} // namespace lmmscore
