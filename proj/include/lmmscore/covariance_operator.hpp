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
#include <string>
#include <vector>

#include "lmmscore/model.hpp"

namespace lmmscore {

/// Σ(ψ) at one fixed ψ, with the handful of products and traces the
/// likelihood needs. K_j denotes ∂Σ/∂ψ_j.
class CovarianceOperator {
public:
    virtual ~CovarianceOperator() = default;

    virtual Index n() const = 0;
    virtual double logdet() const = 0;
    /// Σ^{-1} B, column by column.
    virtual Matrix solve(const Matrix& b) const = 0;
    /// Σ^{1/2} B with the symmetric root.
    virtual Matrix apply_sqrt(const Matrix& b) const = 0;
    /// tr(Σ^{-1} K_j) for every j.
    virtual Vector trace_solve_derivative() const = 0;
    /// tr(Σ^{-1} K_i Σ^{-1} K_j).
    virtual Matrix trace_pairs() const = 0;
};

/// A design-specific factory of covariance operators. Implementations are
/// immutable after construction and safe to share across threads.
class CovarianceBackend {
public:
    virtual ~CovarianceBackend() = default;

    virtual Index n() const = 0;
    virtual int r() const = 0;
    virtual std::string name() const = 0;
    /// Throws SingularCovariance unless Σ(ψ) is positive definite.
    virtual std::unique_ptr<CovarianceOperator> at(const Vector& psi) const = 0;
    /// K_j B.
    virtual Matrix apply_derivative(int j, const Matrix& b) const = 0;
    /// tr(K_j) for every j.
    virtual Vector derivative_traces() const = 0;
};

/// Eigendecomposition of the full n×n Σ; the reference path.
class DenseBackend final : public CovarianceBackend {
public:
    explicit DenseBackend(const LmmDesign& design);

    Index n() const override { return n_; }
    int r() const override { return r_; }
    std::string name() const override { return "dense"; }
    std::unique_ptr<CovarianceOperator> at(const Vector& psi) const override;
    Matrix apply_derivative(int j, const Matrix& b) const override;
    Vector derivative_traces() const override;

private:
    Index n_;
    int r_;
    std::vector<Matrix> derivatives_;   // K_j for j < r-1; K_{r-1} = I is implicit
};

/// Rows split into groups that no random effect couples; Σ and every K_j are
/// block diagonal over them (cluster designs).
class BlockDiagonalBackend final : public CovarianceBackend {
public:
    explicit BlockDiagonalBackend(const LmmDesign& design);

    Index n() const override { return n_; }
    int r() const override { return r_; }
    std::string name() const override { return "block-diagonal"; }
    std::unique_ptr<CovarianceOperator> at(const Vector& psi) const override;
    Matrix apply_derivative(int j, const Matrix& b) const override;
    Vector derivative_traces() const override;

    std::size_t block_count() const noexcept { return blocks_.size(); }

    struct Block {
        std::vector<Index> rows;
        std::vector<Matrix> derivatives;   // K_j restricted to the block, j < r-1
    };

private:
    Index n_;
    int r_;
    std::vector<Block> blocks_;
};

/// Row groups of `design` not coupled through Z Ψ Z^T, in first-row order.
std::vector<std::vector<Index>> coupled_row_groups(const LmmDesign& design);

/// Block-diagonal backend when the rows split into several groups, dense otherwise.
std::shared_ptr<const CovarianceBackend> make_backend(const LmmDesign& design);

} // namespace lmmscore
