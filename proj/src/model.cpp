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

#include "lmmscore/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>

#include "lmmscore/errors.hpp"

namespace lmmscore {

namespace {

struct DisjointSets {
    explicit DisjointSets(Index n) : parent(static_cast<std::size_t>(n)) {
        std::iota(parent.begin(), parent.end(), Index{0});
    }
    Index find(Index x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    }
    void unite(Index a, Index b) { parent[find(a)] = find(b); }
    std::vector<Index> parent;
};

} // namespace

CovarianceStructure::CovarianceStructure(Index q, int r, Eigen::MatrixXi assignment)
    : q_(q), r_(r), assignment_(std::move(assignment)) {
    if (r_ < 1) throw InvalidArgument("parameter count r must be at least 1");
    if (q_ < 0 || assignment_.rows() != q_ || assignment_.cols() != q_) {
        throw DimensionMismatch("assignment must be " + std::to_string(q_) + "x" + std::to_string(q_));
    }
    for (Index i = 0; i < q_; ++i) {
        for (Index k = 0; k < q_; ++k) {
            const int j = assignment_(i, k);
            if (j != assignment_(k, i)) throw InvalidArgument("assignment must be symmetric");
            if (j < kFixedZero || j > r_ - 2) {
                throw InvalidArgument("assignment entry " + std::to_string(j) +
                                      " is not a covariance parameter index");
            }
        }
    }
    index_cells();
    for (int j = 0; j < r_ - 1; ++j) {
        if (cells_[j].empty()) {
            throw InvalidArgument("parameter " + std::to_string(j) + " owns no cell of Psi");
        }
    }
}

CovarianceStructure CovarianceStructure::scaled_identity(Index q) {
    Eigen::MatrixXi a = Eigen::MatrixXi::Constant(q, q, kFixedZero);
    a.diagonal().setZero();
    return CovarianceStructure(q, 2, std::move(a));
}

CovarianceStructure CovarianceStructure::diagonal_blocks(std::span<const Index> block_sizes) {
    const Index q = std::accumulate(block_sizes.begin(), block_sizes.end(), Index{0});
    Eigen::MatrixXi a = Eigen::MatrixXi::Constant(q, q, kFixedZero);
    Index offset = 0;
    for (std::size_t b = 0; b < block_sizes.size(); ++b) {
        for (Index i = 0; i < block_sizes[b]; ++i) a(offset + i, offset + i) = static_cast<int>(b);
        offset += block_sizes[b];
    }
    return CovarianceStructure(q, static_cast<int>(block_sizes.size()) + 1, std::move(a));
}

CovarianceStructure CovarianceStructure::clustered(Index clusters, Index block_dim) {
    Eigen::MatrixXi local(block_dim, block_dim);
    int next = 0;
    for (Index col = 0; col < block_dim; ++col) {
        for (Index row = col; row < block_dim; ++row) {
            local(row, col) = next;
            local(col, row) = next;
            ++next;
        }
    }
    const Index q = clusters * block_dim;
    Eigen::MatrixXi a = Eigen::MatrixXi::Constant(q, q, kFixedZero);
    for (Index c = 0; c < clusters; ++c) a.block(c * block_dim, c * block_dim, block_dim, block_dim) = local;
    return CovarianceStructure(q, next + 1, std::move(a));
}

void CovarianceStructure::index_cells() {
    cells_.assign(static_cast<std::size_t>(r_), {});
    DisjointSets sets(q_);
    for (Index k = 0; k < q_; ++k) {
        for (Index i = 0; i < q_; ++i) {
            const int j = assignment_(i, k);
            if (j == kFixedZero) continue;
            cells_[j].push_back({i, k});
            if (i != k) sets.unite(i, k);
        }
    }

    std::map<Index, std::vector<Index>> components;
    for (Index i = 0; i < q_; ++i) components[sets.find(i)].push_back(i);

    std::map<std::vector<int>, std::size_t> seen;
    patterns_.clear();
    for (auto& [root, members] : components) {
        const Index d = static_cast<Index>(members.size());
        Eigen::MatrixXi local(d, d);
        std::vector<int> key;
        key.reserve(static_cast<std::size_t>(d * d + 1));
        key.push_back(static_cast<int>(d));
        bool any_parameter = false;
        for (Index a = 0; a < d; ++a) {
            for (Index b = 0; b < d; ++b) {
                local(a, b) = assignment_(members[a], members[b]);
                key.push_back(local(a, b));
                any_parameter = any_parameter || local(a, b) != kFixedZero;
            }
        }
        if (!any_parameter) continue;
        auto [it, inserted] = seen.try_emplace(key, patterns_.size());
        if (inserted) patterns_.push_back({local, {}});
        patterns_[it->second].members.push_back(members);
    }
}

std::span<const Cell> CovarianceStructure::cells(int j) const {
    if (j < 0 || j >= r_) throw InvalidArgument("parameter index out of range");
    return cells_[static_cast<std::size_t>(j)];
}

Matrix CovarianceStructure::indicator(int j) const {
    Matrix h = Matrix::Zero(q_, q_);
    for (const Cell& c : cells(j)) h(c.row, c.col) = 1.0;
    return h;
}

Matrix CovarianceStructure::build(const Vector& v) const {
    if (v.size() != r_) {
        throw DimensionMismatch("parameter vector has length " + std::to_string(v.size()) +
                                ", expected " + std::to_string(r_));
    }
    Matrix psi = Matrix::Zero(q_, q_);
    for (int j = 0; j + 1 < r_; ++j) {
        for (const Cell& c : cells_[j]) psi(c.row, c.col) = v(j);
    }
    return psi;
}

Matrix CovarianceStructure::pattern_matrix(const PatternBlock& block, const Vector& v) const {
    const Index d = block.local.rows();
    Matrix m(d, d);
    for (Index a = 0; a < d; ++a) {
        for (Index b = 0; b < d; ++b) {
            const int j = block.local(a, b);
            m(a, b) = j == kFixedZero ? 0.0 : v(j);
        }
    }
    return m;
}

LmmDesign::LmmDesign(Matrix X, Matrix Z, CovarianceStructure structure)
    : X_(std::move(X)), Z_(std::move(Z)), structure_(std::move(structure)) {
    if (Z_.rows() < 1) throw DimensionMismatch("design needs at least one observation");
    if (X_.rows() != Z_.rows()) {
        if (X_.cols() == 0) {
            X_.resize(Z_.rows(), 0);
        } else {
            throw DimensionMismatch("X has " + std::to_string(X_.rows()) + " rows but Z has " +
                                    std::to_string(Z_.rows()));
        }
    }
    if (Z_.cols() != structure_.q()) {
        throw DimensionMismatch("Z has " + std::to_string(Z_.cols()) +
                                " columns but the covariance structure has q = " +
                                std::to_string(structure_.q()));
    }
}

Matrix LmmDesign::derivative(int j) const {
    const int r = structure_.r();
    if (j < 0 || j >= r) throw InvalidArgument("parameter index out of range");
    if (j == r - 1) return Matrix::Identity(n(), n());
    Matrix zh = Matrix::Zero(n(), q());
    for (const Cell& c : structure_.cells(j)) zh.col(c.col) += Z_.col(c.row);
    return zh * Z_.transpose();
}

Matrix build_psi(const CovarianceStructure& structure, const Vector& psi) {
    return structure.build(psi);
}

Matrix build_sigma(const LmmDesign& design, const Vector& v) {
    const CovarianceStructure& s = design.structure();
    if (v.size() != s.r()) {
        throw DimensionMismatch("parameter vector has length " + std::to_string(v.size()) +
                                ", expected " + std::to_string(s.r()));
    }
    Matrix zpsi = Matrix::Zero(design.n(), design.q());
    for (int j = 0; j + 1 < s.r(); ++j) {
        if (v(j) == 0.0) continue;
        for (const Cell& c : s.cells(j)) zpsi.col(c.col) += v(j) * design.Z().col(c.row);
    }
    Matrix sigma = zpsi * design.Z().transpose();
    sigma.diagonal().array() += v(s.r() - 1);
    return linalg::symmetrize(sigma);
}

ParameterStatus check_parameter(const CovarianceStructure& structure, const Vector& psi, double tol) {
    if (psi.size() != structure.r()) {
        throw DimensionMismatch("parameter vector has length " + std::to_string(psi.size()) +
                                ", expected " + std::to_string(structure.r()));
    }
    if (!(psi(structure.r() - 1) > 0.0) || !psi.allFinite()) return ParameterStatus::Outside;
    if (structure.patterns().empty()) return ParameterStatus::Interior;

    double lambda_min = std::numeric_limits<double>::infinity();
    double norm = 0.0;
    for (const PatternBlock& block : structure.patterns()) {
        const Vector ev = linalg::eigenvalues_symmetric(structure.pattern_matrix(block, psi));
        lambda_min = std::min(lambda_min, ev.minCoeff());
        norm = std::max(norm, ev.cwiseAbs().maxCoeff());
    }
    const double scale = tol * std::max(1.0, norm);
    if (lambda_min < -scale) return ParameterStatus::Outside;
    if (std::abs(lambda_min) <= scale) return ParameterStatus::Boundary;
    return ParameterStatus::Interior;
}

Matrix whitener_for(const Matrix& sigma, WhitenerKind kind) {
    const Matrix sym = linalg::symmetrize(sigma);
    if (kind == WhitenerKind::Cholesky) {
        Eigen::LLT<Matrix> llt(sym);
        if (llt.info() != Eigen::Success) {
            throw SingularCovariance("covariance matrix is not positive definite");
        }
        const Index n = sym.rows();
        Matrix w = Matrix::Identity(n, n);
        llt.matrixL().solveInPlace(w);
        return w;
    }
    const linalg::SymmetricEigen eig = linalg::eigen_symmetric(sym);
    if (eig.values.size() && eig.values.minCoeff() <= 0.0) {
        throw SingularCovariance("covariance matrix is not positive definite (smallest eigenvalue " +
                                 std::to_string(eig.values.minCoeff()) + ")");
    }
    return linalg::spectral_apply(eig, [](double x) { return 1.0 / std::sqrt(x); });
}

WhitenedState whiten(const LmmDesign& design, const Vector& y, const Parameter& theta, WhitenerKind kind) {
    if (y.size() != design.n()) {
        throw DimensionMismatch("response has length " + std::to_string(y.size()) + ", expected " +
                                std::to_string(design.n()));
    }
    Vector centered = y;
    if (theta.beta) {
        if (theta.beta->size() != design.p()) {
            throw DimensionMismatch("beta has length " + std::to_string(theta.beta->size()) +
                                    ", expected " + std::to_string(design.p()));
        }
        centered -= design.X() * *theta.beta;
    }
    WhitenedState state;
    state.sigma = build_sigma(design, theta.psi);
    state.whitener = whitener_for(state.sigma, kind);
    state.residual = state.whitener * centered;
    return state;
}

Matrix a_combination(const LmmDesign& design, const Vector& psi, const Vector& v, WhitenerKind kind) {
    const Matrix w = whitener_for(build_sigma(design, psi), kind);
    return linalg::symmetrize(w * build_sigma(design, v) * w.transpose());
}

} // namespace lmmscore
