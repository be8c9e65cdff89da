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

#include "lmmscore/covariance_operator.hpp"

#include <cmath>
#include <numeric>

#include "lmmscore/errors.hpp"

namespace lmmscore {

namespace {

class DisjointSets {
public:
    explicit DisjointSets(Index size) : parent_(static_cast<std::size_t>(size)) {
        std::iota(parent_.begin(), parent_.end(), Index{0});
    }
    Index find(Index x) {
        while (parent_[static_cast<std::size_t>(x)] != x) {
            auto& p = parent_[static_cast<std::size_t>(x)];
            p = parent_[static_cast<std::size_t>(p)];
            x = p;
        }
        return x;
    }
    void unite(Index a, Index b) {
        a = find(a);
        b = find(b);
        if (a != b) parent_[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
    }

private:
    std::vector<Index> parent_;
};

linalg::SymmetricEigen checked_eigen(const Matrix& sigma) {
    linalg::SymmetricEigen eig = linalg::eigen_symmetric(sigma);
    if (eig.values.size() && !(eig.values(0) > 0.0)) {
        throw SingularCovariance("covariance matrix is not positive definite (λ_min = " +
                                 std::to_string(eig.values(0)) + ")");
    }
    return eig;
}

// Σ^{-1} K_j for all j; the error-variance derivative is the identity.
std::vector<Matrix> solved_derivatives(const Matrix& inv, const std::vector<Matrix>& derivatives) {
    std::vector<Matrix> out;
    out.reserve(derivatives.size() + 1);
    for (const Matrix& k : derivatives) out.push_back(inv * k);
    out.push_back(inv);
    return out;
}

Matrix pair_traces(const std::vector<Matrix>& b) {
    const Index r = static_cast<Index>(b.size());
    Matrix t(r, r);
    for (Index i = 0; i < r; ++i) {
        for (Index j = i; j < r; ++j) {
            // tr(B_i B_j) = Σ (B_i ∘ B_j^T)
            const double v = b[static_cast<std::size_t>(i)].cwiseProduct(b[static_cast<std::size_t>(j)].transpose()).sum();
            t(i, j) = v;
            t(j, i) = v;
        }
    }
    return t;
}

class EigenOperator final : public CovarianceOperator {
public:
    EigenOperator(const Matrix& sigma, const std::vector<Matrix>& derivatives)
        : eig_(checked_eigen(sigma)), derivatives_(&derivatives) {}

    Index n() const override { return eig_.values.size(); }
    double logdet() const override { return eig_.values.array().log().sum(); }
    Matrix solve(const Matrix& b) const override {
        return eig_.vectors * (eig_.values.cwiseInverse().asDiagonal() * (eig_.vectors.transpose() * b));
    }
    Matrix apply_sqrt(const Matrix& b) const override {
        return eig_.vectors * (eig_.values.cwiseSqrt().asDiagonal() * (eig_.vectors.transpose() * b));
    }
    Vector trace_solve_derivative() const override {
        const auto& b = solved();
        Vector t(static_cast<Index>(b.size()));
        for (std::size_t j = 0; j < b.size(); ++j) t(static_cast<Index>(j)) = b[j].trace();
        return t;
    }
    Matrix trace_pairs() const override { return pair_traces(solved()); }

private:
    const std::vector<Matrix>& solved() const {
        if (solved_.empty()) {
            const Matrix inv = linalg::spectral_apply(eig_, [](double x) { return 1.0 / x; });
            solved_ = solved_derivatives(inv, *derivatives_);
        }
        return solved_;
    }

    linalg::SymmetricEigen eig_;
    const std::vector<Matrix>* derivatives_;   // owned by the backend
    mutable std::vector<Matrix> solved_;
};

class BlockOperator final : public CovarianceOperator {
public:
    BlockOperator(Index n, int r, const std::vector<BlockDiagonalBackend::Block>& blocks, const Vector& psi)
        : n_(n), r_(r), blocks_(&blocks) {
        eig_.reserve(blocks.size());
        for (const auto& blk : blocks) {
            const Index k = static_cast<Index>(blk.rows.size());
            Matrix s = psi(r - 1) * Matrix::Identity(k, k);
            for (int j = 0; j + 1 < r; ++j) s += psi(j) * blk.derivatives[static_cast<std::size_t>(j)];
            eig_.push_back(checked_eigen(s));
        }
    }

    Index n() const override { return n_; }
    double logdet() const override {
        double total = 0.0;
        for (const auto& e : eig_) total += e.values.array().log().sum();
        return total;
    }
    Matrix solve(const Matrix& b) const override {
        return apply([](const linalg::SymmetricEigen& e, const Matrix& x) {
            return Matrix(e.vectors * (e.values.cwiseInverse().asDiagonal() * (e.vectors.transpose() * x)));
        }, b);
    }
    Matrix apply_sqrt(const Matrix& b) const override {
        return apply([](const linalg::SymmetricEigen& e, const Matrix& x) {
            return Matrix(e.vectors * (e.values.cwiseSqrt().asDiagonal() * (e.vectors.transpose() * x)));
        }, b);
    }
    Vector trace_solve_derivative() const override {
        Vector t = Vector::Zero(r_);
        for_each_solved([&](const std::vector<Matrix>& b) {
            for (int j = 0; j < r_; ++j) t(j) += b[static_cast<std::size_t>(j)].trace();
        });
        return t;
    }
    Matrix trace_pairs() const override {
        Matrix t = Matrix::Zero(r_, r_);
        for_each_solved([&](const std::vector<Matrix>& b) { t += pair_traces(b); });
        return t;
    }

private:
    template <typename F>
    Matrix apply(F f, const Matrix& b) const {
        if (b.rows() != n_) throw DimensionMismatch("operand has the wrong number of rows");
        Matrix out(b.rows(), b.cols());
        for (std::size_t k = 0; k < eig_.size(); ++k) {
            const auto& rows = (*blocks_)[k].rows;
            Matrix sub(static_cast<Index>(rows.size()), b.cols());
            for (std::size_t i = 0; i < rows.size(); ++i) sub.row(static_cast<Index>(i)) = b.row(rows[i]);
            const Matrix res = f(eig_[k], sub);
            for (std::size_t i = 0; i < rows.size(); ++i) out.row(rows[i]) = res.row(static_cast<Index>(i));
        }
        return out;
    }

    template <typename F>
    void for_each_solved(F f) const {
        for (std::size_t k = 0; k < eig_.size(); ++k) {
            const Matrix inv = linalg::spectral_apply(eig_[k], [](double x) { return 1.0 / x; });
            f(solved_derivatives(inv, (*blocks_)[k].derivatives));
        }
    }

    Index n_;
    int r_;
    const std::vector<BlockDiagonalBackend::Block>* blocks_;
    std::vector<linalg::SymmetricEigen> eig_;
};

void check_psi(const Vector& psi, int r) {
    if (psi.size() != r) throw DimensionMismatch("ψ has length " + std::to_string(psi.size()) + ", expected " + std::to_string(r));
}

} // namespace

DenseBackend::DenseBackend(const LmmDesign& design) : n_(design.n()), r_(design.r()) {
    for (int j = 0; j + 1 < design.r(); ++j) derivatives_.push_back(design.derivative(j));
}

std::unique_ptr<CovarianceOperator> DenseBackend::at(const Vector& psi) const {
    check_psi(psi, r_);
    Matrix sigma = psi(r_ - 1) * Matrix::Identity(n_, n_);
    for (int j = 0; j + 1 < r_; ++j) sigma += psi(j) * derivatives_[static_cast<std::size_t>(j)];
    return std::make_unique<EigenOperator>(sigma, derivatives_);
}

Matrix DenseBackend::apply_derivative(int j, const Matrix& b) const {
    if (j < 0 || j >= r_) throw InvalidArgument("derivative index out of range");
    if (j == r_ - 1) return b;
    return derivatives_[static_cast<std::size_t>(j)] * b;
}

Vector DenseBackend::derivative_traces() const {
    Vector t(r_);
    for (int j = 0; j + 1 < r_; ++j) t(j) = derivatives_[static_cast<std::size_t>(j)].trace();
    t(r_ - 1) = static_cast<double>(n_);
    return t;
}

std::vector<std::vector<Index>> coupled_row_groups(const LmmDesign& design) {
    const Index n = design.n();
    const Index q = design.q();
    const CovarianceStructure& s = design.structure();
    DisjointSets sets(n + q);
    std::vector<bool> active(static_cast<std::size_t>(q), false);
    for (Index a = 0; a < q; ++a) {
        for (Index b = 0; b < q; ++b) {
            if (s.cell(a, b) != CovarianceStructure::kFixedZero) {
                active[static_cast<std::size_t>(a)] = true;
                sets.unite(n + a, n + b);
            }
        }
    }
    const Matrix& z = design.Z();
    for (Index c = 0; c < q; ++c) {
        if (!active[static_cast<std::size_t>(c)]) continue;
        for (Index i = 0; i < n; ++i) {
            if (z(i, c) != 0.0) sets.unite(i, n + c);
        }
    }
    std::vector<std::vector<Index>> groups;
    std::vector<Index> slot(static_cast<std::size_t>(n + q), -1);
    for (Index i = 0; i < n; ++i) {
        const Index root = sets.find(i);
        auto& k = slot[static_cast<std::size_t>(root)];
        if (k < 0) {
            k = static_cast<Index>(groups.size());
            groups.emplace_back();
        }
        groups[static_cast<std::size_t>(k)].push_back(i);
    }
    return groups;
}

BlockDiagonalBackend::BlockDiagonalBackend(const LmmDesign& design) : n_(design.n()), r_(design.r()) {
    const CovarianceStructure& s = design.structure();
    for (auto& rows : coupled_row_groups(design)) {
        Block blk;
        const Index k = static_cast<Index>(rows.size());
        Matrix zb(k, design.q());
        for (Index i = 0; i < k; ++i) zb.row(i) = design.Z().row(rows[static_cast<std::size_t>(i)]);
        for (int j = 0; j + 1 < r_; ++j) {
            // Z_b H_j Z_b^T assembled from the cells of parameter j
            Matrix zh = Matrix::Zero(k, design.q());
            for (const Cell& c : s.cells(j)) zh.col(c.col) += zb.col(c.row);
            blk.derivatives.push_back(linalg::symmetrize(zh * zb.transpose()));
        }
        blk.rows = std::move(rows);
        blocks_.push_back(std::move(blk));
    }
}

std::unique_ptr<CovarianceOperator> BlockDiagonalBackend::at(const Vector& psi) const {
    check_psi(psi, r_);
    return std::make_unique<BlockOperator>(n_, r_, blocks_, psi);
}

Matrix BlockDiagonalBackend::apply_derivative(int j, const Matrix& b) const {
    if (j < 0 || j >= r_) throw InvalidArgument("derivative index out of range");
    if (b.rows() != n_) throw DimensionMismatch("operand has the wrong number of rows");
    if (j == r_ - 1) return b;
    Matrix out(b.rows(), b.cols());
    for (const Block& blk : blocks_) {
        const Index k = static_cast<Index>(blk.rows.size());
        Matrix sub(k, b.cols());
        for (Index i = 0; i < k; ++i) sub.row(i) = b.row(blk.rows[static_cast<std::size_t>(i)]);
        const Matrix res = blk.derivatives[static_cast<std::size_t>(j)] * sub;
        for (Index i = 0; i < k; ++i) out.row(blk.rows[static_cast<std::size_t>(i)]) = res.row(i);
    }
    return out;
}

Vector BlockDiagonalBackend::derivative_traces() const {
    Vector t = Vector::Zero(r_);
    for (const Block& blk : blocks_) {
        for (int j = 0; j + 1 < r_; ++j) t(j) += blk.derivatives[static_cast<std::size_t>(j)].trace();
    }
    t(r_ - 1) = static_cast<double>(n_);
    return t;
}

std::shared_ptr<const CovarianceBackend> make_backend(const LmmDesign& design) {
    if (coupled_row_groups(design).size() > 1) return std::make_shared<BlockDiagonalBackend>(design);
    return std::make_shared<DenseBackend>(design);
}

} // namespace lmmscore
