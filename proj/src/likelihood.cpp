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

#include "lmmscore/likelihood.hpp"

#include <cmath>

#include "lmmscore/errors.hpp"
#include "lmmscore/reml.hpp"

namespace lmmscore {

struct LikelihoodEngine::Projection {
    Matrix G;                 // Σ^{-1} X
    Eigen::LLT<Matrix> M;     // X^T Σ^{-1} X
    Vector beta;
    Vector u;                 // Σ^{-1}(y - Xβ̃), i.e. P y
    double quad = 0.0;        // y^T P y
    double logdet_m = 0.0;
};

LikelihoodEngine::LikelihoodEngine(std::shared_ptr<const CovarianceBackend> backend, Matrix X, LikelihoodMode mode)
    : backend_(std::move(backend)), X_(std::move(X)), mode_(mode) {
    if (!backend_) throw InvalidArgument("likelihood engine needs a backend");
    if (X_.cols() == 0) X_.resize(backend_->n(), 0);
    if (X_.rows() != backend_->n()) throw DimensionMismatch("X rows do not match the backend");
    if (mode_ != LikelihoodMode::KnownBeta && X_.cols() > 0) {
        if (linalg::column_rank(X_, kRankTolerance) < X_.cols()) {
            throw RankDeficient("fixed-effect design X does not have full column rank");
        }
        if (mode_ == LikelihoodMode::Restricted && X_.cols() >= X_.rows()) {
            throw RankDeficient("restricted likelihood needs p < n");
        }
        Eigen::LLT<Matrix> xtx(X_.transpose() * X_);
        logdet_xtx_ = 2.0 * xtx.matrixLLT().diagonal().array().log().sum();
    }
}

LikelihoodEngine::Projection LikelihoodEngine::project(const CovarianceOperator& op, const Vector& y) const {
    if (y.size() != n()) throw DimensionMismatch("response length does not match the design");
    Projection pr;
    Vector sy = op.solve(y);
    if (mode_ == LikelihoodMode::KnownBeta || X_.cols() == 0) {
        pr.u = std::move(sy);
        pr.quad = y.dot(pr.u);
        if (X_.cols() > 0) pr.G = op.solve(X_);
        return pr;
    }
    pr.G = op.solve(X_);
    pr.M.compute(linalg::symmetrize(X_.transpose() * pr.G));
    if (pr.M.info() != Eigen::Success) throw RankDeficient("X^T Σ^{-1} X is not positive definite");
    pr.beta = pr.M.solve(X_.transpose() * sy);
    pr.u = sy - pr.G * pr.beta;
    pr.quad = y.dot(pr.u);
    pr.logdet_m = 2.0 * pr.M.matrixLLT().diagonal().array().log().sum();
    return pr;
}

double LikelihoodEngine::loglik(const Vector& psi, const Vector& y) const {
    const auto op = backend_->at(psi);
    const Projection pr = project(*op, y);
    double value = op->logdet() + pr.quad;
    if (mode_ == LikelihoodMode::Restricted && X_.cols() > 0) value += pr.logdet_m - logdet_xtx_;
    return -0.5 * value;
}

EngineEvaluation LikelihoodEngine::evaluate(const Vector& psi, const Vector& y, bool with_information) const {
    const auto op = backend_->at(psi);
    const Projection pr = project(*op, y);
    const int r = backend_->r();
    const bool restricted = mode_ == LikelihoodMode::Restricted && X_.cols() > 0;

    EngineEvaluation ev;
    ev.loglik = op->logdet() + pr.quad;
    if (restricted) ev.loglik += pr.logdet_m - logdet_xtx_;
    ev.loglik *= -0.5;
    ev.beta = pr.beta;

    const Vector trs = op->trace_solve_derivative();
    std::vector<Matrix> kg;   // K_j G, restricted mode only
    ev.score.resize(r);
    for (int j = 0; j < r; ++j) {
        const Vector ku = backend_->apply_derivative(j, pr.u);
        double tr = trs(j);
        if (restricted) {
            kg.push_back(backend_->apply_derivative(j, pr.G));
            tr -= pr.M.solve(pr.G.transpose() * kg.back()).trace();
        }
        ev.score(j) = 0.5 * (pr.u.dot(ku) - tr);
    }
    if (mode_ == LikelihoodMode::KnownBeta && X_.cols() > 0) {
        ev.score_beta = X_.transpose() * pr.u;
        ev.info_beta = linalg::symmetrize(X_.transpose() * pr.G);
    }
    if (!with_information) return ev;

    ev.information = 0.5 * op->trace_pairs();
    if (restricted) {
        std::vector<Matrix> c;       // M^{-1} G^T K_j G
        std::vector<Matrix> skg;     // Σ^{-1} K_j G
        for (int j = 0; j < r; ++j) {
            c.push_back(pr.M.solve(pr.G.transpose() * kg[static_cast<std::size_t>(j)]));
            skg.push_back(op->solve(kg[static_cast<std::size_t>(j)]));
        }
        for (int i = 0; i < r; ++i) {
            for (int j = i; j < r; ++j) {
                const auto si = static_cast<std::size_t>(i);
                const auto sj = static_cast<std::size_t>(j);
                const double cross = pr.M.solve(kg[si].transpose() * skg[sj]).trace();
                const double quad = (c[si] * c[sj]).trace();
                const double v = ev.information(i, j) + 0.5 * (quad - 2.0 * cross);
                ev.information(i, j) = v;
                ev.information(j, i) = v;
            }
        }
    }
    return ev;
}

Matrix LikelihoodEngine::information(const Vector& psi) const {
    return evaluate(psi, Vector::Zero(n()), true).information;
}

} // namespace lmmscore
