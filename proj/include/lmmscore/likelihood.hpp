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

#include "lmmscore/covariance_operator.hpp"
#include "lmmscore/inference.hpp"

namespace lmmscore {

/// KnownBeta: ℓ of y with mean zero (pass y - Xβ). Profile: ℓ with β
/// replaced by β̃(ψ). Restricted: the REML ℓ̃, written in terms of Σ so no
/// null basis is formed.
enum class LikelihoodMode { KnownBeta, Profile, Restricted };

struct EngineEvaluation {
    double loglik = 0.0;
    Vector score;        // length r, w.r.t. ψ
    Matrix information;  // r×r, expected information of the mode
    Vector beta;         // β̃(ψ) in Profile/Restricted modes
    Vector score_beta;   // X^T Σ^{-1} y in KnownBeta mode when X is non-empty
    Matrix info_beta;    // X^T Σ^{-1} X
};

/// Likelihood quantities evaluated through a CovarianceBackend. Reproduces
/// the dense inference/reml paths for any backend; used by the optimizer
/// and the simulation harness.
class LikelihoodEngine {
public:
    LikelihoodEngine(std::shared_ptr<const CovarianceBackend> backend, Matrix X, LikelihoodMode mode);

    const CovarianceBackend& backend() const noexcept { return *backend_; }
    LikelihoodMode mode() const noexcept { return mode_; }
    const Matrix& X() const noexcept { return X_; }
    Index n() const noexcept { return backend_->n(); }
    int r() const noexcept { return backend_->r(); }

    double loglik(const Vector& psi, const Vector& y) const;
    EngineEvaluation evaluate(const Vector& psi, const Vector& y, bool with_information = true) const;
    /// The expected information alone (independent of y).
    Matrix information(const Vector& psi) const;

private:
    struct Projection;
    Projection project(const CovarianceOperator& op, const Vector& y) const;

    std::shared_ptr<const CovarianceBackend> backend_;
    Matrix X_;
    LikelihoodMode mode_;
    double logdet_xtx_ = 0.0;
};

} // namespace lmmscore
