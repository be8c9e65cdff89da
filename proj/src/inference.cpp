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

#include "lmmscore/inference.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lmmscore/errors.hpp"

namespace lmmscore {

namespace {

void check_response(const LmmDesign& design, const Vector& y) {
    if (y.size() != design.n()) {
        throw DimensionMismatch("response has length " + std::to_string(y.size()) + ", expected " +
                                std::to_string(design.n()));
    }
}

// A_j = W K_j W^T for all j.
std::vector<Matrix> whitened_derivatives(const LmmDesign& design, const Matrix& w) {
    std::vector<Matrix> a;
    a.reserve(static_cast<std::size_t>(design.r()));
    for (int j = 0; j < design.r(); ++j) {
        a.push_back(linalg::symmetrize(w * design.derivative(j) * w.transpose()));
    }
    return a;
}

double log_determinant_spd(const Matrix& sigma) {
    const Vector ev = linalg::eigenvalues_symmetric(sigma);
    if (ev.size() && ev.minCoeff() <= 0.0) {
        throw SingularCovariance("covariance matrix is not positive definite");
    }
    return ev.array().log().sum();
}

} // namespace

double log_likelihood(const LmmDesign& design, const Vector& y, const Parameter& theta) {
    const WhitenedState state = whiten(design, y, theta);
    return -0.5 * (log_determinant_spd(state.sigma) + state.residual.squaredNorm());
}

ScoreReport score(const LmmDesign& design, const Vector& y, const Parameter& theta, WhitenerKind kind) {
    check_response(design, y);
    const WhitenedState state = whiten(design, y, theta, kind);
    const std::vector<Matrix> a = whitened_derivatives(design, state.whitener);
    const Vector& R = state.residual;

    ScoreReport report;
    report.score_psi.resize(design.r());
    for (int j = 0; j < design.r(); ++j) {
        report.score_psi(j) = 0.5 * (R.dot(a[j] * R) - a[j].trace());
    }
    if (theta.beta) report.score_beta = design.X().transpose() * (state.whitener.transpose() * R);
    report.loglik = -0.5 * (log_determinant_spd(state.sigma) + R.squaredNorm());
    return report;
}

ScoreReport fisher_information(const LmmDesign& design, const Vector& psi) {
    const Matrix w = whitener_for(build_sigma(design, psi));
    const std::vector<Matrix> a = whitened_derivatives(design, w);
    const int r = design.r();
    ScoreReport report;
    report.info_psi.resize(r, r);
    for (int i = 0; i < r; ++i) {
        for (int j = i; j < r; ++j) {
            // tr(A_i A_j) for symmetric matrices is the entrywise inner product.
            const double v = 0.5 * a[i].cwiseProduct(a[j]).sum();
            report.info_psi(i, j) = v;
            report.info_psi(j, i) = v;
        }
    }
    const Matrix wx = w * design.X();
    report.info_beta = wx.transpose() * wx;
    return report;
}

Matrix derivative_gram(const LmmDesign& design) {
    // ⟨Z H_i Z^T, Z H_j Z^T⟩ = tr(H_i C H_j C), ⟨Z H_i Z^T, I⟩ = tr(H_i C), C = Z^T Z.
    const CovarianceStructure& s = design.structure();
    const int r = s.r();
    const Matrix c = design.Z().transpose() * design.Z();
    Matrix g(r, r);
    for (int i = 0; i < r; ++i) {
        for (int j = i; j < r; ++j) {
            double v = 0.0;
            if (i == r - 1 && j == r - 1) {
                v = static_cast<double>(design.n());
            } else if (j == r - 1) {
                for (const Cell& a : s.cells(i)) v += c(a.col, a.row);
            } else {
                for (const Cell& a : s.cells(i)) {
                    for (const Cell& b : s.cells(j)) v += c(a.col, b.row) * c(b.col, a.row);
                }
            }
            g(i, j) = v;
            g(j, i) = v;
        }
    }
    return g;
}

bool information_positive_definite(const LmmDesign& design, double tol) {
    const Vector ev = linalg::eigenvalues_symmetric(derivative_gram(design));
    const double top = ev.maxCoeff();
    return top > 0.0 && ev.minCoeff() > tol * top;
}

ScoreStatistic standardize_score(const Vector& score, const Matrix& information) {
    if (information.rows() != score.size() || information.cols() != score.size()) {
        throw DimensionMismatch("information does not match the score dimension");
    }
    ScoreStatistic out;
    if (score.size() == 0) {
        out.w = Vector();
        return out;
    }
    out.w = linalg::inverse_sqrt_spd(information) * score;
    out.t = out.w.squaredNorm();
    return out;
}

Vector select(const Vector& v, const FreeMask& free) {
    if (free.empty()) return v;
    if (static_cast<Index>(free.size()) != v.size()) throw DimensionMismatch("free mask length mismatch");
    Vector out(std::count(free.begin(), free.end(), true));
    Index k = 0;
    for (Index i = 0; i < v.size(); ++i) {
        if (free[static_cast<std::size_t>(i)]) out(k++) = v(i);
    }
    return out;
}

Matrix select(const Matrix& m, const FreeMask& free) {
    if (free.empty()) return m;
    if (static_cast<Index>(free.size()) != m.rows() || m.rows() != m.cols()) {
        throw DimensionMismatch("free mask length mismatch");
    }
    std::vector<Index> idx;
    for (Index i = 0; i < m.rows(); ++i) {
        if (free[static_cast<std::size_t>(i)]) idx.push_back(i);
    }
    Matrix out(idx.size(), idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t j = 0; j < idx.size(); ++j) out(i, j) = m(idx[i], idx[j]);
    }
    return out;
}

ScoreStatistic score_statistic(const LmmDesign& design, const Vector& y, const Parameter& theta,
                               const FreeMask& free) {
    const ScoreReport s = score(design, y, theta);
    const ScoreReport info = fisher_information(design, theta.psi);
    ScoreStatistic psi_part = standardize_score(select(s.score_psi, free), select(info.info_psi, free));
    if (!theta.beta || design.p() == 0) return psi_part;

    const ScoreStatistic beta_part = standardize_score(s.score_beta, info.info_beta);
    ScoreStatistic joint;
    joint.w.resize(design.p() + design.r());
    joint.w << beta_part.w, psi_part.w;
    joint.t = joint.w.squaredNorm();
    return joint;
}

Vector gls_beta(const LmmDesign& design, const Vector& y, const Vector& psi) {
    check_response(design, y);
    if (design.p() == 0) return Vector();
    if (linalg::column_rank(design.X(), 1e-10) < design.p()) {
        throw RankDeficient("fixed-effect design X does not have full column rank");
    }
    const Matrix w = whitener_for(build_sigma(design, psi));
    const Matrix wx = w * design.X();
    const Vector wy = w * y;
    return (wx.transpose() * wx).ldlt().solve(wx.transpose() * wy);
}

double profile_score_statistic(const LmmDesign& design, const Vector& y, const Vector& psi) {
    Parameter theta{psi, std::nullopt};
    if (design.p() > 0) theta.beta = gls_beta(design, y, psi);
    const ScoreReport s = score(design, y, theta);
    const ScoreReport info = fisher_information(design, psi);
    return standardize_score(s.score_psi, info.info_psi).t;
}

double wald_statistic(const Vector& psi, const Vector& psi_hat, const Matrix& info_at_hat) {
    if (psi.size() != psi_hat.size() || info_at_hat.rows() != psi.size() ||
        info_at_hat.cols() != psi.size()) {
        throw DimensionMismatch("Wald statistic inputs have inconsistent dimensions");
    }
    const Vector d = psi_hat - psi;
    return d.dot(info_at_hat * d);
}

double clamp_lrt(double value) {
    if (value < -kLrtNegativeTolerance) {
        throw OptimizationFailure("likelihood ratio statistic is negative (" + std::to_string(value) +
                                  "); the supplied estimate is not a maximizer");
    }
    return value < 0.0 ? 0.0 : value;
}

double lrt_statistic(const LmmDesign& design, const Vector& y, const Vector& psi, const Parameter& theta_hat) {
    Parameter at_psi{psi, std::nullopt};
    if (theta_hat.beta) at_psi.beta = design.p() > 0 ? gls_beta(design, y, psi) : Vector();
    const double top = log_likelihood(design, y, theta_hat);
    return clamp_lrt(2.0 * (top - log_likelihood(design, y, at_psi)));
}

} // namespace lmmscore
