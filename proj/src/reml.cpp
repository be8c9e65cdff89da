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

#include "lmmscore/reml.hpp"

#include <algorithm>
#include <string>

#include "lmmscore/errors.hpp"

namespace lmmscore {

namespace {

// Below this pivot ratio the QR complement is replaced by the SVD one.
constexpr double kSvdFallbackRatio = 1e-6;

} // namespace

Matrix null_basis(const Matrix& X) {
    const Index n = X.rows();
    const Index p = X.cols();
    if (p == 0) return Matrix::Identity(n, n);
    if (p >= n) throw RankDeficient("fixed-effect design needs fewer columns than rows");

    Eigen::ColPivHouseholderQR<Matrix> qr(X);
    const Vector rdiag = qr.matrixQR().diagonal().cwiseAbs();
    const double top = rdiag.maxCoeff();
    const double bottom = rdiag.minCoeff();
    if (!(top > 0.0) || bottom <= kRankTolerance * top) {
        throw RankDeficient("fixed-effect design X is rank deficient (pivot ratio " +
                            std::to_string(top > 0.0 ? bottom / top : 0.0) + ")");
    }
    if (bottom > kSvdFallbackRatio * top) {
        const Matrix q = qr.householderQ();
        return q.rightCols(n - p);
    }
    Eigen::JacobiSVD<Matrix> svd(X, Eigen::ComputeFullU);
    return svd.matrixU().rightCols(n - p);
}

RemlTransform reml_transform(const LmmDesign& design) { return reml_transform(design, null_basis(design.X())); }

RemlTransform reml_transform(const LmmDesign& design, Matrix V) {
    if (V.rows() != design.n()) throw DimensionMismatch("null basis has the wrong number of rows");
    if (V.cols() != design.n() - design.p()) throw DimensionMismatch("null basis must have n - p columns");
    const double orth = (V.transpose() * V - Matrix::Identity(V.cols(), V.cols())).cwiseAbs().maxCoeff();
    const double null_err = design.p() > 0 ? (V.transpose() * design.X()).cwiseAbs().maxCoeff() : 0.0;
    if (!(orth <= 1e-8) || !(null_err <= 1e-8 * std::max(1.0, design.X().norm()))) {
        throw InvalidArgument("null basis must satisfy V^T V = I and V^T X = 0");
    }
    Matrix zt = V.transpose() * design.Z();
    LmmDesign reduced(Matrix(V.cols(), 0), std::move(zt), design.structure());
    return RemlTransform{std::move(V), std::move(reduced)};
}

RemlReduction reml_reduce(const LmmDesign& design, const Vector& y) {
    if (y.size() != design.n()) throw DimensionMismatch("response length does not match the design");
    RemlTransform t = reml_transform(design);
    Vector yt = t.V.transpose() * y;
    return RemlReduction{std::move(t), std::move(yt)};
}

ScoreStatistic restricted_score_statistic(const LmmDesign& design, const Vector& y, const Vector& psi,
                                          const FreeMask& free) {
    const RemlReduction red = reml_reduce(design, y);
    return score_statistic(red.transform.reduced_design, red.y, Parameter{psi, std::nullopt}, free);
}

} // namespace lmmscore
