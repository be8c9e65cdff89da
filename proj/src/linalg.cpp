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

#include "lmmscore/linalg.hpp"

#include <cmath>

#include "lmmscore/errors.hpp"

namespace lmmscore::linalg {

Matrix symmetrize(const Matrix& a) {
    return 0.5 * (a + a.transpose());
}

namespace {

// Fallback for the rare matrices on which the tridiagonal QR stalls (heavily
// repeated spectra). B = S + cI with c = |S|_F is PSD, so its singular
// values and left singular vectors are eigenpairs.
SymmetricEigen jacobi_fallback(const Matrix& s, bool vectors) {
    const Index n = s.rows();
    const double c = s.norm();
    const Matrix b = s + c * Matrix::Identity(n, n);
    Eigen::JacobiSVD<Matrix> svd(b, vectors ? Eigen::ComputeFullU : 0);
    if (svd.info() != Eigen::Success || !svd.singularValues().allFinite()) {
        throw Error("symmetric eigendecomposition did not converge");
    }
    SymmetricEigen out;
    out.values = svd.singularValues().reverse().array() - c;
    if (vectors) out.vectors = svd.matrixU().rowwise().reverse();
    return out;
}

} // namespace

SymmetricEigen eigen_symmetric(const Matrix& a) {
    const Matrix s = symmetrize(a);
    if (!s.allFinite()) throw Error("symmetric eigendecomposition of a non-finite matrix");
    Eigen::SelfAdjointEigenSolver<Matrix> solver(s);
    if (solver.info() != Eigen::Success) return jacobi_fallback(s, true);
    return {solver.eigenvalues(), solver.eigenvectors()};
}

Vector eigenvalues_symmetric(const Matrix& a) {
    if (a.rows() == 0) return Vector();
    const Matrix s = symmetrize(a);
    if (!s.allFinite()) throw Error("symmetric eigendecomposition of a non-finite matrix");
    Eigen::SelfAdjointEigenSolver<Matrix> solver(s, Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success) return jacobi_fallback(s, false).values;
    return solver.eigenvalues();
}

Matrix inverse_sqrt_spd(const Matrix& a, double floor_ratio) {
    const SymmetricEigen eig = eigen_symmetric(a);
    const double top = eig.values.size() ? eig.values.maxCoeff() : 0.0;
    if (eig.values.size() == 0) return Matrix(0, 0);
    if (!(top > 0.0) || eig.values.minCoeff() <= floor_ratio * top) {
        throw SingularInformation("information matrix is singular (smallest eigenvalue " +
                                  std::to_string(eig.values.minCoeff()) + ", largest " +
                                  std::to_string(top) + ")");
    }
    return spectral_apply(eig, [](double x) { return 1.0 / std::sqrt(x); });
}

double spectral_norm_symmetric(const Matrix& a) {
    if (a.size() == 0) return 0.0;
    return eigenvalues_symmetric(a).cwiseAbs().maxCoeff();
}

Index column_rank(const Matrix& a, double rel_tol) {
    if (a.cols() == 0) return 0;
    Eigen::ColPivHouseholderQR<Matrix> qr(a);
    const auto& r = qr.matrixR();
    const Index k = std::min(a.rows(), a.cols());
    const double lead = std::abs(r(0, 0));
    if (lead == 0.0) return 0;
    Index rank = 0;
    for (Index i = 0; i < k; ++i) {
        if (std::abs(r(i, i)) > rel_tol * lead) ++rank;
    }
    return rank;
}

} // namespace lmmscore::linalg
