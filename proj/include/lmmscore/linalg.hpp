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

#include <Eigen/Dense>

namespace lmmscore {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace linalg {

Matrix symmetrize(const Matrix& a);

/// Eigendecomposition of a symmetric matrix, eigenvalues ascending.
struct SymmetricEigen {
    Vector values;
    Matrix vectors;
};

SymmetricEigen eigen_symmetric(const Matrix& a);
Vector eigenvalues_symmetric(const Matrix& a);

/// U f(Λ) U^T for a precomputed decomposition.
template <typename F>
Matrix spectral_apply(const SymmetricEigen& eig, F f) {
    Vector mapped = eig.values.unaryExpr(f);
    return eig.vectors * mapped.asDiagonal() * eig.vectors.transpose();
}

/// Symmetric inverse square root of a symmetric positive definite matrix.
/// Throws SingularInformation when λ_min ≤ floor_ratio·λ_max.
Matrix inverse_sqrt_spd(const Matrix& a, double floor_ratio = 1e-12);

/// Largest absolute eigenvalue of a symmetric matrix.
double spectral_norm_symmetric(const Matrix& a);

/// Numerical column rank of `a` with tolerance relative to the largest
/// pivot of a column-pivoted QR.
Index column_rank(const Matrix& a, double rel_tol);

} // namespace linalg
} // namespace lmmscore
