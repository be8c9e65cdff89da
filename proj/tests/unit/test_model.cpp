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

#include <doctest.h>

#include <cmath>

#include "lmmscore/errors.hpp"
#include "lmmscore/estimation.hpp"
#include "lmmscore/model.hpp"
#include "oracles.hpp"

using namespace lmmscore;

namespace {

CovarianceStructure correlated_pair() { return CovarianceStructure::clustered(1, 2); }

Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Index>(v.size()));
    Index i = 0;
    for (const double x : v) out(i++) = x;
    return out;
}

} // namespace

TEST_SUITE("model-core") {

TEST_CASE("build_psi with a zero coefficient gives the zero matrix") {
    const auto s = CovarianceStructure::scaled_identity(2);
    CHECK(build_psi(s, vec({0.0, 2.5})).isZero(0.0));
}

TEST_CASE("build_psi assembles the correlated 2x2 block") {
    const auto s = correlated_pair();
    CHECK(s.r() == 4);
    Matrix expected(2, 2);
    expected << 1.0, 0.5, 0.5, 1.0;
    CHECK((build_psi(s, vec({1.0, 0.5, 1.0, 1.0})) - expected).norm() == 0.0);
    CHECK(build_psi(s, vec({1.0, 0.0, 1.0, 1.0})).isIdentity(0.0));
}

TEST_CASE("build_psi rejects a wrong-length parameter") {
    CHECK_THROWS_AS(build_psi(correlated_pair(), vec({1.0, 1.0})), DimensionMismatch);
}

TEST_CASE("build_psi is linear") {
    auto rng = make_stream(11, 0, "test");
    const auto s = CovarianceStructure::clustered(3, 2);
    for (int t = 0; t < 20; ++t) {
        const Vector u = oracle::random_vector(rng, 4), w = oracle::random_vector(rng, 4);
        const double a = rng.normal(), b = rng.normal();
        const Matrix lhs = build_psi(s, a * u + b * w);
        const Matrix rhs = a * build_psi(s, u) + b * build_psi(s, w);
        CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("build_sigma for the Z = I model is a scaled identity") {
    const LmmDesign d = example1_design(5);
    CHECK((build_sigma(d, vec({0.7, 1.3})) - 2.0 * Matrix::Identity(5, 5)).norm() <= 1e-15);
    CHECK(build_sigma(d, Vector::Zero(2)).isZero(0.0));
}

TEST_CASE("build_sigma for two clusters of two with a random intercept") {
    Matrix Z = Matrix::Zero(4, 2);
    Z(0, 0) = Z(1, 0) = Z(2, 1) = Z(3, 1) = 1.0;
    const LmmDesign d(Matrix(4, 0), Z, CovarianceStructure::scaled_identity(2));
    Matrix block(2, 2);
    block << 2.0, 1.0, 1.0, 2.0;
    Matrix expected = Matrix::Zero(4, 4);
    expected.topLeftCorner(2, 2) = block;
    expected.bottomRightCorner(2, 2) = block;
    CHECK((build_sigma(d, vec({1.0, 1.0})) - expected).norm() == 0.0);
}

TEST_CASE("build_sigma accepts arbitrary real v and matches the direct assembly") {
    auto rng = make_stream(12, 0, "test");
    for (int t = 0; t < 10; ++t) {
        const auto inst = oracle::random_instance(100 + t);
        const Vector v = oracle::random_vector(rng, inst.design.r());
        CHECK((build_sigma(inst.design, v) - oracle::sigma(inst.design, v)).norm() <= 1e-12);
    }
}

TEST_CASE("check_parameter classifications") {
    CHECK(check_parameter(CovarianceStructure::scaled_identity(3), vec({0.0, 1.0})) == ParameterStatus::Boundary);
    CHECK(check_parameter(correlated_pair(), vec({1.0, 1.0, 1.0, 1.0})) == ParameterStatus::Boundary);
    CHECK(check_parameter(correlated_pair(), vec({1.0, 0.0, 1.0, 1.0})) == ParameterStatus::Interior);
    CHECK(check_parameter(correlated_pair(), vec({1.0, 1.5, 1.0, 1.0})) == ParameterStatus::Outside);
    CHECK(check_parameter(correlated_pair(), vec({1.0, 0.0, 1.0, 0.0})) == ParameterStatus::Outside);
    CHECK(check_parameter(correlated_pair(), vec({1.0, 0.0, 1.0, -1.0})) == ParameterStatus::Outside);
}

TEST_CASE("check_parameter with zero tolerance: zero and perfectly correlated blocks are boundary") {
    CHECK(check_parameter(correlated_pair(), vec({0.0, 0.0, 0.0, 1.0}), 0.0) == ParameterStatus::Boundary);
    CHECK(check_parameter(correlated_pair(), vec({4.0, -2.0, 1.0, 1.0}), 0.0) == ParameterStatus::Boundary);
    CHECK(check_parameter(correlated_pair(), vec({1.0, -1.0, 1.0, 1.0}), 0.0) == ParameterStatus::Boundary);
}

TEST_CASE("whiten: scalar covariance and zero residual") {
    const LmmDesign d(Matrix(2, 0), Matrix::Identity(2, 2), CovarianceStructure::scaled_identity(2));
    const auto w = whiten(d, vec({2.0, 0.0}), Parameter{vec({3.0, 1.0}), std::nullopt});
    CHECK(std::abs(w.residual(0) - 1.0) <= 1e-14);
    CHECK(std::abs(w.residual(1)) <= 1e-14);
    CHECK((w.whitener * w.sigma * w.whitener.transpose() - Matrix::Identity(2, 2)).norm() <= 1e-13);

    Matrix X(2, 1);
    X << 1.0, 2.0;
    const LmmDesign dx(X, Matrix::Identity(2, 2), CovarianceStructure::scaled_identity(2));
    const auto w0 = whiten(dx, X * vec({0.3}), Parameter{vec({1.0, 1.0}), vec({0.3})});
    CHECK(w0.residual.norm() <= 1e-15);
}

TEST_CASE("whiten: Z = I model with n = 3") {
    const auto w = whiten(example1_design(3), vec({2.0, 0.0, -2.0}), Parameter{vec({1.0, 1.0}), std::nullopt});
    CHECK(std::abs(w.residual(0) - std::sqrt(2.0)) <= 1e-14);
    CHECK(std::abs(w.residual(1)) <= 1e-14);
    CHECK(std::abs(w.residual(2) + std::sqrt(2.0)) <= 1e-14);
}

TEST_CASE("whiten rejects a singular covariance") {
    const LmmDesign d(Matrix(3, 0), Matrix::Ones(3, 1), CovarianceStructure::scaled_identity(1));
    CHECK_THROWS_AS(whiten(d, Vector::Zero(3), Parameter{vec({1.0, 0.0}), std::nullopt}), SingularCovariance);
    CHECK_THROWS_AS(a_combination(d, vec({1.0, 0.0}), vec({1.0, 0.0})), SingularCovariance);
}

TEST_CASE("a_combination examples") {
    const LmmDesign d = example1_design(4);
    // Σ = 3I: A_r = I/3.
    CHECK((a_combination(d, vec({2.0, 1.0}), vec({0.0, 1.0})) - Matrix::Identity(4, 4) / 3.0).norm() <= 1e-14);
    const double psi = 0.6;
    const Matrix a = a_combination(d, vec({psi, 1.0}), vec({1.0, 1.0}) / std::sqrt(2.0));
    CHECK((a - std::sqrt(2.0) / (1.0 + psi) * Matrix::Identity(4, 4)).norm() <= 1e-14);
    CHECK(a_combination(d, vec({psi, 1.0}), Vector::Zero(2)).isZero(0.0));
}

TEST_CASE("whitener freedom: symmetric and Cholesky agree on invariants") {
    auto rng = make_stream(13, 0, "test");
    for (int t = 0; t < 10; ++t) {
        const auto inst = oracle::random_instance(200 + t);
        const LmmDesign& d = inst.design;
        const Vector v = oracle::random_vector(rng, d.r());
        Vector ev_sym = linalg::eigenvalues_symmetric(a_combination(d, inst.psi, v, WhitenerKind::Symmetric));
        Vector ev_chol = linalg::eigenvalues_symmetric(a_combination(d, inst.psi, v, WhitenerKind::Cholesky));
        CHECK((ev_sym - ev_chol).cwiseAbs().maxCoeff() <= 1e-8);

        const Parameter theta{inst.psi, inst.beta};
        const auto ws = whiten(d, inst.y, theta, WhitenerKind::Symmetric);
        const auto wc = whiten(d, inst.y, theta, WhitenerKind::Cholesky);
        const Matrix ms = a_combination(d, inst.psi, v, WhitenerKind::Symmetric);
        const Matrix mc = a_combination(d, inst.psi, v, WhitenerKind::Cholesky);
        const double qs = ws.residual.dot(ms * ws.residual);
        const double qc = wc.residual.dot(mc * wc.residual);
        CHECK(std::abs(qs - qc) <= 1e-8 * std::max(1.0, std::abs(qs)));
    }
}

TEST_CASE("whitened residuals have identity covariance") {
    const auto inst = oracle::random_instance(300);
    const LmmDesign d(Matrix(3, 0), inst.design.Z().topRows(3), inst.design.structure());
    const Matrix root = linalg::spectral_apply(linalg::eigen_symmetric(build_sigma(d, inst.psi)),
                                               [](double x) { return std::sqrt(x); });
    const Index reps = 100000;
    auto rng = make_stream(14, 0, "test");
    Matrix sum = Matrix::Zero(3, 3), sum_sq = Matrix::Zero(3, 3);
    const Parameter theta{inst.psi, std::nullopt};
    for (Index k = 0; k < reps; ++k) {
        const Vector y = root * oracle::random_vector(rng, 3);
        const Vector r = whiten(d, y, theta, WhitenerKind::Cholesky).residual;
        const Matrix outer = r * r.transpose();
        sum += outer;
        sum_sq += outer.cwiseProduct(outer);
    }
    const Matrix mean = sum / static_cast<double>(reps);
    for (Index i = 0; i < 3; ++i)
        for (Index j = 0; j < 3; ++j) {
            const double var = sum_sq(i, j) / static_cast<double>(reps) - mean(i, j) * mean(i, j);
            const double se = std::sqrt(var / static_cast<double>(reps));
            CHECK(std::abs(mean(i, j) - (i == j ? 1.0 : 0.0)) <= 5.0 * se);
        }
}

TEST_CASE("structure factories") {
    const std::vector<Index> sizes{2, 3};
    const auto s = CovarianceStructure::diagonal_blocks(sizes);
    CHECK(s.q() == 5);
    CHECK(s.r() == 3);
    CHECK(s.cells(0).size() == 2);
    CHECK(s.cells(1).size() == 3);
    CHECK(s.cells(2).empty());
    const auto c = CovarianceStructure::clustered(3, 2);
    CHECK(c.q() == 6);
    CHECK(c.r() == 4);
    CHECK(c.cells(1).size() == 6);   // both triangles of three blocks
    Eigen::MatrixXi bad(2, 2);
    bad << 0, 1, 0, 0;   // asymmetric
    CHECK_THROWS_AS(CovarianceStructure(2, 3, bad), InvalidArgument);
}

TEST_CASE("LmmDesign dimension checks") {
    CHECK_THROWS_AS(LmmDesign(Matrix(3, 1), Matrix(2, 2), CovarianceStructure::scaled_identity(2)), DimensionMismatch);
    CHECK_THROWS_AS(LmmDesign(Matrix(2, 1), Matrix(2, 3), CovarianceStructure::scaled_identity(2)), DimensionMismatch);
}

}
