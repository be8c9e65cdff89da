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

#include <algorithm>
#include <cmath>

#include "lmmscore/crossed.hpp"
#include "lmmscore/errors.hpp"
#include "lmmscore/reml.hpp"
#include "oracles.hpp"

using namespace lmmscore;

namespace {

Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Index>(v.size()));
    Index i = 0;
    for (const double x : v) out(i++) = x;
    return out;
}

/// Z^(j) = 1 ⊗ ... ⊗ I_{n_j} ⊗ ... ⊗ 1 by explicit Kronecker products.
Matrix kron(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

Matrix factor_block(const std::vector<Index>& sizes, std::size_t j) {
    Matrix out = Matrix::Ones(1, 1);
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        const Matrix f = i == j ? Matrix(Matrix::Identity(sizes[i], sizes[i])) : Matrix(Matrix::Ones(sizes[i], 1));
        out = kron(out, f);
    }
    return out;
}

std::vector<std::vector<Index>> small_layouts(Index max_n) {
    std::vector<std::vector<Index>> out;
    for (Index a = 2; a <= max_n; ++a)
        for (Index b = 2; a * b <= max_n; ++b) {
            out.push_back({a, b});
            for (Index c = 2; a * b * c <= max_n; ++c) out.push_back({a, b, c});
        }
    return out;
}

std::vector<double> expanded(const std::vector<SpectralComponent>& spec) {
    std::vector<double> out;
    for (const auto& c : spec)
        for (Index k = 0; k < c.multiplicity; ++k) out.push_back(c.eigenvalue);
    std::sort(out.begin(), out.end());
    return out;
}

Vector random_psi(CounterRng& rng, int r) {
    Vector psi(r);
    for (int j = 0; j < r; ++j) psi(j) = rng.uniform() * 2.0;
    psi(r - 1) += 0.2;
    return psi;
}

} // namespace

TEST_SUITE("crossed-designs") {

TEST_CASE("build_crossed_design for a 2x2 layout matches the Kronecker construction") {
    const std::vector<Index> sizes{2, 2};
    const LmmDesign d = build_crossed_design(CrossedLayout(sizes));
    CHECK(d.n() == 4);
    CHECK(d.q() == 4);
    CHECK(d.r() == 3);
    CHECK(d.X() == Matrix::Ones(4, 1));
    Matrix z1 = kron(Matrix::Identity(2, 2), Matrix::Ones(2, 1));
    CHECK(d.Z().leftCols(2) == z1);
    CHECK(d.Z().rightCols(2) == kron(Matrix::Ones(2, 1), Matrix::Identity(2, 2)));
    const Vector psi = vec({0.7, 1.9, 0.4});
    Matrix hand = 0.4 * Matrix::Identity(4, 4);
    hand += 0.7 * z1 * z1.transpose();
    hand += 1.9 * d.Z().rightCols(2) * d.Z().rightCols(2).transpose();
    CHECK((build_sigma(d, psi) - hand).norm() <= 1e-14);
}

TEST_CASE("column sums of each factor block equal n_(j)") {
    const CrossedLayout layout({3, 4, 2});
    const LmmDesign d = build_crossed_design(layout);
    Index offset = 0;
    for (Index j = 0; j < layout.factors(); ++j) {
        const Index nj = layout.factor_sizes()[static_cast<std::size_t>(j)];
        const Matrix block = d.Z().middleCols(offset, nj);
        CHECK((block.colwise().sum().array() == static_cast<double>(layout.n_without(j))).all());
        CHECK(block == factor_block(layout.factor_sizes(), static_cast<std::size_t>(j)));
        offset += nj;
    }
    CHECK(layout.n() == 24);
    CHECK(layout.n_tilde() == 24 - 1 - (2 + 3 + 1));
}

TEST_CASE("dense Sigma equals the projection form on n <= 36") {
    auto rng = make_stream(41, 0, "test");
    for (const auto& sizes : small_layouts(36)) {
        const CrossedLayout layout(sizes);
        const LmmDesign d = build_crossed_design(layout);
        const Vector psi = random_psi(rng, layout.r());
        Matrix want = psi(layout.r() - 1) * Matrix::Identity(layout.n(), layout.n());
        for (std::size_t j = 0; j < sizes.size(); ++j) {
            const Matrix z = factor_block(sizes, j);
            const double nj = static_cast<double>(layout.n_without(static_cast<Index>(j)));
            want += psi(static_cast<Index>(j)) * nj * (z * z.transpose() / nj);
        }
        CHECK((build_sigma(d, psi) - want).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("averaging matrices are commuting projections") {
    const std::vector<Index> sizes{3, 2, 4};
    const CrossedLayout layout(sizes);
    std::vector<Matrix> P;
    for (std::size_t j = 0; j < sizes.size(); ++j) {
        const Matrix z = factor_block(sizes, j);
        P.push_back(z * z.transpose() / static_cast<double>(layout.n_without(static_cast<Index>(j))));
    }
    for (std::size_t i = 0; i < P.size(); ++i) {
        CHECK((P[i] * P[i] - P[i]).cwiseAbs().maxCoeff() <= 1e-12);
        for (std::size_t j = 0; j < P.size(); ++j) CHECK((P[i] * P[j] - P[j] * P[i]).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("crossed_spectrum examples") {
    const CrossedLayout layout({2, 2});
    CHECK(expanded(crossed_spectrum(layout, vec({1.0, 1.0, 1.0}))) == std::vector<double>{1.0, 3.0, 3.0, 5.0});
    const auto flat = crossed_spectrum(layout, vec({0.0, 0.0, 2.5}));
    for (const auto& c : flat) CHECK(c.eigenvalue == 2.5);
    CHECK(expanded(flat).size() == 4);
}

TEST_CASE("crossed_spectrum multiplicities sum to n") {
    auto rng = make_stream(42, 0, "test");
    for (int t = 0; t < 20; ++t) {
        std::vector<Index> sizes;
        const int k = 1 + static_cast<int>(rng.uniform() * 4.0);
        for (int j = 0; j < k; ++j) sizes.push_back(2 + static_cast<Index>(rng.uniform() * 30.0));
        const CrossedLayout layout(sizes);
        Index total = 0;
        for (const auto& c : crossed_spectrum(layout, random_psi(rng, layout.r()))) total += c.multiplicity;
        CHECK(total == layout.n());
    }
}

TEST_CASE("crossed_spectrum equals dense eigenvalues for every layout with n <= 64") {
    auto rng = make_stream(43, 0, "test");
    for (const auto& sizes : small_layouts(64)) {
        const CrossedLayout layout(sizes);
        const Vector psi = random_psi(rng, layout.r());
        const Vector dense = linalg::eigenvalues_symmetric(build_sigma(build_crossed_design(layout), psi));
        const auto spec = expanded(crossed_spectrum(layout, psi));
        REQUIRE(static_cast<Index>(spec.size()) == dense.size());
        double worst = 0.0;
        for (Index i = 0; i < dense.size(); ++i) worst = std::max(worst, std::abs(dense(i) - spec[static_cast<std::size_t>(i)]));
        CHECK(worst <= 1e-8);
    }
}

TEST_CASE("crossed_a_ratio equals the dense a_ratio, restricted and not") {
    auto rng = make_stream(44, 0, "test");
    for (const auto& sizes : small_layouts(40)) {
        const CrossedLayout layout(sizes);
        const LmmDesign d = build_crossed_design(layout);
        const Vector psi = random_psi(rng, layout.r());
        const Vector v = oracle::random_vector(rng, layout.r());
        CHECK(std::abs(crossed_a_ratio(layout, psi, v, false).a_value - a_ratio(d, psi, v).a_value) <= 1e-8);
        const LmmDesign reduced = reml_transform(d).reduced_design;
        CHECK(std::abs(crossed_a_ratio(layout, psi, v, true).a_value - a_ratio(reduced, psi, v).a_value) <= 1e-8);
    }
}

TEST_CASE("CrossedBackend agrees with the dense backend") {
    auto rng = make_stream(45, 0, "test");
    for (const auto& sizes : std::vector<std::vector<Index>>{{3, 4}, {2, 3, 4}, {5, 2}}) {
        const CrossedLayout layout(sizes);
        const LmmDesign d = build_crossed_design(layout);
        const CrossedBackend cb(layout);
        const DenseBackend db(d);
        const Vector psi = random_psi(rng, layout.r());
        const auto co = cb.at(psi);
        const auto dn = db.at(psi);
        const Matrix b = oracle::random_matrix(rng, layout.n(), 3);
        CHECK(co->logdet() == doctest::Approx(dn->logdet()).epsilon(1e-10));
        CHECK((co->solve(b) - dn->solve(b)).norm() <= 1e-10 * b.norm());
        CHECK((co->apply_sqrt(b) - dn->apply_sqrt(b)).norm() <= 1e-10 * b.norm());
        CHECK((co->trace_solve_derivative() - dn->trace_solve_derivative()).norm() <= 1e-9);
        CHECK((co->trace_pairs() - dn->trace_pairs()).norm() <= 1e-9);
        CHECK((cb.derivative_traces() - db.derivative_traces()).norm() <= 1e-12);
        for (int j = 0; j < layout.r(); ++j) CHECK((cb.apply_derivative(j, b) - d.derivative(j) * b).norm() <= 1e-10 * b.norm());
        const Matrix root = co->apply_sqrt(Matrix::Identity(layout.n(), layout.n()));
        CHECK((root * root - build_sigma(d, psi)).norm() <= 1e-9);
    }
}

TEST_CASE("CrossedBackend rejects a non-positive error variance") {
    const CrossedBackend cb(CrossedLayout({3, 3}));
    CHECK_THROWS_AS(cb.at(vec({1.0, 1.0, 0.0})), SingularCovariance);
}

TEST_CASE("layout validation and dense limit") {
    CHECK_THROWS_AS(CrossedLayout({1, 4}), InvalidArgument);
    CHECK_THROWS_AS(CrossedLayout(std::vector<Index>{}), InvalidArgument);
    CHECK_THROWS_AS(build_crossed_design(CrossedLayout({4, 4}), 10), InvalidArgument);
    CHECK_NOTHROW(build_crossed_design(CrossedLayout({4, 4}), 16));
    // the spectral path has no size limit
    CHECK(expanded(crossed_spectrum(CrossedLayout({100, 100}), vec({1.0, 1.0, 1.0}))).size() == 10000);
}

}
