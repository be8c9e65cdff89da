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

#include "lmmscore/covariance_operator.hpp"
#include "lmmscore/errors.hpp"
#include "lmmscore/estimation.hpp"
#include "lmmscore/likelihood.hpp"
#include "lmmscore/reml.hpp"
#include "lmmscore/simulation.hpp"
#include "oracles.hpp"

using namespace lmmscore;

namespace {

Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Index>(v.size()));
    Index i = 0;
    for (const double x : v) out(i++) = x;
    return out;
}

Vector with_mean_square(Index n, double m) {
    Vector y = Vector::Constant(n, std::sqrt(m));
    for (Index i = 1; i < n; i += 2) y(i) = -y(i);
    return y;
}

LmmDesign one_way(Index m, Index k) {
    Matrix Z = Matrix::Zero(m * k, m);
    for (Index i = 0; i < m; ++i) Z.block(i * k, i, k, 1).setOnes();
    return LmmDesign(Matrix::Ones(m * k, 1), Z, CovarianceStructure::scaled_identity(m));
}

LmmDesign cluster_design(Index m, Index k, std::uint64_t seed) {
    auto rng = make_stream(seed, 0, "test");
    Matrix Z = Matrix::Zero(m * k, 2 * m);
    Matrix X(m * k, 2);
    for (Index i = 0; i < m; ++i)
        for (Index l = 0; l < k; ++l) {
            const double x = rng.uniform(-1.0, 1.0);
            X.row(i * k + l) << 1.0, x;
            Z(i * k + l, 2 * i) = 1.0;
            Z(i * k + l, 2 * i + 1) = x;
        }
    return LmmDesign(X, Z, CovarianceStructure::clustered(m, 2));
}

Vector draw(const LmmDesign& d, const Vector& psi, const Vector& beta, CounterRng& rng) {
    const Matrix root = linalg::spectral_apply(linalg::eigen_symmetric(build_sigma(d, psi)),
                                               [](double x) { return std::sqrt(std::max(x, 0.0)); });
    return d.X() * beta + root * oracle::random_vector(rng, d.n());
}

} // namespace

TEST_SUITE("estimation") {

TEST_CASE("fit_ml in the Z = I model reproduces max(M - 1, 0)") {
    const auto opts = example1_fit_options();
    const FitResult a = fit_ml(example1_design(10), with_mean_square(10, 2.0), opts);
    CHECK(a.theta_hat.psi(0) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(a.theta_hat.psi(1) == 1.0);
    CHECK(a.converged);
    CHECK_FALSE(a.on_boundary);
    CHECK_FALSE(a.theta_hat.beta.has_value());

    const FitResult b = fit_ml(example1_design(10), with_mean_square(10, 0.5), opts);
    CHECK(b.theta_hat.psi(0) == 0.0);
    CHECK(b.on_boundary);
    CHECK(b.converged);
}

TEST_CASE("fit_ml KKT conditions at the boundary") {
    // S(0) = n(M - 1)/2 < 0 points out of the feasible set
    const LmmDesign d = example1_design(12);
    const Vector y = with_mean_square(12, 0.7);
    const FitResult f = fit_ml(d, y, example1_fit_options());
    REQUIRE(f.on_boundary);
    const auto rep = score(d, y, Parameter{f.theta_hat.psi, std::nullopt});
    CHECK(rep.score_psi(0) < 0.0);
    CHECK(f.gradient_norm <= 1e-8 * std::max(1.0, std::abs(f.loglik_at_hat)));
}

TEST_CASE("Z = I model closed forms") {
    const Example1Stats z = example1_stats(with_mean_square(6, 1.3), 0.3);
    CHECK(std::abs(z.w_score) <= 1e-14);
    const Example1Stats s = example1_stats(with_mean_square(2, 2.0), 0.0);
    CHECK(s.w_score == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(s.psi_hat == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(s.w_wald == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(s.t_lrt == doctest::Approx(2.0 - 2.0 * std::log(2.0)).epsilon(1e-12));
    const double psi = 0.4;
    const Example1Stats b = example1_stats(with_mean_square(50, 0.8), psi);
    CHECK(b.psi_hat == 0.0);
    CHECK(b.w_wald == doctest::Approx(-psi * std::sqrt(25.0) / (1.0 + psi)).epsilon(1e-14));
    CHECK_THROWS_AS(example1_stats(with_mean_square(3, 1.0), -0.1), InvalidArgument);
}

TEST_CASE("Z = I model closed forms agree with the generic path") {
    auto rng = make_stream(51, 0, "test");
    const FitOptions opts = example1_fit_options();
    const FreeMask free{true, false};
    for (int t = 0; t < 100; ++t) {
        const Index n = 5 + static_cast<Index>(rng.uniform() * 30.0);
        const double psi = t % 4 == 0 ? 0.0 : 2.0 * rng.uniform();
        const Vector y = oracle::random_vector(rng, n) * std::sqrt(1.0 + 2.0 * rng.uniform());
        const Example1Stats c = example1_stats(y, psi);
        const LmmDesign d = example1_design(n);
        const Vector full = vec({psi, 1.0});
        const auto ws = score_statistic(d, y, Parameter{full, std::nullopt}, free);
        CHECK(ws.w(0) == doctest::Approx(c.w_score).epsilon(1e-8).scale(1.0));
        const FitResult f = fit_ml(d, y, opts);
        CHECK(f.theta_hat.psi(0) == doctest::Approx(c.psi_hat).epsilon(1e-8).scale(1.0));
        const double info = fisher_information(d, full).info_psi(0, 0);
        CHECK((f.theta_hat.psi(0) - psi) * std::sqrt(info) == doctest::Approx(c.w_wald).epsilon(1e-8).scale(1.0));
        CHECK(lrt_statistic(d, y, full, f.theta_hat) == doctest::Approx(c.t_lrt).epsilon(1e-8).scale(1.0));
    }
}

TEST_CASE("a maximizer dominates the generating parameter") {
    auto rng = make_stream(52, 0, "test");
    for (int t = 0; t < 15; ++t) {
        const auto inst = oracle::random_instance(5000 + t);
        const Vector y = draw(inst.design, inst.psi, inst.beta, rng);
        const FitResult f = fit_ml(inst.design, y);
        CHECK(f.loglik_at_hat >= log_likelihood(inst.design, y, Parameter{inst.psi, inst.beta}) - 1e-9);
        CHECK(check_parameter(inst.design.structure(), f.theta_hat.psi) != ParameterStatus::Outside);
        CHECK(f.theta_hat.beta.has_value() == (inst.design.p() > 0));
    }
}

TEST_CASE("fit_reml with p = 0 equals fit_ml") {
    auto rng = make_stream(53, 0, "test");
    for (int t = 0; t < 5; ++t) {
        const auto inst = oracle::random_instance(5100 + t);
        const LmmDesign d(Matrix(inst.design.n(), 0), inst.design.Z(), inst.design.structure());
        const Vector y = draw(d, inst.psi, Vector(0), rng);
        const FitResult ml = fit_ml(d, y), reml = fit_reml(d, y);
        CHECK((ml.theta_hat.psi - reml.theta_hat.psi).norm() <= 1e-6 * std::max(1.0, ml.theta_hat.psi.norm()));
    }
}

TEST_CASE("fit_reml matches the balanced one-way ANOVA estimator") {
    auto rng = make_stream(54, 0, "test");
    const Index m = 8, k = 4;
    const LmmDesign d = one_way(m, k);
    int interior = 0;
    for (int t = 0; t < 10; ++t) {
        const Vector y = draw(d, vec({1.5, 1.0}), vec({2.0}), rng);
        double grand = y.mean(), ssb = 0.0, ssw = 0.0;
        for (Index i = 0; i < m; ++i) {
            const double mi = y.segment(i * k, k).mean();
            ssb += k * (mi - grand) * (mi - grand);
            ssw += (y.segment(i * k, k).array() - mi).square().sum();
        }
        const double msb = ssb / (m - 1), msw = ssw / (m * (k - 1));
        if (msb <= msw) continue;
        ++interior;
        const FitResult f = fit_reml(d, y);
        CHECK(f.theta_hat.psi(1) == doctest::Approx(msw).epsilon(1e-5));
        CHECK(f.theta_hat.psi(0) == doctest::Approx((msb - msw) / k).epsilon(1e-5));
        CHECK_FALSE(f.theta_hat.beta.has_value());
    }
    CHECK(interior >= 5);
}

TEST_CASE("fits of the correlated random-slope model stay positive semi-definite") {
    auto rng = make_stream(55, 0, "test");
    const LmmDesign d = cluster_design(30, 3, 56);
    for (const Vector& psi : {vec({1.0, 0.99, 1.0, 1.0}), vec({1.0, -0.9, 1.0, 1.0}), vec({0.01, 0.0, 0.01, 1.0})}) {
        const Vector y = draw(d, psi, vec({0.5, -1.0}), rng);
        for (const FitResult& f : {fit_ml(d, y), fit_reml(d, y)}) {
            CHECK(check_parameter(d.structure(), f.theta_hat.psi, 1e-8) != ParameterStatus::Outside);
            CHECK(f.converged);
        }
    }
}

TEST_CASE("boundary frequency of the ML fit at psi = 0 is near one half") {
    // generic path on a modest n; ψ̂ = 0 iff ‖y‖² ≤ n, so the exact rate is P(χ²_n ≤ n)
    auto rng = make_stream(57, 0, "test");
    const Index n = 40, reps = 400;
    const LmmDesign d = example1_design(n);
    Index hits = 0;
    for (Index k = 0; k < reps; ++k) {
        const FitResult f = fit_ml(d, oracle::random_vector(rng, n), example1_fit_options());
        hits += f.on_boundary ? 1 : 0;
    }
    const double rate = static_cast<double>(hits) / reps;
    const double exact = chi2_cdf(static_cast<double>(n), static_cast<double>(n));
    CHECK(exact == doctest::Approx(0.5).epsilon(0.1));
    CHECK(std::abs(rate - exact) <= 5.0 * std::sqrt(exact * (1.0 - exact) / reps));
}

TEST_CASE("FeasibleSet projection and scaling") {
    const auto s = CovarianceStructure::clustered(2, 2);
    const FeasibleSet fs(s, 1e-6);
    CHECK(fs.free_count() == 4);
    CHECK_FALSE(fs.box_only());
    const Vector ones = Vector::Ones(4);
    const Vector z = vec({1.0, 2.0, 1.0, -1.0});
    const Vector p = fs.project(z, ones);
    CHECK(fs.contains(p, 1e-10));
    CHECK(p(3) == doctest::Approx(1e-6));
    CHECK((fs.project(p, ones) - p).norm() <= 1e-10);   // idempotent
    Matrix psi1(2, 2);
    psi1 << p(0), p(1), p(1), p(2);
    CHECK(linalg::eigenvalues_symmetric(psi1).minCoeff() >= -1e-10);

    const FeasibleSet fixed(s, 1e-6, {std::nullopt, 0.0, std::nullopt, std::nullopt});
    CHECK(fixed.free_count() == 3);
    CHECK(fixed.box_only());
    const Vector scale = vec({2.0, 1.0, 0.5, 3.0});
    const Vector psi = vec({0.4, 0.0, 0.9, 1.2});
    CHECK((fixed.from_free(fixed.to_free(psi, scale), scale) - psi).norm() <= 1e-14);
}

TEST_CASE("fit options are validated") {
    FitOptions bad;
    bad.starts = 0;
    CHECK_THROWS_AS(fit_ml(example1_design(4), Vector::Ones(4), bad), InvalidArgument);
    FitOptions wrong = example1_fit_options();
    wrong.fixed.push_back(1.0);
    CHECK_THROWS_AS(fit_ml(example1_design(4), Vector::Ones(4), wrong), DimensionMismatch);
}

}

TEST_SUITE("likelihood-engine") {

TEST_CASE("engine modes reproduce the dense inference and reml paths") {
    for (int t = 0; t < 10; ++t) {
        const auto inst = oracle::random_instance(5200 + t);
        const LmmDesign& d = inst.design;
        const auto backend = std::make_shared<DenseBackend>(d);

        const LikelihoodEngine kb(backend, d.X(), LikelihoodMode::KnownBeta);
        const Vector e = inst.y - d.X() * inst.beta;
        const auto ek = kb.evaluate(inst.psi, e);
        CHECK(ek.loglik == doctest::Approx(oracle::loglik(d, e, inst.psi)).epsilon(1e-10));
        CHECK((ek.score - oracle::score(d, e, inst.psi)).norm() <= 1e-9 * std::max(1.0, ek.score.norm()));
        CHECK((ek.information - oracle::information(d, inst.psi)).norm() <= 1e-9 * ek.information.norm());

        if (d.p() == 0) continue;
        const LikelihoodEngine pr(backend, d.X(), LikelihoodMode::Profile);
        const auto ep = pr.evaluate(inst.psi, inst.y);
        const Vector bt = gls_beta(d, inst.y, inst.psi);
        CHECK((ep.beta - bt).norm() <= 1e-9 * std::max(1.0, bt.norm()));
        CHECK(ep.loglik == doctest::Approx(log_likelihood(d, inst.y, Parameter{inst.psi, bt})).epsilon(1e-10));
        const auto fd = oracle::gradient_fd([&](const Vector& p) { return pr.loglik(p, inst.y); }, inst.psi);
        CHECK((ep.score - fd).norm() <= 1e-6 * std::max(1.0, fd.norm()));

        const LikelihoodEngine re(backend, d.X(), LikelihoodMode::Restricted);
        const auto er = re.evaluate(inst.psi, inst.y);
        const auto red = reml_reduce(d, inst.y);
        const LmmDesign& rd = red.transform.reduced_design;
        CHECK(er.loglik == doctest::Approx(oracle::loglik(rd, red.y, inst.psi)).epsilon(1e-9));
        CHECK((er.score - oracle::score(rd, red.y, inst.psi)).norm() <= 1e-8 * std::max(1.0, er.score.norm()));
        CHECK((er.information - oracle::information(rd, inst.psi)).norm() <= 1e-8 * er.information.norm());
        CHECK((re.information(inst.psi) - er.information).norm() <= 1e-12 * er.information.norm());
    }
}

TEST_CASE("block-diagonal backend matches the dense backend") {
    const LmmDesign d = cluster_design(6, 3, 58);
    const auto groups = coupled_row_groups(d);
    CHECK(groups.size() == 6);
    const auto backend = make_backend(d);
    CHECK(backend->name() == "block-diagonal");
    const DenseBackend dense(d);
    auto rng = make_stream(59, 0, "test");
    const Vector psi = vec({1.1, 0.3, 0.7, 0.9});
    const auto a = backend->at(psi);
    const auto b = dense.at(psi);
    const Matrix m = oracle::random_matrix(rng, d.n(), 2);
    CHECK(a->logdet() == doctest::Approx(b->logdet()).epsilon(1e-12));
    CHECK((a->solve(m) - b->solve(m)).norm() <= 1e-10 * m.norm());
    CHECK((a->apply_sqrt(m) - b->apply_sqrt(m)).norm() <= 1e-10 * m.norm());
    CHECK((a->trace_pairs() - b->trace_pairs()).norm() <= 1e-10);
    CHECK((a->trace_solve_derivative() - b->trace_solve_derivative()).norm() <= 1e-10);
    for (int j = 0; j < d.r(); ++j) CHECK((backend->apply_derivative(j, m) - dense.apply_derivative(j, m)).norm() <= 1e-12);
    CHECK(make_backend(example1_design(1))->name() == "dense");
}

}
