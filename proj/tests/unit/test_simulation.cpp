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
#include "lmmscore/simulation.hpp"
#include "lmmscore/stats.hpp"
#include "oracles.hpp"

using namespace lmmscore;

namespace {

Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Index>(v.size()));
    Index i = 0;
    for (const double x : v) out(i++) = x;
    return out;
}

} // namespace

TEST_SUITE("simulation") {

TEST_CASE("Bernoulli-cluster scenario shape") {
    const Scenario s = figure1_scenario(3);
    CHECK(s.kind == ScenarioKind::Figure1Cluster);
    CHECK(s.m == 50);
    CHECK(s.cluster_size == 5);
    CHECK(s.psi == vec({1e-3, 0.0, 1e-3, 1.0}));
    const auto sd = build_scenario_design(s);
    REQUIRE(sd->design.has_value());
    const Matrix& Z = sd->design->Z();
    CHECK(Z.rows() == 250);
    CHECK(Z.cols() == 100);
    CHECK(sd->design->p() == 0);
    // entries off the diagonal blocks vanish; block entries are 0/1 with both values present
    Index ones = 0;
    for (Index i = 0; i < 250; ++i)
        for (Index j = 0; j < 100; ++j) {
            const double z = Z(i, j);
            if (j / 2 != i / 5) CHECK(z == 0.0);
            else {
                CHECK((z == 0.0 || z == 1.0));
                ones += z == 1.0 ? 1 : 0;
            }
        }
    CHECK(ones > 200);
    CHECK(ones < 300);
    CHECK(sd->backend->name() == "block-diagonal");
}

TEST_CASE("cluster and crossed scenario designs") {
    const auto cl = build_scenario_design(correlated_clusters_scenario(4, 3, 2, vec({1.0, 0.5, 1.0, 1.0}), 5));
    const Matrix& X = cl->design->X();
    CHECK(X.rows() == 12);
    CHECK((X.col(0).array() == 1.0).all());
    CHECK((X.col(1).array().abs() < 1.0).all());
    // Z_ij = (X_ij1, X_ij2) within cluster i
    CHECK(cl->design->Z()(4, 2) == 1.0);
    CHECK(cl->design->Z()(4, 3) == X(4, 1));
    CHECK(cl->beta.size() == 2);

    const auto cr = build_scenario_design(crossed_scenario(4, 5, 2, vec({1.0, 1.0, 1.0}), 5));
    CHECK(cr->design->n() == 20);
    CHECK(cr->design->r() == 3);
    CHECK(cr->design->p() == 2);

    CHECK_THROWS_AS(correlated_clusters_scenario(4, 3, 2, vec({1.0, 2.0, 1.0, 1.0}), 5), InvalidArgument);
    CHECK_THROWS_AS(example1_scenario(10, -1.0, 1), InvalidArgument);
}

TEST_CASE("degenerate random effects give i.i.d. responses") {
    const Scenario s = correlated_clusters_scenario(200, 5, 2, vec({0.0, 0.0, 0.0, 2.0}), 9);
    std::vector<double> resid;
    for (std::uint64_t rep = 0; rep < 5; ++rep) {
        const auto ds = simulate_dataset(s, rep);
        const Vector e = ds.y - ds.design->design->X() * ds.design->beta;
        for (Index i = 0; i < e.size(); ++i) resid.push_back(e(i));
    }
    const double v = stats::variance(resid);
    CHECK(std::abs(v - 2.0) <= 5.0 * 2.0 * std::sqrt(2.0 / static_cast<double>(resid.size())));
}

TEST_CASE("simulated responses have covariance Sigma") {
    const Scenario s = correlated_clusters_scenario(1, 3, 2, vec({1.0, 0.6, 0.8, 0.5}), 10);
    const auto sd = build_scenario_design(s);
    const Matrix sigma = build_sigma(*sd->design, s.psi);
    const auto op = sd->backend->at(s.psi);
    const Index reps = 100000, n = 3;
    Matrix sum = Matrix::Zero(n, n), sum_sq = Matrix::Zero(n, n);
    Vector mean = Vector::Zero(n);
    for (Index k = 0; k < reps; ++k) {
        const Vector e = simulate_response(*sd, s.psi, op.get(), static_cast<std::uint64_t>(k)) - sd->design->X() * sd->beta;
        const Matrix o = e * e.transpose();
        sum += o;
        sum_sq += o.cwiseProduct(o);
        mean += e;
    }
    mean /= static_cast<double>(reps);
    for (Index i = 0; i < n; ++i) {
        CHECK(std::abs(mean(i)) <= 5.0 * std::sqrt(sigma(i, i) / reps));
        for (Index j = 0; j < n; ++j) {
            const double m = sum(i, j) / reps;
            const double se = std::sqrt((sum_sq(i, j) / reps - m * m) / reps);
            CHECK(std::abs(m - sigma(i, j)) <= 5.0 * se);
        }
    }
}

TEST_CASE("datasets are deterministic per (seed, rep)") {
    const Scenario s = crossed_scenario(5, 6, 2, vec({0.5, 0.5, 1.0}), 11);
    const auto a = simulate_dataset(s, 3), b = simulate_dataset(s, 3), c = simulate_dataset(s, 4);
    CHECK(a.y == b.y);
    CHECK(a.y != c.y);
    CHECK(a.design->design->X() == c.design->design->X());
    CHECK(a.theta.psi == s.psi);
}

TEST_CASE("Z = I model score coverage at psi = 1, n = 200") {
    const auto t = coverage_experiment(example1_scenario(200, 1.0, 12), {vec({1.0, 1.0})}, {StatisticKind::Score}, 2000, 0.05, 1);
    REQUIRE(t.rows.size() == 1);
    CHECK(t.rows[0].coverage >= 0.93);
    CHECK(t.rows[0].coverage <= 0.97);
    CHECK(t.rows[0].se == doctest::Approx(std::sqrt(t.rows[0].coverage * (1.0 - t.rows[0].coverage) / 2000.0)));
    CHECK(t.rows[0].failures == 0);
}

TEST_CASE("coverage tables are bit-identical across thread counts") {
    const Scenario s = crossed_scenario(6, 6, 2, vec({0.5, 0.5, 1.0}), 13);
    const std::vector<StatisticKind> kinds{StatisticKind::RestrictedScore, StatisticKind::ProfileScore, StatisticKind::Wald,
                                           StatisticKind::LikelihoodRatio};
    const std::vector<Vector> probes{vec({0.0, 0.0, 1.0}), vec({1.0, 1.0, 1.0})};
    const std::string one = coverage_experiment(s, probes, kinds, 120, 0.05, 1).csv();
    const std::string three = coverage_experiment(s, probes, kinds, 120, 0.05, 3).csv();
    CHECK(one == three);
    CHECK(std::count(one.begin(), one.end(), '\n') == 1 + 8);
    CHECK(one.rfind("scenario,probe,statistic,coverage,se,reps,failures\n", 0) == 0);
    CHECK_THROWS_AS(coverage_experiment(s, probes, kinds, 99, 0.05, 1), InvalidArgument);
}

TEST_CASE("default probes") {
    CHECK(default_probes(correlated_clusters_scenario(10, 3, 2, vec({1.0, 0.0, 1.0, 1.0}), 1)).size() == 7);
    const auto cr = default_probes(crossed_scenario(10, 10, 2, vec({1.0, 1.0, 1.0}), 1));
    REQUIRE(cr.size() == 4);
    CHECK(cr[1] == vec({0.01, 0.01, 1.0}));
}

TEST_CASE("interior quantile curves are near chi-squared") {
    Scenario s = figure1_scenario(14);
    s.psi = vec({1.0, 0.0, 1.0, 1.0});
    const std::vector<StatisticKind> kinds{StatisticKind::Score, StatisticKind::Wald, StatisticKind::LikelihoodRatio};
    const auto table = quantile_curves(s, kinds, 1000, s.psi, default_levels(), 1);
    CHECK(table.rows.size() == kinds.size() * default_levels().size());
    for (const auto& row : table.rows) {
        CHECK(row.reference == doctest::Approx(chi2_quantile(4, row.level)).epsilon(1e-12));
        // Wald upper quantiles are inflated at 50 clusters (noisy information at psi-hat)
        const double top = row.statistic == StatisticKind::Wald ? 0.5 : 0.9;
        if (row.level >= 0.1 && row.level <= top) CHECK(std::abs(row.empirical - row.reference) <= 0.2 * row.reference + 0.3);
    }
    CHECK_THROWS_AS(quantile_curves(s, kinds, 999, s.psi, default_levels(), 1), InvalidArgument);
}

TEST_CASE("Z = I model limit samples") {
    const auto lim = example1_limit_samples(1.0, 4000, 15);
    const double atom = -1.0 / std::sqrt(2.0);
    Index at_atom = 0;
    for (std::size_t i = 0; i < lim.score.size(); ++i) {
        CHECK(lim.wald[i] == std::max(lim.score[i], atom));
        CHECK(lim.lrt[i] >= -1e-15);
        at_atom += lim.wald[i] == atom ? 1 : 0;
    }
    const double p = oracle::normal_cdf(atom);
    CHECK(std::abs(static_cast<double>(at_atom) / 4000.0 - p) <= 5.0 * std::sqrt(p * (1 - p) / 4000.0));
    const auto inf = example1_limit_samples(std::numeric_limits<double>::infinity(), 100, 15);
    for (std::size_t i = 0; i < inf.score.size(); ++i) CHECK(inf.lrt[i] == doctest::Approx(inf.score[i] * inf.score[i]));
}

TEST_CASE("Z = I model mean squares are thread independent") {
    CHECK(example1_mean_squares(300, 50, 16, 1) == example1_mean_squares(300, 50, 16, 4));
    const auto report = example1_experiment(100, 200, {0.0, 1.0}, 17, 1);
    CHECK(report.rows.size() == 7);
    CHECK(report.rows.back().statistic == "boundary_rate");
}

TEST_CASE("parallel_for covers every index once") {
    std::vector<int> hits(1000, 0);
    parallel_for(1000, 4, [&](Index i) { hits[static_cast<std::size_t>(i)] += 1; });
    CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
}

}
