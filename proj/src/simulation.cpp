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

#include "lmmscore/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numbers>
#include <sstream>
#include <thread>

#include "lmmscore/crossed.hpp"
#include "lmmscore/errors.hpp"
#include "lmmscore/io.hpp"
#include "lmmscore/rng.hpp"
#include "lmmscore/stats.hpp"

namespace lmmscore {

std::string Scenario::name() const {
    switch (kind) {
        case ScenarioKind::Example1: return "example1";
        case ScenarioKind::Figure1Cluster: return "figure1";
        case ScenarioKind::CorrelatedClusters: return "clusters";
        case ScenarioKind::CrossedIntercepts: return "crossed";
    }
    return "unknown";
}

Scenario example1_scenario(Index n, double psi, std::uint64_t seed) {
    if (n < 1) throw InvalidArgument("Z = I model needs n ≥ 1");
    if (!(psi >= 0.0)) throw InvalidArgument("Z = I model needs ψ ≥ 0");
    Scenario s;
    s.kind = ScenarioKind::Example1;
    s.n = n;
    s.psi = Vector(2);
    s.psi << psi, 1.0;
    s.seed = seed;
    return s;
}

Scenario figure1_scenario(std::uint64_t seed) {
    Scenario s;
    s.kind = ScenarioKind::Figure1Cluster;
    s.m = 50;
    s.cluster_size = 5;
    s.psi = Vector(4);
    s.psi << 1e-3, 0.0, 1e-3, 1.0;
    s.seed = seed;
    return s;
}

Scenario correlated_clusters_scenario(Index m, Index cluster_size, Index p, Vector psi, std::uint64_t seed) {
    if (m < 1 || cluster_size < 1) throw InvalidArgument("cluster scenario needs positive m and cluster size");
    if (p < 2) throw InvalidArgument("cluster scenario needs p ≥ 2 (Z uses the first two covariates)");
    if (psi.size() != 4) throw DimensionMismatch("cluster scenario has r = 4");
    if (!psi.allFinite() || psi(0) < 0.0 || psi(2) < 0.0 || psi(1) * psi(1) > psi(0) * psi(2) || !(psi(3) > 0.0)) {
        throw InvalidArgument("cluster scenario needs a PSD 2x2 block and a positive error variance");
    }
    Scenario s;
    s.kind = ScenarioKind::CorrelatedClusters;
    s.m = m;
    s.cluster_size = cluster_size;
    s.p = p;
    s.psi = std::move(psi);
    s.seed = seed;
    return s;
}

Scenario crossed_scenario(Index n1, Index n2, Index p, Vector psi, std::uint64_t seed) {
    if (n1 < 2 || n2 < 2) throw InvalidArgument("crossed scenario needs factor sizes ≥ 2");
    if (p < 1) throw InvalidArgument("crossed scenario needs p ≥ 1 (intercept)");
    if (psi.size() != 3) throw DimensionMismatch("crossed scenario has r = 3");
    Scenario s;
    s.kind = ScenarioKind::CrossedIntercepts;
    s.n1 = n1;
    s.n2 = n2;
    s.p = p;
    s.psi = std::move(psi);
    s.seed = seed;
    return s;
}

namespace {

// Intercept followed by U(-1, 1) covariates.
Matrix covariates(Index n, Index p, CounterRng& rng) {
    Matrix x(n, p);
    for (Index i = 0; i < n; ++i) {
        x(i, 0) = 1.0;
        for (Index c = 1; c < p; ++c) x(i, c) = rng.uniform(-1.0, 1.0);
    }
    return x;
}

Vector normal_vector(Index n, CounterRng& rng) {
    Vector v(n);
    for (Index i = 0; i < n; ++i) v(i) = rng.normal();
    return v;
}

} // namespace

std::shared_ptr<const ScenarioDesign> build_scenario_design(const Scenario& scenario) {
    auto sd = std::make_shared<ScenarioDesign>();
    sd->scenario = scenario;
    CounterRng rng = make_stream(scenario.seed, 0, "design");
    sd->fixed.assign(static_cast<std::size_t>(scenario.psi.size()), std::nullopt);
    switch (scenario.kind) {
        case ScenarioKind::Example1: {
            sd->fixed.back() = 1.0;
            if (scenario.n <= kDenseLimit) {
                sd->design.emplace(example1_design(scenario.n));
                sd->backend = std::make_shared<DenseBackend>(*sd->design);
            }
            break;
        }
        case ScenarioKind::Figure1Cluster: {
            const Index m = scenario.m;
            const Index k = scenario.cluster_size;
            Matrix z = Matrix::Zero(m * k, 2 * m);
            for (Index i = 0; i < m; ++i) {
                for (Index j = 0; j < k; ++j) {
                    for (Index c = 0; c < 2; ++c) z(i * k + j, 2 * i + c) = rng.bernoulli(0.5) ? 1.0 : 0.0;
                }
            }
            sd->design.emplace(Matrix(m * k, 0), std::move(z), CovarianceStructure::clustered(m, 2));
            sd->backend = make_backend(*sd->design);
            break;
        }
        case ScenarioKind::CorrelatedClusters: {
            const Index m = scenario.m;
            const Index k = scenario.cluster_size;
            Matrix x = covariates(m * k, scenario.p, rng);
            Matrix z = Matrix::Zero(m * k, 2 * m);
            for (Index i = 0; i < m; ++i) {
                for (Index j = 0; j < k; ++j) {
                    z(i * k + j, 2 * i) = x(i * k + j, 0);
                    z(i * k + j, 2 * i + 1) = x(i * k + j, 1);
                }
            }
            sd->beta = normal_vector(scenario.p, rng);
            sd->design.emplace(std::move(x), std::move(z), CovarianceStructure::clustered(m, 2));
            sd->backend = make_backend(*sd->design);
            break;
        }
        case ScenarioKind::CrossedIntercepts: {
            const CrossedLayout layout({scenario.n1, scenario.n2});
            const LmmDesign base = build_crossed_design(layout);
            Matrix x = covariates(layout.n(), scenario.p, rng);
            sd->beta = normal_vector(scenario.p, rng);
            sd->design.emplace(std::move(x), base.Z(), base.structure());
            sd->backend = std::make_shared<CrossedBackend>(layout);
            break;
        }
    }
    const bool outside = sd->design ? check_parameter(sd->design->structure(), scenario.psi) == ParameterStatus::Outside
                                    : !(scenario.psi(0) >= 0.0 && scenario.psi(1) > 0.0);
    if (outside) throw InvalidArgument("true ψ of the scenario is outside the parameter set");
    return sd;
}

Vector simulate_response(const ScenarioDesign& sd, const Vector& psi, const CovarianceOperator* sigma, std::uint64_t rep) {
    const Scenario& sc = sd.scenario;
    CounterRng rng = make_stream(sc.seed, rep, "response");
    if (sc.kind == ScenarioKind::Example1) return std::sqrt(1.0 + psi(0)) * normal_vector(sc.n, rng);
    if (!sigma) throw InvalidArgument("simulate_response needs Σ(ψ)");
    const Vector z = normal_vector(sigma->n(), rng);
    Vector y = sigma->apply_sqrt(z);
    if (sd.design->p() > 0) y += sd.design->X() * sd.beta;
    return y;
}

SimulatedDataset simulate_dataset(const Scenario& scenario, std::uint64_t rep) {
    SimulatedDataset out;
    out.design = build_scenario_design(scenario);
    std::unique_ptr<CovarianceOperator> op;
    if (out.design->backend && scenario.kind != ScenarioKind::Example1) op = out.design->backend->at(scenario.psi);
    out.y = simulate_response(*out.design, scenario.psi, op.get(), rep);
    out.theta.psi = scenario.psi;
    if (scenario.p > 0) out.theta.beta = out.design->beta;
    return out;
}

int default_threads() {
    if (const char* env = std::getenv("LMMSCORE_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

void parallel_for(Index count, int threads, const std::function<void(Index)>& f) {
    if (count <= 0) return;
    const int workers = static_cast<int>(std::min<Index>(std::max(1, threads), count));
    if (workers == 1) {
        for (Index i = 0; i < count; ++i) f(i);
        return;
    }
    std::atomic<Index> next{0};
    std::exception_ptr failure;
    std::atomic<bool> failed{false};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (Index i = next++; i < count && !failed; i = next++) {
                try {
                    f(i);
                } catch (...) {
                    if (!failed.exchange(true)) failure = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

Index StatisticSamples::failures(std::size_t k) const {
    return std::count_if(values[k].begin(), values[k].end(), [](double v) { return std::isnan(v); });
}

std::vector<double> StatisticSamples::finite(std::size_t k) const {
    std::vector<double> out;
    for (const double v : values[k]) {
        if (!std::isnan(v)) out.push_back(v);
    }
    return out;
}

std::vector<double> example1_mean_squares(Index n, Index reps, std::uint64_t seed, int threads) {
    std::vector<double> ms(static_cast<std::size_t>(reps));
    parallel_for(reps, threads, [&](Index rep) {
        CounterRng rng = make_stream(seed, static_cast<std::uint64_t>(rep), "response");
        double s = 0.0;
        for (Index i = 0; i < n; ++i) {
            const double z = rng.normal();
            s += z * z;
        }
        ms[static_cast<std::size_t>(rep)] = s / static_cast<double>(n);
    });
    return ms;
}

StatisticSamples sample_statistics(const ScenarioDesign& sd, const Vector& psi, const std::vector<StatisticKind>& kinds,
                                   Index reps, int threads) {
    const Scenario& sc = sd.scenario;
    if (psi.size() != sc.psi.size()) throw DimensionMismatch("probe ψ has the wrong length");
    StatisticSamples out;
    out.kinds = kinds;
    out.values.assign(kinds.size(), std::vector<double>(static_cast<std::size_t>(reps), std::numeric_limits<double>::quiet_NaN()));

    if (sc.kind == ScenarioKind::Example1) {
        if (!(psi(0) >= 0.0) || psi(1) != 1.0) throw InvalidArgument("Z = I model needs ψ_1 ≥ 0 and error variance 1");
        const std::vector<double> ms = example1_mean_squares(sc.n, reps, sc.seed, threads);
        out.df.assign(kinds.size(), 1);
        for (Index rep = 0; rep < reps; ++rep) {
            const Example1Stats s = example1_stats_from_moment((1.0 + psi(0)) * ms[static_cast<std::size_t>(rep)], sc.n, psi(0));
            for (std::size_t k = 0; k < kinds.size(); ++k) {
                double v = s.w_score * s.w_score;
                if (kinds[k] == StatisticKind::Wald) v = s.w_wald * s.w_wald;
                if (kinds[k] == StatisticKind::LikelihoodRatio) v = s.t_lrt;
                out.values[k][static_cast<std::size_t>(rep)] = v;
            }
        }
        return out;
    }

    const LmmDesign& design = *sd.design;
    {
        StatisticEvaluator probe(design, sd.backend, sd.fixed);
        for (const StatisticKind k : kinds) out.df.push_back(probe.df(k));
    }
    const std::unique_ptr<CovarianceOperator> sigma = sd.backend->at(psi);
    const std::optional<Vector> beta = design.p() > 0 ? std::optional<Vector>(sd.beta) : std::nullopt;
    parallel_for(reps, threads, [&](Index rep) {
        const Vector y = simulate_response(sd, psi, sigma.get(), static_cast<std::uint64_t>(rep));
        StatisticEvaluator ev(design, sd.backend, sd.fixed);
        ev.set_data(y, beta);
        for (std::size_t k = 0; k < kinds.size(); ++k) {
            try {
                out.values[k][static_cast<std::size_t>(rep)] = ev.evaluate(kinds[k], psi);
            } catch (const Error&) {
            }
        }
    });
    return out;
}

namespace {

std::string join_probe(const Vector& v) {
    std::string s;
    for (Index i = 0; i < v.size(); ++i) s += (i ? ";" : "") + format_double(v(i));
    return s;
}

} // namespace

std::string CoverageTable::csv() const {
    std::string out = "scenario,probe,statistic,coverage,se,reps,failures\n";
    for (const CoverageRow& r : rows) {
        out += r.scenario + "," + join_probe(r.probe) + "," + std::string(statistic_name(r.statistic)) + "," +
               format_double(r.coverage) + "," + format_double(r.se) + "," + std::to_string(r.reps) + "," +
               std::to_string(r.failures) + "\n";
    }
    return out;
}

CoverageTable coverage_experiment(const Scenario& scenario, const std::vector<Vector>& probes,
                                  const std::vector<StatisticKind>& kinds, Index reps, double alpha, int threads) {
    if (reps < 100) throw InvalidArgument("coverage experiments need at least 100 replications");
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must lie in (0, 1)");
    if (kinds.empty()) throw InvalidArgument("no statistics requested");
    const auto sd = build_scenario_design(scenario);
    CoverageTable table;
    for (const Vector& probe : probes) {
        if (sd->design && check_parameter(sd->design->structure(), probe) == ParameterStatus::Outside) {
            throw InvalidArgument("probe ψ " + join_probe(probe) + " is outside the parameter set");
        }
        const StatisticSamples s = sample_statistics(*sd, probe, kinds, reps, threads);
        for (std::size_t k = 0; k < kinds.size(); ++k) {
            const double crit = chi2_quantile(s.df[k], 1.0 - alpha);
            Index ok = 0;
            Index hits = 0;
            for (const double v : s.values[k]) {
                if (std::isnan(v)) continue;
                ++ok;
                if (v <= crit) ++hits;
            }
            CoverageRow row{scenario.name(), probe, kinds[k], std::numeric_limits<double>::quiet_NaN(),
                            std::numeric_limits<double>::quiet_NaN(), ok, reps - ok};
            if (ok > 0) {
                row.coverage = static_cast<double>(hits) / static_cast<double>(ok);
                row.se = std::sqrt(row.coverage * (1.0 - row.coverage) / static_cast<double>(ok));
            }
            table.rows.push_back(row);
        }
    }
    return table;
}

std::vector<Vector> default_probes(const Scenario& scenario) {
    std::vector<Vector> out;
    switch (scenario.kind) {
        case ScenarioKind::CorrelatedClusters:
            for (const double v : {-0.99, -0.9, -0.5, 0.0, 0.5, 0.9, 0.99}) {
                Vector p(4);
                p << 1.0, v, 1.0, 1.0;
                out.push_back(p);
            }
            break;
        case ScenarioKind::CrossedIntercepts:
            for (const double v : {0.0, 0.01, 0.1, 1.0}) {
                Vector p(3);
                p << v, v, 1.0;
                out.push_back(p);
            }
            break;
        default: out.push_back(scenario.psi);
    }
    return out;
}

std::vector<double> default_levels() {
    std::vector<double> out;
    for (int i = 1; i <= 99; ++i) out.push_back(i / 100.0);
    return out;
}

std::string QuantileTable::csv() const {
    std::string out = "level,statistic,empirical,reference\n";
    for (const QuantileRow& r : rows) {
        out += format_double(r.level) + "," + std::string(statistic_name(r.statistic)) + "," + format_double(r.empirical) +
               "," + format_double(r.reference) + "\n";
    }
    return out;
}

QuantileTable quantile_curves(const Scenario& scenario, const std::vector<StatisticKind>& kinds, Index reps,
                              const Vector& psi, const std::vector<double>& levels, int threads) {
    if (reps < 1000) throw InvalidArgument("quantile curves need at least 1000 replications");
    const auto sd = build_scenario_design(scenario);
    const StatisticSamples s = sample_statistics(*sd, psi, kinds, reps, threads);
    QuantileTable table;
    for (std::size_t k = 0; k < kinds.size(); ++k) {
        std::vector<double> v = s.finite(k);
        if (v.empty()) throw OptimizationFailure(std::string("every replication failed for ") + std::string(statistic_name(kinds[k])));
        std::sort(v.begin(), v.end());
        for (const double level : levels) {
            table.rows.push_back(QuantileRow{level, kinds[k], stats::empirical_quantile(v, level), chi2_quantile(s.df[k], level)});
        }
    }
    return table;
}

LimitSamples example1_limit_samples(double a, Index reps, std::uint64_t seed) {
    LimitSamples out;
    CounterRng rng = make_stream(seed, 0, "limit");
    for (Index i = 0; i < reps; ++i) {
        const double w = rng.normal();
        const double m = std::isinf(a) ? w : std::max(w, -a / std::numbers::sqrt2);
        out.score.push_back(w);
        out.wald.push_back(m);
        out.lrt.push_back(2.0 * w * m - m * m);
    }
    return out;
}

std::string Example1Report::csv() const {
    std::string out = "n,reps,a,psi,statistic,value\n";
    for (const Example1Row& r : rows) {
        out += std::to_string(n) + "," + std::to_string(reps) + "," + format_double(r.a) + "," + format_double(r.psi) + "," +
               r.statistic + "," + format_double(r.value) + "\n";
    }
    return out;
}

Example1Report example1_experiment(Index n, Index reps, const std::vector<double>& a_values, std::uint64_t seed,
                                   int threads) {
    if (n < 1 || reps < 1) throw InvalidArgument("Z = I model experiment needs positive n and reps");
    Example1Report report;
    report.n = n;
    report.reps = reps;
    const std::vector<double> ms = example1_mean_squares(n, reps, seed, threads);
    for (const double a : a_values) {
        if (!(a >= 0.0)) throw InvalidArgument("a must be non-negative");
        const double psi = std::isinf(a) ? 1.0 : a / std::sqrt(static_cast<double>(n));
        std::vector<double> ws, ww, tl;
        for (const double m : ms) {
            const Example1Stats s = example1_stats_from_moment((1.0 + psi) * m, n, psi);
            ws.push_back(s.w_score);
            ww.push_back(s.w_wald);
            tl.push_back(s.t_lrt);
        }
        const LimitSamples lim = example1_limit_samples(a, reps, seed);
        report.rows.push_back({a, psi, "W_S", stats::ks_one_sample(ws, stats::normal_cdf)});
        report.rows.push_back({a, psi, "W_W", stats::ks_two_sample(ww, lim.wald)});
        report.rows.push_back({a, psi, "T_L", stats::ks_two_sample(tl, lim.lrt)});
    }
    Index zeros = 0;
    for (const double m : ms) zeros += m <= 1.0 ? 1 : 0;   // ψ̂ = max(M_n - 1, 0) at ψ = 0
    report.rows.push_back({0.0, 0.0, "boundary_rate", static_cast<double>(zeros) / static_cast<double>(reps)});
    return report;
}

} // namespace lmmscore
