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

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lmmscore/regions.hpp"

namespace lmmscore {

enum class ScenarioKind { Example1, Figure1Cluster, CorrelatedClusters, CrossedIntercepts };

struct Scenario {
    ScenarioKind kind = ScenarioKind::Example1;
    Index n = 0;              // Z = I model sample size
    Index m = 0;              // clusters
    Index cluster_size = 0;
    Index n1 = 0;             // crossed factor sizes
    Index n2 = 0;
    Index p = 0;
    Vector psi;               // true ψ
    std::uint64_t seed = 0;

    std::string name() const;
};

Scenario example1_scenario(Index n, double psi, std::uint64_t seed);
/// 50 clusters of 5 with Bernoulli(1/2) 5×2 Z_i, p = 0, ψ = (1e-3, 0, 1e-3, 1).
Scenario figure1_scenario(std::uint64_t seed);
/// X_ij1 = 1, other covariates U(-1, 1), Z_ij = (X_ij1, X_ij2), β ~ N(0, 1).
Scenario correlated_clusters_scenario(Index m, Index cluster_size, Index p, Vector psi, std::uint64_t seed);
/// Y_ij = X_ij^T β + U_1i + U_2j + E_ij on an n1×n2 grid.
Scenario crossed_scenario(Index n1, Index n2, Index p, Vector psi, std::uint64_t seed);

/// The fixed part of a scenario, drawn once from the "design" stream.
struct ScenarioDesign {
    Scenario scenario;
    std::optional<LmmDesign> design;   // absent for the Z = I model beyond the dense limit
    std::shared_ptr<const CovarianceBackend> backend;
    Vector beta;
    std::vector<std::optional<double>> fixed;
};

std::shared_ptr<const ScenarioDesign> build_scenario_design(const Scenario& scenario);

/// y = Xβ + Σ(ψ)^{1/2} z with z from the (seed, rep, "response") stream.
/// `sigma` must be Σ(ψ) from the scenario backend; the Z = I scenario ignores it and
/// uses the closed form y = (1 + ψ_1)^{1/2} z.
Vector simulate_response(const ScenarioDesign& sd, const Vector& psi, const CovarianceOperator* sigma,
                         std::uint64_t rep);

struct SimulatedDataset {
    std::shared_ptr<const ScenarioDesign> design;
    Vector y;
    Parameter theta;
};

SimulatedDataset simulate_dataset(const Scenario& scenario, std::uint64_t rep);

/// Worker count: LMMSCORE_THREADS if set, otherwise the hardware count.
int default_threads();

/// Runs f(i) for i < count on up to `threads` workers. Each index must
/// write only its own output slot; that keeps results schedule independent.
void parallel_for(Index count, int threads, const std::function<void(Index)>& f);

/// Statistic values at the true ψ, one per replication (NaN on failure).
struct StatisticSamples {
    std::vector<StatisticKind> kinds;
    std::vector<std::vector<double>> values;
    std::vector<int> df;
    Index failures(std::size_t k) const;
    std::vector<double> finite(std::size_t k) const;
};

StatisticSamples sample_statistics(const ScenarioDesign& sd, const Vector& psi, const std::vector<StatisticKind>& kinds,
                                   Index reps, int threads);

struct CoverageRow {
    std::string scenario;
    Vector probe;
    StatisticKind statistic;
    double coverage;
    double se;
    Index reps;        // successful replications
    Index failures;
};

struct CoverageTable {
    std::vector<CoverageRow> rows;
    std::string csv() const;
};

/// Coverage of the true ψ for each probe (the probe is the generating ψ).
CoverageTable coverage_experiment(const Scenario& scenario, const std::vector<Vector>& probes,
                                  const std::vector<StatisticKind>& kinds, Index reps, double alpha, int threads);

/// Default probes: ψ2 ∈ {-0.99, -0.9, -0.5, 0, 0.5, 0.9, 0.99} for clusters,
/// ψ1 = ψ2 ∈ {0, 0.01, 0.1, 1} for crossed, the true ψ otherwise.
std::vector<Vector> default_probes(const Scenario& scenario);

struct QuantileRow {
    double level;
    StatisticKind statistic;
    double empirical;
    double reference;
};

struct QuantileTable {
    std::vector<QuantileRow> rows;
    std::string csv() const;
};

std::vector<double> default_levels();

QuantileTable quantile_curves(const Scenario& scenario, const std::vector<StatisticKind>& kinds, Index reps,
                              const Vector& psi, const std::vector<double>& levels, int threads);

/// Mean squares ‖z‖²/n of the Z = I model replications; the statistics at any
/// ψ follow from M_n = (1 + ψ)·mean square.
std::vector<double> example1_mean_squares(Index n, Index reps, std::uint64_t seed, int threads);

/// W_1 ~ N(0, 1) draws and the limits max(W_1, -a/√2) and
/// 2W_1 max(W_1, -a/√2) - max(W_1, -a/√2)²; a = ∞ gives W_1 and W_1².
struct LimitSamples {
    std::vector<double> score;
    std::vector<double> wald;
    std::vector<double> lrt;
};
LimitSamples example1_limit_samples(double a, Index reps, std::uint64_t seed);

struct Example1Row {
    double a;
    double psi;
    std::string statistic;   // "W_S", "W_W", "T_L" or "boundary_rate"
    double value;            // KS distance to the limit, or the rate
};

struct Example1Report {
    Index n = 0;
    Index reps = 0;
    std::vector<Example1Row> rows;
    std::string csv() const;
};

/// ψ_n = a/√n for finite a, ψ = 1 for a = ∞. Also reports the boundary rate
/// P(ψ̂ = 0) at ψ = 0.
Example1Report example1_experiment(Index n, Index reps, const std::vector<double>& a_values, std::uint64_t seed,
                                   int threads);

} // namespace lmmscore
