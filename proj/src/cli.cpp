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

#include "lmmscore/cli.hpp"

#include <cmath>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lmmscore/bounds.hpp"
#include "lmmscore/crossed.hpp"
#include "lmmscore/errors.hpp"
#include "lmmscore/io.hpp"
#include "lmmscore/reml.hpp"
#include "lmmscore/simulation.hpp"

namespace lmmscore::cli {

namespace {

using json = nlohmann::json;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

json to_json(const Vector& v) {
    json a = json::array();
    for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

Vector to_vector(const std::vector<double>& v) { return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size())); }

void emit(const std::string& path, const std::string& text, std::ostream& out) {
    if (path.empty() || path == "-") out << text;
    else write_file(path, text);
}

std::vector<StatisticKind> parse_statistics(const std::vector<std::string>& names) {
    std::vector<StatisticKind> out;
    for (const std::string& list : names) {
        std::stringstream ss(list);
        std::string item;
        while (std::getline(ss, item, ',')) {
            try {
                out.push_back(parse_statistic(item));
            } catch (const InvalidArgument& e) {
                throw UsageError(e.what());
            }
        }
    }
    if (out.empty()) throw UsageError("at least one --stat is required");
    return out;
}

struct ScenarioArgs {
    std::string kind = "crossed";
    Index n = 200;
    Index m = 500;
    Index ni = 3;
    Index n1 = 40;
    Index n2 = 40;
    Index p = 2;
    std::string psi;
    std::uint64_t seed = 1;

    void add(CLI::App* app) {
        app->add_option("--scenario", kind, "example1, figure1, clusters or crossed")
            ->check(CLI::IsMember({"example1", "figure1", "clusters", "crossed"}))
            ->capture_default_str();
        app->add_option("--n", n, "Z = I model sample size")->capture_default_str();
        app->add_option("--m", m, "number of clusters (clusters)")->capture_default_str();
        app->add_option("--ni", ni, "cluster size (clusters)")->capture_default_str();
        app->add_option("--n1", n1, "levels of the first crossed factor")->capture_default_str();
        app->add_option("--n2", n2, "levels of the second crossed factor")->capture_default_str();
        app->add_option("--p", p, "fixed-effect columns (clusters, crossed)")->capture_default_str();
        app->add_option("--psi", psi, "true ψ, comma separated (Z = I model: ψ_1 only)");
        app->add_option("--seed", seed, "master seed")->capture_default_str();
    }

    Scenario build() const {
        std::optional<Vector> v;
        if (!psi.empty()) v = to_vector(parse_double_list(psi));
        if (kind == "example1") {
            if (v && v->size() != 1) throw UsageError("--psi for example1 is the scalar ψ_1");
            return example1_scenario(n, v ? (*v)(0) : 1.0, seed);
        }
        if (kind == "figure1") {
            Scenario s = figure1_scenario(seed);
            if (v) s.psi = *v;
            if (s.psi.size() != 4) throw UsageError("figure1 needs a ψ of length 4");
            return s;
        }
        if (kind == "clusters") {
            Vector def(4);
            def << 1.0, 0.0, 1.0, 1.0;
            return correlated_clusters_scenario(m, ni, p, v.value_or(def), seed);
        }
        return crossed_scenario(n1, n2, p, v.value_or(Vector::Ones(3)), seed);
    }
};

std::vector<GridAxis> parse_axes(const std::string& box, const std::string& res) {
    std::vector<GridAxis> axes;
    std::stringstream ss(box);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw UsageError("--box entries must look like lo:hi");
        const auto lo = parse_double_list(item.substr(0, colon));
        const auto hi = parse_double_list(item.substr(colon + 1));
        axes.push_back(GridAxis{lo.at(0), hi.at(0), 1});
    }
    const auto counts = parse_double_list(res);
    if (counts.size() != axes.size()) throw UsageError("--res needs one count per --box axis");
    for (std::size_t i = 0; i < counts.size(); ++i) {
        if (counts[i] < 1 || counts[i] != std::floor(counts[i])) throw UsageError("--res counts must be positive integers");
        axes[i].count = static_cast<Index>(counts[i]);
    }
    return axes;
}

int cmd_fit(const std::string& model, const std::string& data, bool reml, const FitOptions& opts, const std::string& out_path,
            std::ostream& out) {
    const LmmDesign design = read_model_spec(model);
    const Vector y = read_response_csv(data);
    const FitResult f = reml ? fit_reml(design, y, opts) : fit_ml(design, y, opts);
    json j;
    j["method"] = reml ? "reml" : "ml";
    j["psi"] = to_json(f.theta_hat.psi);
    j["beta"] = f.theta_hat.beta ? to_json(*f.theta_hat.beta) : json(nullptr);
    j["loglik"] = f.loglik_at_hat;
    j["converged"] = f.converged;
    j["on_boundary"] = f.on_boundary;
    j["gradient_norm"] = f.gradient_norm;
    j["iterations"] = f.iterations;
    emit(out_path, j.dump(2) + "\n", out);
    return 0;
}

json bound_entry(const ApproximationBound& b) {
    json j;
    j["a"] = b.a_value;
    j["degenerate"] = b.degenerate;
    j["density_bound"] = b.density_bound ? json(*b.density_bound) : json(nullptr);
    return j;
}

int cmd_bounds(const std::string& model, const std::string& crossed, const std::string& psi_text, bool restricted,
               Index samples, std::uint64_t seed, const std::string& out_path, std::ostream& out) {
    if (model.empty() == crossed.empty()) throw UsageError("diagnose-bounds needs exactly one of --model or --crossed");
    std::optional<CrossedLayout> layout;
    std::optional<LmmDesign> design;
    if (!crossed.empty()) {
        std::vector<Index> sizes;
        for (const double s : parse_double_list(crossed)) {
            if (s < 2 || s != std::floor(s)) throw UsageError("--crossed sizes must be integers ≥ 2");
            sizes.push_back(static_cast<Index>(s));
        }
        layout.emplace(sizes);
        design.emplace(build_crossed_design(*layout));
    } else {
        design.emplace(read_model_spec(model));
    }
    Vector psi = psi_text.empty() ? Vector::Ones(design->r()) : to_vector(parse_double_list(psi_text));
    if (psi.size() != design->r()) throw UsageError("--psi must have r entries");
    if (check_parameter(design->structure(), psi) == ParameterStatus::Outside) {
        throw InvalidArgument("ψ is outside the parameter set");
    }
    const LmmDesign work = restricted && design->p() > 0 ? reml_transform(*design).reduced_design : *design;

    json j;
    j["n"] = work.n();
    j["r"] = work.r();
    j["restricted"] = restricted;
    j["psi"] = to_json(psi);
    j["information_positive_definite"] = information_positive_definite(work);
    json dirs = json::array();
    for (int k = 0; k < work.r(); ++k) {
        const Vector e = Vector::Unit(work.r(), k);
        json d;
        d["direction"] = to_json(e);
        d["a"] = bound_entry(a_ratio(work, psi, e));
        try {
            d["a_tilde"] = bound_entry(a_tilde_direction(work, psi, e));
        } catch (const SingularInformation&) {
            d["a_tilde"] = nullptr;
        }
        try {
            d["separable_bound"] = separable_bound(work, psi, e);
        } catch (const InvalidArgument&) {
            d["separable_bound"] = nullptr;
        }
        dirs.push_back(d);
    }
    j["coordinate_directions"] = dirs;
    j["sup_a_estimate"] = sup_a_estimate(work, psi, samples, seed);
    j["sup_a_estimate_note"] = "lower bound on the supremum over unit directions";
    if (layout && layout->factors() >= 2) {
        try {
            j["crossed_bound"] = crossed_bound(layout->factor_sizes(), restricted);
        } catch (const InvalidArgument& e) {
            j["crossed_bound"] = nullptr;
        }
    }
    emit(out_path, j.dump(2) + "\n", out);
    return 0;
}

void write_error(std::ostream& err, const std::string& kind, const std::string& message) {
    json j;
    j["error"] = {{"kind", kind}, {"message", message}};
    err << j.dump() << "\n";
}

} // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Score-based inference for variance parameters of linear mixed models"};
    app.require_subcommand(1, 1);
    app.fallthrough();   // global options may follow the subcommand
    int threads = default_threads();
    app.add_option("--threads", threads, "worker threads (default: LMMSCORE_THREADS or all cores)")
        ->check(CLI::PositiveNumber);

    // fit
    auto* fit = app.add_subcommand("fit", "ML or REML fit of a model spec");
    std::string model, data, out_path;
    bool reml = false;
    FitOptions opts;
    fit->add_option("--model", model, "model-spec JSON")->required()->check(CLI::ExistingFile);
    fit->add_option("--data", data, "single-column response CSV")->required()->check(CLI::ExistingFile);
    fit->add_flag("--reml", reml, "restricted likelihood");
    fit->add_option("--max-iter", opts.max_iter, "iteration cap per start")->check(CLI::PositiveNumber)->capture_default_str();
    fit->add_option("--starts", opts.starts, "number of starting points (1-3)")->check(CLI::Range(1, 3))->capture_default_str();
    fit->add_option("--tol", opts.tol, "projected-gradient tolerance relative to max(1, |l|)")->check(CLI::PositiveNumber)->capture_default_str();
    fit->add_option("--out", out_path, "output JSON (default stdout)");

    // region
    auto* region = app.add_subcommand("region", "confidence-region mask on a lattice");
    std::string box, res, beta_text, csv_path, stat_name = "rscr";
    double alpha = 0.05;
    int df = 0;
    region->add_option("--model", model, "model-spec JSON")->required()->check(CLI::ExistingFile);
    region->add_option("--data", data, "single-column response CSV")->required()->check(CLI::ExistingFile);
    region->add_option("--alpha", alpha, "1 - confidence level")->check(CLI::Range(0.0, 1.0))->capture_default_str();
    region->add_option("--stat", stat_name, "scr, pscr, rscr, wld or lrt")->capture_default_str();
    region->add_option("--box", box, "lo:hi per parameter, comma separated")->required();
    region->add_option("--res", res, "lattice points per parameter, comma separated")->required();
    region->add_option("--beta", beta_text, "known β for the joint score region (scr with p > 0)");
    region->add_option("--df", df, "override the χ² degrees of freedom")->check(CLI::NonNegativeNumber);
    region->add_option("--out", out_path, "output JSON mask (default stdout)");
    region->add_option("--csv", csv_path, "also write the long-format CSV here");

    // diagnose-bounds
    auto* bounds = app.add_subcommand("diagnose-bounds", "normal-approximation diagnostics as JSON");
    std::string crossed, psi_text;
    bool restricted = false;
    Index samples = 500;
    std::uint64_t seed = 1;
    bounds->add_option("--model", model, "model-spec JSON")->check(CLI::ExistingFile);
    bounds->add_option("--crossed", crossed, "crossed layout n1,n2,... (intercept-only mean)");
    bounds->add_option("--psi", psi_text, "ψ, comma separated (default all ones)");
    bounds->add_flag("--restricted", restricted, "use the restricted (REML) model");
    bounds->add_option("--samples", samples, "random directions for the sup estimate")->check(CLI::NonNegativeNumber)->capture_default_str();
    bounds->add_option("--seed", seed, "seed for the sup estimate")->capture_default_str();
    bounds->add_option("--out", out_path, "output JSON (default stdout)");

    // coverage
    auto* coverage = app.add_subcommand("coverage", "Monte Carlo coverage table as CSV");
    ScenarioArgs cov_scenario;
    cov_scenario.add(coverage);
    std::vector<std::string> stats_names;
    std::vector<std::string> probes_text;
    Index reps = 2000;
    coverage->add_option("--stat", stats_names, "statistics (scr, pscr, rscr, wld, lrt), repeatable or comma separated")->required();
    coverage->add_option("--probe", probes_text, "generating ψ, comma separated; repeatable (default: scenario grid)");
    coverage->add_option("--reps", reps, "replications per probe")->capture_default_str();
    coverage->add_option("--alpha", alpha, "1 - confidence level")->check(CLI::Range(0.0, 1.0))->capture_default_str();
    coverage->add_option("--out", out_path, "output CSV (default stdout)");

    // quantiles
    auto* quantiles = app.add_subcommand("quantiles", "empirical quantiles against χ² references as CSV");
    ScenarioArgs q_scenario;
    q_scenario.kind = "figure1";
    q_scenario.add(quantiles);
    Index q_reps = 10000;
    quantiles->add_option("--stat", stats_names, "statistics, repeatable or comma separated")->required();
    quantiles->add_option("--reps", q_reps, "replications")->capture_default_str();
    quantiles->add_option("--out", out_path, "output CSV (default stdout)");

    // example1
    auto* ex1 = app.add_subcommand("example1", "Z = I model distributions against their limits as CSV");
    Index ex_n = 10000;
    Index ex_reps = 10000;
    std::vector<std::string> scaled_text;
    ex1->add_option("--n", ex_n, "sample size")->check(CLI::PositiveNumber)->capture_default_str();
    ex1->add_option("--psi-scaled", scaled_text, "a in ψ = a/√n, repeatable; 'inf' means ψ = 1 (default 0, 1, inf)");
    ex1->add_option("--reps", ex_reps, "replications")->check(CLI::PositiveNumber)->capture_default_str();
    ex1->add_option("--seed", seed, "master seed")->capture_default_str();
    ex1->add_option("--out", out_path, "output CSV (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n" << "run with --help for usage\n";
        return 2;
    }

    try {
        if (fit->parsed()) return cmd_fit(model, data, reml, opts, out_path, out);
        if (region->parsed()) {
            const LmmDesign design = read_model_spec(model);
            const Vector y = read_response_csv(data);
            RegionSpec spec;
            spec.alpha = alpha;
            try {
                spec.statistic = parse_statistic(stat_name);
            } catch (const InvalidArgument& e) {
                throw UsageError(e.what());
            }
            spec.df = df;
            if (!beta_text.empty()) spec.beta = to_vector(parse_double_list(beta_text));
            const RegionGrid grid = region_grid(design, y, parse_axes(box, res), spec);
            if (!csv_path.empty()) write_file(csv_path, region_grid_csv(grid));
            emit(out_path, region_grid_json(grid), out);
            return 0;
        }
        if (bounds->parsed()) return cmd_bounds(model, crossed, psi_text, restricted, samples, seed, out_path, out);
        if (coverage->parsed()) {
            const Scenario sc = cov_scenario.build();
            std::vector<Vector> probes;
            for (const std::string& p : probes_text) {
                Vector v = to_vector(parse_double_list(p));
                if (sc.kind == ScenarioKind::Example1 && v.size() == 1) {
                    v.conservativeResize(2);
                    v(1) = 1.0;   // the error variance is known
                }
                probes.push_back(v);
            }
            if (probes.empty()) probes = default_probes(sc);
            const CoverageTable t = coverage_experiment(sc, probes, parse_statistics(stats_names), reps, alpha, threads);
            emit(out_path, t.csv(), out);
            return 0;
        }
        if (quantiles->parsed()) {
            const Scenario sc = q_scenario.build();
            const QuantileTable t = quantile_curves(sc, parse_statistics(stats_names), q_reps, sc.psi, default_levels(), threads);
            emit(out_path, t.csv(), out);
            return 0;
        }
        if (ex1->parsed()) {
            std::vector<double> a_values;
            for (const std::string& s : scaled_text) {
                for (const double v : parse_double_list(s)) a_values.push_back(v);
            }
            if (a_values.empty()) a_values = {0.0, 1.0, std::numeric_limits<double>::infinity()};
            emit(out_path, example1_experiment(ex_n, ex_reps, a_values, seed, threads).csv(), out);
            return 0;
        }
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        write_error(err, e.kind(), e.what());
        return 1;
    } catch (const std::exception& e) {
        write_error(err, "internal", e.what());
        return 1;
    }
    err << "error: no command given\n";
    return 2;
}

int run(int argc, const char* const* argv) { return run(argc, argv, std::cout, std::cerr); }

} // namespace lmmscore::cli
