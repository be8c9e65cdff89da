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

#include "lmmscore/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "lmmscore/errors.hpp"

namespace lmmscore {

namespace {

constexpr double kArmijo = 1e-4;
constexpr int kMaxHalvings = 40;
constexpr Index kMaxEnumerated = 16;
constexpr int kFistaIterations = 5000;
constexpr int kDykstraIterations = 1000;

Matrix clip_psd(const Matrix& a) {
    if (a.rows() == 1) return a.cwiseMax(0.0);
    if (a.rows() == 2) {   // closed form; this sits in the QP inner loop
        const double m = 0.5 * (a(0, 0) + a(1, 1));
        const double h = 0.5 * (a(0, 0) - a(1, 1));
        const double b = 0.5 * (a(0, 1) + a(1, 0));
        const double d = std::hypot(h, b);
        if (m - d >= 0.0) return linalg::symmetrize(a);
        if (m + d <= 0.0) return Matrix::Zero(2, 2);
        const double lambda = m + d;
        Eigen::Vector2d u = h >= 0.0 ? Eigen::Vector2d(h + d, b) : Eigen::Vector2d(b, d - h);
        u.normalize();
        return lambda * (u * u.transpose());
    }
    const linalg::SymmetricEigen eig = linalg::eigen_symmetric(a);
    return linalg::spectral_apply(eig, [](double x) { return std::max(x, 0.0); });
}

} // namespace

FeasibleSet::FeasibleSet(const CovarianceStructure& structure, double error_floor,
                         std::vector<std::optional<double>> fixed)
    : r_(structure.r()), floor_(error_floor), fixed_(std::move(fixed)) {
    if (fixed_.empty()) fixed_.resize(static_cast<std::size_t>(r_));
    if (static_cast<int>(fixed_.size()) != r_) throw DimensionMismatch("fixed-value list must have length r");
    if (!(floor_ >= 0.0)) throw InvalidArgument("error-variance floor must be non-negative");
    free_.resize(static_cast<std::size_t>(r_));
    free_index_.assign(static_cast<std::size_t>(r_), -1);
    for (int j = 0; j < r_; ++j) {
        free_[static_cast<std::size_t>(j)] = !fixed_[static_cast<std::size_t>(j)].has_value();
        if (free_[static_cast<std::size_t>(j)]) free_index_[static_cast<std::size_t>(j)] = free_count_++;
    }
    if (const auto& fr = fixed_[static_cast<std::size_t>(r_ - 1)]; fr && !(*fr > 0.0)) {
        throw InvalidArgument("a fixed error variance must be positive");
    }

    std::vector<int> pattern_hits(static_cast<std::size_t>(r_), 0);
    std::vector<int> cell_hits(static_cast<std::size_t>(r_), 0);
    home_.assign(static_cast<std::size_t>(r_), {-1, -1});
    weights_.assign(static_cast<std::size_t>(r_), 0.0);
    weights_[static_cast<std::size_t>(r_ - 1)] = 1.0;
    for (const PatternBlock& pb : structure.patterns()) {
        const Index k = pb.local.rows();
        const Index idx = static_cast<Index>(patterns_.size());
        patterns_.push_back(Pattern{pb.local});
        std::vector<bool> seen(static_cast<std::size_t>(r_), false);
        for (Index a = 0; a < k; ++a) {
            for (Index b = 0; b < k; ++b) {
                const int j = pb.local(a, b);
                if (j == CovarianceStructure::kFixedZero) {
                    single_clip_ = false;
                    continue;
                }
                const auto sj = static_cast<std::size_t>(j);
                // an off-diagonal cell pinned at zero keeps Ψ diagonal
                if (a != b && !(fixed_[sj] && *fixed_[sj] == 0.0)) box_only_ = false;
                weights_[sj] += 1.0;
                if (fixed_[sj]) single_clip_ = false;
                if (!seen[sj]) {
                    seen[sj] = true;
                    ++pattern_hits[sj];
                }
                if (a <= b) {
                    ++cell_hits[sj];
                    if (home_[sj].first < 0) home_[sj] = {idx, a * k + b};
                }
            }
        }
    }
    for (int j = 0; j + 1 < r_; ++j) {
        if (pattern_hits[static_cast<std::size_t>(j)] != 1 || cell_hits[static_cast<std::size_t>(j)] != 1) scalable_ = false;
    }
    if (!scalable_) single_clip_ = false;
}

bool FeasibleSet::contains(const Vector& psi, double tol) const {
    if (psi.size() != r_ || !psi.allFinite()) return false;
    for (int j = 0; j < r_; ++j) {
        const auto& f = fixed_[static_cast<std::size_t>(j)];
        if (f && std::abs(psi(j) - *f) > tol * std::max(1.0, std::abs(*f))) return false;
    }
    if (!fixed_[static_cast<std::size_t>(r_ - 1)] && psi(r_ - 1) < floor_ * (1.0 - tol)) return false;
    if (!(psi(r_ - 1) > 0.0)) return false;
    for (const Pattern& p : patterns_) {
        const Index k = p.local.rows();
        Matrix l(k, k);
        for (Index a = 0; a < k; ++a) {
            for (Index b = 0; b < k; ++b) {
                const int j = p.local(a, b);
                l(a, b) = j == CovarianceStructure::kFixedZero ? 0.0 : psi(j);
            }
        }
        const Vector ev = linalg::eigenvalues_symmetric(l);
        if (ev(0) < -tol * std::max(1.0, ev.cwiseAbs().maxCoeff())) return false;
    }
    return true;
}

Vector FeasibleSet::metric_weights() const {
    Vector w(free_count_);
    for (int j = 0; j < r_; ++j) {
        const Index k = free_index_[static_cast<std::size_t>(j)];
        if (k >= 0) w(k) = weights_[static_cast<std::size_t>(j)];
    }
    return w;
}

Vector FeasibleSet::congruence_scale(const Matrix& information) const {
    Vector c = Vector::Ones(r_);
    auto inv_root = [&](int j, double power) {
        const double d = information(j, j);
        return (d > 0.0 && std::isfinite(d)) ? std::pow(d, -power) : 1.0;
    };
    if (!fixed_[static_cast<std::size_t>(r_ - 1)]) c(r_ - 1) = inv_root(r_ - 1, 0.5);
    if (!scalable_) return c;
    for (std::size_t pi = 0; pi < patterns_.size(); ++pi) {
        const Eigen::MatrixXi& local = patterns_[pi].local;
        const Index k = local.rows();
        Vector s = Vector::Ones(k);
        for (Index a = 0; a < k; ++a) {
            const int j = local(a, a);
            if (j != CovarianceStructure::kFixedZero && !fixed_[static_cast<std::size_t>(j)]) s(a) = inv_root(j, 0.25);
        }
        for (Index a = 0; a < k; ++a) {
            for (Index b = a; b < k; ++b) {
                const int j = local(a, b);
                if (j != CovarianceStructure::kFixedZero) c(j) = s(a) * s(b);
            }
        }
    }
    return c;
}

Vector FeasibleSet::to_free(const Vector& psi, const Vector& scale) const {
    Vector z(free_count_);
    for (int j = 0; j < r_; ++j) {
        const Index k = free_index_[static_cast<std::size_t>(j)];
        if (k >= 0) z(k) = psi(j) / scale(j);
    }
    return z;
}

Vector FeasibleSet::from_free(const Vector& z, const Vector& scale) const {
    Vector psi(r_);
    for (int j = 0; j < r_; ++j) {
        const Index k = free_index_[static_cast<std::size_t>(j)];
        psi(j) = k >= 0 ? scale(j) * z(k) : *fixed_[static_cast<std::size_t>(j)];
    }
    return psi;
}

Vector FeasibleSet::project(const Vector& z, const Vector& scale) const {
    if (z.size() != free_count_) throw DimensionMismatch("free-coordinate vector has the wrong length");
    Vector out = z;
    const Index kr = free_index_[static_cast<std::size_t>(r_ - 1)];
    if (kr >= 0) out(kr) = std::max(out(kr), floor_ / scale(r_ - 1));
    if (patterns_.empty()) return out;

    // pattern-space value of parameter j in scaled coordinates
    auto value = [&](const Vector& zz, int j) {
        const Index k = free_index_[static_cast<std::size_t>(j)];
        return k >= 0 ? zz(k) : *fixed_[static_cast<std::size_t>(j)] / scale(j);
    };
    if (box_only_) {
        for (int j = 0; j + 1 < r_; ++j) {
            const Index k = free_index_[static_cast<std::size_t>(j)];
            if (k >= 0) out(k) = std::max(out(k), 0.0);
        }
        return out;
    }
    std::vector<Matrix> x;
    for (const Pattern& p : patterns_) {
        const Index k = p.local.rows();
        Matrix l(k, k);
        for (Index a = 0; a < k; ++a) {
            for (Index b = 0; b < k; ++b) {
                const int j = p.local(a, b);
                l(a, b) = j == CovarianceStructure::kFixedZero ? 0.0 : value(out, j);
            }
        }
        x.push_back(std::move(l));
    }
    // back to parameters: average each free parameter over its cells
    auto read_back = [&](const std::vector<Matrix>& mats, Vector& target) {
        Vector sum = Vector::Zero(r_);
        for (std::size_t pi = 0; pi < patterns_.size(); ++pi) {
            const Eigen::MatrixXi& local = patterns_[pi].local;
            for (Index a = 0; a < local.rows(); ++a) {
                for (Index b = 0; b < local.cols(); ++b) {
                    const int j = local(a, b);
                    if (j != CovarianceStructure::kFixedZero) sum(j) += mats[pi](a, b);
                }
            }
        }
        for (int j = 0; j + 1 < r_; ++j) {
            const Index k = free_index_[static_cast<std::size_t>(j)];
            if (k >= 0) target(k) = sum(j) / weights_[static_cast<std::size_t>(j)];
        }
    };
    if (single_clip_) {
        for (Matrix& m : x) m = clip_psd(m);
        read_back(x, out);
        return out;
    }
    // Dykstra between the PSD cones and the affine pattern subspace
    auto to_subspace = [&](const std::vector<Matrix>& mats) {
        Vector zz = out;
        read_back(mats, zz);
        std::vector<Matrix> res;
        for (const Pattern& p : patterns_) {
            const Index k = p.local.rows();
            Matrix l(k, k);
            for (Index a = 0; a < k; ++a) {
                for (Index b = 0; b < k; ++b) {
                    const int j = p.local(a, b);
                    l(a, b) = j == CovarianceStructure::kFixedZero ? 0.0 : value(zz, j);
                }
            }
            res.push_back(std::move(l));
        }
        return std::make_pair(res, zz);
    };
    std::vector<Matrix> corr(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) corr[i] = Matrix::Zero(x[i].rows(), x[i].cols());
    Vector zz = out;
    for (int it = 0; it < kDykstraIterations; ++it) {
        std::vector<Matrix> y(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            y[i] = clip_psd(x[i] + corr[i]);
            corr[i] = x[i] + corr[i] - y[i];
        }
        auto [next, znext] = to_subspace(y);
        double change = 0.0;
        double size = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            change += (next[i] - x[i]).squaredNorm();
            size += next[i].squaredNorm();
        }
        x = std::move(next);
        zz = std::move(znext);
        if (change <= 1e-28 * (1.0 + size)) break;
    }
    return zz;
}

namespace {

struct QpProblem {
    const FeasibleSet& set;
    const Matrix& H;
    const Vector& target;
    const Vector& scale;
};

double qp_objective(const QpProblem& qp, const Vector& x) {
    const Vector d = x - qp.target;
    return 0.5 * d.dot(qp.H * d);
}

// min ½(x - t)^T H (x - t) over the box by enumerating active sets.
Vector solve_box_qp(const QpProblem& qp, const Vector& lower) {
    const Index k = qp.target.size();
    Vector best = qp.target.cwiseMax(lower);
    double best_obj = std::numeric_limits<double>::infinity();
    const std::uint32_t count = std::uint32_t{1} << k;
    for (std::uint32_t active = 0; active < count; ++active) {
        std::vector<Index> fr;
        std::vector<Index> ac;
        for (Index i = 0; i < k; ++i) ((active >> i) & 1U ? ac : fr).push_back(i);
        Vector x(k);
        for (const Index i : ac) x(i) = lower(i);
        if (!fr.empty()) {
            Matrix hff(fr.size(), fr.size());
            Vector rhs(static_cast<Index>(fr.size()));
            for (std::size_t a = 0; a < fr.size(); ++a) {
                double s = 0.0;
                for (const Index i : ac) s += qp.H(fr[a], i) * (lower(i) - qp.target(i));
                rhs(static_cast<Index>(a)) = -s;
                for (std::size_t b = 0; b < fr.size(); ++b) hff(static_cast<Index>(a), static_cast<Index>(b)) = qp.H(fr[a], fr[b]);
            }
            Eigen::LLT<Matrix> llt(hff);
            if (llt.info() != Eigen::Success) continue;
            const Vector xf = llt.solve(rhs);
            bool ok = true;
            for (std::size_t a = 0; a < fr.size(); ++a) {
                x(fr[a]) = qp.target(fr[a]) + xf(static_cast<Index>(a));
                if (x(fr[a]) < lower(fr[a])) ok = false;
            }
            if (!ok) continue;
        }
        const double obj = qp_objective(qp, x);
        if (obj < best_obj) {
            best_obj = obj;
            best = x;
        }
    }
    return best;
}

// Accelerated projected gradient in the pattern metric, with restarts.
Vector solve_cone_qp(const QpProblem& qp) {
    const Vector w = qp.set.metric_weights();
    const Vector wr = w.cwiseSqrt().cwiseInverse();
    const Matrix scaled = wr.asDiagonal() * qp.H * wr.asDiagonal();
    const double lip = std::max(linalg::eigenvalues_symmetric(scaled).maxCoeff(), 1e-300);
    Vector x = qp.set.project(qp.target, qp.scale);
    Vector y = x;
    double tk = 1.0;
    double obj = qp_objective(qp, x);
    for (int it = 0; it < kFistaIterations; ++it) {
        const Vector grad = qp.H * (y - qp.target);
        const Vector next = qp.set.project(y - grad.cwiseQuotient(w) / lip, qp.scale);
        const double next_obj = qp_objective(qp, next);
        if (next_obj > obj) {
            // a plain step from x cannot increase the objective beyond rounding: done
            if (tk == 1.0) break;
            y = x;   // restart momentum
            tk = 1.0;
            continue;
        }
        const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
        const double step = (next - x).norm();
        y = next + ((tk - 1.0) / t_next) * (next - x);
        x = next;
        obj = next_obj;
        tk = t_next;
        if (step <= 1e-11 * (1.0 + x.norm())) break;
    }
    return x;
}

Vector solve_qp(const QpProblem& qp) {
    const Vector proj = qp.set.project(qp.target, qp.scale);
    if ((proj - qp.target).norm() <= 1e-15 * (1.0 + qp.target.norm())) return qp.target;
    if (qp.set.box_only() && qp.target.size() <= kMaxEnumerated) {
        Vector lower = Vector::Constant(qp.target.size(), 0.0);
        // the error variance is the last free coordinate whenever it is free
        if (!qp.set.fixed().back()) lower(lower.size() - 1) = qp.set.error_floor() / qp.scale(qp.set.r() - 1);
        return solve_box_qp(qp, lower);
    }
    return solve_cone_qp(qp);
}

double sample_variance(const LikelihoodEngine& engine, const Vector& y) {
    const Matrix& X = engine.X();
    double s2 = 0.0;
    if (engine.mode() != LikelihoodMode::KnownBeta && X.cols() > 0) {
        const Vector e = y - X * X.colPivHouseholderQr().solve(y);
        s2 = e.squaredNorm() / static_cast<double>(std::max<Index>(1, y.size() - X.cols()));
    } else {
        s2 = y.squaredNorm() / static_cast<double>(std::max<Index>(1, y.size()));
    }
    return (s2 > 0.0 && std::isfinite(s2)) ? s2 : 1.0;
}

std::vector<Vector> starting_points(const LikelihoodEngine& engine, const CovarianceStructure& structure, double s2) {
    const int r = structure.r();
    const Vector traces = engine.backend().derivative_traces();
    const double n = static_cast<double>(engine.n());
    std::vector<bool> diagonal(static_cast<std::size_t>(r), false);
    int d = 0;
    for (int j = 0; j + 1 < r; ++j) {
        for (const Cell& c : structure.cells(j)) {
            if (c.row == c.col) {
                diagonal[static_cast<std::size_t>(j)] = true;
                break;
            }
        }
        if (diagonal[static_cast<std::size_t>(j)]) ++d;
    }
    auto make = [&](double error, double scale_fn(double, double, double, int)) {
        Vector v = Vector::Zero(r);
        v(r - 1) = error;
        for (int j = 0; j + 1 < r; ++j) {
            if (diagonal[static_cast<std::size_t>(j)]) v(j) = scale_fn(s2, n, traces(j), d);
        }
        return v;
    };
    return {
        make(0.5 * s2, [](double s, double nn, double tr, int dd) { return 0.5 * s * nn / (tr * dd); }),
        make(s2, [](double s, double, double, int) { return s; }),
        make(s2, [](double s, double nn, double tr, int dd) { return 1e-3 * s * nn / (tr * dd); }),
    };
}

struct StartOutcome {
    Vector psi;
    EngineEvaluation eval;
    bool converged = false;
    double gradient_norm = 0.0;
    int iterations = 0;
};

StartOutcome ascend(const LikelihoodEngine& engine, const FeasibleSet& set, const Vector& y, Vector psi,
                    const FitOptions& options) {
    StartOutcome out;
    out.eval = engine.evaluate(psi, y);
    const Vector w = set.metric_weights();
    for (int it = 0; it < options.max_iter; ++it) {
        const EngineEvaluation& ev = out.eval;
        const Vector c = set.congruence_scale(ev.information);
        const Vector cf = select(c, set.free());
        const Vector z = set.to_free(psi, c);
        const Vector g = select(ev.score, set.free()).cwiseProduct(cf);
        Matrix H = cf.asDiagonal() * select(ev.information, set.free()) * cf.asDiagonal();
        const double scale_l = std::max(1.0, std::abs(ev.loglik));
        const double tol = options.tol * scale_l;

        out.gradient_norm = ((set.project(z + g.cwiseQuotient(w), c) - z).cwiseProduct(w.cwiseSqrt())).norm();
        if (out.gradient_norm <= tol) {
            out.converged = true;
            break;
        }
        Eigen::LLT<Matrix> llt(H);
        if (llt.info() != Eigen::Success) {
            H += (1e-10 * std::max(H.trace(), 1.0)) * Matrix::Identity(H.rows(), H.cols());
            llt.compute(H);
        }
        const Vector target = z + llt.solve(g);
        const Vector x = solve_qp(QpProblem{set, H, target, c});
        const Vector d = x - z;
        const double slope = g.dot(d);
        // predicted gain below the rounding level of ℓ: nothing left to do
        if (slope <= 1e-14 * scale_l) {
            out.converged = true;
            break;
        }
        bool accepted = false;
        double alpha = 1.0;
        for (int h = 0; h < kMaxHalvings; ++h, alpha *= 0.5) {
            const Vector cand = set.from_free(z + alpha * d, c);
            double value = -std::numeric_limits<double>::infinity();
            try {
                value = engine.loglik(cand, y);
            } catch (const SingularCovariance&) {
            }
            if (value >= ev.loglik + kArmijo * alpha * slope) {
                psi = cand;
                accepted = true;
                break;
            }
        }
        out.iterations = it + 1;
        if (!accepted) {
            out.converged = slope <= 1e-10 * scale_l;
            break;
        }
        out.eval = engine.evaluate(psi, y);
    }
    out.psi = psi;
    return out;
}

} // namespace

FitResult fit_engine(const LikelihoodEngine& engine, const CovarianceStructure& structure, const Vector& y,
                     const FitOptions& options) {
    if (structure.r() != engine.r()) throw DimensionMismatch("structure and backend disagree on r");
    if (y.size() != engine.n()) throw DimensionMismatch("response length does not match the design");
    if (options.max_iter < 1 || options.starts < 1) throw InvalidArgument("max_iter and starts must be positive");
    if (!(options.tol > 0.0)) throw InvalidArgument("tolerance must be positive");

    const double s2 = sample_variance(engine, y);
    const FeasibleSet set(structure, 1e-10 * s2, options.fixed);
    if (set.free_count() == 0) throw InvalidArgument("every parameter is fixed");
    std::vector<Vector> starts = starting_points(engine, structure, s2);
    starts.resize(std::min<std::size_t>(starts.size(), static_cast<std::size_t>(options.starts)));

    std::optional<StartOutcome> best;
    int best_index = 0;
    for (std::size_t s = 0; s < starts.size(); ++s) {
        const Vector ones = Vector::Ones(structure.r());
        Vector start = set.from_free(set.project(set.to_free(starts[s], ones), ones), ones);
        StartOutcome res = ascend(engine, set, y, std::move(start), options);
        if (!best || res.eval.loglik > best->eval.loglik) {
            best = std::move(res);
            best_index = static_cast<int>(s);
        }
    }

    FitResult fit;
    fit.theta_hat.psi = best->psi;
    if (engine.mode() == LikelihoodMode::Profile) fit.theta_hat.beta = best->eval.beta;
    fit.loglik_at_hat = best->eval.loglik;
    fit.converged = best->converged;
    fit.gradient_norm = best->gradient_norm;
    fit.iterations = best->iterations;
    fit.start_index = best_index;
    fit.information = best->eval.information;
    fit.on_boundary = check_parameter(structure, best->psi, 1e-8) == ParameterStatus::Boundary;
    return fit;
}

FitResult fit_ml(const LmmDesign& design, const Vector& y, const FitOptions& options) {
    const LikelihoodMode mode = design.p() > 0 ? LikelihoodMode::Profile : LikelihoodMode::KnownBeta;
    const LikelihoodEngine engine(make_backend(design), design.X(), mode);
    return fit_engine(engine, design.structure(), y, options);
}

FitResult fit_reml(const LmmDesign& design, const Vector& y, const FitOptions& options) {
    const LikelihoodMode mode = design.p() > 0 ? LikelihoodMode::Restricted : LikelihoodMode::KnownBeta;
    const LikelihoodEngine engine(make_backend(design), design.X(), mode);
    return fit_engine(engine, design.structure(), y, options);
}

Example1Stats example1_stats_from_moment(double mean_square, Index n, double psi) {
    if (n < 1) throw InvalidArgument("n must be positive");
    if (!(psi >= 0.0)) throw InvalidArgument("ψ must be non-negative");
    const double nn = static_cast<double>(n);
    const double psi_hat = std::max(mean_square - 1.0, 0.0);
    const double info_root = std::sqrt(nn / 2.0) / (1.0 + psi);
    auto loglik = [&](double x) { return -0.5 * nn * (std::log1p(x) + mean_square / (1.0 + x)); };
    Example1Stats s;
    s.psi_hat = psi_hat;
    s.w_score = std::sqrt(nn / 2.0) * (mean_square / (1.0 + psi) - 1.0);
    s.w_wald = (psi_hat - psi) * info_root;
    s.t_lrt = std::max(0.0, 2.0 * (loglik(psi_hat) - loglik(psi)));
    return s;
}

Example1Stats example1_stats(const Vector& y, double psi) {
    if (y.size() < 1) throw InvalidArgument("n must be positive");
    return example1_stats_from_moment(y.squaredNorm() / static_cast<double>(y.size()), y.size(), psi);
}

LmmDesign example1_design(Index n) {
    if (n < 1) throw InvalidArgument("n must be positive");
    return LmmDesign(Matrix(n, 0), Matrix::Identity(n, n), CovarianceStructure::scaled_identity(n));
}

FitOptions example1_fit_options() {
    FitOptions o;
    o.fixed = {std::nullopt, 1.0};
    return o;
}

} // namespace lmmscore
