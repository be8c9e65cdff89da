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

#include "lmmscore/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "lmmscore/errors.hpp"
#include "lmmscore/rng.hpp"

namespace lmmscore {

namespace {

Vector embed(const Vector& sub, const FreeMask& free, Index r) {
    if (free.empty()) return sub;
    Vector full = Vector::Zero(r);
    Index k = 0;
    for (Index i = 0; i < r; ++i) {
        if (free[static_cast<std::size_t>(i)]) full(i) = sub(k++);
    }
    return full;
}

Index free_count(const FreeMask& free, Index r) {
    if (free.empty()) return r;
    if (static_cast<Index>(free.size()) != r) throw DimensionMismatch("free mask length mismatch");
    return std::count(free.begin(), free.end(), true);
}

} // namespace

ApproximationBound a_from_eigenvalues(const Vector& eigenvalues) {
    const std::vector<double> ones(static_cast<std::size_t>(eigenvalues.size()), 1.0);
    return a_from_spectrum(std::span<const double>(eigenvalues.data(), eigenvalues.size()), ones);
}

ApproximationBound a_from_spectrum(std::span<const double> eigenvalues, std::span<const double> multiplicity) {
    double top = 0.0;
    double fro2 = 0.0;
    for (std::size_t i = 0; i < eigenvalues.size(); ++i) {
        if (multiplicity[i] <= 0.0) continue;
        top = std::max(top, std::abs(eigenvalues[i]));
        fro2 += multiplicity[i] * eigenvalues[i] * eigenvalues[i];
    }
    ApproximationBound out;
    if (!(fro2 > 0.0)) {
        out.degenerate = true;
        out.a_value = 1.0;
        return out;
    }
    out.a_value = std::min(1.0, top / std::sqrt(fro2));
    out.density_bound = lemma4_density_bound(out.a_value);
    return out;
}

std::optional<double> lemma4_density_bound(double a) {
    const double gap = 1.0 - 8.0 * a * a;
    if (!(gap > 0.0)) return std::nullopt;
    return 0.14 * (4.0 + 0.29 / (gap * gap)) * a;
}

ApproximationBound a_ratio(const LmmDesign& design, const Vector& psi, const Vector& v) {
    if (v.size() != design.r()) throw DimensionMismatch("direction length must equal r");
    return a_from_eigenvalues(linalg::eigenvalues_symmetric(a_combination(design, psi, v)));
}

ApproximationBound a_tilde_direction(const LmmDesign& design, const Vector& psi, const Vector& v_unit,
                                     const FreeMask& free) {
    const Index k = free_count(free, design.r());
    if (v_unit.size() != k) throw DimensionMismatch("direction length must equal the free dimension");
    if (std::abs(v_unit.norm() - 1.0) > 1e-8) throw InvalidArgument("direction must have unit norm");
    const Matrix info = select(fisher_information(design, psi).info_psi, free);
    const Vector vt = linalg::inverse_sqrt_spd(info) * v_unit;
    return a_ratio(design, psi, embed(vt, free, design.r()));
}

double separable_bound(const LmmDesign& design, const Vector& psi, const Vector& v) {
    const Vector sig = linalg::eigenvalues_symmetric(build_sigma(design, psi));
    if (!(sig(0) > 0.0)) throw SingularCovariance("Σ(ψ) is not positive definite");
    const Vector sv = linalg::eigenvalues_symmetric(build_sigma(design, v));
    const double fro = sv.norm();
    if (!(fro > 0.0)) throw InvalidArgument("Σ(v) is zero; the separable bound is undefined");
    return (sig.maxCoeff() / sig(0)) * sv.cwiseAbs().maxCoeff() / fro;
}

double cluster_bound(Index m, double c2, const Vector& psi, std::optional<double> c3_override) {
    if (m < 1) throw InvalidArgument("cluster count must be positive");
    if (psi.size() < 1 || !(psi(psi.size() - 1) > 0.0)) throw InvalidArgument("error variance must be positive");
    const double c3 = c3_override.value_or(std::sqrt(2.0) * c2);
    const Index r = psi.size();
    const double ratio = psi.head(r - 1).norm() / psi(r - 1);
    return c3 / std::sqrt(static_cast<double>(m)) * (1.0 + ratio);
}

double cluster_c2(const Matrix& z_block) {
    const Vector g = linalg::eigenvalues_symmetric(z_block.transpose() * z_block);
    if (!(g(0) > 0.0)) throw InvalidArgument("Z_i^T Z_i is singular");
    return std::max({g.maxCoeff(), 1.0 / g(0), std::nextafter(1.0, 2.0)});
}

double crossed_bound(std::span<const Index> factor_sizes, bool restricted) {
    const Index k = static_cast<Index>(factor_sizes.size());
    if (k < 2) throw InvalidArgument("crossed bound needs at least two factors (r ≥ 3)");
    Index n = 1;
    Index n_min = factor_sizes[0];
    Index spent = 0;
    for (const Index s : factor_sizes) {
        n *= s;
        n_min = std::min(n_min, s);
        spent += s - 1;
    }
    const Index n_tilde = n - 1 - spent;
    if (n_tilde <= 0) throw InvalidArgument("crossed bound needs n - 1 - Σ(n_j - 1) > 0");
    if (restricted) {
        if (n_min < 3) throw InvalidArgument("restricted crossed bound needs every factor size ≥ 3");
        if (n_tilde < 2) throw InvalidArgument("restricted crossed bound needs ñ ≥ 2");
        return std::sqrt(std::max(1.0 / static_cast<double>(n_min - 2), 1.0 / static_cast<double>(n_tilde - 1)));
    }
    if (n_min < 2) throw InvalidArgument("crossed bound needs every factor size ≥ 2");
    double a2 = 0.0;
    for (const Index s : factor_sizes) a2 += 1.0 / static_cast<double>(s - 1);
    const double rm2 = static_cast<double>(k - 1);   // r - 2
    a2 += rm2 * rm2 / static_cast<double>(n_tilde);
    return std::sqrt(a2);
}

double sup_a_estimate(const LmmDesign& design, const Vector& psi, Index samples, std::uint64_t seed,
                      const FreeMask& free, int ascent_steps) {
    const Index r = design.r();
    const Index k = free_count(free, r);
    if (k == 0) throw InvalidArgument("no free directions");
    const Matrix w = whitener_for(build_sigma(design, psi));
    std::vector<Matrix> a;
    for (Index j = 0; j < r; ++j) {
        if (free.empty() || free[static_cast<std::size_t>(j)]) {
            a.push_back(linalg::symmetrize(w * design.derivative(static_cast<int>(j)) * w.transpose()));
        }
    }
    auto value = [&](const Vector& v) {
        Matrix m = Matrix::Zero(design.n(), design.n());
        for (Index j = 0; j < k; ++j) m.noalias() += v(j) * a[static_cast<std::size_t>(j)];
        return a_from_eigenvalues(linalg::eigenvalues_symmetric(m)).a_value;
    };

    CounterRng rng = make_stream(seed, 0, "sup-a");
    Vector best = Vector::Unit(k, 0);
    double best_value = value(best);
    for (Index j = 1; j < k; ++j) {
        const Vector e = Vector::Unit(k, j);
        const double val = value(e);
        if (val > best_value) {
            best_value = val;
            best = e;
        }
    }
    for (Index s = 0; s < samples; ++s) {
        Vector v(k);
        for (Index j = 0; j < k; ++j) v(j) = rng.normal();
        if (!(v.norm() > 0.0)) continue;
        v.normalize();
        const double val = value(v);
        if (val > best_value) {
            best_value = val;
            best = v;
        }
    }
    double step = 0.1;
    for (int it = 0; it < ascent_steps && k > 1; ++it) {
        bool improved = false;
        for (Index j = 0; j < k; ++j) {
            for (const double sign : {1.0, -1.0}) {
                Vector v = best;
                v(j) += sign * step;
                if (!(v.norm() > 0.0)) continue;
                v.normalize();
                const double val = value(v);
                if (val > best_value) {
                    best_value = val;
                    best = v;
                    improved = true;
                }
            }
        }
        if (!improved) step *= 0.5;
    }
    return best_value;
}

} // namespace lmmscore
