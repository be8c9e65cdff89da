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

#include "lmmscore/crossed.hpp"

#include <bit>
#include <limits>
#include <cmath>
#include <string>

#include "lmmscore/errors.hpp"

namespace lmmscore {

CrossedLayout::CrossedLayout(std::vector<Index> factor_sizes) : sizes_(std::move(factor_sizes)), n_(1) {
    if (sizes_.empty()) throw InvalidArgument("a crossed layout needs at least one factor");
    if (sizes_.size() > 16) throw InvalidArgument("at most 16 crossed factors are supported");
    for (const Index s : sizes_) {
        if (s < 2) throw InvalidArgument("every crossed factor needs at least two levels");
        if (n_ > std::numeric_limits<Index>::max() / s) throw InvalidArgument("crossed layout is too large");
        n_ *= s;
    }
}

Index CrossedLayout::n_tilde() const noexcept {
    Index spent = 0;
    for (const Index s : sizes_) spent += s - 1;
    return n_ - 1 - spent;
}

LmmDesign build_crossed_design(const CrossedLayout& layout, Index dense_limit) {
    const Index n = layout.n();
    if (n > dense_limit) {
        throw InvalidArgument("crossed design with n = " + std::to_string(n) + " exceeds the dense limit " +
                              std::to_string(dense_limit));
    }
    const auto& sizes = layout.factor_sizes();
    Index q = 0;
    for (const Index s : sizes) q += s;
    Matrix z = Matrix::Zero(n, q);
    Index offset = 0;
    Index stride = n;
    for (const Index s : sizes) {
        stride /= s;
        for (Index i = 0; i < n; ++i) z(i, offset + (i / stride) % s) = 1.0;
        offset += s;
    }
    return LmmDesign(Matrix::Ones(n, 1), std::move(z), CovarianceStructure::diagonal_blocks(sizes));
}

namespace {

// κ_{j,S}: the eigenvalue of K_j on component S.
double derivative_eigenvalue(const CrossedLayout& layout, int j, std::uint32_t mask) {
    const Index k = layout.factors();
    if (j == static_cast<int>(k)) return 1.0;
    const std::uint32_t all = (std::uint32_t{1} << k) - 1;
    const std::uint32_t others = all & ~(std::uint32_t{1} << j);
    return (mask & others) == others ? static_cast<double>(layout.n_without(j)) : 0.0;
}

Index multiplicity(const CrossedLayout& layout, std::uint32_t mask) {
    Index m = 1;
    for (Index i = 0; i < layout.factors(); ++i) {
        if (!(mask & (std::uint32_t{1} << i))) m *= layout.factor_sizes()[static_cast<std::size_t>(i)] - 1;
    }
    return m;
}

class CrossedOperator final : public CovarianceOperator {
public:
    CrossedOperator(const CrossedBackend& backend, const Vector& psi) : backend_(&backend) {
        const CrossedLayout& layout = backend.layout();
        const auto comps = crossed_spectrum(layout, psi);
        const std::size_t count = comps.size();
        lambda_.resize(count);
        mult_.resize(count);
        for (std::size_t s = 0; s < count; ++s) {
            lambda_[s] = comps[s].eigenvalue;
            mult_[s] = static_cast<double>(comps[s].multiplicity);
            if (!(lambda_[s] > 0.0)) {
                throw SingularCovariance("crossed covariance is not positive definite (eigenvalue " +
                                         std::to_string(lambda_[s]) + ")");
            }
        }
        inv_coef_ = mobius([](double x) { return 1.0 / x; });
        sqrt_coef_ = mobius([](double x) { return std::sqrt(x); });
        const int r = layout.r();
        kappa_.assign(static_cast<std::size_t>(r), std::vector<double>(count));
        for (int j = 0; j < r; ++j) {
            for (std::size_t s = 0; s < count; ++s) {
                kappa_[static_cast<std::size_t>(j)][s] = derivative_eigenvalue(layout, j, static_cast<std::uint32_t>(s));
            }
        }
    }

    Index n() const override { return backend_->n(); }
    double logdet() const override {
        double total = 0.0;
        for (std::size_t s = 0; s < lambda_.size(); ++s) {
            if (mult_[s] > 0.0) total += mult_[s] * std::log(lambda_[s]);
        }
        return total;
    }
    Matrix solve(const Matrix& b) const override { return combine(inv_coef_, b); }
    Matrix apply_sqrt(const Matrix& b) const override { return combine(sqrt_coef_, b); }
    Vector trace_solve_derivative() const override {
        const int r = backend_->r();
        Vector t = Vector::Zero(r);
        for (int j = 0; j < r; ++j) {
            for (std::size_t s = 0; s < lambda_.size(); ++s) t(j) += mult_[s] * kappa_[static_cast<std::size_t>(j)][s] / lambda_[s];
        }
        return t;
    }
    Matrix trace_pairs() const override {
        const int r = backend_->r();
        Matrix t = Matrix::Zero(r, r);
        for (int i = 0; i < r; ++i) {
            for (int j = 0; j < r; ++j) {
                for (std::size_t s = 0; s < lambda_.size(); ++s) {
                    t(i, j) += mult_[s] * kappa_[static_cast<std::size_t>(i)][s] * kappa_[static_cast<std::size_t>(j)][s] /
                               (lambda_[s] * lambda_[s]);
                }
            }
        }
        return t;
    }

private:
    // f(Σ) = Σ_T c_T A_T with c_T = Σ_{S⊆T} (-1)^{|T\S|} f(λ_S).
    template <typename F>
    std::vector<double> mobius(F f) const {
        const std::size_t count = lambda_.size();
        std::vector<double> c(count, 0.0);
        for (std::uint32_t t = 0; t < count; ++t) {
            // enumerate subsets of t
            for (std::uint32_t s = t;; s = (s - 1) & t) {
                const int sign = (std::popcount(t & ~s) % 2) ? -1 : 1;
                c[t] += sign * f(lambda_[s]);
                if (s == 0) break;
            }
        }
        return c;
    }

    Matrix combine(const std::vector<double>& coef, const Matrix& b) const {
        if (b.rows() != n()) throw DimensionMismatch("operand has the wrong number of rows");
        const std::size_t count = coef.size();
        std::vector<Matrix> averaged(count);
        averaged[0] = b;
        Matrix out = coef[0] * b;
        for (std::uint32_t t = 1; t < count; ++t) {
            // A_T = A_{lowest bit} A_{T without it}
            const std::uint32_t low = t & (~t + 1);
            averaged[t] = backend_->average(low, averaged[t & ~low]);
            out += coef[t] * averaged[t];
        }
        return out;
    }

    const CrossedBackend* backend_;
    std::vector<double> lambda_;
    std::vector<double> mult_;
    std::vector<double> inv_coef_;
    std::vector<double> sqrt_coef_;
    std::vector<std::vector<double>> kappa_;
};

} // namespace

std::vector<SpectralComponent> crossed_spectrum(const CrossedLayout& layout, const Vector& psi) {
    const int r = layout.r();
    if (psi.size() != r) throw DimensionMismatch("ψ length must equal r");
    const std::uint32_t count = std::uint32_t{1} << layout.factors();
    std::vector<SpectralComponent> out;
    out.reserve(count);
    for (std::uint32_t s = 0; s < count; ++s) {
        double lambda = 0.0;
        for (int j = 0; j < r; ++j) lambda += psi(j) * derivative_eigenvalue(layout, j, s);
        out.push_back(SpectralComponent{lambda, multiplicity(layout, s), s});
    }
    return out;
}

ApproximationBound crossed_a_ratio(const CrossedLayout& layout, const Vector& psi, const Vector& v, bool restricted) {
    const auto base = crossed_spectrum(layout, psi);
    const auto top = crossed_spectrum(layout, v);
    const std::uint32_t all = (std::uint32_t{1} << layout.factors()) - 1;
    std::vector<double> values;
    std::vector<double> mult;
    for (std::size_t s = 0; s < base.size(); ++s) {
        if (!(base[s].eigenvalue > 0.0)) throw SingularCovariance("crossed covariance is not positive definite");
        Index m = base[s].multiplicity;
        if (restricted && base[s].constant_mask == all) m -= 1;
        values.push_back(top[s].eigenvalue / base[s].eigenvalue);
        mult.push_back(static_cast<double>(m));
    }
    return a_from_spectrum(values, mult);
}

CrossedBackend::CrossedBackend(CrossedLayout layout) : layout_(std::move(layout)) {}

std::unique_ptr<CovarianceOperator> CrossedBackend::at(const Vector& psi) const {
    return std::make_unique<CrossedOperator>(*this, psi);
}

Matrix CrossedBackend::average(std::uint32_t mask, const Matrix& b) const {
    Matrix out = b;
    const auto& sizes = layout_.factor_sizes();
    Index stride = layout_.n();
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        const Index s = sizes[i];
        stride /= s;
        if (!(mask & (std::uint32_t{1} << i))) continue;
        const Index span = s * stride;
        for (Index col = 0; col < out.cols(); ++col) {
            double* x = out.col(col).data();
            for (Index base = 0; base < layout_.n(); base += span) {
                for (Index inner = 0; inner < stride; ++inner) {
                    double sum = 0.0;
                    for (Index l = 0; l < s; ++l) sum += x[base + l * stride + inner];
                    const double mean = sum / static_cast<double>(s);
                    for (Index l = 0; l < s; ++l) x[base + l * stride + inner] = mean;
                }
            }
        }
    }
    return out;
}

Matrix CrossedBackend::apply_derivative(int j, const Matrix& b) const {
    const int r = layout_.r();
    if (j < 0 || j >= r) throw InvalidArgument("derivative index out of range");
    if (b.rows() != n()) throw DimensionMismatch("operand has the wrong number of rows");
    if (j == r - 1) return b;
    const std::uint32_t all = (std::uint32_t{1} << layout_.factors()) - 1;
    return static_cast<double>(layout_.n_without(j)) * average(all & ~(std::uint32_t{1} << j), b);
}

Vector CrossedBackend::derivative_traces() const {
    return Vector::Constant(layout_.r(), static_cast<double>(layout_.n()));
}

} // namespace lmmscore
