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

#include "lmmscore/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lmmscore/errors.hpp"

namespace lmmscore::stats {

double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double empirical_quantile(std::span<const double> sorted, double prob) {
    if (sorted.empty()) throw InvalidArgument("quantile of an empty sample");
    if (!(prob >= 0.0 && prob <= 1.0)) throw InvalidArgument("probability must lie in [0, 1]");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double ks_one_sample(std::vector<double> sample, const std::function<double(double)>& cdf) {
    if (sample.empty()) throw InvalidArgument("KS distance of an empty sample");
    std::sort(sample.begin(), sample.end());
    const double n = static_cast<double>(sample.size());
    double d = 0.0;
    std::size_t i = 0;
    while (i < sample.size()) {
        std::size_t j = i;
        while (j < sample.size() && sample[j] == sample[i]) ++j;   // ties form one jump
        const double f = cdf(sample[i]);
        d = std::max({d, std::abs(static_cast<double>(i) / n - f), std::abs(static_cast<double>(j) / n - f)});
        i = j;
    }
    return d;
}

double ks_two_sample(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw InvalidArgument("KS distance of an empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    std::size_t i = 0;
    std::size_t j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) ++i;
        while (j < b.size() && b[j] <= x) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    return d;
}

double mean(std::span<const double> x) {
    if (x.empty()) throw InvalidArgument("mean of an empty sample");
    double s = 0.0;
    for (const double v : x) s += v;
    return s / static_cast<double>(x.size());
}

double variance(std::span<const double> x) {
    if (x.size() < 2) throw InvalidArgument("variance needs at least two values");
    const double m = mean(x);
    double s = 0.0;
    for (const double v : x) s += (v - m) * (v - m);
    return s / static_cast<double>(x.size() - 1);
}

KdeDeviation kde_max_deviation(std::span<const double> sample, const std::function<double(double)>& density,
                               double lo, double hi, int grid) {
    if (sample.size() < 2) throw InvalidArgument("density estimate needs at least two values");
    if (grid < 2 || !(hi > lo)) throw InvalidArgument("invalid density grid");
    std::vector<double> sorted(sample.begin(), sample.end());
    std::sort(sorted.begin(), sorted.end());
    const double n = static_cast<double>(sorted.size());
    const double sd = std::sqrt(variance(sorted));
    const double iqr = empirical_quantile(sorted, 0.75) - empirical_quantile(sorted, 0.25);
    const double spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
    KdeDeviation out;
    out.bandwidth = 0.9 * spread * std::pow(n, -0.2);
    const double h = out.bandwidth;
    const double cutoff = 8.0 * h;   // kernel mass beyond 8h is below 1e-14
    for (int g = 0; g < grid; ++g) {
        const double x = lo + (hi - lo) * g / (grid - 1);
        const auto first = std::lower_bound(sorted.begin(), sorted.end(), x - cutoff);
        const auto last = std::upper_bound(sorted.begin(), sorted.end(), x + cutoff);
        double s = 0.0;
        for (auto it = first; it != last; ++it) {
            const double u = (x - *it) / h;
            s += std::exp(-0.5 * u * u);
        }
        const double kde = s / (n * h * std::sqrt(2.0 * std::numbers::pi));
        const double dev = std::abs(kde - density(x));
        if (dev > out.max_abs) {
            out.max_abs = dev;
            out.at = x;
        }
    }
    return out;
}

} // namespace lmmscore::stats
