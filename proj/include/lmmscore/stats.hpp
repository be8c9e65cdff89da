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

#include <functional>
#include <span>
#include <vector>

namespace lmmscore::stats {

double normal_pdf(double x);
double normal_cdf(double x);

/// Type-7 (linear interpolation) quantile of an ascending sample.
double empirical_quantile(std::span<const double> sorted, double prob);

/// sup_x |F_n(x) - F(x)|.
double ks_one_sample(std::vector<double> sample, const std::function<double(double)>& cdf);
/// sup_x |F_n(x) - G_m(x)|.
double ks_two_sample(std::vector<double> a, std::vector<double> b);

struct KdeDeviation {
    double max_abs = 0.0;
    double at = 0.0;
    double bandwidth = 0.0;
};

/// Gaussian kernel density estimate with Silverman's bandwidth, compared
/// to `density` on an even grid over [lo, hi].
KdeDeviation kde_max_deviation(std::span<const double> sample, const std::function<double(double)>& density,
                               double lo = -4.0, double hi = 4.0, int grid = 401);

double mean(std::span<const double> x);
double variance(std::span<const double> x);   // unbiased

} // namespace lmmscore::stats
