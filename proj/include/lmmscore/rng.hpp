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

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace lmmscore {

/// Counter-based generator: the k-th output is a SplitMix64 finalizer applied
/// to key + (k+1)·γ, so any stream position is addressable and streams for
/// distinct keys are independent of scheduling. Normal deviates use our own
/// Box–Muller transform because standard-library distributions are not
/// reproducible across implementations.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t key) noexcept : key_(key) {}

    static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t next_u64() noexcept {
        ++counter_;
        return mix(key_ + counter_ * kGamma);
    }

    /// Uniform on (0, 1), never exactly 0 or 1.
    double uniform() noexcept { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double p) noexcept { return uniform() < p; }

    double normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    std::uint64_t key() const noexcept { return key_; }

private:
    static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// FNV-1a over a purpose tag.
constexpr std::uint64_t hash_tag(std::string_view tag) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Stream key for (seed, replication, purpose).
constexpr std::uint64_t stream_key(std::uint64_t seed, std::uint64_t rep, std::string_view tag) noexcept {
    std::uint64_t h = CounterRng::mix(seed ^ 0x6a09e667f3bcc909ULL);
    h = CounterRng::mix(h ^ (rep + 0x3c6ef372fe94f82bULL));
    return CounterRng::mix(h ^ hash_tag(tag));
}

inline CounterRng make_stream(std::uint64_t seed, std::uint64_t rep, std::string_view tag) noexcept {
    return CounterRng(stream_key(seed, rep, tag));
}

} // namespace lmmscore
