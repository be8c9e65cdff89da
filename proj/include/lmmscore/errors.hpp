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

#include <stdexcept>
#include <string>

namespace lmmscore {

/// Base class for every error raised by the library. `kind()` is a stable
/// machine-readable tag used in the CLI's JSON error reports.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual const char* kind() const noexcept { return "error"; }
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "dimension_mismatch"; }
};

class InvalidArgument : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "invalid_argument"; }
};

/// Σ(ψ) is not numerically positive definite.
class SingularCovariance : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "singular_covariance"; }
};

/// The Fisher information is singular, i.e. the parameterization is not
/// identifiable.
class SingularInformation : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "singular_information"; }
};

class RankDeficient : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "rank_deficient"; }
};

/// Raised when a likelihood-ratio value is clearly negative, which means the
/// supplied maximizer is not a maximizer.
class OptimizationFailure : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "optimization_failure"; }
};

class IoError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "io_error"; }
};

} // namespace lmmscore
