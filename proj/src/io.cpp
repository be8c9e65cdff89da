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

#include "lmmscore/io.hpp"

#include <charconv>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "lmmscore/errors.hpp"

namespace lmmscore {

std::string format_double(double x) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

namespace {

Index get_count(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || !j[key].is_number_integer()) {
        throw InvalidArgument(std::string("model spec needs an integer field '") + key + "'");
    }
    const auto v = j[key].get<long long>();
    if (v < 0) throw InvalidArgument(std::string("model spec field '") + key + "' must be non-negative");
    return static_cast<Index>(v);
}

Matrix get_matrix(const nlohmann::json& j, const char* key, Index rows, Index cols) {
    Matrix m(rows, cols);
    if (rows * cols == 0) {
        if (j.contains(key) && !j[key].is_array()) throw InvalidArgument(std::string("'") + key + "' must be an array");
        return m;
    }
    if (!j.contains(key) || !j[key].is_array()) throw InvalidArgument(std::string("model spec needs an array '") + key + "'");
    const auto& a = j[key];
    if (static_cast<Index>(a.size()) != rows * cols) {
        throw DimensionMismatch(std::string("'") + key + "' has " + std::to_string(a.size()) + " entries, expected " +
                                std::to_string(rows * cols));
    }
    for (Index i = 0; i < rows; ++i) {
        for (Index c = 0; c < cols; ++c) {
            const auto& e = a[static_cast<std::size_t>(i * cols + c)];
            if (!e.is_number()) throw InvalidArgument(std::string("'") + key + "' entries must be numbers");
            m(i, c) = e.get<double>();
        }
    }
    return m;
}

} // namespace

LmmDesign parse_model_spec(std::string_view json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("model spec is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw InvalidArgument("model spec must be a JSON object");
    const Index n = get_count(j, "n");
    const Index p = get_count(j, "p");
    const Index q = get_count(j, "q");
    const Index r = get_count(j, "r");
    if (n < 1 || q < 1 || r < 1) throw InvalidArgument("model spec needs n ≥ 1, q ≥ 1, r ≥ 1");
    Matrix X = get_matrix(j, "X", n, p);
    Matrix Z = get_matrix(j, "Z", n, q);
    Eigen::MatrixXi assignment = Eigen::MatrixXi::Constant(q, q, CovarianceStructure::kFixedZero);
    if (!j.contains("assignment") || !j["assignment"].is_array()) throw InvalidArgument("model spec needs 'assignment'");
    for (const auto& e : j["assignment"]) {
        if (!e.is_object() || !e.contains("row") || !e.contains("col") || !e.contains("param")) {
            throw InvalidArgument("assignment entries need row, col and param");
        }
        if (!e["row"].is_number_integer() || !e["col"].is_number_integer() || !e["param"].is_number_integer()) {
            throw InvalidArgument("assignment row, col and param must be integers");
        }
        const auto row = e["row"].get<long long>();
        const auto col = e["col"].get<long long>();
        const auto param = e["param"].get<long long>();
        if (row < 0 || col < 0 || row >= q || col >= q) throw InvalidArgument("assignment cell outside the q×q matrix");
        if (param < 1 || param > static_cast<long long>(r) - 1) throw InvalidArgument("assignment param must lie in 1..r-1");
        assignment(row, col) = static_cast<int>(param - 1);
        assignment(col, row) = static_cast<int>(param - 1);
    }
    return LmmDesign(std::move(X), std::move(Z), CovarianceStructure(q, static_cast<int>(r), std::move(assignment)));
}

LmmDesign read_model_spec(const std::string& path) { return parse_model_spec(read_file(path)); }

std::string model_spec_json(const LmmDesign& design) {
    nlohmann::json j;
    j["n"] = design.n();
    j["p"] = design.p();
    j["q"] = design.q();
    j["r"] = design.r();
    std::vector<double> x;
    std::vector<double> z;
    for (Index i = 0; i < design.n(); ++i) {
        for (Index c = 0; c < design.p(); ++c) x.push_back(design.X()(i, c));
        for (Index c = 0; c < design.q(); ++c) z.push_back(design.Z()(i, c));
    }
    j["X"] = x;
    j["Z"] = z;
    nlohmann::json a = nlohmann::json::array();
    const CovarianceStructure& s = design.structure();
    for (Index row = 0; row < s.q(); ++row) {
        for (Index col = row; col < s.q(); ++col) {
            if (s.cell(row, col) != CovarianceStructure::kFixedZero) {
                a.push_back({{"row", row}, {"col", col}, {"param", s.cell(row, col) + 1}});
            }
        }
    }
    j["assignment"] = a;
    return j.dump() + "\n";
}

namespace {

bool parse_number(std::string_view s, double& out) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    if (s.empty()) return false;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

} // namespace

Vector parse_response_csv(std::string_view text) {
    std::vector<double> values;
    std::size_t line = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t end = std::min(text.find('\n', pos), text.size());
        std::string_view row = text.substr(pos, end - pos);
        pos = end + 1;
        ++line;
        if (!row.empty() && row.back() == '\r') row.remove_suffix(1);
        if (row.find_first_not_of(" \t") == std::string_view::npos) {
            if (end == text.size()) break;
            continue;
        }
        if (row.find(',') != std::string_view::npos) {
            throw InvalidArgument("response CSV must have a single column (line " + std::to_string(line) + ")");
        }
        double v = 0.0;
        if (!parse_number(row, v)) {
            if (line == 1) continue;   // header
            throw InvalidArgument("response CSV line " + std::to_string(line) + " is not a number");
        }
        values.push_back(v);
        if (end == text.size()) break;
    }
    if (values.empty()) throw InvalidArgument("response CSV contains no values");
    return Eigen::Map<const Vector>(values.data(), static_cast<Index>(values.size()));
}

Vector read_response_csv(const std::string& path) { return parse_response_csv(read_file(path)); }

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, std::string_view contents) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("failed writing '" + path + "'");
}

std::vector<double> parse_double_list(std::string_view text) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t end = std::min(text.find(',', pos), text.size());
        double v = 0.0;
        const std::string_view item = text.substr(pos, end - pos);
        if (item == "inf" || item == "Inf") v = std::numeric_limits<double>::infinity();
        else if (!parse_number(item, v)) throw InvalidArgument("'" + std::string(item) + "' is not a number");
        out.push_back(v);
        pos = end + 1;
        if (end == text.size()) break;
    }
    return out;
}

} // namespace lmmscore
