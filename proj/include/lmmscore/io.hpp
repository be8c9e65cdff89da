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

#include <string>
#include <string_view>
#include <vector>

#include "lmmscore/model.hpp"

namespace lmmscore {

/// Shortest round-trip decimal form.
std::string format_double(double x);

/// Model spec: {"n", "p", "q", "r", "X": [row-major n·p], "Z": [row-major n·q],
/// "assignment": [{"row", "col", "param"}]} with 0-based row/col and param in
/// 1..r-1. Each entry sets both (row, col) and (col, row).
LmmDesign parse_model_spec(std::string_view json_text);
LmmDesign read_model_spec(const std::string& path);
std::string model_spec_json(const LmmDesign& design);

/// Single-column CSV; a non-numeric first line is taken as a header.
Vector parse_response_csv(std::string_view text);
Vector read_response_csv(const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

/// "1,2.5,-3" → {1, 2.5, -3}.
std::vector<double> parse_double_list(std::string_view text);

} // namespace lmmscore
