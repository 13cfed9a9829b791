// Copyright 2026 The sonoclass Authors
// SPDX-License-Identifier: Apache-2.0
//
// Small RFC 4180 subset: comma separated, optional double quotes with ""
// escapes, no embedded newlines.

#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace sono::csv {

using Row = std::vector<std::string>;

Row split_line(std::string_view line);
std::string escape(std::string_view field);
std::string join(const Row& row);

// Whole file, header included; blank lines skipped, trailing CR stripped.
// Throws std::runtime_error naming the path when the file cannot be read.
std::vector<Row> read_file(const std::filesystem::path& path);

// Throws std::runtime_error unless `header` matches exactly.
void expect_header(const std::vector<Row>& rows, const Row& header,
                   const std::filesystem::path& path);

}  // namespace sono::csv
