// Copyright 2026 The sonoclass Authors
// SPDX-License-Identifier: Apache-2.0
//
// Warnings from library code. The default sink writes to stderr; tests and
// the CLI may install their own.

#pragma once

#include <functional>
#include <string_view>

namespace sono {

using WarningSink = std::function<void(std::string_view)>;

// Returns the previous sink. An empty sink restores the stderr default.
WarningSink set_warning_sink(WarningSink sink);
void warn(std::string_view message);

}  // namespace sono
