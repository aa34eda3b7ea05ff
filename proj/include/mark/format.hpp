// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

namespace mark {

/// Shortest decimal text that parses back (strtod) to exactly the same
/// double.  Used wherever a float lands in a replayable text artifact —
/// config echoes, CSV cells — so a parse/emit cycle is byte-stable.
std::string format_double(double v);

} // namespace mark
