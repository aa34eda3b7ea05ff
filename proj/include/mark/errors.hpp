// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace mark {

/// Base class for all library errors.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Tensor rank/dimension mismatches.
struct shape_error : error {
    using error::error;
};

/// Invalid argument values (negative windows, out-of-range labels, ...).
struct value_error : error {
    using error::error;
};

/// API misuse: non-scalar backward roots, missing gradients, aliasing.
struct contract_error : error {
    using error::error;
};

/// NaN or Inf produced by an operation.
struct numeric_error : error {
    using error::error;
};

/// Malformed binary or text file contents.
struct format_error : error {
    using error::error;
};

/// Filesystem-level failures.
struct io_error : error {
    using error::error;
};

/// Configuration file problems (unknown key, bad type, ...).
struct config_error : error {
    using error::error;
};

/// Dataset construction or sampling failures.
struct data_error : error {
    using error::error;
};

/// Metric requested on inputs where it is undefined.
struct metric_error : error {
    using error::error;
};

} // namespace mark
