// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mark/tensor.hpp"

namespace mark {

/// Compares reverse-mode gradients against central finite differences.
///
/// `forward_fn` must rebuild the loss from the current parameter values on
/// every call and be deterministic given those values.  Gradients of
/// `params` are cleared before the reverse-mode pass.  Per probed element
/// the step is eps*max(1, |w|), applied in 32-bit storage, and the achieved
/// difference between the two rounded endpoints is used as the divisor.
/// Returns max over probes of |g_ad − g_fd| / max(|g_ad|, |g_fd|, 1e-8).
double grad_check(const std::function<Tensor()>& forward_fn,
                  std::vector<Tensor>& params, double eps);

/// grad_check restricted to `max_probes` parameter elements sampled without
/// replacement (seeded), for models too large to probe exhaustively.
double grad_check_sampled(const std::function<Tensor()>& forward_fn,
                          std::vector<Tensor>& params, double eps,
                          size_t max_probes, uint64_t seed);

} // namespace mark
