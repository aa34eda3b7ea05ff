// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "mark/tensor.hpp"

namespace mark {

/// Plain SGD with classical momentum and decoupled-from-nothing L2 decay:
///   v <- momentum * v + (grad + weight_decay * w);  w <- w - lr * v
struct SgdConfig {
    double learning_rate = 0.01;
    double momentum = 0.9;
    double weight_decay = 0.01;

    /// Enforces the constraints expected of a training configuration
    /// (learning_rate strictly positive).  sgd_step itself also accepts a
    /// zero learning rate so that the no-op property is testable.
    void validate() const;
};

/// One update over every parameter.  Velocity lives with the parameter and
/// starts at zero.  Gradients are left untouched — the caller clears them.
/// Parameters with no populated gradient raise contract_error.
void sgd_step(std::vector<Tensor>& params, const SgdConfig& cfg);

} // namespace mark
