// SPDX-License-Identifier: Apache-2.0
#include "mark/sgd.hpp"

#include <cmath>
#include <string>

namespace mark {

void SgdConfig::validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
        throw value_error("sgd: learning_rate must be > 0, got " + std::to_string(learning_rate));
    if (momentum < 0.0 || momentum >= 1.0)
        throw value_error("sgd: momentum must be in [0, 1), got " + std::to_string(momentum));
    if (weight_decay < 0.0)
        throw value_error("sgd: weight_decay must be >= 0, got " + std::to_string(weight_decay));
}

void sgd_step(std::vector<Tensor>& params, const SgdConfig& cfg) {
    if (cfg.learning_rate < 0.0)
        throw value_error("sgd: learning_rate must be >= 0, got " +
                          std::to_string(cfg.learning_rate));
    for (Tensor& p : params) {
        TensorNode& n = *p.node();
        if (n.grad.size() != n.data.size())
            throw contract_error("sgd_step: parameter of shape " + shape_str(n.shape) +
                                 " has no gradient");
        if (n.velocity.empty()) n.velocity.assign(n.data.size(), 0.0f);
        for (size_t i = 0; i < n.data.size(); ++i) {
            const double v = cfg.momentum * static_cast<double>(n.velocity[i]) +
                             (static_cast<double>(n.grad[i]) +
                              cfg.weight_decay * static_cast<double>(n.data[i]));
            n.velocity[i] = static_cast<float>(v);
            const double update = cfg.learning_rate * v;
            // Skipping zero updates keeps lr = 0 a bitwise no-op.
            if (update != 0.0)
                n.data[i] = static_cast<float>(static_cast<double>(n.data[i]) - update);
        }
    }
}

} // namespace mark
