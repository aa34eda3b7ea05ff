// SPDX-License-Identifier: Apache-2.0
#include "mark/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mark/rng.hpp"

namespace mark {

double grad_check(const std::function<Tensor()>& forward_fn,
                  std::vector<Tensor>& params, double eps) {
    return grad_check_sampled(forward_fn, params, eps,
                              std::numeric_limits<size_t>::max(), 0);
}

double grad_check_sampled(const std::function<Tensor()>& forward_fn,
                          std::vector<Tensor>& params, double eps,
                          size_t max_probes, uint64_t seed) {
    if (!(eps > 0.0))
        throw value_error("grad_check: eps must be > 0");

    for (Tensor& p : params) p.zero_grad();
    Tensor loss = forward_fn();
    backward(loss);

    std::vector<std::pair<size_t, size_t>> sites;
    for (size_t pi = 0; pi < params.size(); ++pi)
        for (size_t ei = 0; ei < params[pi].numel(); ++ei) sites.emplace_back(pi, ei);
    if (sites.size() > max_probes) {
        Rng rng(seed);
        std::vector<int64_t> keep = rng.sample_without_replacement(
            static_cast<int64_t>(sites.size()), static_cast<int64_t>(max_probes));
        std::vector<std::pair<size_t, size_t>> chosen;
        chosen.reserve(keep.size());
        for (int64_t k : keep) chosen.push_back(sites[static_cast<size_t>(k)]);
        sites = std::move(chosen);
    }

    double max_rel = 0.0;
    NoGradGuard no_grad;
    for (const auto& [pi, ei] : sites) {
        std::vector<float>& w = params[pi].data();
        const float orig = w[ei];
        double h = eps * std::max(1.0, std::abs(static_cast<double>(orig)));
        float wp = static_cast<float>(static_cast<double>(orig) + h);
        float wm = static_cast<float>(static_cast<double>(orig) - h);
        // Guard against an underflowing step: grow until the 32-bit
        // endpoints actually differ.
        for (int tries = 0; wp == wm && tries < 60; ++tries) {
            h *= 2.0;
            wp = static_cast<float>(static_cast<double>(orig) + h);
            wm = static_cast<float>(static_cast<double>(orig) - h);
        }
        if (wp == wm)
            throw numeric_error("grad_check: could not form a finite-difference step");

        w[ei] = wp;
        const double f_plus = forward_fn().item64();
        w[ei] = wm;
        const double f_minus = forward_fn().item64();
        w[ei] = orig;

        const double achieved = static_cast<double>(wp) - static_cast<double>(wm);
        const double g_fd = (f_plus - f_minus) / achieved;
        const double g_ad = static_cast<double>(params[pi].grad()[ei]);
        const double rel = std::abs(g_ad - g_fd) /
                           std::max({std::abs(g_ad), std::abs(g_fd), 1e-8});
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

} // namespace mark
