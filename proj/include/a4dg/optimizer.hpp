// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "a4dg/error.hpp"

namespace a4dg {

// Exponential interpolation from `initial` to `final` over `steps` updates,
// held at `final` afterwards.
struct ExponentialSchedule {
    double initial = 1e-3;
    double final = 1e-3;
    std::uint64_t steps = 1;

    double at(std::uint64_t step) const {
        if (initial <= 0.0 || final <= 0.0) return initial <= 0.0 ? 0.0 : initial;
        const double f = std::min(1.0, static_cast<double>(step) / static_cast<double>(std::max<std::uint64_t>(steps, 1)));
        return std::exp((1.0 - f) * std::log(initial) + f * std::log(final));
    }
};

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-15;
};

// Adaptive-moment state for one parameter group. Moments are kept flat and
// resized alongside the parameters they track.
class AdamGroup {
public:
    AdamGroup() = default;
    AdamGroup(std::string name, ExponentialSchedule lr) : name_(std::move(name)), lr_(lr) {}

    const std::string& name() const { return name_; }
    const ExponentialSchedule& schedule() const { return lr_; }
    std::size_t size() const { return m_.size(); }

    // Grows (zero-filled) or truncates moments to `n` entries.
    void resize(std::size_t n) {
        m_.resize(n, 0.0);
        v_.resize(n, 0.0);
    }

    // Keeps rows of `stride` entries where keep[row] is true.
    void retain(const std::vector<bool>& keep, std::size_t stride) {
        std::size_t out = 0;
        for (std::size_t r = 0; r < keep.size(); ++r) {
            if (!keep[r]) continue;
            std::copy_n(m_.begin() + r * stride, stride, m_.begin() + out * stride);
            std::copy_n(v_.begin() + r * stride, stride, v_.begin() + out * stride);
            ++out;
        }
        resize(out * stride);
    }

    // One update with the group's learning rate at `step` (1-based for the
    // bias correction).
    void step(std::span<double> params, std::span<const double> grads, std::uint64_t step,
              const AdamHyper& hp) {
        if (params.size() != grads.size()) throw InvalidParameter("adam: parameter/gradient size mismatch");
        if (m_.size() != params.size()) resize(params.size());
        const double lr = lr_.at(step - 1);
        if (lr == 0.0) return;
        const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(step));
        const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(step));
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double g = grads[i];
            m_[i] = hp.beta1 * m_[i] + (1.0 - hp.beta1) * g;
            v_[i] = hp.beta2 * v_[i] + (1.0 - hp.beta2) * g * g;
            const double mh = m_[i] / bc1;
            const double vh = v_[i] / bc2;
            params[i] -= lr * mh / (std::sqrt(vh) + hp.epsilon);
        }
    }

private:
    std::string name_;
    ExponentialSchedule lr_;
    std::vector<double> m_;
    std::vector<double> v_;
};

}  // namespace a4dg
