// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "a4dg/error.hpp"

namespace a4dg {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

// Fully connected layer, weights row-major (rows = outputs, cols = inputs).
struct Dense {
    int rows = 0;
    int cols = 0;
    std::vector<double> weight;
    std::vector<double> bias;

    Dense() = default;
    Dense(int out, int in) : rows(out), cols(in), weight(static_cast<std::size_t>(out) * in, 0.0), bias(out, 0.0) {}

    ConstMatMap w() const { return {weight.data(), rows, cols}; }
    MatMap w() { return {weight.data(), rows, cols}; }
    ConstVecMap b() const { return {bias.data(), rows}; }
    VecMap b() { return {bias.data(), rows}; }

    std::size_t parameter_count() const { return weight.size() + bias.size(); }

    bool finite() const {
        for (double v : weight) if (!std::isfinite(v)) return false;
        for (double v : bias) if (!std::isfinite(v)) return false;
        return true;
    }

    void zero() {
        std::fill(weight.begin(), weight.end(), 0.0);
        std::fill(bias.begin(), bias.end(), 0.0);
    }
};

// Linear -> ReLU -> Linear.
struct TwoLayerMLP {
    Dense hidden;
    Dense output;

    TwoLayerMLP() = default;
    TwoLayerMLP(int in, int width, int out) : hidden(width, in), output(out, width) {}

    int input_dim() const { return hidden.cols; }
    int output_dim() const { return output.rows; }
    int width() const { return hidden.rows; }
    std::size_t parameter_count() const { return hidden.parameter_count() + output.parameter_count(); }
    bool finite() const { return hidden.finite() && output.finite(); }

    // Writes the hidden pre-activation (kept for backward) and the raw output.
    void forward(const Eigen::Ref<const Eigen::VectorXd>& x, Eigen::VectorXd& pre,
                 Eigen::VectorXd& out) const {
        pre.noalias() = hidden.w() * x;
        pre += hidden.b();
        out.noalias() = output.w() * pre.cwiseMax(0.0);
        out += output.b();
    }

    Eigen::VectorXd forward(const Eigen::Ref<const Eigen::VectorXd>& x) const {
        Eigen::VectorXd pre, out;
        forward(x, pre, out);
        return out;
    }

    // Accumulates parameter gradients into `grad` and returns dL/dx.
    Eigen::VectorXd backward(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::VectorXd& pre,
                             const Eigen::Ref<const Eigen::VectorXd>& d_out, TwoLayerMLP& grad) const {
        const Eigen::VectorXd h = pre.cwiseMax(0.0);
        grad.output.w().noalias() += d_out * h.transpose();
        grad.output.b() += d_out;
        Eigen::VectorXd d_pre = output.w().transpose() * d_out;
        for (Eigen::Index i = 0; i < d_pre.size(); ++i)
            if (!(pre[i] > 0.0)) d_pre[i] = 0.0;
        grad.hidden.w().noalias() += d_pre * x.transpose();
        grad.hidden.b() += d_pre;
        return hidden.w().transpose() * d_pre;
    }

    void zero() {
        hidden.zero();
        output.zero();
    }

    // Parameter blocks in serialization order.
    std::vector<std::span<double>> blocks() {
        return {hidden.weight, hidden.bias, output.weight, output.bias};
    }
    std::vector<std::span<const double>> blocks() const {
        return {hidden.weight, hidden.bias, output.weight, output.bias};
    }
};

// Hidden layer: Kaiming-uniform weights, PyTorch-style bias. Output layer:
// small uniform weights and zero bias.
template <typename Rng>
void init_mlp(TwoLayerMLP& mlp, Rng& rng, double output_weight_scale = 0.01) {
    const double fan_in = mlp.hidden.cols;
    std::uniform_real_distribution<double> w1(-std::sqrt(6.0 / fan_in), std::sqrt(6.0 / fan_in));
    std::uniform_real_distribution<double> b1(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
    for (double& v : mlp.hidden.weight) v = w1(rng);
    for (double& v : mlp.hidden.bias) v = b1(rng);
    std::uniform_real_distribution<double> w2(-output_weight_scale, output_weight_scale);
    for (double& v : mlp.output.weight) v = w2(rng);
    std::fill(mlp.output.bias.begin(), mlp.output.bias.end(), 0.0);
}

}  // namespace a4dg
