#include "bnnib/optim.hpp"

#include <algorithm>
#include <cmath>

namespace bnnib {

AdamState::AdamState(std::size_t rows, std::size_t cols, AdamConfig cfg) : m(rows, cols), v(rows, cols), config(cfg) {
    if (!(config.lr > 0.0)) throw ArgumentError("adam learning rate must be positive");
    if (!(config.beta1 >= 0.0 && config.beta1 < 1.0) || !(config.beta2 >= 0.0 && config.beta2 < 1.0)) {
        throw ArgumentError("adam betas must lie in [0, 1)");
    }
}

void adam_step(AdamState& state, Matrix& weights, const Matrix& grads, bool clip) {
    if (weights.rows() != grads.rows() || weights.cols() != grads.cols() || weights.rows() != state.m.rows() ||
        weights.cols() != state.m.cols()) {
        throw ShapeError("adam_step: weight, gradient and moment shapes differ");
    }
    const AdamConfig& c = state.config;
    ++state.t;
    const double t = static_cast<double>(state.t);
    const double bias1 = 1.0 - std::pow(c.beta1, t);
    const double bias2 = 1.0 - std::pow(c.beta2, t);

    double* w = weights.data().data();
    const double* g = grads.data().data();
    double* m = state.m.data().data();
    double* v = state.v.data().data();
    const std::size_t n = weights.size();
    const double step = c.lr * std::sqrt(bias2) / bias1;
    const double eps_hat = c.eps * std::sqrt(bias2);
    // Two copies of the loop so the clip test is not inside it.
    const auto update = [&]<bool Clip>() {
        for (std::size_t i = 0; i < n; ++i) {
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
            const double next = w[i] - step * m[i] / (std::sqrt(v[i]) + eps_hat);
            w[i] = Clip ? std::min(1.0, std::max(-1.0, next)) : next;
        }
    };
    if (clip) update.template operator()<true>();
    else update.template operator()<false>();
}

AdamOptimizer::AdamOptimizer(const Network& net, AdamConfig config) {
    states_.reserve(net.layer_count());
    for (std::size_t i = 0; i < net.layer_count(); ++i) {
        const auto& w = net.layer(i).latent_weights;
        states_.emplace_back(w.rows(), w.cols(), config);
    }
}

void AdamOptimizer::step(Network& net, const std::vector<Matrix>& grads) {
    if (grads.size() != states_.size() || net.layer_count() != states_.size()) {
        throw ShapeError("optimizer: gradient list does not match the network's layers");
    }
    for (std::size_t i = 0; i < states_.size(); ++i) {
        auto& layer = net.layer(i);
        adam_step(states_[i], layer.latent_weights, grads[i], layer.binarize);
    }
}

}  // namespace bnnib
