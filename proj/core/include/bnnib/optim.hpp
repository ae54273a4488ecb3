#pragma once

#include <cstdint>
#include <vector>

#include "bnnib/nn.hpp"
#include "bnnib/numerics.hpp"

namespace bnnib {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Moments for one weight matrix.
struct AdamState {
    AdamState(std::size_t rows, std::size_t cols, AdamConfig config);

    Matrix m;
    Matrix v;
    std::uint64_t t = 0;
    AdamConfig config;
};

/// One bias-corrected Adam update of weights in place. With clip set, every
/// weight is clamped to [-1, 1] afterwards.
void adam_step(AdamState& state, Matrix& weights, const Matrix& grads, bool clip);

/// Adam over every layer of a network. Only binarized layers are clipped.
class AdamOptimizer {
public:
    AdamOptimizer(const Network& net, AdamConfig config);

    void step(Network& net, const std::vector<Matrix>& grads);

    const std::vector<AdamState>& states() const noexcept { return states_; }

private:
    std::vector<AdamState> states_;
};

}  // namespace bnnib
