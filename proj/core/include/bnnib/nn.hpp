#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bnnib/numerics.hpp"

namespace bnnib {

// ---------------------------------------------------------------------------
// Scalar activations and their backward passes.
//
// The three binary kinds share the sign forward pass and differ only in the
// surrogate used for its derivative. The full-precision kinds use their true
// derivative.
// ---------------------------------------------------------------------------

/// -1 for x <= 0, +1 otherwise.
double sign_forward(double x) noexcept;
/// 1 on [-1, 1] (bounds included), 0 elsewhere.
double ste_backward(double x) noexcept;
/// 2 - 2|x| on [-1, 1], 0 elsewhere.
double approx_sign_backward(double x) noexcept;
/// beta (2 - beta x tanh(beta x / 2)) / (1 + cosh(beta x)). Negative for |x| past ~2.4/beta.
double swish_sign_backward(double x, double beta) noexcept;

double tanh_forward(double x) noexcept;
/// sech^2(x)
double tanh_backward(double x) noexcept;
double hard_tanh_forward(double x) noexcept;
/// 1 on the open interval (-1, 1), 0 elsewhere.
double hard_tanh_backward(double x) noexcept;
/// 2 sigma(beta x) (1 + beta x (1 - sigma(beta x))) - 1. Its derivative is swish_sign_backward.
double sign_swish_forward(double x, double beta) noexcept;

enum class Activation { SteSign, ApproxSign, SwishSign, Tanh, HardTanh, SignSwish, Identity };

struct ActivationKind {
    static constexpr double kDefaultBeta = 5.0;

    Activation variant = Activation::Identity;
    double beta = kDefaultBeta;

    ActivationKind() = default;
    ActivationKind(Activation v, double b = kDefaultBeta);

    /// Forward pass is sign(x), so the codomain is {-1, +1}.
    bool is_binary() const noexcept;
    bool uses_beta() const noexcept;

    double forward(double x) const noexcept;
    double backward(double x) const noexcept;

    std::string name() const;
    /// Accepts ste_sign, approx_sign, swish_sign, tanh, hard_tanh, sign_swish, identity.
    static ActivationKind parse(std::string_view name, double beta = kDefaultBeta);

    friend bool operator==(const ActivationKind&, const ActivationKind&) = default;
};

/// Global extrema of sign_swish_forward, located once by a dense 1-D grid search.
struct Interval {
    double lo;
    double hi;
};
Interval sign_swish_range(double beta);

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

enum class Mode { Train, Eval };

/// Batch normalization with centering and variance scaling only; there are no
/// learnable scale or shift parameters.
struct BatchNormState {
    static constexpr double kDefaultMomentum = 0.9;
    static constexpr double kDefaultEpsilon = 1e-5;

    explicit BatchNormState(std::size_t features, double momentum = kDefaultMomentum,
                            double epsilon = kDefaultEpsilon);

    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum;
    double epsilon;

    // Train-mode forward cache.
    struct Cache {
        Matrix normalized;
        std::vector<double> inv_std;
    };
    std::optional<Cache> cache;
};

/// Train mode normalizes with batch statistics (biased variance) and folds them
/// into the running statistics as running = momentum * running + (1 - momentum) * batch.
/// Eval mode uses the running statistics. A train-mode batch of one is rejected.
Matrix batchnorm_forward(BatchNormState& state, const Matrix& input, Mode mode);
Matrix batchnorm_backward(const BatchNormState& state, const Matrix& upstream);

/// Element-wise sign with 0 mapped to -1.
Matrix binarize_weights(const Matrix& latent);

struct DenseLayer {
    DenseLayer(Matrix latent, bool binarize, ActivationKind act, std::optional<BatchNormState> bn);

    std::size_t fan_in() const noexcept { return latent_weights.rows(); }
    std::size_t fan_out() const noexcept { return latent_weights.cols(); }

    /// The weights the forward pass multiplies by.
    Matrix effective_weights() const;

    Matrix latent_weights;
    bool binarize;
    ActivationKind activation;
    std::optional<BatchNormState> batchnorm;

    std::optional<Matrix> cached_input;
};

struct DenseGrads {
    std::optional<Matrix> input_grad;
    /// Gradient w.r.t. the effective weights, applied to the latent weights unchanged.
    Matrix weight_grad;
};

/// input x effective_weights; remembers the input for the backward pass.
Matrix dense_forward(DenseLayer& layer, const Matrix& input);
/// Set want_input_grad to false for the first layer, whose input gradient is never used.
DenseGrads dense_backward(const DenseLayer& layer, const Matrix& upstream, bool want_input_grad = true);

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

enum class TapKind { PostBn, PostAct, Softmax };
std::string_view tap_kind_name(TapKind kind) noexcept;
TapKind parse_tap_kind(std::string_view name);

/// Values recorded by a forward pass: per hidden layer the post-batchnorm and
/// post-activation matrices, and the head's softmax output.
struct Tape {
    std::vector<Matrix> post_bn;
    std::vector<Matrix> post_act;
    std::optional<Matrix> probs;
};

struct NetworkSpec {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_widths;
    std::size_t num_classes = 0;
    ActivationKind activation;
    bool binary = false;
    bool batchnorm = true;
};

/// Hidden layers run dense -> batchnorm -> activation; the head is a dense
/// layer (binarized for binary networks, no batchnorm) followed by softmax.
class Network {
public:
    Network(const NetworkSpec& spec, RngStream& rng);
    Network(std::vector<DenseLayer> hidden, DenseLayer head);

    const std::vector<DenseLayer>& hidden() const noexcept { return hidden_; }
    std::vector<DenseLayer>& hidden() noexcept { return hidden_; }
    const DenseLayer& head() const noexcept { return head_; }
    DenseLayer& head() noexcept { return head_; }

    /// Hidden layers followed by the head.
    std::size_t layer_count() const noexcept { return hidden_.size() + 1; }
    DenseLayer& layer(std::size_t i) noexcept { return i < hidden_.size() ? hidden_[i] : head_; }
    const DenseLayer& layer(std::size_t i) const noexcept { return i < hidden_.size() ? hidden_[i] : head_; }

    std::size_t input_dim() const noexcept { return hidden_.empty() ? head_.fan_in() : hidden_.front().fan_in(); }
    std::size_t num_classes() const noexcept { return head_.fan_out(); }

    const std::optional<Tape>& tape() const noexcept { return tape_; }
    /// Copy without any forward caches, for read-only evaluation.
    Network frozen() const;

    friend Matrix network_forward(Network& net, const Matrix& batch, Mode mode, bool record_tape);
    friend std::vector<Matrix> network_backward(Network& net, const Matrix& probs, std::span<const int> labels);

private:
    void check_chain() const;

    std::vector<DenseLayer> hidden_;
    DenseLayer head_;
    std::optional<Tape> tape_;
    std::optional<Matrix> last_logits_;
};

/// Softmax probabilities, one row per sample. Layer caches needed by
/// network_backward are always kept in train mode; record_tape additionally
/// keeps the tap values.
Matrix network_forward(Network& net, const Matrix& batch, Mode mode, bool record_tape);

/// Gradients of the mean cross-entropy w.r.t. every layer's latent weights,
/// hidden layers first and the head last.
std::vector<Matrix> network_backward(Network& net, const Matrix& probs, std::span<const int> labels);

Matrix softmax_rows(const Matrix& logits);
/// Mean of -ln p[label]; probabilities are floored at the smallest normal double.
double cross_entropy(const Matrix& probs, std::span<const int> labels);
double accuracy(const Matrix& probs, std::span<const int> labels);

}  // namespace bnnib
