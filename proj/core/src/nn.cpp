#include "bnnib/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <string>

namespace bnnib {

double sign_forward(double x) noexcept { return x <= 0.0 ? -1.0 : 1.0; }

double ste_backward(double x) noexcept { return (x >= -1.0 && x <= 1.0) ? 1.0 : 0.0; }

double approx_sign_backward(double x) noexcept {
    return (x >= -1.0 && x <= 1.0) ? 2.0 - 2.0 * std::abs(x) : 0.0;
}

double swish_sign_backward(double x, double beta) noexcept {
    const double bx = beta * x;
    const double denom = 1.0 + std::cosh(bx);
    if (!std::isfinite(denom)) return 0.0;
    return beta * (2.0 - bx * std::tanh(bx / 2.0)) / denom;
}

double tanh_forward(double x) noexcept { return std::tanh(x); }

double tanh_backward(double x) noexcept {
    const double c = std::cosh(x);
    return std::isfinite(c) ? 1.0 / (c * c) : 0.0;
}

double hard_tanh_forward(double x) noexcept { return std::clamp(x, -1.0, 1.0); }

double hard_tanh_backward(double x) noexcept { return (x > -1.0 && x < 1.0) ? 1.0 : 0.0; }

double sign_swish_forward(double x, double beta) noexcept {
    const double bx = beta * x;
    const double s = 1.0 / (1.0 + std::exp(-bx));
    return 2.0 * s * (1.0 + bx * (1.0 - s)) - 1.0;
}

ActivationKind::ActivationKind(Activation v, double b) : variant(v), beta(b) {
    if (!(beta > 0.0) || !std::isfinite(beta)) throw ArgumentError("activation beta must be positive and finite");
}

bool ActivationKind::is_binary() const noexcept {
    return variant == Activation::SteSign || variant == Activation::ApproxSign || variant == Activation::SwishSign;
}

bool ActivationKind::uses_beta() const noexcept {
    return variant == Activation::SwishSign || variant == Activation::SignSwish;
}

double ActivationKind::forward(double x) const noexcept {
    switch (variant) {
        case Activation::SteSign:
        case Activation::ApproxSign:
        case Activation::SwishSign: return sign_forward(x);
        case Activation::Tanh: return tanh_forward(x);
        case Activation::HardTanh: return hard_tanh_forward(x);
        case Activation::SignSwish: return sign_swish_forward(x, beta);
        case Activation::Identity: return x;
    }
    return x;
}

double ActivationKind::backward(double x) const noexcept {
    switch (variant) {
        case Activation::SteSign: return ste_backward(x);
        case Activation::ApproxSign: return approx_sign_backward(x);
        case Activation::SwishSign:
        case Activation::SignSwish: return swish_sign_backward(x, beta);
        case Activation::Tanh: return tanh_backward(x);
        case Activation::HardTanh: return hard_tanh_backward(x);
        case Activation::Identity: return 1.0;
    }
    return 1.0;
}

std::string ActivationKind::name() const {
    switch (variant) {
        case Activation::SteSign: return "ste_sign";
        case Activation::ApproxSign: return "approx_sign";
        case Activation::SwishSign: return "swish_sign";
        case Activation::Tanh: return "tanh";
        case Activation::HardTanh: return "hard_tanh";
        case Activation::SignSwish: return "sign_swish";
        case Activation::Identity: return "identity";
    }
    return "identity";
}

ActivationKind ActivationKind::parse(std::string_view name, double beta) {
    static const std::map<std::string_view, Activation> table{
        {"ste_sign", Activation::SteSign},   {"approx_sign", Activation::ApproxSign},
        {"swish_sign", Activation::SwishSign}, {"tanh", Activation::Tanh},
        {"hard_tanh", Activation::HardTanh}, {"sign_swish", Activation::SignSwish},
        {"identity", Activation::Identity},
    };
    const auto it = table.find(name);
    if (it == table.end()) throw ArgumentError("unknown activation '" + std::string(name) + "'");
    return ActivationKind(it->second, beta);
}

Interval sign_swish_range(double beta) {
    static std::mutex mu;
    static std::map<double, Interval> memo;
    std::lock_guard lock(mu);
    if (auto it = memo.find(beta); it != memo.end()) return it->second;

    // The extrema sit at |x| ~ 2.4 / beta; the grid spans well past them.
    constexpr int kSteps = 400000;
    const double half_width = 20.0 / beta;
    Interval r{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (int i = 0; i <= kSteps; ++i) {
        const double x = -half_width + 2.0 * half_width * i / kSteps;
        const double y = sign_swish_forward(x, beta);
        r.lo = std::min(r.lo, y);
        r.hi = std::max(r.hi, y);
    }
    memo.emplace(beta, r);
    return r;
}

// ---------------------------------------------------------------------------

BatchNormState::BatchNormState(std::size_t features, double momentum_, double epsilon_)
    : running_mean(features, 0.0), running_var(features, 1.0), momentum(momentum_), epsilon(epsilon_) {
    if (features == 0) throw ShapeError("batchnorm needs at least one feature");
    if (!(momentum > 0.0 && momentum < 1.0)) throw ArgumentError("batchnorm momentum must lie in (0, 1)");
    if (!(epsilon > 0.0)) throw ArgumentError("batchnorm epsilon must be positive");
}

Matrix batchnorm_forward(BatchNormState& state, const Matrix& input, Mode mode) {
    const std::size_t n = input.rows(), d = input.cols();
    if (d != state.running_mean.size()) {
        throw ShapeError("batchnorm: expected " + std::to_string(state.running_mean.size()) + " features, got " +
                         std::to_string(d));
    }
    Matrix out(n, d);
    if (mode == Mode::Eval) {
        std::vector<double> inv(d);
        for (std::size_t j = 0; j < d; ++j) inv[j] = 1.0 / std::sqrt(state.running_var[j] + state.epsilon);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) out(i, j) = (input(i, j) - state.running_mean[j]) * inv[j];
        }
        state.cache.reset();
        return out;
    }

    if (n < 2) throw ArgumentError("batchnorm: train mode needs a batch of at least 2");
    std::vector<double> mean(d, 0.0), var(d, 0.0), inv_std(d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) mean[j] += input(i, j);
    }
    for (double& m : mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            const double c = input(i, j) - mean[j];
            var[j] += c * c;
        }
    }
    for (std::size_t j = 0; j < d; ++j) {
        var[j] /= static_cast<double>(n);
        inv_std[j] = 1.0 / std::sqrt(var[j] + state.epsilon);
        state.running_mean[j] = state.momentum * state.running_mean[j] + (1.0 - state.momentum) * mean[j];
        state.running_var[j] = state.momentum * state.running_var[j] + (1.0 - state.momentum) * var[j];
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) out(i, j) = (input(i, j) - mean[j]) * inv_std[j];
    }
    state.cache = BatchNormState::Cache{out, std::move(inv_std)};
    return out;
}

Matrix batchnorm_backward(const BatchNormState& state, const Matrix& upstream) {
    if (!state.cache) throw StateError("batchnorm_backward: no train-mode forward pass recorded");
    const Matrix& xhat = state.cache->normalized;
    if (upstream.rows() != xhat.rows() || upstream.cols() != xhat.cols()) {
        throw ShapeError("batchnorm_backward: upstream gradient shape does not match the cached batch");
    }
    const std::size_t n = xhat.rows(), d = xhat.cols();
    std::vector<double> mean_g(d, 0.0), mean_gx(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            mean_g[j] += upstream(i, j);
            mean_gx[j] += upstream(i, j) * xhat(i, j);
        }
    }
    for (std::size_t j = 0; j < d; ++j) {
        mean_g[j] /= static_cast<double>(n);
        mean_gx[j] /= static_cast<double>(n);
    }
    Matrix grad(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            grad(i, j) = state.cache->inv_std[j] * (upstream(i, j) - mean_g[j] - xhat(i, j) * mean_gx[j]);
        }
    }
    return grad;
}

Matrix binarize_weights(const Matrix& latent) {
    Matrix out = latent;
    for (double& v : out.data()) v = sign_forward(v);
    return out;
}

DenseLayer::DenseLayer(Matrix latent, bool binarize_, ActivationKind act, std::optional<BatchNormState> bn)
    : latent_weights(std::move(latent)), binarize(binarize_), activation(act), batchnorm(std::move(bn)) {
    if (batchnorm && batchnorm->running_mean.size() != fan_out()) {
        throw ShapeError("batchnorm width does not match the layer's fan_out");
    }
}

Matrix DenseLayer::effective_weights() const {
    return binarize ? binarize_weights(latent_weights) : latent_weights;
}

namespace {

Matrix dense_apply(const DenseLayer& layer, const Matrix& input) {
    if (input.cols() != layer.fan_in()) {
        throw ShapeError("dense layer expects " + std::to_string(layer.fan_in()) + " inputs, got " +
                         std::to_string(input.cols()));
    }
    return layer.binarize ? matmul(input, binarize_weights(layer.latent_weights)) : matmul(input, layer.latent_weights);
}

Matrix apply_activation(const ActivationKind& act, Matrix m) {
    for (double& v : m.data()) v = act.forward(v);
    return m;
}

}  // namespace

Matrix dense_forward(DenseLayer& layer, const Matrix& input) {
    Matrix out = dense_apply(layer, input);
    layer.cached_input = input;
    return out;
}

DenseGrads dense_backward(const DenseLayer& layer, const Matrix& upstream, bool want_input_grad) {
    if (!layer.cached_input) throw StateError("dense_backward: no forward pass recorded");
    if (upstream.rows() != layer.cached_input->rows() || upstream.cols() != layer.fan_out()) {
        throw ShapeError("dense_backward: upstream gradient shape does not match the cached forward pass");
    }
    DenseGrads g{std::nullopt, matmul_tn(*layer.cached_input, upstream)};
    if (want_input_grad) g.input_grad = matmul_nt(upstream, layer.effective_weights());
    return g;
}

// ---------------------------------------------------------------------------

std::string_view tap_kind_name(TapKind kind) noexcept {
    switch (kind) {
        case TapKind::PostBn: return "post_bn";
        case TapKind::PostAct: return "post_act";
        case TapKind::Softmax: return "softmax";
    }
    return "post_act";
}

TapKind parse_tap_kind(std::string_view name) {
    if (name == "post_bn") return TapKind::PostBn;
    if (name == "post_act") return TapKind::PostAct;
    if (name == "softmax") return TapKind::Softmax;
    throw ArgumentError("unknown tap kind '" + std::string(name) + "'");
}

Network::Network(const NetworkSpec& spec, RngStream& rng)
    : head_(Matrix(1, 1), false, ActivationKind(), std::nullopt) {
    if (spec.input_dim == 0) throw ShapeError("network input dimension must be positive");
    if (spec.num_classes < 2) throw ShapeError("network needs at least two classes");
    std::size_t prev = spec.input_dim;
    for (std::size_t i = 0; i < spec.hidden_widths.size(); ++i) {
        const std::size_t w = spec.hidden_widths[i];
        if (w == 0) throw ShapeError("hidden layer widths must be positive");
        auto layer_rng = rng.split(i);
        std::optional<BatchNormState> bn;
        if (spec.batchnorm) bn.emplace(w);
        hidden_.emplace_back(glorot_init(layer_rng, prev, w), spec.binary, spec.activation, std::move(bn));
        prev = w;
    }
    auto head_rng = rng.split(spec.hidden_widths.size());
    head_ = DenseLayer(glorot_init(head_rng, prev, spec.num_classes), spec.binary, ActivationKind(), std::nullopt);
}

Network::Network(std::vector<DenseLayer> hidden, DenseLayer head) : hidden_(std::move(hidden)), head_(std::move(head)) {
    check_chain();
}

void Network::check_chain() const {
    for (std::size_t i = 0; i + 1 < layer_count(); ++i) {
        if (layer(i).fan_out() != layer(i + 1).fan_in()) {
            throw ShapeError("layer " + std::to_string(i) + " fan_out " + std::to_string(layer(i).fan_out()) +
                             " does not match layer " + std::to_string(i + 1) + " fan_in " +
                             std::to_string(layer(i + 1).fan_in()));
        }
    }
    if (head_.fan_out() < 2) throw ShapeError("network needs at least two classes");
}

Network Network::frozen() const {
    Network copy = *this;
    copy.tape_.reset();
    copy.last_logits_.reset();
    for (std::size_t i = 0; i < copy.layer_count(); ++i) {
        auto& l = copy.layer(i);
        l.cached_input.reset();
        if (l.batchnorm) l.batchnorm->cache.reset();
    }
    return copy;
}

Matrix softmax_rows(const Matrix& logits) {
    Matrix p(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        const auto in = logits.row(i);
        auto out = p.row(i);
        const double mx = *std::max_element(in.begin(), in.end());
        double sum = 0.0;
        for (std::size_t j = 0; j < in.size(); ++j) {
            out[j] = std::exp(in[j] - mx);
            sum += out[j];
        }
        for (double& v : out) v /= sum;
    }
    return p;
}

Matrix network_forward(Network& net, const Matrix& batch, Mode mode, bool record_tape) {
    if (batch.cols() != net.input_dim()) {
        throw ShapeError("network expects " + std::to_string(net.input_dim()) + " input features, got " +
                         std::to_string(batch.cols()));
    }
    const bool train = mode == Mode::Train;
    std::optional<Tape> tape;
    if (record_tape || train) tape.emplace();

    Matrix x = batch;
    for (auto& layer : net.hidden_) {
        Matrix z = train ? dense_forward(layer, x) : dense_apply(layer, x);
        if (!train) layer.cached_input.reset();
        if (layer.batchnorm) z = batchnorm_forward(*layer.batchnorm, z, mode);
        x = apply_activation(layer.activation, z);
        if (tape) {
            tape->post_bn.push_back(std::move(z));
            tape->post_act.push_back(x);
        }
    }
    Matrix logits = train ? dense_forward(net.head_, x) : dense_apply(net.head_, x);
    if (!train) net.head_.cached_input.reset();
    Matrix probs = softmax_rows(logits);
    if (tape) tape->probs = probs;

    net.tape_ = std::move(tape);
    if (train) {
        net.last_logits_ = std::move(logits);
    } else {
        net.last_logits_.reset();
    }
    return probs;
}

std::vector<Matrix> network_backward(Network& net, const Matrix& probs, std::span<const int> labels) {
    if (!net.tape_ || !net.last_logits_ || !net.head_.cached_input) {
        throw StateError("network_backward: no train-mode forward pass recorded");
    }
    const std::size_t n = probs.rows(), classes = probs.cols();
    if (labels.size() != n) throw ShapeError("network_backward: label count does not match batch size");
    if (classes != net.num_classes()) throw ShapeError("network_backward: probability width does not match class count");

    Matrix g = probs;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= classes) throw ArgumentError("label out of range");
        g(i, static_cast<std::size_t>(y)) -= 1.0;
        for (double& v : g.row(i)) v *= inv_n;
    }

    std::vector<Matrix> grads;
    grads.reserve(net.layer_count());
    auto head = dense_backward(net.head_, g, !net.hidden_.empty());
    std::vector<Matrix> reversed{std::move(head.weight_grad)};
    if (head.input_grad) g = std::move(*head.input_grad);

    for (std::size_t l = net.hidden_.size(); l-- > 0;) {
        auto& layer = net.hidden_[l];
        const Matrix& act_input = net.tape_->post_bn[l];
        for (std::size_t k = 0; k < g.size(); ++k) g.data()[k] *= layer.activation.backward(act_input.data()[k]);
        if (layer.batchnorm) g = batchnorm_backward(*layer.batchnorm, g);
        auto lg = dense_backward(layer, g, l > 0);
        reversed.push_back(std::move(lg.weight_grad));
        if (lg.input_grad) g = std::move(*lg.input_grad);
    }
    grads.assign(std::make_move_iterator(reversed.rbegin()), std::make_move_iterator(reversed.rend()));
    return grads;
}

double cross_entropy(const Matrix& probs, std::span<const int> labels) {
    if (labels.size() != probs.rows()) throw ShapeError("cross_entropy: label count does not match rows");
    double total = 0.0;
    for (std::size_t i = 0; i < probs.rows(); ++i) {
        const auto y = static_cast<std::size_t>(labels[i]);
        if (y >= probs.cols()) throw ArgumentError("label out of range");
        total -= std::log(std::max(probs(i, y), std::numeric_limits<double>::min()));
    }
    return total / static_cast<double>(probs.rows());
}

double accuracy(const Matrix& probs, std::span<const int> labels) {
    if (labels.size() != probs.rows()) throw ShapeError("accuracy: label count does not match rows");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < probs.rows(); ++i) {
        const auto r = probs.row(i);
        const auto best = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
        if (best == labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(probs.rows());
}

}  // namespace bnnib
