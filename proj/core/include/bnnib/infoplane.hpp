#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "bnnib/nn.hpp"
#include "bnnib/numerics.hpp"

namespace bnnib {

/// Equal-width bins over a fixed range. Values outside the range are clamped.
struct BinningSpec {
    std::size_t bins = 30;
    Interval range{-1.0, 1.0};

    void validate() const;
};

/// Fixed per-tap bin ranges, so binned symbols stay comparable across epochs.
struct BinningPolicy {
    static constexpr std::size_t kDefaultBins = 30;
    /// Post-batchnorm values are standardized; they are binned on [-half_width, half_width].
    static constexpr double kDefaultPostBnHalfWidth = 3.0;

    std::size_t bins = kDefaultBins;
    double post_bn_half_width = kDefaultPostBnHalfWidth;

    /// [-1, 1] for binary, tanh and hard-tanh activations; the numerically located
    /// codomain for sign-swish; [0, 1] for softmax.
    BinningSpec spec_for(TapKind tap, const ActivationKind& activation) const;
};

/// Bin index of a single value: floor((v - lo) / (hi - lo) * bins), with v = hi in the last bin.
std::size_t bin_index(double value, const BinningSpec& spec) noexcept;

/// One symbol id per row: rows whose bin-index tuples are equal share an id.
/// Ids are dense and assigned in order of first appearance.
std::vector<std::uint32_t> discretize(const Matrix& tap_values, const BinningSpec& spec);

/// Shannon entropy in bits of a histogram; zero counts contribute nothing.
double entropy_bits(std::span<const std::size_t> counts);

/// H(T) - sum_x p(x) H(T | X = x) over the empirical joint. Equals H(T) when every sample id is unique.
double mi_with_input(std::span<const std::uint32_t> symbols, std::span<const std::int64_t> sample_ids);
/// Plug-in estimate H(T) - sum_y p(y) H(T | Y = y).
double mi_with_labels(std::span<const std::uint32_t> symbols, std::span<const int> labels);

enum class Split { Train, Test };
std::string_view split_name(Split s) noexcept;
Split parse_split(std::string_view name);

struct TapId {
    /// Hidden-layer index; the softmax tap uses the hidden-layer count.
    std::size_t layer = 0;
    TapKind kind = TapKind::PostAct;

    friend auto operator<=>(const TapId&, const TapId&) = default;
};

struct MISnapshot {
    std::size_t epoch = 0;
    TapId tap;
    Split split = Split::Train;
    double i_tx_bits = 0.0;
    double i_ty_bits = 0.0;

    friend bool operator==(const MISnapshot&, const MISnapshot&) = default;
};

/// Inputs the estimator needs for one split.
struct SplitView {
    const Matrix& features;
    std::span<const int> labels;
    std::span<const std::int64_t> sample_ids;
};

/// Every tap the network exposes, in forward order: (post_bn if present, post_act) per hidden layer, then softmax.
std::vector<TapId> network_taps(const Network& net);

/// One eval-mode forward pass over the split, then I(T;X) and I(T;Y) for every tap.
/// The network is copied; its own state is untouched.
std::vector<MISnapshot> layer_mi_snapshot(const Network& net, const SplitView& data, const BinningPolicy& policy,
                                          std::size_t epoch, Split split);

}  // namespace bnnib
