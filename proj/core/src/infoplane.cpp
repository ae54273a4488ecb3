#include "bnnib/infoplane.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>

namespace bnnib {

namespace {

struct TupleHash {
    std::size_t operator()(const std::vector<std::uint16_t>& v) const noexcept {
        std::uint64_t h = 0xCBF29CE484222325ULL;
        for (std::uint16_t x : v) {
            h ^= x;
            h *= 0x100000001B3ULL;
        }
        return static_cast<std::size_t>(h);
    }
};

// Groups samples by key and returns the per-group symbol histograms.
template <typename Key>
std::vector<std::vector<std::size_t>> conditional_histograms(std::span<const std::uint32_t> symbols,
                                                             std::span<const Key> keys) {
    std::unordered_map<Key, std::size_t> group_of;
    std::vector<std::unordered_map<std::uint32_t, std::size_t>> groups;
    std::vector<std::vector<std::uint32_t>> order;  // symbol first-appearance order per group
    for (std::size_t i = 0; i < symbols.size(); ++i) {
        auto [it, inserted] = group_of.try_emplace(keys[i], groups.size());
        if (inserted) {
            groups.emplace_back();
            order.emplace_back();
        }
        auto& g = groups[it->second];
        auto [sit, fresh] = g.try_emplace(symbols[i], 0);
        if (fresh) order[it->second].push_back(symbols[i]);
        ++sit->second;
    }
    std::vector<std::vector<std::size_t>> out(groups.size());
    for (std::size_t k = 0; k < groups.size(); ++k) {
        for (std::uint32_t s : order[k]) out[k].push_back(groups[k].at(s));
    }
    return out;
}

std::vector<std::size_t> symbol_histogram(std::span<const std::uint32_t> symbols) {
    std::vector<std::size_t> counts;
    for (std::uint32_t s : symbols) {
        if (s >= counts.size()) counts.resize(s + 1, 0);
        ++counts[s];
    }
    return counts;
}

template <typename Key>
double conditional_mi(std::span<const std::uint32_t> symbols, std::span<const Key> keys) {
    if (symbols.size() != keys.size()) throw ShapeError("mutual information: symbol and key counts differ");
    if (symbols.empty()) throw ArgumentError("mutual information of an empty sample");
    const double n = static_cast<double>(symbols.size());
    const auto marginal = symbol_histogram(symbols);
    const double h_t = entropy_bits(marginal);
    double h_cond = 0.0;
    for (const auto& hist : conditional_histograms(symbols, keys)) {
        if (hist.size() < 2) continue;  // a single symbol has zero entropy
        std::size_t group_n = 0;
        for (std::size_t c : hist) group_n += c;
        h_cond += static_cast<double>(group_n) / n * entropy_bits(hist);
    }
    return std::max(0.0, h_t - h_cond);
}

}  // namespace

void BinningSpec::validate() const {
    if (bins < 2) throw ArgumentError("binning needs at least 2 bins");
    if (bins > 65535) throw ArgumentError("binning supports at most 65535 bins");
    if (!(range.lo < range.hi)) throw ArgumentError("binning range lower bound must be below the upper bound");
}

BinningSpec BinningPolicy::spec_for(TapKind tap, const ActivationKind& activation) const {
    BinningSpec spec;
    spec.bins = bins;
    switch (tap) {
        case TapKind::Softmax: spec.range = {0.0, 1.0}; break;
        case TapKind::PostBn: spec.range = {-post_bn_half_width, post_bn_half_width}; break;
        case TapKind::PostAct:
            switch (activation.variant) {
                case Activation::SignSwish: spec.range = sign_swish_range(activation.beta); break;
                case Activation::Identity: spec.range = {-post_bn_half_width, post_bn_half_width}; break;
                default: spec.range = {-1.0, 1.0}; break;
            }
            break;
    }
    spec.validate();
    return spec;
}

std::size_t bin_index(double value, const BinningSpec& spec) noexcept {
    const double v = std::clamp(value, spec.range.lo, spec.range.hi);
    const double scaled = (v - spec.range.lo) / (spec.range.hi - spec.range.lo) * static_cast<double>(spec.bins);
    const auto idx = static_cast<std::size_t>(std::floor(scaled));
    return std::min(idx, spec.bins - 1);
}

std::vector<std::uint32_t> discretize(const Matrix& tap_values, const BinningSpec& spec) {
    spec.validate();
    std::unordered_map<std::vector<std::uint16_t>, std::uint32_t, TupleHash> ids;
    std::vector<std::uint32_t> symbols(tap_values.rows());
    std::vector<std::uint16_t> key(tap_values.cols());
    for (std::size_t r = 0; r < tap_values.rows(); ++r) {
        const auto row = tap_values.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) key[c] = static_cast<std::uint16_t>(bin_index(row[c], spec));
        auto [it, inserted] = ids.try_emplace(key, static_cast<std::uint32_t>(ids.size()));
        symbols[r] = it->second;
    }
    return symbols;
}

double entropy_bits(std::span<const std::size_t> counts) {
    std::size_t total = 0;
    for (std::size_t c : counts) total += c;
    if (total == 0) throw ArgumentError("entropy of an empty histogram");
    const double n = static_cast<double>(total);
    double h = 0.0;
    for (std::size_t c : counts) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / n;
        h -= p * std::log2(p);
    }
    return h;
}

double mi_with_input(std::span<const std::uint32_t> symbols, std::span<const std::int64_t> sample_ids) {
    return conditional_mi(symbols, sample_ids);
}

double mi_with_labels(std::span<const std::uint32_t> symbols, std::span<const int> labels) {
    return conditional_mi(symbols, labels);
}

std::string_view split_name(Split s) noexcept { return s == Split::Train ? "train" : "test"; }

Split parse_split(std::string_view name) {
    if (name == "train") return Split::Train;
    if (name == "test") return Split::Test;
    throw ArgumentError("unknown split '" + std::string(name) + "'");
}

std::vector<TapId> network_taps(const Network& net) {
    std::vector<TapId> taps;
    for (std::size_t l = 0; l < net.hidden().size(); ++l) {
        if (net.hidden()[l].batchnorm) taps.push_back({l, TapKind::PostBn});
        taps.push_back({l, TapKind::PostAct});
    }
    taps.push_back({net.hidden().size(), TapKind::Softmax});
    return taps;
}

std::vector<MISnapshot> layer_mi_snapshot(const Network& net, const SplitView& data, const BinningPolicy& policy,
                                          std::size_t epoch, Split split) {
    if (data.labels.size() != data.features.rows() || data.sample_ids.size() != data.features.rows()) {
        throw ShapeError("layer_mi_snapshot: features, labels and sample ids must have equal lengths");
    }
    if (data.labels.empty()) throw ArgumentError("layer_mi_snapshot: empty split");

    Network copy = net.frozen();
    network_forward(copy, data.features, Mode::Eval, true);
    const Tape& tape = *copy.tape();

    std::vector<MISnapshot> out;
    for (const TapId& tap : network_taps(copy)) {
        const Matrix* values = nullptr;
        ActivationKind act;
        switch (tap.kind) {
            case TapKind::PostBn: values = &tape.post_bn[tap.layer]; break;
            case TapKind::PostAct:
                values = &tape.post_act[tap.layer];
                act = copy.hidden()[tap.layer].activation;
                break;
            case TapKind::Softmax: values = &*tape.probs; break;
        }
        const auto symbols = discretize(*values, policy.spec_for(tap.kind, act));
        MISnapshot s;
        s.epoch = epoch;
        s.tap = tap;
        s.split = split;
        s.i_tx_bits = mi_with_input(symbols, data.sample_ids);
        s.i_ty_bits = mi_with_labels(symbols, data.labels);
        out.push_back(s);
    }
    return out;
}

}  // namespace bnnib
