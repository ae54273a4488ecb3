#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bnnib/infoplane.hpp"
#include "bnnib/numerics.hpp"

namespace bnnib {

/// Features, labels and a fixed train/validation partition.
struct Dataset {
    std::string name;
    Matrix features{1, 1};
    std::vector<int> labels;
    std::vector<std::int64_t> sample_ids;
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> val_idx;
    std::size_t num_classes = 0;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t dim() const noexcept { return features.cols(); }
    const std::vector<std::size_t>& indices(Split s) const noexcept { return s == Split::Train ? train_idx : val_idx; }

    /// Throws FormatError when any structural invariant is broken.
    void validate() const;

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Rows of one split, materialized for batching and estimation.
struct SplitData {
    Matrix features{1, 1};
    std::vector<int> labels;
    std::vector<std::int64_t> sample_ids;

    SplitView view() const { return {features, labels, sample_ids}; }
};
SplitData materialize(const Dataset& ds, Split split);

/// Seeded partition of 0..n-1 into n_train training and n - n_train validation
/// indices, both returned in ascending order.
void seeded_split(std::size_t n, std::size_t n_train, std::uint64_t seed, std::vector<std::size_t>& train,
                  std::vector<std::size_t>& val);

inline constexpr std::size_t kSyntheticSamples = 4096;
inline constexpr std::size_t kSyntheticDim = 12;
inline constexpr std::size_t kSyntheticTrain = 3276;

/// All 4096 binary 12-tuples (row i holds the bits of i, most significant
/// first). Label 1 iff w.x exceeds the median score over all rows, with w
/// uniform on [-1, 1]^12 drawn from label_seed. 3276/820 seeded split.
Dataset gen_synthetic(std::uint64_t label_seed, std::uint64_t split_seed);

/// Reads an IDX image/label pair. Pixels map to v / 127.5 - 1. Every sample
/// lands in the training split.
Dataset load_mnist_idx(const std::filesystem::path& image_path, const std::filesystem::path& label_path);
/// train-* files become the training split, t10k-* files the validation split.
Dataset load_mnist_dir(const std::filesystem::path& dir);
/// Seeded subset keeping n_train training and n_val validation samples.
Dataset subset(const Dataset& ds, std::size_t n_train, std::size_t n_val, std::uint64_t seed);

inline constexpr std::size_t kTicTacToeBoards = 958;
inline constexpr std::size_t kTicTacToeTrain = 766;

using Board = std::array<int, 9>;

/// Every distinct terminal board reachable by legal play with x moving first,
/// x = +1, o = -1, blank = 0; label 1 iff x holds three in a row. Seeded 766/192 split.
Dataset gen_tictactoe(std::uint64_t split_seed);
/// Reads the public endgame CSV: nine cells from {x, o, b} then positive/negative.
Dataset load_tictactoe_csv(const std::filesystem::path& path, std::uint64_t split_seed);

/// Labels permuted uniformly over train and validation jointly; features untouched.
Dataset shuffle_labels(const Dataset& ds, std::uint64_t seed);

/// Binary dataset container; the layout is described in docs/formats.md.
void write_dataset_cache(const Dataset& ds, const std::filesystem::path& path);
Dataset read_dataset_cache(const std::filesystem::path& path);

}  // namespace bnnib
