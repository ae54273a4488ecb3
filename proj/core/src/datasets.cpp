#include "bnnib/datasets.hpp"

#include <algorithm>
#include <cctype>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>
#include <sstream>

namespace bnnib {

namespace {

constexpr std::uint64_t kSplitStream = 0x53504C4954ULL;   // "SPLIT"
constexpr std::uint64_t kLabelStream = 0x4C4142454CULL;   // "LABEL"
constexpr std::uint64_t kSubsetStream = 0x5355425345ULL;  // "SUBSE"

std::vector<char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<char>& buf, std::size_t offset, const std::filesystem::path& path) {
    if (offset + 4 > buf.size()) throw FormatError(path.string() + ": truncated IDX header");
    std::uint32_t v = 0;
    for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(buf[offset + i]);
    return v;
}

constexpr std::array<std::array<int, 3>, 8> kLines{{
    {0, 1, 2}, {3, 4, 5}, {6, 7, 8}, {0, 3, 6}, {1, 4, 7}, {2, 5, 8}, {0, 4, 8}, {2, 4, 6},
}};

bool has_line(const Board& b, int player) {
    return std::any_of(kLines.begin(), kLines.end(), [&](const auto& l) {
        return b[l[0]] == player && b[l[1]] == player && b[l[2]] == player;
    });
}

void play_out(Board& board, int to_move, std::set<Board>& terminal) {
    const bool full = std::none_of(board.begin(), board.end(), [](int c) { return c == 0; });
    if (has_line(board, 1) || has_line(board, -1) || full) {
        terminal.insert(board);
        return;
    }
    for (int& cell : board) {
        if (cell != 0) continue;
        cell = to_move;
        play_out(board, -to_move, terminal);
        cell = 0;
    }
}

Dataset boards_to_dataset(std::string name, const std::vector<Board>& boards, const std::vector<int>& labels,
                          std::uint64_t split_seed) {
    Dataset ds;
    ds.name = std::move(name);
    ds.num_classes = 2;
    ds.features = Matrix(boards.size(), 9);
    for (std::size_t i = 0; i < boards.size(); ++i) {
        for (std::size_t c = 0; c < 9; ++c) ds.features(i, c) = boards[i][c];
    }
    ds.labels = labels;
    ds.sample_ids.resize(boards.size());
    std::iota(ds.sample_ids.begin(), ds.sample_ids.end(), 0);
    if (boards.size() != kTicTacToeBoards) {
        throw FormatError("tic-tac-toe data has " + std::to_string(boards.size()) + " boards, expected " +
                          std::to_string(kTicTacToeBoards));
    }
    seeded_split(boards.size(), kTicTacToeTrain, split_seed, ds.train_idx, ds.val_idx);
    return ds;
}

std::string trim(std::string s) {
    const auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
    s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), ws));
    s.erase(std::find_if_not(s.rbegin(), s.rend(), ws).base(), s.end());
    return s;
}

// Little-endian scalar IO for the dataset cache.
template <typename T>
void put(std::ostream& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::array<char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    out.write(bytes.data(), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
    std::array<char, sizeof(T)> bytes;
    if (!in.read(bytes.data(), sizeof(T))) throw FormatError(path.string() + ": truncated dataset cache");
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    T value;
    std::memcpy(&value, bytes.data(), sizeof(T));
    return value;
}

constexpr char kCacheMagic[8] = {'B', 'N', 'N', 'I', 'B', 'D', 'S', '\0'};
constexpr std::uint32_t kCacheVersion = 1;

}  // namespace

void Dataset::validate() const {
    const std::size_t n = labels.size();
    if (features.rows() != n || sample_ids.size() != n) {
        throw FormatError("dataset '" + name + "': features, labels and sample ids differ in length");
    }
    if (num_classes < 2) throw FormatError("dataset '" + name + "': needs at least two classes");
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes) throw FormatError("dataset '" + name + "': label out of range");
    }
    std::set<std::int64_t> ids(sample_ids.begin(), sample_ids.end());
    if (ids.size() != n) throw FormatError("dataset '" + name + "': repeated sample id");
    std::vector<char> seen(n, 0);
    for (const auto* part : {&train_idx, &val_idx}) {
        for (std::size_t i : *part) {
            if (i >= n || seen[i]) throw FormatError("dataset '" + name + "': split indices overlap or are out of range");
            seen[i] = 1;
        }
    }
    if (train_idx.size() + val_idx.size() != n) throw FormatError("dataset '" + name + "': split does not cover every sample");
    if (!features.all_finite()) throw FormatError("dataset '" + name + "': non-finite feature");
}

SplitData materialize(const Dataset& ds, Split split) {
    const auto& idx = ds.indices(split);
    if (idx.empty()) throw ArgumentError("dataset '" + ds.name + "' has an empty " + std::string(split_name(split)) + " split");
    SplitData out;
    out.features = ds.features.gather_rows(idx);
    out.labels.reserve(idx.size());
    out.sample_ids.reserve(idx.size());
    for (std::size_t i : idx) {
        out.labels.push_back(ds.labels[i]);
        out.sample_ids.push_back(ds.sample_ids[i]);
    }
    return out;
}

void seeded_split(std::size_t n, std::size_t n_train, std::uint64_t seed, std::vector<std::size_t>& train,
                  std::vector<std::size_t>& val) {
    if (n_train > n) throw ArgumentError("split: more training samples requested than exist");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = RngStream(seed).split(kSplitStream);
    rng.shuffle(std::span<std::size_t>(order));
    train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());
}

Dataset gen_synthetic(std::uint64_t label_seed, std::uint64_t split_seed) {
    Dataset ds;
    ds.name = "synthetic";
    ds.num_classes = 2;
    ds.features = Matrix(kSyntheticSamples, kSyntheticDim);
    for (std::size_t i = 0; i < kSyntheticSamples; ++i) {
        for (std::size_t j = 0; j < kSyntheticDim; ++j) {
            ds.features(i, j) = static_cast<double>((i >> (kSyntheticDim - 1 - j)) & 1U);
        }
    }

    auto rng = RngStream(label_seed).split(kLabelStream);
    std::array<double, kSyntheticDim> w{};
    for (double& v : w) v = rng.uniform(-1.0, 1.0);

    std::vector<double> scores(kSyntheticSamples);
    for (std::size_t i = 0; i < kSyntheticSamples; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < kSyntheticDim; ++j) s += w[j] * ds.features(i, j);
        scores[i] = s;
    }
    std::vector<double> sorted = scores;
    std::sort(sorted.begin(), sorted.end());
    const double median = 0.5 * (sorted[kSyntheticSamples / 2 - 1] + sorted[kSyntheticSamples / 2]);

    ds.labels.resize(kSyntheticSamples);
    ds.sample_ids.resize(kSyntheticSamples);
    for (std::size_t i = 0; i < kSyntheticSamples; ++i) {
        ds.labels[i] = scores[i] > median ? 1 : 0;
        ds.sample_ids[i] = static_cast<std::int64_t>(i);
    }
    seeded_split(kSyntheticSamples, kSyntheticTrain, split_seed, ds.train_idx, ds.val_idx);
    return ds;
}

Dataset load_mnist_idx(const std::filesystem::path& image_path, const std::filesystem::path& label_path) {
    const auto images = read_file(image_path);
    const auto labels = read_file(label_path);

    if (read_be32(images, 0, image_path) != 0x00000803U) throw FormatError(image_path.string() + ": bad IDX image magic number");
    if (read_be32(labels, 0, label_path) != 0x00000801U) throw FormatError(label_path.string() + ": bad IDX label magic number");
    const std::size_t n_img = read_be32(images, 4, image_path);
    const std::size_t rows = read_be32(images, 8, image_path);
    const std::size_t cols = read_be32(images, 12, image_path);
    const std::size_t n_lbl = read_be32(labels, 4, label_path);
    if (n_img != n_lbl) {
        throw FormatError("image count " + std::to_string(n_img) + " does not match label count " + std::to_string(n_lbl));
    }
    if (n_img == 0 || rows == 0 || cols == 0) throw FormatError(image_path.string() + ": empty IDX image file");
    const std::size_t dim = rows * cols;
    if (images.size() != 16 + n_img * dim) throw FormatError(image_path.string() + ": truncated or oversized image data");
    if (labels.size() != 8 + n_lbl) throw FormatError(label_path.string() + ": truncated or oversized label data");

    Dataset ds;
    ds.name = "mnist";
    ds.num_classes = 10;
    ds.features = Matrix(n_img, dim);
    auto f = ds.features.data();
    for (std::size_t i = 0; i < n_img * dim; ++i) {
        f[i] = static_cast<double>(static_cast<unsigned char>(images[16 + i])) / 127.5 - 1.0;
    }
    ds.labels.resize(n_img);
    ds.sample_ids.resize(n_img);
    for (std::size_t i = 0; i < n_img; ++i) {
        const int y = static_cast<unsigned char>(labels[8 + i]);
        if (y > 9) throw FormatError(label_path.string() + ": label " + std::to_string(y) + " outside 0-9");
        ds.labels[i] = y;
        ds.sample_ids[i] = static_cast<std::int64_t>(i);
    }
    ds.train_idx.resize(n_img);
    std::iota(ds.train_idx.begin(), ds.train_idx.end(), std::size_t{0});
    return ds;
}

Dataset load_mnist_dir(const std::filesystem::path& dir) {
    Dataset train = load_mnist_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
    Dataset test = load_mnist_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
    if (train.dim() != test.dim()) throw FormatError("MNIST train and test images differ in size");

    const std::size_t n_train = train.size(), n = n_train + test.size();
    Dataset ds;
    ds.name = "mnist";
    ds.num_classes = 10;
    std::vector<double> data(train.features.data().begin(), train.features.data().end());
    data.insert(data.end(), test.features.data().begin(), test.features.data().end());
    ds.features = Matrix(n, train.dim(), std::move(data));
    ds.labels = train.labels;
    ds.labels.insert(ds.labels.end(), test.labels.begin(), test.labels.end());
    ds.sample_ids.resize(n);
    std::iota(ds.sample_ids.begin(), ds.sample_ids.end(), 0);
    ds.train_idx.resize(n_train);
    std::iota(ds.train_idx.begin(), ds.train_idx.end(), std::size_t{0});
    ds.val_idx.resize(test.size());
    std::iota(ds.val_idx.begin(), ds.val_idx.end(), n_train);
    return ds;
}

Dataset subset(const Dataset& ds, std::size_t n_train, std::size_t n_val, std::uint64_t seed) {
    if (n_train > ds.train_idx.size() || n_val > ds.val_idx.size()) {
        throw ArgumentError("subset larger than the dataset's splits");
    }
    if (n_train == 0 || n_val == 0) throw ArgumentError("subset splits must be non-empty");
    auto rng = RngStream(seed).split(kSubsetStream);
    auto pick = [&rng](std::vector<std::size_t> idx, std::size_t k) {
        rng.shuffle(std::span<std::size_t>(idx));
        idx.resize(k);
        std::sort(idx.begin(), idx.end());
        return idx;
    };
    const auto tr = pick(ds.train_idx, n_train);
    const auto va = pick(ds.val_idx, n_val);

    std::vector<std::size_t> rows = tr;
    rows.insert(rows.end(), va.begin(), va.end());
    Dataset out;
    out.name = ds.name;
    out.num_classes = ds.num_classes;
    out.features = ds.features.gather_rows(rows);
    for (std::size_t r : rows) {
        out.labels.push_back(ds.labels[r]);
        out.sample_ids.push_back(ds.sample_ids[r]);
    }
    out.train_idx.resize(tr.size());
    std::iota(out.train_idx.begin(), out.train_idx.end(), std::size_t{0});
    out.val_idx.resize(va.size());
    std::iota(out.val_idx.begin(), out.val_idx.end(), tr.size());
    return out;
}

Dataset gen_tictactoe(std::uint64_t split_seed) {
    std::set<Board> terminal;
    Board board{};
    play_out(board, 1, terminal);

    std::vector<Board> boards(terminal.begin(), terminal.end());
    std::vector<int> labels;
    labels.reserve(boards.size());
    for (const auto& b : boards) labels.push_back(has_line(b, 1) ? 1 : 0);
    return boards_to_dataset("tictactoe", boards, labels, split_seed);
}

Dataset load_tictactoe_csv(const std::filesystem::path& path, std::uint64_t split_seed) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<Board> boards;
    std::vector<int> labels;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        std::vector<std::string> tokens;
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) tokens.push_back(trim(tok));
        const auto where = path.string() + ":" + std::to_string(line_no);
        if (tokens.size() != 10) {
            throw FormatError(where + ": expected 10 comma-separated fields, got " + std::to_string(tokens.size()));
        }
        Board b{};
        for (std::size_t c = 0; c < 9; ++c) {
            if (tokens[c] == "x") b[c] = 1;
            else if (tokens[c] == "o") b[c] = -1;
            else if (tokens[c] == "b") b[c] = 0;
            else throw FormatError(where + ": unknown cell token '" + tokens[c] + "'");
        }
        if (tokens[9] == "positive") labels.push_back(1);
        else if (tokens[9] == "negative") labels.push_back(0);
        else throw FormatError(where + ": unknown class token '" + tokens[9] + "'");
        boards.push_back(b);
    }
    return boards_to_dataset("tictactoe", boards, labels, split_seed);
}

Dataset shuffle_labels(const Dataset& ds, std::uint64_t seed) {
    Dataset out = ds;
    auto rng = RngStream(seed).split(kLabelStream);
    rng.shuffle(std::span<int>(out.labels));
    return out;
}

void write_dataset_cache(const Dataset& ds, const std::filesystem::path& path) {
    ds.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(kCacheMagic, sizeof(kCacheMagic));
    put<std::uint32_t>(out, kCacheVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.name.size()));
    out.write(ds.name.data(), static_cast<std::streamsize>(ds.name.size()));
    put<std::uint64_t>(out, ds.size());
    put<std::uint64_t>(out, ds.dim());
    put<std::uint64_t>(out, ds.num_classes);
    for (double v : ds.features.data()) put<double>(out, v);
    for (int y : ds.labels) put<std::int32_t>(out, y);
    for (std::int64_t id : ds.sample_ids) put<std::int64_t>(out, id);
    for (const auto* part : {&ds.train_idx, &ds.val_idx}) {
        put<std::uint64_t>(out, part->size());
        for (std::size_t i : *part) put<std::uint64_t>(out, i);
    }
    if (!out) throw IoError("write failed for " + path.string());
}

Dataset read_dataset_cache(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[8];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCacheMagic, sizeof(magic)) != 0) {
        throw FormatError(path.string() + ": not a dataset cache");
    }
    if (const auto v = get<std::uint32_t>(in, path); v != kCacheVersion) {
        throw FormatError(path.string() + ": unsupported dataset cache version " + std::to_string(v));
    }
    Dataset ds;
    ds.name.resize(get<std::uint32_t>(in, path));
    if (!in.read(ds.name.data(), static_cast<std::streamsize>(ds.name.size()))) throw FormatError(path.string() + ": truncated name");
    const auto n = get<std::uint64_t>(in, path);
    const auto d = get<std::uint64_t>(in, path);
    ds.num_classes = get<std::uint64_t>(in, path);
    if (n == 0 || d == 0) throw FormatError(path.string() + ": empty dataset");
    std::vector<double> data(n * d);
    for (double& v : data) v = get<double>(in, path);
    ds.features = Matrix(n, d, std::move(data));
    ds.labels.resize(n);
    for (int& y : ds.labels) y = get<std::int32_t>(in, path);
    ds.sample_ids.resize(n);
    for (auto& id : ds.sample_ids) id = get<std::int64_t>(in, path);
    for (auto* part : {&ds.train_idx, &ds.val_idx}) {
        const auto k = get<std::uint64_t>(in, path);
        if (k > n) throw FormatError(path.string() + ": split larger than dataset");
        part->resize(k);
        for (auto& i : *part) i = get<std::uint64_t>(in, path);
    }
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path.string() + ": trailing bytes");
    ds.validate();
    return ds;
}

}  // namespace bnnib
