#include "bnnib/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "bnnib/optim.hpp"

namespace bnnib {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kInitStream = 0x494E4954ULL;     // "INIT"
constexpr std::uint64_t kShuffleStream = 0x53485546ULL;  // "SHUF"

// ---------------------------------------------------------------------------
// Strict JSON object reading
// ---------------------------------------------------------------------------

template <typename E>
class ObjectReader {
public:
    ObjectReader(const json& obj, std::string where) : obj_(obj), where_(std::move(where)) {
        if (!obj_.is_object()) throw E(where_ + ": expected an object");
    }

    bool has(const std::string& key) {
        used_.insert(key);
        return obj_.contains(key);
    }

    const json& at(const std::string& key) {
        used_.insert(key);
        if (!obj_.contains(key)) throw E(where_ + ": missing required key '" + key + "'");
        return obj_.at(key);
    }

    template <typename T>
    T get(const std::string& key) {
        return convert<T>(at(key), key);
    }

    template <typename T>
    T get_or(const std::string& key, T fallback) {
        return has(key) ? convert<T>(obj_.at(key), key) : fallback;
    }

    ObjectReader child(const std::string& key) { return ObjectReader(at(key), where_ + "." + key); }

    void finish() const {
        for (const auto& [key, _] : obj_.items()) {
            if (!used_.count(key)) throw E(where_ + ": unknown key '" + key + "'");
        }
    }

    const std::string& where() const { return where_; }

private:
    template <typename T>
    T convert(const json& v, const std::string& key) const {
        const auto fail = [&](const char* expected) {
            return E(where_ + "." + key + ": expected " + expected + ", got " + std::string(v.type_name()));
        };
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw fail("a boolean");
            return v.get<bool>();
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw fail("a string");
            return v.get<std::string>();
        } else if constexpr (std::is_same_v<T, double>) {
            if (!v.is_number()) throw fail("a number");
            return v.get<double>();
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_unsigned()) throw fail("a non-negative integer");
            return v.get<T>();
        } else if constexpr (std::is_same_v<T, std::vector<std::size_t>> || std::is_same_v<T, std::vector<std::uint64_t>>) {
            if (!v.is_array()) throw fail("an array");
            T out;
            for (const auto& e : v) {
                if (!e.is_number_unsigned()) throw fail("an array of non-negative integers");
                out.push_back(e.get<typename T::value_type>());
            }
            return out;
        } else {
            static_assert(sizeof(T) == 0, "unsupported type");
        }
    }

    const json& obj_;
    std::string where_;
    std::set<std::string> used_;
};

json config_json(const ExperimentConfig& c) {
    json schedule = json::object();
    if (!c.mi_schedule.epochs.empty()) {
        schedule["epochs"] = c.mi_schedule.epochs;
    } else {
        schedule["dense_until"] = c.mi_schedule.dense_until;
        schedule["total_points"] = c.mi_schedule.total_points;
    }
    return json{
        {"name", c.name},
        {"dataset",
         {{"kind", c.dataset.kind},
          {"path", c.dataset.path},
          {"label_seed", c.dataset.label_seed},
          {"split_seed", c.dataset.split_seed},
          {"train_subset", c.dataset.train_subset},
          {"val_subset", c.dataset.val_subset},
          {"subset_seed", c.dataset.subset_seed}}},
        {"network",
         {{"hidden_widths", c.hidden_widths},
          {"activation", c.activation.name()},
          {"beta", c.activation.beta},
          {"binary", c.binary},
          {"batchnorm", c.batchnorm}}},
        {"training",
         {{"batch_size", c.batch_size}, {"learning_rate", c.learning_rate}, {"epochs", c.epochs}, {"seeds", c.seeds}}},
        {"mi", {{"bins", c.bins}, {"post_bn_half_width", c.post_bn_half_width}, {"schedule", schedule}}},
        {"label_shuffle", {{"enabled", c.label_shuffle}, {"seed", c.label_shuffle_seed}}},
        {"output_dir", c.output_dir},
    };
}

template <typename E>
ExperimentConfig config_from_json(const json& j, const std::string& where) {
    ExperimentConfig c;
    ObjectReader<E> root(j, where);
    c.name = root.template get_or<std::string>("name", c.name);

    auto ds = root.child("dataset");
    c.dataset.kind = ds.template get<std::string>("kind");
    c.dataset.path = ds.template get_or<std::string>("path", "");
    c.dataset.label_seed = ds.template get_or<std::uint64_t>("label_seed", 0);
    c.dataset.split_seed = ds.template get_or<std::uint64_t>("split_seed", 0);
    c.dataset.train_subset = ds.template get_or<std::size_t>("train_subset", 0);
    c.dataset.val_subset = ds.template get_or<std::size_t>("val_subset", 0);
    c.dataset.subset_seed = ds.template get_or<std::uint64_t>("subset_seed", 0);
    ds.finish();

    auto net = root.child("network");
    c.hidden_widths = net.template get<std::vector<std::size_t>>("hidden_widths");
    const double beta = net.template get_or<double>("beta", ActivationKind::kDefaultBeta);
    try {
        c.activation = ActivationKind::parse(net.template get<std::string>("activation"), beta);
    } catch (const ArgumentError& e) {
        throw E(net.where() + ": " + e.what());
    }
    c.binary = net.template get_or<bool>("binary", c.binary);
    c.batchnorm = net.template get_or<bool>("batchnorm", c.batchnorm);
    net.finish();

    auto tr = root.child("training");
    c.batch_size = tr.template get<std::size_t>("batch_size");
    c.learning_rate = tr.template get<double>("learning_rate");
    c.epochs = tr.template get<std::size_t>("epochs");
    c.seeds = tr.template get_or<std::vector<std::uint64_t>>("seeds", c.seeds);
    tr.finish();

    if (root.has("mi")) {
        auto mi = root.child("mi");
        c.bins = mi.template get_or<std::size_t>("bins", c.bins);
        c.post_bn_half_width = mi.template get_or<double>("post_bn_half_width", c.post_bn_half_width);
        if (mi.has("schedule")) {
            auto s = mi.child("schedule");
            c.mi_schedule.epochs = s.template get_or<std::vector<std::size_t>>("epochs", {});
            c.mi_schedule.dense_until = s.template get_or<std::size_t>("dense_until", c.mi_schedule.dense_until);
            c.mi_schedule.total_points = s.template get_or<std::size_t>("total_points", c.mi_schedule.total_points);
            s.finish();
        }
        mi.finish();
    }
    if (root.has("label_shuffle")) {
        auto ls = root.child("label_shuffle");
        c.label_shuffle = ls.template get_or<bool>("enabled", false);
        c.label_shuffle_seed = ls.template get_or<std::uint64_t>("seed", 0);
        ls.finish();
    }
    c.output_dir = root.template get_or<std::string>("output_dir", "");
    root.finish();
    return c;
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001B3ULL;
    }
    return h;
}

// ---------------------------------------------------------------------------
// Run log JSON
// ---------------------------------------------------------------------------

ordered_json grad_json(const GradientStats& g) {
    ordered_json layers = ordered_json::array();
    for (const auto& l : g.layers) layers.push_back({{"mean_norm", l.mean_norm}, {"std_norm", l.std_norm}});
    return {{"mean_norm", g.mean_norm}, {"std_norm", g.std_norm}, {"batches", g.batches}, {"layers", layers}};
}

ordered_json epoch_json(const EpochRecord& r) {
    return {{"type", "epoch"},
            {"epoch", r.epoch},
            {"updates", r.updates},
            {"train_loss", r.train_loss},
            {"val_loss", r.val_loss},
            {"train_acc", r.train_acc},
            {"val_acc", r.val_acc},
            {"grad", r.grad ? grad_json(*r.grad) : ordered_json(nullptr)}};
}

ordered_json snapshot_json(const MISnapshot& s) {
    return {{"type", "mi"},
            {"epoch", s.epoch},
            {"layer", s.tap.layer},
            {"tap", std::string(tap_kind_name(s.tap.kind))},
            {"split", std::string(split_name(s.split))},
            {"i_tx_bits", s.i_tx_bits},
            {"i_ty_bits", s.i_ty_bits}};
}

ordered_json header_json(const RunLog& log) {
    return {{"type", "header"},
            {"schema_version", log.schema_version},
            {"config_hash", log.config_hash},
            {"seed", log.seed},
            {"config", ordered_json::parse(config_json(log.config).dump())},
            {"dataset",
             {{"name", log.dataset.name},
              {"samples", log.dataset.samples},
              {"train", log.dataset.train},
              {"val", log.dataset.val},
              {"classes", log.dataset.classes}}},
            {"ceilings", {{"i_tx_bits", log.ceiling_tx_bits}, {"i_ty_bits", log.ceiling_ty_bits}}}};
}

using LineReader = ObjectReader<FormatError>;

GradientStats grad_from_json(const json& j, const std::string& where) {
    LineReader r(j, where);
    GradientStats g;
    g.mean_norm = r.get<double>("mean_norm");
    g.std_norm = r.get<double>("std_norm");
    g.batches = r.get<std::size_t>("batches");
    const json& layers = r.at("layers");
    if (!layers.is_array()) throw FormatError(where + ".layers: expected an array");
    for (const auto& l : layers) {
        LineReader lr(l, where + ".layers[]");
        g.layers.push_back({lr.get<double>("mean_norm"), lr.get<double>("std_norm")});
        lr.finish();
    }
    r.finish();
    return g;
}

double ceiling_bits(std::size_t n) { return std::log2(static_cast<double>(n)); }

}  // namespace

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
    static const std::set<std::string> kinds{"synthetic", "tictactoe", "tictactoe_csv", "mnist", "cache"};
    if (!kinds.count(dataset.kind)) throw ConfigError("dataset.kind: unknown dataset '" + dataset.kind + "'");
    if ((dataset.kind == "tictactoe_csv" || dataset.kind == "mnist" || dataset.kind == "cache") && dataset.path.empty()) {
        throw ConfigError("dataset.path is required for dataset kind '" + dataset.kind + "'");
    }
    if (hidden_widths.empty()) throw ConfigError("network.hidden_widths must list at least one layer");
    if (std::any_of(hidden_widths.begin(), hidden_widths.end(), [](std::size_t w) { return w == 0; })) {
        throw ConfigError("network.hidden_widths must be positive");
    }
    if (!(activation.beta > 0.0)) throw ConfigError("network.beta must be positive");
    if (epochs < 1) throw ConfigError("training.epochs must be at least 1");
    if (batch_size < 2) throw ConfigError("training.batch_size must be at least 2");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("training.learning_rate must be positive");
    if (seeds.empty()) throw ConfigError("training.seeds must list at least one seed");
    if (bins < 2 || bins > 65535) throw ConfigError("mi.bins must lie in [2, 65535]");
    if (!(post_bn_half_width > 0.0)) throw ConfigError("mi.post_bn_half_width must be positive");
    for (std::size_t e : mi_schedule.epochs) {
        if (e > epochs) throw ConfigError("mi.schedule.epochs entry " + std::to_string(e) + " exceeds training.epochs");
    }
    if (mi_schedule.epochs.empty() && mi_schedule.total_points < 2) throw ConfigError("mi.schedule.total_points must be at least 2");
}

ExperimentConfig parse_config(std::string_view json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    auto c = config_from_json<ConfigError>(j, "config");
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string config_to_json(const ExperimentConfig& config) { return config_json(config).dump(2) + "\n"; }

std::string config_hash(const ExperimentConfig& config) {
    json j = config_json(config);
    j.erase("output_dir");
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(j.dump());
    return os.str();
}

std::vector<std::size_t> mi_epochs(const ExperimentConfig& config) {
    const auto& s = config.mi_schedule;
    std::set<std::size_t> out;
    if (!s.epochs.empty()) {
        out.insert(s.epochs.begin(), s.epochs.end());
        return {out.begin(), out.end()};
    }
    const std::size_t last = config.epochs;
    for (std::size_t e = 0; e <= last && e < s.dense_until; ++e) out.insert(e);
    if (last >= s.dense_until && s.dense_until > 0) {
        const std::size_t remaining = s.total_points > out.size() ? s.total_points - out.size() : 1;
        const double lo = std::log(static_cast<double>(s.dense_until));
        const double hi = std::log(static_cast<double>(last));
        for (std::size_t i = 0; i < remaining; ++i) {
            const double t = remaining == 1 ? 1.0 : static_cast<double>(i) / static_cast<double>(remaining - 1);
            out.insert(static_cast<std::size_t>(std::llround(std::exp(lo + t * (hi - lo)))));
        }
    }
    out.insert(0);
    out.insert(last);
    return {out.begin(), out.end()};
}

Dataset build_dataset(const ExperimentConfig& config) {
    const auto& d = config.dataset;
    Dataset ds;
    if (d.kind == "synthetic") ds = gen_synthetic(d.label_seed, d.split_seed);
    else if (d.kind == "tictactoe") ds = gen_tictactoe(d.split_seed);
    else if (d.kind == "tictactoe_csv") ds = load_tictactoe_csv(d.path, d.split_seed);
    else if (d.kind == "mnist") ds = load_mnist_dir(d.path);
    else if (d.kind == "cache") ds = read_dataset_cache(d.path);
    else throw ConfigError("dataset.kind: unknown dataset '" + d.kind + "'");

    if (d.train_subset > 0 || d.val_subset > 0) {
        const std::size_t nt = d.train_subset > 0 ? d.train_subset : ds.train_idx.size();
        const std::size_t nv = d.val_subset > 0 ? d.val_subset : ds.val_idx.size();
        ds = subset(ds, nt, nv, d.subset_seed);
    }
    if (config.label_shuffle) ds = shuffle_labels(ds, config.label_shuffle_seed);
    ds.validate();
    return ds;
}

NetworkSpec network_spec(const ExperimentConfig& config, const Dataset& ds) {
    NetworkSpec spec;
    spec.input_dim = ds.dim();
    spec.hidden_widths = config.hidden_widths;
    spec.num_classes = ds.num_classes;
    spec.activation = config.activation;
    spec.binary = config.binary;
    spec.batchnorm = config.batchnorm;
    return spec;
}

std::size_t updates_per_epoch(std::size_t train_samples, std::size_t batch_size) {
    if (batch_size == 0) throw ArgumentError("batch size must be positive");
    return (train_samples + batch_size - 1) / batch_size;
}

// ---------------------------------------------------------------------------
// Gradient statistics
// ---------------------------------------------------------------------------

void GradientAccumulator::add(std::span<const Matrix> layer_grads) {
    if (count_ == 0) {
        mean_.clear();
        for (const auto& g : layer_grads) mean_.emplace_back(g.size(), 0.0);
        m2_.assign(layer_grads.size(), 0.0);
    } else if (layer_grads.size() != mean_.size()) {
        throw ShapeError("gradient accumulator: layer count changed between batches");
    }
    ++count_;
    const double k = static_cast<double>(count_);
    for (std::size_t l = 0; l < layer_grads.size(); ++l) {
        const auto g = layer_grads[l].data();
        auto& mean = mean_[l];
        if (g.size() != mean.size()) throw ShapeError("gradient accumulator: layer shape changed between batches");
        double m2 = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double delta = g[i] - mean[i];
            mean[i] += delta / k;
            m2 += delta * (g[i] - mean[i]);
        }
        m2_[l] += m2;
    }
}

GradientStats GradientAccumulator::finish() const {
    if (count_ == 0) throw ArgumentError("gradient statistics need at least one batch");
    GradientStats s;
    s.batches = count_;
    double total_sq = 0.0, total_m2 = 0.0;
    for (std::size_t l = 0; l < mean_.size(); ++l) {
        double sq = 0.0;
        for (double v : mean_[l]) sq += v * v;
        const double m2 = std::max(0.0, m2_[l]);
        s.layers.push_back({std::sqrt(sq), std::sqrt(m2 / static_cast<double>(count_))});
        total_sq += sq;
        total_m2 += m2;
    }
    s.mean_norm = std::sqrt(total_sq);
    s.std_norm = std::sqrt(total_m2 / static_cast<double>(count_));
    return s;
}

GradientStats gradient_stats(std::span<const std::vector<double>> batch_grads) {
    if (batch_grads.empty()) throw ArgumentError("gradient statistics need at least one batch");
    GradientAccumulator acc;
    for (const auto& g : batch_grads) {
        if (g.empty()) throw ArgumentError("empty gradient vector");
        const Matrix m(1, g.size(), g);
        acc.add(std::span<const Matrix>(&m, 1));
    }
    return acc.finish();
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

struct Metrics {
    double loss;
    double acc;
};

Metrics evaluate(Network& net, const SplitData& data) {
    constexpr std::size_t kChunk = 2048;
    const std::size_t n = data.labels.size();
    double loss_sum = 0.0, hit_sum = 0.0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < n; start += kChunk) {
        const std::size_t end = std::min(n, start + kChunk);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        const Matrix x = (start == 0 && end == n) ? data.features : data.features.gather_rows(idx);
        const std::span<const int> y(data.labels.data() + start, end - start);
        const Matrix probs = network_forward(net, x, Mode::Eval, false);
        const double m = static_cast<double>(end - start);
        loss_sum += cross_entropy(probs, y) * m;
        hit_sum += accuracy(probs, y) * m;
    }
    return {loss_sum / static_cast<double>(n), hit_sum / static_cast<double>(n)};
}

}  // namespace

RunLog run_training(const ExperimentConfig& config, std::uint64_t seed, const EpochCallback& on_epoch) {
    config.validate();
    return run_training(config, build_dataset(config), seed, on_epoch);
}

RunLog run_training(const ExperimentConfig& config, const Dataset& ds, std::uint64_t seed, const EpochCallback& on_epoch) {
    const auto started = std::chrono::steady_clock::now();
    config.validate();
    ds.validate();
    const SplitData train = materialize(ds, Split::Train);
    const SplitData val = materialize(ds, Split::Test);
    const std::size_t n_train = train.labels.size();
    if (n_train < 2) throw ConfigError("training split needs at least two samples");
    if (config.batchnorm && n_train % config.batch_size == 1) {
        throw ConfigError("the last minibatch would hold a single sample, which batchnorm cannot normalize; "
                          "change training.batch_size");
    }

    RunLog log;
    log.config_hash = config_hash(config);
    log.seed = seed;
    log.config = config;
    log.dataset = {ds.name, ds.size(), ds.train_idx.size(), ds.val_idx.size(), ds.num_classes};
    log.ceiling_tx_bits = ceiling_bits(ds.size());
    log.ceiling_ty_bits = ceiling_bits(ds.num_classes);

    const RngStream root(seed);
    auto init_rng = root.split(kInitStream);
    Network net(network_spec(config, ds), init_rng);
    AdamOptimizer opt(net, AdamConfig{config.learning_rate});
    const BinningPolicy policy = config.binning();
    const auto schedule = mi_epochs(config);
    std::vector<char> scheduled(config.epochs + 1, 0);
    for (std::size_t e : schedule) scheduled[e] = 1;

    // Epoch 0 is measured in eval mode on both splits. Later epochs report the
    // training split as the size-weighted mean over that epoch's minibatches.
    const auto record = [&](std::size_t epoch, std::size_t updates, std::optional<GradientStats> grad,
                             std::optional<Metrics> train_metrics) {
        const Metrics tr = train_metrics ? *train_metrics : evaluate(net, train);
        const Metrics va = evaluate(net, val);
        if (!std::isfinite(tr.loss) || !std::isfinite(va.loss)) {
            throw Error("training diverged: non-finite loss at epoch " + std::to_string(epoch));
        }
        EpochRecord r{epoch, updates, tr.loss, va.loss, tr.acc, va.acc, std::move(grad)};
        log.epochs.push_back(r);
        if (scheduled[epoch]) {
            for (Split s : {Split::Train, Split::Test}) {
                const auto snaps = layer_mi_snapshot(net, (s == Split::Train ? train : val).view(), policy, epoch, s);
                log.snapshots.insert(log.snapshots.end(), snaps.begin(), snaps.end());
            }
        }
        if (on_epoch) on_epoch(r);
    };

    record(0, 0, std::nullopt, std::nullopt);

    const auto shuffle_root = root.split(kShuffleStream);
    std::vector<std::size_t> order(n_train);
    std::vector<int> batch_labels;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        auto rng = shuffle_root.split(epoch);
        rng.shuffle(std::span<std::size_t>(order));

        GradientAccumulator acc;
        std::size_t updates = 0;
        double loss_sum = 0.0, hit_sum = 0.0;
        for (std::size_t start = 0; start < n_train; start += config.batch_size) {
            const std::size_t end = std::min(n_train, start + config.batch_size);
            const std::span<const std::size_t> idx(order.data() + start, end - start);
            const Matrix x = train.features.gather_rows(idx);
            batch_labels.clear();
            for (std::size_t i : idx) batch_labels.push_back(train.labels[i]);

            const Matrix probs = network_forward(net, x, Mode::Train, false);
            const double m = static_cast<double>(idx.size());
            loss_sum += cross_entropy(probs, batch_labels) * m;
            hit_sum += accuracy(probs, batch_labels) * m;
            const auto grads = network_backward(net, probs, batch_labels);
            acc.add(grads);
            opt.step(net, grads);
            ++updates;
        }
        const double n = static_cast<double>(n_train);
        record(epoch, updates, acc.finish(), Metrics{loss_sum / n, hit_sum / n});
    }

    log.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return log;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

std::string serialize_run_log(const RunLog& log) {
    std::string out = header_json(log).dump() + "\n";
    std::map<std::size_t, std::vector<const MISnapshot*>> by_epoch;
    for (const auto& s : log.snapshots) by_epoch[s.epoch].push_back(&s);
    for (const auto& r : log.epochs) {
        out += epoch_json(r).dump() + "\n";
        if (auto it = by_epoch.find(r.epoch); it != by_epoch.end()) {
            for (const auto* s : it->second) out += snapshot_json(*s).dump() + "\n";
        }
    }
    return out;
}

void persist(const RunLog& log, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << serialize_run_log(log);
    if (!out) throw IoError("write failed for " + path.string());
}

RunLog parse_run_log(std::string_view text, const std::string& source) {
    RunLog log;
    bool have_header = false;
    std::size_t line_no = 0, pos = 0;
    while (pos < text.size()) {
        const std::size_t nl = text.find('\n', pos);
        const std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() : nl + 1;
        ++line_no;
        const std::string where = source + ":" + std::to_string(line_no);
        if (line.empty()) continue;

        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw FormatError(where + ": parse error: " + e.what());
        }
        if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) {
            throw FormatError(where + ": record without a type field");
        }
        const std::string type = j["type"];
        LineReader r(j, where);
        r.at("type");
        if (!have_header) {
            if (type != "header") throw FormatError(where + ": first record must be the header");
            const int version = r.get<int>("schema_version");
            if (version != kRunLogSchemaVersion) {
                throw FormatError(where + ": unsupported schema_version " + std::to_string(version) + " (this build reads " +
                                  std::to_string(kRunLogSchemaVersion) + ")");
            }
            log.schema_version = version;
            log.config_hash = r.get<std::string>("config_hash");
            log.seed = r.get<std::uint64_t>("seed");
            log.config = config_from_json<FormatError>(r.at("config"), where + ".config");
            auto d = r.child("dataset");
            log.dataset = {d.get<std::string>("name"), d.get<std::size_t>("samples"), d.get<std::size_t>("train"),
                           d.get<std::size_t>("val"), d.get<std::size_t>("classes")};
            d.finish();
            auto c = r.child("ceilings");
            log.ceiling_tx_bits = c.get<double>("i_tx_bits");
            log.ceiling_ty_bits = c.get<double>("i_ty_bits");
            c.finish();
            have_header = true;
        } else if (type == "epoch") {
            EpochRecord e;
            e.epoch = r.get<std::size_t>("epoch");
            e.updates = r.get<std::size_t>("updates");
            e.train_loss = r.get<double>("train_loss");
            e.val_loss = r.get<double>("val_loss");
            e.train_acc = r.get<double>("train_acc");
            e.val_acc = r.get<double>("val_acc");
            const json& g = r.at("grad");
            if (!g.is_null()) e.grad = grad_from_json(g, where + ".grad");
            if (e.epoch != log.epochs.size()) {
                throw FormatError(where + ": epoch " + std::to_string(e.epoch) + " out of sequence (expected " +
                                  std::to_string(log.epochs.size()) + ")");
            }
            log.epochs.push_back(std::move(e));
        } else if (type == "mi") {
            MISnapshot s;
            s.epoch = r.get<std::size_t>("epoch");
            s.tap.layer = r.get<std::size_t>("layer");
            try {
                s.tap.kind = parse_tap_kind(r.get<std::string>("tap"));
                s.split = parse_split(r.get<std::string>("split"));
            } catch (const ArgumentError& e) {
                throw FormatError(where + ": " + e.what());
            }
            s.i_tx_bits = r.get<double>("i_tx_bits");
            s.i_ty_bits = r.get<double>("i_ty_bits");
            log.snapshots.push_back(s);
        } else {
            throw FormatError(where + ": unknown record type '" + type + "' for schema_version " +
                              std::to_string(kRunLogSchemaVersion));
        }
        try {
            r.finish();
        } catch (const FormatError& e) {
            throw FormatError(std::string(e.what()) + " (not part of schema_version " +
                              std::to_string(kRunLogSchemaVersion) + ")");
        }
    }
    if (!have_header) throw FormatError(source + ": empty run log");
    if (log.epochs.size() != log.config.epochs + 1) {
        throw FormatError(source + ":" + std::to_string(line_no) + ": truncated run log: expected " +
                          std::to_string(log.config.epochs + 1) + " epoch records, found " +
                          std::to_string(log.epochs.size()));
    }
    return log;
}

RunLog load_run_log(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_log(ss.str(), path.string());
}

std::filesystem::path run_log_filename(std::uint64_t seed) { return "run_seed" + std::to_string(seed) + ".jsonl"; }

std::vector<RunLog> load_run_directory(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (entry.is_regular_file() && name.starts_with("run_") && entry.path().extension() == ".jsonl") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    std::vector<RunLog> logs;
    for (const auto& f : files) logs.push_back(load_run_log(f));
    return logs;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

MeanVar mean_var(std::span<const double> values) {
    if (values.empty()) throw ArgumentError("mean of an empty set");
    const double n = static_cast<double>(values.size());
    double sum = 0.0;
    for (double v : values) sum += v;
    const double mean = sum / n;
    double sq = 0.0;
    for (double v : values) sq += (v - mean) * (v - mean);
    return {mean, sq / n};
}

AveragedLog aggregate_runs(std::span<const RunLog> logs) {
    if (logs.empty()) throw ArgumentError("aggregate_runs: no run logs given");
    std::vector<const RunLog*> sorted;
    for (const auto& l : logs) sorted.push_back(&l);
    std::stable_sort(sorted.begin(), sorted.end(), [](const RunLog* a, const RunLog* b) { return a->seed < b->seed; });

    const RunLog& first = *sorted.front();
    for (const RunLog* l : sorted) {
        if (l->config_hash != first.config_hash) {
            throw ArgumentError("aggregate_runs: config hash " + l->config_hash + " differs from " + first.config_hash);
        }
        if (l->epochs.size() != first.epochs.size()) throw ArgumentError("aggregate_runs: runs differ in epoch count");
    }

    AveragedLog avg;
    avg.config_hash = first.config_hash;
    avg.config = first.config;
    avg.ceiling_tx_bits = first.ceiling_tx_bits;
    avg.ceiling_ty_bits = first.ceiling_ty_bits;
    for (const RunLog* l : sorted) avg.seeds.push_back(l->seed);

    std::vector<double> v(sorted.size());
    const auto across = [&](auto field) {
        for (std::size_t k = 0; k < sorted.size(); ++k) v[k] = field(*sorted[k]);
        return mean_var(v);
    };
    for (std::size_t e = 0; e < first.epochs.size(); ++e) {
        AveragedEpoch a;
        a.epoch = e;
        a.train_loss = across([e](const RunLog& l) { return l.epochs[e].train_loss; });
        a.val_loss = across([e](const RunLog& l) { return l.epochs[e].val_loss; });
        a.train_acc = across([e](const RunLog& l) { return l.epochs[e].train_acc; });
        a.val_acc = across([e](const RunLog& l) { return l.epochs[e].val_acc; });
        const bool all_grad =
            std::all_of(sorted.begin(), sorted.end(), [e](const RunLog* l) { return l->epochs[e].grad.has_value(); });
        if (all_grad) {
            a.grad_mean_norm = across([e](const RunLog& l) { return l.epochs[e].grad->mean_norm; });
            a.grad_std_norm = across([e](const RunLog& l) { return l.epochs[e].grad->std_norm; });
        }
        avg.epochs.push_back(a);
    }

    using Key = std::tuple<std::size_t, Split, TapId>;
    std::map<Key, std::pair<std::vector<double>, std::vector<double>>> groups;
    for (const RunLog* l : sorted) {
        for (const auto& s : l->snapshots) {
            auto& g = groups[{s.epoch, s.split, s.tap}];
            g.first.push_back(s.i_tx_bits);
            g.second.push_back(s.i_ty_bits);
        }
    }
    for (const auto& [key, vals] : groups) {
        AveragedSnapshot s;
        std::tie(s.epoch, s.split, s.tap) = key;
        s.i_tx_bits = mean_var(vals.first);
        s.i_ty_bits = mean_var(vals.second);
        avg.snapshots.push_back(s);
    }
    return avg;
}

std::string serialize_averaged_log(const AveragedLog& avg) {
    const auto mv = [](const MeanVar& m) { return json{{"mean", m.mean}, {"var", m.var}}; };
    json epochs = json::array();
    for (const auto& e : avg.epochs) {
        epochs.push_back({{"epoch", e.epoch},
                          {"train_loss", mv(e.train_loss)},
                          {"val_loss", mv(e.val_loss)},
                          {"train_acc", mv(e.train_acc)},
                          {"val_acc", mv(e.val_acc)},
                          {"grad_mean_norm", e.grad_mean_norm ? mv(*e.grad_mean_norm) : json(nullptr)},
                          {"grad_std_norm", e.grad_std_norm ? mv(*e.grad_std_norm) : json(nullptr)}});
    }
    json snaps = json::array();
    for (const auto& s : avg.snapshots) {
        snaps.push_back({{"epoch", s.epoch},
                         {"layer", s.tap.layer},
                         {"tap", std::string(tap_kind_name(s.tap.kind))},
                         {"split", std::string(split_name(s.split))},
                         {"i_tx_bits", mv(s.i_tx_bits)},
                         {"i_ty_bits", mv(s.i_ty_bits)}});
    }
    const json out{{"schema_version", kRunLogSchemaVersion},
                   {"config_hash", avg.config_hash},
                   {"config", config_json(avg.config)},
                   {"seeds", avg.seeds},
                   {"ceilings", {{"i_tx_bits", avg.ceiling_tx_bits}, {"i_ty_bits", avg.ceiling_ty_bits}}},
                   {"epochs", epochs},
                   {"snapshots", snaps}};
    return out.dump(1) + "\n";
}

// ---------------------------------------------------------------------------
// Checks
// ---------------------------------------------------------------------------

std::vector<InvariantViolation> check_snapshot_invariants(const RunLog& log, double tol) {
    std::vector<InvariantViolation> out;
    const auto& widths = log.config.hidden_widths;
    const bool binary_act = log.config.activation.is_binary();
    const double bins_bits = std::log2(static_cast<double>(log.config.bins));
    const auto describe = [](const MISnapshot& s) {
        return "epoch " + std::to_string(s.epoch) + " layer " + std::to_string(s.tap.layer) + " " +
               std::string(tap_kind_name(s.tap.kind)) + " " + std::string(split_name(s.split));
    };

    std::map<std::tuple<std::size_t, Split, TapId>, const MISnapshot*> index;
    for (const auto& s : log.snapshots) {
        index[{s.epoch, s.split, s.tap}] = &s;
        const std::size_t n = s.split == Split::Train ? log.dataset.train : log.dataset.val;
        const std::size_t width = s.tap.kind == TapKind::Softmax ? log.dataset.classes
                                  : s.tap.layer < widths.size() ? widths[s.tap.layer]
                                                                : 0;
        if (s.i_tx_bits < 0.0 || s.i_ty_bits < 0.0) out.push_back({describe(s) + ": negative MI"});
        if (s.i_ty_bits > s.i_tx_bits + tol) out.push_back({describe(s) + ": I(T;Y) exceeds I(T;X)"});
        if (s.i_ty_bits > log.ceiling_ty_bits + tol) out.push_back({describe(s) + ": I(T;Y) exceeds log2(classes)"});
        if (s.i_tx_bits > std::log2(static_cast<double>(n)) + tol) out.push_back({describe(s) + ": I(T;X) exceeds log2(N)"});
        if (s.i_tx_bits > static_cast<double>(width) * bins_bits + tol) {
            out.push_back({describe(s) + ": I(T;X) exceeds width * log2(bins)"});
        }
        if (binary_act && s.tap.kind == TapKind::PostAct && s.i_tx_bits > static_cast<double>(width) + tol) {
            out.push_back({describe(s) + ": binary tap carries more bits than its width"});
        }
    }
    if (binary_act) {
        for (const auto& s : log.snapshots) {
            if (s.tap.kind != TapKind::PostAct || s.tap.layer + 1 >= widths.size()) continue;
            const auto it = index.find({s.epoch, s.split, TapId{s.tap.layer + 1, TapKind::PostAct}});
            if (it == index.end()) continue;
            if (it->second->i_tx_bits > s.i_tx_bits + tol) {
                out.push_back({describe(*it->second) + ": data processing inequality violated against the previous layer"});
            }
        }
    }
    return out;
}

std::vector<double> moving_average(std::span<const double> values, std::size_t window) {
    if (window == 0) throw ArgumentError("moving average window must be positive");
    std::vector<double> out(values.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        sum += values[i];
        if (i >= window) sum -= values[i - window];
        out[i] = sum / static_cast<double>(std::min(i + 1, window));
    }
    return out;
}

}  // namespace bnnib
