#include "bnnib/presets.hpp"

namespace bnnib {

namespace {

constexpr std::uint64_t kLabelSeed = 1;
constexpr std::uint64_t kSplitSeed = 2;
constexpr std::uint64_t kShuffleSeed = 7;

std::vector<std::uint64_t> seeds_upto(std::uint64_t n) {
    std::vector<std::uint64_t> out;
    for (std::uint64_t s = 1; s <= n; ++s) out.push_back(s);
    return out;
}

ExperimentConfig synthetic_bnn(std::string name, Activation act, Scale scale) {
    ExperimentConfig c;
    c.name = std::move(name);
    c.dataset.kind = "synthetic";
    c.dataset.label_seed = kLabelSeed;
    c.dataset.split_seed = kSplitSeed;
    c.hidden_widths = {10, 8, 6, 4, 2};
    c.activation = ActivationKind{act};
    c.binary = true;
    c.batch_size = 64;
    c.learning_rate = 1e-4;
    c.epochs = scale == Scale::Paper ? 8000 : 2000;
    c.seeds = seeds_upto(scale == Scale::Paper ? 5 : 3);
    return c;
}

ExperimentConfig mnist_net(std::string name, Scale scale, const std::filesystem::path& dir) {
    ExperimentConfig c;
    c.name = std::move(name);
    c.dataset.kind = "mnist";
    c.dataset.path = dir.string();
    c.hidden_widths = {1024, 20, 20, 20};
    c.activation = ActivationKind{Activation::SteSign};
    c.binary = true;
    c.batch_size = 128;
    c.learning_rate = 1e-5;
    if (scale == Scale::Paper) {
        c.epochs = 5000;
        c.seeds = seeds_upto(5);
    } else {
        c.dataset.train_subset = 6000;
        c.dataset.val_subset = 1000;
        c.epochs = 300;
        c.seeds = seeds_upto(2);
        c.mi_schedule.dense_until = 10;
        c.mi_schedule.total_points = 40;
    }
    return c;
}

}  // namespace

std::string_view scale_name(Scale s) noexcept { return s == Scale::Paper ? "paper" : "desk"; }

Scale parse_scale(std::string_view name) {
    if (name == "desk") return Scale::Desk;
    if (name == "paper") return Scale::Paper;
    throw ArgumentError("unknown scale '" + std::string(name) + "' (expected desk or paper)");
}

std::vector<std::string> preset_figures() { return {"fig2a", "fig2b", "fig2c", "fig3a", "appendix-a", "appendix-c", "appendix-d"}; }

Preset make_preset(std::string_view figure, Scale scale, const std::filesystem::path& mnist_dir) {
    Preset p;
    p.figure = std::string(figure);
    p.scale = scale;
    const std::string suffix = "-" + std::string(scale_name(scale));
    if (figure == "fig2a") {
        p.runs.push_back({"bnn_ste", synthetic_bnn("fig2a-bnn-ste" + suffix, Activation::SteSign, scale)});
    } else if (figure == "fig2b") {
        p.runs.push_back({"bnn_approx", synthetic_bnn("fig2b-bnn-approx" + suffix, Activation::ApproxSign, scale)});
    } else if (figure == "fig2c") {
        p.runs.push_back({"bnn_swish", synthetic_bnn("fig2c-bnn-swish" + suffix, Activation::SwishSign, scale)});
    } else if (figure == "appendix-c") {
        auto c = synthetic_bnn("appendix-c-ttt-bnn-ste" + suffix, Activation::SteSign, scale);
        c.dataset.kind = "tictactoe";
        p.runs.push_back({"bnn_ste", c});
    } else if (figure == "appendix-a") {
        const struct {
            const char* label;
            Activation act;
            double lr;
        } dnns[] = {{"dnn_tanh", Activation::Tanh, 4e-4},
                    {"dnn_hard_tanh", Activation::HardTanh, 4e-4},
                    {"dnn_sign_swish", Activation::SignSwish, 1e-3}};
        for (const auto& d : dnns) {
            auto c = synthetic_bnn("appendix-a-" + std::string(d.label) + suffix, d.act, scale);
            c.binary = false;
            c.learning_rate = d.lr;
            p.runs.push_back({d.label, c});
        }
    } else if (figure == "fig3a") {
        p.runs.push_back({"bnn_ste", mnist_net("fig3a-mnist-bnn-ste" + suffix, scale, mnist_dir)});
    } else if (figure == "appendix-d") {
        auto bnn = mnist_net("appendix-d-random-bnn-ste" + suffix, scale, mnist_dir);
        bnn.label_shuffle = true;
        bnn.label_shuffle_seed = kShuffleSeed;
        if (scale == Scale::Paper) bnn.seeds = {1};
        auto dnn = bnn;
        dnn.name = "appendix-d-random-dnn-tanh" + suffix;
        dnn.activation = ActivationKind{Activation::Tanh};
        dnn.binary = false;
        dnn.learning_rate = 4e-4;
        p.runs.push_back({"bnn_ste", bnn});
        p.runs.push_back({"dnn_tanh", dnn});
    } else {
        std::string known;
        for (const auto& f : preset_figures()) known += (known.empty() ? "" : ", ") + f;
        throw ArgumentError("unknown figure '" + std::string(figure) + "' (expected one of " + known + ")");
    }
    for (const auto& r : p.runs) r.config.validate();
    return p;
}

}  // namespace bnnib
