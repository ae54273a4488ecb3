#include "bnnib/report.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

namespace bnnib {

namespace {

std::string num(double v, int precision = 2) {
    if (!std::isfinite(v)) v = 0.0;
    std::array<char, 64> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::fixed, precision);
    std::string s(buf.data(), res.ptr);
    if (s.find_first_not_of("-0.") == std::string::npos && s.front() == '-') s.erase(0, 1);
    return s;
}

std::string escape(std::string_view text) {
    std::string out;
    for (char c : text) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            case '\'': out += "&apos;"; break;
            default: out += c;
        }
    }
    return out;
}

class Svg {
public:
    Svg(double width, double height) {
        out_ += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
        out_ += "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" + num(width, 0) + "\" height=\"" +
                num(height, 0) + "\" viewBox=\"0 0 " + num(width, 0) + " " + num(height, 0) + "\">\n";
        out_ += "<rect x=\"0\" y=\"0\" width=\"" + num(width, 0) + "\" height=\"" + num(height, 0) + "\" fill=\"white\"/>\n";
    }

    void line(double x1, double y1, double x2, double y2, std::string_view stroke, double width = 1.0) {
        out_ += "<line x1=\"" + num(x1) + "\" y1=\"" + num(y1) + "\" x2=\"" + num(x2) + "\" y2=\"" + num(y2) +
                "\" stroke=\"" + std::string(stroke) + "\" stroke-width=\"" + num(width) + "\"/>\n";
    }

    void polyline(const std::vector<std::pair<double, double>>& pts, std::string_view stroke, bool dashed,
                  double width = 1.5) {
        if (pts.empty()) return;
        out_ += "<polyline fill=\"none\" stroke=\"" + std::string(stroke) + "\" stroke-width=\"" + num(width) + "\"";
        if (dashed) out_ += " stroke-dasharray=\"5,3\" stroke-opacity=\"0.6\"";
        out_ += " points=\"";
        for (std::size_t i = 0; i < pts.size(); ++i) {
            if (i) out_ += ' ';
            out_ += num(pts[i].first) + "," + num(pts[i].second);
        }
        out_ += "\"/>\n";
    }

    void circle(double cx, double cy, double r, std::string_view fill) {
        out_ += "<circle cx=\"" + num(cx) + "\" cy=\"" + num(cy) + "\" r=\"" + num(r) + "\" fill=\"" +
                std::string(fill) + "\"/>\n";
    }

    void rect(double x, double y, double w, double h, std::string_view fill, std::string_view stroke = "none") {
        out_ += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(w) + "\" height=\"" + num(h) +
                "\" fill=\"" + std::string(fill) + "\" stroke=\"" + std::string(stroke) + "\"/>\n";
    }

    void text(double x, double y, std::string_view s, std::string_view anchor = "middle", double size = 11,
              double rotate = 0.0) {
        out_ += "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" font-family=\"sans-serif\" font-size=\"" + num(size, 0) +
                "\" text-anchor=\"" + std::string(anchor) + "\"";
        if (rotate != 0.0) out_ += " transform=\"rotate(" + num(rotate, 0) + " " + num(x) + " " + num(y) + ")\"";
        out_ += ">" + escape(s) + "</text>\n";
    }

    std::string finish() {
        out_ += "</svg>\n";
        return std::move(out_);
    }

private:
    std::string out_;
};

// Viridis anchors, sampled at eight evenly spaced positions.
constexpr std::array<std::array<int, 3>, 8> kViridis{{{68, 1, 84},
                                                      {70, 50, 127},
                                                      {54, 92, 141},
                                                      {39, 127, 142},
                                                      {31, 161, 135},
                                                      {74, 194, 109},
                                                      {159, 218, 58},
                                                      {253, 231, 37}}};

std::string color_at(double t) {
    t = std::clamp(t, 0.0, 1.0) * static_cast<double>(kViridis.size() - 1);
    const auto i = std::min(static_cast<std::size_t>(t), kViridis.size() - 2);
    const double f = t - static_cast<double>(i);
    std::string out = "#";
    constexpr char hex[] = "0123456789abcdef";
    for (int c = 0; c < 3; ++c) {
        const double v = kViridis[i][c] + f * (kViridis[i + 1][c] - kViridis[i][c]);
        const int b = static_cast<int>(std::lround(v));
        out += hex[b >> 4];
        out += hex[b & 15];
    }
    return out;
}

double epoch_position(std::size_t epoch, std::size_t last) {
    return last == 0 ? 1.0 : std::log1p(static_cast<double>(epoch)) / std::log1p(static_cast<double>(last));
}

double nice_step(double span) {
    if (!(span > 0.0)) return 1.0;
    const double raw = span / 5.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    const double r = raw / mag;
    return (r < 1.5 ? 1.0 : r < 3.5 ? 2.0 : r < 7.5 ? 5.0 : 10.0) * mag;
}

int decimals_for(double step) { return step >= 1.0 ? 0 : static_cast<int>(std::ceil(-std::log10(step) - 1e-9)); }

struct Frame {
    double left, top, width, height;
    double x0, x1, y0, y1;
    bool log_x = false;

    double px(double x) const {
        const double v = log_x ? std::log10(x) : x;
        const double lo = log_x ? std::log10(x0) : x0;
        const double hi = log_x ? std::log10(x1) : x1;
        return left + (v - lo) / (hi - lo) * width;
    }
    double py(double y) const { return top + height - (y - y0) / (y1 - y0) * height; }
};

void draw_axes(Svg& svg, const Frame& f, std::string_view xlabel, std::string_view ylabel, double font = 11) {
    svg.rect(f.left, f.top, f.width, f.height, "none", "black");
    if (f.log_x) {
        for (double t = 1.0; t <= f.x1 * 1.0000001; t *= 10.0) {
            if (t < f.x0) continue;
            svg.line(f.px(t), f.top + f.height, f.px(t), f.top + f.height + 4, "black");
            svg.text(f.px(t), f.top + f.height + 16, num(t, 0), "middle", font);
        }
    } else {
        const double step = nice_step(f.x1 - f.x0);
        for (double t = std::ceil(f.x0 / step) * step; t <= f.x1 + step * 1e-9; t += step) {
            svg.line(f.px(t), f.top + f.height, f.px(t), f.top + f.height + 4, "black");
            svg.text(f.px(t), f.top + f.height + 16, num(t, decimals_for(step)), "middle", font);
        }
    }
    const double step = nice_step(f.y1 - f.y0);
    for (double t = std::ceil(f.y0 / step) * step; t <= f.y1 + step * 1e-9; t += step) {
        svg.line(f.left - 4, f.py(t), f.left, f.py(t), "black");
        svg.text(f.left - 6, f.py(t) + 4, num(t, decimals_for(step)), "end", font);
    }
    svg.text(f.left + f.width / 2, f.top + f.height + 32, xlabel, "middle", font + 1);
    svg.text(f.left - 40, f.top + f.height / 2, ylabel, "middle", font + 1, -90);
}

std::string tap_label(const TapId& tap) {
    switch (tap.kind) {
        case TapKind::Softmax: return "output";
        case TapKind::PostBn: return "layer " + std::to_string(tap.layer + 1) + " bn";
        case TapKind::PostAct: return "layer " + std::to_string(tap.layer + 1);
    }
    return {};
}

std::map<TapId, std::vector<const AveragedSnapshot*>> series_by_tap(const AveragedLog& avg, Split split) {
    std::map<TapId, std::vector<const AveragedSnapshot*>> out;
    for (const auto& s : avg.snapshots) {
        if (s.split == split) out[s.tap].push_back(&s);
    }
    for (auto& [_, v] : out) {
        std::sort(v.begin(), v.end(), [](const auto* a, const auto* b) { return a->epoch < b->epoch; });
    }
    return out;
}

std::size_t last_epoch(const AveragedLog& avg) { return avg.epochs.empty() ? 0 : avg.epochs.back().epoch; }

void draw_colorbar(Svg& svg, double x, double y, double h, std::size_t last) {
    constexpr int kSteps = 32;
    for (int i = 0; i < kSteps; ++i) {
        const double t = (i + 0.5) / kSteps;
        svg.rect(x, y + h - (i + 1) * h / kSteps, 12, h / kSteps + 0.5, color_at(t));
    }
    svg.rect(x, y, 12, h, "none", "black");
    std::vector<std::size_t> ticks{0};
    for (std::size_t t = 1; t <= last; t *= 10) ticks.push_back(t);
    if (ticks.back() != last) ticks.push_back(last);
    for (std::size_t t : ticks) {
        const double ty = y + h - epoch_position(t, last) * h;
        svg.line(x + 12, ty, x + 16, ty, "black");
        svg.text(x + 19, ty + 4, std::to_string(t), "start", 10);
    }
    svg.text(x + 6, y - 8, "epoch", "middle", 11);
}

bool tap_selected(const TapId& tap, TapSelector sel) {
    if (tap.kind == TapKind::Softmax) return true;
    switch (sel) {
        case TapSelector::PostAct: return tap.kind == TapKind::PostAct;
        case TapSelector::PostBn: return tap.kind == TapKind::PostBn;
        case TapSelector::All: return true;
    }
    return false;
}

void scatter_panel(Svg& svg, const Frame& f, const std::vector<const AveragedSnapshot*>& pts, std::size_t last,
                   double radius) {
    std::vector<std::pair<double, double>> path;
    for (const auto* s : pts) path.emplace_back(f.px(s->i_tx_bits.mean), f.py(s->i_ty_bits.mean));
    svg.polyline(path, "#bbbbbb", false, 0.6);
    for (const auto* s : pts) {
        svg.circle(f.px(s->i_tx_bits.mean), f.py(s->i_ty_bits.mean), radius, color_at(epoch_position(s->epoch, last)));
    }
}

Frame info_frame(const AveragedLog& avg, double left, double top, double width, double height) {
    double x1 = avg.ceiling_tx_bits, y1 = avg.ceiling_ty_bits;
    for (const auto& s : avg.snapshots) {
        x1 = std::max(x1, s.i_tx_bits.mean);
        y1 = std::max(y1, s.i_ty_bits.mean);
    }
    return {left, top, width, height, 0.0, x1 > 0.0 ? x1 : 1.0, 0.0, y1 > 0.0 ? y1 : 1.0};
}

}  // namespace

std::string_view plot_kind_name(PlotKind kind) noexcept {
    switch (kind) {
        case PlotKind::InfoPlane: return "info_plane";
        case PlotKind::Loss: return "loss";
        case PlotKind::Accuracy: return "accuracy";
        case PlotKind::GradEvolution: return "grad_evolution";
        case PlotKind::LayerwisePanels: return "layerwise_panels";
    }
    return "info_plane";
}

PlotKind parse_plot_kind(std::string_view name) {
    for (auto k : {PlotKind::InfoPlane, PlotKind::Loss, PlotKind::Accuracy, PlotKind::GradEvolution,
                   PlotKind::LayerwisePanels}) {
        if (plot_kind_name(k) == name) return k;
    }
    throw ArgumentError("unknown plot kind '" + std::string(name) +
                        "' (expected info_plane, loss, accuracy, grad_evolution or layerwise_panels)");
}

std::string_view tap_selector_name(TapSelector sel) noexcept {
    switch (sel) {
        case TapSelector::PostAct: return "post_act";
        case TapSelector::PostBn: return "post_bn";
        case TapSelector::All: return "all";
    }
    return "post_act";
}

TapSelector parse_tap_selector(std::string_view name) {
    for (auto s : {TapSelector::PostAct, TapSelector::PostBn, TapSelector::All}) {
        if (tap_selector_name(s) == name) return s;
    }
    throw ArgumentError("unknown tap selector '" + std::string(name) + "' (expected post_act, post_bn or all)");
}

std::vector<TapId> expected_taps(const ExperimentConfig& config) {
    std::vector<TapId> taps;
    for (std::size_t l = 0; l < config.hidden_widths.size(); ++l) {
        if (config.batchnorm) taps.push_back({l, TapKind::PostBn});
        taps.push_back({l, TapKind::PostAct});
    }
    taps.push_back({config.hidden_widths.size(), TapKind::Softmax});
    return taps;
}

void require_complete_snapshots(const AveragedLog& avg) {
    std::set<std::tuple<std::size_t, Split, TapId>> have;
    for (const auto& s : avg.snapshots) have.insert({s.epoch, s.split, s.tap});
    const auto taps = expected_taps(avg.config);
    std::vector<std::size_t> absent;
    for (std::size_t e : mi_epochs(avg.config)) {
        bool ok = true;
        for (Split sp : {Split::Train, Split::Test}) {
            for (const auto& t : taps) ok = ok && have.count({e, sp, t});
        }
        if (!ok) absent.push_back(e);
    }
    if (!absent.empty()) {
        std::string list;
        for (std::size_t i = 0; i < absent.size(); ++i) list += (i ? ", " : "") + std::to_string(absent[i]);
        throw FormatError("missing MI snapshots for scheduled epochs: " + list);
    }
}

std::string plot_information_plane(const AveragedLog& avg, Split split, TapSelector taps) {
    if (avg.seeds.empty()) throw ArgumentError("information plane: no runs");
    require_complete_snapshots(avg);
    const auto series = series_by_tap(avg, split);
    const std::size_t last = last_epoch(avg);

    Svg svg(720, 500);
    const Frame f = info_frame(avg, 70, 40, 520, 390);
    draw_axes(svg, f, "I(T;X) [bits]", "I(T;Y) [bits]");
    svg.text(f.left + f.width / 2, 22,
             avg.config.name + " (" + std::string(split_name(split)) + ", " + std::to_string(avg.seeds.size()) +
                 (avg.seeds.size() == 1 ? " seed)" : " seeds)"),
             "middle", 13);

    // Output tap first, then hidden taps from the last layer back to the first.
    std::vector<TapId> order;
    for (const auto& [tap, _] : series) {
        if (tap_selected(tap, taps)) order.push_back(tap);
    }
    std::sort(order.begin(), order.end(), [](const TapId& a, const TapId& b) { return b < a; });
    for (const auto& tap : order) scatter_panel(svg, f, series.at(tap), last, 3.0);

    for (const auto& tap : order) {
        const auto* end = series.at(tap).back();
        svg.text(f.px(end->i_tx_bits.mean) + 5, f.py(end->i_ty_bits.mean) - 5, tap_label(tap), "start", 9);
    }
    draw_colorbar(svg, f.left + f.width + 30, f.top + 20, f.height - 40, last);
    return svg.finish();
}

std::string plot_layerwise_panels(const AveragedLog& avg, Split split) {
    if (avg.seeds.empty()) throw ArgumentError("layerwise panels: no runs");
    require_complete_snapshots(avg);
    const auto series = series_by_tap(avg, split);
    const auto taps = expected_taps(avg.config);
    const std::size_t last = last_epoch(avg);

    constexpr std::size_t kCols = 4;
    constexpr double kPanelW = 240, kPanelH = 200;
    const std::size_t rows = (taps.size() + kCols - 1) / kCols;
    Svg svg(kCols * kPanelW + 80, rows * kPanelH + 50);
    svg.text((kCols * kPanelW) / 2, 20, avg.config.name + " per tap (" + std::string(split_name(split)) + ")", "middle",
             13);
    for (std::size_t i = 0; i < taps.size(); ++i) {
        const double left = static_cast<double>(i % kCols) * kPanelW + 55;
        const double top = static_cast<double>(i / kCols) * kPanelH + 45;
        const Frame f = info_frame(avg, left, top, kPanelW - 75, kPanelH - 70);
        draw_axes(svg, f, "I(T;X)", "I(T;Y)", 9);
        svg.text(f.left + f.width / 2, top - 6, tap_label(taps[i]), "middle", 11);
        scatter_panel(svg, f, series.at(taps[i]), last, 2.0);
    }
    draw_colorbar(svg, kCols * kPanelW + 20, 60, rows * kPanelH - 80, last);
    return svg.finish();
}

std::string plot_scalar_series(const AveragedLog& avg, PlotKind kind) {
    if (avg.seeds.empty() || avg.epochs.empty()) throw ArgumentError("scalar plot: no runs");
    struct Series {
        std::string label;
        std::string color;
        std::vector<std::pair<double, MeanVar>> values;
    };
    std::vector<Series> series;
    std::string ylabel;
    bool log_x = false;
    switch (kind) {
        case PlotKind::Loss:
        case PlotKind::Accuracy: {
            const bool loss = kind == PlotKind::Loss;
            ylabel = loss ? "cross-entropy" : "accuracy";
            Series tr{"train", "#1f77b4", {}}, va{"validation", "#d62728", {}};
            for (const auto& e : avg.epochs) {
                tr.values.emplace_back(static_cast<double>(e.epoch), loss ? e.train_loss : e.train_acc);
                va.values.emplace_back(static_cast<double>(e.epoch), loss ? e.val_loss : e.val_acc);
            }
            series = {tr, va};
            break;
        }
        case PlotKind::GradEvolution: {
            ylabel = "gradient norm";
            log_x = true;
            Series mean{"mean", "#1f77b4", {}}, sd{"std", "#ff7f0e", {}};
            for (const auto& e : avg.epochs) {
                if (!e.grad_mean_norm || !e.grad_std_norm) continue;
                mean.values.emplace_back(static_cast<double>(e.epoch), *e.grad_mean_norm);
                sd.values.emplace_back(static_cast<double>(e.epoch), *e.grad_std_norm);
            }
            if (mean.values.empty()) throw FormatError("gradient plot: the runs hold no gradient statistics");
            series = {mean, sd};
            break;
        }
        default: throw ArgumentError("plot kind '" + std::string(plot_kind_name(kind)) + "' is not a scalar series");
    }

    double y1 = 0.0, x0 = series[0].values.front().first, x1 = series[0].values.back().first;
    for (const auto& s : series) {
        for (const auto& [_, mv] : s.values) y1 = std::max({y1, mv.mean, mv.var});
    }
    if (kind == PlotKind::Accuracy) y1 = std::max(y1, 1.0);
    if (!(y1 > 0.0)) y1 = 1.0;
    if (log_x) x0 = std::max(x0, 1.0);
    if (!(x1 > x0)) x1 = x0 + 1.0;

    Svg svg(640, 420);
    Frame f{70, 40, 440, 310, x0, x1, 0.0, y1 * 1.05, log_x};
    draw_axes(svg, f, "epoch", ylabel);
    svg.text(f.left + f.width / 2, 22,
             avg.config.name + " " + std::string(plot_kind_name(kind)) + " (" + std::to_string(avg.seeds.size()) +
                 (avg.seeds.size() == 1 ? " seed)" : " seeds)"),
             "middle", 13);
    double ly = f.top + 10;
    for (const auto& s : series) {
        std::vector<std::pair<double, double>> mean, var;
        for (const auto& [x, mv] : s.values) {
            mean.emplace_back(f.px(x), f.py(mv.mean));
            var.emplace_back(f.px(x), f.py(mv.var));
        }
        svg.polyline(mean, s.color, false);
        svg.polyline(var, s.color, true);
        svg.line(f.left + f.width + 12, ly, f.left + f.width + 32, ly, s.color, 1.5);
        svg.text(f.left + f.width + 36, ly + 4, s.label + " mean", "start", 10);
        ly += 14;
        svg.polyline({{f.left + f.width + 12, ly}, {f.left + f.width + 32, ly}}, s.color, true);
        svg.text(f.left + f.width + 36, ly + 4, s.label + " variance", "start", 10);
        ly += 18;
    }
    return svg.finish();
}

std::string render_plot(const PlotRequest& req) {
    const auto logs = load_run_directory(req.runs_dir);
    if (logs.empty()) throw IoError("no run_*.jsonl files in " + req.runs_dir.string());
    const AveragedLog avg = aggregate_runs(logs);
    switch (req.kind) {
        case PlotKind::InfoPlane: return plot_information_plane(avg, req.split, req.taps);
        case PlotKind::LayerwisePanels: return plot_layerwise_panels(avg, req.split);
        default: return plot_scalar_series(avg, req.kind);
    }
}

void write_plot(const PlotRequest& req) {
    const std::string svg = render_plot(req);
    if (req.output.has_parent_path()) std::filesystem::create_directories(req.output.parent_path());
    std::ofstream out(req.output, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + req.output.string());
    out << svg;
    if (!out) throw IoError("write failed for " + req.output.string());
}

}  // namespace bnnib
