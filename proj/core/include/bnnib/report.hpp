#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bnnib/experiment.hpp"

namespace bnnib {

enum class PlotKind { InfoPlane, Loss, Accuracy, GradEvolution, LayerwisePanels };

std::string_view plot_kind_name(PlotKind kind) noexcept;
PlotKind parse_plot_kind(std::string_view name);

/// Which taps an information-plane plot shows.
enum class TapSelector { PostAct, PostBn, All };

std::string_view tap_selector_name(TapSelector sel) noexcept;
TapSelector parse_tap_selector(std::string_view name);

struct PlotRequest {
    PlotKind kind = PlotKind::InfoPlane;
    std::filesystem::path runs_dir;
    Split split = Split::Train;
    TapSelector taps = TapSelector::PostAct;
    std::filesystem::path output;
};

/// Taps every run of this config records, in forward order.
std::vector<TapId> expected_taps(const ExperimentConfig& config);

/// Throws FormatError naming the absent epochs when a scheduled epoch lacks a
/// snapshot for some tap and split.
void require_complete_snapshots(const AveragedLog& avg);

/// Scatter of seed-averaged (I(T;X), I(T;Y)) per tap, colored by log epoch.
/// The softmax tap is always shown; the others follow the selector.
std::string plot_information_plane(const AveragedLog& avg, Split split, TapSelector taps = TapSelector::PostAct);

/// Loss, Accuracy or GradEvolution: seed means solid, across-seed variance dashed.
std::string plot_scalar_series(const AveragedLog& avg, PlotKind kind);

/// One small information-plane panel per tap.
std::string plot_layerwise_panels(const AveragedLog& avg, Split split);

/// Loads and aggregates the runs in req.runs_dir, then renders the requested plot.
std::string render_plot(const PlotRequest& req);
/// render_plot, written to req.output.
void write_plot(const PlotRequest& req);

}  // namespace bnnib
