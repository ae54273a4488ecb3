#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "bnnib/experiment.hpp"

namespace bnnib {

enum class Scale { Desk, Paper };

std::string_view scale_name(Scale s) noexcept;
Scale parse_scale(std::string_view name);

struct PresetRun {
    /// Subdirectory name under the figure's output directory.
    std::string label;
    ExperimentConfig config;
};

struct Preset {
    std::string figure;
    Scale scale = Scale::Desk;
    std::vector<PresetRun> runs;
};

/// Figures with a preset: fig2a, fig2b, fig2c, fig3a, appendix-a, appendix-c,
/// appendix-d.
std::vector<std::string> preset_figures();

/// Configs for one figure. Paper scale carries the published hyperparameters.
/// Desk scale shortens them:
///   synthetic and tic-tac-toe: 2000 epochs, seeds 1..3
///   MNIST: 6000 train / 1000 validation subset, 300 epochs, seeds 1..2
/// mnist_dir is only read by the MNIST figures.
Preset make_preset(std::string_view figure, Scale scale, const std::filesystem::path& mnist_dir = "data/mnist");

/// Calibration constants for the qualitative dynamics check on the desk-scale
/// fig2a run. Revisit them whenever the preset's seeds change.
struct DynamicsThresholds {
    std::size_t loss_window = 100;
    /// Minimum rise of the seed-averaged last-hidden-tap I(T;Y), in bits.
    double ty_rise_bits = 0.2;
    /// Largest tolerated drop from the peak I(T;X) of any binary hidden tap, in bits.
    double max_compression_bits = 0.3;
};
inline constexpr DynamicsThresholds kFig2aDeskThresholds{};

}  // namespace bnnib
