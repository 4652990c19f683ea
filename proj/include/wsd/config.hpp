#pragma once

#include <string>

#include "wsd/diffusion.hpp"
#include "wsd/fit.hpp"
#include "wsd/metrics.hpp"
#include "wsd/synthetic.hpp"

namespace wsd {

// Everything one end-to-end run needs. "desk" runs on a laptop CPU; "paper"
// carries the reference hyperparameters and is config-complete but sized for
// GPU-scale budgets.
struct RunConfig {
    std::string preset = "desk";
    DatasetConfig dataset;
    FitConfig fit;
    DiffusionTrainConfig diffusion;
    ProbeConfig probes;
    int ddim_steps = 50;
    double ddim_eta = 0.0;
    uint64_t seed = 0;
};

RunConfig make_preset(const std::string& name);

// JSON config: {"preset": "desk", "seed": ..., "dataset": {...}, "fit":
// {...}, "diffusion": {...}, "probes": {...}, "sample": {...}}. Every section
// is optional and overrides the preset field-by-field.
RunConfig load_run_config(const std::string& path);
RunConfig run_config_from_json_text(const std::string& text);

std::string run_config_to_json(const RunConfig& cfg);

}  // namespace wsd
