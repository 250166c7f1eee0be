#pragma once

#include <map>
#include <optional>
#include <string>

namespace stjgcn {

/// Run configuration. Defaults follow the published PeMSD4 settings:
/// delta_pdf = delta_adt = 0.5, d = 64, K = 3, beta = 1.0, P = Q = 12,
/// Adam at lr 0.001, batch 64, 200 epochs.
struct RunConfig {
    int64_t window = 12;        // P
    int64_t horizons = 12;      // Q
    int64_t hidden = 64;        // d
    int64_t kernel = 3;         // K
    double delta_pdf = 0.5;
    double delta_adt = 0.5;
    double beta = 1.0;
    double lr = 0.001;
    int64_t batch_size = 64;
    int64_t epochs = 200;
    uint64_t seed = 1;
    std::string precision = "f64";  // f32 | f64
    double train_frac = 0.6;
    double val_frac = 0.2;
    double grad_clip = 0.0;  // global-norm clip; 0 disables
    double sigma = 0.0;      // distance-kernel sigma override; 0 = from data
    bool strict = false;     // bit-exact sequential mode
    std::string data;
    std::string distances;
    std::string out;
    std::string checkpoint;

    void validate() const;
};

/// Key = value configuration text (one per line, '#' comments). Unknown keys
/// are errors; `overrides` (e.g. CLI flags) take precedence over the file,
/// which takes precedence over the defaults.
RunConfig parse_config(const std::optional<std::string>& path,
                       const std::map<std::string, std::string>& overrides);

}  // namespace stjgcn
