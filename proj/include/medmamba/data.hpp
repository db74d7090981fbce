#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "medmamba/config.hpp"
#include "medmamba/rng.hpp"
#include "medmamba/tensor.hpp"

namespace medmamba {

struct Sample {
    Tensor<float> x;  // (T, C)
    int64_t label = 0;
    int64_t subject_id = 0;
};

struct Dataset {
    std::vector<Sample> samples;
    int64_t T = 0, C = 0, K = 0;

    bool empty() const { return samples.empty(); }
    size_t size() const { return samples.size(); }
};

enum class SplitMode { SD, SI };

struct SplitSpec {
    SplitMode mode = SplitMode::SI;
    double train = 0.6, val = 0.2, test = 0.2;
    uint64_t seed = 0;
};

struct SplitResult {
    Dataset train, val, test;
};

// Synthetic cohort: class rhythms with per-(sample, channel) random phases
// on designated channels, lagged coupled copies on edge targets, Gaussian
// noise, and a constant per-subject channel offset. Channels targeted by
// any edge of a class carry only the coupled copy.
Dataset generate_synthetic(const SyntheticSpec& spec);

// x'_{t,c} = x_{t,c} + s * a_c * (t/T - 1/2) with t in {1..T} and
// a_c ~ Uniform(-sigma_c, sigma_c), sigma_c the within-sample std.
Tensor<float> inject_drift(const Tensor<float>& x, double s, Rng& rng);
// Same ramp with the per-channel slopes pinned (test hook).
Tensor<float> inject_drift_slopes(const Tensor<float>& x, double s,
                                  const std::vector<double>& slopes);

// Zeroes exactly floor(p*C) distinct channels.
Tensor<float> mask_channels(const Tensor<float>& x, double p, Rng& rng);

SplitResult split(const Dataset& ds, const SplitSpec& spec);

Dataset load_csv(const std::string& path);
void save_csv(const Dataset& ds, const std::string& path);

// Per-sample per-channel z-score with a 1e-8 std floor.
Dataset standardize(const Dataset& ds);

}  // namespace medmamba
