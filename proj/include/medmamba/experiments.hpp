#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>
#include <vector>

#include "medmamba/train.hpp"

namespace medmamba {

struct SeedRun {
    uint64_t seed = 0;
    RunRecord record;
};

struct VariantRuns {
    std::string tag;
    std::vector<SeedRun> runs;

    double mean(double MetricsReport::* field) const {
        double m = 0;
        for (const auto& r : runs) m += r.record.test.*field;
        return m / double(runs.size());
    }
    double stdev(double MetricsReport::* field) const {
        const double m = mean(field);
        double v = 0;
        for (const auto& r : runs) {
            const double d = r.record.test.*field - m;
            v += d * d;
        }
        return runs.size() > 1 ? std::sqrt(v / double(runs.size() - 1)) : 0.0;
    }
};

// Splits, builds, trains and test-evaluates one (variant, seed). The split
// depends only on (dataset, mode, seed) so every variant sees identical
// folds at a given seed.
template <typename R = float>
SeedRun run_single(const MedMambaConfig& cfg, const std::string& variant_tag,
                   const TrainConfig& tc, const Dataset& ds, SplitMode mode, uint64_t seed,
                   MedMambaModel<R>* model_out = nullptr, SplitResult* split_out = nullptr) {
    SplitSpec sspec;
    sspec.mode = mode;
    sspec.seed = seed;
    SplitResult sr = split(ds, sspec);
    Dataset train_set = tc.standardize ? standardize(sr.train) : sr.train;
    Dataset val_set = tc.standardize ? standardize(sr.val) : sr.val;
    Dataset test_set = tc.standardize ? standardize(sr.test) : sr.test;

    MedMambaConfig mc = cfg;
    mc.T = ds.T;
    mc.C = ds.C;
    mc.K = ds.K;
    auto model = ablation_variant<R>(mc, variant_tag, seed);

    SeedRun out;
    out.seed = seed;
    out.record = train(model, train_set, val_set, tc, seed);
    out.record.test = evaluate(model, test_set).metrics;
    if (model_out) *model_out = std::move(model);
    if (split_out) *split_out = std::move(sr);
    return out;
}

// Trains every requested variant across the seed list.
template <typename R = float>
std::vector<VariantRuns> run_ablation_suite(const MedMambaConfig& cfg, const TrainConfig& tc,
                                            const Dataset& ds, SplitMode mode,
                                            const std::vector<std::string>& tags) {
    std::vector<VariantRuns> out;
    for (const auto& tag : tags) {
        VariantRuns vr;
        vr.tag = tag;
        for (uint64_t seed : tc.seeds) vr.runs.push_back(run_single<R>(cfg, tag, tc, ds, mode, seed));
        out.push_back(std::move(vr));
    }
    return out;
}

struct CurvePoint {
    double level = 0;
    MetricsReport metrics;
};

// Evaluates a trained model on perturbed copies of the test set. Level 0
// reproduces the unperturbed evaluation exactly; each level's perturbation
// stream is fixed by (seed, level index, sample index).
template <typename R = float>
std::vector<CurvePoint> run_robustness(const MedMambaModel<R>& model, const Dataset& test,
                                       const std::string& protocol,
                                       const std::vector<double>& levels, uint64_t seed) {
    if (protocol != "drift" && protocol != "missing")
        throw std::invalid_argument("robustness: protocol must be 'drift' or 'missing'");
    std::vector<CurvePoint> out;
    for (size_t li = 0; li < levels.size(); ++li) {
        const double level = levels[li];
        Dataset perturbed;
        perturbed.T = test.T;
        perturbed.C = test.C;
        perturbed.K = test.K;
        for (size_t i = 0; i < test.size(); ++i) {
            Sample s = test.samples[i];
            Rng rng(derive_seed(seed, 0xBADull, li, i));
            if (level > 0) {
                s.x = (protocol == "drift") ? inject_drift(s.x, level, rng)
                                            : mask_channels(s.x, level, rng);
            }
            perturbed.samples.push_back(std::move(s));
        }
        CurvePoint cp;
        cp.level = level;
        cp.metrics = evaluate(model, perturbed).metrics;
        out.push_back(std::move(cp));
    }
    return out;
}

struct BenchRow {
    int64_t T = 0;
    double median_ms = 0;
};

struct BenchResult {
    std::vector<BenchRow> rows;
    std::vector<double> adjacent_ratios;  // time(2T)/time(T) per pair
    double loglog_slope = 0;
};

namespace detail {

inline void finish_bench(BenchResult& br) {
    for (size_t i = 1; i < br.rows.size(); ++i)
        br.adjacent_ratios.push_back(br.rows[i].median_ms / br.rows[i - 1].median_ms);
    // least-squares slope of log(time) on log(T)
    const size_t n = br.rows.size();
    if (n >= 2) {
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (const auto& r : br.rows) {
            const double lx = std::log(double(r.T));
            const double ly = std::log(r.median_ms);
            sx += lx;
            sy += ly;
            sxx += lx * lx;
            sxy += lx * ly;
        }
        br.loglog_slope = (double(n) * sxy - sx * sy) / (double(n) * sxx - sx * sx);
    }
}

template <typename F>
double median_time_ms(F body, int repeats) {
    body();  // warmup
    std::vector<double> times;
    for (int r = 0; r < repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        body();
        times.push_back(
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count());
    }
    std::sort(times.begin(), times.end());
    return times[times.size() / 2];
}

}  // namespace detail

// Median wall-clock of one forward+backward step per sequence length.
inline BenchResult bench_scaling(MedMambaConfig cfg, const std::vector<int64_t>& T_grid,
                                 int repeats) {
    BenchResult br;
    for (int64_t T : T_grid) {
        MedMambaConfig c = cfg;
        c.T = T;
        auto model = make_model<float>(c, VariantSpec{});
        Rng rng(derive_seed(1, T));
        Tensor<float> x(Shape{T, c.C});
        for (int64_t i = 0; i < x.numel(); ++i) x[i] = float(rng.uniform(-1, 1));
        const double ms = detail::median_time_ms(
            [&]() {
                Tape<float> tape;
                auto bound = bind(tape, model.store, true);
                auto fr = model_forward(model, tape, bound, x);
                tape.backward(total_loss(model, fr, 0));
            },
            repeats);
        br.rows.push_back({T, ms});
    }
    detail::finish_bench(br);
    return br;
}

// Deliberately quadratic reference: an all-pairs interaction along time.
// Exists only so the scaling harness can demonstrate it separates linear-
// family growth from quadratic growth.
inline BenchResult bench_quadratic_control(const std::vector<int64_t>& T_grid, int repeats,
                                           int64_t D = 32) {
    BenchResult br;
    for (int64_t T : T_grid) {
        Rng rng(derive_seed(2, T));
        std::vector<float> x(static_cast<size_t>(T) * D), y(static_cast<size_t>(T) * D);
        for (auto& v : x) v = float(rng.uniform(-1, 1));
        volatile float sink = 0;
        const double ms = detail::median_time_ms(
            [&]() {
                for (int64_t t = 0; t < T; ++t) {
                    float* __restrict__ yt = y.data() + t * D;
                    for (int64_t d = 0; d < D; ++d) yt[d] = 0;
                    for (int64_t s = 0; s < T; ++s) {
                        const float w = 1.0f / float(1 + std::abs(t - s));
                        const float* __restrict__ xs = x.data() + s * D;
                        for (int64_t d = 0; d < D; ++d) yt[d] += w * xs[d];
                    }
                }
                sink = sink + y[0];
            },
            repeats);
        br.rows.push_back({T, ms});
    }
    detail::finish_bench(br);
    return br;
}

}  // namespace medmamba
