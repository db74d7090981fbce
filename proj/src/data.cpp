#include "medmamba/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace medmamba {

namespace {

// Channels that receive a planted edge for a class carry only the coupled
// copy; the rest are rhythm carriers.
std::vector<bool> rhythm_channels(const SyntheticSpec& spec, int64_t cls) {
    std::vector<bool> designated(spec.C, true);
    if (!spec.class_edges.empty())
        for (const auto& e : spec.class_edges[cls]) designated[e.dst] = false;
    return designated;
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    Dataset ds;
    ds.T = spec.T;
    ds.C = spec.C;
    ds.K = spec.K;
    Rng rng(mix_seed(spec.seed));

    int64_t subject_id = 0;
    for (int64_t cls = 0; cls < spec.K; ++cls) {
        const auto designated = rhythm_channels(spec, cls);
        const double freq = spec.class_freq[cls];
        for (int64_t s = 0; s < spec.subjects_per_class; ++s, ++subject_id) {
            std::vector<double> offset(spec.C);
            for (int64_t c = 0; c < spec.C; ++c)
                offset[c] = rng.normal() * spec.subject_offset_std;
            for (int64_t i = 0; i < spec.samples_per_subject; ++i) {
                // base rhythms, one random phase per designated channel
                std::vector<std::vector<double>> base(spec.C);
                for (int64_t c = 0; c < spec.C; ++c) {
                    if (!designated[c]) continue;
                    const double phase = rng.uniform(0.0, 2.0 * M_PI);
                    base[c].resize(spec.T);
                    for (int64_t t = 0; t < spec.T; ++t)
                        base[c][t] =
                            std::sin(2.0 * M_PI * freq * double(t) / double(spec.T) + phase);
                }
                Sample sample;
                sample.label = cls;
                sample.subject_id = subject_id;
                sample.x = Tensor<float>(Shape{spec.T, spec.C});
                for (int64_t t = 0; t < spec.T; ++t)
                    for (int64_t c = 0; c < spec.C; ++c)
                        if (designated[c]) sample.x.at2(t, c) = float(base[c][t]);
                if (!spec.class_edges.empty()) {
                    for (const auto& e : spec.class_edges[cls]) {
                        if (base[e.src].empty()) continue;  // source carries no rhythm
                        for (int64_t t = e.lag; t < spec.T; ++t)
                            sample.x.at2(t, e.dst) +=
                                float(e.gain * base[e.src][t - e.lag]);
                    }
                }
                for (int64_t t = 0; t < spec.T; ++t)
                    for (int64_t c = 0; c < spec.C; ++c)
                        sample.x.at2(t, c) += float(rng.normal() * spec.noise_std + offset[c]);
                ds.samples.push_back(std::move(sample));
            }
        }
    }
    return ds;
}

Tensor<float> inject_drift_slopes(const Tensor<float>& x, double s,
                                  const std::vector<double>& slopes) {
    const int64_t T = x.dim(0), C = x.dim(1);
    if (static_cast<int64_t>(slopes.size()) != C)
        throw std::invalid_argument("inject_drift: one slope per channel required");
    Tensor<float> out = x.clone();
    for (int64_t t = 0; t < T; ++t) {
        const double ramp = double(t + 1) / double(T) - 0.5;  // t indexed 1..T
        for (int64_t c = 0; c < C; ++c)
            out.at2(t, c) += float(s * slopes[c] * ramp);
    }
    return out;
}

Tensor<float> inject_drift(const Tensor<float>& x, double s, Rng& rng) {
    if (s < 0) throw std::invalid_argument("inject_drift: s >= 0 required");
    const int64_t T = x.dim(0), C = x.dim(1);
    std::vector<double> slopes(C);
    for (int64_t c = 0; c < C; ++c) {
        double mean = 0;
        for (int64_t t = 0; t < T; ++t) mean += x.at2(t, c);
        mean /= double(T);
        double var = 0;
        for (int64_t t = 0; t < T; ++t) {
            const double d = x.at2(t, c) - mean;
            var += d * d;
        }
        const double sigma = std::sqrt(var / double(T));
        slopes[c] = rng.uniform(-sigma, sigma);
    }
    return inject_drift_slopes(x, s, slopes);
}

Tensor<float> mask_channels(const Tensor<float>& x, double p, Rng& rng) {
    if (p < 0 || p > 1) throw std::invalid_argument("mask_channels: p in [0,1] required");
    const int64_t T = x.dim(0), C = x.dim(1);
    const int64_t m = static_cast<int64_t>(std::floor(p * double(C)));
    std::vector<int64_t> chans(C);
    std::iota(chans.begin(), chans.end(), 0);
    rng.shuffle(chans);
    Tensor<float> out = x.clone();
    for (int64_t i = 0; i < m; ++i)
        for (int64_t t = 0; t < T; ++t) out.at2(t, chans[i]) = 0.f;
    return out;
}

namespace {

void take(const Dataset& src, const std::vector<size_t>& idx, Dataset& dst) {
    dst.T = src.T;
    dst.C = src.C;
    dst.K = src.K;
    for (size_t i : idx) dst.samples.push_back(src.samples[i]);
}

// floor allocation per class with a deterministic largest-remainder fixup
// so the global split sizes are hit exactly
std::vector<std::array<int64_t, 3>> allocate(const std::vector<int64_t>& counts, double r_train,
                                             double r_val, int64_t n_train, int64_t n_val) {
    const size_t G = counts.size();
    std::vector<std::array<int64_t, 3>> out(G);
    for (int phase = 0; phase < 2; ++phase) {
        const double ratio = phase == 0 ? r_train : r_val;
        const int64_t target = phase == 0 ? n_train : n_val;
        std::vector<std::pair<double, size_t>> rem;
        int64_t assigned = 0;
        for (size_t g = 0; g < G; ++g) {
            const double want = ratio * double(counts[g]);
            out[g][phase] = static_cast<int64_t>(std::floor(want));
            assigned += out[g][phase];
            rem.push_back({want - std::floor(want), g});
        }
        std::sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        for (size_t k = 0; assigned < target && k < rem.size(); ++k) {
            const size_t g = rem[k].second;
            const int64_t used = out[g][0] + (phase == 1 ? out[g][1] : 0);
            if (used < counts[g]) {
                ++out[g][phase];
                ++assigned;
            }
        }
    }
    for (size_t g = 0; g < G; ++g) out[g][2] = counts[g] - out[g][0] - out[g][1];
    return out;
}

}  // namespace

SplitResult split(const Dataset& ds, const SplitSpec& spec) {
    if (ds.empty()) throw std::invalid_argument("split: empty dataset");
    if (spec.train <= 0 || spec.val <= 0 || spec.test <= 0 ||
        std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9)
        throw std::invalid_argument("split: ratios must be positive and sum to 1");
    Rng rng(mix_seed(spec.seed));
    SplitResult out;

    if (spec.mode == SplitMode::SD) {
        const int64_t n = static_cast<int64_t>(ds.size());
        const int64_t n_train = static_cast<int64_t>(std::floor(spec.train * double(n)));
        const int64_t n_val = static_cast<int64_t>(std::floor(spec.val * double(n)));
        // group by class, shuffle within groups
        std::vector<std::vector<size_t>> by_class(ds.K);
        for (size_t i = 0; i < ds.size(); ++i) by_class[ds.samples[i].label].push_back(i);
        for (auto& g : by_class) rng.shuffle(g);
        std::vector<int64_t> counts;
        for (auto& g : by_class) counts.push_back(static_cast<int64_t>(g.size()));
        auto alloc = allocate(counts, spec.train, spec.val, n_train, n_val);
        std::vector<size_t> tr, va, te;
        for (size_t g = 0; g < by_class.size(); ++g) {
            const auto& idx = by_class[g];
            int64_t pos = 0;
            for (int64_t i = 0; i < alloc[g][0]; ++i) tr.push_back(idx[pos++]);
            for (int64_t i = 0; i < alloc[g][1]; ++i) va.push_back(idx[pos++]);
            for (int64_t i = 0; i < alloc[g][2]; ++i) te.push_back(idx[pos++]);
        }
        take(ds, tr, out.train);
        take(ds, va, out.val);
        take(ds, te, out.test);
        return out;
    }

    // SI: assign whole subjects, stratified by the subject's class
    std::vector<int64_t> subject_ids;
    std::vector<int64_t> subject_class;
    std::vector<std::vector<size_t>> subject_samples;
    for (size_t i = 0; i < ds.size(); ++i) {
        const int64_t sid = ds.samples[i].subject_id;
        auto it = std::find(subject_ids.begin(), subject_ids.end(), sid);
        size_t pos;
        if (it == subject_ids.end()) {
            pos = subject_ids.size();
            subject_ids.push_back(sid);
            subject_class.push_back(ds.samples[i].label);
            subject_samples.emplace_back();
        } else {
            pos = static_cast<size_t>(it - subject_ids.begin());
        }
        subject_samples[pos].push_back(i);
    }
    const int64_t n_sub = static_cast<int64_t>(subject_ids.size());
    if (n_sub < 3) throw std::invalid_argument("split: SI requires at least 3 subjects");

    std::vector<std::vector<size_t>> by_class(ds.K);
    for (size_t s = 0; s < subject_ids.size(); ++s) by_class[subject_class[s]].push_back(s);
    for (auto& g : by_class) rng.shuffle(g);

    const int64_t s_train = static_cast<int64_t>(std::floor(spec.train * double(n_sub)));
    const int64_t s_val = static_cast<int64_t>(std::floor(spec.val * double(n_sub)));
    std::vector<int64_t> counts;
    for (auto& g : by_class) counts.push_back(static_cast<int64_t>(g.size()));
    auto alloc = allocate(counts, spec.train, spec.val, std::max<int64_t>(s_train, 1),
                          std::max<int64_t>(s_val, 1));
    std::vector<size_t> tr, va, te;
    for (size_t g = 0; g < by_class.size(); ++g) {
        const auto& subs = by_class[g];
        int64_t pos = 0;
        for (int64_t i = 0; i < alloc[g][0]; ++i, ++pos)
            for (size_t q : subject_samples[subs[pos]]) tr.push_back(q);
        for (int64_t i = 0; i < alloc[g][1]; ++i, ++pos)
            for (size_t q : subject_samples[subs[pos]]) va.push_back(q);
        for (int64_t i = 0; i < alloc[g][2]; ++i, ++pos)
            for (size_t q : subject_samples[subs[pos]]) te.push_back(q);
    }
    if (va.empty() || te.empty())
        throw std::invalid_argument("split: SI ratios leave an empty split");
    take(ds, tr, out.train);
    take(ds, va, out.val);
    take(ds, te, out.test);
    return out;
}

Dataset load_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_csv: cannot open " + path);
    Dataset ds;
    std::string line;
    int lineno = 0;
    auto fail = [&](const std::string& what) {
        throw std::runtime_error("load_csv: " + path + ":" + std::to_string(lineno) + ": " + what);
    };
    if (!std::getline(f, line)) fail("missing header");
    ++lineno;
    if (std::sscanf(line.c_str(), "%ld,%ld,%ld", &ds.T, &ds.C, &ds.K) != 3)
        fail("header must be T,C,K");
    if (ds.T < 1 || ds.C < 1 || ds.K < 2) fail("invalid header dimensions");
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        Sample s;
        long label, subject;
        if (std::sscanf(line.c_str(), "%ld,%ld", &label, &subject) != 2)
            fail("expected 'label,subject_id'");
        if (label < 0 || label >= ds.K) fail("label out of range [0," + std::to_string(ds.K) + ")");
        s.label = label;
        s.subject_id = subject;
        s.x = Tensor<float>(Shape{ds.T, ds.C});
        for (int64_t t = 0; t < ds.T; ++t) {
            if (!std::getline(f, line)) fail("truncated sample: expected " + std::to_string(ds.T) +
                                             " signal rows");
            ++lineno;
            std::istringstream is(line);
            std::string tok;
            for (int64_t c = 0; c < ds.C; ++c) {
                if (!std::getline(is, tok, ',')) fail("row has fewer than C values");
                try {
                    s.x.at2(t, c) = std::stof(tok);
                } catch (const std::exception&) {
                    fail("bad number '" + tok + "'");
                }
            }
            if (std::getline(is, tok, ',')) fail("row has more than C values");
        }
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

void save_csv(const Dataset& ds, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_csv: cannot open " + path);
    char buf[64];
    f << ds.T << "," << ds.C << "," << ds.K << "\n";
    for (const auto& s : ds.samples) {
        f << s.label << "," << s.subject_id << "\n";
        for (int64_t t = 0; t < ds.T; ++t) {
            for (int64_t c = 0; c < ds.C; ++c) {
                std::snprintf(buf, sizeof(buf), "%.9g", double(s.x.at2(t, c)));
                f << (c ? "," : "") << buf;
            }
            f << "\n";
        }
    }
}

Dataset standardize(const Dataset& ds) {
    Dataset out;
    out.T = ds.T;
    out.C = ds.C;
    out.K = ds.K;
    for (const auto& s : ds.samples) {
        Sample n;
        n.label = s.label;
        n.subject_id = s.subject_id;
        n.x = Tensor<float>(Shape{ds.T, ds.C});
        for (int64_t c = 0; c < ds.C; ++c) {
            double mean = 0;
            for (int64_t t = 0; t < ds.T; ++t) mean += s.x.at2(t, c);
            mean /= double(ds.T);
            double var = 0;
            for (int64_t t = 0; t < ds.T; ++t) {
                const double d = s.x.at2(t, c) - mean;
                var += d * d;
            }
            const double sd = std::max(std::sqrt(var / double(ds.T)), 1e-8);
            for (int64_t t = 0; t < ds.T; ++t)
                n.x.at2(t, c) = float((s.x.at2(t, c) - mean) / sd);
        }
        out.samples.push_back(std::move(n));
    }
    return out;
}

}  // namespace medmamba
