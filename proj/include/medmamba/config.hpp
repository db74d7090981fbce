#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace medmamba {

struct MedMambaConfig {
    int64_t D = 32;       // hidden width
    int64_t L = 2;        // encoder layers
    int64_t d_state = 8;  // SSM state dimension N
    int64_t d_conv = 4;   // local causal conv width
    int64_t E = 2;        // expansion factor
    std::vector<int64_t> kernels = {3, 5, 7};
    int64_t d_node = 0;  // 0 = max(4, D/2)
    int64_t K = 3;       // classes
    int64_t C = 8;       // channels
    int64_t T = 128;     // sample length
    double lambda_sp = 0.01;
    double lambda_dag = 0.5;
    double dropout = 0.2;
    uint64_t seed = 41;

    int64_t node_dim() const { return d_node > 0 ? d_node : std::max<int64_t>(4, D / 2); }

    void validate() const {
        if (K < 2) throw std::invalid_argument("config: K >= 2 required");
        if (L < 1) throw std::invalid_argument("config: L >= 1 required");
        if (C < 2) throw std::invalid_argument("config: C >= 2 required");
        if (T < 1 || D < 1 || d_state < 1 || E < 1 || d_conv < 1)
            throw std::invalid_argument("config: positive dimensions required");
        if (lambda_sp < 0 || lambda_dag < 0)
            throw std::invalid_argument("config: lambda weights must be >= 0");
        if (dropout < 0 || dropout >= 1)
            throw std::invalid_argument("config: dropout must be in [0, 1)");
        for (int64_t k : kernels)
            if (k < 1 || k % 2 == 0)
                throw std::invalid_argument("config: kernel scales must be odd and >= 1");
    }
};

struct TrainConfig {
    double lr = 5e-4;
    double weight_decay = 1e-5;
    int max_epochs = 100;
    int patience = 10;
    int batch_size = 32;
    std::vector<uint64_t> seeds = {41, 42, 43, 44, 45};
    bool standardize = false;

    void validate() const {
        if (lr <= 0) throw std::invalid_argument("train config: lr > 0 required");
        if (patience > max_epochs)
            throw std::invalid_argument("train config: patience <= max_epochs required");
        if (batch_size < 1 || max_epochs < 1 || seeds.empty())
            throw std::invalid_argument("train config: invalid sizes");
    }
};

// Planted directed coupling: target channel receives gain * source signal
// delayed by lag steps.
struct PlantedEdge {
    int src = 0, dst = 0, lag = 0;
    double gain = 0.0;
};

struct SyntheticSpec {
    int64_t K = 3;
    int64_t C = 8;
    int64_t T = 128;
    int64_t subjects_per_class = 20;
    int64_t samples_per_subject = 20;
    std::vector<double> class_freq = {4.0, 8.0, 8.0};  // cycles per window
    std::vector<std::vector<PlantedEdge>> class_edges;  // per class
    double noise_std = 0.3;
    double subject_offset_std = 1.0;
    uint64_t seed = 7;

    static SyntheticSpec defaults();
    void validate() const;
};

enum class Variant {
    Full,
    NoMce,
    NoTdsse,
    NoSgm,
    FixedGraph,
    NoSp,
    NoDag,
    RawOnly,
    RawDiff,
    RawFreq,
    KernelSubset,
};

struct VariantSpec {
    Variant kind = Variant::Full;
    std::vector<int64_t> kernel_subset;  // KernelSubset only

    std::string tag() const;
};

VariantSpec parse_variant(const std::string& tag);
std::vector<std::string> core_ablation_tags();

// Plain key=value files, one pair per line, '#' starts a comment.
using KeyValues = std::map<std::string, std::string>;
KeyValues parse_config_text(const std::string& text);
KeyValues load_config_file(const std::string& path);

void apply_config(const KeyValues& kv, MedMambaConfig& cfg);
void apply_config(const KeyValues& kv, TrainConfig& cfg);
void apply_config(const KeyValues& kv, SyntheticSpec& spec);
std::string config_to_text(const MedMambaConfig& cfg, const TrainConfig& tc);

}  // namespace medmamba
