#include "medmamba/config.hpp"

#include <fstream>
#include <sstream>

namespace medmamba {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(trim(cur));
    return out;
}

std::vector<int64_t> parse_int_list(const std::string& s) {
    std::vector<int64_t> out;
    for (const auto& tok : split(s, ','))
        if (!tok.empty()) out.push_back(std::stoll(tok));
    return out;
}

std::vector<uint64_t> parse_u64_list(const std::string& s) {
    std::vector<uint64_t> out;
    for (const auto& tok : split(s, ','))
        if (!tok.empty()) out.push_back(std::stoull(tok));
    return out;
}

std::vector<double> parse_double_list(const std::string& s) {
    std::vector<double> out;
    for (const auto& tok : split(s, ','))
        if (!tok.empty()) out.push_back(std::stod(tok));
    return out;
}

// Edge lists are written as "src>dst@lag*gain" items separated by ';',
// grouped per class by '|'.
std::vector<std::vector<PlantedEdge>> parse_edges(const std::string& s) {
    std::vector<std::vector<PlantedEdge>> out;
    for (const auto& cls : split(s, '|')) {
        std::vector<PlantedEdge> edges;
        for (const auto& item : split(cls, ';')) {
            if (item.empty()) continue;
            PlantedEdge e;
            size_t gt = item.find('>');
            size_t at = item.find('@');
            size_t star = item.find('*');
            if (gt == std::string::npos || at == std::string::npos || star == std::string::npos)
                throw std::invalid_argument("config: bad edge spec '" + item + "'");
            e.src = std::stoi(item.substr(0, gt));
            e.dst = std::stoi(item.substr(gt + 1, at - gt - 1));
            e.lag = std::stoi(item.substr(at + 1, star - at - 1));
            e.gain = std::stod(item.substr(star + 1));
            edges.push_back(e);
        }
        out.push_back(std::move(edges));
    }
    return out;
}

}  // namespace

SyntheticSpec SyntheticSpec::defaults() {
    SyntheticSpec s;
    // Even channels carry class rhythms with independent random phases;
    // odd channels carry only the planted couplings. Classes 1 and 2 share
    // a frequency and differ purely in the coupling wiring, so the
    // cross-channel structure is the only cue separating them.
    s.class_edges = {
        {{0, 1, 3, 0.9}, {2, 3, 5, 0.9}, {4, 5, 7, 0.9}, {6, 7, 4, 0.9}},
        {{0, 1, 3, 0.9}, {2, 3, 5, 0.9}, {4, 5, 7, 0.9}, {6, 7, 4, 0.9}},
        {{2, 1, 3, 0.9}, {4, 3, 5, 0.9}, {6, 5, 7, 0.9}, {0, 7, 4, 0.9}},
    };
    return s;
}

void SyntheticSpec::validate() const {
    if (K < 2 || C < 1 || T < 2) throw std::invalid_argument("synthetic: K>=2, C>=1, T>=2");
    if (static_cast<int64_t>(class_freq.size()) != K)
        throw std::invalid_argument("synthetic: one rhythm frequency per class required");
    if (!class_edges.empty() && static_cast<int64_t>(class_edges.size()) != K)
        throw std::invalid_argument("synthetic: one edge list per class required");
    if (subjects_per_class < 1 || samples_per_subject < 1)
        throw std::invalid_argument("synthetic: positive subject/sample counts required");
    for (double f : class_freq)
        if (f >= static_cast<double>(T) / 2.0)
            throw std::invalid_argument("synthetic: class frequency above Nyquist");
    for (const auto& cls : class_edges)
        for (const auto& e : cls) {
            if (e.lag < 0 || e.lag >= T) throw std::invalid_argument("synthetic: lag out of range");
            if (e.src < 0 || e.src >= C || e.dst < 0 || e.dst >= C)
                throw std::invalid_argument("synthetic: edge channel out of range");
        }
}

std::string VariantSpec::tag() const {
    switch (kind) {
        case Variant::Full: return "full";
        case Variant::NoMce: return "no-mce";
        case Variant::NoTdsse: return "no-tdsse";
        case Variant::NoSgm: return "no-sgm";
        case Variant::FixedGraph: return "fixed-graph";
        case Variant::NoSp: return "no-sp";
        case Variant::NoDag: return "no-dag";
        case Variant::RawOnly: return "raw-only";
        case Variant::RawDiff: return "raw+diff";
        case Variant::RawFreq: return "raw+freq";
        case Variant::KernelSubset: {
            std::string s = "kernel-subset(";
            for (size_t i = 0; i < kernel_subset.size(); ++i)
                s += (i ? "," : "") + std::to_string(kernel_subset[i]);
            return s + ")";
        }
    }
    return "?";
}

VariantSpec parse_variant(const std::string& tag) {
    VariantSpec v;
    if (tag == "full") v.kind = Variant::Full;
    else if (tag == "no-mce") v.kind = Variant::NoMce;
    else if (tag == "no-tdsse") v.kind = Variant::NoTdsse;
    else if (tag == "no-sgm") v.kind = Variant::NoSgm;
    else if (tag == "fixed-graph") v.kind = Variant::FixedGraph;
    else if (tag == "no-sp") v.kind = Variant::NoSp;
    else if (tag == "no-dag") v.kind = Variant::NoDag;
    else if (tag == "raw-only") v.kind = Variant::RawOnly;
    else if (tag == "raw+diff") v.kind = Variant::RawDiff;
    else if (tag == "raw+freq") v.kind = Variant::RawFreq;
    else if (tag.rfind("kernel-subset(", 0) == 0 && tag.back() == ')') {
        v.kind = Variant::KernelSubset;
        v.kernel_subset = parse_int_list(tag.substr(14, tag.size() - 15));
        if (v.kernel_subset.empty())
            throw std::invalid_argument("variant: empty kernel subset in '" + tag + "'");
    } else {
        throw std::invalid_argument("variant: unknown tag '" + tag + "'");
    }
    return v;
}

std::vector<std::string> core_ablation_tags() {
    return {"full", "no-mce", "no-tdsse", "no-sgm"};
}

KeyValues parse_config_text(const std::string& text) {
    KeyValues kv;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                        " is not key=value: '" + line + "'");
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

KeyValues load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str());
}

void apply_config(const KeyValues& kv, MedMambaConfig& cfg) {
    for (const auto& [k, v] : kv) {
        if (k == "D") cfg.D = std::stoll(v);
        else if (k == "L") cfg.L = std::stoll(v);
        else if (k == "d_state") cfg.d_state = std::stoll(v);
        else if (k == "d_conv") cfg.d_conv = std::stoll(v);
        else if (k == "E") cfg.E = std::stoll(v);
        else if (k == "kernels") cfg.kernels = parse_int_list(v);
        else if (k == "d_node") cfg.d_node = std::stoll(v);
        else if (k == "K") cfg.K = std::stoll(v);
        else if (k == "C") cfg.C = std::stoll(v);
        else if (k == "T") cfg.T = std::stoll(v);
        else if (k == "lambda_sp") cfg.lambda_sp = std::stod(v);
        else if (k == "lambda_dag") cfg.lambda_dag = std::stod(v);
        else if (k == "dropout") cfg.dropout = std::stod(v);
        else if (k == "seed") cfg.seed = std::stoull(v);
    }
}

void apply_config(const KeyValues& kv, TrainConfig& cfg) {
    for (const auto& [k, v] : kv) {
        if (k == "lr") cfg.lr = std::stod(v);
        else if (k == "weight_decay") cfg.weight_decay = std::stod(v);
        else if (k == "max_epochs") cfg.max_epochs = std::stoi(v);
        else if (k == "patience") cfg.patience = std::stoi(v);
        else if (k == "batch_size") cfg.batch_size = std::stoi(v);
        else if (k == "seeds") cfg.seeds = parse_u64_list(v);
        else if (k == "standardize") cfg.standardize = (v == "1" || v == "true");
    }
}

void apply_config(const KeyValues& kv, SyntheticSpec& spec) {
    for (const auto& [k, v] : kv) {
        if (k == "K") spec.K = std::stoll(v);
        else if (k == "C") spec.C = std::stoll(v);
        else if (k == "T") spec.T = std::stoll(v);
        else if (k == "subjects_per_class") spec.subjects_per_class = std::stoll(v);
        else if (k == "samples_per_subject") spec.samples_per_subject = std::stoll(v);
        else if (k == "class_freq") spec.class_freq = parse_double_list(v);
        else if (k == "class_edges") spec.class_edges = parse_edges(v);
        else if (k == "noise_std") spec.noise_std = std::stod(v);
        else if (k == "subject_offset_std") spec.subject_offset_std = std::stod(v);
        else if (k == "data_seed") spec.seed = std::stoull(v);
    }
}

std::string config_to_text(const MedMambaConfig& cfg, const TrainConfig& tc) {
    std::ostringstream os;
    os << "D=" << cfg.D << "\nL=" << cfg.L << "\nd_state=" << cfg.d_state
       << "\nd_conv=" << cfg.d_conv << "\nE=" << cfg.E << "\nkernels=";
    for (size_t i = 0; i < cfg.kernels.size(); ++i) os << (i ? "," : "") << cfg.kernels[i];
    os << "\nd_node=" << cfg.d_node << "\nK=" << cfg.K << "\nC=" << cfg.C << "\nT=" << cfg.T
       << "\nlambda_sp=" << cfg.lambda_sp << "\nlambda_dag=" << cfg.lambda_dag
       << "\ndropout=" << cfg.dropout << "\nseed=" << cfg.seed << "\nlr=" << tc.lr
       << "\nweight_decay=" << tc.weight_decay << "\nmax_epochs=" << tc.max_epochs
       << "\npatience=" << tc.patience << "\nbatch_size=" << tc.batch_size << "\nseeds=";
    for (size_t i = 0; i < tc.seeds.size(); ++i) os << (i ? "," : "") << tc.seeds[i];
    os << "\nstandardize=" << (tc.standardize ? 1 : 0) << "\n";
    return os.str();
}

}  // namespace medmamba
