#pragma once

#include <optional>
#include <string>
#include <vector>

#include "medmamba/config.hpp"
#include "medmamba/mce.hpp"
#include "medmamba/params.hpp"
#include "medmamba/sgm.hpp"
#include "medmamba/tdsse.hpp"

namespace medmamba {

// Per-forward diagnostics: fusion weights, learned adjacency, and the
// structure losses, one entry per layer.
template <typename R>
struct ForwardDiagnostics {
    std::vector<Tensor<R>> alpha;
    std::vector<Tensor<R>> adjacency;
    std::vector<R> l_sp, l_dag;
};

template <typename R>
struct MedMambaModel {
    MedMambaConfig cfg;
    VariantSpec variant;
    ParamStore<R> store;

    bool linear_embedding = false;
    MceIds mce;
    LinearEmbedIds lin_embed;

    struct Layer {
        int ln_gain = -1, ln_bias = -1;
        TdsseIds tdsse;
        SgmIds sgm;
    };
    std::vector<Layer> layers;
    int cls_W = -1, cls_b = -1;

    double lambda_sp_eff = 0, lambda_dag_eff = 0;

    int64_t parameter_count() const { return store.total_scalars(); }

    template <typename R2>
    MedMambaModel<R2> cast() const {
        MedMambaModel<R2> m;
        m.cfg = cfg;
        m.variant = variant;
        m.store = store.template cast<R2>();
        m.linear_embedding = linear_embedding;
        m.mce = mce;
        m.lin_embed = lin_embed;
        for (const auto& l : layers) m.layers.push_back({l.ln_gain, l.ln_bias, l.tdsse, l.sgm});
        m.cls_W = cls_W;
        m.cls_b = cls_b;
        m.lambda_sp_eff = lambda_sp_eff;
        m.lambda_dag_eff = lambda_dag_eff;
        return m;
    }
};

// Deterministic construction: two calls with the same (config, variant,
// seed) produce bit-identical parameter stores.
template <typename R>
MedMambaModel<R> make_model(const MedMambaConfig& cfg, const VariantSpec& variant,
                            std::optional<uint64_t> seed = std::nullopt) {
    cfg.validate();
    MedMambaModel<R> m;
    m.cfg = cfg;
    m.variant = variant;
    Rng rng(mix_seed(seed.value_or(cfg.seed)));

    const Variant kind = variant.kind;
    m.lambda_sp_eff = (kind == Variant::NoSp) ? 0.0 : cfg.lambda_sp;
    m.lambda_dag_eff = (kind == Variant::NoDag) ? 0.0 : cfg.lambda_dag;

    if (kind == Variant::NoMce) {
        m.linear_embedding = true;
        m.lin_embed = make_linear_embed(m.store, "embed", cfg.D, rng);
    } else {
        std::vector<int64_t> kernels = cfg.kernels;
        if (kind == Variant::KernelSubset) kernels = variant.kernel_subset;
        for (int64_t k : kernels)
            if (k > cfg.T)
                throw std::invalid_argument("model: kernel scale exceeds sample length");
        m.mce = make_mce(m.store, "mce", cfg.C, cfg.D, kernels, rng);
    }

    const bool has_diff = (kind != Variant::NoTdsse && kind != Variant::RawOnly &&
                           kind != Variant::RawFreq);
    const bool has_freq = (kind != Variant::NoTdsse && kind != Variant::RawOnly &&
                           kind != Variant::RawDiff);
    SgmMode sgm_mode = SgmMode::Full;
    if (kind == Variant::NoSgm) sgm_mode = SgmMode::ChannelOnly;
    if (kind == Variant::FixedGraph) sgm_mode = SgmMode::FixedGraph;

    for (int64_t l = 0; l < cfg.L; ++l) {
        const std::string tag = "layer" + std::to_string(l);
        typename MedMambaModel<R>::Layer layer;
        layer.ln_gain = m.store.add_full(tag + ".ln_gain", {cfg.D}, R(1));
        layer.ln_bias = m.store.add_zeros(tag + ".ln_bias", {cfg.D});
        layer.tdsse = make_tdsse(m.store, tag + ".tdsse", cfg.T, cfg.D, cfg.d_state, cfg.E,
                                 cfg.d_conv, has_diff, has_freq, rng);
        layer.sgm = make_sgm(m.store, tag + ".sgm", cfg.D, cfg.d_state, cfg.E, cfg.d_conv,
                             cfg.node_dim(), sgm_mode, rng);
        m.layers.push_back(layer);
    }
    m.cls_W = m.store.add_uniform("classifier.W", {cfg.D, cfg.K}, cfg.D, rng);
    m.cls_b = m.store.add_zeros("classifier.b", {cfg.K});
    return m;
}

template <typename R>
MedMambaModel<R> ablation_variant(const MedMambaConfig& cfg, const std::string& tag,
                                  std::optional<uint64_t> seed = std::nullopt) {
    return make_model<R>(cfg, parse_variant(tag), seed);
}

template <typename R>
struct ForwardOpts {
    bool training = false;
    Rng* dropout_rng = nullptr;
    std::optional<Tensor<R>> alpha_override;
};

template <typename R>
struct ForwardResult {
    Var<R> logits;
    Var<R> l_sp_total;
    Var<R> l_dag_total;
    ForwardDiagnostics<R> diag;
};

template <typename R>
ForwardResult<R> model_forward(const MedMambaModel<R>& m, Tape<R>& tape, const Bound<R>& p,
                               const Tensor<R>& x, const ForwardOpts<R>& opts = {}) {
    if (x.rank() != 2 || x.dim(0) != m.cfg.T || x.dim(1) != m.cfg.C)
        throw std::invalid_argument("forward: input must be " + std::to_string(m.cfg.T) + "x" +
                                    std::to_string(m.cfg.C) + ", got " + shape_str(x.shape()));
    auto xin = tape.constant(x.clone());

    Var<R> Z = m.linear_embedding ? linear_embed(p, m.lin_embed, xin)
                                  : mce_embed(p, m.mce, xin);

    ForwardResult<R> out;
    out.l_sp_total = tape.constant(Tensor<R>::scalar(R(0)));
    out.l_dag_total = tape.constant(Tensor<R>::scalar(R(0)));

    const bool use_dropout = opts.training && m.cfg.dropout > 0 && opts.dropout_rng;
    for (const auto& layer : m.layers) {
        auto h = layernorm(Z, p[layer.ln_gain], p[layer.ln_bias]);
        std::optional<Var<R>> mask;
        if (use_dropout) {
            const double keep = 1.0 - m.cfg.dropout;
            Tensor<R> mk(Shape{m.cfg.T, m.cfg.C, m.cfg.D});
            for (int64_t i = 0; i < mk.numel(); ++i)
                mk[i] = (opts.dropout_rng->uniform() < keep) ? static_cast<R>(1.0 / keep) : R(0);
            mask = tape.constant(std::move(mk));
        }
        auto tout = tdsse_forward(p, layer.tdsse, h, Z, mask, opts.alpha_override);
        auto sout = sgm_forward(p, layer.sgm, tout.z_temp);
        Z = sout.z_out;
        out.l_sp_total = add(out.l_sp_total, sout.l_sp);
        out.l_dag_total = add(out.l_dag_total, sout.l_dag);
        out.diag.alpha.push_back(tout.alpha.value().clone());
        out.diag.adjacency.push_back(sout.adjacency);
        out.diag.l_sp.push_back(sout.l_sp.value()[0]);
        out.diag.l_dag.push_back(sout.l_dag.value()[0]);
    }

    auto pooled = mean_axes(Z, {0, 1});  // (D)
    out.logits = add(matmul(pooled, p[m.cls_W]), p[m.cls_b]);
    return out;
}

// CE + lambda_SP * L_SP + lambda_DAG * L_DAG, with the effective lambdas
// resolved at model construction (ablations zero them).
template <typename R>
Var<R> total_loss(const MedMambaModel<R>& m, const ForwardResult<R>& fr, int64_t label) {
    auto loss = cross_entropy(fr.logits, label);
    if (m.lambda_sp_eff != 0)
        loss = add(loss, mul_scalar(fr.l_sp_total, static_cast<R>(m.lambda_sp_eff)));
    if (m.lambda_dag_eff != 0)
        loss = add(loss, mul_scalar(fr.l_dag_total, static_cast<R>(m.lambda_dag_eff)));
    return loss;
}

template <typename R>
struct Prediction {
    int64_t label = 0;
    Tensor<R> probs;
    ForwardDiagnostics<R> diag;
};

// Inference path: probs = softmax(logits), argmax with lowest-index ties.
template <typename R>
Prediction<R> predict(const MedMambaModel<R>& m, const Tensor<R>& x) {
    Tape<R> tape;
    auto p = bind(tape, m.store, false);
    auto fr = model_forward(m, tape, p, x);
    auto probs = softmax_lastdim(fr.logits);
    Prediction<R> out;
    out.probs = probs.value().clone();
    out.diag = std::move(fr.diag);
    int64_t best = 0;
    for (int64_t k = 1; k < m.cfg.K; ++k)
        if (out.probs[k] > out.probs[best]) best = k;
    out.label = best;
    return out;
}

}  // namespace medmamba
