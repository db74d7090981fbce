#pragma once

#include <string>

#include "medmamba/ops.hpp"
#include "medmamba/ops_nn.hpp"
#include "medmamba/params.hpp"
#include "medmamba/ssm.hpp"

namespace medmamba {

// Spatial graph module: a per-sample directed adjacency from bilinear node
// affinities, random-walk normalization, graph diffusion plus a
// channel-axis SSM, and a gated fusion with residual. Structure priors act
// on the pre-normalized adjacency.
enum class SgmMode {
    Full,         // learned adjacency
    FixedGraph,   // frozen uniform off-diagonal adjacency, never updated
    ChannelOnly,  // no graph: channel-SSM pathway only
};

struct SgmIds {
    int phi1_W = -1, phi1_b = -1, phi2_W = -1, phi2_b = -1;  // (D, dn), (dn)
    int W0 = -1, W1 = -1;                                    // (D, D)
    BiSsmIds spatial;
    int gate_gW = -1, gate_gb = -1, gate_sW = -1, gate_sb = -1;
    int out_W = -1, out_b = -1;
    SgmMode mode = SgmMode::Full;
    int64_t d_node = 0;
};

constexpr double kAdjacencyEps = 1e-8;

template <typename R>
SgmIds make_sgm(ParamStore<R>& ps, const std::string& prefix, int64_t D, int64_t N, int64_t E,
                int64_t d_conv, int64_t d_node, SgmMode mode, Rng& rng) {
    SgmIds ids;
    ids.mode = mode;
    ids.d_node = d_node;
    if (mode == SgmMode::Full) {
        ids.phi1_W = ps.add_uniform(prefix + ".phi1.W", {D, d_node}, D, rng);
        ids.phi1_b = ps.add_zeros(prefix + ".phi1.b", {d_node});
        ids.phi2_W = ps.add_uniform(prefix + ".phi2.W", {D, d_node}, D, rng);
        ids.phi2_b = ps.add_zeros(prefix + ".phi2.b", {d_node});
    }
    if (mode != SgmMode::ChannelOnly) {
        ids.W0 = ps.add_uniform(prefix + ".W0", {D, D}, D, rng);
        ids.W1 = ps.add_uniform(prefix + ".W1", {D, D}, D, rng);
        ids.gate_gW = ps.add_uniform(prefix + ".gate_g.W", {D, D}, D, rng);
        ids.gate_gb = ps.add_zeros(prefix + ".gate_g.b", {D});
        ids.gate_sW = ps.add_uniform(prefix + ".gate_s.W", {D, D}, D, rng);
        ids.gate_sb = ps.add_zeros(prefix + ".gate_s.b", {D});
    }
    ids.spatial = make_bissm(ps, prefix + ".spatial", D, N, E, d_conv, rng);
    ids.out_W = ps.add_uniform(prefix + ".out.W", {D, D}, D, rng);
    ids.out_b = ps.add_zeros(prefix + ".out.b", {D});
    return ids;
}

// Mean over time per channel: (T, C, D) -> (C, D).
template <typename R>
Var<R> pool_nodes(Var<R> z_temp) {
    return mean_axes(z_temp, {0});
}

// Bilinear affinity with self-loop masking; recomputed per sample.
template <typename R>
Var<R> learn_adjacency(const Bound<R>& p, const SgmIds& ids, Var<R> U) {
    const int64_t C = U.value().dim(0);
    if (C < 2) throw std::invalid_argument("learn_adjacency: C >= 2 required");
    auto V1 = tanh_v(add(matmul(U, p[ids.phi1_W]), p[ids.phi1_b]));
    auto V2 = tanh_v(add(matmul(U, p[ids.phi2_W]), p[ids.phi2_b]));
    auto S = matmul(V1, V2, false, true);  // (C, C)
    Tensor<R> mask(Shape{C, C});
    for (int64_t i = 0; i < C; ++i)
        for (int64_t j = 0; j < C; ++j) mask.at2(i, j) = (i == j) ? R(0) : R(1);
    return mul(sigmoid(S), U.tape->constant(std::move(mask)));
}

// Row-stochastic transition via degree normalization; zero rows stay zero.
template <typename R>
Var<R> normalize_adjacency(Var<R> A, R eps = R(kAdjacencyEps)) {
    const int64_t C = A.value().dim(0);
    auto d = sum_axes(A, {1});  // (C)
    return div(A, add_scalar(reshape(d, {C, 1}), eps));
}

template <typename R>
Var<R> sparsity_loss(Var<R> A) {
    return abs_sum(A);
}

template <typename R>
Var<R> dag_loss(Var<R> A) {
    return dag_penalty(A);
}

// H_graph[t] = z[t] W0 + Anorm z[t] W1, independently per time step.
template <typename R>
Var<R> graph_diffusion(const Bound<R>& p, const SgmIds& ids, Var<R> z_temp, Var<R> Anorm) {
    auto Az = seq_matmul(Anorm, z_temp);
    return add(matmul(z_temp, p[ids.W0]), matmul(Az, p[ids.W1]));
}

// Bidirectional SSM over the channel axis of (T, C, D) at each time step.
template <typename R>
Var<R> channel_ssm(const Bound<R>& p, const SgmIds& ids, Var<R> z_in) {
    return bidirectional_ssm(p, ids.spatial, z_in, /*seq_axis=*/1);
}

// lambda-gated fusion of the two pathways plus the residual stream.
template <typename R>
Var<R> spatial_fuse(const Bound<R>& p, const SgmIds& ids, Var<R> h_graph, Var<R> h_ssm,
                    Var<R> z_temp) {
    auto lam = sigmoid(add(add(matmul(h_graph, p[ids.gate_gW]), p[ids.gate_gb]),
                           add(matmul(h_ssm, p[ids.gate_sW]), p[ids.gate_sb])));
    // lam*hg + (1-lam)*hs == hs + lam*(hg - hs)
    auto mix = add(h_ssm, mul(lam, sub(h_graph, h_ssm)));
    return add(add(matmul(mix, p[ids.out_W]), p[ids.out_b]), z_temp);
}

template <typename R>
struct SgmOut {
    Var<R> z_out;
    Var<R> l_sp;               // scalar; zero constant outside Full mode
    Var<R> l_dag;              // scalar; zero constant outside Full mode
    Tensor<R> adjacency;       // pre-normalized A snapshot for diagnostics
};

template <typename R>
SgmOut<R> sgm_forward(const Bound<R>& p, const SgmIds& ids, Var<R> z_temp) {
    Tape<R>& t = *z_temp.tape;
    const int64_t C = z_temp.value().dim(1);
    SgmOut<R> out;

    if (ids.mode == SgmMode::ChannelOnly) {
        auto h_ssm = channel_ssm(p, ids, z_temp);
        out.z_out = add(add(matmul(h_ssm, p[ids.out_W]), p[ids.out_b]), z_temp);
        out.l_sp = t.constant(Tensor<R>::scalar(R(0)));
        out.l_dag = t.constant(Tensor<R>::scalar(R(0)));
        out.adjacency = Tensor<R>(Shape{C, C});
        return out;
    }
    if (C < 2) throw std::invalid_argument("sgm_forward: C >= 2 required");

    Var<R> A, Anorm;
    if (ids.mode == SgmMode::FixedGraph) {
        Tensor<R> fixed(Shape{C, C});
        for (int64_t i = 0; i < C; ++i)
            for (int64_t j = 0; j < C; ++j) fixed.at2(i, j) = (i == j) ? R(0) : R(0.5);
        A = t.constant(fixed.clone());
        Tensor<R> norm(Shape{C, C});
        const R row = R(0.5) * R(C - 1) + R(kAdjacencyEps);
        for (int64_t i = 0; i < C * C; ++i) norm[i] = fixed[i] / row;
        Anorm = t.constant(std::move(norm));
        out.l_sp = t.constant(Tensor<R>::scalar(R(0)));
        out.l_dag = t.constant(Tensor<R>::scalar(R(0)));
    } else {
        auto U = pool_nodes(z_temp);
        A = learn_adjacency(p, ids, U);
        Anorm = normalize_adjacency(A);
        out.l_sp = sparsity_loss(A);
        out.l_dag = dag_loss(A);
    }
    out.adjacency = A.value().clone();

    auto h_graph = graph_diffusion(p, ids, z_temp, Anorm);
    auto h_ssm = channel_ssm(p, ids, seq_matmul(Anorm, z_temp));
    out.z_out = spatial_fuse(p, ids, h_graph, h_ssm, z_temp);
    return out;
}

}  // namespace medmamba
