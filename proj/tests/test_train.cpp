#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "medmamba/metrics.hpp"
#include "medmamba/train.hpp"

using namespace medmamba;

TEST_CASE("adam fixtures") {
    // zero gradient and zero decay leave parameters untouched
    {
        ParamStore<double> ps;
        ps.add("w", Tensor<double>::from({2}, {1.5, -2.0}));
        AdamState<double> st(ps);
        std::vector<Tensor<double>> grads(1);
        adam_step(ps, grads, st, 1e-3, 0.0);
        CHECK(ps.value(0)[0] == 1.5);
        CHECK(ps.value(0)[1] == -2.0);
    }
    // first step moves by -lr * sign(g) up to the epsilon correction
    {
        ParamStore<double> ps;
        ps.add("w", Tensor<double>::from({2}, {0.0, 0.0}));
        AdamState<double> st(ps);
        std::vector<Tensor<double>> grads;
        grads.push_back(Tensor<double>::from({2}, {0.3, -0.007}));
        const double lr = 1e-2;
        adam_step(ps, grads, st, lr, 0.0);
        for (int64_t i = 0; i < 2; ++i) {
            const double g = grads[0][i];
            const double expect = -lr * g / (std::abs(g) + 1e-8);
            CHECK(ps.value(0)[i] == doctest::Approx(expect).epsilon(1e-9));
            CHECK(std::abs(std::abs(ps.value(0)[i]) - lr) < lr * 1e-5);
        }
    }
    // decay with zero gradient is pure shrinkage
    {
        ParamStore<double> ps;
        ps.add("w", Tensor<double>::from({1}, {2.0}));
        AdamState<double> st(ps);
        std::vector<Tensor<double>> grads(1);
        adam_step(ps, grads, st, 0.1, 0.01);
        CHECK(ps.value(0)[0] == doctest::Approx(2.0 * (1.0 - 0.1 * 0.01)).epsilon(1e-12));
    }
}

TEST_CASE("cosine schedule fixtures") {
    CHECK(cosine_lr(0, 100, 5e-4) == doctest::Approx(5e-4));
    CHECK(cosine_lr(50, 100, 5e-4) == doctest::Approx(2.5e-4));
    CHECK(cosine_lr(99, 100, 5e-4) < 5e-4 * 2.5e-4);  // approaches zero
    CHECK_THROWS_AS(cosine_lr(100, 100, 1e-3), std::invalid_argument);
}

TEST_CASE("metrics fixtures") {
    // perfect predictions give all six metrics = 1
    {
        std::vector<std::vector<float>> probs = {
            {0.9f, 0.1f}, {0.2f, 0.8f}, {0.7f, 0.3f}, {0.1f, 0.9f}};
        std::vector<int64_t> labels = {0, 1, 0, 1};
        auto r = compute_metrics(probs, labels);
        CHECK(r.accuracy == doctest::Approx(1.0));
        CHECK(r.precision == doctest::Approx(1.0));
        CHECK(r.recall == doctest::Approx(1.0));
        CHECK(r.f1 == doctest::Approx(1.0));
        CHECK(r.auroc == doctest::Approx(1.0));
        CHECK(r.auprc == doctest::Approx(1.0));
    }
    // TP = FP = FN = TN = 1 for class 1
    {
        std::vector<std::vector<float>> probs = {
            {0.4f, 0.6f}, {0.3f, 0.7f}, {0.8f, 0.2f}, {0.9f, 0.1f}};
        std::vector<int64_t> labels = {1, 0, 1, 0};
        auto r = compute_metrics(probs, labels);
        CHECK(r.class_precision[1] == doctest::Approx(0.5));
        CHECK(r.class_recall[1] == doctest::Approx(0.5));
        CHECK(r.class_f1[1] == doctest::Approx(0.5));
        CHECK(r.accuracy == doctest::Approx(0.5));
        CHECK(r.confusion[1][1] == 1);
        CHECK(r.confusion[0][1] == 1);
        CHECK(r.confusion[1][0] == 1);
        CHECK(r.confusion[0][0] == 1);
    }
    // the fixed AUROC fixture: scores (.9,.8,.3,.1), labels (1,0,1,0)
    {
        const double auc = binary_auroc({0.9, 0.8, 0.3, 0.1}, {1, 0, 1, 0});
        CHECK(auc == doctest::Approx(0.75));
    }
    // malformed rows are rejected
    {
        std::vector<std::vector<float>> probs = {{0.5f, 0.2f}};
        std::vector<int64_t> labels = {0};
        CHECK_THROWS_AS(compute_metrics(probs, labels), std::invalid_argument);
    }
}

TEST_CASE("auroc equals the normalized Mann-Whitney count") {
    Rng rng(29);
    for (int rep = 0; rep < 100; ++rep) {
        const int n = 5 + int(rng.below(46));
        std::vector<double> scores(n);
        std::vector<int> pos(n);
        int64_t P = 0;
        for (int i = 0; i < n; ++i) {
            // quantized scores so ties actually occur
            scores[i] = double(rng.below(12)) / 11.0;
            pos[i] = rng.uniform() < 0.5 ? 1 : 0;
            P += pos[i];
        }
        if (P == 0 || P == n) {
            --rep;
            continue;
        }
        // pairwise concordance with ties counted half
        double conc = 0;
        int64_t pairs = 0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                if (!(pos[i] == 1 && pos[j] == 0)) continue;
                ++pairs;
                if (scores[i] > scores[j]) conc += 1.0;
                else if (scores[i] == scores[j]) conc += 0.5;
            }
        const double mw = conc / double(pairs);
        CHECK(std::abs(binary_auroc(scores, pos) - mw) < 1e-12);
    }
}

TEST_CASE("auprc is average precision over descending thresholds") {
    // perfect ranking gives AP = 1
    CHECK(binary_auprc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}) == doctest::Approx(1.0));
    // hand-computed: order .9(+), .7(-), .5(+): AP = 0.5*1 + 0.5*(2/3)
    CHECK(binary_auprc({0.9, 0.7, 0.5}, {1, 0, 1}) ==
          doctest::Approx(0.5 + 0.5 * (2.0 / 3.0)));
}

namespace {

Dataset tiny_task(int64_t n_per_class, int64_t T, int64_t C, uint64_t seed) {
    // two classes separated by the sign of a channel-0 ramp
    Dataset ds;
    ds.T = T;
    ds.C = C;
    ds.K = 2;
    Rng rng(seed);
    for (int64_t cls = 0; cls < 2; ++cls)
        for (int64_t i = 0; i < n_per_class; ++i) {
            Sample s;
            s.label = cls;
            s.subject_id = cls * n_per_class + i;
            s.x = Tensor<float>(Shape{T, C});
            const double dir = cls == 0 ? 1.0 : -1.0;
            for (int64_t t = 0; t < T; ++t)
                for (int64_t c = 0; c < C; ++c)
                    s.x.at2(t, c) = float(dir * double(t) / T + 0.1 * rng.normal());
            ds.samples.push_back(std::move(s));
        }
    return ds;
}

MedMambaConfig tiny_cfg(int64_t T, int64_t C) {
    MedMambaConfig cfg;
    cfg.D = 8;
    cfg.L = 1;
    cfg.d_state = 4;
    cfg.d_conv = 2;
    cfg.kernels = {3};
    cfg.K = 2;
    cfg.C = C;
    cfg.T = T;
    cfg.dropout = 0.0;
    return cfg;
}

}  // namespace

TEST_CASE("training is deterministic and early stopping restores the best epoch") {
    Dataset train_set = tiny_task(8, 12, 2, 31);
    Dataset val_set = tiny_task(4, 12, 2, 37);
    MedMambaConfig cfg = tiny_cfg(12, 2);

    TrainConfig tc;
    tc.lr = 1e-3;
    tc.max_epochs = 4;
    tc.patience = 4;
    tc.batch_size = 8;

    auto m1 = make_model<float>(cfg, VariantSpec{}, 7);
    auto r1 = train(m1, train_set, val_set, tc, 7);
    auto m2 = make_model<float>(cfg, VariantSpec{}, 7);
    auto r2 = train(m2, train_set, val_set, tc, 7);
    REQUIRE(r1.epochs.size() == r2.epochs.size());
    for (size_t e = 0; e < r1.epochs.size(); ++e) {
        CHECK(r1.epochs[e].train_loss == r2.epochs[e].train_loss);
        CHECK(r1.epochs[e].val_loss == r2.epochs[e].val_loss);
        CHECK(r1.epochs[e].val_f1 == r2.epochs[e].val_f1);
    }

    // the restored parameters reproduce the best recorded validation F1
    double best = -1;
    for (const auto& row : r1.epochs) best = std::max(best, row.val_f1);
    auto val_eval = evaluate(m1, val_set);
    CHECK(val_eval.metrics.f1 == doctest::Approx(best).epsilon(1e-12));
    CHECK(r1.best_epoch >= 0);
}

TEST_CASE("early stopping halts after patience non-improving epochs") {
    Dataset train_set = tiny_task(4, 8, 2, 41);
    Dataset val_set = tiny_task(2, 8, 2, 43);
    MedMambaConfig cfg = tiny_cfg(8, 2);
    TrainConfig tc;
    tc.lr = 1e-30;  // effectively frozen: validation F1 cannot improve
    tc.max_epochs = 10;
    tc.patience = 1;
    tc.batch_size = 8;
    auto m = make_model<float>(cfg, VariantSpec{}, 3);
    auto rec = train(m, train_set, val_set, tc, 3);
    CHECK(rec.epochs.size() == 2);  // epoch 0 sets the best, epoch 1 trips patience
    CHECK(rec.best_epoch == 0);
}

TEST_CASE("the model memorizes 16 random pairs within 500 steps") {
    MedMambaConfig cfg = tiny_cfg(16, 4);
    cfg.D = 16;
    auto model = make_model<float>(cfg, VariantSpec{}, 11);

    Rng rng(47);
    Dataset mem;
    mem.T = cfg.T;
    mem.C = cfg.C;
    mem.K = 2;
    for (int i = 0; i < 16; ++i) {
        Sample s;
        s.label = int64_t(rng.below(2));
        s.subject_id = i;
        s.x = Tensor<float>(Shape{cfg.T, cfg.C});
        for (int64_t j = 0; j < s.x.numel(); ++j) s.x[j] = float(rng.uniform(-1, 1));
        mem.samples.push_back(std::move(s));
    }

    AdamState<float> adam(model.store);
    int steps = 0;
    bool memorized = false;
    for (; steps < 500 && !memorized; ++steps) {
        std::vector<Tensor<float>> grads(model.store.size());
        for (const auto& s : mem.samples) {
            Tape<float> tape;
            auto bound = bind(tape, model.store, true);
            auto fr = model_forward(model, tape, bound, s.x);
            tape.backward(total_loss(model, fr, s.label));
            harvest_grads(bound, grads);
        }
        for (auto& g : grads)
            if (g.defined())
                for (int64_t i = 0; i < g.numel(); ++i) g[i] /= 16.f;
        adam_step(model.store, grads, adam, 3e-3, 0.0);

        auto ev = evaluate(model, mem);
        memorized = ev.metrics.accuracy == 1.0;
    }
    CHECK(memorized);
    CHECK(steps <= 500);
}
