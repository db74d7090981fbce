#include "medmamba/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace medmamba {

int64_t argmax_lowest(const std::vector<float>& row) {
    int64_t best = 0;
    for (size_t k = 1; k < row.size(); ++k)
        if (row[k] > row[best]) best = static_cast<int64_t>(k);
    return best;
}

double binary_auroc(const std::vector<double>& scores, const std::vector<int>& positive) {
    const size_t n = scores.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] > scores[b]; });
    int64_t P = 0, N = 0;
    for (int v : positive) (v ? P : N) += 1;
    if (P == 0 || N == 0) return 0.0;

    double area = 0;
    int64_t tp = 0, fp = 0;
    double prev_tpr = 0, prev_fpr = 0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) {
            if (positive[order[j]]) ++tp; else ++fp;
            ++j;
        }
        const double tpr = double(tp) / double(P);
        const double fpr = double(fp) / double(N);
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
        i = j;
    }
    return area;
}

double binary_auprc(const std::vector<double>& scores, const std::vector<int>& positive) {
    const size_t n = scores.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] > scores[b]; });
    int64_t P = 0;
    for (int v : positive) P += v ? 1 : 0;
    if (P == 0) return 0.0;

    double ap = 0;
    int64_t tp = 0, fp = 0;
    double prev_recall = 0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) {
            if (positive[order[j]]) ++tp; else ++fp;
            ++j;
        }
        const double recall = double(tp) / double(P);
        const double precision = double(tp) / double(tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return ap;
}

MetricsReport compute_metrics(const std::vector<std::vector<float>>& probs,
                              const std::vector<int64_t>& labels) {
    if (probs.empty() || probs.size() != labels.size())
        throw std::invalid_argument("metrics: probs/labels size mismatch");
    const int64_t K = static_cast<int64_t>(probs[0].size());
    for (size_t i = 0; i < probs.size(); ++i) {
        if (static_cast<int64_t>(probs[i].size()) != K)
            throw std::invalid_argument("metrics: ragged probability rows");
        double s = 0;
        for (float p : probs[i]) s += p;
        if (std::abs(s - 1.0) > 1e-4)
            throw std::invalid_argument("metrics: row " + std::to_string(i) +
                                        " does not sum to 1 (got " + std::to_string(s) + ")");
        if (labels[i] < 0 || labels[i] >= K)
            throw std::invalid_argument("metrics: label out of range at row " +
                                        std::to_string(i));
    }

    MetricsReport r;
    r.total = static_cast<int64_t>(probs.size());
    r.confusion.assign(K, std::vector<int64_t>(K, 0));
    for (size_t i = 0; i < probs.size(); ++i)
        r.confusion[labels[i]][argmax_lowest(probs[i])] += 1;

    int64_t correct = 0;
    for (int64_t k = 0; k < K; ++k) correct += r.confusion[k][k];
    r.accuracy = double(correct) / double(r.total);

    for (int64_t k = 0; k < K; ++k) {
        int64_t tp = r.confusion[k][k], fp = 0, fn = 0;
        for (int64_t q = 0; q < K; ++q) {
            if (q == k) continue;
            fp += r.confusion[q][k];
            fn += r.confusion[k][q];
        }
        const double prec = (tp + fp) > 0 ? double(tp) / double(tp + fp) : 0.0;
        const double rec = (tp + fn) > 0 ? double(tp) / double(tp + fn) : 0.0;
        const double f1 = (prec + rec) > 0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
        r.class_precision.push_back(prec);
        r.class_recall.push_back(rec);
        r.class_f1.push_back(f1);
        r.precision += prec / double(K);
        r.recall += rec / double(K);
        r.f1 += f1 / double(K);
    }

    int64_t ranked_classes = 0;
    for (int64_t k = 0; k < K; ++k) {
        std::vector<double> scores(probs.size());
        std::vector<int> pos(probs.size());
        int64_t P = 0;
        for (size_t i = 0; i < probs.size(); ++i) {
            scores[i] = probs[i][k];
            pos[i] = labels[i] == k ? 1 : 0;
            P += pos[i];
        }
        if (P == 0 || P == static_cast<int64_t>(probs.size())) {
            r.class_auroc.push_back(0.0);
            r.class_auprc.push_back(0.0);
            continue;
        }
        const double roc = binary_auroc(scores, pos);
        const double prc = binary_auprc(scores, pos);
        r.class_auroc.push_back(roc);
        r.class_auprc.push_back(prc);
        r.auroc += roc;
        r.auprc += prc;
        ++ranked_classes;
    }
    if (ranked_classes > 0) {
        r.auroc /= double(ranked_classes);
        r.auprc /= double(ranked_classes);
    }
    return r;
}

}  // namespace medmamba
