#pragma once

#include <cstdint>
#include <vector>

namespace medmamba {

// Macro-averaged classification metrics with per-class breakdown. AUROC and
// AUPRC use a one-vs-rest reduction; classes missing either positives or
// negatives are excluded from those macro averages.
struct MetricsReport {
    double accuracy = 0;
    double precision = 0;
    double recall = 0;
    double f1 = 0;
    double auroc = 0;
    double auprc = 0;
    std::vector<double> class_precision, class_recall, class_f1;
    std::vector<double> class_auroc, class_auprc;
    std::vector<std::vector<int64_t>> confusion;  // [true][predicted]
    int64_t total = 0;
};

int64_t argmax_lowest(const std::vector<float>& row);

MetricsReport compute_metrics(const std::vector<std::vector<float>>& probs,
                              const std::vector<int64_t>& labels);

// Binary ranking metrics on raw scores; AUROC by trapezoid over the unique-
// score threshold sweep, AUPRC by average-precision step summation.
double binary_auroc(const std::vector<double>& scores, const std::vector<int>& positive);
double binary_auprc(const std::vector<double>& scores, const std::vector<int>& positive);

}  // namespace medmamba
