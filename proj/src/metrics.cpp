#include "relcp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "relcp/errors.hpp"

namespace relcp {

double auc_roc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw LengthMismatch("scores and labels differ in length");
    if (scores.empty()) throw EmptyInput("no scored examples");
    int64_t pos = 0, neg = 0;
    for (const int l : labels) {
        if (l == 1)
            ++pos;
        else if (l == 0)
            ++neg;
        else
            throw TypeMismatch("labels must be 0 or 1");
    }
    if (pos == 0 || neg == 0) throw SingleClass("need both classes for a ranking metric");

    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    // average ranks within tie groups, 1-based
    double pos_rank_sum = 0.0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (size_t k = i; k < j; ++k)
            if (labels[order[k]] == 1) pos_rank_sum += avg_rank;
        i = j;
    }
    const double p = static_cast<double>(pos), n = static_cast<double>(neg);
    return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

double mae(const std::vector<double>& pred, const std::vector<double>& target) {
    if (pred.size() != target.size())
        throw LengthMismatch("prediction and target differ in length");
    if (pred.empty()) throw EmptyInput("no examples to score");
    double acc = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - target[i]);
    return acc / static_cast<double>(pred.size());
}

}  // namespace relcp
