#pragma once

#include <vector>

namespace relcp {

// Probability that a random positive outranks a random negative. Ties score
// one half via rank averaging. Labels must be 0 or 1, both present.
double auc_roc(const std::vector<double>& scores, const std::vector<int>& labels);

// Mean absolute deviation.
double mae(const std::vector<double>& pred, const std::vector<double>& target);

}  // namespace relcp
