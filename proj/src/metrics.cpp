#include "graft/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace graft {

std::optional<double> roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("roc_auc: size mismatch");
  std::size_t n_pos = 0, n_neg = 0;
  for (int l : labels) {
    if (l == 1)
      ++n_pos;
    else if (l == 0)
      ++n_neg;
    else
      throw std::invalid_argument("roc_auc: labels must be 0 or 1");
  }
  if (n_pos == 0 || n_neg == 0) return std::nullopt;

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Average ranks within tied groups; rank sum of positives gives the U
  // statistic with ties counted as half wins.
  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) pos_rank_sum += avg_rank;
    i = j;
  }
  double u = pos_rank_sum - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

MultiTaskAuc multi_task_auc(const std::vector<std::vector<double>>& scores,
                            const std::vector<std::vector<int>>& labels, int tasks) {
  MultiTaskAuc out;
  double sum = 0.0;
  for (int t = 0; t < tasks; ++t) {
    std::vector<double> s;
    std::vector<int> l;
    for (std::size_t g = 0; g < scores.size(); ++g) {
      if (labels[g][t] < 0) continue;
      s.push_back(scores[g][t]);
      l.push_back(labels[g][t]);
    }
    auto auc = s.empty() ? std::nullopt : roc_auc(s, l);
    if (auc) {
      sum += *auc;
      ++out.defined_tasks;
    } else {
      ++out.skipped_tasks;
    }
  }
  if (out.defined_tasks > 0) out.mean = sum / out.defined_tasks;
  return out;
}

}  // namespace graft
