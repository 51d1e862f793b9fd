#pragma once

#include <optional>
#include <vector>

namespace graft {

// Mann-Whitney ROC-AUC with tied ranks (ties count 0.5). Requires at least
// one positive and one negative label; returns nullopt otherwise.
std::optional<double> roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct MultiTaskAuc {
  double mean = 0.0;        // over tasks with a defined AUC
  int defined_tasks = 0;
  int skipped_tasks = 0;    // single-class or empty tasks
};

// Per-task AUC over a collection of (score row, label row) pairs; labels use
// {0, 1, -1 = missing}. Missing entries are excluded per task.
MultiTaskAuc multi_task_auc(const std::vector<std::vector<double>>& scores,
                            const std::vector<std::vector<int>>& labels, int tasks);

}  // namespace graft
