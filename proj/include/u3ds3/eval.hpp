#pragma once

// Cluster-to-class matching and segmentation metrics. Predicted cluster ids
// are mapped onto ground-truth classes with a Hungarian assignment that
// maximizes the matched point count, then overall accuracy, mean per-class
// accuracy, and mean IoU are computed from the relabeled confusion matrix.

#include <cstdint>
#include <string>
#include <vector>

namespace u3ds3 {

struct EvalReport {
  int num_classes = 0;
  std::vector<std::uint64_t> confusion;  // C x C, [pred * C + gt], pre-mapping
  std::vector<int> mapping;              // pred cluster -> gt class (permutation)
  double oacc = 0.0;
  double macc = 0.0;
  double miou = 0.0;
  std::vector<double> per_class_iou;     // indexed by gt class; NaN when the
                                         // class is absent from gt and prediction
  std::vector<double> per_class_recall;  // NaN when the class has no gt points
};

// Maximum-trace assignment on a C x C count matrix [pred * C + gt].
// Returns the pred->gt permutation with the largest total matched count;
// among optima, the lexicographically smallest mapping vector.
std::vector<int> hungarian_max(const std::vector<std::uint64_t>& counts, int c);

// Total matched count of a given mapping.
std::uint64_t mapping_score(const std::vector<std::uint64_t>& counts, int c,
                            const std::vector<int>& mapping);

// Metrics from an already-accumulated confusion matrix.
EvalReport metrics_from_confusion(const std::vector<std::uint64_t>& counts, int c);

// Builds the confusion matrix from per-point predictions and ground truth
// (both in [0, c)) and computes metrics. Errors on size mismatch or labels
// out of range.
EvalReport evaluate(const std::vector<int>& pred, const std::vector<int>& gt, int c);

// Accumulates pred/gt pairs into an existing C x C matrix.
void accumulate_confusion(std::vector<std::uint64_t>& counts, int c,
                          const std::vector<int>& pred, const std::vector<int>& gt);

// Human-readable multi-line summary.
std::string format_report(const EvalReport& r);

// CSV row protocol: header "epoch,oAcc,mAcc,mIoU,iou_0,...,iou_{C-1}".
std::string csv_header(int c);
std::string csv_row(int epoch, const EvalReport& r);

}  // namespace u3ds3
