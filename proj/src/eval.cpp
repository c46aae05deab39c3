#include "u3ds3/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace u3ds3 {

namespace {

// Minimum-cost perfect assignment via the potentials (Kuhn) algorithm.
// Costs must be integral-valued doubles; all arithmetic then stays exact.
// Returns per-column assigned row in p (1-indexed internally).
double hungarian_min_value(const std::vector<double>& a, int n,
                           std::vector<int>* row_of_col = nullptr) {
  if (n == 0) return 0.0;
  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = a[static_cast<std::size_t>(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  double total = 0.0;
  for (int j = 1; j <= n; ++j) total += a[static_cast<std::size_t>(p[j] - 1) * n + (j - 1)];
  if (row_of_col) {
    row_of_col->assign(n, -1);
    for (int j = 1; j <= n; ++j) (*row_of_col)[j - 1] = p[j] - 1;
  }
  return total;
}

// Best achievable matched count assigning rows [start_row, c) to the columns
// not marked used.
std::uint64_t best_completion(const std::vector<std::uint64_t>& counts, int c,
                              int start_row, const std::vector<char>& used_col) {
  int m = c - start_row;
  if (m == 0) return 0;
  std::vector<int> cols;
  cols.reserve(m);
  for (int j = 0; j < c; ++j)
    if (!used_col[j]) cols.push_back(j);
  std::uint64_t maxval = 0;
  for (int i = start_row; i < c; ++i)
    for (int j : cols) maxval = std::max(maxval, counts[static_cast<std::size_t>(i) * c + j]);
  std::vector<double> cost(static_cast<std::size_t>(m) * m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      cost[static_cast<std::size_t>(i) * m + j] = static_cast<double>(
          maxval - counts[static_cast<std::size_t>(i + start_row) * c + cols[j]]);
  double min_cost = hungarian_min_value(cost, m);
  return static_cast<std::uint64_t>(static_cast<double>(maxval) * m - min_cost);
}

double nan_value() { return std::numeric_limits<double>::quiet_NaN(); }

std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::vector<int> hungarian_max(const std::vector<std::uint64_t>& counts, int c) {
  if (c <= 0) throw std::runtime_error("hungarian_max: need at least one class");
  if (counts.size() != static_cast<std::size_t>(c) * c)
    throw std::runtime_error("hungarian_max: matrix size mismatch");
  std::vector<char> used(c, 0);
  std::uint64_t target = best_completion(counts, c, 0, used);
  std::vector<int> mapping(c, -1);
  std::uint64_t committed = 0;
  for (int i = 0; i < c; ++i) {
    bool placed = false;
    for (int j = 0; j < c && !placed; ++j) {
      if (used[j]) continue;
      used[j] = 1;
      std::uint64_t here = counts[static_cast<std::size_t>(i) * c + j];
      std::uint64_t rest = best_completion(counts, c, i + 1, used);
      if (committed + here + rest == target) {
        mapping[i] = j;
        committed += here;
        placed = true;
      } else {
        used[j] = 0;
      }
    }
    if (!placed) throw std::runtime_error("hungarian_max: internal search failure");
  }
  return mapping;
}

std::uint64_t mapping_score(const std::vector<std::uint64_t>& counts, int c,
                            const std::vector<int>& mapping) {
  std::uint64_t s = 0;
  for (int i = 0; i < c; ++i) s += counts[static_cast<std::size_t>(i) * c + mapping[i]];
  return s;
}

EvalReport metrics_from_confusion(const std::vector<std::uint64_t>& counts, int c) {
  EvalReport r;
  r.num_classes = c;
  r.confusion = counts;
  r.mapping = hungarian_max(counts, c);
  // Relabeled matrix: row f(i) of M is row i of the input.
  std::vector<std::uint64_t> m(static_cast<std::size_t>(c) * c, 0);
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < c; ++j)
      m[static_cast<std::size_t>(r.mapping[i]) * c + j] = counts[static_cast<std::size_t>(i) * c + j];
  std::vector<std::uint64_t> row(c, 0), col(c, 0);
  std::uint64_t total = 0, diag = 0;
  for (int i = 0; i < c; ++i) {
    for (int j = 0; j < c; ++j) {
      std::uint64_t v = m[static_cast<std::size_t>(i) * c + j];
      row[i] += v;
      col[j] += v;
      total += v;
      if (i == j) diag += v;
    }
  }
  if (total == 0) throw std::runtime_error("metrics_from_confusion: empty confusion matrix");
  r.oacc = static_cast<double>(diag) / static_cast<double>(total);
  r.per_class_iou.assign(c, nan_value());
  r.per_class_recall.assign(c, nan_value());
  double recall_sum = 0.0, iou_sum = 0.0;
  int supported = 0;
  for (int k = 0; k < c; ++k) {
    std::uint64_t tp = m[static_cast<std::size_t>(k) * c + k];
    std::uint64_t uni = row[k] + col[k] - tp;
    if (uni > 0) r.per_class_iou[k] = static_cast<double>(tp) / static_cast<double>(uni);
    if (col[k] > 0) {
      r.per_class_recall[k] = static_cast<double>(tp) / static_cast<double>(col[k]);
      recall_sum += r.per_class_recall[k];
      iou_sum += r.per_class_iou[k];
      ++supported;
    }
  }
  r.macc = supported > 0 ? recall_sum / supported : 0.0;
  r.miou = supported > 0 ? iou_sum / supported : 0.0;
  return r;
}

void accumulate_confusion(std::vector<std::uint64_t>& counts, int c,
                          const std::vector<int>& pred, const std::vector<int>& gt) {
  if (counts.size() != static_cast<std::size_t>(c) * c)
    throw std::runtime_error("accumulate_confusion: matrix size mismatch");
  if (pred.size() != gt.size())
    throw std::runtime_error("accumulate_confusion: pred/gt length mismatch");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    int p = pred[i], g = gt[i];
    if (p < 0 || p >= c)
      throw std::runtime_error("accumulate_confusion: prediction out of range at point " + std::to_string(i));
    if (g < 0 || g >= c)
      throw std::runtime_error("accumulate_confusion: ground truth out of range at point " + std::to_string(i));
    ++counts[static_cast<std::size_t>(p) * c + g];
  }
}

EvalReport evaluate(const std::vector<int>& pred, const std::vector<int>& gt, int c) {
  std::vector<std::uint64_t> counts(static_cast<std::size_t>(c) * c, 0);
  accumulate_confusion(counts, c, pred, gt);
  return metrics_from_confusion(counts, c);
}

std::string format_report(const EvalReport& r) {
  std::ostringstream os;
  os << "classes " << r.num_classes << "\n";
  os << "oAcc " << fmt_double(r.oacc) << "\n";
  os << "mAcc " << fmt_double(r.macc) << "\n";
  os << "mIoU " << fmt_double(r.miou) << "\n";
  for (int k = 0; k < r.num_classes; ++k) {
    os << "class " << k << " iou " << fmt_double(r.per_class_iou[k]) << " recall "
       << fmt_double(r.per_class_recall[k]) << "\n";
  }
  os << "mapping";
  for (int i = 0; i < r.num_classes; ++i) os << " " << i << "->" << r.mapping[i];
  os << "\n";
  return os.str();
}

std::string csv_header(int c) {
  std::string s = "epoch,oAcc,mAcc,mIoU";
  for (int k = 0; k < c; ++k) s += ",iou_" + std::to_string(k);
  s += "\n";
  return s;
}

std::string csv_row(int epoch, const EvalReport& r) {
  std::string s = std::to_string(epoch);
  s += "," + fmt_double(r.oacc);
  s += "," + fmt_double(r.macc);
  s += "," + fmt_double(r.miou);
  for (int k = 0; k < r.num_classes; ++k) s += "," + fmt_double(r.per_class_iou[k]);
  s += "\n";
  return s;
}

}  // namespace u3ds3
