#include "u3ds3/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace u3ds3 {

void CentroidSet::validate() const {
  if (k <= 0 || dim <= 0) throw std::runtime_error("CentroidSet: k and dim must be positive");
  if (mu.size() != static_cast<std::size_t>(k) * dim)
    throw std::runtime_error("CentroidSet: mu size mismatch");
  if (counts.size() != static_cast<std::size_t>(k))
    throw std::runtime_error("CentroidSet: counts size mismatch");
  for (int j = 0; j < k; ++j) {
    double s = 0.0;
    const double* m = centroid(j);
    for (int d = 0; d < dim; ++d) s += m[d] * m[d];
    if (std::abs(std::sqrt(s) - 1.0) > 1e-6)
      throw std::runtime_error("CentroidSet: centroid " + std::to_string(j) + " is not unit norm");
  }
}

namespace {

void renormalize_row(double* m, int dim, Rng& rng) {
  double s = 0.0;
  for (int d = 0; d < dim; ++d) s += m[d] * m[d];
  s = std::sqrt(s);
  while (s < 1e-12) {
    for (int d = 0; d < dim; ++d) m[d] = rng.gaussian();
    s = 0.0;
    for (int d = 0; d < dim; ++d) s += m[d] * m[d];
    s = std::sqrt(s);
  }
  for (int d = 0; d < dim; ++d) m[d] /= s;
}

}  // namespace

void renormalize_centroids(CentroidSet& c, Rng& rng) {
  for (int j = 0; j < c.k; ++j) renormalize_row(c.centroid(j), c.dim, rng);
}

namespace {

// Squared Euclidean distance from a double vector to a centroid row.
double sqdist(const double* a, const double* b, int dim) {
  double s = 0.0;
  for (int d = 0; d < dim; ++d) {
    double diff = a[d] - b[d];
    s += diff * diff;
  }
  return s;
}

}  // namespace

int nearest_centroid(const double* x, const CentroidSet& c) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int j = 0; j < c.k; ++j) {
    double d = sqdist(x, c.centroid(j), c.dim);
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return best;
}

template <typename T>
std::vector<int> assign_labels(const T* features, int n, int dim,
                               const std::vector<int>& sp_ids,
                               const CentroidSet& c) {
  if (dim != c.dim) throw std::runtime_error("assign_labels: feature dim mismatch");
  if (sp_ids.size() != static_cast<std::size_t>(n))
    throw std::runtime_error("assign_labels: sp_ids size mismatch");
  int num_sp = 0;
  for (int i = 0; i < n; ++i) {
    if (sp_ids[i] < 0) throw std::runtime_error("assign_labels: negative superpoint id");
    num_sp = std::max(num_sp, sp_ids[i] + 1);
  }
  std::vector<double> sums(static_cast<std::size_t>(num_sp) * dim, 0.0);
  std::vector<std::int64_t> sizes(num_sp, 0);
  for (int i = 0; i < n; ++i) {
    double* row = sums.data() + static_cast<std::size_t>(sp_ids[i]) * dim;
    const T* f = features + static_cast<std::size_t>(i) * dim;
    for (int d = 0; d < dim; ++d) row[d] += static_cast<double>(f[d]);
    ++sizes[sp_ids[i]];
  }
  std::vector<int> sp_label(num_sp, 0);
  std::vector<double> mean(dim);
  for (int s = 0; s < num_sp; ++s) {
    if (sizes[s] == 0) continue;
    const double* row = sums.data() + static_cast<std::size_t>(s) * dim;
    for (int d = 0; d < dim; ++d) mean[d] = row[d] / static_cast<double>(sizes[s]);
    sp_label[s] = nearest_centroid(mean.data(), c);
  }
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) labels[i] = sp_label[sp_ids[i]];
  return labels;
}

template <typename T>
std::vector<int> assign_labels(const T* features, int n, int dim,
                               const CentroidSet& c) {
  if (dim != c.dim) throw std::runtime_error("assign_labels: feature dim mismatch");
  std::vector<int> labels(n);
  std::vector<double> x(dim);
  for (int i = 0; i < n; ++i) {
    const T* f = features + static_cast<std::size_t>(i) * dim;
    for (int d = 0; d < dim; ++d) x[d] = static_cast<double>(f[d]);
    labels[i] = nearest_centroid(x.data(), c);
  }
  return labels;
}

template <typename T>
void minibatch_update(CentroidSet& c, const T* features, int n, int dim,
                      const std::vector<int>& labels, Rng& rng, double sigma) {
  if (dim != c.dim) throw std::runtime_error("minibatch_update: feature dim mismatch");
  if (labels.size() != static_cast<std::size_t>(n))
    throw std::runtime_error("minibatch_update: labels size mismatch");
  std::vector<char> touched(c.k, 0);
  for (int i = 0; i < n; ++i) {
    int l = labels[i];
    if (l < 0 || l >= c.k) throw std::runtime_error("minibatch_update: label out of range");
    c.counts[l] += 1;
    double inv = 1.0 / static_cast<double>(c.counts[l]);
    double* m = c.centroid(l);
    const T* f = features + static_cast<std::size_t>(i) * dim;
    for (int d = 0; d < dim; ++d) m[d] += inv * (static_cast<double>(f[d]) - m[d]);
    touched[l] = 1;
  }
  for (int j = 0; j < c.k; ++j) {
    if (!touched[j]) continue;
    double* m = c.centroid(j);
    if (sigma > 0.0)
      for (int d = 0; d < dim; ++d) m[d] += sigma * rng.gaussian();
    renormalize_row(m, dim, rng);
  }
}

int handle_degenerate(CentroidSet& c, std::vector<std::uint64_t>& histogram,
                      Rng& rng) {
  if (histogram.size() != static_cast<std::size_t>(c.k))
    throw std::runtime_error("handle_degenerate: histogram size mismatch");
  int reseeded = 0;
  for (int j = 0; j < c.k; ++j) {
    if (histogram[j] != 0) continue;
    int donor = 0;
    for (int t = 1; t < c.k; ++t)
      if (histogram[t] > histogram[donor]) donor = t;
    if (histogram[donor] == 0) continue;  // everything empty: nothing to split
    const double* src = c.centroid(donor);
    double* dst = c.centroid(j);
    for (int d = 0; d < c.dim; ++d) dst[d] = src[d] + 1e-3 * rng.gaussian();
    std::uint64_t moved = histogram[donor] / 2;
    histogram[j] = moved;
    histogram[donor] -= moved;
    std::uint64_t cmoved = c.counts[donor] / 2;
    c.counts[j] = cmoved;
    c.counts[donor] -= cmoved;
    renormalize_row(dst, c.dim, rng);
    ++reseeded;
  }
  return reseeded;
}

std::vector<double> class_weights(const std::vector<std::uint64_t>& histogram) {
  std::size_t k = histogram.size();
  std::vector<double> w(k, 1.0);
  std::uint64_t total = std::accumulate(histogram.begin(), histogram.end(), std::uint64_t{0});
  if (total == 0 || k == 0) return w;
  double sum = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    double ratio = static_cast<double>(histogram[j]) / static_cast<double>(total);
    w[j] = 1.0 / std::sqrt(ratio + 1e-6);
    sum += w[j];
  }
  double mean = sum / static_cast<double>(k);
  for (double& v : w) v /= mean;
  return w;
}

template <typename T>
std::vector<int> kmeans_pp_init(const T* features, int n, int dim, int k,
                                Rng& rng) {
  if (n < 1 || k < 1) throw std::runtime_error("kmeans_pp_init: need n >= 1 and k >= 1");
  std::vector<int> chosen;
  chosen.reserve(k);
  chosen.push_back(static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n))));
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::vector<double> x(dim);
  while (static_cast<int>(chosen.size()) < k) {
    const T* last = features + static_cast<std::size_t>(chosen.back()) * dim;
    for (int i = 0; i < n; ++i) {
      const T* f = features + static_cast<std::size_t>(i) * dim;
      double s = 0.0;
      for (int d = 0; d < dim; ++d) {
        double diff = static_cast<double>(f[d]) - static_cast<double>(last[d]);
        s += diff * diff;
      }
      d2[i] = std::min(d2[i], s);
    }
    double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    int pick;
    if (total <= 0.0) {
      pick = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n)));
    } else {
      double r = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc >= r) {
          pick = i;
          break;
        }
      }
    }
    chosen.push_back(pick);
  }
  return chosen;
}

template <typename T>
KmeansResult lloyd_kmeans(const T* features, int n, int dim, int k, Rng& rng,
                          int max_iters) {
  if (n < k) throw std::runtime_error("lloyd_kmeans: fewer points than clusters");
  KmeansResult r;
  r.centroids.assign(static_cast<std::size_t>(k) * dim, 0.0);
  std::vector<int> seeds = kmeans_pp_init(features, n, dim, k, rng);
  for (int j = 0; j < k; ++j) {
    const T* f = features + static_cast<std::size_t>(seeds[j]) * dim;
    double* m = r.centroids.data() + static_cast<std::size_t>(j) * dim;
    for (int d = 0; d < dim; ++d) m[d] = static_cast<double>(f[d]);
  }
  r.labels.assign(n, 0);
  std::vector<double> sums(static_cast<std::size_t>(k) * dim);
  std::vector<std::int64_t> sizes(k);
  std::vector<double> pt_d2(n);
  std::vector<int> prev_labels;
  for (int it = 0; it < max_iters; ++it) {
    r.iters = it + 1;
    double obj = 0.0;
    for (int i = 0; i < n; ++i) {
      const T* f = features + static_cast<std::size_t>(i) * dim;
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int j = 0; j < k; ++j) {
        const double* m = r.centroids.data() + static_cast<std::size_t>(j) * dim;
        double s = 0.0;
        for (int d = 0; d < dim; ++d) {
          double diff = static_cast<double>(f[d]) - m[d];
          s += diff * diff;
        }
        if (s < best_d) {
          best_d = s;
          best = j;
        }
      }
      r.labels[i] = best;
      pt_d2[i] = best_d;
      obj += best_d;
    }
    r.objective = obj;
    // Stop once labels repeat: the centroids are already the means of this
    // labeling, so the returned pair is a consistent fixed point.
    if (it > 0 && r.labels == prev_labels) break;
    prev_labels = r.labels;
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(sizes.begin(), sizes.end(), 0);
    for (int i = 0; i < n; ++i) {
      double* row = sums.data() + static_cast<std::size_t>(r.labels[i]) * dim;
      const T* f = features + static_cast<std::size_t>(i) * dim;
      for (int d = 0; d < dim; ++d) row[d] += static_cast<double>(f[d]);
      ++sizes[r.labels[i]];
    }
    for (int j = 0; j < k; ++j) {
      double* m = r.centroids.data() + static_cast<std::size_t>(j) * dim;
      if (sizes[j] > 0) {
        const double* row = sums.data() + static_cast<std::size_t>(j) * dim;
        for (int d = 0; d < dim; ++d) m[d] = row[d] / static_cast<double>(sizes[j]);
      } else {
        int far = static_cast<int>(std::max_element(pt_d2.begin(), pt_d2.end()) - pt_d2.begin());
        const T* f = features + static_cast<std::size_t>(far) * dim;
        for (int d = 0; d < dim; ++d) m[d] = static_cast<double>(f[d]);
        pt_d2[far] = 0.0;
      }
    }
  }
  return r;
}

template std::vector<int> assign_labels<float>(const float*, int, int, const std::vector<int>&, const CentroidSet&);
template std::vector<int> assign_labels<double>(const double*, int, int, const std::vector<int>&, const CentroidSet&);
template std::vector<int> assign_labels<float>(const float*, int, int, const CentroidSet&);
template std::vector<int> assign_labels<double>(const double*, int, int, const CentroidSet&);
template void minibatch_update<float>(CentroidSet&, const float*, int, int, const std::vector<int>&, Rng&, double);
template void minibatch_update<double>(CentroidSet&, const double*, int, int, const std::vector<int>&, Rng&, double);
template std::vector<int> kmeans_pp_init<float>(const float*, int, int, int, Rng&);
template std::vector<int> kmeans_pp_init<double>(const double*, int, int, int, Rng&);
template KmeansResult lloyd_kmeans<float>(const float*, int, int, int, Rng&, int);
template KmeansResult lloyd_kmeans<double>(const double*, int, int, int, Rng&, int);

}  // namespace u3ds3
