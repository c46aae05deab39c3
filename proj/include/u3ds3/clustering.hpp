#pragma once

// Superpoint-constrained clustering: centroid sets, streaming minibatch
// updates, degenerate-cluster handling, and inverse-frequency class weights.
// Features and centroids live on the unit sphere; distances are cosine.

#include <cstdint>
#include <vector>

#include "u3ds3/rng.hpp"

namespace u3ds3 {

struct CentroidSet {
  int k = 0;
  int dim = 0;
  int pathway = 0;  // informational tag: 1 or 2
  std::vector<double> mu;        // k x dim, row-major
  std::vector<std::uint64_t> counts;  // lifetime assignment counts

  CentroidSet() = default;
  CentroidSet(int k_, int dim_, int pathway_ = 0)
      : k(k_), dim(dim_), pathway(pathway_), mu(static_cast<std::size_t>(k_) * dim_, 0.0), counts(k_, 0) {}

  double* centroid(int j) { return mu.data() + static_cast<std::size_t>(j) * dim; }
  const double* centroid(int j) const { return mu.data() + static_cast<std::size_t>(j) * dim; }

  // Checks shape consistency and unit centroid norms (1e-6).
  void validate() const;
};

// Normalizes every centroid row to unit length (rows with tiny norm are
// re-seeded deterministically from rng on the unit sphere).
void renormalize_centroids(CentroidSet& c, Rng& rng);

// Index of the centroid closest to x in squared Euclidean distance (ties:
// lowest index).
int nearest_centroid(const double* x, const CentroidSet& c);

// Assigns one label per point under the superpoint constraint: all points of
// a superpoint receive the label of the centroid closest (squared Euclidean)
// to the superpoint's mean feature. Ties take the lowest centroid index.
// features: n x dim row-major; sp_ids: per-point superpoint id (>= 0).
template <typename T>
std::vector<int> assign_labels(const T* features, int n, int dim,
                               const std::vector<int>& sp_ids,
                               const CentroidSet& c);

// Convenience: unconstrained assignment (each point its own group).
template <typename T>
std::vector<int> assign_labels(const T* features, int n, int dim,
                               const CentroidSet& c);

// Streaming k-means update. For each point x with label l, in input order:
//   count_l += 1;  mu_l += (x - mu_l) / count_l.
// Afterwards every centroid touched by this batch is perturbed with
// elementwise N(0, sigma^2) noise and renormalized to the unit sphere
// (touched centroids visited in ascending index order).
template <typename T>
void minibatch_update(CentroidSet& c, const T* features, int n, int dim,
                      const std::vector<int>& labels, Rng& rng,
                      double sigma = 1e-4);

// Re-seeds empty clusters from the largest one. For each label with a zero
// histogram entry (ascending order), the currently largest cluster donates:
// the empty centroid becomes the donor centroid plus N(0, 1e-3^2) noise
// (renormalized), and the donor's histogram mass is split in half
// (new = count/2, donor keeps count - new). Both the histogram and
// c.counts receive the split. Returns the number of re-seeded clusters.
int handle_degenerate(CentroidSet& c, std::vector<std::uint64_t>& histogram,
                      Rng& rng);

// Inverse-sqrt frequency weights: w_k = (count_k / total + 1e-6)^(-1/2),
// then normalized to mean 1. An all-zero histogram yields all-ones.
std::vector<double> class_weights(const std::vector<std::uint64_t>& histogram);

// k-means++ seeding over a feature matrix (n x dim). Returns k row indices.
template <typename T>
std::vector<int> kmeans_pp_init(const T* features, int n, int dim, int k,
                                Rng& rng);

struct KmeansResult {
  std::vector<int> labels;
  std::vector<double> centroids;  // k x dim
  double objective = 0.0;         // sum of squared distances to assigned centroid
  int iters = 0;
};

// Full-batch Lloyd k-means with k-means++ seeding, run to convergence or
// max_iters. Empty clusters are re-seeded from the farthest point. Used by
// the raw-feature baseline and as a reference for the streaming updates.
template <typename T>
KmeansResult lloyd_kmeans(const T* features, int n, int dim, int k, Rng& rng,
                          int max_iters = 100);

}  // namespace u3ds3
