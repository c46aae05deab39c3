#pragma once

// Two-pathway training loop. Each epoch alternates a clustering phase
// (stream blocks in eval mode, assign pseudo-labels per pathway, update the
// per-pathway centroids online) with a training phase (stream blocks in
// batches, recompute labels against the frozen phase-A centroids, minimize
// the summed cross-pathway cluster losses by SGD).

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "u3ds3/clustering.hpp"
#include "u3ds3/config.hpp"
#include "u3ds3/network.hpp"
#include "u3ds3/pointcloud.hpp"
#include "u3ds3/voxel.hpp"

namespace u3ds3 {

struct TrainState {
  Config config;
  NetworkParams<float> net;
  std::array<CentroidSet, 2> centroids;             // pathway 1, pathway 2
  std::array<std::vector<std::uint64_t>, 2> hist;   // previous epoch's label counts
  std::array<std::vector<double>, 2> weights;       // current per-class loss weights
  std::uint64_t epoch = 0;
  bool centroids_ready = false;                     // seeded during the first epoch
};

// Fresh state: He-initialized network, unseeded centroids, all-ones weights.
TrainState init_train_state(const Config& cfg);

// Checkpoint round trips are byte-exact: save(load(save(x))) == save(x).
void save_checkpoint(const std::string& path, const TrainState& state);
TrainState load_checkpoint(const std::string& path);

// One block through both pathways. Pathway 1 jitters colors, flips the
// voxel grid, runs the network, and un-flips the output; pathway 2 jitters
// only. Both devoxelize at the shared block coordinates and L2-normalize
// per point. In train mode tapes are recorded for backward.
struct PathwayBatch {
  int n = 0;
  std::vector<double> coords;            // n x 3 normalized block coordinates
  FlipSpec flip;
  Tensor3<float> out1, out2;             // network outputs in unflipped frame
  std::vector<float> fp1, fp2;           // n x 128, unit rows
  std::vector<float> norm1, norm2;       // pre-normalization row norms
  Tape<float> tape1, tape2;              // train mode only
};

PathwayBatch pathway_forward(const Block& block, NetworkParams<float>& net,
                             int res, const FlipSpec& flip,
                             const ColorJitter& jitter1, const ColorJitter& jitter2,
                             Mode mode, Workspace<float>& ws,
                             bool single_pathway = false);

// Non-parametric classification loss: per point i with label l and weight
// w_l, -w_l * log softmax over logits s_t = -(1 - cos(f_i, mu_t)), averaged
// over points. The gradient with respect to the features is ADDED into
// grad_out (pass nullptr to skip); centroids receive no gradient.
template <typename T>
double cluster_loss(const T* features, int n, int dim,
                    const std::vector<int>& labels, const CentroidSet& c,
                    const std::vector<double>& weights, T* grad_out);

struct TwoPathwayLoss {
  double l1 = 0.0;      // same-pathway terms
  double l2 = 0.0;      // cross-pathway terms
  double total = 0.0;   // l1 + l2
};

// L1 = loss(f1 | labels1, mu1) + loss(f2 | labels2, mu2);
// L2 = loss(f1 | labels2, mu2) + loss(f2 | labels1, mu1); total = L1 + L2.
// Gradients accumulate into grad1/grad2 (zeroed by the caller). With
// single_pathway set, only L1's first term is evaluated.
TwoPathwayLoss two_pathway_loss(const float* f1, const float* f2, int n, int dim,
                                const std::vector<int>& labels1,
                                const std::vector<int>& labels2,
                                const CentroidSet& c1, const CentroidSet& c2,
                                const std::vector<double>& w1,
                                const std::vector<double>& w2, float* grad1,
                                float* grad2, bool single_pathway = false);

// Propagates a feature gradient back to a network-output-gradient tensor:
// through the per-point L2 normalization, then the devoxelization adjoint.
// grad_grid must be shaped and zeroed by the caller.
template <typename T>
void feature_grad_to_grid(const T* grad_features, const T* fp, const T* norms,
                          int n, int dim, const double* coords,
                          Tensor3<T>& grad_grid);

// One full epoch over the block list (clustering phase then training phase).
// Blocks are visited in list order for clustering and in a seeded shuffled
// order for training. The first epoch seeds both centroid sets with
// k-means++ over the features of up to 50 leading batches.
void run_epoch(TrainState& state, const std::vector<const Block*>& blocks,
               Workspace<float>& ws);

// Labels every point of a preprocessed scene: exhaustive seeded chunking
// into blocks, canonical-pathway features (no jitter, no flip, eval-mode
// statistics), superpoint mean features aggregated across the whole scene,
// then nearest-centroid assignment. The canonical pathway is 2, or 1 when
// the state was trained single-pathway. Eval-mode passes leave the state
// unchanged; the reference is mutable only to share the forward signature.
std::vector<int> infer_labels(TrainState& state, const PointCloud& cloud,
                              const std::vector<int>& sp_ids, Workspace<float>& ws);

}  // namespace u3ds3
