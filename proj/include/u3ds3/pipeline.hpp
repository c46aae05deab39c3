#pragma once

// Stage orchestration behind the CLI subcommands: synthetic generation,
// preprocessing, superpoints, training with per-epoch evaluation, scene
// segmentation, standalone evaluation, and colorized PLY export.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "u3ds3/config.hpp"
#include "u3ds3/pointcloud.hpp"
#include "u3ds3/trainer.hpp"

namespace u3ds3 {

struct SceneData {
  std::string stem;
  PointCloud cloud;          // preprocessed: downsampled, normals attached
  std::vector<int> sp_ids;   // per point
  std::vector<Block> blocks; // sp/gt re-attached
};

void run_gen_synth(const std::string& spec_path, const std::string& out_ply,
                   bool override_seed, std::uint64_t seed);

// Downsample + estimate normals + sample blocks; writes <stem>.ply and
// <stem>.blocks into out_dir.
void run_preprocess(const std::string& in_ply, const std::string& out_dir,
                    const Config& cfg);

void run_superpoints(const std::string& in_ply, const std::string& out_sp,
                     const Config& cfg);

// Loads every <stem>.ply in data_dir together with its .blocks and .sp
// sidecars (sorted by stem); errors name whichever file is missing or
// inconsistent.
std::vector<SceneData> load_train_data(const std::string& data_dir, const Config& cfg);

// Full training run. When every scene carries ground-truth labels, each
// epoch ends with dataset-level Hungarian evaluation appended to report.csv
// next to the checkpoint.
void run_train(const std::string& data_dir, const Config& cfg,
               const std::string& out_ckpt);

void run_segment(const std::string& ckpt_path, const std::string& in_ply,
                 const std::string& sp_path, const std::string& out_ply);

// pred_path may be a PLY with a label property or a plain one-id-per-line
// labels file.
void run_eval(const std::string& pred_path, const std::string& gt_ply, int classes,
              const std::string& out_csv);

void run_export_ply(const std::string& in_ply, const std::string& labels_path,
                    const std::string& out_ply);

// Raw-feature reference clustering: the same chunked 12-D block features the
// network consumes, pooled across all scenes, clustered with full-batch
// k-means, labels mapped back per scene. Used as the learning-free baseline.
std::vector<std::vector<int>> baseline_labels(const std::vector<SceneData>& scenes,
                                              int classes, std::uint64_t seed, int pts);

// Fast invariant suite; returns the number of failed checks and prints one
// line per check.
int run_selftest();

// Deterministic distinct color for a class id (cycles after 20).
std::array<double, 3> class_color(int label);

}  // namespace u3ds3
