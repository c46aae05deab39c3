#pragma once

// Run configuration shared by every subcommand: preprocessing geometry,
// network/training hyperparameters, and reproducibility controls. A config
// file is plain `key = value` lines; command-line flags override it; the
// merged result echoes back canonically so runs are self-documenting.

#include <cstdint>
#include <string>

namespace u3ds3 {

struct Config {
  double cell = 0.03;      // downsample grid resolution, meters
  double block = 1.5;      // training block edge length, meters
  int pts = 4096;          // points per block
  int gamma = 40;          // superpoints per scene after merging
  int classes = 0;         // number of clusters K (required where used)
  int res = 32;            // voxel grid resolution per axis
  int dim = 128;           // feature dimension (the extractor emits 128)
  int epochs = 10;
  int batch = 4;
  double lr = 1e-4;
  double wd = 1e-5;
  std::uint64_t seed = 0;
  bool road_ransac = false;
  bool single_pathway = false;
  bool deterministic = false;

  // Geometry/training sanity checks for every subcommand.
  void validate() const;
  // Additional check for stages that need K.
  void require_classes() const;
};

// Parses `key = value` lines; '#' starts a comment; unknown keys and
// malformed values raise errors naming the line.
Config parse_config_file(const std::string& path);

// Applies one key/value pair (shared by the file parser and flag overrides).
void apply_config_entry(Config& cfg, const std::string& key,
                        const std::string& value);

// Canonical echo: fixed key order, shortest round-trip float formatting,
// identical across platforms for identical values.
std::string dump_config(const Config& cfg);

}  // namespace u3ds3
