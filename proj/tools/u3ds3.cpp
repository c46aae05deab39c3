// Command-line entry point: one binary, one subcommand per pipeline stage.
// Exit codes: 0 success, 1 usage error, 2 data error.

#include <cstdio>
#include <exception>
#include <stdexcept>
#include <string>

#include "CLI11.hpp"
#include "u3ds3/config.hpp"
#include "u3ds3/pipeline.hpp"

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Per-subcommand configuration plumbing: a --config file is applied first,
// then any flag given on the command line overrides it.
struct ConfigArgs {
  CLI::App* app = nullptr;
  std::string config_path;
  bool dump = false;
  u3ds3::Config flags;  // values bound to the CLI options

  void attach(CLI::App* a) {
    app = a;
    a->add_option("--config", config_path, "config file (key = value lines)");
    a->add_flag("--dump-config", dump, "print the merged config and exit");
  }

  u3ds3::Config merged() const {
    u3ds3::Config cfg;
    if (!config_path.empty()) cfg = u3ds3::parse_config_file(config_path);
    auto pull = [&](const char* flag, const char* key, const std::string& value) {
      const CLI::Option* opt = app->get_option_no_throw(flag);
      if (opt != nullptr && opt->count() > 0) u3ds3::apply_config_entry(cfg, key, value);
    };
    auto num = [](double v) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      return std::string(buf);
    };
    pull("--cell", "cell", num(flags.cell));
    pull("--block", "block", num(flags.block));
    pull("--pts", "pts", std::to_string(flags.pts));
    pull("--gamma", "gamma", std::to_string(flags.gamma));
    pull("--classes", "classes", std::to_string(flags.classes));
    pull("--res", "res", std::to_string(flags.res));
    pull("--dim", "dim", std::to_string(flags.dim));
    pull("--epochs", "epochs", std::to_string(flags.epochs));
    pull("--batch", "batch", std::to_string(flags.batch));
    pull("--lr", "lr", num(flags.lr));
    pull("--wd", "wd", num(flags.wd));
    pull("--seed", "seed", std::to_string(flags.seed));
    pull("--road-ransac", "road_ransac", flags.road_ransac ? "true" : "false");
    pull("--single-pathway", "single_pathway", flags.single_pathway ? "true" : "false");
    pull("--deterministic", "deterministic", flags.deterministic ? "true" : "false");
    return cfg;
  }

  // True when the caller should print the echo and stop.
  bool handle_dump() const {
    if (!dump) return false;
    std::fputs(u3ds3::dump_config(merged()).c_str(), stdout);
    return true;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"u3ds3 - unsupervised 3D semantic scene segmentation"};
  app.require_subcommand(1);

  int exit_code = 0;
  auto guard = [&exit_code](auto&& fn) {
    return [&exit_code, fn]() {
      try {
        fn();
      } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        exit_code = 1;
      } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        exit_code = 2;
      }
    };
  };

  // gen-synth
  auto* gen = app.add_subcommand("gen-synth", "generate a synthetic labeled scene");
  static std::string gen_spec, gen_out;
  static std::uint64_t gen_seed = 0;
  gen->add_option("--spec", gen_spec, "scene spec file")->required();
  gen->add_option("--out", gen_out, "output PLY path")->required();
  gen->add_option("--seed", gen_seed, "override the spec seed");
  gen->callback(guard([&]() {
    u3ds3::run_gen_synth(gen_spec, gen_out, gen->count("--seed") > 0, gen_seed);
  }));

  // preprocess
  auto* pre = app.add_subcommand("preprocess",
                                 "downsample, estimate normals, sample blocks");
  static std::string pre_in, pre_out;
  static ConfigArgs pre_cfg;
  pre->add_option("--in", pre_in, "input PLY")->required();
  pre->add_option("--out", pre_out, "output directory")->required();
  pre->add_option("--cell", pre_cfg.flags.cell, "downsample cell size, meters");
  pre->add_option("--block", pre_cfg.flags.block, "block edge, meters");
  pre->add_option("--pts", pre_cfg.flags.pts, "points per block");
  pre->add_option("--seed", pre_cfg.flags.seed, "sampling seed");
  pre_cfg.attach(pre);
  pre->callback(guard([&]() {
    if (pre_cfg.handle_dump()) return;
    u3ds3::run_preprocess(pre_in, pre_out, pre_cfg.merged());
  }));

  // superpoints
  auto* sp = app.add_subcommand("superpoints", "geometric pre-segmentation");
  static std::string sp_in, sp_out;
  static ConfigArgs sp_cfg;
  sp->add_option("--in", sp_in, "preprocessed PLY")->required();
  sp->add_option("--out", sp_out, "output superpoint file")->required();
  sp->add_option("--gamma", sp_cfg.flags.gamma, "target superpoint count");
  sp->add_option("--cell", sp_cfg.flags.cell, "supervoxel resolution, meters");
  sp->add_option("--seed", sp_cfg.flags.seed, "RANSAC seed");
  sp->add_flag("--road-ransac", sp_cfg.flags.road_ransac,
               "extract a ground plane first");
  sp_cfg.attach(sp);
  sp->callback(guard([&]() {
    if (sp_cfg.handle_dump()) return;
    u3ds3::run_superpoints(sp_in, sp_out, sp_cfg.merged());
  }));

  // train
  auto* tr = app.add_subcommand("train", "two-pathway clustering training");
  static std::string tr_data, tr_out;
  static ConfigArgs tr_cfg;
  tr->add_option("--data", tr_data, "preprocessed scene directory")->required();
  tr->add_option("--out", tr_out, "output checkpoint path")->required();
  tr->add_option("--classes", tr_cfg.flags.classes, "number of clusters K");
  tr->add_option("--gamma", tr_cfg.flags.gamma, "superpoints per scene");
  tr->add_option("--epochs", tr_cfg.flags.epochs, "training epochs");
  tr->add_option("--batch", tr_cfg.flags.batch, "blocks per batch");
  tr->add_option("--lr", tr_cfg.flags.lr, "learning rate");
  tr->add_option("--wd", tr_cfg.flags.wd, "weight decay");
  tr->add_option("--res", tr_cfg.flags.res, "voxel grid resolution");
  tr->add_option("--pts", tr_cfg.flags.pts, "points per block");
  tr->add_option("--cell", tr_cfg.flags.cell, "downsample cell size");
  tr->add_option("--block", tr_cfg.flags.block, "block edge");
  tr->add_option("--seed", tr_cfg.flags.seed, "training seed");
  tr->add_flag("--single-pathway", tr_cfg.flags.single_pathway,
               "train pathway 1 only");
  tr->add_flag("--deterministic", tr_cfg.flags.deterministic,
               "fixed execution order for byte-identical reruns");
  tr_cfg.attach(tr);
  tr->callback(guard([&]() {
    if (tr_cfg.handle_dump()) return;
    u3ds3::Config cfg = tr_cfg.merged();
    if (cfg.classes < 1) throw UsageError("train: --classes is required");
    u3ds3::run_train(tr_data, cfg, tr_out);
  }));

  // segment
  auto* seg = app.add_subcommand("segment", "label a scene with a checkpoint");
  static std::string seg_ckpt, seg_in, seg_sp, seg_out;
  seg->add_option("--ckpt", seg_ckpt, "checkpoint file")->required();
  seg->add_option("--in", seg_in, "preprocessed PLY")->required();
  seg->add_option("--sp", seg_sp, "superpoint file")->required();
  seg->add_option("--out", seg_out, "output labeled PLY")->required();
  seg->callback(guard([&]() {
    u3ds3::run_segment(seg_ckpt, seg_in, seg_sp, seg_out);
  }));

  // eval
  auto* ev = app.add_subcommand("eval", "Hungarian-matched segmentation metrics");
  static std::string ev_pred, ev_gt, ev_out;
  static int ev_classes = 0;
  ev->add_option("--pred", ev_pred, "predicted labels (PLY or one id per line)")
      ->required();
  ev->add_option("--gt", ev_gt, "ground-truth PLY")->required();
  ev->add_option("--classes", ev_classes, "number of classes K");
  ev->add_option("--out", ev_out, "output CSV path");
  ev->callback(guard([&]() {
    if (ev_classes < 1) throw UsageError("eval: --classes is required");
    u3ds3::run_eval(ev_pred, ev_gt, ev_classes, ev_out);
  }));

  // export-ply
  auto* ex = app.add_subcommand("export-ply", "attach labels and class colors");
  static std::string ex_in, ex_labels, ex_out;
  ex->add_option("--in", ex_in, "input PLY")->required();
  ex->add_option("--labels", ex_labels, "label file, one id per line")->required();
  ex->add_option("--out", ex_out, "output PLY")->required();
  ex->callback(guard([&]() {
    u3ds3::run_export_ply(ex_in, ex_labels, ex_out);
  }));

  // selftest
  auto* st = app.add_subcommand("selftest", "fast invariant checks");
  st->callback(guard([&]() {
    if (u3ds3::run_selftest() != 0)
      throw std::runtime_error("selftest reported failures");
  }));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  return exit_code;
}
