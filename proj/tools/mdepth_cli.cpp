#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "mdepth/checkpoint.hpp"
#include "mdepth/eval.hpp"
#include "mdepth/synth.hpp"
#include "mdepth/train.hpp"

namespace fs = std::filesystem;
using namespace mdepth;

namespace {

int cmd_gen_synth(std::size_t n, std::size_t h, std::size_t w, const fs::path& out, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  generate_archive(out, n, h, w, seed);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  spdlog::info("wrote {} scenes ({}x{}) to {} in {:.1f}s", n, h, w, out.string(), secs);
  return 0;
}

struct TrainArgs {
  fs::path config, data_dir, out, init, loss_log;
  std::string phase;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

int cmd_train(const TrainArgs& a) {
  TrainConfig base = TrainConfig::for_phase(a.phase == "finetune" ? Phase::finetune : Phase::pretrain);
  TrainConfig cfg = a.config.empty() ? base : load_config(a.config, base);
  if (!a.overrides.empty()) {
    std::stringstream ss;
    for (const auto& kv : a.overrides) ss << kv << '\n';
    cfg = parse_config(ss, cfg);
  }
  if (a.seed_set) cfg.seed = a.seed;
  cfg.validate();

  Model<float> model(cfg.n_scales);
  std::uint64_t start_step = 0;
  if (!a.init.empty()) {
    const auto ckpt = load_checkpoint(a.init);
    restore_parameters(model, ckpt);
    start_step = ckpt.step;
    spdlog::info("initialized from {} (step {})", a.init.string(), ckpt.step);
  } else {
    model.init_weights(cfg.seed);
  }
  TrainOptions opts;
  opts.loss_csv = a.loss_log.empty() ? fs::path(a.out.string() + ".loss.csv") : a.loss_log;
  opts.on_step = [](const LossRecord& r) {
    if (r.step % 50 == 0) spdlog::info("step {:6d} lr {:.3e} lambda {:.2f} ssl {:.5f} psl {:.5f} total {:.5f}", r.step, r.lr, r.lambda, r.ssl, r.psl, r.total);
  };
  const auto result = train(model, cfg, a.data_dir, opts);
  save_checkpoint(a.out, make_checkpoint(model, start_step + result.steps, config_hash(cfg)));
  spdlog::info("{} steps; checkpoint {} ; loss log {}", result.steps, a.out.string(), opts.loss_csv->string());
  return 0;
}

struct EvalArgs {
  fs::path checkpoint, data_dir, out;
  std::string alignment = "median", crop = "none";
  double max_depth = 80, min_depth = 1e-3;
  std::size_t max_scenes = 0;
};

int cmd_eval(const EvalArgs& a) {
  const auto model = model_from_checkpoint(load_checkpoint(a.checkpoint));
  EvalProtocol p = EvalProtocol::make(parse_alignment(a.alignment), parse_crop(a.crop), a.max_depth);
  p.min_depth = a.min_depth;
  p.validate();
  const auto r = evaluate_archive(model, a.data_dir, p, 1e-4, a.max_scenes);
  const std::string label = to_string(p.alignment) + "/" + to_string(p.crop) + "/" + std::to_string(int(p.max_depth)) + "m";
  write_metric_table(std::cout, {{label, r.metrics}});
  std::cout << "scenes " << r.scenes << ", predicted fx / true fx " << r.fx_ratio << '\n';
  if (!a.out.empty()) {
    std::ofstream os(a.out);
    if (!os) throw std::runtime_error(a.out.string() + ": cannot open for writing");
    os << kMetricCsvHeader << '\n' << metric_csv_row(label, r.metrics) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mdepth: self-supervised monocular depth training on a desk"};
  app.require_subcommand(1);

  std::size_t n = 100, h = 64, w = 96;
  fs::path gen_out;
  std::uint64_t gen_seed = 1;
  auto* gen = app.add_subcommand("gen-synth", "Generate a synthetic scene archive");
  gen->add_option("-n,--n-scenes", n, "Number of scenes")->capture_default_str();
  gen->add_option("--height", h, "Image height (multiple of 16)")->capture_default_str();
  gen->add_option("--width", w, "Image width (multiple of 16)")->capture_default_str();
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", gen_seed, "Seed of the first scene")->capture_default_str();

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train depth and camera networks");
  tr->add_option("--config", ta.config, "key = value config file")->check(CLI::ExistingFile);
  tr->add_option("--data-dir", ta.data_dir, "Archive with manifest.txt")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--out", ta.out, "Output checkpoint")->required();
  tr->add_option("--phase", ta.phase, "Default column: pretrain | finetune")->check(CLI::IsMember({"pretrain", "finetune"}));
  tr->add_option("--init", ta.init, "Start from this checkpoint")->check(CLI::ExistingFile);
  tr->add_option("--loss-log", ta.loss_log, "Loss CSV (default <out>.loss.csv)");
  tr->add_option("--set", ta.overrides, "Config override key=value (repeatable)");
  auto* seed_opt = tr->add_option("--seed", ta.seed, "Overrides the config seed");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on an archive with ground truth");
  ev->add_option("--checkpoint", ea.checkpoint)->required()->check(CLI::ExistingFile);
  ev->add_option("--data-dir", ea.data_dir)->required()->check(CLI::ExistingDirectory);
  ev->add_option("--alignment", ea.alignment, "median | lsq | none")->capture_default_str();
  ev->add_option("--crop", ea.crop, "none | garg | eigen | center")->capture_default_str();
  ev->add_option("--max-depth", ea.max_depth)->capture_default_str();
  ev->add_option("--min-depth", ea.min_depth)->capture_default_str();
  ev->add_option("--max-scenes", ea.max_scenes, "0 = all")->capture_default_str();
  ev->add_option("--out", ea.out, "Metric CSV");

  fs::path ex_ckpt, ex_image, ex_out, ex_ndtf;
  auto* ex = app.add_subcommand("export", "Export a disparity map for one image");
  ex->add_option("--checkpoint", ex_ckpt)->required()->check(CLI::ExistingFile);
  ex->add_option("--image", ex_image)->required()->check(CLI::ExistingFile);
  ex->add_option("--out", ex_out, "16-bit visualization (.png or .pgm)")->required();
  ex->add_option("--ndtf", ex_ndtf, "Raw disparity (default <out>.ndtf)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return cmd_gen_synth(n, h, w, gen_out, gen_seed);
    if (*tr) {
      ta.seed_set = seed_opt->count() > 0;
      return cmd_train(ta);
    }
    if (*ev) return cmd_eval(ea);
    if (*ex) {
      if (ex_ndtf.empty()) ex_ndtf = fs::path(ex_out).replace_extension(".ndtf");
      export_depth(model_from_checkpoint(load_checkpoint(ex_ckpt)), ex_image, ex_out, ex_ndtf);
      spdlog::info("wrote {} and {}", ex_out.string(), ex_ndtf.string());
      return 0;
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
