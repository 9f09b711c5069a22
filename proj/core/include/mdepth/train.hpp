#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mdepth/checkpoint.hpp"
#include "mdepth/eval.hpp"
#include "mdepth/losses.hpp"
#include "mdepth/models.hpp"
#include "mdepth/synth.hpp"

namespace mdepth {

enum class Phase { pretrain, finetune };
enum class LrSchedule { cosine, step };
enum class IntrinsicsMode { known, learned };

struct TrainConfig {
  Phase phase = Phase::pretrain;
  std::size_t batch_size = 16;
  std::size_t epochs = 6;
  std::size_t max_steps = 0;  // 0: no cap
  double weight_decay = 1e-3;
  double initial_lr = 1e-4;
  double adjusted_lr = 1e-5;
  LrSchedule lr_schedule = LrSchedule::cosine;
  std::size_t adjustment_epoch = 4;
  double lambda = 0.9;
  bool lambda_bump = false;
  double lambda_bump_value = 0.95;
  std::size_t lambda_bump_epochs = 5;
  std::uint64_t seed = 1;
  IntrinsicsMode intrinsics_mode = IntrinsicsMode::known;
  std::size_t n_scales = 4;
  double alpha = 0.85;
  double disparity_floor = 1e-4;
  bool use_automask = true;
  bool use_min_reprojection = true;
  bool multiscale_psl = true;
  bool color_jitter = true;
  bool horizontal_flip = true;
  bool aspect_augment = false;
  std::size_t aspect_height = 192;  // aspect augmentation target extents
  std::size_t aspect_width = 640;
  std::size_t prefetch = 4;         // bounded queue depth of the loader thread

  /// Default hyperparameter column for a phase: pretrain 6 epochs, cosine to 1e-5 by epoch
  /// 4, aspect augmentation on; finetune 20 epochs, step drop at epoch 10,
  /// lambda bump over the last 5 epochs.
  static TrainConfig for_phase(Phase phase);

  void validate() const;
  LossConfig loss_config(double lambda_value) const;
};

/// key = value lines, '#' comments. Unknown keys and malformed values throw
/// with the line number.
TrainConfig parse_config(std::istream& is, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});
/// Canonical key = value rendering of every field, in a fixed order.
std::string format_config(const TrainConfig& cfg);
/// 64-bit FNV-1a of format_config.
std::uint64_t config_hash(const TrainConfig& cfg);

/// Learning rate at fractional epoch `epoch`. Cosine decays from initial_lr
/// to adjusted_lr over [0, adjustment_epoch] and then holds; step holds
/// initial_lr until adjustment_epoch and drops to adjusted_lr.
double learning_rate(const TrainConfig& cfg, double epoch);
/// Loss weight for a whole epoch, including the optional final-epochs bump.
double lambda_for_epoch(const TrainConfig& cfg, std::size_t epoch);

struct LossRecord {
  std::size_t step = 0;
  double lr = 0;
  double lambda = 0;
  double ssl = 0;
  double psl = 0;
  double total = 0;
};

inline constexpr const char* kLossCsvHeader = "step,lr,lambda,ssl,psl,total";
std::string loss_csv_row(const LossRecord& r);

struct TrainResult {
  std::size_t steps = 0;
  std::vector<LossRecord> log;
};

struct TrainOptions {
  std::optional<std::filesystem::path> loss_csv;
  std::function<void(const LossRecord&)> on_step;
  /// Cap on manifest entries used (0: all).
  std::size_t max_samples = 0;
};

/// Trains `model` in place on the archive at `data_dir`. The model should
/// already be initialized (or restored). Throws on a non-finite loss with the
/// step index.
TrainResult train(Model<float>& model, const TrainConfig& cfg, const std::filesystem::path& data_dir,
                  const TrainOptions& opts = {});

/// Finest-scale disparity for a (3,H,W) image, without a graph.
Plane<double> predict_disparity(const Model<float>& model, const Image& image);

struct ArchiveEvaluation {
  MetricReport metrics;
  /// Mean over scenes of predicted fx / ground-truth fx.
  double fx_ratio = 0;
  std::size_t scenes = 0;
};

/// Runs the depth net on each scene's target, inverts the floored
/// disparity and reports frame-averaged metrics against gt_disp.ndtf.
ArchiveEvaluation evaluate_archive(const Model<float>& model, const std::filesystem::path& data_dir,
                                   const EvalProtocol& protocol, double disparity_floor = 1e-4,
                                   std::size_t max_scenes = 0);

/// Writes the raw finest disparity as NDTF and a 16-bit visualization
/// normalized by its maximum (.png or .pgm by extension).
void export_depth(const Model<float>& model, const std::filesystem::path& image_path,
                  const std::filesystem::path& out_image, const std::filesystem::path& out_ndtf);

/// Model sized from the checkpoint, with its parameters restored.
Model<float> model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace mdepth
