#include "mdepth/train.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "mdepth/data.hpp"
#include "mdepth/ndtf.hpp"
#include "mdepth/ops.hpp"
#include "mdepth/optim.hpp"

namespace mdepth {

namespace fs = std::filesystem;

TrainConfig TrainConfig::for_phase(Phase phase) {
  TrainConfig c;
  c.phase = phase;
  if (phase == Phase::pretrain) {
    c.epochs = 6;
    c.lr_schedule = LrSchedule::cosine;
    c.adjustment_epoch = 4;
    c.aspect_augment = true;
    c.lambda_bump = false;
  } else {
    c.epochs = 20;
    c.lr_schedule = LrSchedule::step;
    c.adjustment_epoch = 10;
    c.aspect_augment = false;
    c.lambda_bump = true;
  }
  return c;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("TrainConfig: " + m); };
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(initial_lr > 0)) fail("initial_lr must be positive");
  if (!(adjusted_lr > 0 && adjusted_lr <= initial_lr)) fail("need 0 < adjusted_lr <= initial_lr");
  if (epochs > 0 && adjustment_epoch >= epochs) fail("adjustment_epoch must be < epochs");
  if (!(weight_decay >= 0)) fail("weight_decay must be >= 0");
  if (!(lambda_bump_value >= 0 && lambda_bump_value <= 1)) fail("lambda_bump_value must lie in [0,1]");
  if (prefetch < 1) fail("prefetch must be >= 1");
  if (aspect_augment && (aspect_height % (std::size_t{1} << (n_scales + 1)) != 0 ||
                         aspect_width % (std::size_t{1} << (n_scales + 1)) != 0)) {
    fail("aspect target extents must be divisible by 2^(n_scales+1)");
  }
  loss_config(lambda).validate();
}

LossConfig TrainConfig::loss_config(double lambda_value) const {
  LossConfig lc;
  lc.alpha = alpha;
  lc.lambda = lambda_value;
  lc.n_scales = n_scales;
  lc.disparity_floor = disparity_floor;
  lc.use_automask = use_automask;
  lc.use_min_reprojection = use_min_reprojection;
  lc.multiscale_psl = multiscale_psl;
  return lc;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw std::invalid_argument("expected a boolean, got '" + v + "'");
}

double parse_double(const std::string& v) {
  std::size_t pos = 0;
  const double d = std::stod(v, &pos);
  if (pos != v.size() || !std::isfinite(d)) throw std::invalid_argument("expected a number, got '" + v + "'");
  return d;
}

std::uint64_t parse_uint(const std::string& v) {
  if (v.empty() || v[0] == '-') throw std::invalid_argument("expected a non-negative integer, got '" + v + "'");
  std::size_t pos = 0;
  const auto n = std::stoull(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("expected a non-negative integer, got '" + v + "'");
  return n;
}

Phase parse_phase(const std::string& v) {
  if (v == "pretrain") return Phase::pretrain;
  if (v == "finetune") return Phase::finetune;
  throw std::invalid_argument("phase must be pretrain | finetune");
}

LrSchedule parse_schedule(const std::string& v) {
  if (v == "cosine") return LrSchedule::cosine;
  if (v == "step") return LrSchedule::step;
  throw std::invalid_argument("lr_schedule must be cosine | step");
}

IntrinsicsMode parse_intrinsics(const std::string& v) {
  if (v == "known") return IntrinsicsMode::known;
  if (v == "learned") return IntrinsicsMode::learned;
  throw std::invalid_argument("intrinsics_mode must be known | learned");
}

void set_field(TrainConfig& c, const std::string& key, const std::string& v) {
  auto sz = [&] { return static_cast<std::size_t>(parse_uint(v)); };
  if (key == "phase") c.phase = parse_phase(v);
  else if (key == "batch_size") c.batch_size = sz();
  else if (key == "epochs") c.epochs = sz();
  else if (key == "max_steps") c.max_steps = sz();
  else if (key == "weight_decay") c.weight_decay = parse_double(v);
  else if (key == "initial_lr") c.initial_lr = parse_double(v);
  else if (key == "adjusted_lr") c.adjusted_lr = parse_double(v);
  else if (key == "lr_schedule") c.lr_schedule = parse_schedule(v);
  else if (key == "adjustment_epoch") c.adjustment_epoch = sz();
  else if (key == "lambda") c.lambda = parse_double(v);
  else if (key == "lambda_bump") c.lambda_bump = parse_bool(v);
  else if (key == "lambda_bump_value") c.lambda_bump_value = parse_double(v);
  else if (key == "lambda_bump_epochs") c.lambda_bump_epochs = sz();
  else if (key == "seed") c.seed = parse_uint(v);
  else if (key == "intrinsics_mode") c.intrinsics_mode = parse_intrinsics(v);
  else if (key == "n_scales") c.n_scales = sz();
  else if (key == "alpha") c.alpha = parse_double(v);
  else if (key == "disparity_floor") c.disparity_floor = parse_double(v);
  else if (key == "use_automask") c.use_automask = parse_bool(v);
  else if (key == "use_min_reprojection") c.use_min_reprojection = parse_bool(v);
  else if (key == "multiscale_psl") c.multiscale_psl = parse_bool(v);
  else if (key == "color_jitter") c.color_jitter = parse_bool(v);
  else if (key == "horizontal_flip") c.horizontal_flip = parse_bool(v);
  else if (key == "aspect_augment") c.aspect_augment = parse_bool(v);
  else if (key == "aspect_height") c.aspect_height = sz();
  else if (key == "aspect_width") c.aspect_width = sz();
  else if (key == "prefetch") c.prefetch = sz();
  else throw std::invalid_argument("unknown key '" + key + "'");
}

}  // namespace

TrainConfig parse_config(std::istream& is, TrainConfig base) {
  std::vector<std::tuple<std::size_t, std::string, std::string>> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    }
    auto key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    // TOML-style quoted strings are accepted.
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    entries.emplace_back(lineno, key, value);
  }
  // A phase key selects that phase's column as the base for the other keys.
  for (const auto& [n, key, value] : entries) {
    if (key != "phase") continue;
    try {
      base = TrainConfig::for_phase(parse_phase(value));
    } catch (const std::exception& e) {
      throw std::invalid_argument("config line " + std::to_string(n) + ": " + e.what());
    }
  }
  for (const auto& [n, key, value] : entries) {
    try {
      set_field(base, key, value);
    } catch (const std::exception& e) {
      throw std::invalid_argument("config line " + std::to_string(n) + ": " + e.what());
    }
  }
  base.validate();
  return base;
}

TrainConfig load_config(const fs::path& path, TrainConfig base) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error(path.string() + ": cannot open");
  try {
    return parse_config(is, base);
  } catch (const std::exception& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

std::string format_config(const TrainConfig& c) {
  std::ostringstream os;
  os.precision(17);
  auto b = [](bool v) { return v ? "true" : "false"; };
  os << "phase = " << (c.phase == Phase::pretrain ? "pretrain" : "finetune") << '\n'
     << "batch_size = " << c.batch_size << '\n'
     << "epochs = " << c.epochs << '\n'
     << "max_steps = " << c.max_steps << '\n'
     << "weight_decay = " << c.weight_decay << '\n'
     << "initial_lr = " << c.initial_lr << '\n'
     << "adjusted_lr = " << c.adjusted_lr << '\n'
     << "lr_schedule = " << (c.lr_schedule == LrSchedule::cosine ? "cosine" : "step") << '\n'
     << "adjustment_epoch = " << c.adjustment_epoch << '\n'
     << "lambda = " << c.lambda << '\n'
     << "lambda_bump = " << b(c.lambda_bump) << '\n'
     << "lambda_bump_value = " << c.lambda_bump_value << '\n'
     << "lambda_bump_epochs = " << c.lambda_bump_epochs << '\n'
     << "seed = " << c.seed << '\n'
     << "intrinsics_mode = " << (c.intrinsics_mode == IntrinsicsMode::known ? "known" : "learned") << '\n'
     << "n_scales = " << c.n_scales << '\n'
     << "alpha = " << c.alpha << '\n'
     << "disparity_floor = " << c.disparity_floor << '\n'
     << "use_automask = " << b(c.use_automask) << '\n'
     << "use_min_reprojection = " << b(c.use_min_reprojection) << '\n'
     << "multiscale_psl = " << b(c.multiscale_psl) << '\n'
     << "color_jitter = " << b(c.color_jitter) << '\n'
     << "horizontal_flip = " << b(c.horizontal_flip) << '\n'
     << "aspect_augment = " << b(c.aspect_augment) << '\n'
     << "aspect_height = " << c.aspect_height << '\n'
     << "aspect_width = " << c.aspect_width << '\n'
     << "prefetch = " << c.prefetch << '\n';
  return os.str();
}

std::uint64_t config_hash(const TrainConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : format_config(cfg)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

double learning_rate(const TrainConfig& cfg, double epoch) {
  const double adj = double(cfg.adjustment_epoch);
  if (epoch >= adj) return cfg.adjusted_lr;
  if (cfg.lr_schedule == LrSchedule::step) return cfg.initial_lr;
  const double t = epoch / adj;
  return cfg.adjusted_lr + (cfg.initial_lr - cfg.adjusted_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

double lambda_for_epoch(const TrainConfig& cfg, std::size_t epoch) {
  if (cfg.lambda_bump && epoch + cfg.lambda_bump_epochs >= cfg.epochs) return cfg.lambda_bump_value;
  return cfg.lambda;
}

std::string loss_csv_row(const LossRecord& r) {
  char buf[192];
  std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g", r.step, r.lr, r.lambda, r.ssl, r.psl, r.total);
  return buf;
}

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return mix(a ^ mix(b)); }

FrameTriplet load_entry(const fs::path& data_dir, const ManifestEntry& e, bool pseudo, bool camera) {
  const auto dir = data_dir / e.source_id;
  if (fs::exists(dir / "target.ppm")) {
    SceneLoadOptions opts;
    opts.pseudo = pseudo;
    opts.camera = camera;
    opts.ground_truth = false;
    return load_scene(dir, opts).triplet;
  }
  if (pseudo || camera) {
    throw std::runtime_error(dir.string() + ": frame directories carry no pseudo-labels or camera files");
  }
  for (const auto& t : extract_triplets(dir))
    if (t.frame_index == e.frame_index) return load_triplet(t);
  throw std::runtime_error(dir.string() + ": no triplet centred on frame " + std::to_string(e.frame_index));
}

struct Prepared {
  FrameTriplet geo;     // reconstruction targets and labels
  Image net_prev, net_target, net_next;  // jittered copies fed to the networks
};

template <typename V>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t cap) : cap_(cap) {}

  bool push(V v) {
    std::unique_lock lk(mu_);
    not_full_.wait(lk, [&] { return q_.size() < cap_ || closed_; });
    if (closed_) return false;
    q_.push_back(std::move(v));
    not_empty_.notify_one();
    return true;
  }

  std::optional<V> pop() {
    std::unique_lock lk(mu_);
    not_empty_.wait(lk, [&] { return !q_.empty() || closed_; });
    if (q_.empty()) return std::nullopt;
    V v = std::move(q_.front());
    q_.pop_front();
    not_full_.notify_one();
    return v;
  }

  void close() {
    std::lock_guard lk(mu_);
    closed_ = true;
    not_full_.notify_all();
    not_empty_.notify_all();
  }

 private:
  std::size_t cap_;
  std::deque<V> q_;
  bool closed_ = false;
  std::mutex mu_;
  std::condition_variable not_full_, not_empty_;
};

}  // namespace

TrainResult train(Model<float>& model, const TrainConfig& cfg, const fs::path& data_dir, const TrainOptions& opts) {
  cfg.validate();
  if (model.depth.n_scales() != cfg.n_scales) {
    throw std::invalid_argument("train: model has " + std::to_string(model.depth.n_scales()) +
                                " scales, config expects " + std::to_string(cfg.n_scales));
  }
  TrainResult result;
  std::ofstream csv;
  if (opts.loss_csv) {
    csv.open(*opts.loss_csv);
    if (!csv) throw std::runtime_error(opts.loss_csv->string() + ": cannot open for writing");
    csv << kLossCsvHeader << '\n';
  }
  if (cfg.epochs == 0) return result;

  auto entries = read_manifest(data_dir);
  if (opts.max_samples > 0 && entries.size() > opts.max_samples) entries.resize(opts.max_samples);
  if (entries.empty()) throw std::runtime_error(data_dir.string() + ": manifest lists no samples");

  bool needs_pseudo = false;
  for (std::size_t e = 0; e < cfg.epochs; ++e) needs_pseudo |= lambda_for_epoch(cfg, e) < 1.0;
  const bool known = cfg.intrinsics_mode == IntrinsicsMode::known;
  std::vector<FrameTriplet> raw;
  raw.reserve(entries.size());
  for (const auto& e : entries) raw.push_back(load_entry(data_dir, e, needs_pseudo, known));

  const std::size_t N = raw.size(), B = cfg.batch_size;
  const std::size_t steps_per_epoch = std::max<std::size_t>(1, N / B);
  std::size_t total_steps = cfg.epochs * steps_per_epoch;
  if (cfg.max_steps > 0) total_steps = std::min(total_steps, cfg.max_steps);
  spdlog::info("training on {} samples: {} steps of batch {} ({} per epoch)", N, total_steps, B, steps_per_epoch);

  AspectConfig aspect;
  aspect.target_height = cfg.aspect_height;
  aspect.target_width = cfg.aspect_width;
  aspect.multiple = std::size_t{1} << (cfg.n_scales + 1);

  auto prepare = [&](std::size_t step, std::size_t k, std::size_t index) {
    const auto seed = mix(cfg.seed, mix(step, k));
    Prepared p;
    p.geo = raw[index];
    if (cfg.aspect_augment) p.geo = aspect_augment(p.geo, mix(seed, 1), aspect);
    if (cfg.horizontal_flip) p.geo = horizontal_flip(p.geo, (mix(seed, 2) & 1) != 0);
    if (cfg.color_jitter) {
      const auto j = color_jitter(p.geo, mix(seed, 3));
      p.net_prev = j.prev;
      p.net_target = j.target;
      p.net_next = j.next;
    } else {
      p.net_prev = p.geo.prev;
      p.net_target = p.geo.target;
      p.net_next = p.geo.next;
    }
    return p;
  };

  // Loader thread: walks the epoch permutations in order, so results do not
  // depend on scheduling.
  using Batch = std::vector<Prepared>;
  BoundedQueue<Batch> queue(cfg.prefetch);
  std::exception_ptr loader_error;
  std::thread loader([&] {
    try {
      std::vector<std::size_t> perm(N);
      std::size_t perm_epoch = std::size_t(-1);
      for (std::size_t step = 0; step < total_steps; ++step) {
        const std::size_t epoch = step / steps_per_epoch, within = step % steps_per_epoch;
        if (epoch != perm_epoch) {
          std::iota(perm.begin(), perm.end(), std::size_t{0});
          std::mt19937_64 rng(mix(cfg.seed, 0x5eed0000 + epoch));
          std::shuffle(perm.begin(), perm.end(), rng);
          perm_epoch = epoch;
        }
        Batch batch;
        for (std::size_t k = 0; k < std::min(B, N); ++k) batch.push_back(prepare(step, k, perm[(within * B + k) % N]));
        if (!queue.push(std::move(batch))) return;
      }
    } catch (...) {
      loader_error = std::current_exception();
    }
    queue.close();
  });
  struct Joiner {
    std::thread& t;
    BoundedQueue<Batch>& q;
    ~Joiner() {
      q.close();
      if (t.joinable()) t.join();
    }
  } joiner{loader, queue};

  AdamWConfig ac;
  ac.weight_decay = cfg.weight_decay;
  AdamW opt(model.parameters(), ac);
  for (std::size_t step = 0; step < total_steps; ++step) {
    auto batch = queue.pop();
    if (!batch) {
      if (loader_error) std::rethrow_exception(loader_error);
      throw std::runtime_error("train: data loader stopped early");
    }
    const std::size_t epoch = step / steps_per_epoch;
    LossRecord rec;
    rec.step = step;
    rec.lr = learning_rate(cfg, double(step) / double(steps_per_epoch));
    rec.lambda = lambda_for_epoch(cfg, epoch);
    const auto lc = cfg.loss_config(rec.lambda);
    const float inv_b = 1.0f / static_cast<float>(batch->size());
    for (const auto& p : *batch) {
      const auto& g = p.geo;
      const auto tgt = image_tensor<float>(g.target), prv = image_tensor<float>(g.prev), nxt = image_tensor<float>(g.next);
      const auto jt = image_tensor<float>(p.net_target);
      const auto cam = model.predict_camera(image_tensor<float>(p.net_prev), jt, image_tensor<float>(p.net_next));
      Tensor<float> k;
      if (known) {
        if (!g.known_intrinsics) throw std::runtime_error("train: intrinsics_mode=known but " + g.source_id + " has none");
        k = intrinsics_tensor<float>(*g.known_intrinsics);
      } else {
        k = cam.intrinsics;
      }
      Tensor<float> pseudo;
      if (lc.lambda < 1.0) {
        const auto& pd = *g.pseudo_disparity;
        pseudo = Tensor<float>::from_data({pd.height, pd.width}, pd.data);
      }
      LossInputs<float> in{tgt, prv, nxt, cam.pose_bwd, cam.pose_fwd, k, pseudo};
      auto terms = total_loss(model.depth.forward(jt), in, lc);
      const double total = terms.total.item();
      if (!std::isfinite(total)) {
        throw std::runtime_error("train: non-finite loss at step " + std::to_string(step) + " (" + g.source_id + ")");
      }
      rec.total += total / double(batch->size());
      rec.ssl += terms.ssl / double(batch->size());
      rec.psl += terms.psl / double(batch->size());
      (terms.total * inv_b).backward();
    }
    opt.step(rec.lr);
    result.log.push_back(rec);
    if (csv.is_open()) csv << loss_csv_row(rec) << '\n';
    if (opts.on_step) opts.on_step(rec);
    ++result.steps;
  }
  if (loader_error) std::rethrow_exception(loader_error);
  if (csv.is_open() && !csv.flush()) throw std::runtime_error(opts.loss_csv->string() + ": write failed");
  return result;
}

Plane<double> predict_disparity(const Model<float>& model, const Image& image) {
  NoGradGuard ng;
  const auto levels = model.depth.forward(image_tensor<float>(image));
  const auto& d = levels.front();
  Plane<double> out(d.dim(0), d.dim(1));
  const auto v = d.values();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = v[i];
  return out;
}

ArchiveEvaluation evaluate_archive(const Model<float>& model, const fs::path& data_dir, const EvalProtocol& protocol,
                                   double floor, std::size_t max_scenes) {
  auto entries = read_manifest(data_dir);
  if (max_scenes > 0 && entries.size() > max_scenes) entries.resize(max_scenes);
  MetricAccumulator acc;
  ArchiveEvaluation out;
  double fx_sum = 0;
  std::size_t fx_n = 0;
  for (const auto& e : entries) {
    const auto dir = data_dir / e.source_id;
    SceneLoadOptions lo;
    lo.pseudo = false;
    lo.camera = fs::exists(dir / "camera.txt");
    if (!fs::exists(dir / "gt_disp.ndtf")) throw std::runtime_error(dir.string() + ": missing ground truth gt_disp.ndtf");
    const auto s = load_scene(dir, lo);
    const auto disp = predict_disparity(model, s.triplet.target);
    Plane<double> pred(disp.height, disp.width), gt(disp.height, disp.width);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      pred.data[i] = 1.0 / (disp.data[i] + floor);
      gt.data[i] = 1.0 / double(s.gt_disparity->data[i]);
    }
    acc.add(compute_metrics(pred, gt, protocol));
    if (s.camera) {
      NoGradGuard ng;
      const auto& t = s.triplet;
      const auto cam = model.predict_camera(image_tensor<float>(t.prev), image_tensor<float>(t.target),
                                            image_tensor<float>(t.next));
      fx_sum += double(cam.intrinsics.at(0)) / s.camera->intrinsics.fx;
      ++fx_n;
    }
  }
  if (acc.frames() == 0) throw std::runtime_error(data_dir.string() + ": no scenes to evaluate");
  out.metrics = acc.mean();
  out.scenes = acc.frames();
  out.fx_ratio = fx_n ? fx_sum / double(fx_n) : 0.0;
  return out;
}

void export_depth(const Model<float>& model, const fs::path& image_path, const fs::path& out_image,
                  const fs::path& out_ndtf) {
  const auto img = read_image(image_path);
  const std::size_t div = model.depth.divisor();
  if (img.height % div != 0 || img.width % div != 0) {
    throw std::invalid_argument(image_path.string() + ": extents " + std::to_string(img.height) + "x" +
                                std::to_string(img.width) + " must be divisible by " + std::to_string(div));
  }
  const auto disp = predict_disparity(model, img);
  std::vector<float> raw(disp.data.begin(), disp.data.end());
  save_ndtf(out_ndtf, Tensor<float>::from_data({disp.height, disp.width}, raw));
  const float mx = *std::max_element(raw.begin(), raw.end());
  Plane<std::uint16_t> vis(disp.height, disp.width, 0);
  if (mx > 0) {
    for (std::size_t i = 0; i < raw.size(); ++i) {
      vis.data[i] = static_cast<std::uint16_t>(std::lround(std::clamp(raw[i] / mx, 0.0f, 1.0f) * 65535.0f));
    }
  }
  auto ext = out_image.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") {
    write_png16(out_image, vis);
  } else {
    write_pgm16(out_image, vis);
  }
}

Model<float> model_from_checkpoint(const Checkpoint& ckpt) {
  const auto n = ckpt.n_scales();
  if (n == 0) throw std::runtime_error("checkpoint: no depth encoder parameters");
  Model<float> m(n);
  restore_parameters(m, ckpt);
  return m;
}

}  // namespace mdepth
