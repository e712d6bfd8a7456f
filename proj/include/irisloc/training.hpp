#ifndef IRISLOC_TRAINING_HPP
#define IRISLOC_TRAINING_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "irisloc/checkpoint.hpp"
#include "irisloc/data.hpp"
#include "irisloc/errors.hpp"
#include "irisloc/graph.hpp"
#include "irisloc/localise.hpp"
#include "irisloc/losses.hpp"
#include "irisloc/metrics.hpp"
#include "irisloc/models.hpp"
#include "irisloc/optim.hpp"
#include "irisloc/rng.hpp"

namespace irisloc {

enum class Task { Segmentation, Regression };

inline std::string to_string(Task t) { return t == Task::Segmentation ? "segmentation" : "regression"; }

inline Task parse_task(const std::string& s) {
  if (s == "seg" || s == "segmentation") return Task::Segmentation;
  if (s == "reg" || s == "regression") return Task::Regression;
  throw ValidationError("unknown task '" + s + "' (expected seg or reg)");
}

inline Variant variant_for(Task t) { return t == Task::Segmentation ? Variant::U2NetLite : Variant::UNetCoord; }

inline TaskMode mode_for(Task t) { return t == Task::Segmentation ? TaskMode::Segmentation : TaskMode::Regression; }

enum class OptimizerKind { Adam, Sgd };

struct TrainConfig {
  Task task = Task::Regression;
  ModelConfig model = ModelConfig::unet_coord();
  OptimizerKind optimizer = OptimizerKind::Adam;
  AdamConfig adam;
  double sgd_lr = 1e-2;
  std::size_t batch_size = 8;
  std::size_t max_steps = 2000;
  std::uint64_t seed = 0;
  double heatmap_sigma = kDefaultSigma;  // regression only
  double boundary_weight = 1.0;          // lambda in dice + lambda * boundary
  std::size_t checkpoint_every = 0;      // 0: only the final checkpoint
  bool augment_flip = false;
  // Opt-in early stopping on validation loss; 0 disables.
  std::size_t early_stop_patience = 0;
  std::size_t validate_every = 100;

  void validate() const {
    if (batch_size < 1) throw ValidationError("train config: batch-size must be at least 1");
    if (max_steps < 1) throw ValidationError("train config: max-steps must be at least 1");
    if (task == Task::Regression && !(heatmap_sigma > 0.0)) {
      throw ValidationError("train config: heatmap-sigma must be positive for regression");
    }
    if (model.variant != variant_for(task)) {
      throw ValidationError("train config: task " + to_string(task) + " needs a " + to_string(variant_for(task)) +
                            " model");
    }
    if (!(boundary_weight >= 0.0)) throw ValidationError("train config: boundary weight must be non-negative");
    if (optimizer == OptimizerKind::Adam && !(adam.lr > 0.0)) throw ValidationError("train config: lr must be positive");
    if (early_stop_patience > 0 && validate_every < 1) {
      throw ValidationError("train config: validate-every must be at least 1");
    }
    model.validate();
  }
};

struct TrainStep {
  std::size_t step = 0;
  double loss = 0;
  double ms = 0;
};

struct TrainLog {
  std::vector<TrainStep> steps;
  std::string checkpoint_path;
  bool stopped_early = false;
};

struct TrainOptions {
  std::string checkpoint_path;  // empty: do not write
  std::string log_path;         // empty: do not write
  const Manifest* validation = nullptr;
  std::function<void(const TrainStep&)> on_step;
};

struct TrainResult {
  Network<float> network;
  TrainLog log;
};

/// One line per step: {"step": k, "loss": x, "ms": t}.
inline void write_train_log(const TrainLog& log, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("train log '" + path + "': cannot open for writing");
  for (const auto& s : log.steps) {
    nlohmann::ordered_json j{{"step", s.step}, {"loss", s.loss}, {"ms", s.ms}};
    out << j.dump() << "\n";
  }
}

namespace detail {

// Inputs and targets for one sample, in both orientations when flipping.
struct TrainItem {
  std::string id;
  Image image;
  Grid<float> target;    // heatmap or mask
  Grid<float> boundary;  // signed distance map (segmentation)
};

inline TrainItem make_item(const Sample& s, Task task, double sigma) {
  TrainItem item{s.record.id, s.image, {}, {}};
  if (task == Task::Regression) {
    item.target = gaussian_heatmap(*s.center, s.image.height, s.image.width, sigma);
  } else {
    item.target = Grid<float>(s.mask->height, s.mask->width);
    for (std::size_t i = 0; i < s.mask->size(); ++i) item.target.values[i] = s.mask->values[i] ? 1.0f : 0.0f;
    item.boundary = signed_distance_map(*s.mask);
  }
  return item;
}

inline std::vector<Sample> load_for_task(const Manifest& m, Task task) {
  if (m.records.empty()) throw ValidationError("manifest has no records");
  std::vector<Sample> out;
  for (const auto& r : m.records) {
    if (task == Task::Regression && !r.center) {
      throw ValidationError("record '" + r.id + "' is missing field 'center' required for regression");
    }
    if (task == Task::Segmentation && !r.mask_path) {
      throw ValidationError("record '" + r.id + "' is missing field 'mask-path' required for segmentation");
    }
    out.push_back(load_sample(m, r));
    if (!out.back().image.same_shape(out.front().image)) {
      throw ValidationError("record '" + r.id + "': image " + out.back().image.dims() + " differs from " +
                            out.front().image.dims());
    }
  }
  return out;
}

inline Var<float> task_loss(Graph<float>& g, Var<float> pred, const std::vector<const TrainItem*>& batch, Task task,
                            float boundary_weight) {
  std::vector<const Grid<float>*> targets;
  for (auto* it : batch) targets.push_back(&it->target);
  auto target = stack_batch<float>(targets);
  if (task == Task::Regression) return mse_loss(pred, std::move(target));
  std::vector<const Grid<float>*> sdms;
  for (auto* it : batch) sdms.push_back(&it->boundary);
  (void)g;
  return total_seg_loss(pred, std::move(target), stack_batch<float>(sdms), boundary_weight);
}

inline Tensor<float> batch_images(const std::vector<const TrainItem*>& batch) {
  std::vector<const Image*> images;
  for (auto* it : batch) images.push_back(&it->image);
  return stack_batch<float>(images);
}

inline double validation_loss(const Network<float>& net, const std::vector<TrainItem>& items, Task task,
                              float boundary_weight) {
  double total = 0;
  for (const auto& item : items) {
    Graph<float> g(false);
    const std::vector<const TrainItem*> one{&item};
    auto out = g.constant(net.infer(batch_images(one)));
    total += task_loss(g, out, one, task, boundary_weight).value()[0];
  }
  return total / static_cast<double>(items.size());
}

}  // namespace detail

/// Deterministic training: the same config, data and seed give a
/// bit-identical network.
inline TrainResult train(TrainConfig cfg, const Manifest& data, const TrainOptions& opts = {}) {
  const auto samples = detail::load_for_task(data, cfg.task);
  if (cfg.model.height == 0 || cfg.model.width == 0) {
    cfg.model.height = samples.front().image.height;
    cfg.model.width = samples.front().image.width;
  }
  cfg.validate();
  if (samples.front().image.height != cfg.model.height || samples.front().image.width != cfg.model.width) {
    throw ValidationError("train: images are " + samples.front().image.dims() + " but the model expects " +
                          std::to_string(cfg.model.height) + "x" + std::to_string(cfg.model.width));
  }

  std::vector<detail::TrainItem> items, flipped;
  for (const auto& s : samples) {
    items.push_back(detail::make_item(s, cfg.task, cfg.heatmap_sigma));
    if (cfg.augment_flip) flipped.push_back(detail::make_item(augment_hflip(s), cfg.task, cfg.heatmap_sigma));
  }
  std::vector<detail::TrainItem> val_items;
  if (opts.validation && cfg.early_stop_patience > 0) {
    for (const auto& s : detail::load_for_task(*opts.validation, cfg.task)) {
      val_items.push_back(detail::make_item(s, cfg.task, cfg.heatmap_sigma));
    }
  }

  TrainResult result{build_network<float>(cfg.model, derive_seed(cfg.seed, 1)), {}};
  auto& net = result.network;
  auto params = net.parameter_pointers();
  Adam<float> adam(cfg.adam);
  Rng order_rng(derive_seed(cfg.seed, 2));
  Rng flip_rng(derive_seed(cfg.seed, 3));

  std::vector<std::size_t> order(items.size());
  std::size_t cursor = order.size();
  const std::size_t batch = std::min(cfg.batch_size, items.size());
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  const auto boundary_weight = static_cast<float>(cfg.boundary_weight);

  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    const auto start = std::chrono::steady_clock::now();
    if (cursor + batch > order.size()) {
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      order_rng.shuffle(order.begin(), order.end());
      cursor = 0;
    }
    std::vector<const detail::TrainItem*> members;
    for (std::size_t k = 0; k < batch; ++k) {
      const auto idx = order[cursor++];
      const bool flip = cfg.augment_flip && flip_rng.bernoulli(0.5);
      members.push_back(flip ? &flipped[idx] : &items[idx]);
    }

    net.zero_grad();
    Graph<float> g;
    auto input = g.constant(detail::batch_images(members), "input");
    auto pred = net.forward(g, input);
    auto loss = detail::task_loss(g, pred, members, cfg.task, boundary_weight);
    const double loss_value = loss.value()[0];
    if (!std::isfinite(loss_value)) {
      std::vector<std::string> ids;
      for (auto* m : members) ids.push_back(m->id);
      throw NonFiniteLossError(step, std::move(ids));
    }
    g.backward(loss);
    if (cfg.optimizer == OptimizerKind::Adam) {
      adam.step(params);
    } else {
      for (auto* p : params) sgd_step(*p, cfg.sgd_lr);
    }

    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    result.log.steps.push_back({step, loss_value, ms});
    if (opts.on_step) opts.on_step(result.log.steps.back());

    if (cfg.checkpoint_every > 0 && !opts.checkpoint_path.empty() && step % cfg.checkpoint_every == 0) {
      save_checkpoint(net, opts.checkpoint_path);
    }
    if (!val_items.empty() && step % cfg.validate_every == 0) {
      const double v = detail::validation_loss(net, val_items, cfg.task, boundary_weight);
      if (v < best_val) {
        best_val = v;
        stale = 0;
      } else if (++stale >= cfg.early_stop_patience) {
        result.log.stopped_early = true;
        break;
      }
    }
  }

  for (auto* p : params) p->clear_grad();
  if (!opts.checkpoint_path.empty()) {
    save_checkpoint(net, opts.checkpoint_path);
    result.log.checkpoint_path = opts.checkpoint_path;
  }
  if (!opts.log_path.empty()) write_train_log(result.log, opts.log_path);
  return result;
}

// ------------------------------------------------------------- evaluation

struct EvalOptions {
  std::string dataset_name = "dataset";
  double threshold = kDefaultThreshold;
  double sigma = kDefaultSigma;
  bool subpixel = false;
  std::size_t batch_size = 16;
};

/// Centre estimate from one output map: argmax for regression, centroid of
/// the largest blob for segmentation.
inline std::optional<PixelPoint> locate(const Grid<float>& output, Task task, const EvalOptions& opts) {
  if (task == Task::Regression) {
    const auto peak = argmax_point(output);
    return opts.subpixel ? refine_subpixel(output, peak) : peak;
  }
  return largest_blob_centroid(binarize(output, opts.threshold));
}

inline EvalReport evaluate(const Network<float>& net, const Manifest& data, Task task, const EvalOptions& opts = {}) {
  if (net.config().variant != variant_for(task)) {
    throw ValidationError("evaluate: a " + to_string(net.config().variant) + " checkpoint cannot run task " +
                          to_string(task));
  }
  if (data.records.empty()) throw ValidationError("evaluate: manifest has no records");
  if (!(opts.threshold > 0.0 && opts.threshold < 1.0)) throw ValidationError("evaluate: threshold must lie in (0,1)");

  EvalReport report;
  report.dataset = opts.dataset_name;
  report.task = to_string(task);
  report.model_id = to_string(net.config().variant);
  report.sigma = opts.sigma;
  report.threshold = opts.threshold;
  report.sample_count = data.records.size();

  const auto samples = detail::load_for_task(data, task);
  std::vector<SegmentationScores> seg_scores;
  std::vector<double> errors;
  std::map<std::string, std::pair<const SampleRecord*, std::optional<PixelPoint>>> left, right;
  std::vector<std::string> face_order;

  const std::size_t chunk = std::max<std::size_t>(1, opts.batch_size);
  for (std::size_t begin = 0; begin < samples.size(); begin += chunk) {
    const std::size_t end = std::min(samples.size(), begin + chunk);
    std::vector<const Image*> images;
    for (std::size_t i = begin; i < end; ++i) {
      if (samples[i].image.height != net.config().height || samples[i].image.width != net.config().width) {
        throw ValidationError("evaluate: image '" + samples[i].record.id + "' is " + samples[i].image.dims() +
                              ", model expects " + std::to_string(net.config().height) + "x" +
                              std::to_string(net.config().width));
      }
      images.push_back(&samples[i].image);
    }
    const auto out = net.infer(stack_batch<float>(images));
    for (std::size_t i = begin; i < end; ++i) {
      const auto& s = samples[i];
      const auto map = unstack(out, i - begin);
      ImageResult im;
      im.id = s.record.id;
      if (task == Task::Segmentation && s.mask) {
        im.segmentation = segmentation_scores(binarize(map, opts.threshold), *s.mask);
        seg_scores.push_back(*im.segmentation);
      }
      im.predicted_center = locate(map, task, opts);
      if (s.center) {
        im.center_error_px = im.predicted_center ? point_distance(*im.predicted_center, *s.center)
                                                 : std::numeric_limits<double>::infinity();
        errors.push_back(*im.center_error_px);
        auto& side = s.record.side == Side::Left ? left : right;
        if (!left.count(s.record.face_id) && !right.count(s.record.face_id)) face_order.push_back(s.record.face_id);
        side[s.record.face_id] = {&s.record, im.predicted_center};
      }
      report.per_image.push_back(std::move(im));
    }
  }

  if (!seg_scores.empty()) report.segmentation = mean_scores(seg_scores);
  if (!errors.empty()) {
    double sum = 0;
    for (double e : errors) sum += e;
    report.mean_center_error_px = sum / static_cast<double>(errors.size());
  }

  std::vector<double> ds;
  for (const auto& face : face_order) {
    auto l = left.find(face);
    auto r = right.find(face);
    if (l == left.end() || r == right.end()) continue;
    const auto* lr = l->second.first;
    const auto* rr = r->second.first;
    if (!lr->interocular_px || !rr->interocular_px) continue;
    if (std::abs(*lr->interocular_px - *rr->interocular_px) > 1e-9 * *lr->interocular_px) {
      throw ValidationError("evaluate: face '" + face + "' has inconsistent interocular-px between its eyes");
    }
    ds.push_back(max_normalized_error(l->second.second, r->second.second, *lr->center, *rr->center,
                                      *lr->interocular_px));
  }
  if (!ds.empty()) report.localisation = LocalisationScores{ds.size(), hit_rates(ds)};
  return report;
}

inline EvalReport evaluate(const std::string& checkpoint_path, const Manifest& data, Task task,
                           const EvalOptions& opts = {}) {
  return evaluate(load_checkpoint(checkpoint_path), data, task, opts);
}

// ---------------------------------------------------------------- latency

struct TimingStats {
  double mean_ms = 0, median_ms = 0, p95_ms = 0;
};

struct LatencyReport {
  std::size_t runs = 0;
  TimingStats model;  // forward pass
  TimingStats post;   // localisation post-processing
  TimingStats total;
};

inline TimingStats summarize_ms(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  TimingStats s;
  for (double x : v) s.mean_ms += x;
  s.mean_ms /= static_cast<double>(v.size());
  const std::size_t n = v.size();
  s.median_ms = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
  s.p95_ms = v[std::min(n, std::max<std::size_t>(rank, 1)) - 1];
  return s;
}

/// Single-threaded timing of one forward pass on a single image plus the
/// task's localisation step. Warm-up runs are excluded.
inline LatencyReport measure_latency(const Network<float>& net, std::size_t runs, std::size_t warmup = 5,
                                     const EvalOptions& opts = {}) {
  if (runs < 10) throw ValidationError("measure_latency: at least 10 runs are required");
  const auto& c = net.config();
  const Task task = c.variant == Variant::UNetCoord ? Task::Regression : Task::Segmentation;
  Tensor<float> input(Shape{1, c.input_channels, c.height, c.width});
  Rng rng(derive_seed(7, 7));
  for (auto& v : input.data()) v = static_cast<float>(rng.uniform());

  using clock = std::chrono::steady_clock;
  std::vector<double> model_ms, post_ms, total_ms;
  double sink = 0;
  for (std::size_t i = 0; i < warmup + runs; ++i) {
    const auto t0 = clock::now();
    const auto out = net.infer(input);
    const auto t1 = clock::now();
    const auto p = locate(unstack(out, 0), task, opts);
    const auto t2 = clock::now();
    if (p) sink += p->x;
    if (i < warmup) continue;
    model_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    post_ms.push_back(std::chrono::duration<double, std::milli>(t2 - t1).count());
    total_ms.push_back(std::chrono::duration<double, std::milli>(t2 - t0).count());
  }
  (void)sink;
  return {runs, summarize_ms(model_ms), summarize_ms(post_ms), summarize_ms(total_ms)};
}

}  // namespace irisloc

#endif  // IRISLOC_TRAINING_HPP
