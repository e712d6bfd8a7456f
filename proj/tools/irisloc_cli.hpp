#ifndef IRISLOC_TOOLS_CLI_HPP
#define IRISLOC_TOOLS_CLI_HPP

// Subcommands: synth, train, eval, predict, gradcheck.
// Exit codes: 0 success, 1 validation error (bad flags, bad input), 2 runtime
// failure (I/O, non-finite loss, failing gradient check).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "irisloc/irisloc.hpp"
#include "irisloc/overlay.hpp"

namespace irisloc::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

namespace detail {

inline bool has_flag(const std::vector<std::string>& args, const std::string& flag) {
  return std::any_of(args.begin(), args.end(),
                     [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
}

/// Appends `--key value` for every key of the config file that is not
/// already given on the command line. The file is a JSON object, either flat
/// or with one object per subcommand.
inline void merge_config_file(std::vector<std::string>& args) {
  std::optional<std::string> path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw ValidationError("--config needs a file argument");
      path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + 2));
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (!path) return;
  std::ifstream in(*path);
  if (!in) throw IoError("config '" + *path + "': cannot open");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config '" + *path + "': " + e.what());
  }
  if (!j.is_object()) throw ValidationError("config '" + *path + "': expected a JSON object");
  if (!args.empty() && j.contains(args[0]) && j[args[0]].is_object()) j = j[args[0]];
  for (const auto& [key, value] : j.items()) {
    const std::string flag = "--" + key;
    if (has_flag(args, flag)) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) args.push_back(flag);
    } else if (value.is_string()) {
      args.push_back(flag);
      args.push_back(value.get<std::string>());
    } else if (value.is_number()) {
      args.push_back(flag);
      args.push_back(value.dump());
    } else {
      throw ValidationError("config '" + *path + "': key '" + key + "' must be a string, number or boolean");
    }
  }
}

inline std::pair<std::size_t, std::size_t> parse_size(const std::string& s) {
  const auto x = s.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument("no x");
    std::size_t used = 0;
    const auto h = std::stoul(s.substr(0, x), &used);
    if (used != x) throw std::invalid_argument("height");
    const auto w = std::stoul(s.substr(x + 1), &used);
    if (used != s.size() - x - 1) throw std::invalid_argument("width");
    return {h, w};
  } catch (const std::exception&) {
    throw ValidationError("--size expects HxW, got '" + s + "'");
  }
}

inline std::string format_point(const std::optional<PixelPoint>& p) {
  if (!p) return "x=nan y=nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "x=%.3f y=%.3f", p->x, p->y);
  return buf;
}

}  // namespace detail

/// Runs one invocation. `args` excludes the program name.
inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Iris-centre localisation: synthesise data, train, evaluate, predict, check gradients.", "irisloc"};
  app.require_subcommand(1);

  // synth
  SynthConfig synth;
  std::string synth_out, synth_size;
  auto* cmd_synth = app.add_subcommand("synth", "Generate a synthetic eye-crop dataset");
  cmd_synth->add_option("--out", synth_out, "Output directory")->required();
  cmd_synth->add_option("--count", synth.count, "Number of samples")->capture_default_str();
  cmd_synth->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
  cmd_synth->add_option("--size", synth_size, "Image size HxW (default 64x64)");
  cmd_synth->add_option("--occlusion", synth.occlusion_prob, "Eyelid occlusion probability")->capture_default_str();
  cmd_synth->add_option("--coverage-min", synth.coverage_min, "Minimum eyelid coverage")->capture_default_str();
  cmd_synth->add_option("--coverage-max", synth.coverage_max, "Maximum eyelid coverage")->capture_default_str();
  cmd_synth->add_option("--radius-min", synth.radius_min, "Minimum iris radius in px")->capture_default_str();
  cmd_synth->add_option("--radius-max", synth.radius_max, "Maximum iris radius in px")->capture_default_str();
  cmd_synth->add_option("--jitter", synth.jitter, "Centre offset range in px")->capture_default_str();
  cmd_synth->add_option("--noise", synth.noise_sigma, "Gaussian noise sigma")->capture_default_str();
  cmd_synth->add_option("--highlight", synth.highlight_prob, "Specular highlight probability")
      ->capture_default_str();

  // train
  TrainConfig tc;
  std::string train_task, train_manifest, train_out, train_log, train_optimizer = "adam", val_manifest;
  bool quiet = false;
  auto* cmd_train = app.add_subcommand("train", "Train a model on a manifest");
  cmd_train->add_option("--task", train_task, "seg or reg")->required()->check(CLI::IsMember({"seg", "reg"}));
  cmd_train->add_option("--manifest", train_manifest, "Training manifest")->required();
  cmd_train->add_option("--out", train_out, "Checkpoint path")->required();
  cmd_train->add_option("--log", train_log, "Per-step log path (default <out>.log.jsonl)");
  cmd_train->add_option("--steps", tc.max_steps, "Optimiser steps")->capture_default_str();
  cmd_train->add_option("--seed", tc.seed, "Seed for initialisation and shuffling")->capture_default_str();
  cmd_train->add_option("--sigma", tc.heatmap_sigma, "Heatmap sigma in px (reg)")->capture_default_str();
  cmd_train->add_option("--lambda", tc.boundary_weight, "Boundary loss weight (seg)")->capture_default_str();
  cmd_train->add_option("--batch", tc.batch_size, "Batch size")->capture_default_str();
  cmd_train->add_option("--optimizer", train_optimizer, "adam or sgd")
      ->check(CLI::IsMember({"adam", "sgd"}))
      ->capture_default_str();
  cmd_train->add_option("--lr", tc.adam.lr, "Adam learning rate")->capture_default_str();
  cmd_train->add_option("--beta1", tc.adam.beta1, "Adam beta1")->capture_default_str();
  cmd_train->add_option("--beta2", tc.adam.beta2, "Adam beta2")->capture_default_str();
  cmd_train->add_option("--eps", tc.adam.eps, "Adam epsilon")->capture_default_str();
  cmd_train->add_option("--sgd-lr", tc.sgd_lr, "SGD learning rate")->capture_default_str();
  cmd_train->add_option("--base-channels", tc.model.base_channels, "Channels at the first level")
      ->capture_default_str();
  cmd_train->add_option("--depth", tc.model.depth, "Encoder levels")->capture_default_str();
  cmd_train->add_option("--rsu-depth", tc.model.rsu_inner_depth, "Inner depth of residual U-blocks (seg)")
      ->capture_default_str();
  cmd_train->add_flag("--coord-every-level", tc.model.coord_every_level, "Coordinate channels at every level (reg)");
  cmd_train->add_option("--checkpoint-every", tc.checkpoint_every, "Write the checkpoint every N steps")
      ->capture_default_str();
  cmd_train->add_flag("--augment-flip", tc.augment_flip, "Random horizontal flips");
  cmd_train->add_option("--early-stop-patience", tc.early_stop_patience,
                        "Stop after N validations without improvement (needs --val-manifest)")
      ->capture_default_str();
  cmd_train->add_option("--validate-every", tc.validate_every, "Steps between validations")->capture_default_str();
  cmd_train->add_option("--val-manifest", val_manifest, "Validation manifest for early stopping");
  cmd_train->add_flag("--quiet", quiet, "No progress lines");

  // eval
  std::string eval_task, eval_ckpt, eval_manifest, eval_format = "table", eval_dataset;
  EvalOptions eo;
  auto* cmd_eval = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
  cmd_eval->add_option("--task", eval_task, "seg or reg")->required()->check(CLI::IsMember({"seg", "reg"}));
  cmd_eval->add_option("--ckpt", eval_ckpt, "Checkpoint")->required();
  cmd_eval->add_option("--manifest", eval_manifest, "Manifest")->required();
  cmd_eval->add_option("--format", eval_format, "table or json")
      ->check(CLI::IsMember({"table", "json"}))
      ->capture_default_str();
  cmd_eval->add_option("--threshold", eo.threshold, "Binarisation threshold (seg)")->capture_default_str();
  cmd_eval->add_option("--sigma", eo.sigma, "Heatmap sigma echoed in the report")->capture_default_str();
  cmd_eval->add_option("--dataset", eval_dataset, "Dataset name in the report (default: manifest directory)");
  cmd_eval->add_flag("--subpixel", eo.subpixel, "3x3 sub-pixel refinement of the heatmap peak");

  // predict
  std::string pred_ckpt, pred_image, pred_overlay;
  EvalOptions po;
  auto* cmd_predict = app.add_subcommand("predict", "Predict the iris centre of one image");
  cmd_predict->add_option("--ckpt", pred_ckpt, "Checkpoint")->required();
  cmd_predict->add_option("--image", pred_image, "Grayscale PGM eye crop")->required();
  cmd_predict->add_option("--overlay", pred_overlay, "Write a PPM overlay here");
  cmd_predict->add_option("--threshold", po.threshold, "Binarisation threshold (seg)")->capture_default_str();
  cmd_predict->add_flag("--subpixel", po.subpixel, "3x3 sub-pixel refinement of the heatmap peak");

  // gradcheck
  GradcheckOptions go;
  auto* cmd_grad = app.add_subcommand("gradcheck", "Finite-difference check of every op and loss");
  cmd_grad->add_option("--seed", go.seed, "Base seed")->capture_default_str();
  cmd_grad->add_option("--seeds", go.seeds, "Random instances per case")->capture_default_str();
  cmd_grad->add_option("--inject-fault", go.fault_case, "Perturb the analytic gradient of a case (\"*\" for all)")
      ->group("Testing");

  try {
    detail::merge_config_file(args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return kExitValidation;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }

  auto* sub = app.get_subcommands().front();
  err << "# resolved config: " << sub->get_name() << "\n" << sub->config_to_str(true, false);

  try {
    if (*cmd_synth) {
      if (!synth_size.empty()) std::tie(synth.height, synth.width) = detail::parse_size(synth_size);
      const auto m = synth_generate(synth, synth_out);
      out << "manifest=" << (std::filesystem::path(synth_out) / "manifest.jsonl").string()
          << " count=" << m.records.size() << "\n";
    } else if (*cmd_train) {
      tc.task = parse_task(train_task);
      tc.optimizer = train_optimizer == "sgd" ? OptimizerKind::Sgd : OptimizerKind::Adam;
      const auto defaults = tc.task == Task::Segmentation ? ModelConfig::u2net_lite(0, 0) : ModelConfig::unet_coord(0, 0);
      tc.model.variant = defaults.variant;
      tc.model.head = defaults.head;
      tc.model.height = 0;
      tc.model.width = 0;
      const auto manifest = load_manifest(train_manifest, mode_for(tc.task));
      std::optional<Manifest> val;
      if (!val_manifest.empty()) val = load_manifest(val_manifest, mode_for(tc.task));
      TrainOptions opts;
      opts.checkpoint_path = train_out;
      opts.log_path = train_log.empty() ? train_out + ".log.jsonl" : train_log;
      if (val) opts.validation = &*val;
      if (!quiet) {
        opts.on_step = [&err, total = tc.max_steps](const TrainStep& s) {
          if (s.step == 1 || s.step % 100 == 0 || s.step == total) {
            err << "step " << s.step << "/" << total << " loss " << s.loss << "\n";
          }
        };
      }
      const auto result = train(tc, manifest, opts);
      nlohmann::ordered_json summary{{"checkpoint", train_out},
                                     {"log", opts.log_path},
                                     {"steps", result.log.steps.size()},
                                     {"first-loss", result.log.steps.front().loss},
                                     {"final-loss", result.log.steps.back().loss},
                                     {"stopped-early", result.log.stopped_early}};
      out << summary.dump() << "\n";
    } else if (*cmd_eval) {
      const Task task = parse_task(eval_task);
      const auto net = load_checkpoint(eval_ckpt);
      if (net.config().variant != variant_for(task)) {
        throw ValidationError("checkpoint '" + eval_ckpt + "' holds a " + to_string(net.config().variant) +
                              " model, which cannot run task " + eval_task);
      }
      const auto manifest = load_manifest(eval_manifest, mode_for(task));
      eo.dataset_name = eval_dataset.empty()
                            ? std::filesystem::absolute(eval_manifest).parent_path().filename().string()
                            : eval_dataset;
      const auto report = evaluate(net, manifest, task, eo);
      out << render_report(report, eval_format == "json" ? ReportFormat::Json : ReportFormat::Table);
    } else if (*cmd_predict) {
      const auto net = load_checkpoint(pred_ckpt);
      const auto image = load_image(pred_image);
      const auto& c = net.config();
      if (image.height != c.height || image.width != c.width) {
        throw ValidationError("image '" + pred_image + "' is " + image.dims() + ", the model expects " +
                              std::to_string(c.height) + "x" + std::to_string(c.width));
      }
      const Task task = c.variant == Variant::UNetCoord ? Task::Regression : Task::Segmentation;
      const auto output = unstack(net.infer(stack_batch<float>(std::vector<const Image*>{&image})), 0);
      const auto centre = locate(output, task, po);
      if (!pred_overlay.empty()) {
        write_ppm(render_overlay(image, output, task == Task::Segmentation, centre, po.threshold), pred_overlay);
      }
      out << detail::format_point(centre) << "\n";
    } else if (*cmd_grad) {
      if (go.seeds < 1) throw ValidationError("--seeds must be at least 1");
      const auto report = run_gradcheck(go);
      char buf[256];
      for (const auto& c : report.cases) {
        std::snprintf(buf, sizeof buf, "%-18s worst=%.3e checked=%zu skipped=%zu seeds=%zu %s\n", c.name.c_str(),
                      c.worst, c.checked, c.skipped, c.seeds, c.passed ? "PASS" : "FAIL");
        out << buf;
      }
      err << "gradcheck: " << report.cases.size() << " cases in " << report.seconds << " s\n";
      if (!report.passed()) {
        for (const auto& c : report.cases) {
          if (c.passed) continue;
          std::snprintf(buf, sizeof buf, "failing: %s worst relative error %.3e (skipped %zu of %zu)\n",
                        c.name.c_str(), c.worst, c.skipped, c.checked);
          err << buf;
        }
        return kExitRuntime;
      }
    }
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace irisloc::cli

#endif  // IRISLOC_TOOLS_CLI_HPP
