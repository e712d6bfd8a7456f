#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "irisloc/checkpoint.hpp"
#include "irisloc/training.hpp"

using namespace irisloc;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "irisloc_test_training" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Eight 32x32 synthetic eyes (four faces).
Manifest small_set(const fs::path& dir) {
  SynthConfig cfg;
  cfg.count = 8;
  cfg.seed = 5;
  cfg.height = cfg.width = 32;
  cfg.radius_min = 5;
  cfg.radius_max = 7;
  cfg.jitter = 3;
  synth_generate(cfg, dir.string());
  return load_manifest((dir / "manifest.jsonl").string());
}

TrainConfig tiny(Task task, std::size_t steps) {
  TrainConfig cfg;
  cfg.task = task;
  cfg.model = task == Task::Regression ? ModelConfig::unet_coord(32, 32) : ModelConfig::u2net_lite(32, 32);
  cfg.model.depth = 2;
  cfg.model.base_channels = 4;
  cfg.max_steps = steps;
  cfg.batch_size = 4;
  cfg.seed = 9;
  return cfg;
}

}  // namespace

TEST(TrainConfig, Invariants) {
  auto cfg = tiny(Task::Regression, 1);
  EXPECT_NO_THROW(cfg.validate());
  cfg.max_steps = 0;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = tiny(Task::Regression, 1);
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = tiny(Task::Regression, 1);
  cfg.heatmap_sigma = 0;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = tiny(Task::Segmentation, 1);
  cfg.heatmap_sigma = 0;  // irrelevant without heatmaps
  EXPECT_NO_THROW(cfg.validate());
  cfg.model = ModelConfig::unet_coord(32, 32);
  EXPECT_THROW(cfg.validate(), ValidationError);
}

TEST(TaskNames, Parse) {
  EXPECT_EQ(parse_task("seg"), Task::Segmentation);
  EXPECT_EQ(parse_task("reg"), Task::Regression);
  EXPECT_EQ(parse_task("regression"), Task::Regression);
  EXPECT_THROW(parse_task("both"), ValidationError);
}

TEST(Train, SameSeedGivesByteIdenticalCheckpoints) {
  const auto dir = temp_dir("determinism");
  const auto data = small_set(dir / "data");
  for (Task task : {Task::Regression, Task::Segmentation}) {
    TrainOptions a, b;
    a.checkpoint_path = (dir / "a.ckpt").string();
    b.checkpoint_path = (dir / "b.ckpt").string();
    a.log_path = (dir / "a.jsonl").string();
    train(tiny(task, 6), data, a);
    train(tiny(task, 6), data, b);
    EXPECT_EQ(read_file_bytes(a.checkpoint_path), read_file_bytes(b.checkpoint_path)) << to_string(task);
    auto other = tiny(task, 6);
    other.seed = 10;
    train(other, data, b);
    EXPECT_NE(read_file_bytes(a.checkpoint_path), read_file_bytes(b.checkpoint_path)) << to_string(task);
  }
}

TEST(Train, LogHasOneFiniteRecordPerStep) {
  const auto dir = temp_dir("log");
  const auto data = small_set(dir / "data");
  TrainOptions opts;
  opts.log_path = (dir / "log.jsonl").string();
  std::size_t callbacks = 0;
  opts.on_step = [&](const TrainStep&) { ++callbacks; };
  const auto result = train(tiny(Task::Regression, 5), data, opts);
  EXPECT_EQ(callbacks, 5u);
  ASSERT_EQ(result.log.steps.size(), 5u);
  std::ifstream in(opts.log_path);
  std::string line;
  std::size_t k = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("step").get<std::size_t>(), k + 1);
    EXPECT_EQ(j.at("loss").get<double>(), result.log.steps[k].loss);
    EXPECT_TRUE(std::isfinite(j.at("loss").get<double>()));
    EXPECT_GE(j.at("ms").get<double>(), 0.0);
    ++k;
  }
  EXPECT_EQ(k, 5u);
}

TEST(Train, ZeroLambdaMatchesPureDiceRun) {
  const auto dir = temp_dir("lambda");
  const auto data = small_set(dir / "data");
  auto cfg = tiny(Task::Segmentation, 5);
  cfg.boundary_weight = 0.0;
  const auto logged = train(cfg, data).log.steps;

  // Reference loop with the Dice loss alone, replaying the same seeded order.
  const auto samples = detail::load_for_task(data, Task::Segmentation);
  std::vector<detail::TrainItem> items;
  for (const auto& s : samples) items.push_back(detail::make_item(s, Task::Segmentation, cfg.heatmap_sigma));
  auto net = build_network<float>(cfg.model, derive_seed(cfg.seed, 1));
  auto params = net.parameter_pointers();
  Adam<float> adam(cfg.adam);
  Rng order_rng(derive_seed(cfg.seed, 2));
  std::vector<std::size_t> order(items.size());
  std::size_t cursor = order.size();
  for (std::size_t step = 0; step < cfg.max_steps; ++step) {
    if (cursor + cfg.batch_size > order.size()) {
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      order_rng.shuffle(order.begin(), order.end());
      cursor = 0;
    }
    std::vector<const detail::TrainItem*> members;
    std::vector<const Grid<float>*> masks;
    for (std::size_t k = 0; k < cfg.batch_size; ++k) {
      members.push_back(&items[order[cursor++]]);
      masks.push_back(&members.back()->target);
    }
    net.zero_grad();
    Graph<float> g;
    auto pred = net.forward(g, g.constant(detail::batch_images(members)));
    auto loss = dice_loss(pred, stack_batch<float>(masks));
    EXPECT_EQ(static_cast<double>(loss.value()[0]), logged[step].loss) << "step " << step + 1;
    g.backward(loss);
    adam.step(params);
  }
}

TEST(Train, RejectsBadInputs) {
  const auto dir = temp_dir("reject");
  const auto data = small_set(dir / "data");
  EXPECT_THROW(train(tiny(Task::Regression, 1), Manifest{}), ValidationError);
  auto no_centre = data;
  no_centre.records[2].center.reset();
  try {
    train(tiny(Task::Regression, 1), no_centre);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("center"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find(no_centre.records[2].id), std::string::npos);
  }
  auto wrong_size = tiny(Task::Regression, 1);
  wrong_size.model = ModelConfig::unet_coord(64, 64);
  EXPECT_THROW(train(wrong_size, data), ValidationError);
}

TEST(Train, InfersModelSizeFromData) {
  const auto dir = temp_dir("infer_size");
  const auto data = small_set(dir / "data");
  auto cfg = tiny(Task::Regression, 1);
  cfg.model.height = cfg.model.width = 0;
  EXPECT_EQ(train(cfg, data).network.config().height, 32u);
}

TEST(Train, RegressionLossFallsOnTinySet) {
  const auto dir = temp_dir("falls");
  const auto data = small_set(dir / "data");
  const auto log = train(tiny(Task::Regression, 60), data).log.steps;
  EXPECT_LT(log.back().loss, log.front().loss);
}

TEST(Train, EarlyStoppingIsOptIn) {
  const auto dir = temp_dir("early");
  const auto data = small_set(dir / "data");
  auto cfg = tiny(Task::Regression, 40);
  cfg.adam.lr = 0.5;  // diverges, so validation loss stops improving
  cfg.early_stop_patience = 1;
  cfg.validate_every = 2;
  TrainOptions opts;
  opts.validation = &data;
  const auto stopped = train(cfg, data, opts);
  EXPECT_TRUE(stopped.log.stopped_early);
  EXPECT_LT(stopped.log.steps.size(), 40u);
  cfg.early_stop_patience = 0;
  EXPECT_EQ(train(cfg, data, opts).log.steps.size(), 40u);
}

TEST(Evaluate, DoesNotMutateCheckpoint) {
  const auto dir = temp_dir("eval_hash");
  const auto data = small_set(dir / "data");
  TrainOptions opts;
  opts.checkpoint_path = (dir / "m.ckpt").string();
  train(tiny(Task::Segmentation, 2), data, opts);
  const auto before = read_file_bytes(opts.checkpoint_path);
  const auto report = evaluate(opts.checkpoint_path, data, Task::Segmentation);
  EXPECT_EQ(read_file_bytes(opts.checkpoint_path), before);
  EXPECT_EQ(report.sample_count, 8u);
  EXPECT_TRUE(report.segmentation.has_value());
  EXPECT_EQ(report.per_image.size(), 8u);
}

TEST(Evaluate, ReportEchoAndRejections) {
  const auto dir = temp_dir("eval_echo");
  const auto data = small_set(dir / "data");
  const auto net = train(tiny(Task::Regression, 2), data).network;
  EvalOptions opts;
  opts.sigma = 2.5;
  opts.threshold = 0.3;
  opts.dataset_name = "tiny";
  const auto report = evaluate(net, data, Task::Regression, opts);
  EXPECT_EQ(report.sigma, 2.5);
  EXPECT_EQ(report.threshold, 0.3);
  EXPECT_EQ(report.dataset, "tiny");
  EXPECT_EQ(report.model_id, "unet-coord");
  EXPECT_FALSE(report.segmentation.has_value());
  ASSERT_TRUE(report.localisation.has_value());
  EXPECT_EQ(report.localisation->faces, 4u);
  EXPECT_THROW(evaluate(net, Manifest{}, Task::Regression), ValidationError);
  EXPECT_THROW(evaluate(net, data, Task::Segmentation), ValidationError);
}

TEST(Evaluate, NoFacePairsMeansNoLocalisationScores) {
  const auto dir = temp_dir("eval_pairs");
  auto data = small_set(dir / "data");
  const auto net = train(tiny(Task::Regression, 1), data).network;
  Manifest lefts = data;
  std::erase_if(lefts.records, [](const SampleRecord& r) { return r.side == Side::Right; });
  const auto report = evaluate(net, lefts, Task::Regression);
  EXPECT_FALSE(report.localisation.has_value());
  EXPECT_TRUE(report.mean_center_error_px.has_value());
  data.records[1].interocular_px = *data.records[0].interocular_px + 1.0;
  EXPECT_THROW(evaluate(net, data, Task::Regression), ValidationError);
}

TEST(Latency, PositiveAndStable) {
  const auto net = build_network<float>(ModelConfig::unet_coord(), 1);
  const auto r = measure_latency(net, 30);
  EXPECT_EQ(r.runs, 30u);
  EXPECT_GT(r.total.mean_ms, 0.0);
  EXPECT_GT(r.model.median_ms, 0.0);
  EXPECT_GE(r.total.mean_ms, r.total.median_ms / 3.0);
  EXPECT_LE(r.total.mean_ms, r.total.median_ms * 3.0);
  EXPECT_GE(r.total.p95_ms, r.total.median_ms);
  EXPECT_THROW(measure_latency(net, 5), ValidationError);
}

TEST(Latency, Summary) {
  const auto s = summarize_ms({4, 1, 3, 2});
  EXPECT_EQ(s.mean_ms, 2.5);
  EXPECT_EQ(s.median_ms, 2.5);
  EXPECT_EQ(s.p95_ms, 4.0);
}
