#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "irisloc/losses.hpp"
#include "irisloc/metrics.hpp"
#include "irisloc/rng.hpp"
#include "oracles.hpp"

using namespace irisloc;

namespace {

BinaryMask complement(const BinaryMask& m) {
  BinaryMask out = m;
  for (auto& v : out.values) v = v ? 0 : 1;
  return out;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Three images: a perfect mask, a partial overlap and a missed detection.
EvalReport three_sample_report() {
  EvalReport r;
  r.dataset = "golden";
  r.task = "segmentation";
  r.model_id = "u2net-lite";
  r.sigma = 3.0;
  r.threshold = 0.5;
  r.sample_count = 3;
  BinaryMask gt(4, 4);
  gt(1, 1) = gt(1, 2) = gt(2, 1) = gt(2, 2) = 1;
  BinaryMask partial(4, 4);
  partial(1, 1) = partial(1, 2) = partial(0, 0) = 1;
  const SegmentationScores scores[3] = {segmentation_scores(gt, gt), segmentation_scores(partial, gt),
                                        segmentation_scores(BinaryMask(4, 4), gt)};
  const std::optional<PixelPoint> centres[3] = {PixelPoint{1.5, 1.5}, PixelPoint{1.0, 2.0 / 3.0}, std::nullopt};
  std::vector<SegmentationScores> all;
  for (int i = 0; i < 3; ++i) {
    ImageResult img;
    img.id = "img" + std::to_string(i);
    img.segmentation = scores[i];
    img.predicted_center = centres[i];
    img.center_error_px = centres[i] ? point_distance(*centres[i], {1.5, 1.5})
                                     : std::numeric_limits<double>::infinity();
    r.per_image.push_back(img);
    all.push_back(scores[i]);
  }
  r.segmentation = mean_scores(all);
  r.mean_center_error_px = std::numeric_limits<double>::infinity();
  r.localisation = LocalisationScores{1, hit_rates({0.08})};
  return r;
}

}  // namespace

TEST(Confusion, Examples) {
  Rng rng(1);
  const auto gt = oracle::random_mask(rng, 16, 16, 0.3);
  const auto k = static_cast<std::uint64_t>(std::count(gt.values.begin(), gt.values.end(), 1));
  EXPECT_EQ(confusion(gt, gt), (ConfusionCounts{k, 0, 0, 256 - k}));
  const auto c = confusion(complement(gt), gt);
  EXPECT_EQ(c.tp, 0u);
  EXPECT_EQ(c.tn, 0u);
  EXPECT_THROW(confusion(BinaryMask(4, 4), BinaryMask(4, 5)), ShapeError);
}

TEST(Confusion, MatchesPixelLoopOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = oracle::random_mask(rng, 16, 16, rng.uniform()), g = oracle::random_mask(rng, 16, 16, rng.uniform());
    const auto a = confusion(p, g);
    const auto b = oracle::confusion(p, g);
    EXPECT_EQ(a.tp, b.tp);
    EXPECT_EQ(a.fp, b.fp);
    EXPECT_EQ(a.fn, b.fn);
    EXPECT_EQ(a.tn, b.tn);
  }
}

TEST(PrecisionRecall, Examples) {
  const auto perfect = precision_recall_f1({5, 0, 0, 11});
  EXPECT_EQ(perfect.precision, 1.0);
  EXPECT_EQ(perfect.recall, 1.0);
  EXPECT_EQ(perfect.f1, 1.0);
  const auto none = precision_recall_f1({0, 3, 4, 9});
  EXPECT_EQ(none.precision, 0.0);
  EXPECT_EQ(none.recall, 0.0);
  EXPECT_EQ(none.f1, 0.0);
  const auto prf = precision_recall_f1({3, 1, 2, 10});
  EXPECT_DOUBLE_EQ(prf.precision, 0.75);
  EXPECT_DOUBLE_EQ(prf.recall, 0.6);
  EXPECT_NEAR(prf.f1, 2.0 / 3.0, 1e-15);
}

TEST(PrecisionRecall, F1EqualsDiceOnRandomMasks) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto c = confusion(oracle::random_mask(rng, 12, 12, 0.4), oracle::random_mask(rng, 12, 12, 0.4));
    EXPECT_NEAR(precision_recall_f1(c).f1, dice_coefficient(c), 1e-12);
  }
}

TEST(PrecisionRecall, DiceMetricAgreesWithDiceLossOnBinaryMasks) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = oracle::random_mask(rng, 12, 12, 0.5), g = oracle::random_mask(rng, 12, 12, 0.5);
    Grid<float> soft(12, 12);
    for (std::size_t i = 0; i < p.size(); ++i) soft.values[i] = p.values[i];
    EXPECT_NEAR(1.0 - dice_loss(soft, g), dice_coefficient(confusion(p, g)), 1e-6);
  }
}

TEST(SegmentationError, Examples) {
  Rng rng(5);
  const auto m = oracle::random_mask(rng, 16, 16, 0.5);
  EXPECT_EQ(segmentation_error(m, m), 0.0);
  EXPECT_EQ(segmentation_error(complement(m), m), 1.0);
  auto flipped = m;
  for (std::size_t i : {3u, 50u, 100u, 255u}) flipped.values[i] ^= 1;
  EXPECT_EQ(segmentation_error(flipped, m), 4.0 / 256.0);
  EXPECT_EQ(4.0 / 256.0, 0.015625);
}

TEST(NormalizedError, Examples) {
  const PixelPoint l{40, 50}, r{140, 50};
  EXPECT_EQ(max_normalized_error(l, r, l, r, 100.0), 0.0);
  const auto d = max_normalized_error(PixelPoint{43, 54}, PixelPoint{140, 38}, l, r, 100.0);
  EXPECT_DOUBLE_EQ(d, 0.12);
  const auto rates = hit_rates({d});
  EXPECT_EQ(rates, (HitRates{100, 0, 0}));
  EXPECT_TRUE(std::isinf(max_normalized_error(std::nullopt, r, l, r, 100.0)));
  EXPECT_THROW(max_normalized_error(l, r, l, r, 0.0), ValidationError);
}

TEST(NormalizedError, SymmetricUnderSwapAndSimilarityInvariant) {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const PixelPoint gl{rng.uniform(0, 100), rng.uniform(0, 100)}, gr{rng.uniform(0, 100), rng.uniform(0, 100)};
    const PixelPoint pl{gl.x + rng.normal(), gl.y + rng.normal()}, pr{gr.x + rng.normal(), gr.y + rng.normal()};
    const double io = rng.uniform(50, 150);
    const double d = max_normalized_error(pl, pr, gl, gr, io);
    EXPECT_EQ(d, max_normalized_error(pr, pl, gr, gl, io));
    // Scale by s and translate: pixel errors and interocular distance scale together.
    const double s = rng.uniform(0.5, 3.0), tx = rng.uniform(-20, 20), ty = rng.uniform(-20, 20);
    const auto map = [&](PixelPoint p) { return PixelPoint{s * p.x + tx, s * p.y + ty}; };
    EXPECT_NEAR(max_normalized_error(map(pl), map(pr), map(gl), map(gr), s * io), d, 1e-12);
  }
}

TEST(HitRates, Examples) {
  EXPECT_EQ(hit_rates({0, 0, 0}), (HitRates{100, 100, 100}));
  EXPECT_EQ(hit_rates({0.04, 0.08, 0.20, 0.30}), (HitRates{75, 50, 25}));
  EXPECT_THROW(hit_rates({}), ValidationError);
}

TEST(HitRates, MonotoneAcrossThresholds) {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> ds(1 + rng.below(50));
    for (auto& d : ds) d = rng.uniform(0, 0.4);
    const auto r = hit_rates(ds);
    EXPECT_GE(r.at_025, r.at_010);
    EXPECT_GE(r.at_010, r.at_005);
  }
}

TEST(Report, JsonRoundTripAndDeterminism) {
  const auto r = three_sample_report();
  const auto a = render_report(r, ReportFormat::Json);
  EXPECT_EQ(a, render_report(r, ReportFormat::Json));
  EXPECT_EQ(report_from_json(nlohmann::json::parse(a)), r);
  EXPECT_EQ(render_report(r, ReportFormat::Table), render_report(r, ReportFormat::Table));
}

TEST(Report, GoldenThreeSampleJson) {
  const auto golden = read_text(std::string(IRISLOC_TEST_DATA_DIR) + "/report_golden.json");
  ASSERT_FALSE(golden.empty());
  EXPECT_EQ(render_report(three_sample_report(), ReportFormat::Json), golden);
}

TEST(Report, TableMentionsEveryHeadlineNumber) {
  const auto table = render_report(three_sample_report(), ReportFormat::Table);
  for (const char* key : {"dataset", "golden", "EI", "Dice", "0.25", "0.10", "0.05"})
    EXPECT_NE(table.find(key), std::string::npos) << key;
}
