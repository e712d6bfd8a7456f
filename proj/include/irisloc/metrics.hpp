#ifndef IRISLOC_METRICS_HPP
#define IRISLOC_METRICS_HPP

// Evaluation metrics.
//
// Segmentation (per image, then averaged over images):
//   EI        = (fp + fn) / (H * W), the fraction of disagreeing pixels
//   precision = tp / (tp + fp), recall = tp / (tp + fn), f1 = 2pr / (p + r)
//   dice      = 2tp / (2tp + fp + fn)
//   Any 0/0 is defined as 0.
//
// Localisation: the maximum normalised error of a face is
//   d = max(|predL - gtL|, |predR - gtR|) / interocular
// and a missing detection on either eye makes d infinite. Hit rates are the
// percentage of faces with d <= 0.25, 0.10 and 0.05 (inclusive).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "irisloc/errors.hpp"
#include "irisloc/grid.hpp"

namespace irisloc {

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t total() const noexcept { return tp + fp + fn + tn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

inline ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_shape(pred, gt, "confusion");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.values[i] != 0, g = gt.values[i] != 0;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

struct PrecisionRecallF1 {
  double precision = 0, recall = 0, f1 = 0;
};

inline double safe_ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

inline PrecisionRecallF1 precision_recall_f1(const ConfusionCounts& c) {
  PrecisionRecallF1 out;
  out.precision = safe_ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp));
  out.recall = safe_ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn));
  out.f1 = safe_ratio(2.0 * out.precision * out.recall, out.precision + out.recall);
  return out;
}

inline double dice_coefficient(const ConfusionCounts& c) {
  return safe_ratio(2.0 * static_cast<double>(c.tp), static_cast<double>(2 * c.tp + c.fp + c.fn));
}

inline double segmentation_error(const ConfusionCounts& c) {
  return safe_ratio(static_cast<double>(c.fp + c.fn), static_cast<double>(c.total()));
}

inline double segmentation_error(const BinaryMask& pred, const BinaryMask& gt) {
  return segmentation_error(confusion(pred, gt));
}

inline double point_distance(PixelPoint a, PixelPoint b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// Maximum normalised error for one face; +inf when either eye has no detection.
inline double max_normalized_error(const std::optional<PixelPoint>& pred_left,
                                   const std::optional<PixelPoint>& pred_right, PixelPoint gt_left,
                                   PixelPoint gt_right, double interocular) {
  if (!(interocular > 0.0) || !std::isfinite(interocular)) {
    throw ValidationError("max_normalized_error: interocular distance must be positive");
  }
  if (!pred_left || !pred_right) return std::numeric_limits<double>::infinity();
  const double worst = std::max(point_distance(*pred_left, gt_left), point_distance(*pred_right, gt_right));
  return worst / interocular;
}

inline constexpr double kHitThresholds[3] = {0.25, 0.10, 0.05};

/// Percentages of faces with d at or below 0.25, 0.10, 0.05 (in that order).
struct HitRates {
  double at_025 = 0, at_010 = 0, at_005 = 0;
  friend bool operator==(const HitRates&, const HitRates&) = default;
};

inline HitRates hit_rates(const std::vector<double>& ds) {
  if (ds.empty()) throw ValidationError("hit_rates: no faces to score");
  std::size_t hits[3] = {0, 0, 0};
  for (double d : ds) {
    for (int k = 0; k < 3; ++k) {
      if (d <= kHitThresholds[k]) ++hits[k];
    }
  }
  const auto pct = [&](std::size_t h) { return 100.0 * static_cast<double>(h) / static_cast<double>(ds.size()); };
  return {pct(hits[0]), pct(hits[1]), pct(hits[2])};
}

struct SegmentationScores {
  double ei = 0, precision = 0, recall = 0, f1 = 0, dice = 0;
  friend bool operator==(const SegmentationScores&, const SegmentationScores&) = default;
};

inline SegmentationScores segmentation_scores(const BinaryMask& pred, const BinaryMask& gt) {
  const auto c = confusion(pred, gt);
  const auto prf = precision_recall_f1(c);
  return {segmentation_error(c), prf.precision, prf.recall, prf.f1, dice_coefficient(c)};
}

struct ImageResult {
  std::string id;
  std::optional<SegmentationScores> segmentation;
  std::optional<PixelPoint> predicted_center;
  /// Euclidean pixel error against the recorded centre; infinite on no detection.
  std::optional<double> center_error_px;
  friend bool operator==(const ImageResult&, const ImageResult&) = default;
};

struct LocalisationScores {
  std::size_t faces = 0;
  HitRates rates;
  friend bool operator==(const LocalisationScores&, const LocalisationScores&) = default;
};

struct EvalReport {
  std::string dataset;
  std::string task;      // "segmentation" or "regression"
  std::string model_id;  // model variant
  double sigma = 0;      // heatmap sigma echo
  double threshold = 0;  // binarisation threshold echo
  std::size_t sample_count = 0;
  std::optional<SegmentationScores> segmentation;  // mean over images
  std::optional<LocalisationScores> localisation;  // absent without complete face pairs
  std::optional<double> mean_center_error_px;
  std::vector<ImageResult> per_image;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// Mean of per-image scores.
inline SegmentationScores mean_scores(const std::vector<SegmentationScores>& scores) {
  SegmentationScores m;
  if (scores.empty()) return m;
  for (const auto& s : scores) {
    m.ei += s.ei;
    m.precision += s.precision;
    m.recall += s.recall;
    m.f1 += s.f1;
    m.dice += s.dice;
  }
  const auto n = static_cast<double>(scores.size());
  m.ei /= n;
  m.precision /= n;
  m.recall /= n;
  m.f1 /= n;
  m.dice /= n;
  return m;
}

enum class ReportFormat { Table, Json };

namespace detail {

inline nlohmann::ordered_json scores_json(const SegmentationScores& s) {
  return {{"ei", s.ei}, {"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}, {"dice", s.dice}};
}

inline SegmentationScores scores_from_json(const nlohmann::json& j) {
  return {j.at("ei").get<double>(), j.at("precision").get<double>(), j.at("recall").get<double>(),
          j.at("f1").get<double>(), j.at("dice").get<double>()};
}

// JSON has no infinity; an infinite error is written as the string "inf".
inline nlohmann::ordered_json number_or_inf(double v) {
  if (std::isinf(v)) return "inf";
  return v;
}

inline double number_from_json(const nlohmann::json& j) {
  if (j.is_string() && j.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
  return j.get<double>();
}

inline std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

inline std::string pad_right(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

}  // namespace detail

inline nlohmann::ordered_json report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["dataset"] = r.dataset;
  j["task"] = r.task;
  j["model-id"] = r.model_id;
  j["config"] = {{"sigma", r.sigma}, {"threshold", r.threshold}, {"model-id", r.model_id}};
  j["sample-count"] = r.sample_count;
  j["segmentation"] = r.segmentation ? detail::scores_json(*r.segmentation) : nlohmann::ordered_json(nullptr);
  if (r.localisation) {
    j["localisation"] = {{"faces", r.localisation->faces},
                         {"d<=0.25", r.localisation->rates.at_025},
                         {"d<=0.10", r.localisation->rates.at_010},
                         {"d<=0.05", r.localisation->rates.at_005}};
  } else {
    j["localisation"] = nullptr;
  }
  j["mean-center-error-px"] =
      r.mean_center_error_px ? detail::number_or_inf(*r.mean_center_error_px) : nlohmann::ordered_json(nullptr);
  auto images = nlohmann::ordered_json::array();
  for (const auto& im : r.per_image) {
    nlohmann::ordered_json e;
    e["id"] = im.id;
    e["segmentation"] = im.segmentation ? detail::scores_json(*im.segmentation) : nlohmann::ordered_json(nullptr);
    e["predicted-center"] = im.predicted_center
                                ? nlohmann::ordered_json{{"x", im.predicted_center->x}, {"y", im.predicted_center->y}}
                                : nlohmann::ordered_json(nullptr);
    e["center-error-px"] =
        im.center_error_px ? detail::number_or_inf(*im.center_error_px) : nlohmann::ordered_json(nullptr);
    images.push_back(std::move(e));
  }
  j["per-image"] = std::move(images);
  return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  try {
    r.dataset = j.at("dataset").get<std::string>();
    r.task = j.at("task").get<std::string>();
    r.model_id = j.at("model-id").get<std::string>();
    r.sigma = j.at("config").at("sigma").get<double>();
    r.threshold = j.at("config").at("threshold").get<double>();
    r.sample_count = j.at("sample-count").get<std::size_t>();
    if (!j.at("segmentation").is_null()) r.segmentation = detail::scores_from_json(j.at("segmentation"));
    if (const auto& l = j.at("localisation"); !l.is_null()) {
      r.localisation = LocalisationScores{l.at("faces").get<std::size_t>(),
                                          {l.at("d<=0.25").get<double>(), l.at("d<=0.10").get<double>(),
                                           l.at("d<=0.05").get<double>()}};
    }
    if (const auto& m = j.at("mean-center-error-px"); !m.is_null()) r.mean_center_error_px = detail::number_from_json(m);
    for (const auto& e : j.at("per-image")) {
      ImageResult im;
      im.id = e.at("id").get<std::string>();
      if (!e.at("segmentation").is_null()) im.segmentation = detail::scores_from_json(e.at("segmentation"));
      if (const auto& p = e.at("predicted-center"); !p.is_null()) {
        im.predicted_center = PixelPoint{p.at("x").get<double>(), p.at("y").get<double>()};
      }
      if (const auto& c = e.at("center-error-px"); !c.is_null()) im.center_error_px = detail::number_from_json(c);
      r.per_image.push_back(std::move(im));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("report json: ") + e.what());
  }
  return r;
}

/// A score block for segmentation and a hit-rate block (columns d <= 0.25,
/// d <= 0.10, d <= 0.05) for localisation.
inline std::string render_table(const EvalReport& r) {
  using detail::fixed;
  using detail::pad_right;
  std::string out;
  out += "dataset: " + r.dataset + "\n";
  out += "task: " + r.task + "  model: " + r.model_id + "  samples: " + std::to_string(r.sample_count) +
         "  sigma: " + fixed(r.sigma, 2) + "  threshold: " + fixed(r.threshold, 2) + "\n";
  const std::string method = r.task == "segmentation" ? "Ours (Seg)" : "Ours (Reg)";
  out += "\n";
  out += pad_right("Method", 24) + pad_right("EI", 10) + pad_right("Precision", 11) + pad_right("Recall", 10) +
         "F1-Score  Dice\n";
  if (r.segmentation) {
    const auto& s = *r.segmentation;
    out += pad_right(method, 24) + pad_right(fixed(s.ei, 5), 10) + pad_right(fixed(s.precision, 4), 11) +
           pad_right(fixed(s.recall, 4), 10) + pad_right(fixed(s.f1, 4), 10) + fixed(s.dice, 4) + "\n";
  } else {
    out += pad_right(method, 24) + "n/a\n";
  }
  out += "\n";
  out += pad_right("Method", 24) + pad_right("d <= 0.25", 11) + pad_right("d <= 0.10", 11) + "d <= 0.05\n";
  const std::string loc_method = r.task == "segmentation" ? "Ours (Seg) + Centroid" : "Ours (Reg)";
  if (r.localisation) {
    const auto& h = r.localisation->rates;
    out += pad_right(loc_method, 24) + pad_right(fixed(h.at_025, 2) + "%", 11) +
           pad_right(fixed(h.at_010, 2) + "%", 11) + fixed(h.at_005, 2) + "%\n";
    out += "faces: " + std::to_string(r.localisation->faces) + "\n";
  } else {
    out += pad_right(loc_method, 24) + "n/a (no complete face pairs)\n";
  }
  if (r.mean_center_error_px) out += "mean centre error (px): " + fixed(*r.mean_center_error_px, 3) + "\n";
  return out;
}

inline std::string render_report(const EvalReport& r, ReportFormat format) {
  if (format == ReportFormat::Json) return report_to_json(r).dump(2) + "\n";
  return render_table(r);
}

}  // namespace irisloc

#endif  // IRISLOC_METRICS_HPP
