#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evx/dataset.hpp"
#include "json.hpp"

namespace evx {

struct ModelBundle;

// Rows are true classes, columns predicted classes.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes) {}

  std::size_t classes() const noexcept { return classes_; }
  std::size_t& at(std::size_t truth, std::size_t predicted) {
    return counts_[truth * classes_ + predicted];
  }
  std::size_t at(std::size_t truth, std::size_t predicted) const {
    return counts_[truth * classes_ + predicted];
  }
  std::size_t row_sum(std::size_t truth) const;
  std::size_t column_sum(std::size_t predicted) const;
  std::size_t total() const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t classes_ = 0;
  std::vector<std::size_t> counts_;
};

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
  friend bool operator==(const ClassMetrics&, const ClassMetrics&) = default;
};

struct PredictionRecord {
  std::string sample_id;
  int true_class = 0;
  int predicted_class = 0;
  double confidence = 0.0;
  friend bool operator==(const PredictionRecord&, const PredictionRecord&) = default;
};

struct ClassificationReport {
  std::vector<std::string> class_names;
  std::vector<ClassMetrics> per_class;
  ClassMetrics weighted_avg;
  ConfusionMatrix matrix;
  std::vector<PredictionRecord> predictions;  // sorted by sample_id
  std::vector<std::string> warnings;

  friend bool operator==(const ClassificationReport&, const ClassificationReport&) = default;
};

// f1 = 2PR / (P + R), or 0 when P + R == 0.
double f1_score(double precision, double recall) noexcept;

// Metrics from parallel label vectors. Throws EmptySplit on empty input.
ClassificationReport compute_report(std::span<const int> truth, std::span<const int> predicted,
                                    std::vector<std::string> class_names);

// Same, keeping the per-sample records (order-independent).
ClassificationReport build_report(std::vector<PredictionRecord> predictions,
                                  std::vector<std::string> class_names);

// Runs the bundle over one split of the manifest. Batches are reduced in
// manifest order, so the result is independent of batch size.
ClassificationReport evaluate(const ModelBundle& bundle, const DatasetManifest& manifest,
                              Split split, std::size_t batch_size = 32);

nlohmann::json report_to_json(const ClassificationReport& report);
ClassificationReport report_from_json(const nlohmann::json& doc);
void save_report(const ClassificationReport& report, const std::filesystem::path& path);
ClassificationReport load_report(const std::filesystem::path& path);

struct TableRow {
  std::string label;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Plain-text table: a header line, then "<label> <P> <R> <F1>" per row with
// values rounded to two decimals.
std::string render_metrics_table(std::span<const TableRow> rows);
std::string render_report_table(const ClassificationReport& report);

// Misclassification gallery -----------------------------------------------------

struct GalleryEntry {
  std::string sample_id;
  std::filesystem::path overlay;
  double confidence = 0.0;
};

struct GalleryCell {
  int true_class = 0;
  int predicted_class = 0;
  std::size_t count = 0;  // full off-diagonal count, even when entries are capped
  std::vector<GalleryEntry> entries;
};

struct Gallery {
  std::vector<std::string> class_names;
  std::vector<GalleryCell> cells;  // count descending, then (true, predicted)
};

using OverlayLookup = std::function<std::optional<std::filesystem::path>(const std::string&)>;

Gallery misclassification_gallery(const ClassificationReport& report,
                                  const OverlayLookup& overlay_for,
                                  std::size_t per_cell = 8);

// Static HTML page with overlays embedded as base64 PNG data URIs.
std::string render_gallery_html(const Gallery& gallery);

}  // namespace evx
