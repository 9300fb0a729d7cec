#include "evx/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "evx/error.hpp"
#include "evx/model.hpp"

using nlohmann::json;

namespace evx {

std::size_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::size_t s = 0;
  for (std::size_t p = 0; p < classes_; ++p) s += at(truth, p);
  return s;
}

std::size_t ConfusionMatrix::column_sum(std::size_t predicted) const {
  std::size_t s = 0;
  for (std::size_t t = 0; t < classes_; ++t) s += at(t, predicted);
  return s;
}

std::size_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::size_t{0});
}

double f1_score(double precision, double recall) noexcept {
  const double denom = precision + recall;
  return denom > 0.0 ? 2.0 * precision * recall / denom : 0.0;
}

namespace {

void fill_metrics(ClassificationReport& report) {
  const std::size_t classes = report.class_names.size();
  const ConfusionMatrix& m = report.matrix;
  report.per_class.assign(classes, {});
  std::size_t total_support = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    ClassMetrics& cm = report.per_class[c];
    const std::size_t tp = m.at(c, c);
    const std::size_t predicted = m.column_sum(c);
    cm.support = m.row_sum(c);
    if (predicted > 0) {
      cm.precision = static_cast<double>(tp) / static_cast<double>(predicted);
    } else {
      report.warnings.push_back("precision of '" + report.class_names[c] +
                                "' is undefined (no predictions); reported as 0");
    }
    if (cm.support > 0) {
      cm.recall = static_cast<double>(tp) / static_cast<double>(cm.support);
    } else {
      report.warnings.push_back("recall of '" + report.class_names[c] +
                                "' is undefined (no true samples); reported as 0");
    }
    cm.f1 = f1_score(cm.precision, cm.recall);
    total_support += cm.support;
  }
  ClassMetrics& w = report.weighted_avg;
  w.support = total_support;
  for (const auto& cm : report.per_class) {
    const auto s = static_cast<double>(cm.support);
    w.precision += s * cm.precision;
    w.recall += s * cm.recall;
    w.f1 += s * cm.f1;
  }
  const auto n = static_cast<double>(total_support);
  w.precision /= n;
  w.recall /= n;
  w.f1 /= n;
}

void check_class(int id, std::size_t classes) {
  if (id < 0 || static_cast<std::size_t>(id) >= classes) {
    fail(ErrorCode::UnknownClass, "class id " + std::to_string(id) + " out of range");
  }
}

}  // namespace

ClassificationReport build_report(std::vector<PredictionRecord> predictions,
                                  std::vector<std::string> class_names) {
  if (predictions.empty()) fail(ErrorCode::EmptySplit, "no predictions to evaluate");
  if (class_names.size() < 2) fail(ErrorCode::ParamError, "need at least two classes");
  ClassificationReport report;
  report.class_names = std::move(class_names);
  const std::size_t classes = report.class_names.size();
  report.matrix = ConfusionMatrix(classes);
  for (const auto& p : predictions) {
    check_class(p.true_class, classes);
    check_class(p.predicted_class, classes);
    ++report.matrix.at(static_cast<std::size_t>(p.true_class),
                       static_cast<std::size_t>(p.predicted_class));
  }
  std::stable_sort(predictions.begin(), predictions.end(),
                   [](const PredictionRecord& a, const PredictionRecord& b) {
                     return a.sample_id < b.sample_id;
                   });
  report.predictions = std::move(predictions);
  fill_metrics(report);
  return report;
}

ClassificationReport compute_report(std::span<const int> truth, std::span<const int> predicted,
                                    std::vector<std::string> class_names) {
  if (truth.size() != predicted.size()) {
    fail(ErrorCode::ShapeMismatch, "truth and prediction vectors differ in length");
  }
  if (truth.empty()) fail(ErrorCode::EmptySplit, "no predictions to evaluate");
  if (class_names.size() < 2) fail(ErrorCode::ParamError, "need at least two classes");
  ClassificationReport report;
  report.class_names = std::move(class_names);
  report.matrix = ConfusionMatrix(report.class_names.size());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    check_class(truth[i], report.class_names.size());
    check_class(predicted[i], report.class_names.size());
    ++report.matrix.at(static_cast<std::size_t>(truth[i]), static_cast<std::size_t>(predicted[i]));
  }
  fill_metrics(report);
  return report;
}

ClassificationReport evaluate(const ModelBundle& bundle, const DatasetManifest& manifest,
                              Split split, std::size_t batch_size) {
  const std::size_t n = manifest.split_size(split);
  if (n == 0) {
    fail(ErrorCode::EmptySplit, "split '" + std::string(split_name(split)) + "' is empty");
  }
  if (manifest.classes.size() != bundle.config.num_classes) {
    fail(ErrorCode::ClassCountMismatch, "manifest has " + std::to_string(manifest.classes.size()) +
                                            " classes, model has " +
                                            std::to_string(bundle.config.num_classes));
  }
  batch_size = std::max<std::size_t>(batch_size, 1);
  std::vector<PredictionRecord> records;
  records.reserve(n);
  std::vector<std::size_t> indices;
  for (std::size_t start = 0; start < n; start += batch_size) {
    indices.clear();
    for (std::size_t i = start; i < std::min(n, start + batch_size); ++i) indices.push_back(i);
    const Batch batch = load_batch(manifest, split, indices, bundle.config.input_size);
    const Prediction pred = predict(bundle, batch.images);
    const std::size_t classes = pred.probabilities.dim(1);
    for (std::size_t b = 0; b < indices.size(); ++b) {
      const int p = pred.class_ids[b];
      records.push_back({batch.sample_ids[b], batch.labels[b], p,
                         pred.probabilities[b * classes + static_cast<std::size_t>(p)]});
    }
  }
  return build_report(std::move(records), manifest.class_names());
}

// --- serialization --------------------------------------------------------------

namespace {

json metrics_json(const ClassMetrics& m) {
  return {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"support", m.support}};
}

ClassMetrics metrics_from(const json& j) {
  return {j.at("precision").get<double>(), j.at("recall").get<double>(), j.at("f1").get<double>(),
          j.at("support").get<std::size_t>()};
}

}  // namespace

json report_to_json(const ClassificationReport& r) {
  json per_class = json::array();
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    json m = metrics_json(r.per_class[c]);
    m["class"] = r.class_names[c];
    per_class.push_back(std::move(m));
  }
  json matrix = json::array();
  for (std::size_t t = 0; t < r.matrix.classes(); ++t) {
    json row = json::array();
    for (std::size_t p = 0; p < r.matrix.classes(); ++p) row.push_back(r.matrix.at(t, p));
    matrix.push_back(std::move(row));
  }
  json predictions = json::array();
  for (const auto& p : r.predictions) {
    predictions.push_back({{"sample_id", p.sample_id},
                           {"true_class", p.true_class},
                           {"predicted_class", p.predicted_class},
                           {"confidence", p.confidence}});
  }
  return {{"class_names", r.class_names},   {"per_class", std::move(per_class)},
          {"weighted_avg", metrics_json(r.weighted_avg)}, {"confusion_matrix", std::move(matrix)},
          {"predictions", std::move(predictions)}, {"warnings", r.warnings}};
}

ClassificationReport report_from_json(const json& doc) {
  try {
    ClassificationReport r;
    r.class_names = doc.at("class_names").get<std::vector<std::string>>();
    for (const auto& m : doc.at("per_class")) r.per_class.push_back(metrics_from(m));
    r.weighted_avg = metrics_from(doc.at("weighted_avg"));
    const auto& matrix = doc.at("confusion_matrix");
    r.matrix = ConfusionMatrix(matrix.size());
    for (std::size_t t = 0; t < matrix.size(); ++t) {
      for (std::size_t p = 0; p < matrix.size(); ++p) {
        r.matrix.at(t, p) = matrix.at(t).at(p).get<std::size_t>();
      }
    }
    for (const auto& p : doc.at("predictions")) {
      r.predictions.push_back({p.at("sample_id").get<std::string>(), p.at("true_class").get<int>(),
                               p.at("predicted_class").get<int>(),
                               p.at("confidence").get<double>()});
    }
    r.warnings = doc.value("warnings", std::vector<std::string>{});
    return r;
  } catch (const json::exception& e) {
    fail(ErrorCode::FormatError, std::string("malformed report: ") + e.what());
  }
}

void save_report(const ClassificationReport& report, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << report_to_json(report).dump(2) << "\n";
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
}

ClassificationReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  try {
    return report_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::FormatError, "malformed report " + path.string() + ": " + e.what());
  }
}

// --- text tables ------------------------------------------------------------------

namespace {

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::string render_metrics_table(std::span<const TableRow> rows) {
  std::string out = "Class Precision Recall F1 Score\n";
  for (const auto& r : rows) {
    out += r.label + " " + fixed2(r.precision) + " " + fixed2(r.recall) + " " + fixed2(r.f1) + "\n";
  }
  return out;
}

std::string render_report_table(const ClassificationReport& report) {
  std::vector<TableRow> rows;
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    const auto& m = report.per_class[c];
    rows.push_back({report.class_names[c], m.precision, m.recall, m.f1});
  }
  const auto& w = report.weighted_avg;
  rows.push_back({"Weighted Average", w.precision, w.recall, w.f1});
  return render_metrics_table(rows);
}

}  // namespace evx
