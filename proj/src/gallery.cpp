#include <algorithm>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "evx/evaluation.hpp"
#include "httplib.h"

namespace evx {

Gallery misclassification_gallery(const ClassificationReport& report,
                                  const OverlayLookup& overlay_for, std::size_t per_cell) {
  Gallery gallery;
  gallery.class_names = report.class_names;
  std::map<std::pair<int, int>, GalleryCell> cells;
  for (const auto& p : report.predictions) {
    if (p.true_class == p.predicted_class) continue;
    auto& cell = cells[{p.true_class, p.predicted_class}];
    cell.true_class = p.true_class;
    cell.predicted_class = p.predicted_class;
    ++cell.count;
    if (cell.entries.size() < per_cell) {
      GalleryEntry entry{p.sample_id, {}, p.confidence};
      if (overlay_for) {
        if (auto path = overlay_for(p.sample_id)) entry.overlay = *path;
      }
      cell.entries.push_back(std::move(entry));
    }
  }
  for (auto& [key, cell] : cells) gallery.cells.push_back(std::move(cell));
  // std::map iteration already orders ties by (true, predicted).
  std::stable_sort(gallery.cells.begin(), gallery.cells.end(),
                   [](const GalleryCell& a, const GalleryCell& b) { return a.count > b.count; });
  return gallery;
}

namespace {

std::string escape_html(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

std::string class_label(const Gallery& g, int id) {
  const auto idx = static_cast<std::size_t>(id);
  return idx < g.class_names.size() ? g.class_names[idx] : std::to_string(id);
}

}  // namespace

std::string render_gallery_html(const Gallery& gallery) {
  std::ostringstream html;
  html << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">"
          "<title>Misclassified samples</title>"
          "<style>body{font-family:sans-serif}figure{display:inline-block;margin:4px}"
          "img{width:192px}figcaption{font-size:12px}</style></head><body>\n"
          "<h1>Misclassified samples</h1>\n";
  if (gallery.cells.empty()) html << "<p>No misclassified samples.</p>\n";
  for (const auto& cell : gallery.cells) {
    html << "<section class=\"cell\" data-true=\"" << cell.true_class << "\" data-predicted=\""
         << cell.predicted_class << "\" data-count=\"" << cell.count << "\">\n<h2>"
         << escape_html(class_label(gallery, cell.true_class)) << " predicted as "
         << escape_html(class_label(gallery, cell.predicted_class)) << " (" << cell.count
         << ")</h2>\n";
    for (const auto& e : cell.entries) {
      html << "<figure data-sample=\"" << escape_html(e.sample_id) << "\">";
      std::ifstream in(e.overlay, std::ios::binary);
      if (!e.overlay.empty() && in) {
        const std::string bytes((std::istreambuf_iterator<char>(in)), {});
        html << "<img src=\"data:image/png;base64," << httplib::detail::base64_encode(bytes)
             << "\" alt=\"" << escape_html(e.sample_id) << "\">";
      }
      html << "<figcaption>" << escape_html(e.sample_id) << "<br>true: "
           << escape_html(class_label(gallery, cell.true_class))
           << ", predicted: " << escape_html(class_label(gallery, cell.predicted_class))
           << "</figcaption></figure>\n";
    }
    html << "</section>\n";
  }
  html << "</body></html>\n";
  return html.str();
}

}  // namespace evx
