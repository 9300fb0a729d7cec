#include "evx/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <opencv2/imgcodecs.hpp>

#include "evx/error.hpp"
#include "evx/image.hpp"
#include "evx/random.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace evx {

std::string_view split_name(Split split) noexcept {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  fail(ErrorCode::ParamError, "unknown split '" + std::string(name) + "'");
}

std::vector<std::size_t> DatasetManifest::split_indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].split == split) out.push_back(i);
  }
  return out;
}

std::size_t DatasetManifest::split_size(Split split) const {
  return static_cast<std::size_t>(std::count_if(
      samples.begin(), samples.end(), [split](const Sample& s) { return s.split == split; }));
}

const EventClass& DatasetManifest::class_by_name(std::string_view name) const {
  for (const auto& c : classes) {
    if (c.name == name) return c;
  }
  fail(ErrorCode::UnknownClass, "no class named '" + std::string(name) + "'");
}

std::vector<std::string> DatasetManifest::class_names() const {
  std::vector<std::string> names;
  names.reserve(classes.size());
  for (const auto& c : classes) names.push_back(c.name);
  return names;
}

namespace {

void check_fractions(const SplitFractions& f) {
  const bool non_negative = f.train >= 0 && f.val >= 0 && f.test >= 0;
  if (!non_negative || std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    fail(ErrorCode::ConfigError, "split fractions must be non-negative and sum to 1");
  }
}

bool is_decodable(const fs::path& path) {
  if (!has_image_extension(path)) return false;
  try {
    return cv::haveImageReader(path.string());
  } catch (const cv::Exception&) {
    return false;
  }
}

std::uint64_t class_seed(std::uint64_t seed, int class_id) {
  return seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(class_id + 1));
}

}  // namespace

DatasetManifest scan(const fs::path& root, std::uint64_t seed, SplitFractions fractions) {
  check_fractions(fractions);
  std::error_code ec;
  if (!fs::is_directory(root, ec)) {
    fail(ErrorCode::UnreadableRoot, "dataset root is not a readable directory: " + root.string());
  }

  DatasetManifest manifest;
  manifest.root = root;
  manifest.seed = seed;
  manifest.fractions = fractions;

  std::vector<fs::path> class_dirs;
  fs::directory_iterator it(root, ec);
  if (ec) fail(ErrorCode::UnreadableRoot, "cannot list " + root.string() + ": " + ec.message());
  for (const auto& entry : it) {
    if (entry.is_directory()) {
      class_dirs.push_back(entry.path());
    } else {
      ++manifest.skipped_files;
    }
  }
  std::sort(class_dirs.begin(), class_dirs.end());

  for (const auto& dir : class_dirs) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir, ec)) {
      if (entry.is_regular_file() && is_decodable(entry.path())) {
        files.push_back(entry.path().filename().string());
      } else {
        ++manifest.skipped_files;
      }
    }
    if (files.empty()) continue;
    std::sort(files.begin(), files.end());

    const int class_id = static_cast<int>(manifest.classes.size());
    const std::string class_name = dir.filename().string();
    manifest.classes.push_back({class_id, class_name});

    const std::size_t n = files.size();
    const auto n_train = std::min(
        n, static_cast<std::size_t>(std::llround(fractions.train * static_cast<double>(n))));
    const auto n_val = std::min(
        n - n_train, static_cast<std::size_t>(std::llround(fractions.val * static_cast<double>(n))));

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(class_seed(seed, class_id));
    rng.shuffle(order);

    std::vector<Split> assigned(n, Split::Test);
    for (std::size_t k = 0; k < n_train; ++k) assigned[order[k]] = Split::Train;
    for (std::size_t k = n_train; k < n_train + n_val; ++k) assigned[order[k]] = Split::Val;

    for (std::size_t i = 0; i < n; ++i) {
      manifest.samples.push_back({class_name + "/" + files[i], class_id, assigned[i]});
    }
  }

  if (manifest.classes.size() < 2) {
    fail(ErrorCode::EmptyDataset, "need at least 2 class directories with images under " +
                                      root.string() + ", found " +
                                      std::to_string(manifest.classes.size()));
  }
  return manifest;
}

json manifest_to_json(const DatasetManifest& m) {
  json classes = json::array();
  for (const auto& c : m.classes) classes.push_back({{"id", c.id}, {"name", c.name}});
  json samples = json::array();
  for (const auto& s : m.samples) {
    samples.push_back(
        {{"sample_id", s.sample_id}, {"class_id", s.class_id}, {"split", split_name(s.split)}});
  }
  return {
      {"root", m.root.generic_string()},
      {"seed", m.seed},
      {"split_fractions", {m.fractions.train, m.fractions.val, m.fractions.test}},
      {"resize", m.resize_method},
      {"skipped_files", m.skipped_files},
      {"classes", std::move(classes)},
      {"samples", std::move(samples)},
  };
}

DatasetManifest manifest_from_json(const json& doc) {
  try {
    DatasetManifest m;
    m.root = doc.at("root").get<std::string>();
    m.seed = doc.at("seed").get<std::uint64_t>();
    const auto& f = doc.at("split_fractions");
    m.fractions = {f.at(0).get<double>(), f.at(1).get<double>(), f.at(2).get<double>()};
    m.resize_method = doc.value("resize", std::string("bilinear"));
    m.skipped_files = doc.value("skipped_files", std::size_t{0});
    for (const auto& c : doc.at("classes")) {
      m.classes.push_back({c.at("id").get<int>(), c.at("name").get<std::string>()});
    }
    for (const auto& s : doc.at("samples")) {
      m.samples.push_back({s.at("sample_id").get<std::string>(), s.at("class_id").get<int>(),
                           parse_split(s.at("split").get<std::string>())});
    }
    for (std::size_t i = 0; i < m.classes.size(); ++i) {
      if (m.classes[i].id != static_cast<int>(i)) {
        fail(ErrorCode::FormatError, "manifest class ids must be contiguous from 0");
      }
    }
    return m;
  } catch (const json::exception& e) {
    fail(ErrorCode::FormatError, std::string("malformed manifest: ") + e.what());
  }
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << manifest_to_json(manifest).dump(2) << "\n";
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  try {
    return manifest_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::FormatError, "malformed manifest " + path.string() + ": " + e.what());
  }
}

Batch load_batch(const DatasetManifest& manifest, Split split,
                 std::span<const std::size_t> indices, std::size_t input_size) {
  const auto members = manifest.split_indices(split);
  Batch batch;
  batch.images = Tensor({indices.size(), input_size, input_size, 3});
  const std::size_t stride = input_size * input_size * 3;
  for (std::size_t b = 0; b < indices.size(); ++b) {
    if (indices[b] >= members.size()) {
      fail(ErrorCode::ParamError, "index " + std::to_string(indices[b]) + " outside split '" +
                                      std::string(split_name(split)) + "' of size " +
                                      std::to_string(members.size()));
    }
    const Sample& sample = manifest.samples[members[indices[b]]];
    Image image;
    try {
      image = read_image(manifest.root / sample.sample_id);
    } catch (const Error&) {
      fail(ErrorCode::CorruptImage, "corrupt image: " + sample.sample_id);
    }
    const Tensor input = image_to_input(image, input_size);
    std::copy(input.values().begin(), input.values().end(),
              batch.images.data() + b * stride);
    batch.labels.push_back(sample.class_id);
    batch.sample_ids.push_back(sample.sample_id);
  }
  return batch;
}

}  // namespace evx
