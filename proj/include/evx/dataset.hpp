#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evx/tensor.hpp"
#include "json.hpp"

namespace evx {

enum class Split { Train, Val, Test };

std::string_view split_name(Split split) noexcept;
Split parse_split(std::string_view name);

struct EventClass {
  int id = 0;
  std::string name;
  friend bool operator==(const EventClass&, const EventClass&) = default;
};

struct Sample {
  std::string sample_id;  // path relative to the dataset root, '/' separated
  int class_id = 0;
  Split split = Split::Train;
  friend bool operator==(const Sample&, const Sample&) = default;
};

struct SplitFractions {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
  friend bool operator==(const SplitFractions&, const SplitFractions&) = default;
};

inline constexpr std::uint64_t kDefaultSplitSeed = 13;

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<EventClass> classes;
  std::vector<Sample> samples;  // ordered by (class directory, file name)
  std::uint64_t seed = kDefaultSplitSeed;
  SplitFractions fractions;
  std::size_t skipped_files = 0;  // non-image entries seen during the scan
  std::string resize_method = "bilinear";

  // Positions into `samples` of every sample in `split`, in manifest order.
  std::vector<std::size_t> split_indices(Split split) const;
  std::size_t split_size(Split split) const;
  const EventClass& class_by_name(std::string_view name) const;
  std::vector<std::string> class_names() const;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

// Walks `<root>/<class_name>/<image files>` and assigns a stratified split.
// Listings are sorted before shuffling so the result depends only on the seed
// and the set of file names.
DatasetManifest scan(const std::filesystem::path& root,
                     std::uint64_t seed = kDefaultSplitSeed,
                     SplitFractions fractions = {});

nlohmann::json manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const nlohmann::json& doc);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

struct Batch {
  Tensor images;  // B x size x size x 3, values in [-1, +1]
  std::vector<int> labels;
  std::vector<std::string> sample_ids;
};

// `indices` address the split's own ordering (0 .. split_size-1). Safe to call
// concurrently on a shared manifest.
Batch load_batch(const DatasetManifest& manifest, Split split,
                 std::span<const std::size_t> indices, std::size_t input_size);

}  // namespace evx
