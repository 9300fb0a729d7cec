#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "evx/dataset.hpp"
#include "evx/error.hpp"
#include "helpers.hpp"

namespace fs = std::filesystem;

namespace evx {
namespace {

void make_class(const fs::path& root, const std::string& name, std::size_t count,
                std::uint8_t shade = 100) {
  fs::create_directories(root / name);
  const Image img = testing::solid_image(4, 4, shade, shade, shade);
  for (std::size_t i = 0; i < count; ++i) {
    char file[32];
    std::snprintf(file, sizeof file, "img_%03zu.png", i);
    write_png(root / name / file, img);
  }
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(Scan, SixEventClasses) {
  const auto root = testing::temp_dir();
  for (const char* name : {"concert", "graduation", "mountain_trip", "picnic", "sea_holiday",
                           "ski_holiday"}) {
    make_class(root, name, 3);
  }
  const DatasetManifest m = scan(root);
  ASSERT_EQ(m.classes.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(m.classes[i].id, static_cast<int>(i));
  EXPECT_EQ(m.classes[0].name, "concert");
  EXPECT_EQ(m.classes[5].name, "ski_holiday");
  EXPECT_EQ(m.samples.size(), 18u);
}

TEST(Scan, SeventyFifteenFifteen) {
  const auto root = testing::temp_dir();
  make_class(root, "a", 100);
  make_class(root, "b", 100);
  const DatasetManifest m = scan(root, 13);
  for (int c = 0; c < 2; ++c) {
    std::size_t counts[3] = {0, 0, 0};
    for (const auto& s : m.samples) {
      if (s.class_id == c) ++counts[static_cast<int>(s.split)];
    }
    EXPECT_EQ(counts[0], 70u);
    EXPECT_EQ(counts[1], 15u);
    EXPECT_EQ(counts[2], 15u);
  }
  EXPECT_EQ(m.split_size(Split::Train), 140u);
}

TEST(Scan, StratificationWithinOneSample) {
  const auto root = testing::temp_dir();
  const std::size_t sizes[] = {7, 13, 29, 2};
  const char* names[] = {"w", "x", "y", "z"};
  for (int i = 0; i < 4; ++i) make_class(root, names[i], sizes[i]);
  const SplitFractions f{0.6, 0.25, 0.15};
  const DatasetManifest m = scan(root, 99, f);
  const double fr[3] = {f.train, f.val, f.test};
  for (int c = 0; c < 4; ++c) {
    std::size_t counts[3] = {0, 0, 0};
    for (const auto& s : m.samples) {
      if (s.class_id == c) ++counts[static_cast<int>(s.split)];
    }
    const double n = static_cast<double>(sizes[c]);
    for (int k = 0; k < 3; ++k) {
      EXPECT_LE(std::abs(static_cast<double>(counts[k]) / n - fr[k]), 1.0 / n + 1e-12)
          << "class " << c << " split " << k;
    }
  }
}

TEST(Scan, PartitionIsDisjointAndComplete) {
  const auto root = testing::temp_dir();
  make_class(root, "a", 20);
  make_class(root, "b", 11);
  const DatasetManifest m = scan(root, 5);
  std::set<std::string> seen;
  std::size_t total = 0;
  for (Split s : {Split::Train, Split::Val, Split::Test}) {
    for (std::size_t i : m.split_indices(s)) {
      EXPECT_TRUE(seen.insert(m.samples[i].sample_id).second);
      ++total;
    }
  }
  EXPECT_EQ(total, 31u);
}

TEST(Scan, SameSeedGivesByteIdenticalManifest) {
  const auto root = testing::temp_dir();
  make_class(root, "a", 30);
  make_class(root, "b", 30);
  const auto out = testing::temp_dir("out");
  save_manifest(scan(root, 13), out / "m1.json");
  save_manifest(scan(root, 13), out / "m2.json");
  EXPECT_EQ(file_bytes(out / "m1.json"), file_bytes(out / "m2.json"));
  EXPECT_EQ(load_manifest(out / "m1.json"), scan(root, 13));
}

TEST(Scan, DifferentSeedChangesSplit) {
  const auto root = testing::temp_dir();
  make_class(root, "a", 30);
  make_class(root, "b", 30);
  EXPECT_NE(scan(root, 13).samples, scan(root, 14).samples);
}

TEST(Scan, SkipsNonImages) {
  const auto root = testing::temp_dir();
  make_class(root, "a", 2);
  make_class(root, "b", 2);
  std::ofstream(root / "a" / "notes.txt") << "x";
  std::ofstream(root / "README") << "x";
  const DatasetManifest m = scan(root);
  EXPECT_EQ(m.samples.size(), 4u);
  EXPECT_EQ(m.skipped_files, 2u);
}

TEST(Scan, FewerThanTwoClassesIsEmptyDataset) {
  const auto root = testing::temp_dir();
  make_class(root, "only", 5);
  fs::create_directories(root / "empty");
  try {
    scan(root);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyDataset);
  }
}

TEST(Scan, MissingRootIsUnreadable) {
  try {
    scan(testing::temp_dir() / "nope");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnreadableRoot);
  }
}

TEST(Scan, BadFractionsRejected) {
  const auto root = testing::temp_dir();
  make_class(root, "a", 2);
  make_class(root, "b", 2);
  EXPECT_THROW(scan(root, 13, {0.5, 0.5, 0.5}), Error);
  EXPECT_THROW(scan(root, 13, {1.2, -0.1, -0.1}), Error);
}

TEST(LoadBatch, PaperBatchShape) {
  const auto root = testing::temp_dir();
  make_class(root, "a", 100, 0);
  make_class(root, "b", 100, 255);
  const DatasetManifest m = scan(root);
  std::vector<std::size_t> idx(120);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const Batch b = load_batch(m, Split::Train, idx, 299);
  EXPECT_EQ(b.images.shape(), (Shape{120, 299, 299, 3}));
  EXPECT_EQ(b.labels.size(), 120u);
  EXPECT_GE(b.images.min(), -1.0);
  EXPECT_LE(b.images.max(), 1.0);
  // Class a is black, class b white: labels align with pixel values.
  const std::size_t stride = 299 * 299 * 3;
  for (std::size_t i = 0; i < 120; ++i) {
    EXPECT_EQ(b.images[i * stride], b.labels[i] == 0 ? -1.0 : 1.0);
  }
}

TEST(LoadBatch, CorruptImageNamesSample) {
  const auto root = testing::temp_dir();
  make_class(root, "a", 3);
  make_class(root, "b", 3);
  // Keep the PNG signature so the scan accepts it, but truncate the data.
  const std::string png = file_bytes(root / "a" / "img_000.png");
  std::ofstream(root / "a" / "img_zzz.png", std::ios::binary) << png.substr(0, 24);
  const DatasetManifest m = scan(root, 13, {0.0, 0.0, 1.0});
  const auto test = m.split_indices(Split::Test);
  std::size_t bad = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (m.samples[test[i]].sample_id == "a/img_zzz.png") bad = i;
  }
  const std::size_t idx[] = {bad};
  try {
    load_batch(m, Split::Test, idx, 8);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::CorruptImage);
    EXPECT_NE(std::string(e.what()).find("a/img_zzz.png"), std::string::npos);
  }
}

TEST(LoadBatch, ConcurrentReadersAgree) {
  const auto root = testing::temp_dir();
  make_class(root, "a", 10, 30);
  make_class(root, "b", 10, 200);
  const DatasetManifest m = scan(root);
  std::vector<std::size_t> idx{0, 1, 2, 3, 4};
  const Batch ref = load_batch(m, Split::Train, idx, 16);
  std::vector<Batch> got(4);
  std::vector<std::thread> workers;
  for (auto& g : got) workers.emplace_back([&] { g = load_batch(m, Split::Train, idx, 16); });
  for (auto& w : workers) w.join();
  for (const auto& g : got) EXPECT_EQ(g.images, ref.images);
}

}  // namespace
}  // namespace evx
