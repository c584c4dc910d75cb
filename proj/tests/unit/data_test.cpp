#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "temp_dir.hpp"
#include "vitforge/dataset.hpp"
#include "vitforge/image.hpp"

namespace vitforge {
namespace {

using testing::TempDir;

Image gradient_image(std::size_t h, std::size_t w, std::size_t c, double offset) {
  Image img(h, w, c);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t k = 0; k < c; ++k)
        img.at(y, x, k) = static_cast<float>(std::fmod(offset + 0.3 * y / h + 0.6 * x / w + 0.05 * k, 1.0));
  return img;
}

TEST(ClassMap, GastrointestinalLabels) {
  const auto m = ClassMap::gastrointestinal();
  ASSERT_EQ(m.size(), 4u);
  EXPECT_EQ(m.id("normal"), 0);
  EXPECT_EQ(m.id("ulcerative_colitis"), 1);
  EXPECT_EQ(m.id("polyps"), 2);
  EXPECT_EQ(m.id("esophagitis"), 3);
  EXPECT_EQ(ClassMap::parse(m.to_text()), m);
}

TEST(ClassMap, RejectsGapsAndDuplicates) {
  EXPECT_THROW(ClassMap::parse("a=0\nb=2\n"), DataError);
  EXPECT_THROW(ClassMap::parse("a=0\na=1\n"), DataError);
  EXPECT_THROW(ClassMap::parse("a=0\nb=0\n"), DataError);
  EXPECT_THROW(ClassMap::parse("a\n"), DataError);
  EXPECT_EQ(ClassMap::parse("# c\nb=1\n\na=0\n").names(), (std::vector<std::string>{"a", "b"}));
}

TEST(Resize, UnchangedSizeIsExactCopy) {
  const auto img = gradient_image(7, 5, 3, 0.1);
  EXPECT_EQ(resize_bilinear(img, 7, 5), img);
}

TEST(Resize, TwoByTwoToFourByFourMatchesHandFormula) {
  Image src(2, 2, 1);
  src.at(0, 0, 0) = 0.1f;
  src.at(0, 1, 0) = 0.5f;
  src.at(1, 0, 0) = 0.7f;
  src.at(1, 1, 0) = 0.9f;
  const auto out = resize_bilinear(src, 4, 4);
  auto coord = [](std::size_t i) { return std::clamp((static_cast<double>(i) + 0.5) / 2.0 - 0.5, 0.0, 1.0); };
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) {
      const double sy = coord(y), sx = coord(x);
      const double expected = (1 - sy) * (1 - sx) * 0.1 + (1 - sy) * sx * 0.5 + sy * (1 - sx) * 0.7 + sy * sx * 0.9;
      EXPECT_NEAR(out.at(y, x, 0), expected, 1e-6) << y << "," << x;
    }
  EXPECT_FLOAT_EQ(out.at(0, 0, 0), 0.1f);
  EXPECT_FLOAT_EQ(out.at(0, 3, 0), 0.5f);
  EXPECT_FLOAT_EQ(out.at(3, 0, 0), 0.7f);
  EXPECT_FLOAT_EQ(out.at(3, 3, 0), 0.9f);
}

TEST(Image, PnmRoundTripAndChannelConversion) {
  TempDir dir;
  const auto img = gradient_image(6, 9, 3, 0.2);
  write_pnm(dir / "a.ppm", img);
  const auto back = read_image(dir / "a.ppm");
  ASSERT_EQ(back.height, 6u);
  ASSERT_EQ(back.width, 9u);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_NEAR(back.pixels[i] / 255.0, img.pixels[i], 0.5 / 255 + 1e-6);
  const auto gray = convert_channels(gradient_image(3, 3, 1, 0.0), 3);
  EXPECT_EQ(gray.channels, 3u);
  EXPECT_EQ(gray.at(1, 2, 0), gray.at(1, 2, 2));
}

class DatasetTree : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto classes = ClassMap::gastrointestinal();
    for (std::size_t k = 0; k < classes.size(); ++k) {
      std::filesystem::create_directories(dir.path() / classes.names()[k]);
      for (int i = 0; i < 2; ++i) {
        write_pnm(dir.path() / classes.names()[k] / ("img" + std::to_string(i) + ".ppm"),
                  gradient_image(576, 720, 3, 0.1 * static_cast<double>(k) + 0.05 * i));
      }
    }
  }
  TempDir dir;
};

TEST_F(DatasetTree, LoadsResizedNormalizedImages) {
  const auto data = load_dataset(dir.path(), ClassMap::gastrointestinal(), 72, 72);
  ASSERT_EQ(data.size(), 8u);
  EXPECT_EQ(data.class_counts(), (std::vector<std::size_t>{2, 2, 2, 2}));
  for (const auto& s : data.samples) {
    EXPECT_EQ(s.pixels.height, 72u);
    EXPECT_EQ(s.pixels.width, 72u);
    EXPECT_EQ(s.pixels.channels, 3u);
    for (float v : s.pixels.pixels) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
    EXPECT_EQ(ClassMap::gastrointestinal().name(s.label), s.source_path.substr(0, s.source_path.find('/')));
  }
  // Sorted class-directory then file order.
  EXPECT_EQ(data.samples[0].source_path, "esophagitis/img0.ppm");
  EXPECT_EQ(data.samples[1].source_path, "esophagitis/img1.ppm");
}

TEST_F(DatasetTree, TargetSizeOnlyDividesBy255) {
  const auto data = load_dataset(dir.path(), ClassMap::gastrointestinal(), 576, 720);
  const auto raw = read_image(dir.path() / data.samples[0].source_path);
  for (std::size_t i = 0; i < raw.pixels.size(); i += 997) {
    EXPECT_FLOAT_EQ(data.samples[0].pixels.pixels[i], raw.pixels[i] / 255.0f);
  }
}

TEST_F(DatasetTree, UnknownDirectoryIsListed) {
  std::filesystem::create_directories(dir.path() / "mystery");
  try {
    load_dataset(dir.path(), ClassMap::gastrointestinal(), 8, 8);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("mystery"), std::string::npos) << e.what();
  }
}

TEST_F(DatasetTree, UndecodableFileIsNamed) {
  std::ofstream(dir.path() / "polyps" / "broken.ppm") << "P6\n12 x\n";
  try {
    load_dataset(dir.path(), ClassMap::gastrointestinal(), 8, 8);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("broken.ppm"), std::string::npos) << e.what();
  }
}

TEST_F(DatasetTree, EmptyClassIsRejected) {
  for (const auto& f : std::filesystem::directory_iterator(dir.path() / "normal")) std::filesystem::remove(f);
  try {
    load_dataset(dir.path(), ClassMap::gastrointestinal(), 8, 8);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("normal"), std::string::npos) << e.what();
  }
}

TEST_F(DatasetTree, IndexedLoadFollowsListOrder) {
  const std::vector<std::string> list{"polyps/img1.ppm", "normal/img0.ppm"};
  write_index_file(dir.path() / "x.idx", list);
  EXPECT_EQ(read_index_file(dir.path() / "x.idx"), list);
  const auto data = load_indexed(dir.path(), list, ClassMap::gastrointestinal(), 12, 12);
  ASSERT_EQ(data.size(), 2u);
  EXPECT_EQ(data.samples[0].label, 2);
  EXPECT_EQ(data.samples[1].label, 0);
}

std::vector<int> balanced_labels(std::size_t per_class, std::size_t k) {
  std::vector<int> labels;
  for (std::size_t c = 0; c < k; ++c) labels.insert(labels.end(), per_class, static_cast<int>(c));
  return labels;
}

void expect_partition(const SplitIndices& s, std::size_t n) {
  std::vector<int> hits(n, 0);
  for (const auto* part : {&s.train, &s.validation, &s.test})
    for (auto i : *part) {
      ASSERT_LT(i, n);
      ++hits[i];
    }
  for (std::size_t i = 0; i < n; ++i) ASSERT_EQ(hits[i], 1) << "index " << i;
}

TEST(Split, ThousandSamplesDefaults) {
  const auto labels = balanced_labels(250, 4);
  const auto s = split(labels, 4, SplitSpec{});
  EXPECT_EQ(s.train.size(), 720u);
  EXPECT_EQ(s.validation.size(), 80u);
  EXPECT_EQ(s.test.size(), 200u);
  expect_partition(s, 1000);
  SplitSpec plain;
  plain.stratified = false;
  const auto u = split(labels, 4, plain);
  EXPECT_EQ(u.train.size(), 720u);
  EXPECT_EQ(u.validation.size(), 80u);
  EXPECT_EQ(u.test.size(), 200u);
  expect_partition(u, 1000);
}

TEST(Split, FixedSeedIsReproducible) {
  const auto labels = balanced_labels(30, 4);
  SplitSpec spec;
  spec.seed = 17;
  const auto a = split(labels, 4, spec);
  const auto b = split(labels, 4, spec);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.validation, b.validation);
  EXPECT_EQ(a.test, b.test);
  spec.seed = 18;
  EXPECT_NE(split(labels, 4, spec).test, a.test);
}

std::vector<std::size_t> per_class(const std::vector<std::size_t>& idx, std::span<const int> labels, std::size_t k) {
  std::vector<std::size_t> counts(k, 0);
  for (auto i : idx) ++counts[static_cast<std::size_t>(labels[i])];
  return counts;
}

TEST(Split, HundredBalancedSamples) {
  const auto labels = balanced_labels(25, 4);
  const auto s = split(labels, 4, SplitSpec{});
  const auto test = per_class(s.test, labels, 4), val = per_class(s.validation, labels, 4),
             train = per_class(s.train, labels, 4);
  for (std::size_t c = 0; c < 4; ++c) {
    // 25 * 0.2 = 5 test; 20 * 0.1 = 2 validation; 18 train.
    EXPECT_NEAR(static_cast<double>(test[c]), 5.0, 1.0);
    EXPECT_NEAR(static_cast<double>(val[c]), 2.0, 1.0);
    EXPECT_NEAR(static_cast<double>(train[c]), 18.0, 1.0);
  }
}

TEST(Split, RandomDatasetsArePartitionedWithinOneSamplePerClass) {
  Rng rng(123);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 2 + rng.below(5);
    std::vector<int> labels;
    for (std::size_t c = 0; c < k; ++c) labels.insert(labels.end(), 10 + rng.below(60), static_cast<int>(c));
    rng.shuffle(std::span<int>(labels));
    SplitSpec spec;
    spec.seed = rng.next_u64();
    spec.test_fraction = rng.uniform(0.1, 0.5);
    spec.validation_fraction = rng.uniform(0.1, 0.5);
    const auto s = split(labels, k, spec);
    expect_partition(s, labels.size());
    const auto counts = per_class(s.test, labels, k);
    const auto val = per_class(s.validation, labels, k);
    std::vector<std::size_t> sizes(k, 0);
    for (int l : labels) ++sizes[static_cast<std::size_t>(l)];
    const double test_share = static_cast<double>(s.test.size()) / static_cast<double>(labels.size());
    const double val_share = static_cast<double>(s.validation.size()) / static_cast<double>(labels.size() - s.test.size());
    for (std::size_t c = 0; c < k; ++c) {
      EXPECT_LE(std::abs(static_cast<double>(counts[c]) - test_share * sizes[c]), 1.0) << "trial " << trial;
      EXPECT_LE(std::abs(static_cast<double>(val[c]) - val_share * (sizes[c] - counts[c])), 1.0 + 1e-9)
          << "trial " << trial;
    }
  }
}

TEST(Split, SmallClassIsNamed) {
  Dataset data;
  data.classes = ClassMap({"big", "tiny"});
  for (int i = 0; i < 40; ++i) data.samples.push_back({Image(1, 1, 1), 0, ""});
  for (int i = 0; i < 3; ++i) data.samples.push_back({Image(1, 1, 1), 1, ""});
  try {
    split(data, SplitSpec{});
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("tiny"), std::string::npos) << e.what();
  }
  SplitSpec bad;
  bad.test_fraction = 1.0;
  EXPECT_THROW(split(data, bad), DataError);
}

LabeledImage disk_image(std::size_t size) {
  LabeledImage li;
  li.pixels = Image(size, size, 1);
  li.label = 2;
  const double c = (static_cast<double>(size) - 1) / 2.0, r = size * 0.3;
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double d = std::hypot(y - c, x - c);
      li.pixels.at(y, x, 0) = static_cast<float>(std::clamp(r + 0.5 - d, 0.0, 1.0) * 0.8 + 0.1);
    }
  return li;
}

TEST(Augment, ZeroSpecIsBitIdentical) {
  LabeledImage li{gradient_image(9, 7, 3, 0.3), 1, "x"};
  Rng rng(4);
  const auto out = augment(li, AugmentSpec::none(), rng);
  EXPECT_EQ(out.pixels, li.pixels);
  EXPECT_EQ(out.label, li.label);
  EXPECT_TRUE(AugmentSpec::none().is_identity());
  EXPECT_EQ(apply_affine(li.pixels, AffineParams{}), li.pixels);
}

TEST(Augment, HorizontalFlipExchangesColumns) {
  Image img(2, 2, 1);
  img.at(0, 0, 0) = 0.1f;
  img.at(0, 1, 0) = 0.2f;
  img.at(1, 0, 0) = 0.3f;
  img.at(1, 1, 0) = 0.4f;
  AffineParams flip;
  flip.flip = true;
  const auto out = apply_affine(img, flip);
  EXPECT_FLOAT_EQ(out.at(0, 0, 0), 0.2f);
  EXPECT_FLOAT_EQ(out.at(0, 1, 0), 0.1f);
  EXPECT_FLOAT_EQ(out.at(1, 0, 0), 0.4f);
  EXPECT_FLOAT_EQ(out.at(1, 1, 0), 0.3f);
}

TEST(Augment, RotationRoundTripOfDisk) {
  const auto disk = disk_image(72);
  for (double r : {5.0, 10.0, 15.0}) {
    AffineParams fwd, back;
    fwd.rotation_degrees = r;
    back.rotation_degrees = -r;
    const auto out = apply_affine(apply_affine(disk.pixels, fwd), back);
    double mad = 0.0;
    for (std::size_t i = 0; i < out.pixels.size(); ++i) mad += std::abs(out.pixels[i] - disk.pixels.pixels[i]);
    mad /= static_cast<double>(out.pixels.size());
    EXPECT_LT(mad, 0.02) << "rotation " << r;
  }
}

TEST(Augment, RandomTransformsKeepShapeRangeAndLabel) {
  LabeledImage li{gradient_image(20, 16, 3, 0.0), 3, "x"};
  AugmentSpec spec;
  spec.rotation_degrees = 30;
  spec.zoom_fraction = 0.3;
  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    const auto out = augment(li, spec, rng);
    EXPECT_EQ(out.label, 3);
    EXPECT_EQ(out.pixels.height, 20u);
    EXPECT_EQ(out.pixels.width, 16u);
    EXPECT_EQ(out.pixels.channels, 3u);
    for (float v : out.pixels.pixels) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
  }
}

TEST(Synthetic, CountsAndDeterminism) {
  const auto a = gen_synthetic(10, 4, 12, 12, 3, 7);
  EXPECT_EQ(a.size(), 40u);
  EXPECT_EQ(a.class_counts(), (std::vector<std::size_t>{10, 10, 10, 10}));
  const auto b = gen_synthetic(10, 4, 12, 12, 3, 7);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.samples[i].pixels, b.samples[i].pixels);
    EXPECT_EQ(a.samples[i].label, b.samples[i].label);
  }
  const auto c = gen_synthetic(10, 4, 12, 12, 3, 8);
  EXPECT_NE(a.samples[0].pixels, c.samples[0].pixels);
  for (const auto& s : a.samples)
    for (float v : s.pixels.pixels) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  EXPECT_THROW(gen_synthetic(0, 4, 12, 12, 3, 7), DataError);
}

TEST(Synthetic, NearestCentroidSeparatesClasses) {
  const auto data = gen_synthetic(100, 4, 72, 72, 3, 7);
  const std::size_t dim = 72 * 72 * 3;
  std::vector<std::vector<double>> centroid(4, std::vector<double>(dim, 0.0));
  for (const auto& s : data.samples)
    for (std::size_t i = 0; i < dim; ++i) centroid[static_cast<std::size_t>(s.label)][i] += s.pixels.pixels[i] / 100.0;
  std::size_t correct = 0;
  for (const auto& s : data.samples) {
    int best = -1;
    double best_d = 1e300;
    for (int k = 0; k < 4; ++k) {
      double d = 0.0;
      for (std::size_t i = 0; i < dim; ++i) {
        const double e = s.pixels.pixels[i] - centroid[static_cast<std::size_t>(k)][i];
        d += e * e;
      }
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    correct += best == s.label;
  }
  EXPECT_GT(static_cast<double>(correct) / 400.0, 0.6);
}

TEST(Batches, SizesOfLastPartialBatch) {
  const auto data = gen_synthetic(5, 2, 6, 6, 1, 1);
  BatchStream stream(data, 4);
  std::vector<std::size_t> sizes;
  Batch b;
  while (stream.next(b)) {
    sizes.push_back(b.labels.size());
    EXPECT_EQ(b.images.shape(), (Shape{b.labels.size(), 6, 6, 1}));
  }
  EXPECT_EQ(sizes, (std::vector<std::size_t>{4, 4, 2}));
  EXPECT_EQ(stream.batches_per_epoch(), 3u);
}

TEST(Batches, UnshuffledStreamKeepsOrder) {
  const auto data = gen_synthetic(5, 2, 6, 6, 1, 1);
  BatchStream stream(data, 3);
  std::vector<std::size_t> seen;
  Batch b;
  while (stream.next(b)) seen.insert(seen.end(), b.indices.begin(), b.indices.end());
  std::vector<std::size_t> expected(10);
  std::iota(expected.begin(), expected.end(), std::size_t{0});
  EXPECT_EQ(seen, expected);
}

TEST(Batches, EpochCoversLabelMultisetExactlyOnce) {
  const auto data = gen_synthetic(7, 3, 6, 6, 1, 2);
  AugmentSpec spec;
  BatchStream stream(data, 4, 99, spec);
  for (std::size_t epoch = 1; epoch <= 3; ++epoch) {
    stream.start_epoch(epoch);
    std::multiset<int> labels;
    std::set<std::size_t> indices;
    std::size_t total = 0;
    Batch b;
    while (stream.next(b)) {
      labels.insert(b.labels.begin(), b.labels.end());
      indices.insert(b.indices.begin(), b.indices.end());
      total += b.labels.size();
      for (std::size_t i = 0; i < b.labels.size(); ++i) EXPECT_EQ(b.labels[i], data.samples[b.indices[i]].label);
    }
    const auto all = data.labels();
    EXPECT_EQ(labels, std::multiset<int>(all.begin(), all.end()));
    EXPECT_EQ(indices.size(), data.size());
    EXPECT_EQ(total, data.size());
  }
}

TEST(Batches, ShuffleDependsOnlyOnSeedAndEpoch) {
  const auto data = gen_synthetic(8, 2, 6, 6, 1, 3);
  auto order = [&](std::uint64_t seed, std::size_t epoch) {
    BatchStream s(data, 5, seed);
    s.start_epoch(epoch);
    std::vector<std::size_t> out;
    Batch b;
    while (s.next(b)) out.insert(out.end(), b.indices.begin(), b.indices.end());
    return out;
  };
  EXPECT_EQ(order(1, 2), order(1, 2));
  EXPECT_NE(order(1, 2), order(1, 3));
  EXPECT_NE(order(1, 2), order(2, 2));
}

TEST(Batches, EmptyDatasetIsRejected) {
  Dataset empty;
  EXPECT_THROW(BatchStream(empty, 4), DataError);
}

}  // namespace
}  // namespace vitforge
