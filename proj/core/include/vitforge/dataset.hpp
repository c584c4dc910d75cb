#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vitforge/image.hpp"
#include "vitforge/rng.hpp"
#include "vitforge/tensor.hpp"

namespace vitforge {

/// Raised for malformed dataset trees, class maps, and split requests.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ordered class names; a name's position is its integer label.
class ClassMap {
 public:
  ClassMap() = default;
  explicit ClassMap(std::vector<std::string> names);

  /// normal=0, ulcerative_colitis=1, polyps=2, esophagitis=3.
  static ClassMap gastrointestinal();

  /// Parses `name=id` lines (blank lines and # comments ignored). Ids must
  /// cover 0..K-1 exactly once.
  static ClassMap parse(const std::string& text);
  static ClassMap load(const std::filesystem::path& file);
  std::string to_text() const;

  std::size_t size() const { return names_.size(); }
  bool empty() const { return names_.empty(); }
  const std::string& name(int id) const { return names_.at(static_cast<std::size_t>(id)); }
  std::optional<int> id(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }

  friend bool operator==(const ClassMap&, const ClassMap&) = default;

 private:
  std::vector<std::string> names_;
};

struct LabeledImage {
  Image pixels;  // values in [0, 1]
  int label = 0;
  std::string source_path;  // relative to the dataset root, when known
};

struct Dataset {
  ClassMap classes;
  std::vector<LabeledImage> samples;

  std::size_t size() const { return samples.size(); }
  std::vector<int> labels() const;
  std::vector<std::size_t> class_counts() const;
  /// Copies the samples at `indices`, in that order.
  Dataset subset(std::span<const std::size_t> indices) const;
};

/// Channel conversion, bilinear resize, then division by 255 (clamped to
/// [0, 1]) of a decoded 0..255 image.
Image prepare_image(const Image& raw, std::size_t height, std::size_t width, std::size_t channels);

/// Loads `root/<class_name>/<image>` trees, resizing each image bilinearly to
/// height x width and scaling by 1/255. Paths are visited in sorted order.
Dataset load_dataset(const std::filesystem::path& root, const ClassMap& classes, std::size_t height,
                     std::size_t width, std::size_t channels = 3);

/// Loads only the listed `<class_name>/<file>` paths, in list order.
Dataset load_indexed(const std::filesystem::path& root, std::span<const std::string> relative_paths,
                     const ClassMap& classes, std::size_t height, std::size_t width, std::size_t channels = 3);

/// Reads `root/classes.txt` when present, otherwise the sorted subdirectory names.
ClassMap discover_classes(const std::filesystem::path& root);

/// Index files hold one relative path per line.
std::vector<std::string> read_index_file(const std::filesystem::path& file);
void write_index_file(const std::filesystem::path& file, std::span<const std::string> relative_paths);

struct SplitSpec {
  double test_fraction = 0.2;
  double validation_fraction = 0.1;  // of the post-test training portion
  std::uint64_t seed = 0;
  bool stratified = true;

  friend bool operator==(const SplitSpec&, const SplitSpec&) = default;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

/// Test split first, then validation out of the remainder. Totals are
/// round(n * fraction); stratified splits distribute them over classes by
/// largest remainder so each class lands within one sample of its share.
SplitIndices split(std::span<const int> labels, std::size_t num_classes, const SplitSpec& spec);
/// Same, with class names in error messages.
SplitIndices split(const Dataset& data, const SplitSpec& spec);

struct AugmentSpec {
  bool horizontal_flip = true;
  double rotation_degrees = 15.0;
  double zoom_fraction = 0.1;
  double width_shift_fraction = 0.1;
  double height_shift_fraction = 0.1;
  std::uint64_t seed = 0;

  static AugmentSpec none() { return {false, 0.0, 0.0, 0.0, 0.0, 0}; }
  bool is_identity() const;
  friend bool operator==(const AugmentSpec&, const AugmentSpec&) = default;
};

/// One concrete geometric transform.
struct AffineParams {
  bool flip = false;
  double rotation_degrees = 0.0;
  double zoom = 1.0;
  double shift_x = 0.0;  // pixels
  double shift_y = 0.0;
};

/// Inverse-maps every output pixel through the transform about the image
/// centre, sampling bilinearly with nearest-edge fill; clamps to [0, 1].
Image apply_affine(const Image& image, const AffineParams& params);

AffineParams sample_affine(const AugmentSpec& spec, std::size_t height, std::size_t width, Rng& rng);

/// Random transform drawn from `spec`. Bit-identical copy when `spec` is
/// the identity.
LabeledImage augment(const LabeledImage& image, const AugmentSpec& spec, Rng& rng);

/// Names of the synthetic classes: stripes_<orientation in degrees>.
ClassMap synthetic_classes(std::size_t num_classes);

/// K oriented-stripe texture classes with class-specific tint and noise.
Dataset gen_synthetic(std::size_t n_per_class, std::size_t num_classes, std::size_t height, std::size_t width,
                      std::size_t channels, std::uint64_t seed);

struct Batch {
  Tensor<float> images;  // [B, H, W, C]
  std::vector<int> labels;
  std::vector<std::size_t> indices;  // positions in the source dataset
};

/// Per-epoch batch stream. Each epoch visits every sample once; the last
/// batch may be short. Shuffling and augmentation depend only on
/// (seed, epoch, position).
class BatchStream {
 public:
  BatchStream(const Dataset& data, std::size_t batch_size, std::optional<std::uint64_t> shuffle_seed = std::nullopt,
              std::optional<AugmentSpec> augmentation = std::nullopt);

  void start_epoch(std::size_t epoch);
  bool next(Batch& batch);
  std::size_t batches_per_epoch() const;

 private:
  const Dataset& data_;
  std::size_t batch_size_;
  std::optional<std::uint64_t> shuffle_seed_;
  std::optional<AugmentSpec> augmentation_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
};

/// Stacks images of identical shape into a [B, H, W, C] tensor.
Tensor<float> stack_images(std::span<const Image* const> images);

}  // namespace vitforge
