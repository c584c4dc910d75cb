#include "vitforge/dataset.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

namespace vitforge {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

ClassMap::ClassMap(std::vector<std::string> names) : names_(std::move(names)) {
  std::set<std::string> seen;
  for (const auto& n : names_) {
    if (n.empty()) throw DataError("class names must be non-empty");
    if (!seen.insert(n).second) throw DataError(fmt::format("duplicate class name '{}'", n));
  }
}

ClassMap ClassMap::gastrointestinal() {
  return ClassMap({"normal", "ulcerative_colitis", "polyps", "esophagitis"});
}

ClassMap ClassMap::parse(const std::string& text) {
  std::istringstream in(text);
  std::map<int, std::string> by_id;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError(fmt::format("class map line {}: expected name=id", line_no));
    const std::string name = trim(line.substr(0, eq));
    const std::string id_text = trim(line.substr(eq + 1));
    int id = -1;
    try {
      std::size_t used = 0;
      id = std::stoi(id_text, &used);
      if (used != id_text.size()) throw std::invalid_argument(id_text);
    } catch (const std::exception&) {
      throw DataError(fmt::format("class map line {}: '{}' is not an integer id", line_no, id_text));
    }
    if (id < 0 || !by_id.emplace(id, name).second) {
      throw DataError(fmt::format("class map line {}: id {} repeated or negative", line_no, id));
    }
  }
  std::vector<std::string> names;
  for (const auto& [id, name] : by_id) {
    if (id != static_cast<int>(names.size())) throw DataError(fmt::format("class map ids skip {}", names.size()));
    names.push_back(name);
  }
  if (names.empty()) throw DataError("class map is empty");
  return ClassMap(std::move(names));
}

ClassMap ClassMap::load(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError(fmt::format("cannot read class map {}", file.string()));
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::string ClassMap::to_text() const {
  std::string out;
  for (std::size_t i = 0; i < names_.size(); ++i) out += fmt::format("{}={}\n", names_[i], i);
  return out;
}

std::optional<int> ClassMap::id(const std::string& name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return static_cast<int>(it - names_.begin());
}

std::vector<int> Dataset::labels() const {
  std::vector<int> out(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) out[i] = samples[i].label;
  return out;
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(classes.size(), 0);
  for (const auto& s : samples) ++counts.at(static_cast<std::size_t>(s.label));
  return counts;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.classes = classes;
  out.samples.reserve(indices.size());
  for (auto i : indices) out.samples.push_back(samples.at(i));
  return out;
}

ClassMap discover_classes(const fs::path& root) {
  if (fs::exists(root / "classes.txt")) return ClassMap::load(root / "classes.txt");
  if (!fs::is_directory(root)) throw DataError(fmt::format("dataset root {} is not a directory", root.string()));
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && entry.path().filename().string().front() != '.') {
      names.push_back(entry.path().filename().string());
    }
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) throw DataError(fmt::format("dataset root {} has no class directories", root.string()));
  return ClassMap(std::move(names));
}

Image prepare_image(const Image& raw, std::size_t height, std::size_t width, std::size_t channels) {
  Image img = resize_bilinear(convert_channels(raw, channels), height, width);
  for (auto& v : img.pixels) v = std::clamp(v / 255.0f, 0.0f, 1.0f);
  return img;
}

namespace {

LabeledImage load_one(const fs::path& root, const std::string& rel, int label, std::size_t height, std::size_t width,
                      std::size_t channels) {
  Image raw;
  try {
    raw = read_image(root / rel);
  } catch (const ImageDecodeError& e) {
    throw DataError(fmt::format("cannot decode {}: {}", (root / rel).string(), e.what()));
  }
  return {prepare_image(raw, height, width, channels), label, rel};
}

int label_of(const std::string& rel, const ClassMap& classes) {
  const auto slash = rel.find('/');
  const std::string dir = slash == std::string::npos ? std::string() : rel.substr(0, slash);
  const auto id = classes.id(dir);
  if (!id) throw DataError(fmt::format("path '{}' is not inside a known class directory", rel));
  return *id;
}

}  // namespace

Dataset load_dataset(const fs::path& root, const ClassMap& classes_in, std::size_t height, std::size_t width,
                     std::size_t channels) {
  if (!fs::is_directory(root)) throw DataError(fmt::format("dataset root {} is not a directory", root.string()));
  const ClassMap classes = classes_in.empty() ? discover_classes(root) : classes_in;

  std::vector<std::string> unknown;
  std::vector<std::string> rel_paths;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    const std::string dir = entry.path().filename().string();
    if (dir.front() == '.') continue;
    if (!classes.id(dir)) {
      unknown.push_back(dir);
      continue;
    }
    for (const auto& file : fs::directory_iterator(entry.path())) {
      const std::string name = file.path().filename().string();
      if (!file.is_regular_file() || name.front() == '.') continue;
      rel_paths.push_back(dir + "/" + name);
    }
  }
  if (!unknown.empty()) {
    std::sort(unknown.begin(), unknown.end());
    throw DataError(fmt::format("unknown class directories under {}: {}", root.string(), fmt::join(unknown, ", ")));
  }
  std::sort(rel_paths.begin(), rel_paths.end());

  Dataset out = load_indexed(root, rel_paths, classes, height, width, channels);
  const auto counts = out.class_counts();
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) throw DataError(fmt::format("class '{}' has no images under {}", classes.names()[c], root.string()));
  }
  return out;
}

Dataset load_indexed(const fs::path& root, std::span<const std::string> relative_paths, const ClassMap& classes,
                     std::size_t height, std::size_t width, std::size_t channels) {
  Dataset out;
  out.classes = classes;
  out.samples.reserve(relative_paths.size());
  for (const auto& rel : relative_paths) {
    out.samples.push_back(load_one(root, rel, label_of(rel, classes), height, width, channels));
  }
  return out;
}

std::vector<std::string> read_index_file(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError(fmt::format("cannot read index file {}", file.string()));
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

void write_index_file(const fs::path& file, std::span<const std::string> relative_paths) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write index file {}", file.string()));
  for (const auto& p : relative_paths) out << p << '\n';
}

namespace {

std::size_t round_count(std::size_t n, double fraction) {
  return static_cast<std::size_t>(std::llround(static_cast<double>(n) * fraction));
}

// Distributes `total` across groups proportionally to `sizes` by largest
// remainder; ties go to the lower group index.
std::vector<std::size_t> apportion(const std::vector<std::size_t>& sizes, std::size_t total) {
  const std::size_t n = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  std::vector<std::size_t> out(sizes.size(), 0);
  if (n == 0) return out;
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t g = 0; g < sizes.size(); ++g) {
    const double quota = static_cast<double>(sizes[g]) * static_cast<double>(total) / static_cast<double>(n);
    out[g] = static_cast<std::size_t>(std::floor(quota));
    assigned += out[g];
    remainders.emplace_back(quota - std::floor(quota), g);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total && i < remainders.size(); ++i) {
    const std::size_t g = remainders[i].second;
    if (out[g] < sizes[g]) {
      ++out[g];
      ++assigned;
    }
  }
  return out;
}

void check_fraction(double f, const char* name) {
  if (!(f > 0.0 && f < 1.0)) throw DataError(fmt::format("{} must lie in (0, 1), got {}", name, f));
}

SplitIndices split_impl(std::span<const int> labels, std::size_t num_classes, const SplitSpec& spec,
                        const ClassMap* names) {
  check_fraction(spec.test_fraction, "test_fraction");
  check_fraction(spec.validation_fraction, "validation_fraction");
  const std::size_t n = labels.size();
  SplitIndices out;

  if (!spec.stratified) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = Rng::derive(spec.seed, {0x5e11});
    rng.shuffle(std::span<std::size_t>(order));
    const std::size_t n_test = round_count(n, spec.test_fraction);
    const std::size_t n_val = round_count(n - n_test, spec.validation_fraction);
    out.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
    out.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test),
                          order.begin() + static_cast<std::ptrdiff_t>(n_test + n_val));
    out.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test + n_val), order.end());
    return out;
  }

  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw DataError(fmt::format("label {} at index {} outside [0, {})", labels[i], i, num_classes));
    }
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  const double min_fraction = std::min(spec.test_fraction, spec.validation_fraction);
  const auto min_per_class = static_cast<std::size_t>(std::ceil(1.0 / min_fraction - 1e-9));
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (by_class[c].size() < min_per_class) {
      const std::string who = names ? fmt::format("'{}'", names->names()[c]) : fmt::format("{}", c);
      throw DataError(fmt::format("class {} has {} samples; stratified splitting needs at least {}", who,
                                  by_class[c].size(), min_per_class));
    }
    Rng rng = Rng::derive(spec.seed, {0x5e12, c});
    rng.shuffle(std::span<std::size_t>(by_class[c]));
  }

  std::vector<std::size_t> sizes(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) sizes[c] = by_class[c].size();
  const auto test_counts = apportion(sizes, round_count(n, spec.test_fraction));
  std::vector<std::size_t> remaining(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) remaining[c] = sizes[c] - test_counts[c];
  const std::size_t n_rest = n - std::accumulate(test_counts.begin(), test_counts.end(), std::size_t{0});
  const auto val_counts = apportion(remaining, round_count(n_rest, spec.validation_fraction));

  for (std::size_t c = 0; c < num_classes; ++c) {
    const auto& idx = by_class[c];
    const auto t = static_cast<std::ptrdiff_t>(test_counts[c]);
    const auto v = static_cast<std::ptrdiff_t>(val_counts[c]);
    out.test.insert(out.test.end(), idx.begin(), idx.begin() + t);
    out.validation.insert(out.validation.end(), idx.begin() + t, idx.begin() + t + v);
    out.train.insert(out.train.end(), idx.begin() + t + v, idx.end());
  }
  Rng mix = Rng::derive(spec.seed, {0x5e13});
  mix.shuffle(std::span<std::size_t>(out.train));
  mix.shuffle(std::span<std::size_t>(out.validation));
  mix.shuffle(std::span<std::size_t>(out.test));
  return out;
}

}  // namespace

SplitIndices split(std::span<const int> labels, std::size_t num_classes, const SplitSpec& spec) {
  return split_impl(labels, num_classes, spec, nullptr);
}

SplitIndices split(const Dataset& data, const SplitSpec& spec) {
  const auto labels = data.labels();
  return split_impl(labels, data.classes.size(), spec, &data.classes);
}

ClassMap synthetic_classes(std::size_t num_classes) {
  std::vector<std::string> names;
  for (std::size_t k = 0; k < num_classes; ++k) {
    names.push_back(fmt::format("stripes_{:03}", static_cast<int>(std::lround(180.0 * k / num_classes))));
  }
  return ClassMap(std::move(names));
}

Dataset gen_synthetic(std::size_t n_per_class, std::size_t num_classes, std::size_t height, std::size_t width,
                      std::size_t channels, std::uint64_t seed) {
  if (n_per_class == 0 || num_classes == 0) throw DataError("synthetic dataset needs at least one sample per class");
  Dataset out;
  out.classes = synthetic_classes(num_classes);
  const auto& names = out.classes.names();

  // Fixed per-class tint so class means differ as well as textures.
  std::vector<std::vector<double>> tint(num_classes, std::vector<double>(channels));
  {
    Rng tint_rng = Rng::derive(seed, {0x7157});
    for (auto& t : tint)
      for (auto& v : t) v = tint_rng.uniform(-0.08, 0.08);
  }

  for (std::size_t k = 0; k < num_classes; ++k) {
    const double theta = std::numbers::pi * static_cast<double>(k) / static_cast<double>(num_classes);
    for (std::size_t i = 0; i < n_per_class; ++i) {
      Rng rng = Rng::derive(seed, {k, i});
      const double freq = rng.uniform(1.0 / 12.0, 1.0 / 5.0);
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double contrast = rng.uniform(0.15, 0.3);
      const double jitter = rng.uniform(-0.1, 0.1);  // radians
      const double cj = std::cos(theta + jitter);
      const double sj = std::sin(theta + jitter);
      Image img(height, width, channels);
      for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
          const double u = static_cast<double>(x) * cj + static_cast<double>(y) * sj;
          const double wave = contrast * std::sin(2.0 * std::numbers::pi * freq * u + phase);
          for (std::size_t c = 0; c < channels; ++c) {
            const double v = 0.5 + wave + tint[k][c] + 0.08 * rng.normal();
            img.at(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
          }
        }
      }
      out.samples.push_back({std::move(img), static_cast<int>(k), fmt::format("{}/{:05}.ppm", names[k], i)});
    }
  }
  return out;
}

Tensor<float> stack_images(std::span<const Image* const> images) {
  if (images.empty()) throw DimensionError("cannot stack zero images");
  const Image& first = *images[0];
  const std::size_t per = first.pixels.size();
  std::vector<float> data(per * images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& im = *images[i];
    if (im.height != first.height || im.width != first.width || im.channels != first.channels) {
      throw DimensionError(fmt::format("image {} is {}x{}x{}, expected {}x{}x{}", i, im.height, im.width, im.channels,
                                       first.height, first.width, first.channels));
    }
    std::copy(im.pixels.begin(), im.pixels.end(), data.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return Tensor<float>({images.size(), first.height, first.width, first.channels}, std::move(data));
}

BatchStream::BatchStream(const Dataset& data, std::size_t batch_size, std::optional<std::uint64_t> shuffle_seed,
                         std::optional<AugmentSpec> augmentation)
    : data_(data), batch_size_(batch_size), shuffle_seed_(shuffle_seed), augmentation_(std::move(augmentation)) {
  if (batch_size_ == 0) throw DataError("batch size must be at least 1");
  if (data_.samples.empty()) throw DataError("cannot batch an empty dataset");
  start_epoch(0);
}

void BatchStream::start_epoch(std::size_t epoch) {
  epoch_ = epoch;
  cursor_ = 0;
  order_.resize(data_.samples.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (shuffle_seed_) {
    Rng rng = Rng::derive(*shuffle_seed_, {0xba7c, epoch});
    rng.shuffle(std::span<std::size_t>(order_));
  }
}

bool BatchStream::next(Batch& batch) {
  if (cursor_ >= order_.size()) return false;
  const std::size_t count = std::min(batch_size_, order_.size() - cursor_);
  batch.labels.resize(count);
  batch.indices.assign(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                       order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + count));
  std::vector<LabeledImage> augmented;
  std::vector<const Image*> ptrs(count);
  if (augmentation_ && !augmentation_->is_identity()) augmented.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t idx = batch.indices[i];
    const LabeledImage& sample = data_.samples[idx];
    batch.labels[i] = sample.label;
    if (augmentation_ && !augmentation_->is_identity()) {
      Rng rng = Rng::derive(augmentation_->seed, {0xa06, epoch_, idx});
      augmented.push_back(augment(sample, *augmentation_, rng));
      ptrs[i] = &augmented.back().pixels;
    } else {
      ptrs[i] = &sample.pixels;
    }
  }
  batch.images = stack_images(ptrs);
  cursor_ += count;
  return true;
}

std::size_t BatchStream::batches_per_epoch() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

}  // namespace vitforge
