#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <memory>
#include <string>

#include "vitforge/image.hpp"

#ifdef VITFORGE_HAVE_PNG
#include <png.h>
#endif
#ifdef VITFORGE_HAVE_JPEG
#include <jpeglib.h>
#include <csetjmp>
#endif

namespace vitforge {

namespace {

std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageDecodeError(fmt::format("cannot open image {}", path.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Netpbm header/ASCII token reader that skips whitespace and # comments.
class PnmCursor {
 public:
  PnmCursor(const std::vector<unsigned char>& bytes, const std::filesystem::path& path)
      : bytes_(bytes), path_(path) {}

  unsigned long next_number() {
    skip_space();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) fail("expected a number");
    unsigned long v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_++] - '0');
      if (v > (1UL << 24)) fail("value out of range");
    }
    return v;
  }

  // Binary rasters start after exactly one whitespace byte following maxval.
  void skip_single_whitespace() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) fail("missing raster separator");
    ++pos_;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  [[noreturn]] void fail(const char* what) const {
    throw ImageDecodeError(fmt::format("malformed netpbm file {}: {}", path_.string(), what));
  }

 private:
  void skip_space() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<unsigned char>& bytes_;
  const std::filesystem::path& path_;
  std::size_t pos_ = 0;
};

Image read_pnm(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  if (bytes.size() < 2 || bytes[0] != 'P') {
    throw ImageDecodeError(fmt::format("{} is not a netpbm image", path.string()));
  }
  const char kind = static_cast<char>(bytes[1]);
  if (kind != '2' && kind != '3' && kind != '5' && kind != '6') {
    throw ImageDecodeError(fmt::format("unsupported netpbm variant P{} in {}", kind, path.string()));
  }
  std::vector<unsigned char> body(bytes.begin() + 2, bytes.end());
  PnmCursor c(body, path);
  const auto width = c.next_number();
  const auto height = c.next_number();
  const auto maxval = c.next_number();
  if (width == 0 || height == 0 || maxval == 0 || maxval > 65535) c.fail("bad header");
  const std::size_t channels = (kind == '3' || kind == '6') ? 3 : 1;
  Image img(height, width, channels);
  const std::size_t count = img.pixels.size();
  const double to_255 = 255.0 / static_cast<double>(maxval);
  if (kind == '2' || kind == '3') {
    for (std::size_t i = 0; i < count; ++i) {
      const auto v = c.next_number();
      if (v > maxval) c.fail("sample exceeds maxval");
      img.pixels[i] = static_cast<float>(static_cast<double>(v) * to_255);
    }
  } else {
    c.skip_single_whitespace();
    const std::size_t bps = maxval > 255 ? 2 : 1;
    if (c.remaining() < count * bps) c.fail("truncated raster");
    const unsigned char* raster = body.data() + c.pos();
    for (std::size_t i = 0; i < count; ++i) {
      const unsigned v = bps == 1 ? raster[i] : (unsigned{raster[2 * i]} << 8) | raster[2 * i + 1];
      if (v > maxval) c.fail("sample exceeds maxval");
      img.pixels[i] = maxval == 255 ? static_cast<float>(v) : static_cast<float>(v * to_255);
    }
  }
  return img;
}

#ifdef VITFORGE_HAVE_PNG
Image read_png(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    throw ImageDecodeError(fmt::format("cannot decode PNG {}: {}", path.string(), png.message));
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw ImageDecodeError(fmt::format("cannot decode PNG {}: {}", path.string(), msg));
  }
  Image img(png.height, png.width, 3);
  std::transform(buffer.begin(), buffer.end(), img.pixels.begin(), [](unsigned char v) { return float(v); });
  return img;
}
#endif

#ifdef VITFORGE_HAVE_JPEG
struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

extern "C" void jpeg_error_exit_cb(j_common_ptr info) {
  auto* err = reinterpret_cast<JpegErrorManager*>(info->err);
  (*info->err->format_message)(info, err->message);
  std::longjmp(err->jump, 1);
}

Image read_jpeg(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit_cb;
  std::vector<unsigned char> buffer;
  std::size_t width = 0;
  std::size_t height = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw ImageDecodeError(fmt::format("cannot decode JPEG {}: {}", path.string(), err.message));
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  width = cinfo.output_width;
  height = cinfo.output_height;
  buffer.resize(width * height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    unsigned char* row = buffer.data() + static_cast<std::size_t>(cinfo.output_scanline) * width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  Image img(height, width, 3);
  std::transform(buffer.begin(), buffer.end(), img.pixels.begin(), [](unsigned char v) { return float(v); });
  return img;
}
#endif

}  // namespace

bool is_supported_image(const std::filesystem::path& path) {
  const auto ext = lower_extension(path);
  if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") return true;
#ifdef VITFORGE_HAVE_PNG
  if (ext == ".png") return true;
#endif
#ifdef VITFORGE_HAVE_JPEG
  if (ext == ".jpg" || ext == ".jpeg") return true;
#endif
  return false;
}

Image read_image(const std::filesystem::path& path) {
  const auto ext = lower_extension(path);
  if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") return read_pnm(path);
#ifdef VITFORGE_HAVE_PNG
  if (ext == ".png") return read_png(path);
#endif
#ifdef VITFORGE_HAVE_JPEG
  if (ext == ".jpg" || ext == ".jpeg") return read_jpeg(path);
#endif
  throw ImageDecodeError(fmt::format("unsupported image format: {}", path.string()));
}

void write_pnm(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw std::invalid_argument(fmt::format("cannot write {}-channel image as netpbm", image.channels));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  out << (image.channels == 3 ? "P6" : "P5") << '\n' << image.width << ' ' << image.height << "\n255\n";
  std::vector<char> raster(image.pixels.size());
  for (std::size_t i = 0; i < raster.size(); ++i) {
    const float v = std::clamp(image.pixels[i], 0.0f, 1.0f);
    raster[i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f)));
  }
  out.write(raster.data(), static_cast<std::streamsize>(raster.size()));
  if (!out) throw std::runtime_error(fmt::format("short write to {}", path.string()));
}

}  // namespace vitforge
