#include "vitforge/checkpoint.hpp"

#include <fmt/format.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <string_view>

namespace vitforge {

namespace {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }

void put_u16(std::string& out, std::uint16_t v) {
  for (int i = 0; i < 2; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  const char* take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw TruncatedCheckpointError(fmt::format("checkpoint truncated while reading {} at byte {} ({} of {} bytes left)",
                                                 what, pos_, bytes_.size() - pos_, n));
    }
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::uint64_t uint(std::size_t width, const char* what) {
    const auto* p = reinterpret_cast<const unsigned char*>(take(width, what));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const CheckpointTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::size_t bytes = 16 + ckpt.config_text.size();
  for (const auto& t : ckpt.tensors) bytes += 3 + t.name.size() + 4 * t.shape.size() + 4 * t.data.size();
  std::string out;
  out.reserve(bytes);
  out += "VITF";
  put_u32(out, kCheckpointVersion);
  if (ckpt.config_text.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw CheckpointError("configuration text too large for a checkpoint");
  }
  put_u32(out, static_cast<std::uint32_t>(ckpt.config_text.size()));
  out += ckpt.config_text;
  put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    if (t.name.empty() || t.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw CheckpointError(fmt::format("tensor name of length {} cannot be stored", t.name.size()));
    }
    if (t.shape.size() > std::numeric_limits<std::uint8_t>::max()) {
      throw CheckpointError(fmt::format("tensor '{}' has rank {}", t.name, t.shape.size()));
    }
    if (numel(t.shape) != t.data.size()) {
      throw CheckpointError(fmt::format("tensor '{}' of shape {} holds {} values", t.name, to_string(t.shape),
                                        t.data.size()));
    }
    put_u16(out, static_cast<std::uint16_t>(t.name.size()));
    out += t.name;
    put_u8(out, static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) {
      if (d > std::numeric_limits<std::uint32_t>::max()) throw CheckpointError("dimension exceeds 32 bits");
      put_u32(out, static_cast<std::uint32_t>(d));
    }
    for (float v : t.data) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (bytes.size() < 4 && std::string_view("VITF").starts_with(bytes)) {
    throw TruncatedCheckpointError(fmt::format("checkpoint truncated inside the magic bytes ({} of 4)", bytes.size()));
  }
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "VITF", 4) != 0) {
    throw BadMagicError("not a VITF checkpoint (bad magic bytes)");
  }
  in.take(4, "magic");
  const auto version = static_cast<std::uint32_t>(in.uint(4, "version"));
  if (version != kCheckpointVersion) {
    throw VersionMismatchError(
        fmt::format("checkpoint format version {} is not supported (expected {})", version, kCheckpointVersion));
  }
  Checkpoint ckpt;
  const auto config_len = in.uint(4, "config length");
  const char* config = in.take(config_len, "config text");
  ckpt.config_text.assign(config, config_len);
  const auto count = in.uint(4, "tensor count");
  std::set<std::string> seen;
  for (std::uint64_t k = 0; k < count; ++k) {
    CheckpointTensor t;
    const auto name_len = in.uint(2, "tensor name length");
    if (name_len == 0) throw MalformedCheckpointError(fmt::format("tensor {} has an empty name", k));
    const char* name = in.take(name_len, "tensor name");
    t.name.assign(name, name_len);
    if (!seen.insert(t.name).second) throw MalformedCheckpointError(fmt::format("duplicate tensor '{}'", t.name));
    const auto rank = in.uint(1, "tensor rank");
    std::uint64_t count_values = 1;
    for (std::uint64_t r = 0; r < rank; ++r) {
      const auto d = in.uint(4, "tensor dimension");
      t.shape.push_back(static_cast<std::size_t>(d));
      count_values *= d;
      if (count_values > bytes.size()) {
        throw TruncatedCheckpointError(
            fmt::format("tensor '{}' declares more values than the file can hold", t.name));
      }
    }
    const char* data = in.take(4 * count_values, "tensor data");
    t.data.resize(count_values);
    for (std::uint64_t i = 0; i < count_values; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[4 * i + b])) << (8 * b);
      t.data[i] = std::bit_cast<float>(bits);
    }
    ckpt.tensors.push_back(std::move(t));
  }
  if (in.remaining() != 0) {
    throw MalformedCheckpointError(fmt::format("{} unexpected bytes after the last tensor", in.remaining()));
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = encode_checkpoint(ckpt);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(fmt::format("cannot write {}", tmp.string()));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError(fmt::format("failed writing {}", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(fmt::format("cannot read checkpoint {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return decode_checkpoint(ss.str());
  } catch (const BadMagicError& e) {
    throw BadMagicError(fmt::format("{}: {}", path.string(), e.what()));
  } catch (const VersionMismatchError& e) {
    throw VersionMismatchError(fmt::format("{}: {}", path.string(), e.what()));
  } catch (const TruncatedCheckpointError& e) {
    throw TruncatedCheckpointError(fmt::format("{}: {}", path.string(), e.what()));
  } catch (const MalformedCheckpointError& e) {
    throw MalformedCheckpointError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

void check_tensors(const Checkpoint& ckpt, const std::vector<ExpectedTensor>& expected, bool allow_extra) {
  std::set<std::string> names;
  for (const auto& e : expected) {
    names.insert(e.name);
    const auto* t = ckpt.find(e.name);
    if (t == nullptr) throw ShapeMismatchError(fmt::format("checkpoint lacks tensor '{}'", e.name));
    if (t->shape != e.shape) {
      throw ShapeMismatchError(fmt::format("tensor '{}' has shape {} but the configuration needs {}", e.name,
                                           to_string(t->shape), to_string(e.shape)));
    }
  }
  if (!allow_extra) {
    for (const auto& t : ckpt.tensors) {
      if (!names.contains(t.name)) throw ShapeMismatchError(fmt::format("unexpected tensor '{}'", t.name));
    }
  }
}

}  // namespace vitforge
