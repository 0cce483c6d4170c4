#include "tdrl/core/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tdrl {

const char* dtype_name(DType t) {
  switch (t) {
    case DType::F32: return "f32";
    case DType::I32: return "i32";
    case DType::U8: return "u8";
  }
  return "?";
}

namespace {

DType parse_dtype(const std::string& s) {
  if (s == "f32") return DType::F32;
  if (s == "i32") return DType::I32;
  if (s == "u8") return DType::U8;
  throw std::runtime_error("archive: unknown dtype '" + s + "'");
}

std::size_t dtype_size(DType t) { return t == DType::U8 ? 1 : 4; }

void put_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

std::uint32_t get_u32_le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

bool valid_token(const std::string& s) {
  return !s.empty() && s.find_first_of(" \n\r=\t") == std::string::npos;
}

}  // namespace

void Archive::set(const std::string& key, const std::string& value) {
  if (!valid_token(key) || value.find('\n') != std::string::npos) {
    throw ContractError("archive: invalid metadata entry '" + key + "'");
  }
  meta_[key] = value;
}

const std::string& Archive::get(const std::string& key) const {
  auto it = meta_.find(key);
  if (it == meta_.end()) throw std::runtime_error("archive: missing metadata key '" + key + "'");
  return it->second;
}

void Archive::add_f32(const std::string& name, const Tensorf& t) {
  if (!valid_token(name)) throw ContractError("archive: invalid buffer name");
  Buffer b{name, DType::F32, t.rows(), t.cols(), {}};
  b.bytes.reserve(static_cast<std::size_t>(t.size()) * 4);
  for (Eigen::Index i = 0; i < t.size(); ++i) put_u32_le(b.bytes, std::bit_cast<std::uint32_t>(t.data()[i]));
  buffers_.push_back(std::move(b));
}

void Archive::add_i32(const std::string& name, std::span<const std::int32_t> values) {
  if (!valid_token(name)) throw ContractError("archive: invalid buffer name");
  Buffer b{name, DType::I32, static_cast<std::int64_t>(values.size()), 1, {}};
  for (auto v : values) put_u32_le(b.bytes, static_cast<std::uint32_t>(v));
  buffers_.push_back(std::move(b));
}

void Archive::add_u8(const std::string& name, std::span<const std::uint8_t> values) {
  if (!valid_token(name)) throw ContractError("archive: invalid buffer name");
  Buffer b{name, DType::U8, static_cast<std::int64_t>(values.size()), 1, {}};
  b.bytes.assign(values.begin(), values.end());
  buffers_.push_back(std::move(b));
}

const Archive::Buffer& Archive::find(const std::string& name, DType dtype) const {
  for (const auto& b : buffers_) {
    if (b.name == name) {
      if (b.dtype != dtype) {
        throw std::runtime_error("archive: buffer '" + name + "' has dtype " + dtype_name(b.dtype));
      }
      return b;
    }
  }
  throw std::runtime_error("archive: missing buffer '" + name + "'");
}

Tensorf Archive::f32(const std::string& name) const {
  const Buffer& b = find(name, DType::F32);
  Tensorf t(b.rows, b.cols);
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    t.data()[i] = std::bit_cast<float>(get_u32_le(b.bytes.data() + 4 * i));
  }
  return t;
}

std::vector<std::int32_t> Archive::i32(const std::string& name) const {
  const Buffer& b = find(name, DType::I32);
  std::vector<std::int32_t> out(static_cast<std::size_t>(b.rows * b.cols));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<std::int32_t>(get_u32_le(b.bytes.data() + 4 * i));
  }
  return out;
}

std::vector<std::uint8_t> Archive::u8(const std::string& name) const {
  return find(name, DType::U8).bytes;
}

void Archive::save(const std::filesystem::path& path) const {
  std::ostringstream header;
  header << "TDRL " << kind_ << ' ' << version_ << '\n';
  for (const auto& [k, v] : meta_) header << k << '=' << v << '\n';
  for (const auto& b : buffers_) {
    header << "buffer " << b.name << ' ' << dtype_name(b.dtype) << ' ' << b.rows << ' ' << b.cols << '\n';
  }
  header << "end\n";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("archive: cannot write " + path.string());
  const std::string h = header.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& b : buffers_) {
    out.write(reinterpret_cast<const char*>(b.bytes.data()), static_cast<std::streamsize>(b.bytes.size()));
  }
  if (!out) throw std::runtime_error("archive: write failed for " + path.string());
}

Archive Archive::load(const std::filesystem::path& path, const std::string& expected_kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("archive: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("archive: empty file " + path.string());
  std::istringstream first(line);
  std::string magic, kind;
  int version = 0;
  first >> magic >> kind >> version;
  if (magic != "TDRL") throw std::runtime_error("archive: bad magic in " + path.string());
  if (kind != expected_kind) {
    throw std::runtime_error("archive: expected kind '" + expected_kind + "', found '" + kind + "'");
  }
  Archive a(kind, version);
  while (std::getline(in, line)) {
    if (line == "end") break;
    if (line.rfind("buffer ", 0) == 0) {
      std::istringstream ls(line.substr(7));
      Buffer b;
      std::string dt;
      ls >> b.name >> dt >> b.rows >> b.cols;
      if (!ls) throw std::runtime_error("archive: malformed buffer line '" + line + "'");
      b.dtype = parse_dtype(dt);
      a.buffers_.push_back(std::move(b));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("archive: malformed header line '" + line + "'");
    a.meta_[line.substr(0, eq)] = line.substr(eq + 1);
  }
  if (line != "end") throw std::runtime_error("archive: truncated header in " + path.string());
  for (auto& b : a.buffers_) {
    b.bytes.resize(static_cast<std::size_t>(b.rows * b.cols) * dtype_size(b.dtype));
    in.read(reinterpret_cast<char*>(b.bytes.data()), static_cast<std::streamsize>(b.bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(b.bytes.size())) {
      throw std::runtime_error("archive: truncated buffer '" + b.name + "'");
    }
  }
  return a;
}

}  // namespace tdrl
