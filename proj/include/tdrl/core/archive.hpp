#pragma once

#include "tdrl/core/types.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace tdrl {

enum class DType : std::uint8_t { F32, I32, U8 };

const char* dtype_name(DType t);

/// Versioned container shared by every on-disk format: a text header
///
///     TDRL <kind> <version>
///     key=value
///     buffer <name> <dtype> <rows> <cols>
///     end
///
/// followed by the raw little-endian buffers in declaration order.
class Archive {
public:
  struct Buffer {
    std::string name;
    DType dtype = DType::F32;
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::vector<std::uint8_t> bytes;
  };

  Archive() = default;
  Archive(std::string kind, int version) : kind_(std::move(kind)), version_(version) {}

  const std::string& kind() const { return kind_; }
  int version() const { return version_; }

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  bool has(const std::string& key) const { return meta_.count(key) != 0; }
  const std::map<std::string, std::string>& metadata() const { return meta_; }

  void add_f32(const std::string& name, const Tensorf& t);
  void add_i32(const std::string& name, std::span<const std::int32_t> values);
  void add_u8(const std::string& name, std::span<const std::uint8_t> values);

  Tensorf f32(const std::string& name) const;
  std::vector<std::int32_t> i32(const std::string& name) const;
  std::vector<std::uint8_t> u8(const std::string& name) const;

  const std::vector<Buffer>& buffers() const { return buffers_; }

  void save(const std::filesystem::path& path) const;
  /// Throws std::runtime_error on a malformed file or a kind mismatch.
  static Archive load(const std::filesystem::path& path, const std::string& expected_kind);

private:
  const Buffer& find(const std::string& name, DType dtype) const;

  std::string kind_;
  int version_ = 1;
  std::map<std::string, std::string> meta_;
  std::vector<Buffer> buffers_;
};

}  // namespace tdrl
