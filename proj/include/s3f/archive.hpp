// SPDX-License-Identifier: Apache-2.0
//
// NamedTensorArchive: a flat checkpoint container.
//
//   bytes [0, 8)        header length L, unsigned 64-bit little-endian
//   bytes [8, 8 + L)    JSON object, padded with spaces so 8 + L is a
//                       multiple of 64
//   bytes [8 + L, ...)  payload
//
// The JSON maps each tensor name to {"dtype", "shape", "offset", "nbytes"},
// with offsets relative to the payload start. Entries are laid out in name
// order, each starting on a 64-byte boundary and zero-padded up to the next.
// The optional "__metadata__" key holds a string-to-string map. Values are
// little-endian IEEE-754.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "s3f/nn.hpp"

namespace s3f {

enum class DType { F32, F64 };

std::size_t dtype_size(DType d);
std::string to_string(DType d);

class ArchiveError : public Error {
 public:
  ArchiveError(const std::string& what, std::size_t offset)
      : Error("archive", what + " (byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class NamedTensorArchive {
 public:
  struct Entry {
    DType dtype = DType::F32;
    Shape shape;
    std::vector<std::uint8_t> bytes;  // little-endian payload
  };

  template <typename T>
  void put(const std::string& name, const Tensor<T>& t);
  template <typename T>
  void put_all(const ParamList<T>& params, const std::string& prefix = "");

  // Values converted to T. Throws naming the tensor when absent.
  template <typename T>
  Tensor<T> get(const std::string& name) const;
  // Copy the named values into an existing tensor, checking shape.
  template <typename T>
  void assign(const std::string& name, Tensor<T>& dst) const;

  bool contains(const std::string& name) const { return entries_.count(name) > 0; }
  const Entry& entry(const std::string& name) const;
  std::vector<std::string> names() const;
  std::size_t size() const { return entries_.size(); }

  std::map<std::string, std::string>& metadata() { return metadata_; }
  const std::map<std::string, std::string>& metadata() const { return metadata_; }

  std::vector<std::uint8_t> serialize() const;
  static NamedTensorArchive deserialize(std::span<const std::uint8_t> bytes);

  void save(const std::filesystem::path& path) const;
  static NamedTensorArchive load(const std::filesystem::path& path);

 private:
  std::map<std::string, Entry> entries_;
  std::map<std::string, std::string> metadata_;
};

// Fill every named parameter from the archive; throws listing missing names.
template <typename T>
void load_params(const NamedTensorArchive& archive, const ParamList<T>& params, const std::string& prefix = "");

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace s3f
