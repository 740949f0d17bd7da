// SPDX-License-Identifier: Apache-2.0
#include "s3f/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace s3f {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace {

constexpr std::size_t kAlign = 64;

std::size_t align_up(std::size_t n) { return (n + kAlign - 1) / kAlign * kAlign; }

DType parse_dtype(const std::string& s, std::size_t offset) {
  if (s == "f32") return DType::F32;
  if (s == "f64") return DType::F64;
  throw ArchiveError("unknown dtype '" + s + "'", offset);
}

template <typename T>
constexpr DType dtype_of() {
  return sizeof(T) == 4 ? DType::F32 : DType::F64;
}

}  // namespace

std::size_t dtype_size(DType d) { return d == DType::F32 ? 4 : 8; }
std::string to_string(DType d) { return d == DType::F32 ? "f32" : "f64"; }

template <typename T>
void NamedTensorArchive::put(const std::string& name, const Tensor<T>& t) {
  check(!name.empty() && name != "__metadata__", "archive", "invalid tensor name '" + name + "'");
  Entry e;
  e.dtype = dtype_of<T>();
  e.shape = t.shape();
  e.bytes.resize(t.numel() * sizeof(T));
  if (!e.bytes.empty()) std::memcpy(e.bytes.data(), t.data().data(), e.bytes.size());
  entries_[name] = std::move(e);
}

template <typename T>
void NamedTensorArchive::put_all(const ParamList<T>& params, const std::string& prefix) {
  for (const auto& [name, t] : params) put(prefix + name, t);
}

const NamedTensorArchive::Entry& NamedTensorArchive::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error("archive", "missing tensor '" + name + "'");
  return it->second;
}

template <typename T>
Tensor<T> NamedTensorArchive::get(const std::string& name) const {
  const Entry& e = entry(name);
  const std::size_t n = numel_of(e.shape);
  std::vector<T> v(n);
  if (e.dtype == dtype_of<T>()) {
    if (n) std::memcpy(v.data(), e.bytes.data(), n * sizeof(T));
  } else if (e.dtype == DType::F32) {
    std::vector<float> tmp(n);
    if (n) std::memcpy(tmp.data(), e.bytes.data(), n * sizeof(float));
    for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<T>(tmp[i]);
  } else {
    std::vector<double> tmp(n);
    if (n) std::memcpy(tmp.data(), e.bytes.data(), n * sizeof(double));
    for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<T>(tmp[i]);
  }
  return Tensor<T>(e.shape, std::move(v));
}

template <typename T>
void NamedTensorArchive::assign(const std::string& name, Tensor<T>& dst) const {
  const Entry& e = entry(name);
  check(e.shape == dst.shape(), "archive",
        "tensor '" + name + "' has shape " + shape_str(e.shape) + ", expected " + shape_str(dst.shape()));
  const Tensor<T> src = get<T>(name);
  std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
}

std::vector<std::string> NamedTensorArchive::names() const {
  std::vector<std::string> out;
  for (const auto& [name, e] : entries_) out.push_back(name);
  return out;
}

std::vector<std::uint8_t> NamedTensorArchive::serialize() const {
  nlohmann::json header = nlohmann::json::object();
  std::size_t offset = 0;
  for (const auto& [name, e] : entries_) {
    header[name] = {{"dtype", to_string(e.dtype)}, {"shape", e.shape}, {"offset", offset}, {"nbytes", e.bytes.size()}};
    offset = align_up(offset + e.bytes.size());
  }
  if (!metadata_.empty()) header["__metadata__"] = metadata_;
  std::string text = header.dump();
  text.append(align_up(8 + text.size()) - 8 - text.size(), ' ');

  std::vector<std::uint8_t> out(8 + text.size());
  const std::uint64_t len = text.size();
  std::memcpy(out.data(), &len, 8);
  std::memcpy(out.data() + 8, text.data(), text.size());
  const std::size_t base = out.size();
  std::size_t end = 0;
  for (const auto& [name, e] : entries_) {
    const std::size_t off = header[name]["offset"].get<std::size_t>();
    out.resize(base + off + e.bytes.size(), 0);
    std::copy(e.bytes.begin(), e.bytes.end(), out.begin() + static_cast<std::ptrdiff_t>(base + off));
    end = off + e.bytes.size();
  }
  out.resize(base + end, 0);
  return out;
}

NamedTensorArchive NamedTensorArchive::deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw ArchiveError("truncated header length", bytes.size());
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data(), 8);
  if (len > bytes.size() - 8) throw ArchiveError("header length " + std::to_string(len) + " exceeds file", 0);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(len));
  } catch (const nlohmann::json::parse_error& e) {
    throw ArchiveError(std::string("malformed header: ") + e.what(), 8 + e.byte);
  }
  if (!header.is_object()) throw ArchiveError("header is not an object", 8);

  NamedTensorArchive a;
  const std::size_t base = 8 + len;
  const std::size_t payload = bytes.size() - base;
  struct Span {
    std::size_t begin, end;
    std::string name;
  };
  std::vector<Span> spans;
  for (auto it = header.begin(); it != header.end(); ++it) {
    if (it.key() == "__metadata__") {
      if (!it.value().is_object()) throw ArchiveError("__metadata__ must be an object", 8);
      for (auto m = it.value().begin(); m != it.value().end(); ++m) {
        if (!m.value().is_string()) throw ArchiveError("metadata value '" + m.key() + "' is not a string", 8);
        a.metadata_[m.key()] = m.value().get<std::string>();
      }
      continue;
    }
    const auto& j = it.value();
    Entry e;
    std::size_t off = 0, nbytes = 0;
    try {
      e.dtype = parse_dtype(j.at("dtype").get<std::string>(), 8);
      e.shape = j.at("shape").get<Shape>();
      off = j.at("offset").get<std::size_t>();
      nbytes = j.at("nbytes").get<std::size_t>();
    } catch (const nlohmann::json::exception& ex) {
      throw ArchiveError("entry '" + it.key() + "': " + ex.what(), 8);
    }
    if (numel_of(e.shape) * dtype_size(e.dtype) != nbytes)
      throw ArchiveError("entry '" + it.key() + "' byte length does not match its shape", base + off);
    if (off % kAlign != 0) throw ArchiveError("entry '" + it.key() + "' is not 64-byte aligned", base + off);
    if (off > payload || nbytes > payload - off)
      throw ArchiveError("entry '" + it.key() + "' runs past the end of the file", base + off);
    e.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(base + off),
                   bytes.begin() + static_cast<std::ptrdiff_t>(base + off + nbytes));
    spans.push_back({off, off + nbytes, it.key()});
    a.entries_[it.key()] = std::move(e);
  }
  // Name order is layout order; offsets must ascend without overlap.
  for (std::size_t i = 1; i < spans.size(); ++i)
    if (spans[i].begin < spans[i - 1].end)
      throw ArchiveError("entry '" + spans[i].name + "' overlaps '" + spans[i - 1].name + "'", base + spans[i].begin);
  return a;
}

void NamedTensorArchive::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

NamedTensorArchive NamedTensorArchive::load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

template <typename T>
void load_params(const NamedTensorArchive& archive, const ParamList<T>& params, const std::string& prefix) {
  std::string missing;
  for (const auto& [name, t] : params)
    if (!archive.contains(prefix + name)) missing += (missing.empty() ? "" : ", ") + prefix + name;
  if (!missing.empty()) throw Error("archive", "missing tensors: " + missing);
  for (auto [name, t] : params) archive.assign(prefix + name, t);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io", "cannot open '" + path.string() + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("io", "cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("io", "short write to '" + path.string() + "'");
}

#define S3F_INSTANTIATE(T)                                                                     \
  template void NamedTensorArchive::put(const std::string&, const Tensor<T>&);                 \
  template void NamedTensorArchive::put_all(const ParamList<T>&, const std::string&);          \
  template Tensor<T> NamedTensorArchive::get(const std::string&) const;                        \
  template void NamedTensorArchive::assign(const std::string&, Tensor<T>&) const;              \
  template void load_params(const NamedTensorArchive&, const ParamList<T>&, const std::string&);

S3F_INSTANTIATE(float)
S3F_INSTANTIATE(double)
#undef S3F_INSTANTIATE

}  // namespace s3f
