// SPDX-License-Identifier: Apache-2.0
#include "gansearch/weights.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace gansearch {
namespace {

static_assert(std::endian::native == std::endian::little, "weights files assume a little-endian host");

void put_u32(std::string& out, uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  size_t offset() const { return pos_; }
  size_t remaining() const { return bytes_.size() - pos_; }

  void need(size_t n, const char* what) const {
    if (remaining() < n) {
      throw WeightsFormatError("offset " + std::to_string(pos_) + ": manifest truncated reading " + what + " (need " +
                               std::to_string(n) + " bytes, have " + std::to_string(remaining()) + ")");
    }
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v;
    std::memcpy(&v, bytes_.data() + pos_, 4);
    pos_ += 4;
    return v;
  }
  uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<uint8_t>(bytes_[pos_++]);
  }
  std::string_view take(size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::string_view bytes_;
  size_t pos_ = 0;
};

}  // namespace

const WeightEntry* WeightsFile::find(std::string_view name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

std::string serialize_weights(const WeightsFile& file) {
  std::string out(kWeightsMagic);
  put_u32(out, static_cast<uint32_t>(file.entries.size()));
  for (const auto& e : file.entries) {
    if (static_cast<int64_t>(e.data.size()) != shape_numel(e.shape)) {
      throw WeightsFormatError("entry " + e.name + ": data length does not match shape " + shape_str(e.shape));
    }
    put_u32(out, static_cast<uint32_t>(e.name.size()));
    out += e.name;
    out.push_back(0);
    put_u32(out, static_cast<uint32_t>(e.shape.size()));
    for (int64_t d : e.shape) put_u32(out, static_cast<uint32_t>(d));
  }
  for (const auto& e : file.entries) {
    out.append(reinterpret_cast<const char*>(e.data.data()), e.data.size() * sizeof(float));
  }
  return out;
}

WeightsFile parse_weights(std::string_view bytes) {
  Reader r(bytes);
  if (bytes.size() < kWeightsMagic.size() || bytes.substr(0, kWeightsMagic.size()) != kWeightsMagic) {
    throw WeightsFormatError("offset 0: bad magic, expected GANSRCH1");
  }
  r.take(kWeightsMagic.size(), "magic");
  const uint32_t count = r.u32("entry count");
  WeightsFile file;
  size_t expected = 0;
  for (uint32_t i = 0; i < count; ++i) {
    WeightEntry e;
    const uint32_t name_len = r.u32("name length");
    e.name = std::string(r.take(name_len, "name"));
    const size_t type_at = r.offset();
    const uint8_t type = r.u8("scalar type");
    if (type != 0) {
      throw WeightsFormatError("offset " + std::to_string(type_at) + ": unsupported scalar type code " +
                               std::to_string(type));
    }
    const uint32_t rank = r.u32("rank");
    for (uint32_t k = 0; k < rank; ++k) {
      const size_t dim_at = r.offset();
      const uint32_t d = r.u32("dimension");
      if (d == 0) throw WeightsFormatError("offset " + std::to_string(dim_at) + ": zero dimension in " + e.name);
      e.shape.push_back(d);
    }
    expected += static_cast<size_t>(shape_numel(e.shape)) * sizeof(float);
    file.entries.push_back(std::move(e));
  }
  if (r.remaining() != expected) {
    throw WeightsFormatError("offset " + std::to_string(r.offset()) + ": payload " +
                             (r.remaining() < expected ? "truncated" : "has trailing bytes") + ", expected " +
                             std::to_string(expected) + " bytes, got " + std::to_string(r.remaining()));
  }
  for (auto& e : file.entries) {
    const size_t n = static_cast<size_t>(shape_numel(e.shape));
    e.data.resize(n);
    std::memcpy(e.data.data(), r.take(n * sizeof(float), "payload").data(), n * sizeof(float));
  }
  return file;
}

void save_weights(const WeightsFile& file, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write weights " + path);
  const std::string bytes = serialize_weights(file);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing weights " + path);
}

WeightsFile load_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open weights " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_weights(ss.str());
  } catch (const WeightsFormatError& e) {
    throw WeightsFormatError(path + ": " + e.what());
  }
}

template <typename T>
WeightsFile collect_weights(std::span<const Param<T>* const> params) {
  WeightsFile file;
  for (const Param<T>* p : params) {
    WeightEntry e{p->name, p->value.shape(), {}};
    e.data.reserve(static_cast<size_t>(p->value.numel()));
    for (T v : p->value.data()) e.data.push_back(static_cast<float>(v));
    file.entries.push_back(std::move(e));
  }
  return file;
}

template <typename T>
void restore_weights(const WeightsFile& file, std::span<Param<T>* const> params) {
  for (Param<T>* p : params) {
    const WeightEntry* e = file.find(p->name);
    if (e == nullptr) throw WeightsFormatError("missing entry " + p->name);
    if (e->shape != p->value.shape()) {
      throw WeightsFormatError("entry " + p->name + " has shape " + shape_str(e->shape) + ", expected " +
                               shape_str(p->value.shape()));
    }
    for (size_t i = 0; i < e->data.size(); ++i) p->value[static_cast<int64_t>(i)] = static_cast<T>(e->data[i]);
  }
}

template WeightsFile collect_weights(std::span<const Param<float>* const>);
template WeightsFile collect_weights(std::span<const Param<double>* const>);
template void restore_weights(const WeightsFile&, std::span<Param<float>* const>);
template void restore_weights(const WeightsFile&, std::span<Param<double>* const>);

}  // namespace gansearch
