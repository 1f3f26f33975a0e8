// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "gansearch/param.hpp"

namespace gansearch {

/// Binary tensor archive.
///
///   "GANSRCH1"
///   u32 entry count
///   per entry: u32 name length, name bytes, u8 scalar type (0 = f32), u32 rank, u32 dims[rank]
///   payload: every entry's elements, little-endian, in manifest order
struct WeightEntry {
  std::string name;
  Shape shape;
  std::vector<float> data;

  bool operator==(const WeightEntry&) const = default;
};

struct WeightsFile {
  std::vector<WeightEntry> entries;

  const WeightEntry* find(std::string_view name) const;
  bool operator==(const WeightsFile&) const = default;
};

class WeightsFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::string_view kWeightsMagic = "GANSRCH1";

std::string serialize_weights(const WeightsFile& file);
/// Errors name the byte offset of the bad field, or the expected and actual
/// payload sizes.
WeightsFile parse_weights(std::string_view bytes);
void save_weights(const WeightsFile& file, const std::string& path);
WeightsFile load_weights(const std::string& path);

/// Parameters in order, converted to 32-bit.
template <typename T>
WeightsFile collect_weights(std::span<const Param<T>* const> params);

/// Copies entries into params by name. Every param must be present with a
/// matching shape; entries not named by a param are ignored.
template <typename T>
void restore_weights(const WeightsFile& file, std::span<Param<T>* const> params);

}  // namespace gansearch
