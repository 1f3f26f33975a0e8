// SPDX-License-Identifier: Apache-2.0
#include "gansearch/arch.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace gansearch {
namespace {

using Json = nlohmann::ordered_json;

int64_t conv_out(int64_t in, int kernel, int stride) { return (in + 2 * (kernel / 2) - kernel) / stride + 1; }

void require_keys(const Json& obj, const std::set<std::string>& required, const std::set<std::string>& optional,
                  const std::string& where) {
  if (!obj.is_object()) throw DescriptorError(where + ": expected an object");
  for (const auto& key : required) {
    if (!obj.contains(key)) throw DescriptorError(where + ": missing key '" + key + "'");
  }
  for (const auto& [key, _] : obj.items()) {
    if (!required.count(key) && !optional.count(key)) {
      throw DescriptorError(where + ": unknown key '" + key + "'");
    }
  }
}

template <typename V>
V get_as(const Json& obj, const char* key, const std::string& where) {
  try {
    return obj.at(key).get<V>();
  } catch (const nlohmann::json::exception&) {
    throw DescriptorError(where + ": key '" + key + "' has the wrong type");
  }
}

}  // namespace

size_t ArchDescriptor::trunk_stage() const {
  size_t last = stages.size();
  for (size_t i = 0; i < stages.size(); ++i) {
    if (stages[i].kind == "conv_stage") last = i;
  }
  if (last == stages.size()) throw DescriptorError("descriptor has no conv_stage");
  return last;
}

int64_t ArchDescriptor::trunk_width() const { return stages.at(trunk_stage()).c_out; }

std::vector<LayerCost> layer_costs(const ArchDescriptor& arch) {
  std::vector<LayerCost> layers;
  int64_t h = arch.input_height;
  int64_t w = arch.input_width;
  const size_t trunk = arch.trunk_stage();
  for (size_t i = 0; i < arch.stages.size(); ++i) {
    const StageDesc& s = arch.stages[i];
    if (s.kind == "upsample_stage") {
      h *= 2;
      w *= 2;
    }
    h = conv_out(h, s.kernel, s.stride);
    w = conv_out(w, s.kernel, s.stride);
    layers.push_back({LayerCost::Kind::conv, s.c_in, s.c_out, s.kernel, h, w});
    if (i == trunk) {
      for (const BlockDesc& b : arch.blocks) {
        if (!b.active) continue;
        layers.push_back({LayerCost::Kind::conv, b.widths.at(1), b.widths.at(0), kBlockKernel, h, w});
        layers.push_back({LayerCost::Kind::conv, b.widths.at(0), b.widths.at(1), kBlockKernel, h, w});
      }
    }
  }
  return layers;
}

int64_t count_macs(std::span<const LayerCost> layers) {
  int64_t total = 0;
  for (const LayerCost& l : layers) {
    switch (l.kind) {
      case LayerCost::Kind::conv:
        total += l.c_out * l.c_in * l.kernel * l.kernel * l.out_h * l.out_w;
        break;
      case LayerCost::Kind::dense:
        total += l.c_out * l.c_in;
        break;
      case LayerCost::Kind::mask:
        break;
    }
  }
  return total;
}

int64_t count_macs(const ArchDescriptor& arch) {
  const auto layers = layer_costs(arch);
  return count_macs(layers);
}

void validate(const ArchDescriptor& arch) {
  if (arch.input_channels < 1 || arch.input_height < 1 || arch.input_width < 1) {
    throw DescriptorError("input dimensions must be >= 1");
  }
  if (arch.stages.empty()) throw DescriptorError("descriptor has no stages");
  int64_t prev = arch.input_channels;
  int64_t h = arch.input_height;
  int phase = 0;  // 0 conv, 1 upsample, 2 output
  for (size_t i = 0; i < arch.stages.size(); ++i) {
    const StageDesc& s = arch.stages[i];
    const std::string where = "stage " + std::to_string(i) + " (" + s.name + ")";
    int kind_phase = -1;
    if (s.kind == "conv_stage") kind_phase = 0;
    if (s.kind == "upsample_stage") kind_phase = 1;
    if (s.kind == "output_stage") kind_phase = 2;
    if (kind_phase < 0) throw DescriptorError(where + ": unknown kind '" + s.kind + "'");
    if (kind_phase < phase) throw DescriptorError(where + ": stage kinds out of order");
    phase = kind_phase;
    if (s.c_in < 1 || s.c_out < 1) throw DescriptorError(where + ": widths must be >= 1");
    if (s.kernel < 1 || s.kernel % 2 == 0) throw DescriptorError(where + ": kernel must be odd and positive");
    if (s.stride != 1 && s.stride != 2) throw DescriptorError(where + ": stride must be 1 or 2");
    if (s.c_in != prev) {
      throw DescriptorError(where + ": c_in " + std::to_string(s.c_in) + " does not match previous width " +
                            std::to_string(prev));
    }
    if (kind_phase == 1) h *= 2;
    h = conv_out(h, s.kernel, s.stride);
    if (h < 1) throw DescriptorError(where + ": spatial size collapses");
    prev = s.c_out;
  }
  if (arch.stages.back().kind != "output_stage") throw DescriptorError("last stage must be an output_stage");
  for (size_t i = 0; i + 1 < arch.stages.size(); ++i) {
    if (arch.stages[i].kind == "output_stage") throw DescriptorError("only the last stage may be an output_stage");
  }
  if (arch.stages.front().kind != "conv_stage") throw DescriptorError("first stage must be a conv_stage");
  const int64_t trunk = arch.trunk_width();
  for (size_t i = 0; i < arch.blocks.size(); ++i) {
    const BlockDesc& b = arch.blocks[i];
    const std::string where = "block " + std::to_string(i);
    if (!b.active) {
      if (!b.widths.empty()) throw DescriptorError(where + ": inactive block must not list widths");
      continue;
    }
    if (b.widths.size() != 2) throw DescriptorError(where + ": active block needs [inner, trunk] widths");
    if (b.widths[0] < 1 || b.widths[1] < 1) throw DescriptorError(where + ": widths must be >= 1");
    if (b.widths[1] != trunk) {
      throw DescriptorError(where + ": trunk width " + std::to_string(b.widths[1]) + " != " + std::to_string(trunk));
    }
  }
  const int64_t recount = count_macs(arch);
  if (arch.macs != recount) {
    throw DescriptorError("macs " + std::to_string(arch.macs) + " does not match recount " + std::to_string(recount));
  }
}

std::string to_json(const ArchDescriptor& arch) {
  Json doc;
  doc["input"] = {{"channels", arch.input_channels}, {"height", arch.input_height}, {"width", arch.input_width}};
  doc["stages"] = Json::array();
  for (const StageDesc& s : arch.stages) {
    doc["stages"].push_back({{"name", s.name},
                             {"kind", s.kind},
                             {"c_in", s.c_in},
                             {"c_out", s.c_out},
                             {"kernel", s.kernel},
                             {"stride", s.stride}});
  }
  doc["blocks"] = Json::array();
  for (const BlockDesc& b : arch.blocks) {
    doc["blocks"].push_back({{"active", b.active}, {"widths", b.widths}});
  }
  doc["macs"] = arch.macs;
  if (arch.predicted_latency_ms) doc["predicted_latency_ms"] = *arch.predicted_latency_ms;
  return doc.dump(2) + "\n";
}

ArchDescriptor descriptor_from_json(const std::string& text) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DescriptorError(std::string("descriptor is not valid JSON: ") + e.what());
  }
  require_keys(doc, {"input", "stages", "blocks", "macs"}, {"predicted_latency_ms"}, "descriptor");
  ArchDescriptor arch;
  const Json& in = doc["input"];
  require_keys(in, {"channels", "height", "width"}, {}, "input");
  arch.input_channels = get_as<int64_t>(in, "channels", "input");
  arch.input_height = get_as<int64_t>(in, "height", "input");
  arch.input_width = get_as<int64_t>(in, "width", "input");
  if (!doc["stages"].is_array()) throw DescriptorError("stages must be an array");
  for (size_t i = 0; i < doc["stages"].size(); ++i) {
    const Json& s = doc["stages"][i];
    const std::string where = "stages[" + std::to_string(i) + "]";
    require_keys(s, {"name", "kind", "c_in", "c_out", "kernel", "stride"}, {}, where);
    arch.stages.push_back({get_as<std::string>(s, "name", where), get_as<std::string>(s, "kind", where),
                           get_as<int64_t>(s, "c_in", where), get_as<int64_t>(s, "c_out", where),
                           get_as<int>(s, "kernel", where), get_as<int>(s, "stride", where)});
  }
  if (!doc["blocks"].is_array()) throw DescriptorError("blocks must be an array");
  for (size_t i = 0; i < doc["blocks"].size(); ++i) {
    const Json& b = doc["blocks"][i];
    const std::string where = "blocks[" + std::to_string(i) + "]";
    require_keys(b, {"active", "widths"}, {}, where);
    arch.blocks.push_back({get_as<bool>(b, "active", where), get_as<std::vector<int64_t>>(b, "widths", where)});
  }
  arch.macs = get_as<int64_t>(doc, "macs", "descriptor");
  if (doc.contains("predicted_latency_ms")) {
    arch.predicted_latency_ms = get_as<double>(doc, "predicted_latency_ms", "descriptor");
  }
  validate(arch);
  return arch;
}

void save_descriptor(const ArchDescriptor& arch, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write descriptor " + path);
  out << to_json(arch);
  if (!out) throw std::runtime_error("failed writing descriptor " + path);
}

ArchDescriptor load_descriptor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open descriptor " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return descriptor_from_json(ss.str());
}

}  // namespace gansearch
