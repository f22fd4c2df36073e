#pragma once

// Versioned binary container: "GNET" magic, version, a JSON header and
// little-endian float32 blocks in declaration order. Networks, training
// checkpoints (network + ADAM state) and cached datasets all use it.
// Writes are atomic (temp file + rename) and byte-deterministic for a
// given payload, which the reproducibility checks rely on.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gaussnet/params.hpp"

namespace gaussnet::io {

using nlohmann::json;

inline constexpr char kMagic[4] = {'G', 'N', 'E', 'T'};
inline constexpr std::uint32_t kVersion = 1;

struct Block {
  std::string name;
  std::vector<float> data;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& out, float f) {
  std::uint32_t bits;
  static_assert(sizeof(bits) == sizeof(f));
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  explicit Reader(const std::string& b) : buf(b) {}

  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw std::runtime_error("container truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(buf[pos++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(buf[pos++])) << (8 * i);
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
};

}  // namespace detail

/// Writes bytes to a temporary file next to the target, then renames, so
/// readers never observe a partial file and reruns overwrite atomically.
inline void atomic_write_bytes(const std::string& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  fs::rename(tmp, target);
}

inline void atomic_write_text(const std::string& path, const std::string& text) {
  atomic_write_bytes(path, text);
}

inline void write_container(const std::string& path, json header,
                            const std::vector<Block>& blocks) {
  json block_list = json::array();
  for (const auto& b : blocks)
    block_list.push_back({{"name", b.name}, {"size", b.data.size()}});
  header["blocks"] = std::move(block_list);

  std::string out;
  out.append(kMagic, 4);
  detail::put_u32(out, kVersion);
  const std::string head = header.dump();
  detail::put_u64(out, head.size());
  out += head;
  for (const auto& b : blocks)
    for (float f : b.data) detail::put_f32(out, f);
  atomic_write_bytes(path, out);
}

inline std::pair<json, std::vector<Block>> read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  detail::Reader r(buf);
  r.need(4);
  if (std::memcmp(buf.data(), kMagic, 4) != 0)
    throw std::runtime_error(path + ": not a GNET container");
  r.pos = 4;
  const auto version = r.u32();
  if (version != kVersion)
    throw std::runtime_error(path + ": unsupported container version " +
                             std::to_string(version));
  const auto head_len = r.u64();
  r.need(head_len);
  json header = json::parse(buf.substr(r.pos, head_len));
  r.pos += head_len;

  std::vector<Block> blocks;
  for (const auto& desc : header.at("blocks")) {
    Block b;
    b.name = desc.at("name").get<std::string>();
    b.data.resize(desc.at("size").get<std::size_t>());
    for (auto& f : b.data) f = r.f32();
    blocks.push_back(std::move(b));
  }
  if (r.pos != buf.size()) throw std::runtime_error(path + ": trailing bytes");
  return {std::move(header), std::move(blocks)};
}

// ---------------------------------------------------------------------------
// Network and checkpoint payloads.

template <class Real>
json describe_network(const NetworkSpec<Real>& net) {
  json layers = json::array();
  for (const auto& l : net.layers) {
    layers.push_back({{"kind", kind_name(l.kind)},
                      {"in_channels", l.in_channels},
                      {"out_channels", l.out_channels},
                      {"sigma", double(l.sigma)},
                      {"d", l.d},
                      {"support", l.support},
                      {"pixel_side", l.pixel_side},
                      {"basis_mode", l.basis_mode == BasisMode::Analytic ? "analytic"
                                                                         : "sobel"},
                      {"sub_mode", l.sub_mode == SubsampleMode::Point ? "point"
                                                                      : "avgpool2"},
                      {"conv_method", l.conv_method == ConvMethod::Auto ? "auto"
                                      : l.conv_method == ConvMethod::Direct ? "direct"
                                                                            : "fft"},
                      {"has_affine", l.has_affine}});
  }
  return json{{"layers", std::move(layers)},
              {"pooling", pooling_name(net.pooling)},
              {"window_sigma", double(net.window_sigma)},
              {"classes", net.classes}};
}

template <class Real = float>
NetworkSpec<Real> network_from_description(const json& desc) {
  NetworkSpec<Real> net;
  for (const auto& l : desc.at("layers")) {
    LayerSpec<Real> spec;
    spec.kind = kind_from_name(l.at("kind").get<std::string>());
    spec.in_channels = l.at("in_channels").get<int>();
    spec.out_channels = l.at("out_channels").get<int>();
    spec.sigma = Real(l.at("sigma").get<double>());
    spec.d = l.at("d").get<int>();
    spec.support = l.value("support", 0);
    spec.pixel_side = l.value("pixel_side", 3);
    spec.basis_mode = l.value("basis_mode", std::string("analytic")) == "sobel"
                          ? BasisMode::SobelOnGaussian
                          : BasisMode::Analytic;
    spec.sub_mode = l.value("sub_mode", std::string("point")) == "avgpool2"
                        ? SubsampleMode::AvgPool2
                        : SubsampleMode::Point;
    const std::string cm = l.value("conv_method", std::string("auto"));
    spec.conv_method = cm == "direct" ? ConvMethod::Direct
                       : cm == "fft"  ? ConvMethod::Fft
                                      : ConvMethod::Auto;
    spec.has_affine = l.value("has_affine", true);
    spec.weights.assign(spec.weight_count(), Real(0));
    net.layers.push_back(std::move(spec));
  }
  net.pooling = pooling_from_name(desc.at("pooling").get<std::string>());
  net.window_sigma = Real(desc.at("window_sigma").get<double>());
  net.classes = desc.at("classes").get<int>();
  if (net.classes > 0) {
    net.head_weights.assign(std::size_t(net.classes) * net.feature_channels(), Real(0));
    net.head_bias.assign(std::size_t(net.classes), Real(0));
  }
  return net;
}

template <class Real>
std::vector<Block> parameter_blocks(const NetworkSpec<Real>& net) {
  std::vector<Block> blocks;
  auto copy = net;
  gaussnet::detail::visit_parameters(
      copy, [&blocks](const std::string& name, std::vector<Real>& v) {
        Block b;
        b.name = name;
        b.data.assign(v.begin(), v.end());
        blocks.push_back(std::move(b));
      });
  return blocks;
}

template <class Real>
void load_parameter_blocks(NetworkSpec<Real>& net, const std::vector<Block>& blocks,
                           std::size_t first) {
  std::size_t i = first;
  gaussnet::detail::visit_parameters(
      net, [&](const std::string& name, std::vector<Real>& v) {
        if (i >= blocks.size() || blocks[i].name != name ||
            blocks[i].data.size() != v.size())
          throw std::runtime_error("checkpoint block mismatch at " + name);
        std::copy(blocks[i].data.begin(), blocks[i].data.end(), v.begin());
        ++i;
      });
}

template <class Real>
void save_network(const std::string& path, const NetworkSpec<Real>& net) {
  net.validate();
  json header{{"kind", "network"}, {"network", describe_network(net)}};
  write_container(path, std::move(header), parameter_blocks(net));
}

template <class Real = float>
NetworkSpec<Real> load_network(const std::string& path) {
  auto [header, blocks] = read_container(path);
  const std::string kind = header.at("kind").get<std::string>();
  if (kind != "network" && kind != "checkpoint")
    throw std::runtime_error(path + ": container holds " + kind + ", not a network");
  auto net = network_from_description<Real>(header.at("network"));
  materialize_affine(net);
  load_parameter_blocks(net, blocks, 0);
  net.validate();
  return net;
}

}  // namespace gaussnet::io
