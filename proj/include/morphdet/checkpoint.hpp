#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "morphdet/bandstats.hpp"
#include "morphdet/embednet.hpp"
#include "morphdet/error.hpp"
#include "morphdet/wavelet.hpp"

namespace morphdet {

// Container layout (all integers little-endian):
//   8 bytes   magic "MDETCKPT"
//   u32       format version
//   u64       header length in bytes
//   header    UTF-8 JSON: net config, parameter names/shapes, Adam
//             hyper-parameters and step, selection mask, wavelet family,
//             input mode, run config
//   payload   parameters, then Adam first moments, then second moments,
//             each as IEEE-754 binary64 in parameter order
inline constexpr char kCheckpointMagic[8] = {'M', 'D', 'E', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  SelectionMask mask;
  WaveletFamily family = WaveletFamily::haar;
  std::string mode = "gray";
  std::size_t image_size = 160;
  nlohmann::ordered_json run_config = nlohmann::ordered_json::object();
};

struct Checkpoint {
  EmbedNet net;
  AdamState adam;
  CheckpointMeta meta;
};

inline nlohmann::ordered_json to_json(const EmbedNetConfig& c) {
  nlohmann::ordered_json blocks = nlohmann::ordered_json::array();
  for (const auto& b : c.blocks) blocks.push_back({b.filters, b.kernel, b.stride});
  return {{"in_channels", c.in_channels},
          {"blocks", blocks},
          {"embedding_dim", c.embedding_dim},
          {"seed", c.seed},
          {"l2_normalize", c.l2_normalize}};
}

inline EmbedNetConfig net_config_from_json(const nlohmann::ordered_json& j) {
  EmbedNetConfig c;
  c.in_channels = j.at("in_channels").get<std::size_t>();
  c.blocks.clear();
  for (const auto& b : j.at("blocks"))
    c.blocks.push_back({b.at(0).get<std::size_t>(), b.at(1).get<std::size_t>(), b.at(2).get<std::size_t>()});
  c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.l2_normalize = j.at("l2_normalize").get<bool>();
  c.validate();
  return c;
}

inline nlohmann::ordered_json mask_to_json(const SelectionMask& m) {
  nlohmann::ordered_json a = nlohmann::ordered_json::array();
  for (const auto& id : m.bands) a.push_back(id.str());
  return a;
}

inline SelectionMask mask_from_json(const nlohmann::ordered_json& j) {
  SelectionMask m;
  for (const auto& s : j) m.bands.push_back(SubbandId::parse(s.get<std::string>()));
  return m;
}

namespace detail {

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const std::vector<char>& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw Error("truncated file");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(T);
  return v;
}

inline void put_doubles(std::string& out, const ParamSet& p) {
  for (const auto& t : p.tensors)
    for (double d : t.data) {
      std::uint64_t bits;
      std::memcpy(&bits, &d, sizeof bits);
      put_le(out, bits);
    }
}

inline void get_doubles(const std::vector<char>& in, std::size_t& pos, ParamSet& p) {
  for (auto& t : p.tensors)
    for (double& d : t.data) {
      const auto bits = get_le<std::uint64_t>(in, pos);
      std::memcpy(&d, &bits, sizeof d);
    }
}

}  // namespace detail

inline std::string encode_checkpoint(const EmbedNet& net, const AdamState& adam, const CheckpointMeta& meta) {
  require(!meta.mask.bands.empty(), "checkpoint: selection mask absent");
  nlohmann::ordered_json params = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < net.params().names.size(); ++i)
    params.push_back({{"name", net.params().names[i]}, {"shape", net.params().tensors[i].shape}});
  nlohmann::ordered_json header = {
      {"format", "morphdet-checkpoint"},
      {"config", to_json(net.config())},
      {"parameters", params},
      {"adam", {{"beta1", adam.beta1}, {"beta2", adam.beta2}, {"eps", adam.eps}, {"step", adam.step}}},
      {"selection_mask", mask_to_json(meta.mask)},
      {"wavelet_family", std::string(to_string(meta.family))},
      {"mode", meta.mode},
      {"image_size", meta.image_size},
      {"run_config", meta.run_config},
  };
  const std::string text = header.dump();
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, text.size());
  out += text;
  detail::put_doubles(out, net.params());
  detail::put_doubles(out, adam.m);
  detail::put_doubles(out, adam.v);
  return out;
}

inline Checkpoint decode_checkpoint(const std::vector<char>& bytes) {
  if (bytes.size() < sizeof kCheckpointMagic || std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw Error("not a checkpoint file");
  std::size_t pos = sizeof kCheckpointMagic;
  const auto version = detail::get_le<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion)
    throw Error("version mismatch: checkpoint version " + std::to_string(version) + ", expected " +
                std::to_string(kCheckpointVersion));
  const auto header_len = detail::get_le<std::uint64_t>(bytes, pos);
  if (pos + header_len > bytes.size()) throw Error("truncated file");
  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(bytes.begin() + static_cast<long>(pos),
                                           bytes.begin() + static_cast<long>(pos + header_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("checkpoint: corrupt header: ") + e.what());
  }
  pos += header_len;
  if (!header.contains("config")) throw Error("checkpoint: config absent");
  if (!header.contains("selection_mask") || header["selection_mask"].empty())
    throw Error("checkpoint: selection mask absent");

  Checkpoint ck;
  try {
    const auto cfg = net_config_from_json(header["config"]);
    ck.net = EmbedNet(cfg);
    ck.adam = AdamState::for_net(ck.net);
    const auto& adam = header.at("adam");
    ck.adam.beta1 = adam.at("beta1").get<double>();
    ck.adam.beta2 = adam.at("beta2").get<double>();
    ck.adam.eps = adam.at("eps").get<double>();
    ck.adam.step = adam.at("step").get<std::uint64_t>();
    ck.meta.mask = mask_from_json(header["selection_mask"]);
    ck.meta.family = parse_family(header.at("wavelet_family").get<std::string>());
    ck.meta.mode = header.at("mode").get<std::string>();
    ck.meta.image_size = header.at("image_size").get<std::size_t>();
    ck.meta.run_config = header.value("run_config", nlohmann::ordered_json::object());
    const auto& params = header.at("parameters");
    require(params.size() == ck.net.params().names.size(), "checkpoint: parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      require(params[i].at("name").get<std::string>() == ck.net.params().names[i] &&
                  params[i].at("shape").get<std::vector<std::size_t>>() == ck.net.params().tensors[i].shape,
              "checkpoint: parameter layout does not match config");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("checkpoint: corrupt header: ") + e.what());
  }
  detail::get_doubles(bytes, pos, ck.net.params());
  detail::get_doubles(bytes, pos, ck.adam.m);
  detail::get_doubles(bytes, pos, ck.adam.v);
  if (pos != bytes.size()) throw Error("checkpoint: trailing bytes after payload");
  return ck;
}

inline void save_checkpoint(const EmbedNet& net, const AdamState& adam, const CheckpointMeta& meta,
                            const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(net, adam, meta);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("unwritable output: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("unwritable output: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("unreadable file: " + path.string());
  std::vector<char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

}  // namespace morphdet
