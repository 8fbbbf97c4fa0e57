#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "xdiff/denoiser.hpp"

namespace xdiff {
namespace {

constexpr const char* kMagic = "ckpt_v1";

nlohmann::json shape_to_json(const DenoiserShape& s) {
  return {{"horizon", s.horizon},         {"action_dim", s.action_dim},
          {"proprio_dim", s.proprio_dim}, {"context_dim", s.context_dim},
          {"embodiments", s.embodiments}, {"prompt_dim", s.prompt_dim},
          {"hidden", s.hidden},           {"hidden_layers", s.hidden_layers},
          {"time_embed", s.time_embed}};
}

DenoiserShape shape_from_json(const nlohmann::json& j) {
  DenoiserShape s;
  s.horizon = j.at("horizon");
  s.action_dim = j.at("action_dim");
  s.proprio_dim = j.at("proprio_dim");
  s.context_dim = j.at("context_dim");
  s.embodiments = j.at("embodiments");
  s.prompt_dim = j.at("prompt_dim");
  s.hidden = j.at("hidden");
  s.hidden_layers = j.at("hidden_layers");
  s.time_embed = j.at("time_embed");
  return s;
}

void put_le64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(char((bits >> (8 * b)) & 0xff));
}

double get_le64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= std::uint64_t(p[b]) << (8 * b);
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_checkpoint(const std::string& path, const DenoiserParams& params) {
  nlohmann::json manifest;
  manifest["version"] = kMagic;
  manifest["endianness"] = "little";
  manifest["dtype"] = "float64";
  manifest["shape"] = shape_to_json(params.shape());
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : params.tensors())
    tensors.push_back({{"name", t.name},
                       {"shape", {t.rows, t.cols}},
                       {"offset", t.offset * 8}});
  manifest["tensors"] = tensors;
  manifest["payload_bytes"] = params.size() * 8;

  std::string payload;
  payload.reserve(std::size_t(params.size()) * 8);
  for (Eigen::Index i = 0; i < params.size(); ++i) put_le64(payload, params.flat()[i]);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out << kMagic << '\n' << manifest.dump() << '\n';
  out.write(payload.data(), std::streamsize(payload.size()));
  if (!out) throw std::runtime_error("short write on checkpoint " + path);
}

DenoiserParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path);
  std::string magic, manifest_line;
  std::getline(in, magic);
  if (magic != kMagic)
    throw std::runtime_error(path + ": not a " + std::string(kMagic) + " checkpoint");
  std::getline(in, manifest_line);
  const auto manifest = nlohmann::json::parse(manifest_line);
  if (manifest.at("endianness") != "little" || manifest.at("dtype") != "float64")
    throw std::runtime_error(path + ": unsupported payload encoding");
  DenoiserParams params(shape_from_json(manifest.at("shape")));
  const std::size_t bytes = manifest.at("payload_bytes");
  if (bytes != std::size_t(params.size()) * 8)
    throw std::runtime_error(path + ": payload size does not match shape");
  std::string payload(bytes, '\0');
  in.read(payload.data(), std::streamsize(bytes));
  if (std::size_t(in.gcount()) != bytes)
    throw std::runtime_error(path + ": truncated payload");
  const auto* raw = reinterpret_cast<const unsigned char*>(payload.data());
  for (Eigen::Index i = 0; i < params.size(); ++i)
    params.flat()[i] = get_le64(raw + 8 * i);
  return params;
}

}  // namespace xdiff
