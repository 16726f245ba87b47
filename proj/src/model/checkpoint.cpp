#include "pairforge/checkpoint.hpp"

#include <fstream>
#include <json.hpp>
#include <map>

#include "pairforge/serialize.hpp"

namespace pf {

using json = nlohmann::json;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  json names = json::array(), shapes = json::array();
  for (const auto& t : ckpt.tensors) {
    names.push_back(t.name);
    shapes.push_back(t.tensor.shape());
  }
  const json header{{"format", "pairforge-checkpoint"},
                    {"stage", ckpt.stage},
                    {"modality", ckpt.modality},
                    {"seed", ckpt.seed},
                    {"config", ckpt.config_json},
                    {"config_hash", ckpt.config_hash},
                    {"names", names},
                    {"shapes", shapes}};
  const std::string text = header.dump();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  os.write("PFCK", 4);
  const auto len = static_cast<std::uint32_t>(text.size());
  const unsigned char le[4] = {static_cast<unsigned char>(len), static_cast<unsigned char>(len >> 8),
                               static_cast<unsigned char>(len >> 16), static_cast<unsigned char>(len >> 24)};
  os.write(reinterpret_cast<const char*>(le), 4);
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : ckpt.tensors) write_tensor(os, t.tensor);
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[4];
  unsigned char le[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "PFCK") throw FormatError(path.string() + " is not a checkpoint");
  if (!is.read(reinterpret_cast<char*>(le), 4)) throw FormatError("truncated checkpoint header");
  const std::uint32_t len = le[0] | (le[1] << 8) | (le[2] << 16) | (static_cast<std::uint32_t>(le[3]) << 24);
  std::string text(len, '\0');
  if (!is.read(text.data(), len)) throw FormatError("truncated checkpoint header");
  json h;
  try {
    h = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError("malformed checkpoint header: " + std::string(e.what()));
  }
  Checkpoint c;
  c.stage = h.at("stage").get<std::string>();
  c.modality = h.at("modality").get<std::string>();
  c.seed = h.at("seed").get<std::uint64_t>();
  c.config_json = h.at("config").get<std::string>();
  c.config_hash = h.at("config_hash").get<std::string>();
  const auto names = h.at("names").get<std::vector<std::string>>();
  const auto shapes = h.at("shapes").get<std::vector<Shape>>();
  if (names.size() != shapes.size()) throw FormatError("checkpoint header names/shapes disagree");
  for (std::size_t i = 0; i < names.size(); ++i) {
    auto t = read_tensor(is);
    if (t.shape() != shapes[i]) throw FormatError("checkpoint tensor '" + names[i] + "' has unexpected shape");
    c.tensors.push_back({names[i], t});
  }
  return c;
}

Checkpoint make_checkpoint(const std::string& stage, const std::string& modality, std::uint64_t seed,
                           const EncoderConfig& cfg, const ParamList& params) {
  Checkpoint c{stage, modality, seed, cfg.to_json(), cfg.hash(), {}};
  for (const auto& p : params) c.tensors.push_back({p.name, p.tensor.detach()});
  return c;
}

void restore_params(const Checkpoint& ckpt, const EncoderConfig& cfg, ParamList& params) {
  if (ckpt.config_hash != cfg.hash()) {
    throw CheckpointMismatch("checkpoint config hash " + ckpt.config_hash + " (" + ckpt.config_json +
                             ") does not match the model config hash " + cfg.hash() + " (" + cfg.to_json() +
                             ")");
  }
  std::map<std::string, const Tensor*> by_name;
  for (const auto& t : ckpt.tensors) by_name[t.name] = &t.tensor;
  for (auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      throw CheckpointMismatch("checkpoint (" + ckpt.modality + ", stage " + ckpt.stage + ") lacks parameter '" +
                               p.name + "'");
    }
    if (it->second->shape() != p.tensor.shape()) {
      throw CheckpointMismatch("checkpoint parameter '" + p.name + "' has shape " +
                               shape_str(it->second->shape()) + ", model expects " + shape_str(p.tensor.shape()));
    }
    auto src = it->second->data();
    auto dst = p.tensor.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

}  // namespace pf
