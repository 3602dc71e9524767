// SPDX-License-Identifier: Apache-2.0
#include "cfcap/captioner/checkpoint.hpp"

#include <fstream>

namespace cfcap::captioner {

using nlohmann::json;
using nlohmann::ordered_json;

ordered_json config_to_json(const ModelConfig& c) {
  ordered_json j;
  j["vocab_size"] = c.vocab_size;
  j["eos_token"] = c.eos_token;
  j["num_cell_ids"] = c.num_cell_ids;
  j["grid_height"] = c.grid_height;
  j["grid_width"] = c.grid_width;
  j["embed_dim"] = c.embed_dim;
  j["num_heads"] = c.num_heads;
  j["attention_dim"] = c.attention_dim;
  j["hidden_dim"] = c.hidden_dim;
  j["max_length"] = c.max_length;
  return j;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.eos_token = j.at("eos_token").get<TokenId>();
  c.num_cell_ids = j.at("num_cell_ids").get<int>();
  c.grid_height = j.at("grid_height").get<int>();
  c.grid_width = j.at("grid_width").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.attention_dim = j.at("attention_dim").get<int>();
  c.hidden_dim = j.at("hidden_dim").get<int>();
  c.max_length = j.at("max_length").get<int>();
  c.validate();
  return c;
}

ordered_json checkpoint_to_json(const Checkpoint& ckpt) {
  ordered_json j;
  j["format"] = "cfcap-checkpoint";
  j["version"] = kCheckpointVersion;
  j["stage"] = ckpt.stage;
  j["config"] = config_to_json(ckpt.params.config());
  j["metadata"] = ckpt.metadata;
  ordered_json tensors = ordered_json::array();
  const auto flat = ckpt.params.flat();
  for (const auto& s : ckpt.params.layout()) {
    ordered_json t;
    t["name"] = s.name;
    t["shape"] = {s.rows, s.cols};
    const auto begin = flat.begin() + static_cast<std::ptrdiff_t>(s.offset);
    t["values"] = std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(s.rows) * s.cols);
    tensors.push_back(std::move(t));
  }
  j["tensors"] = std::move(tensors);
  return j;
}

Checkpoint checkpoint_from_json(const json& j) {
  if (j.value("format", "") != "cfcap-checkpoint") {
    throw InputError("not a checkpoint file");
  }
  const int version = j.at("version").get<int>();
  if (version > kCheckpointVersion) {
    throw InputError("checkpoint version " + std::to_string(version) + " is newer than supported");
  }
  Checkpoint ckpt{ModelParams(config_from_json(j.at("config"))), j.at("stage").get<std::string>(),
                  j.value("metadata", ordered_json::object())};
  auto flat = ckpt.params.flat();
  for (const auto& t : j.at("tensors")) {
    const std::string name = t.at("name").get<std::string>();
    const TensorSlot* slot = nullptr;
    for (const auto& s : ckpt.params.layout()) {
      if (s.name == name) slot = &s;
    }
    if (slot == nullptr) throw InputError("checkpoint: unknown tensor " + name);
    const auto values = t.at("values").get<std::vector<double>>();
    if (values.size() != static_cast<std::size_t>(slot->rows) * slot->cols) {
      throw InputError("checkpoint: tensor " + name + " has the wrong size");
    }
    std::copy(values.begin(), values.end(), flat.begin() + static_cast<std::ptrdiff_t>(slot->offset));
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << checkpoint_to_json(ckpt).dump() << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read checkpoint " + path.string());
  // Parse keeping key order so metadata round-trips byte for byte.
  const auto doc = ordered_json::parse(in);
  Checkpoint ckpt = checkpoint_from_json(json(doc));
  if (doc.contains("metadata")) ckpt.metadata = doc.at("metadata");
  return ckpt;
}

}  // namespace cfcap::captioner
