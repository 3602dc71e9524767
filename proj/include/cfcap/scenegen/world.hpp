// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <json.hpp>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cfcap/captioner/checkpoint.hpp"
#include "cfcap/captioner/decode.hpp"
#include "cfcap/scene.hpp"

namespace cfcap::scenegen {

struct ObjectSpec {
  std::string name;
  std::vector<std::string> words;  // surface phrase, e.g. {"black", "dog"}
  int cells = 1;                   // region size on the grid
};

// With probability rho the companion accompanies the trigger; otherwise it
// is kept out of scenes containing the trigger.
struct CoOccurrence {
  std::string trigger;
  std::string companion;
  double rho = 0.9;
};

struct WorldConfig {
  int grid_height = 4;
  int grid_width = 4;
  std::vector<ObjectSpec> objects;
  std::vector<CoOccurrence> co_occurrences;
  int min_objects = 2;
  int max_objects = 3;        // base draw before co-occurrence rules
  int max_total_objects = 4;  // after companions are added
  int max_caption_length = 20;
  int train_size = 1000;
  int validation_size = 100;
  int test_size = 100;
  std::uint64_t seed = 0;

  // The default shortcut world: a 4x4 grid, twelve objects and two planted
  // co-occurrences (river -> man, table -> chair) at rho = 0.9.
  static WorldConfig shortcut_world();

  void validate() const;
  int object_index(const std::string& name) const;  // throws ConfigError
};

struct BiasSpec {
  std::string class_a = "man";
  std::string class_b = "woman";
  int ratio_a = 5;  // training ratio A:B; evaluation splits use B:A
  int ratio_b = 1;
  int train_biased = 600;
  int train_other = 600;
  int test_biased = 120;
  int test_other = 60;
  int validation_biased = 120;
  int validation_other = 60;

  void validate(const WorldConfig& world) const;
  // {class-A count, class-B count} for `total` biased scenes at a:b.
  static std::pair<int, int> split_counts(int total, int a, int b);
};

// Token table: "<eos>", "a", "and", "." followed by object words in order of
// first appearance.
class Vocabulary {
 public:
  explicit Vocabulary(const WorldConfig& config);

  static constexpr TokenId kEos = 0;
  static constexpr TokenId kArticle = 1;
  static constexpr TokenId kAnd = 2;
  static constexpr TokenId kPeriod = 3;

  int size() const { return static_cast<int>(words_.size()); }
  const std::vector<std::string>& words() const { return words_; }
  const std::string& word(TokenId id) const { return words_.at(id); }
  TokenId id(const std::string& word) const;

  // Phrase tokens of object `index`.
  const TokenSeq& phrase(int object_index) const { return phrases_.at(object_index); }
  int num_objects() const { return static_cast<int>(phrases_.size()); }
  int num_cell_ids() const { return kFirstObjectCell + num_objects(); }
  static CellId cell_id(int object_index) { return kFirstObjectCell + object_index; }

  std::string render(std::span<const TokenId> tokens) const;

 private:
  std::vector<std::string> words_;
  std::map<std::string, TokenId> ids_;
  std::vector<TokenSeq> phrases_;
};

// Model dimensions implied by a world (vocabulary, cell ids, grid, length).
captioner::ModelConfig model_config_for(const WorldConfig& world,
                                        captioner::ModelConfig base = {});

struct SceneConstraints {
  std::vector<int> require;  // object indices that must appear
  std::vector<int> exclude;  // object indices that must not appear
};

struct GeneratedScene {
  SceneImage image;
  CaptionSample caption;
  std::vector<int> objects;  // object index per entity span
};

// Draws objects, applies the co-occurrence rules, places every object on its
// own cells and realizes the caption "a <obj> and a <obj> ... ." in
// row-major order of each object's first cell.
GeneratedScene generate_scene(const WorldConfig& config, const Vocabulary& vocab, Rng& rng,
                              const SceneConstraints& constraints = {});

// Factual image with the span's cells replaced by the mask id.
SceneImage build_counterfactual(const SceneImage& image, const CaptionSample& caption,
                                int span_index);

// Decodes a counterfactual caption with the stage-1 model. The result is
// only a mediator for effect estimation and may itself hallucinate.
TokenSeq generate_cf_caption(const captioner::CaptionModel& stage1_model,
                             const SceneImage& cf_image,
                             const captioner::DecodeConfig& decode = {});
// Checks the stage tag before decoding.
TokenSeq generate_cf_caption(const captioner::Checkpoint& stage1,
                             const SceneImage& cf_image,
                             const captioner::DecodeConfig& decode = {});

nlohmann::ordered_json world_to_json(const WorldConfig& config);
WorldConfig world_from_json(const nlohmann::json& j);
nlohmann::ordered_json bias_to_json(const BiasSpec& spec);
BiasSpec bias_from_json(const nlohmann::json& j);

// Hex FNV-1a of the canonical JSON form.
std::string config_hash(const WorldConfig& config);

}  // namespace cfcap::scenegen
