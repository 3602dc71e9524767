// SPDX-License-Identifier: Apache-2.0
#include "cfcap/scenegen/world.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

namespace cfcap::scenegen {

using nlohmann::json;
using nlohmann::ordered_json;

WorldConfig WorldConfig::shortcut_world() {
  WorldConfig c;
  c.objects = {
      {"man", {"man"}, 1},         {"woman", {"woman"}, 1},
      {"river", {"river"}, 2},     {"boat", {"boat"}, 1},
      {"dog", {"black", "dog"}, 1}, {"tree", {"tree"}, 2},
      {"car", {"red", "car"}, 2},  {"people", {"group", "of", "people"}, 3},
      {"horse", {"horse"}, 2},     {"bicycle", {"bicycle"}, 1},
      {"table", {"table"}, 2},     {"chair", {"chair"}, 1},
  };
  c.co_occurrences = {{"river", "man", 0.9}, {"table", "chair", 0.9}};
  return c;
}

int WorldConfig::object_index(const std::string& name) const {
  for (std::size_t i = 0; i < objects.size(); ++i) {
    if (objects[i].name == name) return static_cast<int>(i);
  }
  throw ConfigError("unknown object '" + name + "'");
}

void WorldConfig::validate() const {
  if (grid_height <= 0 || grid_width <= 0) throw ConfigError("world.grid: dimensions must be positive");
  if (objects.empty()) throw ConfigError("world.objects: at least one object is required");
  std::set<std::string> names;
  std::set<std::vector<std::string>> surfaces;
  for (const auto& o : objects) {
    if (o.name.empty()) throw ConfigError("world.objects: empty object name");
    if (!names.insert(o.name).second) throw ConfigError("world.objects: duplicate object '" + o.name + "'");
    if (o.words.empty()) throw ConfigError("world.objects." + o.name + ".words: empty phrase");
    if (!surfaces.insert(o.words).second) {
      throw ConfigError("world.objects." + o.name + ".words: duplicate surface form");
    }
    for (const auto& w : o.words) {
      if (w == "<eos>" || w == "a" || w == "and" || w == ".") {
        throw ConfigError("world.objects." + o.name + ".words: '" + w + "' is reserved");
      }
    }
    if (o.cells < 1) throw ConfigError("world.objects." + o.name + ".cells must be >= 1");
  }
  std::set<std::string> triggers, companions;
  for (const auto& r : co_occurrences) {
    object_index(r.trigger);
    object_index(r.companion);
    if (r.trigger == r.companion) throw ConfigError("world.co_occurrences: trigger equals companion");
    if (!(r.rho >= 0.0 && r.rho <= 1.0)) throw ConfigError("world.co_occurrences.rho must lie in [0, 1]");
    triggers.insert(r.trigger);
    if (!companions.insert(r.companion).second) {
      throw ConfigError("world.co_occurrences: companion '" + r.companion + "' used twice");
    }
  }
  for (const auto& c : companions) {
    if (triggers.count(c)) throw ConfigError("world.co_occurrences: '" + c + "' is both trigger and companion");
  }
  const int n = static_cast<int>(objects.size());
  if (min_objects < 1) throw ConfigError("world.min_objects must be >= 1");
  if (max_objects < min_objects) throw ConfigError("world.max_objects must be >= world.min_objects");
  if (max_objects > n) throw ConfigError("world.max_objects exceeds the number of objects");
  if (max_total_objects < max_objects) throw ConfigError("world.max_total_objects must be >= world.max_objects");
  if (train_size <= 0 || validation_size <= 0 || test_size <= 0) {
    throw ConfigError("world split sizes must be positive");
  }

  // Worst case over the largest objects.
  std::vector<int> sizes, lengths;
  for (const auto& o : objects) {
    sizes.push_back(o.cells);
    lengths.push_back(static_cast<int>(o.words.size()));
  }
  std::sort(sizes.rbegin(), sizes.rend());
  std::sort(lengths.rbegin(), lengths.rend());
  const int k = std::min(max_total_objects, n);
  const int cells = std::accumulate(sizes.begin(), sizes.begin() + k, 0);
  if (cells > grid_height * grid_width) {
    throw ConfigError("world.grid: " + std::to_string(grid_height) + "x" + std::to_string(grid_width) +
                      " grid too small for " + std::to_string(k) + " objects");
  }
  const int caption = std::accumulate(lengths.begin(), lengths.begin() + k, 0) + k + (k - 1) + 2;
  if (caption > max_caption_length) {
    throw ConfigError("world.max_caption_length: worst-case caption has " + std::to_string(caption) + " tokens");
  }
}

void BiasSpec::validate(const WorldConfig& world) const {
  const int a = world.object_index(class_a);
  const int b = world.object_index(class_b);
  if (a == b) throw ConfigError("bias: class_a and class_b must differ");
  if (ratio_a <= 0 || ratio_b <= 0) throw ConfigError("bias: ratios must be positive");
  auto check = [&](int total, int ra, int rb, const char* name) {
    if (total <= 0) throw ConfigError(std::string("bias.") + name + " must be positive");
    split_counts(total, ra, rb);
  };
  check(train_biased, ratio_a, ratio_b, "train_biased");
  check(test_biased, ratio_b, ratio_a, "test_biased");
  check(validation_biased, ratio_b, ratio_a, "validation_biased");
  if (train_other < 0 || test_other < 0 || validation_other < 0) {
    throw ConfigError("bias: 'other' counts must be non-negative");
  }
}

std::pair<int, int> BiasSpec::split_counts(int total, int a, int b) {
  if ((static_cast<long long>(total) * a) % (a + b) != 0) {
    throw ConfigError("bias: " + std::to_string(total) + " scenes cannot be split exactly at " +
                      std::to_string(a) + ":" + std::to_string(b));
  }
  const int na = static_cast<int>(static_cast<long long>(total) * a / (a + b));
  return {na, total - na};
}

Vocabulary::Vocabulary(const WorldConfig& config) {
  words_ = {"<eos>", "a", "and", "."};
  for (std::size_t i = 0; i < words_.size(); ++i) ids_[words_[i]] = static_cast<TokenId>(i);
  for (const auto& o : config.objects) {
    TokenSeq phrase;
    for (const auto& w : o.words) {
      auto [it, inserted] = ids_.try_emplace(w, static_cast<TokenId>(words_.size()));
      if (inserted) words_.push_back(w);
      phrase.push_back(it->second);
    }
    phrases_.push_back(std::move(phrase));
  }
}

TokenId Vocabulary::id(const std::string& word) const {
  auto it = ids_.find(word);
  if (it == ids_.end()) throw InputError("unknown word '" + word + "'");
  return it->second;
}

std::string Vocabulary::render(std::span<const TokenId> tokens) const {
  std::string out;
  for (TokenId t : tokens) {
    if (!out.empty()) out += ' ';
    out += (t >= 0 && t < size()) ? words_[t] : "<unk>";
  }
  return out;
}

captioner::ModelConfig model_config_for(const WorldConfig& world, captioner::ModelConfig base) {
  const Vocabulary vocab(world);
  base.vocab_size = vocab.size();
  base.eos_token = Vocabulary::kEos;
  base.num_cell_ids = vocab.num_cell_ids();
  base.grid_height = world.grid_height;
  base.grid_width = world.grid_width;
  base.max_length = world.max_caption_length;
  base.validate();
  return base;
}

namespace {

bool contains(const std::vector<int>& v, int x) { return std::find(v.begin(), v.end(), x) != v.end(); }

void erase_value(std::vector<int>& v, int x) { v.erase(std::remove(v.begin(), v.end(), x), v.end()); }

// Adds `obj`, evicting the most recently drawn unprotected object when full.
void ensure_present(std::vector<int>& chosen, int obj, int capacity, const std::vector<int>& protect) {
  if (contains(chosen, obj)) return;
  if (static_cast<int>(chosen.size()) < capacity) {
    chosen.push_back(obj);
    return;
  }
  for (auto it = chosen.rbegin(); it != chosen.rend(); ++it) {
    if (!contains(protect, *it)) {
      *it = obj;
      return;
    }
  }
  throw ConfigError("world: cannot fit required objects into max_total_objects");
}

std::vector<int> place_object(int size, int height, int width, std::vector<char>& used, Rng& rng) {
  std::vector<std::vector<int>> candidates;
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      if (c + size <= width) {
        std::vector<int> strip;
        for (int k = 0; k < size; ++k) strip.push_back(r * width + c + k);
        if (std::none_of(strip.begin(), strip.end(), [&](int i) { return used[i]; })) candidates.push_back(strip);
      }
      if (size > 1 && r + size <= height) {
        std::vector<int> strip;
        for (int k = 0; k < size; ++k) strip.push_back((r + k) * width + c);
        if (std::none_of(strip.begin(), strip.end(), [&](int i) { return used[i]; })) candidates.push_back(strip);
      }
    }
  }
  std::vector<int> cells;
  if (!candidates.empty()) {
    cells = candidates[rng.below(candidates.size())];
  } else {
    std::vector<int> free;
    for (int i = 0; i < height * width; ++i) {
      if (!used[i]) free.push_back(i);
    }
    if (static_cast<int>(free.size()) < size) throw ConfigError("world.grid: grid too small for requested objects");
    rng.shuffle(free);
    cells.assign(free.begin(), free.begin() + size);
    std::sort(cells.begin(), cells.end());
  }
  for (int i : cells) used[i] = 1;
  return cells;
}

}  // namespace

GeneratedScene generate_scene(const WorldConfig& config, const Vocabulary& vocab, Rng& rng,
                              const SceneConstraints& constraints) {
  const int n = static_cast<int>(config.objects.size());
  for (int x : constraints.require) {
    if (x < 0 || x >= n) throw ConfigError("scene constraint: invalid object index");
    if (contains(constraints.exclude, x)) throw ConfigError("scene constraint: object both required and excluded");
  }

  const int k = static_cast<int>(rng.between(config.min_objects, config.max_objects));
  std::vector<int> chosen = constraints.require;
  std::vector<int> pool;
  for (int i = 0; i < n; ++i) {
    if (!contains(constraints.exclude, i) && !contains(chosen, i)) pool.push_back(i);
  }
  while (static_cast<int>(chosen.size()) < k && !pool.empty()) {
    const auto pick = rng.below(pool.size());
    chosen.push_back(pool[pick]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
  }

  std::vector<int> protect = constraints.require;
  for (const auto& rule : config.co_occurrences) {
    const int trig = config.object_index(rule.trigger);
    const int comp = config.object_index(rule.companion);
    if (!contains(chosen, trig)) continue;
    protect.push_back(trig);
    if (rng.bernoulli(rule.rho)) {
      if (contains(constraints.exclude, comp)) continue;
      protect.push_back(comp);
      ensure_present(chosen, comp, config.max_total_objects, protect);
    } else {
      erase_value(chosen, comp);
    }
  }
  for (int x : constraints.exclude) erase_value(chosen, x);
  for (int x : constraints.require) ensure_present(chosen, x, config.max_total_objects, protect);

  // Place objects in draw order.
  const int h = config.grid_height, w = config.grid_width;
  std::vector<char> used(static_cast<std::size_t>(h) * w, 0);
  std::vector<std::pair<int, std::vector<int>>> placed;
  for (int obj : chosen) placed.emplace_back(obj, place_object(config.objects[obj].cells, h, w, used, rng));
  std::sort(placed.begin(), placed.end(),
            [](const auto& a, const auto& b) { return a.second.front() < b.second.front(); });

  GeneratedScene scene;
  scene.image = SceneImage::blank(h, w);
  for (const auto& [obj, cells] : placed) {
    for (int c : cells) scene.image.set(c, Vocabulary::cell_id(obj));
    if (!scene.caption.tokens.empty()) scene.caption.tokens.push_back(Vocabulary::kAnd);
    scene.caption.tokens.push_back(Vocabulary::kArticle);
    const TokenSeq& phrase = vocab.phrase(obj);
    scene.caption.spans.push_back(
        EntitySpan{static_cast<int>(scene.caption.tokens.size()), static_cast<int>(phrase.size()), cells});
    scene.caption.tokens.insert(scene.caption.tokens.end(), phrase.begin(), phrase.end());
    scene.objects.push_back(obj);
  }
  scene.caption.tokens.push_back(Vocabulary::kPeriod);
  scene.caption.tokens.push_back(Vocabulary::kEos);
  return scene;
}

SceneImage build_counterfactual(const SceneImage& image, const CaptionSample& caption, int span_index) {
  if (span_index < 0 || span_index >= static_cast<int>(caption.spans.size())) {
    throw InputError("build_counterfactual: span index " + std::to_string(span_index) + " out of range");
  }
  return image.masked(caption.spans[span_index].cells);
}

TokenSeq generate_cf_caption(const captioner::CaptionModel& stage1_model, const SceneImage& cf_image,
                             const captioner::DecodeConfig& decode) {
  return captioner::decode(stage1_model, cf_image, decode);
}

TokenSeq generate_cf_caption(const captioner::Checkpoint& stage1, const SceneImage& cf_image,
                             const captioner::DecodeConfig& decode) {
  if (stage1.stage != "stage1") {
    throw InputError("counterfactual captions require a stage-1 checkpoint, got '" + stage1.stage + "'");
  }
  return generate_cf_caption(captioner::NeuralCaptioner(stage1.params), cf_image, decode);
}

ordered_json world_to_json(const WorldConfig& c) {
  ordered_json j;
  j["grid_height"] = c.grid_height;
  j["grid_width"] = c.grid_width;
  ordered_json objs = ordered_json::array();
  for (const auto& o : c.objects) {
    ordered_json oj;
    oj["name"] = o.name;
    oj["words"] = o.words;
    oj["cells"] = o.cells;
    objs.push_back(oj);
  }
  j["objects"] = objs;
  ordered_json rules = ordered_json::array();
  for (const auto& r : c.co_occurrences) {
    ordered_json rj;
    rj["trigger"] = r.trigger;
    rj["companion"] = r.companion;
    rj["rho"] = r.rho;
    rules.push_back(rj);
  }
  j["co_occurrences"] = rules;
  j["min_objects"] = c.min_objects;
  j["max_objects"] = c.max_objects;
  j["max_total_objects"] = c.max_total_objects;
  j["max_caption_length"] = c.max_caption_length;
  j["train_size"] = c.train_size;
  j["validation_size"] = c.validation_size;
  j["test_size"] = c.test_size;
  j["seed"] = c.seed;
  return j;
}

namespace {

template <typename T>
void read_field(const json& j, const char* section, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(section) + "." + key + ": wrong type");
  }
}

}  // namespace

WorldConfig world_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("world: expected an object");
  WorldConfig c = WorldConfig::shortcut_world();
  read_field(j, "world", "grid_height", c.grid_height);
  read_field(j, "world", "grid_width", c.grid_width);
  if (j.contains("objects")) {
    c.objects.clear();
    for (const auto& oj : j.at("objects")) {
      ObjectSpec o;
      try {
        o.name = oj.at("name").get<std::string>();
        o.words = oj.at("words").get<std::vector<std::string>>();
        o.cells = oj.value("cells", 1);
      } catch (const json::exception&) {
        throw ConfigError("world.objects: each object needs name, words and cells");
      }
      c.objects.push_back(o);
    }
  }
  if (j.contains("co_occurrences")) {
    c.co_occurrences.clear();
    for (const auto& rj : j.at("co_occurrences")) {
      CoOccurrence r;
      try {
        r.trigger = rj.at("trigger").get<std::string>();
        r.companion = rj.at("companion").get<std::string>();
        r.rho = rj.at("rho").get<double>();
      } catch (const json::exception&) {
        throw ConfigError("world.co_occurrences: each rule needs trigger, companion and rho");
      }
      c.co_occurrences.push_back(r);
    }
  }
  read_field(j, "world", "min_objects", c.min_objects);
  read_field(j, "world", "max_objects", c.max_objects);
  read_field(j, "world", "max_total_objects", c.max_total_objects);
  read_field(j, "world", "max_caption_length", c.max_caption_length);
  read_field(j, "world", "train_size", c.train_size);
  read_field(j, "world", "validation_size", c.validation_size);
  read_field(j, "world", "test_size", c.test_size);
  read_field(j, "world", "seed", c.seed);
  c.validate();
  return c;
}

ordered_json bias_to_json(const BiasSpec& b) {
  ordered_json j;
  j["class_a"] = b.class_a;
  j["class_b"] = b.class_b;
  j["ratio_a"] = b.ratio_a;
  j["ratio_b"] = b.ratio_b;
  j["train_biased"] = b.train_biased;
  j["train_other"] = b.train_other;
  j["test_biased"] = b.test_biased;
  j["test_other"] = b.test_other;
  j["validation_biased"] = b.validation_biased;
  j["validation_other"] = b.validation_other;
  return j;
}

BiasSpec bias_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("bias: expected an object");
  BiasSpec b;
  read_field(j, "bias", "class_a", b.class_a);
  read_field(j, "bias", "class_b", b.class_b);
  read_field(j, "bias", "ratio_a", b.ratio_a);
  read_field(j, "bias", "ratio_b", b.ratio_b);
  read_field(j, "bias", "train_biased", b.train_biased);
  read_field(j, "bias", "train_other", b.train_other);
  read_field(j, "bias", "test_biased", b.test_biased);
  read_field(j, "bias", "test_other", b.test_other);
  read_field(j, "bias", "validation_biased", b.validation_biased);
  read_field(j, "bias", "validation_other", b.validation_other);
  return b;
}

std::string config_hash(const WorldConfig& config) { return hex64(fnv1a64(world_to_json(config).dump())); }

}  // namespace cfcap::scenegen
