// SPDX-License-Identifier: Apache-2.0
#include "cfcap/scenegen/dataset.hpp"

#include <fstream>

namespace cfcap::scenegen {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kBiasedSeedOffset = 1ULL << 31;

std::uint64_t seed_base(const WorldConfig& config) { return config.seed << 32; }

}  // namespace

bool SceneRecord::operator==(const SceneRecord& o) const {
  return scene_seed == o.scene_seed && group == o.group &&
         sample.factual_image == o.sample.factual_image &&
         sample.factual_caption == o.sample.factual_caption && sample.target_span == o.sample.target_span &&
         sample.cf_image == o.sample.cf_image && sample.cf_caption == o.sample.cf_caption;
}

SceneRecord make_record(const WorldConfig& config, const Vocabulary& vocab, std::uint64_t scene_seed,
                        const SceneConstraints& constraints, int forced_object) {
  Rng rng(scene_seed);
  GeneratedScene scene = generate_scene(config, vocab, rng, constraints);
  int target = -1;
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    if (scene.objects[i] == forced_object) target = static_cast<int>(i);
  }
  if (target < 0) target = static_cast<int>(rng.below(scene.caption.spans.size()));

  SceneRecord r;
  r.scene_seed = scene_seed;
  r.sample.cf_image = build_counterfactual(scene.image, scene.caption, target);
  r.sample.factual_image = std::move(scene.image);
  r.sample.factual_caption = std::move(scene.caption);
  r.sample.target_span = target;
  return r;
}

Dataset build_dataset(const WorldConfig& config) {
  config.validate();
  const Vocabulary vocab(config);
  Dataset d;
  std::uint64_t next = seed_base(config);
  auto fill = [&](std::vector<SceneRecord>& split, int count) {
    split.reserve(count);
    for (int i = 0; i < count; ++i) split.push_back(make_record(config, vocab, next++));
  };
  fill(d.train, config.train_size);
  fill(d.validation, config.validation_size);
  fill(d.test, config.test_size);
  return d;
}

Dataset build_biased_split(const WorldConfig& config, const BiasSpec& bias) {
  config.validate();
  bias.validate(config);
  const Vocabulary vocab(config);
  const int a = config.object_index(bias.class_a);
  const int b = config.object_index(bias.class_b);
  std::uint64_t next = seed_base(config) + kBiasedSeedOffset;

  auto build = [&](int biased, int other, int ra, int rb, bool intervene_on_class) {
    const auto [na, nb] = BiasSpec::split_counts(biased, ra, rb);
    std::vector<std::string> groups;
    groups.insert(groups.end(), na, "A");
    groups.insert(groups.end(), nb, "B");
    groups.insert(groups.end(), other, "other");
    Rng order(next);
    order.shuffle(groups);
    std::vector<SceneRecord> out;
    out.reserve(groups.size());
    for (const auto& g : groups) {
      SceneConstraints c;
      int forced = -1;
      if (g == "A") {
        c = {{a}, {b}};
        forced = a;
      } else if (g == "B") {
        c = {{b}, {a}};
        forced = b;
      } else {
        c = {{}, {a, b}};
      }
      SceneRecord r = make_record(config, vocab, next++, c, intervene_on_class ? forced : -1);
      r.group = g;
      out.push_back(std::move(r));
    }
    return out;
  };

  Dataset d;
  d.train = build(bias.train_biased, bias.train_other, bias.ratio_a, bias.ratio_b, false);
  d.validation = build(bias.validation_biased, bias.validation_other, bias.ratio_b, bias.ratio_a, true);
  d.test = build(bias.test_biased, bias.test_other, bias.ratio_b, bias.ratio_a, true);
  return d;
}

ordered_json record_to_json(const SceneRecord& r) {
  const auto& s = r.sample;
  ordered_json j;
  j["scene_seed"] = r.scene_seed;
  j["grid"] = s.factual_image.cells();
  j["caption"] = s.factual_caption.tokens;
  ordered_json spans = ordered_json::array();
  for (const auto& sp : s.factual_caption.spans) {
    ordered_json sj;
    sj["p"] = sp.start;
    sj["len"] = sp.length;
    sj["cells"] = sp.cells;
    spans.push_back(sj);
  }
  j["spans"] = spans;
  j["target_span"] = s.target_span;
  j["cf_grid"] = s.cf_image.cells();
  j["cf_caption"] = s.cf_caption;
  if (!r.group.empty()) j["group"] = r.group;
  return j;
}

SceneRecord record_from_json(const json& j, int h, int w) {
  SceneRecord r;
  try {
    r.scene_seed = j.at("scene_seed").get<std::uint64_t>();
    r.sample.factual_image = SceneImage(h, w, j.at("grid").get<std::vector<CellId>>());
    r.sample.factual_caption.tokens = j.at("caption").get<TokenSeq>();
    for (const auto& sj : j.at("spans")) {
      r.sample.factual_caption.spans.push_back(
          EntitySpan{sj.at("p").get<int>(), sj.at("len").get<int>(), sj.at("cells").get<std::vector<int>>()});
    }
    r.sample.target_span = j.at("target_span").get<int>();
    r.sample.cf_image = SceneImage(h, w, j.at("cf_grid").get<std::vector<CellId>>());
    r.sample.cf_caption = j.at("cf_caption").get<TokenSeq>();
    r.group = j.value("group", "");
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed dataset record: ") + e.what());
  }
  return r;
}

void write_split(const std::filesystem::path& path, const std::vector<SceneRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
}

std::vector<SceneRecord> read_split(const std::filesystem::path& path, int h, int w) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  std::vector<SceneRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(record_from_json(json::parse(line), h, w));
  }
  return out;
}

namespace {

ordered_json membership(const std::string& file, const std::vector<SceneRecord>& records) {
  ordered_json j;
  j["file"] = file;
  j["count"] = records.size();
  std::vector<std::uint64_t> seeds;
  for (const auto& r : records) seeds.push_back(r.scene_seed);
  j["scene_seeds"] = seeds;
  return j;
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const DatasetBundle& b) {
  std::filesystem::create_directories(dir);
  const Vocabulary vocab(b.config);
  ordered_json splits;
  auto emit = [&](const std::string& name, const std::vector<SceneRecord>& records) {
    const std::string file = name + ".jsonl";
    write_split(dir / file, records);
    splits[name] = membership(file, records);
  };
  emit("train", b.data.train);
  emit("validation", b.data.validation);
  emit("test", b.data.test);
  if (b.biased) {
    emit("bias_train", b.biased->train);
    emit("bias_validation", b.biased->validation);
    emit("bias_test", b.biased->test);
  }

  ordered_json m;
  m["format"] = "cfcap-dataset";
  m["version"] = 1;
  m["config_hash"] = config_hash(b.config);
  m["config"] = world_to_json(b.config);
  if (b.bias) m["bias"] = bias_to_json(*b.bias);
  m["vocabulary"] = vocab.words();
  ordered_json objects = ordered_json::array();
  for (int i = 0; i < vocab.num_objects(); ++i) {
    ordered_json o;
    o["name"] = b.config.objects[i].name;
    o["cell_id"] = Vocabulary::cell_id(i);
    o["tokens"] = vocab.phrase(i);
    objects.push_back(o);
  }
  m["objects"] = objects;
  m["splits"] = splits;
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write manifest in " + dir.string());
  out << m.dump(2) << '\n';
}

DatasetBundle read_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw InputError("no manifest.json in " + dir.string());
  const json m = json::parse(in);
  DatasetBundle b;
  b.config = world_from_json(m.at("config"));
  if (m.value("config_hash", "") != config_hash(b.config)) {
    throw InputError("manifest config_hash does not match its config");
  }
  const int h = b.config.grid_height, w = b.config.grid_width;
  const auto& splits = m.at("splits");
  auto load = [&](const std::string& name) { return read_split(dir / splits.at(name).at("file").get<std::string>(), h, w); };
  b.data.train = load("train");
  b.data.validation = load("validation");
  b.data.test = load("test");
  if (m.contains("bias")) {
    b.bias = bias_from_json(m.at("bias"));
    b.biased = Dataset{load("bias_train"), load("bias_validation"), load("bias_test")};
  }
  return b;
}

void attach_cf_captions(const captioner::CaptionModel& stage1_model, std::vector<SceneRecord>& records,
                        const captioner::DecodeConfig& decode) {
  for (auto& r : records) r.sample.cf_caption = generate_cf_caption(stage1_model, r.sample.cf_image, decode);
}

std::vector<CounterfactualSample> samples_of(const std::vector<SceneRecord>& records) {
  std::vector<CounterfactualSample> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.sample);
  return out;
}

}  // namespace cfcap::scenegen
