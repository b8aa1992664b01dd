#include "advml/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

#include "advml/container.hpp"
#include "advml/data_io.hpp"
#include "json.hpp"

namespace advml {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string g17(double v) { return fmt("%.17g", v); }

// Walks one JSON object, remembering which keys were consumed so leftovers
// can be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const Json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(where() + "expected an object");
  }

  const Json* find(const std::string& key) {
    known_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  void read(const std::string& key, double& out) {
    if (const Json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(field(key) + "expected a number");
      out = v->get<double>();
    }
  }

  void read(const std::string& key, std::optional<double>& out) {
    if (const Json* v = find(key)) {
      if (v->is_null()) {
        out.reset();
        return;
      }
      if (!v->is_number()) throw ConfigError(field(key) + "expected a number or null");
      out = v->get<double>();
    }
  }

  template <typename U>
    requires std::is_unsigned_v<U>
  void read(const std::string& key, U& out) {
    if (const Json* v = find(key)) {
      if (!v->is_number_unsigned()) throw ConfigError(field(key) + "expected a non-negative integer");
      out = v->get<U>();
    }
  }

  void read(const std::string& key, bool& out) {
    if (const Json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(field(key) + "expected true or false");
      out = v->get<bool>();
    }
  }

  void read(const std::string& key, std::string& out) {
    if (const Json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(field(key) + "expected a string");
      out = v->get<std::string>();
    }
  }

  std::string field(const std::string& key) const { return path_ + "." + key + ": "; }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!known_.contains(it.key())) throw ConfigError(path_ + "." + it.key() + ": unknown key");
    }
  }

 private:
  std::string where() const { return path_ + ": "; }

  const Json& obj_;
  std::string path_;
  std::set<std::string> known_;
};

constexpr const char* kThresholdKeys[] = {"min_accuracy",       "max_accuracy",       "min_auroc", "max_auroc",
                                          "min_avg_confidence", "max_avg_confidence", "max_accuracy_vs_clean"};

std::optional<double>& threshold_slot(ConditionThresholds& t, std::string_view key) {
  if (key == "min_accuracy") return t.min_accuracy;
  if (key == "max_accuracy") return t.max_accuracy;
  if (key == "min_auroc") return t.min_auroc;
  if (key == "max_auroc") return t.max_auroc;
  if (key == "min_avg_confidence") return t.min_avg_confidence;
  if (key == "max_avg_confidence") return t.max_avg_confidence;
  return t.max_accuracy_vs_clean;
}

const std::optional<double>& threshold_slot(const ConditionThresholds& t, std::string_view key) {
  return threshold_slot(const_cast<ConditionThresholds&>(t), key);
}

bool known_condition(std::string_view name) {
  return std::find(std::begin(kConditionOrder), std::end(kConditionOrder), name) != std::end(kConditionOrder);
}

Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

Json train_json(const TrainSection& t) {
  const TrainConfig& c = t.config;
  return Json{{"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate},
              {"momentum", c.momentum},
              {"augmentation",
               {{"rotate", c.augmentation.rotate},
                {"hflip", c.augmentation.hflip},
                {"vflip", c.augmentation.vflip},
                {"mixup", c.augmentation.mixup}}},
              {"mixup_alpha", c.mixup_alpha},
              {"seed", c.seed},
              {"surrogate_seed_offset", t.surrogate_seed_offset}};
}

Json config_json(const RunConfig& c) {
  Json thresholds = Json::object();
  for (std::string_view name : kConditionOrder) {
    auto it = c.report.thresholds.find(std::string(name));
    if (it == c.report.thresholds.end()) continue;
    Json row = Json::object();
    for (const char* key : kThresholdKeys) {
      if (const auto& v = threshold_slot(it->second, key)) row[key] = *v;
    }
    thresholds[std::string(name)] = row;
  }
  return Json{
      {"data",
       {{"source", c.data.source},
        {"directory", c.data.directory},
        {"n_patients", c.data.n_patients},
        {"images_per_patient", c.data.images_per_patient},
        {"test_fraction", c.data.test_fraction},
        {"seed", c.data.seed}}},
      {"train", train_json(c.train)},
      {"attack",
       {{"epsilon", c.attack.pgd.ball.epsilon},
        {"iterations", c.attack.pgd.iterations},
        {"step_size", optional_json(c.attack.pgd.step_size)},
        {"effective_step_size", c.attack.pgd.effective_step()},
        {"targeted", c.attack.pgd.targeted},
        {"random_start", c.attack.pgd.random_start},
        {"patch",
         {{"scale", c.attack.patch.scale},
          {"steps", c.attack.patch.steps},
          {"step_size", c.attack.patch.step_size},
          {"batch", c.attack.patch.batch},
          {"momentum", c.attack.patch.momentum}}},
        {"seed", c.attack.seed},
        {"threads", c.attack.threads}}},
      {"report",
       {{"output_dir", c.report.output_dir},
        {"thresholds", thresholds},
        {"check_patch_ordering", c.report.check_patch_ordering}}}};
}

std::string sha_hex(const fs::path& p) { return file_digest_hex(p); }

void write_metadata(const fs::path& out, const std::string& command, const RunConfig& config, Json seeds,
                    Json inputs, Json extra = Json::object()) {
  Json meta{{"command", command},
            {"config", config_json(config)},
            {"seeds", std::move(seeds)},
            {"inputs", std::move(inputs)}};
  for (auto it = extra.begin(); it != extra.end(); ++it) meta[it.key()] = it.value();
  write_text_file(out / kMetadataFile, meta.dump(2) + "\n");
}

std::string label_counts(const Dataset& ds) {
  return std::to_string(ds.count_label(0)) + " healthy, " + std::to_string(ds.count_label(1)) + " diseased";
}

std::size_t patient_count(const Dataset& ds) {
  std::set<std::string> ids;
  for (const auto& im : ds.images) ids.insert(im.patient_id);
  return ids.size();
}

std::string image_extension(const Tensor& pixels) { return pixels.shape()[0] == 3 ? ".ppm" : ".pgm"; }

// Writes one condition directory: images/, manifest.csv, manifest.json.
void write_condition(const fs::path& dir, const std::string& condition, const Dataset& source,
                     std::span<const Tensor> images, Json header, const std::vector<Json>& per_image) {
  std::vector<ManifestRow> rows;
  Json entries = Json::array();
  for (std::size_t i = 0; i < source.size(); ++i) {
    const LabeledImage& im = source.images[i];
    const std::string rel = "images/" + im.image_id + image_extension(images[i]);
    save_image(dir / rel, images[i]);
    rows.push_back({im.image_id, im.patient_id, im.label, rel});
    Json e{{"image_id", im.image_id},
           {"source", source.paths[i]},
           {"output", rel},
           {"label", im.label},
           {"condition", condition}};
    for (auto it = header.begin(); it != header.end(); ++it) {
      if (it.key() == "epsilon" || it.key() == "seed") e[it.key()] = it.value();
    }
    if (i < per_image.size()) {
      for (auto it = per_image[i].begin(); it != per_image[i].end(); ++it) e[it.key()] = it.value();
    }
    entries.push_back(std::move(e));
  }
  save_manifest(dir / "manifest.csv", rows);
  Json doc{{"condition", condition}};
  for (auto it = header.begin(); it != header.end(); ++it) doc[it.key()] = it.value();
  doc["images"] = std::move(entries);
  write_text_file(dir / "manifest.json", doc.dump(2) + "\n");
}

Json placement_json(const PlacementTransform& p, const std::string& patch_file) {
  return Json{{"patch",
               {{"file", patch_file},
                {"row", p.row},
                {"col", p.col},
                {"quarter_turns", p.quarter_turns},
                {"scale", p.scale}}}};
}

void save_patch(const fs::path& dir, const std::string& stem, const Patch& patch, Json metadata) {
  const std::size_t side = patch.pixels.shape()[1];
  TensorContainer c;
  c.descriptor = "patch side=" + std::to_string(side) + " channels=" + std::to_string(patch.pixels.shape()[0]) +
                 " scale=" + g17(patch.scale) + " target=" + std::to_string(patch.target_label);
  c.tensors.push_back(patch.pixels);
  metadata["target_label"] = patch.target_label;
  metadata["scale"] = patch.scale;
  c.metadata = metadata.dump();
  write_container(dir / (stem + ".amf"), c);
  save_image(dir / (stem + image_extension(patch.pixels)), patch.pixels);
}

Dataset load_split(const fs::path& data_dir, const char* name, SplitTag tag) {
  return load_dataset(data_dir / name, tag);
}

std::vector<Tensor> pixels_of(const Dataset& ds) {
  std::vector<Tensor> out;
  out.reserve(ds.size());
  for (const auto& im : ds.images) out.push_back(im.pixels);
  return out;
}

}  // namespace

// --- RunConfig ----------------------------------------------------------------

RunConfig RunConfig::defaults() {
  RunConfig c;
  auto& t = c.report.thresholds;
  t["Clean"].min_accuracy = 0.90;
  t["Clean"].min_auroc = 0.90;
  t["PGD-White"].max_accuracy = 0.01;
  t["PGD-White"].max_auroc = 0.05;
  t["PGD-White"].min_avg_confidence = 0.90;
  t["PGD-Black"].max_accuracy_vs_clean = 0.5;
  t["PGD-Black"].max_auroc = 0.30;
  t["Patch-Natural"].min_auroc = 0.30;
  t["Patch-Natural"].max_auroc = 0.90;
  t["Patch-White"].max_accuracy = 0.02;
  t["Patch-White"].max_auroc = 0.05;
  t["Patch-Black"].max_accuracy = 0.15;
  c.attack.pgd.seed = c.attack.seed;
  c.attack.patch.seed = c.attack.seed;
  return c;
}

RunConfig RunConfig::parse(std::string_view json_text) {
  Json root;
  try {
    root = Json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c = defaults();
  ObjectReader top(root, "config");

  if (const Json* d = top.find("data")) {
    ObjectReader r(*d, "data");
    r.read("source", c.data.source);
    r.read("directory", c.data.directory);
    r.read("n_patients", c.data.n_patients);
    r.read("images_per_patient", c.data.images_per_patient);
    r.read("test_fraction", c.data.test_fraction);
    r.read("seed", c.data.seed);
    r.finish();
  }
  if (const Json* t = top.find("train")) {
    ObjectReader r(*t, "train");
    TrainConfig& tc = c.train.config;
    r.read("epochs", tc.epochs);
    r.read("batch_size", tc.batch_size);
    r.read("learning_rate", tc.learning_rate);
    r.read("momentum", tc.momentum);
    r.read("mixup_alpha", tc.mixup_alpha);
    r.read("seed", tc.seed);
    r.read("surrogate_seed_offset", c.train.surrogate_seed_offset);
    if (const Json* a = r.find("augmentation")) {
      ObjectReader ar(*a, "train.augmentation");
      ar.read("rotate", tc.augmentation.rotate);
      ar.read("hflip", tc.augmentation.hflip);
      ar.read("vflip", tc.augmentation.vflip);
      ar.read("mixup", tc.augmentation.mixup);
      ar.finish();
    }
    r.finish();
  }
  if (const Json* a = top.find("attack")) {
    ObjectReader r(*a, "attack");
    r.read("epsilon", c.attack.pgd.ball.epsilon);
    r.read("iterations", c.attack.pgd.iterations);
    r.read("step_size", c.attack.pgd.step_size);
    r.read("targeted", c.attack.pgd.targeted);
    r.read("random_start", c.attack.pgd.random_start);
    r.read("seed", c.attack.seed);
    r.read("threads", c.attack.threads);
    if (const Json* p = r.find("patch")) {
      ObjectReader pr(*p, "attack.patch");
      pr.read("scale", c.attack.patch.scale);
      pr.read("steps", c.attack.patch.steps);
      pr.read("step_size", c.attack.patch.step_size);
      pr.read("batch", c.attack.patch.batch);
      pr.read("momentum", c.attack.patch.momentum);
      pr.finish();
    }
    // Derived value echoed by to_json; accepted so a resolved config reloads.
    r.find("effective_step_size");
    r.finish();
  }
  if (const Json* rep = top.find("report")) {
    ObjectReader r(*rep, "report");
    r.read("output_dir", c.report.output_dir);
    r.read("check_patch_ordering", c.report.check_patch_ordering);
    if (const Json* th = r.find("thresholds")) {
      if (!th->is_object()) throw ConfigError("report.thresholds: expected an object");
      c.report.thresholds.clear();
      for (auto it = th->begin(); it != th->end(); ++it) {
        if (!known_condition(it.key())) {
          throw ConfigError("report.thresholds." + it.key() + ": unknown condition");
        }
        ObjectReader tr(it.value(), "report.thresholds." + it.key());
        ConditionThresholds bounds;
        for (const char* key : kThresholdKeys) tr.read(key, threshold_slot(bounds, key));
        tr.finish();
        c.report.thresholds[it.key()] = bounds;
      }
    }
    r.finish();
  }
  top.finish();
  c.attack.pgd.seed = c.attack.seed;
  c.attack.patch.seed = c.attack.seed;
  c.validate();
  return c;
}

RunConfig RunConfig::load(const fs::path& path) { return parse(read_text_file(path)); }

std::string RunConfig::to_json() const { return config_json(*this).dump(2) + "\n"; }

void RunConfig::validate() const {
  if (data.source != "synthetic" && data.source != "directory") {
    throw ConfigError("data.source: expected \"synthetic\" or \"directory\", got \"" + data.source + "\"");
  }
  if (data.source == "directory" && data.directory.empty()) {
    throw ConfigError("data.directory: required when data.source is \"directory\"");
  }
  if (data.n_patients < 2) throw ConfigError("data.n_patients: need at least 2");
  if (data.images_per_patient < 1) throw ConfigError("data.images_per_patient: need at least 1");
  if (!(data.test_fraction > 0.0 && data.test_fraction < 1.0)) {
    throw ConfigError("data.test_fraction: must lie in (0, 1)");
  }
  try {
    train.config.validate();
  } catch (const ValueError& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  try {
    attack.pgd.validate();
    attack.patch.validate();
  } catch (const ValueError& e) {
    throw ConfigError(std::string("attack: ") + e.what());
  }
  if (attack.threads < 1) throw ConfigError("attack.threads: need at least 1");
  for (const auto& [name, t] : report.thresholds) {
    for (const char* key : kThresholdKeys) {
      const auto& v = threshold_slot(t, key);
      const bool ratio = std::string_view(key) == "max_accuracy_vs_clean";
      if (v && !(*v >= 0.0 && (ratio || *v <= 1.0))) {
        throw ConfigError("report.thresholds." + name + "." + key + (ratio ? ": must be >= 0" : ": must lie in [0, 1]"));
      }
    }
  }
}

std::string_view to_string(Role role) noexcept { return role == Role::victim ? "victim" : "surrogate"; }

Role parse_role(std::string_view text) {
  if (text == "victim") return Role::victim;
  if (text == "surrogate") return Role::surrogate;
  throw ConfigError("role: expected victim or surrogate, got \"" + std::string(text) + "\"");
}

std::uint64_t role_seed(const RunConfig& config, Role role) {
  const std::uint64_t seed = config.train.config.seed;
  return role == Role::victim ? seed : seed + config.train.surrogate_seed_offset;
}

// --- gen-data -------------------------------------------------------------------

GenDataResult cmd_gen_data(const RunConfig& config, const fs::path& out) {
  config.validate();
  Dataset ds;
  Json inputs = Json::object();
  if (config.data.source == "synthetic") {
    ds = generate_synthetic(config.data.n_patients, config.data.images_per_patient, config.data.seed);
  } else {
    const fs::path manifest = fs::path(config.data.directory) / "manifest.csv";
    ds = load_dataset(manifest);
    inputs["manifest"] = sha_hex(manifest);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      ds.paths[i] = "images/" + ds.images[i].image_id + image_extension(ds.images[i].pixels);
    }
  }
  for (auto& im : ds.images) im.pixels = quantize(im.pixels);

  // A degenerate split is retried with the next seed.
  std::uint64_t split_seed = config.data.seed;
  std::pair<Dataset, Dataset> sides;
  for (int attempt = 0;; ++attempt) {
    try {
      sides = split_by_patient(ds, config.data.test_fraction, split_seed);
      break;
    } catch (const ValueError&) {
      if (attempt == 99) throw;
      ++split_seed;
    }
  }
  const auto& [train_set, test_set] = sides;

  save_dataset(out, ds, "manifest.csv");
  const auto train_rows = train_set.manifest();
  const auto test_rows = test_set.manifest();
  save_manifest(out / "train.csv", train_rows);
  save_manifest(out / "test.csv", test_rows);

  GenDataResult r;
  r.train_images = train_set.size();
  r.test_images = test_set.size();
  r.train_by_label = {train_set.count_label(0), train_set.count_label(1)};
  r.test_by_label = {test_set.count_label(0), test_set.count_label(1)};
  std::ostringstream s;
  s << ds.size() << " images from " << patient_count(ds) << " patients (" << config.data.source << ")\n"
    << "split by patient, train/test probability " << fmt("%.2f", 1.0 - config.data.test_fraction) << "/"
    << fmt("%.2f", config.data.test_fraction) << ", split seed " << split_seed << "\n"
    << "train: " << train_set.size() << " images, " << patient_count(train_set) << " patients ("
    << label_counts(train_set) << ")\n"
    << "test:  " << test_set.size() << " images, " << patient_count(test_set) << " patients ("
    << label_counts(test_set) << ")\n";
  r.summary = s.str();

  write_metadata(out, "gen-data", config, Json{{"data_seed", config.data.seed}, {"split_seed", split_seed}},
                 inputs,
                 Json{{"outputs",
                       {{"manifest.csv", sha_hex(out / "manifest.csv")},
                        {"train.csv", sha_hex(out / "train.csv")},
                        {"test.csv", sha_hex(out / "test.csv")}}}});
  return r;
}

// --- train ----------------------------------------------------------------------

TrainResult cmd_train(const RunConfig& config, const fs::path& data_dir, Role role, const fs::path& out) {
  config.validate();
  const Dataset train_set = load_split(data_dir, "train.csv", SplitTag::train);
  const Dataset test_set = load_split(data_dir, "test.csv", SplitTag::test);
  const std::vector<Tensor> test_pixels = pixels_of(test_set);
  const std::vector<int> test_labels = all_labels(test_set);

  TrainConfig tc = config.train.config;
  tc.seed = role_seed(config, role);

  TrainResult result;
  std::string log = "epoch,loss,test_accuracy\n";
  const ClassifierModel model = train(train_set, tc, [&](const EpochStats& s, const ClassifierModel& m) {
    const double acc = accuracy(predict_images(m, test_pixels), test_labels);
    result.epochs.push_back(s);
    result.test_accuracy.push_back(acc);
    log += std::to_string(s.epoch) + "," + g17(s.mean_loss) + "," + g17(acc) + "\n";
  });

  const Json inputs{{"train.csv", sha_hex(data_dir / "train.csv")}, {"test.csv", sha_hex(data_dir / "test.csv")}};
  Json meta{{"role", std::string(to_string(role))},
            {"training_seed", tc.seed},
            {"train", train_json(config.train)},
            {"inputs", inputs}};
  result.checkpoint = out / "model.amf";
  model.save(result.checkpoint, meta.dump());
  write_text_file(out / "train_log.csv", log);
  write_metadata(out, "train", config, Json{{"role", std::string(to_string(role))}, {"training_seed", tc.seed}},
                 inputs, Json{{"outputs", {{"model.amf", sha_hex(result.checkpoint)}}}});
  return result;
}

// --- attack ---------------------------------------------------------------------

const std::vector<std::string>& attack_condition_dirs() {
  static const std::vector<std::string> dirs(std::begin(kConditionOrder), std::end(kConditionOrder));
  return dirs;
}

void cmd_attack(const RunConfig& config, const fs::path& data_dir, const fs::path& victim_checkpoint,
                const fs::path& surrogate_checkpoint, const fs::path& out) {
  config.validate();
  const ClassifierModel victim = ClassifierModel::load(victim_checkpoint);
  const ClassifierModel surrogate = ClassifierModel::load(surrogate_checkpoint);
  if (!(victim.input_spec() == surrogate.input_spec())) {
    throw ShapeError("attack: victim and surrogate expect different input shapes");
  }
  const Dataset test_set = load_split(data_dir, "test.csv", SplitTag::test);
  const Dataset train_set = load_split(data_dir, "train.csv", SplitTag::train);

  const std::string victim_sha = sha_hex(victim_checkpoint);
  const std::string surrogate_sha = sha_hex(surrogate_checkpoint);
  const double eps = config.attack.pgd.ball.epsilon;
  const std::uint64_t seed = config.attack.seed;
  const std::size_t threads = config.attack.threads;

  write_condition(out / "Clean", "Clean", test_set, pixels_of(test_set),
                  Json{{"epsilon", nullptr}, {"seed", nullptr}, {"crafted_on", "none"}}, {});

  PgdConfig pgd = config.attack.pgd;
  pgd.seed = seed;
  auto run_pgd = [&](const ClassifierModel& model, const std::string& name, const char* crafted_on) {
    std::vector<Tensor> adv = pgd_attack_dataset(model, test_set, pgd, threads);
    for (std::size_t i = 0; i < adv.size(); ++i) adv[i] = quantize_within_ball(adv[i], test_set.images[i].pixels, eps);
    write_condition(out / name, name, test_set, adv,
                    Json{{"epsilon", eps},
                         {"seed", seed},
                         {"crafted_on", crafted_on},
                         {"iterations", pgd.iterations},
                         {"step_size", pgd.effective_step()},
                         {"targeted", pgd.targeted},
                         {"random_start", pgd.random_start}},
                    {});
  };
  run_pgd(victim, "PGD-White", "victim");
  run_pgd(surrogate, "PGD-Black", "surrogate");

  PatchTrainConfig pcfg = config.attack.patch;
  pcfg.seed = seed;
  const auto placements = evaluation_placements(test_set.size(), victim.input_spec(), pcfg.scale, seed);
  const fs::path patch_dir = out / "patches";

  auto emit_patches = [&](const std::string& name, const std::array<Patch, 2>& patches, const char* crafted_on,
                          const std::string& stem, Json patch_meta) {
    for (int t = 0; t < 2; ++t) {
      Json meta = patch_meta;
      meta["condition"] = name;
      meta["seed"] = seed;
      meta["crafted_on"] = crafted_on;
      meta["victim_sha256"] = victim_sha;
      meta["surrogate_sha256"] = surrogate_sha;
      save_patch(patch_dir, stem + "_target" + std::to_string(t), patches[t], meta);
    }
    const std::vector<Tensor> patched = apply_targeted_patches(test_set, patches, placements);
    std::vector<Tensor> quantized;
    quantized.reserve(patched.size());
    for (const auto& x : patched) quantized.push_back(quantize(x));
    std::vector<Json> per_image;
    for (std::size_t i = 0; i < test_set.size(); ++i) {
      const int target = 1 - test_set.images[i].label;
      per_image.push_back(
          placement_json(placements[i], "patches/" + stem + "_target" + std::to_string(target) + ".amf"));
    }
    write_condition(out / name, name, test_set, quantized,
                    Json{{"epsilon", nullptr}, {"seed", seed}, {"crafted_on", crafted_on}, {"scale", pcfg.scale}},
                    per_image);
  };

  emit_patches("Patch-Natural", {natural_patch(victim, train_set, 0, pcfg.scale),
                                 natural_patch(victim, train_set, 1, pcfg.scale)},
               "victim", "natural", Json{{"kind", "natural"}});

  const Json trained_meta{{"kind", "adversarial"},
                          {"steps", pcfg.steps},
                          {"step_size", pcfg.step_size},
                          {"batch", pcfg.batch},
                          {"momentum", pcfg.momentum}};
  emit_patches("Patch-White", {train_patch(victim, train_set, 0, pcfg), train_patch(victim, train_set, 1, pcfg)},
               "victim", "white", trained_meta);
  emit_patches("Patch-Black",
               {train_patch(surrogate, train_set, 0, pcfg), train_patch(surrogate, train_set, 1, pcfg)},
               "surrogate", "black", trained_meta);

  write_metadata(out, "attack", config, Json{{"attack_seed", seed}, {"placement_seed", seed}},
                 Json{{"victim", victim_sha},
                      {"surrogate", surrogate_sha},
                      {"train.csv", sha_hex(data_dir / "train.csv")},
                      {"test.csv", sha_hex(data_dir / "test.csv")}});
}

// --- report ---------------------------------------------------------------------

std::vector<std::string> check_thresholds(const ReportSection& section, const EvaluationReport& report) {
  std::vector<std::string> failures;
  auto row_of = [&](std::string_view name) -> const ConditionMetrics* {
    for (const auto& r : report.rows) {
      if (r.condition == name) return &r;
    }
    return nullptr;
  };
  const ConditionMetrics* clean = row_of("Clean");
  for (std::string_view name : kConditionOrder) {
    auto it = section.thresholds.find(std::string(name));
    if (it == section.thresholds.end()) continue;
    const ConditionMetrics* row = row_of(name);
    if (row == nullptr) continue;
    const ConditionThresholds& t = it->second;
    const std::string n(name);
    auto low = [&](const char* metric, double value, const std::optional<double>& bound) {
      if (bound && !(value >= *bound)) {
        failures.push_back(n + ": " + metric + " " + fmt("%.4f", value) + " < min " + fmt("%.4g", *bound));
      }
    };
    auto high = [&](const char* metric, double value, const std::optional<double>& bound) {
      if (bound && !(value <= *bound)) {
        failures.push_back(n + ": " + metric + " " + fmt("%.4f", value) + " > max " + fmt("%.4g", *bound));
      }
    };
    low("accuracy", row->accuracy, t.min_accuracy);
    high("accuracy", row->accuracy, t.max_accuracy);
    low("auroc", row->auroc, t.min_auroc);
    high("auroc", row->auroc, t.max_auroc);
    low("avg_confidence", row->avg_confidence, t.min_avg_confidence);
    high("avg_confidence", row->avg_confidence, t.max_avg_confidence);
    if (t.max_accuracy_vs_clean && clean != nullptr) {
      const double limit = *t.max_accuracy_vs_clean * clean->accuracy;
      if (!(row->accuracy <= limit)) {
        failures.push_back(n + ": accuracy " + fmt("%.4f", row->accuracy) + " > " +
                           fmt("%.4g", *t.max_accuracy_vs_clean) + " x Clean accuracy (" + fmt("%.4f", limit) +
                           ")");
      }
    }
  }
  if (section.check_patch_ordering) {
    const auto* natural = row_of("Patch-Natural");
    const auto* black = row_of("Patch-Black");
    const auto* white = row_of("Patch-White");
    if (natural && black && white && !(natural->accuracy > black->accuracy && black->accuracy > white->accuracy)) {
      failures.push_back("patch ordering: need Patch-Natural > Patch-Black > Patch-White accuracy, got " +
                         fmt("%.4f", natural->accuracy) + ", " + fmt("%.4f", black->accuracy) + ", " +
                         fmt("%.4f", white->accuracy));
    }
  }
  return failures;
}

ReportResult cmd_report(const RunConfig& config, const fs::path& victim_checkpoint, const fs::path& attacks_dir,
                        const fs::path& out) {
  config.validate();
  const ClassifierModel victim = ClassifierModel::load(victim_checkpoint);
  std::vector<ConditionMetrics> rows;
  Json inputs{{"victim", sha_hex(victim_checkpoint)}};
  for (std::string_view name : kConditionOrder) {
    const fs::path manifest = attacks_dir / std::string(name) / "manifest.csv";
    if (!fs::exists(manifest)) continue;
    const Dataset ds = load_dataset(manifest);
    if (ds.empty()) throw ValueError(std::string(name) + ": condition directory lists no images");
    rows.push_back(evaluate_condition(std::string(name), predict_images(victim, pixels_of(ds)), all_labels(ds)));
    inputs[std::string(name) + "/manifest.csv"] = sha_hex(manifest);
  }
  const fs::path clean_manifest = attacks_dir / "Clean" / "manifest.csv";
  const std::string dataset_digest = fs::exists(clean_manifest) ? sha_hex(clean_manifest) : std::string();

  ReportResult r;
  r.report = build_report(std::move(rows), inputs["victim"].get<std::string>(), dataset_digest);
  r.failures = check_thresholds(config.report, r.report);
  r.csv = render_csv(r.report);
  r.table = render_table(r.report);
  for (const auto& w : r.report.warnings) r.table += "warning: " + w + "\n";
  for (const auto& f : r.failures) r.table += "threshold failed: " + f + "\n";

  write_text_file(out / "report.csv", r.csv);
  write_text_file(out / "report.txt", r.table);
  write_metadata(out, "report", config, Json::object(), inputs,
                 Json{{"model_digest", r.report.model_digest},
                      {"dataset_digest", r.report.dataset_digest},
                      {"thresholds_met", r.failures.empty()}});
  return r;
}

// --- provenance -----------------------------------------------------------------

ProvenanceResult cmd_provenance(const fs::path& registry_path, const fs::path& directory, ProvenanceMode mode,
                                const std::string& source, const std::string& timestamp) {
  std::error_code ec;
  if (!fs::is_directory(directory, ec)) throw IoError("'" + directory.string() + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(directory)) {
    const std::string ext = entry.path().extension().string();
    if (ext == ".pgm" || ext == ".ppm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  HashRegistry registry(registry_path);
  ProvenanceResult result;
  for (const auto& f : files) {
    ProvenanceLine line{f.filename().string(), f.stem().string(), {}};
    try {
      const auto bytes = read_file_bytes(f);
      if (mode == ProvenanceMode::register_images) {
        registry.register_image(line.image_id, bytes, source, timestamp);
        line.status = "registered";
      } else {
        line.status = std::string(to_string(registry.verify(line.image_id, bytes)));
      }
    } catch (const Error& e) {
      line.status = std::string("error: ") + e.what();
    }
    ++result.counts[line.status.starts_with("error") ? "error" : line.status];
    result.lines.push_back(std::move(line));
  }
  std::ostringstream s;
  for (const auto& l : result.lines) s << l.file << "\t" << l.status << "\n";
  s << "total " << result.lines.size();
  for (const auto& [status, n] : result.counts) s << ", " << status << " " << n;
  s << "\n";
  result.listing = s.str();
  return result;
}

}  // namespace advml
