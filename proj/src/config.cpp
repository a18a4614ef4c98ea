#include "mkrecon/config.hpp"

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include <json.hpp>

#include "mkrecon/error.hpp"
#include "mkrecon/rng.hpp"

namespace mkr {

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const std::string& where, std::initializer_list<const char*> known) {
  if (!obj.is_object()) throw UsageError("config: '" + where + "' must be an object");
  for (const auto& item : obj.items()) {
    const bool ok = std::any_of(known.begin(), known.end(), [&](const char* k) { return item.key() == k; });
    if (!ok) throw UsageError("config: unknown key '" + where + (where.empty() ? "" : ".") + item.key() + "'");
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

void read_schedule(const json& obj, TrainSchedule& s) {
  read(obj, "lr", s.lr);
  read(obj, "batch", s.batch);
  read(obj, "epochs", s.epochs);
  read(obj, "max_steps", s.max_steps);
}

json schedule_json(const TrainSchedule& s) {
  return {{"lr", s.lr}, {"batch", s.batch}, {"epochs", s.epochs}, {"max_steps", s.max_steps}};
}

bool wildcard_match(const std::string& pattern, const std::string& name) {
  // Iterative '*' matching with backtracking to the last star.
  std::size_t p = 0, n = 0, star = std::string::npos, mark = 0;
  while (n < name.size()) {
    if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      mark = n;
    } else if (p < pattern.size() && pattern[p] == name[n]) {
      ++p;
      ++n;
    } else if (star != std::string::npos) {
      p = star + 1;
      n = ++mark;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

bool is_volume_file(const std::filesystem::path& p) {
  const std::string name = p.filename().string();
  const auto ends = [&](const std::string& suffix) {
    return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  return ends(".raw") || ends(".nii") || ends(".nii.gz") || ends(".hdr") || ends(".hdr.gz");
}

}  // namespace

void JobConfig::validate() const {
  const auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw UsageError("config: " + msg);
  };
  const auto valid_gap = [](int g) { return g == 2 || g == 4 || g == 8; };
  require(valid_gap(gap), "gap must be 2, 4 or 8, got " + std::to_string(gap));
  require(resize_h > 0 && resize_w > 0, "resize dimensions must be positive");
  require(synth.count > 0, "synth.count must be positive");
  require(synth.depth >= 16 && synth.height >= 16 && synth.width >= 16, "synth dims must be >= 16");
  require(synth.ellipsoids >= 0, "synth.ellipsoids must be >= 0");
  require(!stage1.gaps.empty(), "stage1.gaps must not be empty");
  for (int g : stage1.gaps) require(valid_gap(g), "stage1.gaps entries must be 2, 4 or 8");
  require(stage1.levels >= 1 && stage1.base_channels >= 1, "stage1 architecture sizes must be positive");
  require(stage1.lambda1 >= 0.0 && stage1.lambda2 >= 0.0, "stage1 loss weights must be >= 0");
  require(stage2.hidden_channels >= 1, "stage2.hidden_channels must be positive");
  require(stage2.alpha >= 0.0, "stage2.alpha must be >= 0");
  require(stage2.alpha1 >= 0.0 && stage2.alpha2_initial >= 0.0 && stage2.alpha2_decrement >= 0.0,
          "stage2 loss weights must be >= 0");
  require(stage2.acquired_weight >= 1.0, "stage2.acquired_weight must be >= 1");
  for (const auto* s : {&stage1.schedule, &stage2.schedule}) {
    require(s->lr > 0.0, "learning rate must be positive");
    require(s->batch > 0, "batch must be positive");
    require(s->epochs > 0, "epochs must be positive");
  }
}

JobConfig parse_job_config(const std::string& json_text) {
  JobConfig cfg;
  try {
    const json root = json::parse(json_text);
    reject_unknown(root, "",
                   {"seed", "data", "output_dir", "gap", "resize", "synth", "stage1", "stage2", "models", "plateau"});
    if (root.contains("seed") && !root.at("seed").is_null()) cfg.seed = root.at("seed").get<std::uint64_t>();
    if (root.contains("data")) {
      const auto& d = root.at("data");
      cfg.data = d.is_string() ? std::vector<std::string>{d.get<std::string>()} : d.get<std::vector<std::string>>();
    }
    read(root, "output_dir", cfg.output_dir);
    read(root, "gap", cfg.gap);
    if (root.contains("resize")) {
      const auto r = root.at("resize").get<std::vector<std::size_t>>();
      if (r.size() != 2) throw UsageError("config: resize must be [height, width]");
      cfg.resize_h = r[0];
      cfg.resize_w = r[1];
    }
    if (root.contains("synth")) {
      const auto& s = root.at("synth");
      reject_unknown(s, "synth", {"count", "depth", "height", "width", "ellipsoids", "lesion"});
      read(s, "count", cfg.synth.count);
      read(s, "depth", cfg.synth.depth);
      read(s, "height", cfg.synth.height);
      read(s, "width", cfg.synth.width);
      read(s, "ellipsoids", cfg.synth.ellipsoids);
      read(s, "lesion", cfg.synth.lesion);
    }
    if (root.contains("stage1")) {
      const auto& s = root.at("stage1");
      reject_unknown(s, "stage1",
                     {"gaps", "shared_model", "levels", "base_channels", "lambda1", "lambda2", "lr", "batch",
                      "epochs", "max_steps"});
      read(s, "gaps", cfg.stage1.gaps);
      read(s, "shared_model", cfg.stage1.shared_model);
      read(s, "levels", cfg.stage1.levels);
      read(s, "base_channels", cfg.stage1.base_channels);
      read(s, "lambda1", cfg.stage1.lambda1);
      read(s, "lambda2", cfg.stage1.lambda2);
      read_schedule(s, cfg.stage1.schedule);
    }
    if (root.contains("stage2")) {
      const auto& s = root.at("stage2");
      reject_unknown(s, "stage2",
                     {"hidden_channels", "alpha", "alpha1", "alpha2_initial", "alpha2_decrement", "acquired_weight",
                      "lr", "batch", "epochs", "max_steps"});
      read(s, "hidden_channels", cfg.stage2.hidden_channels);
      read(s, "alpha", cfg.stage2.alpha);
      read(s, "alpha1", cfg.stage2.alpha1);
      read(s, "alpha2_initial", cfg.stage2.alpha2_initial);
      read(s, "alpha2_decrement", cfg.stage2.alpha2_decrement);
      read(s, "acquired_weight", cfg.stage2.acquired_weight);
      read_schedule(s, cfg.stage2.schedule);
    }
    if (root.contains("plateau")) {
      const auto& s = root.at("plateau");
      reject_unknown(s, "plateau", {"patience", "factor", "min_lr"});
      read(s, "patience", cfg.stage1.schedule.patience);
      read(s, "factor", cfg.stage1.schedule.factor);
      read(s, "min_lr", cfg.stage1.schedule.min_lr);
    }
    if (root.contains("models")) {
      const auto& s = root.at("models");
      reject_unknown(s, "models", {"stage1_dir", "stage2_path"});
      read(s, "stage1_dir", cfg.models.stage1_dir);
      read(s, "stage2_path", cfg.models.stage2_path);
    }
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

JobConfig load_job_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("config: cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_job_config(ss.str());
}

std::string job_config_json(const JobConfig& cfg) {
  json root;
  root["seed"] = cfg.seed ? json(*cfg.seed) : json(nullptr);
  root["data"] = cfg.data;
  root["output_dir"] = cfg.output_dir;
  root["gap"] = cfg.gap;
  root["resize"] = {cfg.resize_h, cfg.resize_w};
  root["synth"] = {{"count", cfg.synth.count},   {"depth", cfg.synth.depth},
                   {"height", cfg.synth.height}, {"width", cfg.synth.width},
                   {"ellipsoids", cfg.synth.ellipsoids}, {"lesion", cfg.synth.lesion}};
  json s1 = schedule_json(cfg.stage1.schedule);
  s1["gaps"] = cfg.stage1.gaps;
  s1["shared_model"] = cfg.stage1.shared_model;
  s1["levels"] = cfg.stage1.levels;
  s1["base_channels"] = cfg.stage1.base_channels;
  s1["lambda1"] = cfg.stage1.lambda1;
  s1["lambda2"] = cfg.stage1.lambda2;
  root["stage1"] = s1;
  json s2 = schedule_json(cfg.stage2.schedule);
  s2["hidden_channels"] = cfg.stage2.hidden_channels;
  s2["alpha"] = cfg.stage2.alpha;
  s2["alpha1"] = cfg.stage2.alpha1;
  s2["alpha2_initial"] = cfg.stage2.alpha2_initial;
  s2["alpha2_decrement"] = cfg.stage2.alpha2_decrement;
  s2["acquired_weight"] = cfg.stage2.acquired_weight;
  root["stage2"] = s2;
  root["plateau"] = {{"patience", cfg.stage1.schedule.patience},
                     {"factor", cfg.stage1.schedule.factor},
                     {"min_lr", cfg.stage1.schedule.min_lr}};
  root["models"] = {{"stage1_dir", cfg.models.stage1_dir}, {"stage2_path", cfg.models.stage2_path}};
  return root.dump(2) + "\n";
}

std::vector<std::filesystem::path> resolve_data(const std::vector<std::string>& entries) {
  namespace fs = std::filesystem;
  std::vector<fs::path> out;
  for (const auto& entry : entries) {
    const fs::path p(entry);
    std::vector<fs::path> found;
    if (entry.find('*') != std::string::npos) {
      const fs::path dir = p.has_parent_path() ? p.parent_path() : fs::path(".");
      const std::string pattern = p.filename().string();
      if (!fs::is_directory(dir)) throw FormatError("data: no such directory " + dir.string());
      for (const auto& de : fs::directory_iterator(dir)) {
        if (de.is_regular_file() && wildcard_match(pattern, de.path().filename().string())) found.push_back(de.path());
      }
    } else if (fs::is_directory(p)) {
      for (const auto& de : fs::directory_iterator(p)) {
        if (de.is_regular_file() && is_volume_file(de.path())) found.push_back(de.path());
      }
    } else if (fs::exists(p)) {
      found.push_back(p);
    } else {
      throw FormatError("data: no such file " + entry);
    }
    if (found.empty()) throw FormatError("data: '" + entry + "' matched no volume files");
    std::sort(found.begin(), found.end());
    out.insert(out.end(), found.begin(), found.end());
  }
  return out;
}

Stage1TrainConfig stage1_train_config(const JobConfig& cfg, int gap) {
  if (!cfg.seed) throw UsageError("train-stage1 needs a seed (config 'seed' or --seed)");
  Stage1TrainConfig t;
  t.arch = UNetConfig{cfg.stage1.levels, cfg.stage1.base_channels};
  t.loss.lambda1 = cfg.stage1.lambda1;
  t.loss.lambda2 = cfg.stage1.lambda2;
  t.schedule = cfg.stage1.schedule;
  t.seed = splitmix_hash(*cfg.seed ^ (0x5354473100ULL + static_cast<std::uint64_t>(gap)));
  t.half_gap = static_cast<std::size_t>(gap / 2);
  return t;
}

Stage2TrainConfig stage2_train_config(const JobConfig& cfg) {
  if (!cfg.seed) throw UsageError("train-stage2 needs a seed (config 'seed' or --seed)");
  Stage2TrainConfig t;
  t.arch = RefineConfig{cfg.stage2.hidden_channels, cfg.stage2.alpha};
  t.loss.alpha1 = cfg.stage2.alpha1;
  t.loss.alpha2_initial = cfg.stage2.alpha2_initial;
  t.loss.alpha2_decrement_per_epoch = cfg.stage2.alpha2_decrement;
  t.loss.acquired_slice_weight = cfg.stage2.acquired_weight;
  t.schedule = cfg.stage2.schedule;
  t.seed = splitmix_hash(*cfg.seed ^ 0x5354473200ULL);
  return t;
}

}  // namespace mkr
