#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mkrecon/training.hpp"

namespace mkr {

/// Job configuration, read from JSON. Every key is optional; unknown keys are
/// rejected. Schema and defaults: docs/formats.md and configs/default.json.
struct JobConfig {
  std::optional<std::uint64_t> seed;  // required by train-* commands
  std::vector<std::string> data;      // files, directories or `dir/*.ext` patterns
  std::string output_dir = "out";
  int gap = 8;
  std::size_t resize_h = 256;
  std::size_t resize_w = 256;

  struct Synth {
    std::size_t count = 20;
    std::size_t depth = 33;
    std::size_t height = 32;
    std::size_t width = 32;
    int ellipsoids = 6;
    bool lesion = true;
  } synth;

  struct Stage1 {
    std::vector<int> gaps{8, 4, 2};
    bool shared_model = false;
    int levels = 3;
    int base_channels = 32;
    double lambda1 = 0.1;
    double lambda2 = 1.0;
    TrainSchedule schedule{1e-4, 8, 1, 0, 5, 0.5, 1e-6};
  } stage1;

  struct Stage2 {
    int hidden_channels = 8;
    double alpha = 0.1;
    double alpha1 = 0.25;
    double alpha2_initial = 1.0;
    double alpha2_decrement = 0.016;
    double acquired_weight = 2.0;
    TrainSchedule schedule{1e-4, 4, 50, 0, 5, 0.5, 1e-6};
  } stage2;

  struct Models {
    std::string stage1_dir;   // directory of stage1_gap<g>.ckpt / stage1_shared.ckpt
    std::string stage2_path;  // refinement checkpoint
  } models;

  // Throws UsageError on a violated invariant (gap, positive sizes, ...).
  void validate() const;
};

JobConfig parse_job_config(const std::string& json_text);
JobConfig load_job_config(const std::filesystem::path& path);

/// Full-default configuration as pretty-printed JSON.
std::string job_config_json(const JobConfig& cfg);

/// Expands `data` entries: directories list their volume files, a `*` in the
/// file name matches any run of characters. Results are sorted per entry;
/// a missing file or an empty match is a FormatError.
std::vector<std::filesystem::path> resolve_data(const std::vector<std::string>& entries);

Stage1TrainConfig stage1_train_config(const JobConfig& cfg, int gap);
Stage2TrainConfig stage2_train_config(const JobConfig& cfg);

}  // namespace mkr
