// SPDX-License-Identifier: Apache-2.0
//
// Train / eval / inspect workflows behind the command-line tool.
#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "s3f/models.hpp"
#include "s3f/optim.hpp"

namespace s3f {

enum class Precision { F32, F64 };

Precision parse_precision(const std::string& s);
// S3F_PRECISION, defaulting to f32.
Precision precision_from_env();

struct RunConfig {
  Task task = Task::ClsVoxel;
  std::optional<std::string> scheme;  // voxel tasks only; projection when unset
  std::string ordering = "xyz";
  std::string backbone = "nano";
  std::size_t T = 6;
  std::size_t k = 16;
  std::string fusion = "inner";
  std::string td_sizing = "quarter";

  std::string optimizer = "adam";
  std::optional<double> lr;  // optimizer default when unset
  std::size_t warmup_steps = 0;
  std::optional<double> decay_factor;
  std::optional<std::size_t> decay_every;
  double weight_decay = 0.0;
  double clip_norm = 0.0;

  std::size_t batch = 16;
  std::size_t epochs = 100;
  std::size_t max_steps = 0;  // 0: run all epochs
  std::optional<double> lambda;  // 0.1 with a teacher, 0 without
  std::size_t teacher_batch = 0;  // M; 0 means the batch size
  bool kl_mean = false;
  std::uint64_t seed = 0;

  std::string data = "synthetic";
  std::string pretrained;
  std::string teacher;
  std::string teacher_images;
  std::string out = "run";
  std::string resume;
  bool pad_to_multiple = false;

  std::size_t resolution = 30;       // synthetic voxel edge
  std::size_t points = 1024;         // points per cloud
  std::size_t samples_per_class = 64;  // synthetic
  double jitter = 1.0;               // synthetic

  std::size_t eval_every = 0;          // train-set accuracy every n steps; 0: each epoch
  std::size_t save_every = 1;          // epochs between epoch checkpoints; 0: last.nta only
  double stop_at_accuracy = 0.0;       // stop once train accuracy (percent) reaches this; 0 disables
  bool quiet = false;

  double effective_lambda() const { return lambda ? *lambda : (teacher.empty() ? 0.0 : 0.1); }
  std::size_t effective_teacher_batch() const { return teacher_batch ? teacher_batch : batch; }
  OptimizerSpec optimizer_spec() const;
  VoxelTokenizerConfig tokenizer_config() const;
  PointPipelineConfig point_config(std::size_t channels, std::size_t classes) const;

  // Every rule that can be checked without touching data or weights.
  void validate() const;
  std::string to_json() const;
  static RunConfig from_json(const std::string& text);
  static RunConfig from_file(const std::filesystem::path& path);
};

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0;
  double task_loss = 0;
  std::optional<double> kl;
  double lr = 0;
};

struct TrainResult {
  std::size_t steps = 0;
  std::vector<StepRecord> records;
  std::vector<std::pair<std::size_t, double>> train_accuracy;  // (step, percent)
  std::filesystem::path checkpoint;
};

struct TrainHooks {
  std::function<void(const StepRecord&)> on_step;
};

TrainResult train(const RunConfig& cfg, Precision precision, const TrainHooks& hooks = {});

struct EvalResult {
  Task task = Task::ClsVoxel;
  double oa = 0, macc = 0;          // classification
  double ins_miou = 0, cat_miou = 0;  // segmentation, oa is point accuracy
  std::size_t samples = 0;
  std::string to_json() const;
};

// Evaluates on the held-out split (synthetic) or the data directory.
EvalResult evaluate(const RunConfig& cfg, const std::filesystem::path& checkpoint, Precision precision);

// Sequence length, per-token norms and the cube -> token map for one input.
std::string inspect_tokens(const RunConfig& cfg, const std::string& input, Precision precision);

// Grid padded or center-cropped per axis to the nearest multiple of t.
template <typename T>
VoxelGrid<T> fit_to_multiple(const VoxelGrid<T>& grid, std::size_t t, std::string* report = nullptr);

}  // namespace s3f
