// SPDX-License-Identifier: Apache-2.0
//
// s3f train | eval | inspect-tokens | checkpoint
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "s3f/archive.hpp"
#include "s3f/run.hpp"
#include "s3f/transfer.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::string> task, scheme, ordering, backbone, fusion, td_sizing, optimizer;
  std::optional<std::size_t> T, k, batch, epochs, max_steps, teacher_batch, points, resolution, warmup;
  std::optional<std::size_t> samples_per_class, eval_every, save_every, decay_every;
  std::optional<double> jitter, stop_at, decay_factor, weight_decay, clip_norm;
  std::optional<double> lr, lambda;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> pretrained, teacher, teacher_images, data, out, resume;
  bool pad = false, kl_mean = false, quiet = false;

  void add_to(CLI::App* app) {
    app->add_option("--config", config, "JSON run config; flags override it");
    app->add_option("--task", task, "cls-voxel | cls-point | seg-point");
    app->add_option("--scheme", scheme, "naive | projection | group (voxel tasks)");
    app->add_option("--ordering", ordering, "xyz | yzx | zxy");
    app->add_option("--backbone", backbone, "nano | tiny | small | base");
    app->add_option("--T", T, "voxel cube edge");
    app->add_option("--k", k, "neighbors per transition-down center");
    app->add_option("--fusion", fusion, "inner | outer point feature fusion");
    app->add_option("--td-sizing", td_sizing, "quarter | snippet transition-down point counts");
    app->add_option("--optimizer", optimizer, "adam | sgd");
    app->add_option("--lr", lr, "base learning rate");
    app->add_option("--warmup-steps", warmup, "linear warm-up steps");
    app->add_option("--batch", batch, "batch size");
    app->add_option("--epochs", epochs, "epochs");
    app->add_option("--max-steps", max_steps, "stop after this many steps");
    app->add_option("--lambda", lambda, "weight of the teacher KL term");
    app->add_option("--teacher-batch", teacher_batch, "teacher images per step (M)");
    app->add_option("--seed", seed, "random seed");
    app->add_option("--pretrained", pretrained, "2D ViT archive to initialize from");
    app->add_option("--teacher", teacher, "2D ViT archive used as frozen teacher");
    app->add_option("--teacher-images", teacher_images, "directory of .pgm/.ppm teacher images");
    app->add_option("--data", data, "'synthetic' or a data directory");
    app->add_option("--out", out, "output directory");
    app->add_option("--resume", resume, "checkpoint to resume from");
    app->add_option("--points", points, "points per cloud");
    app->add_option("--resolution", resolution, "synthetic voxel resolution");
    app->add_option("--samples-per-class", samples_per_class, "synthetic samples per class");
    app->add_option("--jitter", jitter, "synthetic shape jitter");
    app->add_option("--eval-every", eval_every, "train-set accuracy every n steps (0: each epoch)");
    app->add_option("--save-every", save_every, "epochs between epoch checkpoints (0: last.nta only)");
    app->add_option("--stop-at-accuracy", stop_at, "stop once train accuracy reaches this percentage");
    app->add_option("--decay-every", decay_every, "epochs between learning-rate decays");
    app->add_option("--decay-factor", decay_factor, "learning-rate decay factor");
    app->add_option("--weight-decay", weight_decay, "L2 weight decay");
    app->add_option("--clip-norm", clip_norm, "clip the global gradient norm (0: off)");
    app->add_flag("--pad-to-multiple", pad, "pad or crop grids to a multiple of T");
    app->add_flag("--kl-mean", kl_mean, "average the KL term over the teacher batch");
    app->add_flag("--quiet", quiet, "no per-step output");
  }

  // base: config used when --config is absent.
  s3f::RunConfig resolve(const s3f::RunConfig& base = {}) const {
    s3f::RunConfig c = config.empty() ? base : s3f::RunConfig::from_file(config);
    if (task) c.task = s3f::parse_task(*task);
    if (scheme) c.scheme = *scheme;
    if (ordering) c.ordering = *ordering;
    if (backbone) c.backbone = *backbone;
    if (T) c.T = *T;
    if (k) c.k = *k;
    if (fusion) c.fusion = *fusion;
    if (td_sizing) c.td_sizing = *td_sizing;
    if (optimizer) c.optimizer = *optimizer;
    if (lr) c.lr = *lr;
    if (warmup) c.warmup_steps = *warmup;
    if (batch) c.batch = *batch;
    if (epochs) c.epochs = *epochs;
    if (max_steps) c.max_steps = *max_steps;
    if (lambda) c.lambda = *lambda;
    if (teacher_batch) c.teacher_batch = *teacher_batch;
    if (seed) c.seed = *seed;
    if (pretrained) c.pretrained = *pretrained;
    if (teacher) c.teacher = *teacher;
    if (teacher_images) c.teacher_images = *teacher_images;
    if (data) c.data = *data;
    if (out) c.out = *out;
    if (resume) c.resume = *resume;
    if (points) c.points = *points;
    if (resolution) c.resolution = *resolution;
    if (samples_per_class) c.samples_per_class = *samples_per_class;
    if (jitter) c.jitter = *jitter;
    if (eval_every) c.eval_every = *eval_every;
    if (save_every) c.save_every = *save_every;
    if (stop_at) c.stop_at_accuracy = *stop_at;
    if (decay_every) c.decay_every = *decay_every;
    if (decay_factor) c.decay_factor = *decay_factor;
    if (weight_decay) c.weight_decay = *weight_decay;
    if (clip_norm) c.clip_norm = *clip_norm;
    if (pad) c.pad_to_multiple = true;
    if (kl_mean) c.kl_mean = true;
    if (quiet) c.quiet = true;
    return c;
  }
};

std::string one_line(std::string s) {
  for (char& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  return s;
}

int run(int argc, char** argv) {
  CLI::App app{"Simple3D-Former: 2D ViT backbones on voxels and point clouds"};
  app.require_subcommand(1);

  Overrides train_o, eval_o, inspect_o;
  auto* train = app.add_subcommand("train", "train a model; writes checkpoints and metrics.jsonl");
  train_o.add_to(train);

  std::string checkpoint;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_o.add_to(eval);
  eval->add_option("--checkpoint", checkpoint, "checkpoint archive")->required();

  std::string input;
  auto* inspect = app.add_subcommand("inspect-tokens", "report the token sequence for one input");
  inspect_o.add_to(inspect);
  inspect->add_option("--input", input, "binvox or xyz file, or synthetic:<sphere|cube|cylinder>")->required();

  std::string archive_path;
  std::size_t depth = 0;
  auto* ckpt = app.add_subcommand("checkpoint", "list or validate a tensor archive");
  ckpt->require_subcommand(1);
  auto* list = ckpt->add_subcommand("list", "print every tensor with dtype and shape");
  list->add_option("archive", archive_path)->required();
  auto* validate = ckpt->add_subcommand("validate", "check the 2D ViT naming contract");
  validate->add_option("archive", archive_path)->required();
  validate->add_option("--depth", depth, "expected block count (default: inferred)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: cli: " << one_line(e.what()) << "\n";
    return 2;
  }

  const s3f::Precision precision = s3f::precision_from_env();
  if (*train) {
    const auto cfg = train_o.resolve();
    s3f::TrainHooks hooks;
    if (!cfg.quiet)
      hooks.on_step = [](const s3f::StepRecord& r) {
        std::cerr << "step " << r.step << " epoch " << r.epoch << " loss " << r.loss;
        if (r.kl) std::cerr << " kl " << *r.kl;
        std::cerr << "\n";
      };
    const auto res = s3f::train(cfg, precision, hooks);
    nlohmann::json j{{"steps", res.steps}, {"checkpoint", res.checkpoint.string()}};
    if (!res.train_accuracy.empty()) j["train_accuracy"] = res.train_accuracy.back().second;
    std::cout << j.dump() << "\n";
  } else if (*eval) {
    // Without --config, start from the config stored in the checkpoint.
    s3f::RunConfig base;
    const auto a = s3f::NamedTensorArchive::load(checkpoint);
    if (const auto it = a.metadata().find("config"); it != a.metadata().end()) {
      base = s3f::RunConfig::from_json(it->second);
      base.resume.clear();
    }
    std::cout << s3f::evaluate(eval_o.resolve(base), checkpoint, precision).to_json() << "\n";
  } else if (*inspect) {
    std::cout << s3f::inspect_tokens(inspect_o.resolve(), input, precision);
  } else if (*list) {
    const auto a = s3f::NamedTensorArchive::load(archive_path);
    for (const auto& name : a.names()) {
      const auto& e = a.entry(name);
      std::cout << name << " " << s3f::to_string(e.dtype) << " " << s3f::shape_str(e.shape) << "\n";
    }
    for (const auto& [k, v] : a.metadata())
      if (k != "config") std::cout << "# " << k << " = " << v << "\n";
  } else if (*validate) {
    const auto a = s3f::NamedTensorArchive::load(archive_path);
    if (!depth)
      for (const auto& name : a.names())
        if (name.rfind("blocks.", 0) == 0) depth = std::max<std::size_t>(depth, std::stoul(name.substr(7)) + 1);
    s3f::validate_contract(a, depth);
    std::cout << "ok " << depth << " blocks\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 1;
  }
}
