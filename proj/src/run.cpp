// SPDX-License-Identifier: Apache-2.0
#include "s3f/run.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"
#include "s3f/binvox.hpp"
#include "s3f/io.hpp"
#include "s3f/metrics.hpp"
#include "s3f/synthetic.hpp"
#include "s3f/transfer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace s3f {

Precision parse_precision(const std::string& s) {
  if (s == "f32") return Precision::F32;
  if (s == "f64") return Precision::F64;
  throw Error("config", "S3F_PRECISION must be f32 or f64, got '" + s + "'");
}

Precision precision_from_env() {
  const char* v = std::getenv("S3F_PRECISION");
  return v && *v ? parse_precision(v) : Precision::F32;
}

OptimizerSpec RunConfig::optimizer_spec() const {
  OptimizerSpec s = OptimizerSpec::defaults(parse_optimizer(optimizer));
  if (lr) s.lr = *lr;
  if (decay_factor) s.decay_factor = *decay_factor;
  if (decay_every) s.decay_every = *decay_every;
  s.warmup_steps = warmup_steps;
  s.weight_decay = weight_decay;
  s.clip_norm = clip_norm;
  return s;
}

VoxelTokenizerConfig RunConfig::tokenizer_config() const {
  VoxelTokenizerConfig c;
  c.scheme = parse_scheme(scheme.value_or("projection"));
  c.ordering = parse_ordering(ordering);
  c.cell = T;
  c.dim = BackboneConfig::from_variant(backbone).dim;
  return c;
}

PointPipelineConfig RunConfig::point_config(std::size_t channels, std::size_t classes) const {
  PointPipelineConfig c;
  c.dim = BackboneConfig::from_variant(backbone).dim;
  c.channels = channels;
  c.k = k;
  c.fusion = parse_fusion(fusion);
  c.sizing = parse_td_sizing(td_sizing);
  c.head = task == Task::SegPoint ? PointHead::Segmentation : PointHead::ClassToken;
  c.classes = classes;
  return c;
}

void RunConfig::validate() const {
  const BackboneConfig bb = BackboneConfig::from_variant(backbone);
  bb.validate();
  const bool voxel = task == Task::ClsVoxel;
  check(voxel || !scheme, "config", "--scheme only applies to cls-voxel");
  if (voxel) {
    parse_scheme(scheme.value_or("projection"));
    parse_ordering(ordering);
    check(T >= 1, "config", "--T must be positive");
    if (data == "synthetic" && !pad_to_multiple)
      check(resolution % T == 0, "config",
            "synthetic resolution " + std::to_string(resolution) + " is not divisible by T=" + std::to_string(T) +
                " (use --pad-to-multiple)");
    check(data != "synthetic" || resolution >= 4, "config", "synthetic resolution must be at least 4");
  } else {
    parse_fusion(fusion);
    parse_td_sizing(td_sizing);
    check(k >= 1, "config", "--k must be positive");
    check(points >= 16, "config", "point clouds need at least 16 points");
  }
  parse_optimizer(optimizer);
  check(!lr || *lr > 0, "config", "--lr must be positive");
  check(clip_norm >= 0, "config", "--clip-norm must not be negative");
  check(batch >= 1, "config", "--batch must be positive");
  check(epochs >= 1, "config", "--epochs must be positive");
  check(samples_per_class >= 1, "config", "samples per class must be positive");
  const double lam = effective_lambda();
  check(lam >= 0 && std::isfinite(lam), "config", "--lambda must be non-negative");
  if (lam > 0) {
    check(!teacher.empty(), "config", "--lambda > 0 requires --teacher");
    check(!teacher_images.empty(), "config", "--lambda > 0 requires --teacher-images");
  }
}

std::string RunConfig::to_json() const {
  json j;
  j["task"] = s3f::to_string(task);
  if (scheme) j["scheme"] = *scheme;
  j["ordering"] = ordering;
  j["backbone"] = backbone;
  j["T"] = T;
  j["k"] = k;
  j["fusion"] = fusion;
  j["td_sizing"] = td_sizing;
  j["optimizer"] = optimizer;
  if (lr) j["lr"] = *lr;
  j["warmup_steps"] = warmup_steps;
  if (decay_factor) j["decay_factor"] = *decay_factor;
  if (decay_every) j["decay_every"] = *decay_every;
  j["weight_decay"] = weight_decay;
  j["clip_norm"] = clip_norm;
  j["batch"] = batch;
  j["epochs"] = epochs;
  j["max_steps"] = max_steps;
  if (lambda) j["lambda"] = *lambda;
  j["teacher_batch"] = teacher_batch;
  j["kl_mean"] = kl_mean;
  j["seed"] = seed;
  j["data"] = data;
  j["pretrained"] = pretrained;
  j["teacher"] = teacher;
  j["teacher_images"] = teacher_images;
  j["out"] = out;
  j["pad_to_multiple"] = pad_to_multiple;
  j["resolution"] = resolution;
  j["points"] = points;
  j["samples_per_class"] = samples_per_class;
  j["jitter"] = jitter;
  j["eval_every"] = eval_every;
  j["save_every"] = save_every;
  j["stop_at_accuracy"] = stop_at_accuracy;
  j["quiet"] = quiet;
  return j.dump();
}

RunConfig RunConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error("config", std::string("malformed JSON: ") + e.what());
  }
  check(j.is_object(), "config", "config must be a JSON object");
  RunConfig c;
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& key = it.key();
      const json& v = it.value();
      if (key == "task") c.task = parse_task(v.get<std::string>());
      else if (key == "scheme") c.scheme = v.get<std::string>();
      else if (key == "ordering") c.ordering = v.get<std::string>();
      else if (key == "backbone") c.backbone = v.get<std::string>();
      else if (key == "T") c.T = v.get<std::size_t>();
      else if (key == "k") c.k = v.get<std::size_t>();
      else if (key == "fusion") c.fusion = v.get<std::string>();
      else if (key == "td_sizing") c.td_sizing = v.get<std::string>();
      else if (key == "optimizer") c.optimizer = v.get<std::string>();
      else if (key == "lr") c.lr = v.get<double>();
      else if (key == "warmup_steps") c.warmup_steps = v.get<std::size_t>();
      else if (key == "decay_factor") c.decay_factor = v.get<double>();
      else if (key == "decay_every") c.decay_every = v.get<std::size_t>();
      else if (key == "weight_decay") c.weight_decay = v.get<double>();
      else if (key == "clip_norm") c.clip_norm = v.get<double>();
      else if (key == "batch") c.batch = v.get<std::size_t>();
      else if (key == "epochs") c.epochs = v.get<std::size_t>();
      else if (key == "max_steps") c.max_steps = v.get<std::size_t>();
      else if (key == "lambda") c.lambda = v.get<double>();
      else if (key == "teacher_batch") c.teacher_batch = v.get<std::size_t>();
      else if (key == "kl_mean") c.kl_mean = v.get<bool>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "data") c.data = v.get<std::string>();
      else if (key == "pretrained") c.pretrained = v.get<std::string>();
      else if (key == "teacher") c.teacher = v.get<std::string>();
      else if (key == "teacher_images") c.teacher_images = v.get<std::string>();
      else if (key == "out") c.out = v.get<std::string>();
      else if (key == "pad_to_multiple") c.pad_to_multiple = v.get<bool>();
      else if (key == "resolution") c.resolution = v.get<std::size_t>();
      else if (key == "points") c.points = v.get<std::size_t>();
      else if (key == "samples_per_class") c.samples_per_class = v.get<std::size_t>();
      else if (key == "jitter") c.jitter = v.get<double>();
      else if (key == "eval_every") c.eval_every = v.get<std::size_t>();
      else if (key == "save_every") c.save_every = v.get<std::size_t>();
      else if (key == "stop_at_accuracy") c.stop_at_accuracy = v.get<double>();
      else if (key == "resume") c.resume = v.get<std::string>();
      else if (key == "quiet") c.quiet = v.get<bool>();
      else throw Error("config", "unknown key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw Error("config", std::string("bad value: ") + e.what());
  }
  return c;
}

RunConfig RunConfig::from_file(const fs::path& path) {
  const auto bytes = read_file(path);
  return from_json(std::string(bytes.begin(), bytes.end()));
}

std::string EvalResult::to_json() const {
  json j;
  j["task"] = s3f::to_string(task);
  j["samples"] = samples;
  if (task == Task::SegPoint) {
    j["oa"] = oa;
    j["ins_miou"] = ins_miou;
    j["cat_miou"] = cat_miou;
  } else {
    j["oa"] = oa;
    j["macc"] = macc;
  }
  return j.dump();
}

template <typename T>
VoxelGrid<T> fit_to_multiple(const VoxelGrid<T>& grid, std::size_t t, std::string* report) {
  check(t >= 1, "pad", "cell size must be positive");
  const auto& s = grid.values.shape();
  std::array<std::size_t, 3> target{};
  std::string what;
  for (std::size_t a = 0; a < 3; ++a) {
    const std::size_t n = s[a], lower = n / t * t, upper = lower + (n % t ? t : 0);
    target[a] = lower > 0 && n - lower < upper - n ? lower : upper;
    if (a) what += " ";
    what += std::to_string(n) + (target[a] < n ? "->crop " : target[a] > n ? "->pad " : "->keep ") +
            std::to_string(target[a]);
  }
  if (report) *report = what;
  const std::size_t c = s[3];
  std::vector<T> out(target[0] * target[1] * target[2] * c, T(0));
  // Offsets center the source inside the target (negative means crop).
  std::array<std::ptrdiff_t, 3> off{};
  for (std::size_t a = 0; a < 3; ++a)
    off[a] = (static_cast<std::ptrdiff_t>(target[a]) - static_cast<std::ptrdiff_t>(s[a])) / 2;
  const auto src = grid.values.data();
  for (std::size_t x = 0; x < s[0]; ++x) {
    const std::ptrdiff_t tx = static_cast<std::ptrdiff_t>(x) + off[0];
    if (tx < 0 || tx >= static_cast<std::ptrdiff_t>(target[0])) continue;
    for (std::size_t y = 0; y < s[1]; ++y) {
      const std::ptrdiff_t ty = static_cast<std::ptrdiff_t>(y) + off[1];
      if (ty < 0 || ty >= static_cast<std::ptrdiff_t>(target[1])) continue;
      for (std::size_t z = 0; z < s[2]; ++z) {
        const std::ptrdiff_t tz = static_cast<std::ptrdiff_t>(z) + off[2];
        if (tz < 0 || tz >= static_cast<std::ptrdiff_t>(target[2])) continue;
        const std::size_t di = ((static_cast<std::size_t>(tx) * target[1] + static_cast<std::size_t>(ty)) * target[2] +
                                static_cast<std::size_t>(tz)) * c;
        const std::size_t si = ((x * s[1] + y) * s[2] + z) * c;
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(si), c, out.begin() + static_cast<std::ptrdiff_t>(di));
      }
    }
  }
  return {Tensor<T>({target[0], target[1], target[2], c}, std::move(out)), grid.cell};
}

namespace {

constexpr std::uint64_t kShuffleKey = 0x73687566;
constexpr std::uint64_t kTeacherKey = 0x74656163;
constexpr std::uint64_t kModelKey = 0x6d6f6465;
constexpr std::uint64_t kDataKey = 0x64617461;

template <typename T>
struct Dataset {
  std::vector<Tensor<T>> grids;  // (H, W, Z, C) each
  std::vector<PointCloud<T>> clouds;
  std::vector<std::vector<int>> point_labels;
  std::vector<int> labels;  // shape class, or category for segmentation
  std::size_t classes = 0;  // logits per prediction
  std::vector<std::vector<int>> parts;  // segmentation: part labels per category
  std::vector<std::string> class_names;

  std::size_t size() const { return labels.size(); }
};

std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories, const std::vector<std::string>& exts) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (directories ? e.is_directory() : e.is_regular_file()) {
      if (!directories && std::find(exts.begin(), exts.end(), e.path().extension().string()) == exts.end()) continue;
      if (directories && (e.path().filename() == "train" || e.path().filename() == "test")) continue;
      out.push_back(e.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

fs::path split_root(const RunConfig& cfg, int split) {
  const fs::path root(cfg.data);
  check(fs::is_directory(root), "data", "'" + cfg.data + "' is not a directory");
  if (fs::is_directory(root / "train") && fs::is_directory(root / "test")) return root / (split ? "test" : "train");
  return root;
}

template <typename T>
PointCloud<T> with_feature_width(const PointCloud<T>& pc, std::size_t width) {
  if (pc.channels() != 0) return pc;
  return {pc.coords, Tensor<T>::zeros({pc.size(), width})};
}

template <typename T>
Dataset<T> load_dataset(const RunConfig& cfg, int split) {
  Dataset<T> ds;
  const std::size_t d = BackboneConfig::from_variant(cfg.backbone).dim;
  const bool synthetic = cfg.data == "synthetic";
  const RngStream base = RngStream(cfg.seed, kDataKey).fork(static_cast<std::uint64_t>(split));
  if (cfg.task == Task::ClsVoxel) {
    if (synthetic) {
      ds.class_names = {"sphere", "cube"};
      for (std::size_t i = 0; i < cfg.samples_per_class; ++i)
        for (int c = 0; c < 2; ++c) {
          SyntheticSpec s{c ? ShapeKind::Cube : ShapeKind::Sphere, cfg.resolution, 0, cfg.jitter,
                          base.fork(i * 2 + static_cast<std::size_t>(c)).next_u64()};
          ds.grids.push_back(make_voxels<T>(s).values);
          ds.labels.push_back(c);
        }
    } else {
      const fs::path root = split_root(cfg, split);
      int c = 0;
      for (const auto& dir : sorted_entries(root, true, {})) {
        ds.class_names.push_back(dir.filename().string());
        for (const auto& f : sorted_entries(dir, false, {".binvox"})) {
          try {
            ds.grids.push_back(read_binvox<T>(f).values);
          } catch (const Error& e) {
            throw Error("data", f.string() + ": " + e.what());
          }
          ds.labels.push_back(c);
        }
        ++c;
      }
    }
    if (cfg.pad_to_multiple)
      for (auto& g : ds.grids) g = fit_to_multiple<T>({g, cfg.T}, cfg.T).values;
    ds.classes = ds.class_names.size();
  } else if (cfg.task == Task::ClsPoint) {
    if (synthetic) {
      ds.class_names = {"sphere", "cube"};
      for (std::size_t i = 0; i < cfg.samples_per_class; ++i)
        for (int c = 0; c < 2; ++c) {
          SyntheticSpec s{c ? ShapeKind::Cube : ShapeKind::Sphere, 0, cfg.points, 0.01 * cfg.jitter,
                          base.fork(i * 2 + static_cast<std::size_t>(c)).next_u64()};
          ds.clouds.push_back(make_points<T>(s, d / 4));
          ds.labels.push_back(c);
        }
    } else {
      const fs::path root = split_root(cfg, split);
      int c = 0;
      for (const auto& dir : sorted_entries(root, true, {})) {
        ds.class_names.push_back(dir.filename().string());
        for (const auto& f : sorted_entries(dir, false, {".xyz", ".txt"})) {
          auto lc = read_xyz<T>(f, false);
          auto sc = sample_points(lc.cloud, cfg.points, base.fork(ds.clouds.size()).next_u64());
          ds.clouds.push_back(with_feature_width(sc.cloud, d / 4));
          ds.labels.push_back(c);
        }
        ++c;
      }
    }
    ds.classes = ds.class_names.size();
  } else {
    if (synthetic) {
      ds.class_names = {"sphere"};
      for (std::size_t i = 0; i < cfg.samples_per_class; ++i) {
        SyntheticSpec s{ShapeKind::Sphere, 0, cfg.points, 0.01 * cfg.jitter, base.fork(i).next_u64()};
        auto lc = make_hemispheres<T>(s, d / 4);
        ds.clouds.push_back(lc.cloud);
        ds.point_labels.push_back(lc.labels);
        ds.labels.push_back(0);
      }
      ds.parts = {{0, 1}};
      ds.classes = 2;
    } else {
      const fs::path root = split_root(cfg, split);
      auto dirs = sorted_entries(root, true, {});
      if (dirs.empty()) dirs.push_back(root);
      int label_max = -1;
      for (std::size_t c = 0; c < dirs.size(); ++c) {
        ds.class_names.push_back(dirs[c].filename().string());
        std::vector<int> seen;
        for (const auto& f : sorted_entries(dirs[c], false, {".xyz", ".txt"})) {
          auto lc = read_xyz<T>(f, true);
          auto sc = sample_points(lc.cloud, cfg.points, base.fork(ds.clouds.size()).next_u64());
          std::vector<int> labels;
          for (std::size_t idx : sc.index) labels.push_back(lc.labels[idx]);
          for (int l : labels) {
            if (std::find(seen.begin(), seen.end(), l) == seen.end()) seen.push_back(l);
            label_max = std::max(label_max, l);
          }
          ds.clouds.push_back(with_feature_width(sc.cloud, d / 4));
          ds.point_labels.push_back(std::move(labels));
          ds.labels.push_back(static_cast<int>(c));
        }
        std::sort(seen.begin(), seen.end());
        ds.parts.push_back(seen);
      }
      ds.classes = static_cast<std::size_t>(label_max + 1);
    }
  }
  check(ds.size() > 0, "data", "no samples found in '" + cfg.data + "'");
  check(ds.classes >= (cfg.task == Task::SegPoint ? 1u : 2u), "data", "need at least two classes");
  if (!ds.grids.empty())
    for (const auto& g : ds.grids)
      check(g.shape() == ds.grids[0].shape(), "data",
            "voxel grids differ in size: " + shape_str(g.shape()) + " vs " + shape_str(ds.grids[0].shape()));
  if (!ds.clouds.empty()) {
    const std::size_t c = ds.clouds[0].channels();
    for (const auto& pc : ds.clouds) check(pc.channels() == c, "data", "point clouds differ in feature width");
    if (parse_fusion(cfg.fusion) == FusionMode::Inner)
      check(c == d / 4, "config",
            "inner fusion needs " + std::to_string(d / 4) + " feature columns, data has " + std::to_string(c) +
                " (use --fusion outer)");
  }
  return ds;
}

template <typename T>
struct Model {
  Task task = Task::ClsVoxel;
  std::optional<VoxelClassifier<T>> voxel;
  std::optional<PointModel<T>> point;

  static Model build(const RunConfig& cfg, const Dataset<T>& ds) {
    Model m;
    m.task = cfg.task;
    BackboneConfig bb = BackboneConfig::from_variant(cfg.backbone);
    RngStream rng(cfg.seed, kModelKey);
    if (cfg.task == Task::ClsVoxel) {
      const auto& s = ds.grids[0].shape();
      VoxelTokenizerConfig tok = cfg.tokenizer_config();
      tok.channels = s[3];
      cube_layout(tok, s[0], s[1], s[2]);
      m.voxel = VoxelClassifier<T>::init(bb, tok, {s[0], s[1], s[2]}, ds.classes, rng);
    } else {
      m.point = PointModel<T>::init(bb, cfg.point_config(ds.clouds[0].channels(), ds.classes), rng);
    }
    return m;
  }

  ParamList<T> params() const { return voxel ? voxel->params() : point->params(); }
  const Backbone<T>& backbone() const { return voxel ? voxel->backbone : point->backbone; }

  Tensor<T> forward(const Dataset<T>& ds, std::span<const std::size_t> idx) const {
    if (voxel) {
      const auto& s = ds.grids[0].shape();
      std::vector<T> buf;
      buf.reserve(idx.size() * ds.grids[0].numel());
      for (std::size_t i : idx) buf.insert(buf.end(), ds.grids[i].data().begin(), ds.grids[i].data().end());
      return voxel->forward(Tensor<T>({idx.size(), s[0], s[1], s[2], s[3]}, std::move(buf)));
    }
    std::vector<PointCloud<T>> batch;
    for (std::size_t i : idx) batch.push_back(ds.clouds[i]);
    return point->forward(batch);
  }

  std::vector<std::size_t> targets(const Dataset<T>& ds, std::span<const std::size_t> idx) const {
    std::vector<std::size_t> out;
    for (std::size_t i : idx) {
      if (task == Task::SegPoint)
        for (int l : ds.point_labels[i]) out.push_back(static_cast<std::size_t>(l));
      else
        out.push_back(static_cast<std::size_t>(ds.labels[i]));
    }
    return out;
  }
};

template <typename T>
double dataset_accuracy(const Model<T>& m, const Dataset<T>& ds, std::size_t batch) {
  NoGradGuard guard;
  std::size_t correct = 0, total = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.size(); start += batch) {
    idx.clear();
    for (std::size_t i = start; i < std::min(ds.size(), start + batch); ++i) idx.push_back(i);
    const auto pred = argmax_rows(m.forward(ds, idx));
    const auto tgt = m.targets(ds, idx);
    for (std::size_t i = 0; i < pred.size(); ++i) correct += static_cast<std::size_t>(pred[i]) == tgt[i];
    total += pred.size();
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

template <typename T>
std::vector<Tensor<T>> load_teacher_images(const RunConfig& cfg, const Vit2D<T>& teacher) {
  const fs::path dir(cfg.teacher_images);
  check(fs::is_directory(dir), "data", "teacher images '" + cfg.teacher_images + "' is not a directory");
  const std::size_t size = teacher.image_size, channels = teacher.patch_embed.channels();
  std::vector<Tensor<T>> pool;
  for (const auto& f : sorted_entries(dir, false, {".pgm", ".ppm", ".pnm"})) {
    Tensor<T> img;
    try {
      img = read_pnm<T>(f);
    } catch (const Error& e) {
      throw Error("data", f.string() + ": " + e.what());
    }
    if (img.dim(2) != channels) {
      const std::size_t n = img.dim(0) * img.dim(1), c = img.dim(2);
      const auto src = img.data();
      std::vector<T> v(n * channels);
      for (std::size_t i = 0; i < n; ++i) {
        T mean = 0;
        for (std::size_t j = 0; j < c; ++j) mean += src[i * c + j];
        mean /= static_cast<T>(c);
        for (std::size_t j = 0; j < channels; ++j) v[i * channels + j] = c == 1 ? src[i] : mean;
      }
      img = Tensor<T>({img.dim(0), img.dim(1), channels}, std::move(v));
    }
    if (img.dim(0) != size || img.dim(1) != size) img = resample_grid(img, size, size);
    pool.push_back(img);
  }
  check(!pool.empty(), "data", "no .pgm/.ppm images in '" + cfg.teacher_images + "'");
  return pool;
}

template <typename T>
Tensor<T> stack_images(const std::vector<Tensor<T>>& pool, const std::vector<std::size_t>& idx) {
  const auto& s = pool[0].shape();
  std::vector<T> buf;
  for (std::size_t i : idx) buf.insert(buf.end(), pool[i].data().begin(), pool[i].data().end());
  return Tensor<T>({idx.size(), s[0], s[1], s[2]}, std::move(buf));
}

std::string checkpoint_name(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch-%04zu.nta", epoch);
  return buf;
}

template <typename T>
void save_checkpoint(const fs::path& path, const RunConfig& cfg, const Model<T>& model, const Optimizer<T>& opt,
                     std::size_t epoch, std::size_t batch_index, std::size_t step) {
  NamedTensorArchive a;
  a.put_all(model.params());
  opt.save(a);
  auto& meta = a.metadata();
  meta["config"] = cfg.to_json();
  meta["task"] = to_string(cfg.task);
  meta["precision"] = sizeof(T) == 4 ? "f32" : "f64";
  meta["epoch"] = std::to_string(epoch);
  meta["batch_index"] = std::to_string(batch_index);
  meta["step"] = std::to_string(step);
  a.save(path);
}

std::size_t meta_size(const NamedTensorArchive& a, const std::string& key) {
  const auto it = a.metadata().find(key);
  check(it != a.metadata().end(), "resume", "checkpoint metadata lacks '" + key + "'");
  return std::stoull(it->second);
}

template <typename T>
TrainResult train_impl(const RunConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  const Dataset<T> ds = load_dataset<T>(cfg, 0);
  Model<T> model = Model<T>::build(cfg, ds);
  Optimizer<T> opt(cfg.optimizer_spec());
  const fs::path out(cfg.out);
  fs::create_directories(out);

  std::size_t start_epoch = 0, start_batch = 0, step = 0;
  if (!cfg.resume.empty()) {
    const auto a = NamedTensorArchive::load(cfg.resume);
    load_params(a, model.params());
    opt.load(a);
    start_epoch = meta_size(a, "epoch");
    start_batch = meta_size(a, "batch_index");
    step = meta_size(a, "step");
  } else if (!cfg.pretrained.empty()) {
    const auto a = NamedTensorArchive::load(cfg.pretrained);
    LoadReport r = model.voxel ? load_pretrained(a, *model.voxel) : load_pretrained(a, *model.point);
    if (!cfg.quiet)
      std::cerr << "pretrained: " << r.copied.size() << " copied, " << r.resampled.size() << " resampled\n";
  }

  std::optional<TeacherBundle<T>> teacher;
  std::vector<Tensor<T>> pool;
  const double lambda = cfg.effective_lambda();
  if (lambda > 0) {
    const auto a = NamedTensorArchive::load(cfg.teacher);
    const Vit2D<T> t = vit_from_archive<T>(a, model.backbone().config);
    check(t.backbone.config.dim == model.backbone().config.dim &&
              t.backbone.blocks.size() == model.backbone().blocks.size(),
          "config", "teacher backbone does not match the student backbone");
    teacher = TeacherBundle<T>::freeze(t, lambda, cfg.effective_teacher_batch(), cfg.kl_mean);
    pool = load_teacher_images(cfg, teacher->teacher);
  }

  std::ofstream log(out / "metrics.jsonl", cfg.resume.empty() ? std::ios::trunc : std::ios::app);
  check(static_cast<bool>(log), "io", "cannot write " + (out / "metrics.jsonl").string());

  TrainResult result;
  const ParamList<T> params = model.params();
  const std::size_t n = ds.size();
  const std::size_t batches = (n + cfg.batch - 1) / cfg.batch;
  bool stop = false;
  std::size_t epoch = start_epoch, b = start_batch;
  auto check_accuracy = [&] {
    const double acc = dataset_accuracy(model, ds, cfg.batch);
    result.train_accuracy.emplace_back(step, acc);
    log << json{{"step", step}, {"train_accuracy", acc}}.dump() << "\n";
    if (cfg.stop_at_accuracy > 0 && acc >= cfg.stop_at_accuracy) stop = true;
  };
  for (; epoch < cfg.epochs && !stop; ++epoch, b = 0) {
    const auto perm = RngStream(cfg.seed, kShuffleKey).fork(epoch).permutation(n);
    for (; b < batches && !stop; ++b) {
      if (cfg.max_steps && step >= cfg.max_steps) {
        stop = true;
        break;
      }
      const std::span<const std::size_t> idx(perm.data() + b * cfg.batch, std::min(cfg.batch, n - b * cfg.batch));
      const auto logits = model.forward(ds, idx);
      const auto task_loss = cross_entropy(logits, model.targets(ds, idx));
      StepRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      rec.task_loss = static_cast<double>(task_loss.item());
      Tensor<T> loss = task_loss;
      if (teacher) {
        RngStream r = RngStream(cfg.seed, kTeacherKey).fork(step);
        std::vector<std::size_t> pick(teacher->batch);
        for (auto& p : pick) p = r.below(pool.size());
        const auto parts = combined_loss(task_loss, *teacher,
                                         std::span<const BlockParams<T>>(model.backbone().blocks),
                                         stack_images(pool, pick));
        loss = parts.total;
        rec.kl = static_cast<double>(parts.kl.item());
      }
      rec.loss = static_cast<double>(loss.item());
      rec.lr = opt.spec().lr_at(step, epoch);
      zero_grads(params);
      loss.backward();
      opt.step(params, rec.lr);
      ++step;

      json j{{"step", rec.step}, {"epoch", rec.epoch}, {"loss", rec.loss}, {"task_loss", rec.task_loss}, {"lr", rec.lr}};
      if (rec.kl) j["kl"] = *rec.kl;
      log << j.dump() << "\n";
      result.records.push_back(rec);
      if (hooks.on_step) hooks.on_step(rec);
      if (cfg.eval_every && step % cfg.eval_every == 0) check_accuracy();
    }
    if (b == batches) {
      if (!cfg.eval_every) check_accuracy();
      if (cfg.save_every && (epoch + 1) % cfg.save_every == 0)
        save_checkpoint(out / checkpoint_name(epoch + 1), cfg, model, opt, epoch + 1, 0, step);
    }
    if (stop) break;
  }
  if (b == batches) {
    ++epoch;
    b = 0;
  }
  log.flush();
  result.steps = step;
  result.checkpoint = out / "last.nta";
  save_checkpoint(result.checkpoint, cfg, model, opt, epoch, b, step);
  return result;
}

template <typename T>
EvalResult evaluate_impl(const RunConfig& cfg, const fs::path& checkpoint) {
  cfg.validate();
  const Dataset<T> ds = load_dataset<T>(cfg, 1);
  Model<T> model = Model<T>::build(cfg, ds);
  load_params(NamedTensorArchive::load(checkpoint), model.params());
  NoGradGuard guard;
  EvalResult r;
  r.task = cfg.task;
  r.samples = ds.size();
  std::vector<int> pred_all, tgt_all;
  std::vector<SegmentedShape> shapes;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.size(); start += cfg.batch) {
    idx.clear();
    for (std::size_t i = start; i < std::min(ds.size(), start + cfg.batch); ++i) idx.push_back(i);
    const auto pred = argmax_rows(model.forward(ds, idx));
    if (cfg.task == Task::SegPoint) {
      std::size_t off = 0;
      for (std::size_t i : idx) {
        SegmentedShape s;
        s.category = ds.labels[i];
        s.target = ds.point_labels[i];
        s.pred.assign(pred.begin() + static_cast<std::ptrdiff_t>(off),
                      pred.begin() + static_cast<std::ptrdiff_t>(off + s.target.size()));
        off += s.target.size();
        shapes.push_back(std::move(s));
      }
    } else {
      pred_all.insert(pred_all.end(), pred.begin(), pred.end());
      for (std::size_t i : idx) tgt_all.push_back(ds.labels[i]);
    }
  }
  if (cfg.task == Task::SegPoint) {
    const auto m = segmentation_metrics(shapes, ds.parts);
    r.oa = m.oa;
    r.ins_miou = m.ins_miou;
    r.cat_miou = m.cat_miou;
  } else {
    const auto m = classification_metrics(pred_all, tgt_all, ds.classes);
    r.oa = m.oa;
    r.macc = m.macc;
  }
  return r;
}

template <typename T>
std::string inspect_impl(const RunConfig& cfg, const std::string& input) {
  cfg.validate();
  std::ostringstream os;
  const BackboneConfig bb = BackboneConfig::from_variant(cfg.backbone);
  RngStream rng(cfg.seed, kModelKey);
  NoGradGuard guard;
  auto norms = [](const Tensor<T>& tokens) {
    const std::size_t l = tokens.dim(1), d = tokens.dim(2);
    const auto v = tokens.data();
    std::vector<double> out(l);
    for (std::size_t i = 0; i < l; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < d; ++j) s += static_cast<double>(v[i * d + j]) * static_cast<double>(v[i * d + j]);
      out[i] = std::sqrt(s);
    }
    return out;
  };
  if (cfg.task == Task::ClsVoxel) {
    VoxelGrid<T> grid;
    if (input.rfind("synthetic:", 0) == 0) {
      grid = make_voxels<T>({parse_shape(input.substr(10)), cfg.resolution, 0, 0.0, cfg.seed});
    } else {
      grid = read_binvox<T>(input);
    }
    VoxelTokenizerConfig tok = cfg.tokenizer_config();
    tok.channels = grid.channels();
    os << "input " << input << " grid " << grid.extent(0) << "x" << grid.extent(1) << "x" << grid.extent(2) << "\n";
    if (cfg.pad_to_multiple) {
      std::string rep;
      grid = fit_to_multiple(grid, cfg.T, &rep);
      os << "fit " << rep << "\n";
    }
    grid.cell = tok.cell;
    const std::size_t h = grid.extent(0), w = grid.extent(1), z = grid.extent(2);
    const auto params = VoxelTokenizerParams<T>::init(tok, h, w, z, rng);
    const auto seq = tokenize_voxels(grid, tok, params);
    const auto map = token_cube_map(tok, h, w, z);
    os << "scheme " << to_string(tok.scheme) << " ordering " << to_string(tok.ordering) << " T " << tok.cell << "\n";
    os << "sequence_length " << seq.length() << " (" << seq.length() - 1 << " tokens + class)\n";
    const auto nv = norms(seq.tokens);
    os << "slot 0 class norm " << nv[0] << "\n";
    for (std::size_t i = 1; i < nv.size(); ++i) {
      os << "slot " << i << " norm " << nv[i] << " cubes";
      for (const auto& c : map[i - 1]) os << " (" << c[0] << "," << c[1] << "," << c[2] << ")";
      os << "\n";
    }
  } else {
    auto lc = read_xyz<T>(input, cfg.task == Task::SegPoint);
    auto sc = sample_points(lc.cloud, cfg.points, cfg.seed);
    const std::size_t width = sc.cloud.channels() ? sc.cloud.channels() : bb.dim / 4;
    PointCloud<T> pc = with_feature_width(sc.cloud, bb.dim / 4);
    const PointPipelineConfig pcfg = cfg.point_config(width, 2);
    check(pcfg.fusion == FusionMode::Outer || width == bb.dim / 4, "config",
          "inner fusion needs " + std::to_string(bb.dim / 4) + " feature columns (use --fusion outer)");
    const auto params = PointPipelineParams<T>::init(pcfg, rng);
    const auto toks = tokenize_pointcloud(std::vector<PointCloud<T>>{pc}, pcfg, params);
    const auto counts = td_counts(pcfg, cfg.points);
    os << "input " << input << " points " << cfg.points << (sc.with_replacement ? " (sampled with replacement)" : "")
       << "\n";
    os << "td_counts " << counts[0] << " " << counts[1] << "\n";
    os << "sequence_length " << toks.tokens.length() << " (" << toks.tokens.length() - 1 << " tokens + class)\n";
    const auto nv = norms(toks.tokens.tokens);
    for (std::size_t i = 0; i < nv.size(); ++i) os << "slot " << i << (i ? "" : " class") << " norm " << nv[i] << "\n";
  }
  return os.str();
}

}  // namespace

TrainResult train(const RunConfig& cfg, Precision precision, const TrainHooks& hooks) {
  return precision == Precision::F64 ? train_impl<double>(cfg, hooks) : train_impl<float>(cfg, hooks);
}

EvalResult evaluate(const RunConfig& cfg, const fs::path& checkpoint, Precision precision) {
  return precision == Precision::F64 ? evaluate_impl<double>(cfg, checkpoint) : evaluate_impl<float>(cfg, checkpoint);
}

std::string inspect_tokens(const RunConfig& cfg, const std::string& input, Precision precision) {
  return precision == Precision::F64 ? inspect_impl<double>(cfg, input) : inspect_impl<float>(cfg, input);
}

template VoxelGrid<float> fit_to_multiple(const VoxelGrid<float>&, std::size_t, std::string*);
template VoxelGrid<double> fit_to_multiple(const VoxelGrid<double>&, std::size_t, std::string*);

}  // namespace s3f
