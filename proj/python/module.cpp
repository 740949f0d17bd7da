// SPDX-License-Identifier: Apache-2.0
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "s3f/archive.hpp"
#include "s3f/binvox.hpp"
#include "s3f/run.hpp"
#include "s3f/synthetic.hpp"
#include "s3f/transfer.hpp"

namespace py = pybind11;
using namespace s3f;

namespace {

template <typename T>
using Array = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T>
Tensor<T> to_tensor(const Array<T>& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<T>(std::move(shape), std::vector<T>(a.data(), a.data() + a.size()));
}

template <typename T>
py::array_t<T> to_numpy(const Tensor<T>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<T> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

std::span<const double> coords_of(const Array<double>& a, const char* what) {
  if (a.ndim() != 2 || a.shape(1) != 3) throw py::value_error(std::string(what) + " must have shape (N, 3)");
  return {a.data(), static_cast<std::size_t>(a.size())};
}

VoxelTokenizerConfig tokenizer(const std::string& scheme, const std::string& ordering, std::size_t t,
                               std::size_t dim, std::size_t channels) {
  VoxelTokenizerConfig c;
  c.scheme = parse_scheme(scheme);
  c.ordering = parse_ordering(ordering);
  c.cell = t;
  c.dim = dim;
  c.channels = channels;
  c.group_heads = dim % 4 == 0 ? 4 : 1;
  return c;
}

Precision precision_arg(const std::string& p) { return p.empty() ? precision_from_env() : parse_precision(p); }

}  // namespace

PYBIND11_MODULE(_s3f, m) {
  m.doc() = "Voxel and point-cloud tokenizers, ViT weight transfer and training workflows";
  py::register_exception<Error>(m, "S3fError", PyExc_ValueError);

  m.def(
      "token_count",
      [](const std::string& scheme, const std::string& ordering, std::size_t t, std::size_t h, std::size_t w,
         std::size_t z) { return token_count(tokenizer(scheme, ordering, t, 4, 1), h, w, z); },
      py::arg("scheme"), py::arg("ordering") = "xyz", py::arg("T"), py::arg("h"), py::arg("w"), py::arg("z"),
      "Tokens excluding the class token.");

  m.def(
      "tokenize_voxels",
      [](const Array<double>& grids, const std::string& scheme, const std::string& ordering, std::size_t t,
         std::size_t dim, std::uint64_t seed) {
        if (grids.ndim() != 5) throw py::value_error("grids must have shape (B, H, W, Z, C)");
        const auto cfg = tokenizer(scheme, ordering, t, dim, grids.shape(4));
        RngStream rng(seed);
        const auto p = VoxelTokenizerParams<double>::init(cfg, grids.shape(1), grids.shape(2), grids.shape(3), rng);
        return to_numpy(tokenize_voxels(to_tensor(grids), cfg, p).tokens);
      },
      py::arg("grids"), py::arg("scheme") = "projection", py::arg("ordering") = "xyz", py::arg("T") = 6,
      py::arg("dim") = 64, py::arg("seed") = 0,
      "Token sequence (B, 1 + N, D) from freshly initialized tokenizer weights.");

  m.def(
      "farthest_point_sample",
      [](const Array<double>& xyz, std::size_t count) {
        return farthest_point_sample(coords_of(xyz, "xyz"), count);
      },
      py::arg("xyz"), py::arg("count"));

  m.def(
      "knn",
      [](const Array<double>& query, const Array<double>& ref, std::size_t k) {
        const auto idx = knn(coords_of(query, "query"), coords_of(ref, "ref"), k);
        py::array_t<std::size_t> out({static_cast<py::ssize_t>(query.shape(0)), static_cast<py::ssize_t>(k)});
        std::copy(idx.begin(), idx.end(), out.mutable_data());
        return out;
      },
      py::arg("query"), py::arg("ref"), py::arg("k"));

  m.def(
      "interpolate",
      [](const Array<double>& feats, const Array<double>& query, const Array<double>& ref, std::size_t k) {
        const auto w = idw_weights(coords_of(query, "query"), coords_of(ref, "ref"), k);
        return to_numpy(interpolate(to_tensor(feats), w, 1, ref.shape(0)));
      },
      py::arg("feats"), py::arg("query"), py::arg("ref"), py::arg("k") = 3,
      "Inverse-distance interpolation of per-point features onto query points.");

  m.def(
      "resample_pos_embed",
      [](const Array<double>& pos, std::size_t th, std::size_t tw) {
        return to_numpy(resample_pos_embed(to_tensor(pos), th, tw));
      },
      py::arg("pos"), py::arg("height"), py::arg("width"));

  m.def(
      "kl_divergence",
      [](const Array<double>& p, const Array<double>& q) { return kl_divergence(to_tensor(p), to_tensor(q)).item(); },
      py::arg("p"), py::arg("q"));

  m.def(
      "decode_binvox",
      [](const py::bytes& data) {
        const std::string s = data;
        const auto f = decode_binvox(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
        py::dict out;
        out["voxels"] = to_numpy(to_grid<double>(f).values);
        out["translate"] = f.translate;
        out["scale"] = f.scale;
        return out;
      },
      py::arg("data"), "Occupancy grid (d, d, d, 1) plus the header transform.");

  m.def(
      "encode_binvox",
      [](const Array<double>& grid, std::array<double, 3> translate, double scale) {
        BinvoxFile f = from_grid(VoxelGrid<double>{to_tensor(grid)});
        f.translate = translate;
        f.scale = scale;
        const auto bytes = encode_binvox(f);
        return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
      },
      py::arg("grid"), py::arg("translate") = std::array<double, 3>{0, 0, 0}, py::arg("scale") = 1.0);

  m.def(
      "load_archive",
      [](const std::string& path) {
        const auto a = NamedTensorArchive::load(path);
        py::dict tensors;
        for (const auto& name : a.names()) {
          if (a.entry(name).dtype == DType::F32)
            tensors[py::str(name)] = to_numpy(a.get<float>(name));
          else
            tensors[py::str(name)] = to_numpy(a.get<double>(name));
        }
        return py::make_tuple(tensors, a.metadata());
      },
      py::arg("path"), "Returns (tensors, metadata).");

  m.def(
      "save_archive",
      [](const std::string& path, const py::dict& tensors, const std::map<std::string, std::string>& metadata) {
        NamedTensorArchive a;
        for (const auto& [k, v] : tensors) {
          const auto name = py::cast<std::string>(k);
          const auto arr = py::array::ensure(v);
          if (arr.dtype().is(py::dtype::of<float>()))
            a.put(name, to_tensor(py::cast<Array<float>>(arr)));
          else
            a.put(name, to_tensor(py::cast<Array<double>>(arr)));
        }
        a.metadata() = metadata;
        a.save(path);
      },
      py::arg("path"), py::arg("tensors"), py::arg("metadata") = std::map<std::string, std::string>{},
      "float32 arrays are stored as F32, everything else as F64.");

  m.def(
      "validate_contract",
      [](const std::string& path, std::size_t depth) { validate_contract(NamedTensorArchive::load(path), depth); },
      py::arg("path"), py::arg("depth"));

  m.def(
      "make_voxels",
      [](const std::string& shape, std::size_t resolution, double jitter, std::uint64_t seed) {
        return to_numpy(make_voxels<double>({parse_shape(shape), resolution, 0, jitter, seed}).values);
      },
      py::arg("shape"), py::arg("resolution") = 16, py::arg("jitter") = 0.0, py::arg("seed") = 0);

  m.def(
      "train",
      [](const std::string& config_json, const std::string& precision) {
        const auto cfg = RunConfig::from_json(config_json);
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(cfg, precision_arg(precision));
        }
        py::dict out;
        out["steps"] = r.steps;
        out["checkpoint"] = r.checkpoint.string();
        std::vector<double> losses;
        for (const auto& rec : r.records) losses.push_back(rec.loss);
        out["losses"] = losses;
        out["train_accuracy"] = r.train_accuracy;
        return out;
      },
      py::arg("config_json"), py::arg("precision") = "",
      "Run training from a JSON config; precision defaults to S3F_PRECISION or f32.");

  m.def(
      "evaluate",
      [](const std::string& config_json, const std::string& checkpoint, const std::string& precision) {
        const auto cfg = RunConfig::from_json(config_json);
        py::gil_scoped_release release;
        return evaluate(cfg, checkpoint, precision_arg(precision)).to_json();
      },
      py::arg("config_json"), py::arg("checkpoint"), py::arg("precision") = "", "Metrics as a JSON string.");

  m.def(
      "inspect_tokens",
      [](const std::string& config_json, const std::string& input, const std::string& precision) {
        return inspect_tokens(RunConfig::from_json(config_json), input, precision_arg(precision));
      },
      py::arg("config_json"), py::arg("input"), py::arg("precision") = "");

  m.def("default_config", [] { return RunConfig{}.to_json(); }, "Default run configuration as JSON.");
}
