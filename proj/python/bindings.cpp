#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "specmix/dataio.hpp"
#include "specmix/eval.hpp"
#include "specmix/gradcheck.hpp"
#include "specmix/synth.hpp"
#include "specmix/trainer.hpp"

namespace py = pybind11;
using namespace specmix;

namespace {

using F32Array = py::array_t<float, py::array::c_style | py::array::forcecast>;
using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

HyperspectralCube to_cube(const F32Array& a) {
  if (a.ndim() != 3) throw py::value_error("cube must be a (height, width, bands) array");
  HyperspectralCube c;
  c.height = a.shape(0);
  c.width = a.shape(1);
  c.bands = a.shape(2);
  c.data.assign(a.data(), a.data() + a.size());
  return c;
}

F32Array from_cube(const HyperspectralCube& c) {
  F32Array a({c.height, c.width, c.bands});
  std::memcpy(a.mutable_data(), c.data.data(), c.data.size() * sizeof(float));
  return a;
}

EndmemberMatrix to_endmembers(const F64Array& a) {
  if (a.ndim() != 2) throw py::value_error("endmembers must be a (bands, materials) array");
  EndmemberMatrix e;
  e.bands = a.shape(0);
  e.materials = a.shape(1);
  e.data.assign(a.data(), a.data() + a.size());
  for (std::size_t k = 0; k < e.materials; ++k) e.names.push_back("m" + std::to_string(k));
  return e;
}

F64Array from_endmembers(const EndmemberMatrix& e) {
  F64Array a({e.bands, e.materials});
  std::memcpy(a.mutable_data(), e.data.data(), e.data.size() * sizeof(double));
  return a;
}

AbundanceField to_field(const F64Array& a) {
  if (a.ndim() != 3) throw py::value_error("abundances must be a (height, width, materials) array");
  AbundanceField f;
  f.height = a.shape(0);
  f.width = a.shape(1);
  f.materials = a.shape(2);
  f.data.assign(a.data(), a.data() + a.size());
  return f;
}

F64Array from_field(const AbundanceField& f) {
  F64Array a({f.height, f.width, f.materials});
  std::memcpy(a.mutable_data(), f.data.data(), f.data.size() * sizeof(double));
  return a;
}

TrainConfig config_from_kwargs(const py::kwargs& kw) {
  TrainConfig cfg;
  if (kw.size() > 0) {
    py::module_ json = py::module_::import("json");
    cfg = train_config_from_json(json.attr("dumps")(kw).cast<std::string>());
  }
  cfg.validate();
  return cfg;
}

struct TrainedModel {
  ModelParams<float> params;
  TrainHistory history;
};

py::list history_list(const TrainHistory& h) {
  py::list out;
  for (const auto& r : h.epochs) {
    py::dict d;
    d["epoch"] = r.epoch;
    d["sad"] = r.sad;
    d["critic_loss"] = r.critic_loss;
    d["penalty"] = r.penalty;
    d["grad_norm"] = r.grad_norm;
    d["gap"] = r.gap;
    d["seconds"] = r.seconds;
    out.append(d);
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Hyperspectral unmixing toolkit: synthetic scenes, FCLS, and the uncertainty-aware autoencoder";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.def(
      "generate_scene",
      [](std::size_t height, std::size_t width, std::size_t materials, std::size_t bands, double noise_sigma,
         double variability_scale, std::size_t blobs_per_material, double blob_sigma, std::uint64_t seed) {
        SceneConfig cfg;
        cfg.height = height;
        cfg.width = width;
        cfg.materials = materials;
        cfg.bands = bands;
        cfg.noise_sigma = noise_sigma;
        cfg.variability_scale = variability_scale;
        cfg.blobs_per_material = blobs_per_material;
        cfg.blob_sigma = blob_sigma;
        cfg.seed = seed;
        Scene s;
        {
          py::gil_scoped_release release;
          s = generate_scene(cfg);
        }
        py::dict out;
        out["cube"] = from_cube(s.cube);
        out["abundances"] = from_field(s.truth.abundances);
        out["endmembers"] = from_endmembers(s.truth.endmembers);
        return out;
      },
      py::arg("height") = 40, py::arg("width") = 40, py::arg("materials") = 4, py::arg("bands") = 200,
      py::arg("noise_sigma") = 0.01, py::arg("variability_scale") = 0.0, py::arg("blobs_per_material") = 3,
      py::arg("blob_sigma") = 0.0, py::arg("seed") = 0,
      "Synthetic scene as a dict with 'cube' (H,W,D), 'abundances' (H,W,K) and 'endmembers' (D,K).");

  m.def("generate_endmembers",
        [](std::size_t bands, std::size_t materials, std::uint64_t seed) {
          return from_endmembers(generate_endmembers(bands, materials, seed));
        },
        py::arg("bands"), py::arg("materials"), py::arg("seed") = 0);

  m.def("rmse", [](const F64Array& pred, const F64Array& gt) { return rmse(to_field(pred), to_field(gt)); },
        py::arg("pred"), py::arg("gt"));

  m.def("project_simplex",
        [](const F64Array& v) {
          std::vector<double> x(v.data(), v.data() + v.size());
          project_simplex(x);
          return x;
        },
        py::arg("v"));

  m.def(
      "fcls",
      [](const F32Array& cube, const F64Array& endmembers, double tolerance, std::size_t max_iterations) {
        const auto c = to_cube(cube);
        const auto e = to_endmembers(endmembers);
        std::vector<std::string> warnings;
        AbundanceField f;
        {
          py::gil_scoped_release release;
          f = fcls_unmix(c, e, &warnings, FclsOptions{tolerance, max_iterations});
        }
        return py::make_tuple(from_field(f), warnings);
      },
      py::arg("cube"), py::arg("endmembers"), py::arg("tolerance") = 1e-8, py::arg("max_iterations") = 10000,
      "Per-pixel fully constrained least squares. Returns (abundances, warnings).");

  py::class_<TrainedModel>(m, "Model")
      .def_static(
          "train",
          [](const F32Array& cube, const F64Array& endmembers, const py::kwargs& kw) {
            const auto c = to_cube(cube);
            const auto e = to_endmembers(endmembers);
            const TrainConfig cfg = config_from_kwargs(kw);
            TrainResult r;
            {
              py::gil_scoped_release release;
              r = train(c, e, cfg);
            }
            return TrainedModel{std::move(r.model), std::move(r.history)};
          },
          py::arg("cube"), py::arg("endmembers"),
          "Train on a (H,W,D) cube with (D,K) endmembers. Keyword arguments are TrainConfig fields.")
      .def_static("load", [](const std::string& path) { return TrainedModel{load_checkpoint(path), {}}; })
      .def("save", [](const TrainedModel& m, const std::string& path) { save_checkpoint(path, m.params); })
      .def("unmix", [](TrainedModel& m, const F32Array& cube) { return from_field(unmix(to_cube(cube), m.params)); })
      .def("latents",
           [](TrainedModel& m, const F32Array& cube) {
             const auto c = to_cube(cube);
             const auto rows = latents(c, m.params);
             F32Array a({rows.size(), static_cast<std::size_t>(m.params.dims.latent)});
             for (std::size_t i = 0; i < rows.size(); ++i)
               std::memcpy(a.mutable_data() + i * rows[i].size(), rows[i].data(), rows[i].size() * sizeof(float));
             return a;
           })
      .def_property_readonly("history", [](const TrainedModel& m) { return history_list(m.history); })
      .def_property_readonly("dims", [](const TrainedModel& m) {
        const auto& d = m.params.dims;
        py::dict out;
        out["D"] = d.bands;
        out["K"] = d.materials;
        out["M"] = d.latent;
        out["N"] = d.components;
        out["P"] = d.noise;
        return out;
      });

  m.def("read_cube", [](const std::string& path) { return from_cube(read_cube(path)); }, py::arg("path"));
  m.def("write_cube", [](const std::string& path, const F32Array& cube) { write_cube(path, to_cube(cube)); },
        py::arg("path"), py::arg("cube"));
  m.def("read_abundance", [](const std::string& path) { return from_field(read_abundance(path)); }, py::arg("path"));
  m.def("write_abundance", [](const std::string& path, const F64Array& a) { write_abundance(path, to_field(a)); },
        py::arg("path"), py::arg("abundances"));
  m.def("read_endmembers", [](const std::string& path) { return from_endmembers(read_endmembers(path)); },
        py::arg("path"));
  m.def("write_endmembers",
        [](const std::string& path, const F64Array& e) { write_endmembers(path, to_endmembers(e)); }, py::arg("path"),
        py::arg("endmembers"));

  m.def(
      "gradcheck",
      [](std::size_t trials, const std::string& filter, std::uint64_t seed) {
        GradcheckOptions opts;
        opts.trials = trials;
        opts.filter = filter;
        opts.seed = seed;
        GradcheckReport report;
        {
          py::gil_scoped_release release;
          report = run_gradcheck(opts);
        }
        py::list rows;
        for (const auto& r : report.rows) {
          py::dict d;
          d["name"] = r.name;
          d["trials"] = r.trials;
          d["redrawn"] = r.redrawn;
          d["max_rel_error"] = r.max_rel_error;
          d["tolerance"] = r.tolerance;
          d["passed"] = r.passed();
          rows.append(d);
        }
        return rows;
      },
      py::arg("trials") = 100, py::arg("filter") = "", py::arg("seed") = 0);
}
