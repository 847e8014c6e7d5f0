#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "land/diffusion.hpp"
#include "land/gradcheck.hpp"
#include "land/io.hpp"
#include "land/metrics.hpp"
#include "land/pipeline.hpp"

namespace py = pybind11;
using namespace land;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Volume to_volume(const Array& a) {
  if (a.ndim() != 4) throw ShapeError(concat("expected a 4-d array (C, D, H, W), got ", a.ndim(), " dims"));
  const Shape s{int(a.shape(0)), int(a.shape(1)), int(a.shape(2)), int(a.shape(3))};
  return Volume(s, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Volume& v) {
  const Shape& s = v.shape();
  Array a({s.c, s.d, s.h, s.w});
  std::copy(v.values().begin(), v.values().end(), a.mutable_data());
  return a;
}

py::array_t<std::uint8_t> mask_to_array(const MaskVolume& m) {
  py::array_t<std::uint8_t> a({m.d, m.h, m.w});
  std::copy(m.labels.begin(), m.labels.end(), a.mutable_data());
  return a;
}

MaskVolume array_to_mask(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 3) throw ShapeError("mask must be a 3-d array (D, H, W)");
  MaskVolume m(int(a.shape(0)), int(a.shape(1)), int(a.shape(2)));
  std::copy(a.data(), a.data() + a.size(), m.labels.begin());
  return m;
}

py::object to_py(const Json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

RunConfig config_of(const std::optional<std::string>& json_text) {
  return json_text ? parse_config(*json_text) : RunConfig{};
}

std::optional<RunConfig> maybe_config(const std::optional<std::string>& json_text) {
  if (!json_text) return std::nullopt;
  return parse_config(*json_text);
}

std::vector<Volume> volumes_of(const std::vector<Array>& arrays) {
  std::vector<Volume> out;
  for (const auto& a : arrays) out.push_back(to_volume(a));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Latent diffusion for 3D phantom volumes";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  m.attr("build_id") = build_id();

  // config
  m.def("default_config", [] { return dump_config(RunConfig{}); });
  m.def("normalize_config", [](const std::string& text) { return dump_config(parse_config(text)); },
        py::arg("config_json"));
  m.def("config_hash", [](const std::string& text) { return to_hex(config_hash(parse_config(text))); },
        py::arg("config_json"));

  // phantoms and files
  m.def(
      "generate_phantom",
      [](std::uint64_t seed, const std::optional<std::string>& cfg) {
        Rng rng(seed);
        const Phantom p = generate_phantom(config_of(cfg).data, rng);
        py::list nodules;
        for (const auto& n : p.nodules)
          nodules.append(py::dict(py::arg("center") = n.center, py::arg("radius") = n.radius,
                                  py::arg("texture") = n.texture));
        return py::make_tuple(to_array(p.volume), mask_to_array(p.mask), nodules);
      },
      py::arg("seed"), py::arg("config_json") = py::none());
  m.def("read_volume", [](const fs::path& p) { return to_array(read_volume(p)); });
  m.def("write_volume", [](const fs::path& p, const Array& a) { write_volume(p, to_volume(a)); });
  m.def("read_mask", [](const fs::path& p) { return mask_to_array(read_mask(p)); });
  m.def("write_mask", [](const fs::path& p, const py::array_t<std::uint8_t>& a) { write_mask(p, array_to_mask(a)); });

  // masks
  m.def(
      "encode_mask",
      [](const py::array_t<std::uint8_t>& a, const std::string& mode) {
        return to_array(encode_mask(array_to_mask(a), parse_mode(mode)));
      },
      py::arg("labels"), py::arg("mode"));
  m.def(
      "downsample_mask", [](const Array& a, int factor) { return to_array(downsample_mask(to_volume(a), factor)); },
      py::arg("encoded"), py::arg("factor") = 4);

  // diffusion
  m.def(
      "linear_schedule",
      [](int T, double beta1, double betaT) {
        const NoiseSchedule s = linear_schedule(T, beta1, betaT);
        return py::dict(py::arg("beta") = s.beta, py::arg("alpha_bar") = s.alpha_bar, py::arg("snr") = s.snr);
      },
      py::arg("T") = 1000, py::arg("beta1") = 1e-4, py::arg("betaT") = 0.02);
  m.def(
      "q_sample",
      [](const Array& x0, int t, const Array& eps) {
        return to_array(q_sample(to_volume(x0), t, to_volume(eps), linear_schedule()));
      },
      py::arg("x0"), py::arg("t"), py::arg("eps"));
  m.def(
      "v_target",
      [](const Array& x0, const Array& eps, int t) {
        return to_array(v_target(to_volume(x0), to_volume(eps), t, linear_schedule()));
      },
      py::arg("x0"), py::arg("eps"), py::arg("t"));
  m.def(
      "x0_from_v",
      [](const Array& z, const Array& v, int t) {
        return to_array(x0_from_v(to_volume(z), to_volume(v), t, linear_schedule()));
      },
      py::arg("z_t"), py::arg("v"), py::arg("t"));
  m.def(
      "eps_from_v",
      [](const Array& z, const Array& v, int t) {
        return to_array(eps_from_v(to_volume(z), to_volume(v), t, linear_schedule()));
      },
      py::arg("z_t"), py::arg("v"), py::arg("t"));
  m.def(
      "min_snr_weight", [](int t, double gamma) { return min_snr_weight(t, linear_schedule(), gamma); },
      py::arg("t"), py::arg("gamma") = 5.0);

  // metrics
  m.def("ssim3d", [](const Array& x, const Array& y) { return ssim3d(to_volume(x), to_volume(y)); });
  m.def("ms_ssim3d", [](const Array& x, const Array& y) { return ms_ssim3d(to_volume(x), to_volume(y)); });
  m.def(
      "fid",
      [](const std::vector<Array>& real, const std::vector<Array>& synth, std::uint64_t seed) {
        const PyramidExtractor ex(seed);
        return fid(volumes_of(real), volumes_of(synth), ex).value;
      },
      py::arg("real"), py::arg("synth"), py::arg("extractor_seed") = 1);
  m.def(
      "frechet_distance",
      [](const std::vector<double>& mu_a, const std::vector<std::vector<double>>& cov_a,
         const std::vector<double>& mu_b, const std::vector<std::vector<double>>& cov_b) {
        auto stats = [](const std::vector<double>& mu, const std::vector<std::vector<double>>& cov) {
          GaussianStats g;
          g.mean = mu;
          const int n = int(mu.size());
          g.cov = Matrix(n, n);
          if (int(cov.size()) != n) throw ShapeError("covariance size does not match the mean");
          for (int i = 0; i < n; ++i) {
            if (int(cov[i].size()) != n) throw ShapeError("covariance must be square");
            for (int j = 0; j < n; ++j) g.cov(i, j) = cov[i][j];
          }
          return g;
        };
        return frechet_distance(stats(mu_a, cov_a), stats(mu_b, cov_b));
      },
      py::arg("mu_a"), py::arg("cov_a"), py::arg("mu_b"), py::arg("cov_b"));

  // pipeline commands; reports come back as dicts
  m.def(
      "gradcheck",
      [](const std::string& filter, std::size_t per_param) { return to_py(gradcheck_run(filter, per_param)); },
      py::arg("filter") = "", py::arg("per_param") = 24);
  m.def("gradcheck_cases", &gradcheck_case_names);
  m.def(
      "phantom_gen",
      [](const fs::path& out, int n, const std::optional<std::string>& cfg, int threads) {
        return to_py(phantom_gen(config_of(cfg), n, out, threads));
      },
      py::arg("out"), py::arg("n"), py::arg("config_json") = py::none(), py::arg("threads") = 1);
  m.def(
      "vae_train",
      [](const fs::path& data, const fs::path& out, long steps, const std::optional<std::string>& cfg, bool resume) {
        TrainRunOptions o;
        o.steps = steps;
        o.resume = resume;
        o.print_every = 0;
        return to_py(vae_train(config_of(cfg), data, out, o));
      },
      py::arg("data"), py::arg("out"), py::arg("steps") = -1, py::arg("config_json") = py::none(),
      py::arg("resume") = false);
  m.def(
      "diffusion_train",
      [](const fs::path& data, const fs::path& vae_ckpt, const fs::path& out, const std::string& mode, long steps,
         const std::optional<std::string>& cfg, bool resume) {
        DiffusionRunOptions o;
        o.steps = steps;
        o.resume = resume;
        o.mode = parse_mode(mode);
        o.print_every = 0;
        return to_py(diffusion_train(config_of(cfg), data, vae_ckpt, out, o));
      },
      py::arg("data"), py::arg("vae_ckpt"), py::arg("out"), py::arg("mode") = "nodule+lung+texture",
      py::arg("steps") = -1, py::arg("config_json") = py::none(), py::arg("resume") = false);
  m.def(
      "sample",
      [](const fs::path& ckpt, const fs::path& vae_ckpt, const fs::path& out, int n, std::optional<fs::path> mask,
         std::optional<std::uint64_t> seed, int threads) {
        SampleRunOptions o;
        o.n = n;
        o.mask = std::move(mask);
        o.seed = seed;
        o.threads = threads;
        return to_py(sample_run(std::nullopt, ckpt, vae_ckpt, out, o));
      },
      py::arg("ckpt"), py::arg("vae_ckpt"), py::arg("out"), py::arg("n") = 1, py::arg("mask") = py::none(),
      py::arg("seed") = py::none(), py::arg("threads") = 1);
  m.def(
      "eval_fid",
      [](const fs::path& real, const fs::path& synth, const std::optional<std::string>& cfg) {
        return to_py(eval_fid_run(maybe_config(cfg), real, synth, 1));
      },
      py::arg("real"), py::arg("synth"), py::arg("config_json") = py::none());
  m.def(
      "eval_msssim",
      [](const fs::path& set, std::optional<std::size_t> pairs, const std::optional<std::string>& cfg) {
        return to_py(eval_msssim_run(maybe_config(cfg), set, pairs, 1));
      },
      py::arg("set"), py::arg("pairs") = py::none(), py::arg("config_json") = py::none());
}
