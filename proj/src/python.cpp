#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "semcom/channel.hpp"
#include "semcom/codec.hpp"
#include "semcom/error.hpp"
#include "semcom/generative.hpp"
#include "semcom/harness.hpp"
#include "semcom/metrics.hpp"
#include "semcom/synthetic.hpp"
#include "semcom/training.hpp"

namespace py = pybind11;
using namespace semcom;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

ImageTensor to_image(const FloatArray& a) {
  if (a.ndim() != 3) throw py::value_error("expected an H x W x C array");
  ImageTensor img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)));
  std::copy(a.data(), a.data() + a.size(), img.values().begin());
  return img;
}

FloatArray from_image(const ImageTensor& img) {
  FloatArray out({img.height(), img.width(), img.channels()});
  std::copy(img.values().begin(), img.values().end(), out.mutable_data());
  return out;
}

BinaryMask to_mask(const py::array_t<bool, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw py::value_error("expected an H x W boolean array");
  std::vector<std::uint8_t> bits(a.data(), a.data() + a.size());
  return BinaryMask(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), std::move(bits));
}

py::array_t<bool> from_mask(const BinaryMask& m) {
  py::array_t<bool> out({m.height(), m.width()});
  std::copy(m.bits().begin(), m.bits().end(), out.mutable_data());
  return out;
}

py::dict report_dict(const metrics::MetricReport& r) {
  py::dict d;
  const auto j = metrics::to_json(r);
  for (const auto& [k, v] : j.items()) {
    if (v.is_null()) {
      d[py::str(k)] = py::none();
    } else if (v.is_string()) {
      d[py::str(k)] = v.get<std::string>();
    } else if (v.is_number_unsigned()) {
      d[py::str(k)] = v.get<std::uint64_t>();
    } else if (v.is_number_integer()) {
      d[py::str(k)] = v.get<std::int64_t>();
    } else if (v.is_number()) {
      d[py::str(k)] = v.get<double>();
    } else {
      d[py::str(k)] = py::str(v.dump());
    }
  }
  return d;
}

}  // namespace

PYBIND11_MODULE(_semcom, m) {
  m.doc() = "Semantic communication simulator core";

  static py::exception<Error> error_type(m, "SemcomError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error_type, e.what());
    }
  });

  m.def("noise_variance", &channel::noise_variance, py::arg("snr_db"));
  m.def(
      "awgn",
      [](const DoubleArray& symbols, double snr_db, std::uint64_t seed, std::uint64_t stream) {
        channel::SymbolVector v{{symbols.data(), symbols.data() + symbols.size()}};
        const auto out = channel::transmit(v, {snr_db, seed}, stream);
        return DoubleArray(static_cast<py::ssize_t>(out.values.size()), out.values.data());
      },
      py::arg("symbols"), py::arg("snr_db"), py::arg("seed") = 0, py::arg("stream") = 0);

  m.def(
      "allocate_bandwidth",
      [](const std::vector<bool>& critical, int total, double weight, const std::vector<double>& scores) {
        codec::PatchGrid grid;
        grid.rows = 1;
        grid.cols = static_cast<int>(critical.size());
        for (bool c : critical) grid.labels.push_back(c ? codec::PatchLabel::Critical : codec::PatchLabel::Background);
        return codec::allocate_bandwidth(grid, total, weight, scores).per_patch_symbols;
      },
      py::arg("critical"), py::arg("total"), py::arg("weight"), py::arg("scores") = std::vector<double>{});

  m.def(
      "weighted_mse",
      [](const FloatArray& recon, const FloatArray& target, const py::array_t<bool>& mask, double w) {
        return training::weighted_mse(to_image(recon), to_image(target), to_mask(mask), w);
      },
      py::arg("recon"), py::arg("target"), py::arg("mask"), py::arg("weight"));

  m.def(
      "snr_to_timestep",
      [](double snr_db, int timesteps, double beta_start, double beta_end) {
        return generative::snr_to_timestep(snr_db, generative::NoiseSchedule::linear(timesteps, beta_start, beta_end));
      },
      py::arg("snr_db"), py::arg("timesteps") = 100, py::arg("beta_start") = 1e-4, py::arg("beta_end") = 0.1);

  m.def(
      "guidance_loss",
      [](const DoubleArray& mu, const DoubleArray& log_var, const DoubleArray& z, int t, int timesteps) {
        const auto sched = generative::NoiseSchedule::linear(timesteps);
        return generative::guidance_loss({mu.data(), static_cast<std::size_t>(mu.size())},
                                         {log_var.data(), static_cast<std::size_t>(log_var.size())},
                                         {z.data(), static_cast<std::size_t>(z.size())}, t, sched);
      },
      py::arg("mu"), py::arg("log_var"), py::arg("z_clean"), py::arg("t"), py::arg("timesteps") = 100);

  m.def(
      "psnr", [](const FloatArray& a, const FloatArray& b) { return metrics::psnr(to_image(a), to_image(b)); },
      py::arg("a"), py::arg("b"));
  m.def(
      "ssim", [](const FloatArray& a, const FloatArray& b) { return metrics::ssim(to_image(a), to_image(b)); },
      py::arg("a"), py::arg("b"));
  m.def(
      "iou", [](const py::array_t<bool>& a, const py::array_t<bool>& b) { return metrics::iou(to_mask(a), to_mask(b)); },
      py::arg("a"), py::arg("b"));

  m.def(
      "generate_synthetic",
      [](int n, std::uint64_t seed, int max_shapes) {
        synthetic::SceneOptions options;
        options.max_shapes = max_shapes;
        py::list out;
        for (const auto& s : synthetic::generate_synthetic(n, seed, options)) {
          py::dict d;
          d["id"] = s.id;
          d["image"] = from_image(s.image);
          d["mask"] = from_mask(s.mask);
          d["query"] = s.query;
          d["shape"] = std::string(synthetic::shape_name(s.shape));
          out.append(d);
        }
        return out;
      },
      py::arg("n"), py::arg("seed") = 0, py::arg("max_shapes") = 3);

  m.def(
      "run_experiment",
      [](const std::filesystem::path& config, std::optional<std::filesystem::path> out_dir,
         std::optional<std::uint64_t> seed) {
        auto cfg = harness::load_experiment(config);
        if (out_dir) cfg.out_dir = *out_dir;
        if (seed) cfg.seed = *seed;
        harness::GridResult result;
        {
          py::gil_scoped_release release;
          result = harness::run_grid(cfg);
        }
        py::list rows;
        for (const auto& c : result.cells) rows.append(report_dict(c.report));
        return rows;
      },
      py::arg("config"), py::arg("out_dir") = py::none(), py::arg("seed") = py::none());

  m.def("csv_columns", &metrics::csv_columns);
}
