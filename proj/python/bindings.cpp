#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "blindrest/cli.hpp"
#include "blindrest/dataset.hpp"
#include "blindrest/degradation.hpp"
#include "blindrest/diffusion.hpp"
#include "blindrest/errors.hpp"
#include "blindrest/image.hpp"
#include "blindrest/metrics.hpp"

namespace py = pybind11;
using namespace blindrest;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

// Images cross the boundary as float32 arrays of shape (H, W, C).
Array to_array(const Image& img) {
  Array out({img.height, img.width, img.channels});
  std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
  return out;
}

Image from_array(const Array& a) {
  if (a.ndim() != 3) throw DimensionError("expected an (H, W, C) array, got ndim " + std::to_string(a.ndim()));
  Image img(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
            static_cast<std::size_t>(a.shape(2)));
  if (img.channels != 1 && img.channels != 3) throw DimensionError("axis 2 (channels) must be 1 or 3");
  std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
  return img;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bindings for the blindrest C++ core";

  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);

  m.def(
      "synth_dataset",
      [](std::size_t count, std::size_t size, const std::string& generator, std::uint64_t seed) {
        DatasetSpec spec{count, size, parse_generator(generator), seed};
        validate(spec);
        py::list out;
        for (const auto& img : synth_dataset(spec)) out.append(to_array(img));
        return out;
      },
      py::arg("count") = 64, py::arg("size") = 32, py::arg("generator") = "mixed", py::arg("seed") = 0);

  m.def("load_image", [](const std::filesystem::path& p) { return to_array(load_image(p)); });
  m.def("save_image", [](const Array& a, const std::filesystem::path& p) { save_image(from_array(a), p); });

  m.def("psnr", [](const Array& a, const Array& b) { return psnr(from_array(a), from_array(b)); });
  m.def("ssim", [](const Array& a, const Array& b) { return ssim(from_array(a), from_array(b)); });

  m.def(
      "sample_plan",
      [](std::uint64_t seed, std::size_t height, std::size_t width, bool wide) {
        Rng rng(seed, 0);
        return format_plan(sample_plan(rng, {wide, 0.75}, height, width));
      },
      py::arg("seed"), py::arg("height"), py::arg("width"), py::arg("wide") = false,
      "Sample a degradation plan and return its text form.");
  m.def(
      "degrade", [](const Array& a, const std::string& plan) { return to_array(degrade(from_array(a), parse_plan(plan))); },
      py::arg("image"), py::arg("plan"));

  m.def("alpha_bars", [](int T, double beta_start, double beta_end) {
    return make_schedule(T, beta_start, beta_end).alpha_bars;
  });
  m.def("spaced_steps", &spaced_steps, py::arg("T"), py::arg("n"));

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "blindrest");
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run the command line tool in-process; returns (exit_code, stdout, stderr).");
}
