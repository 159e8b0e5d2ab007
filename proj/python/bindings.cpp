// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <chrono>
#include <optional>

#include "diffserve/api_server.hpp"
#include "diffserve/backend.hpp"
#include "diffserve/errors.hpp"
#include "diffserve/ops.hpp"
#include "diffserve/preprocess.hpp"
#include "diffserve/registry.hpp"

namespace py = pybind11;
using namespace diffserve;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::span<const float>(a.data(), static_cast<std::size_t>(a.size())));
}

FloatArray to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  FloatArray out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

GrayImage to_gray(const FloatArray& a) {
  if (a.ndim() != 2) throw DimensionError("expected a 2-D array");
  GrayImage g(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), g.data.begin());
  return g;
}

FloatArray gray_to_array(const GrayImage& g) {
  FloatArray out({g.height, g.width});
  std::copy(g.data.begin(), g.data.end(), out.mutable_data());
  return out;
}

std::optional<Tensor> optional_tensor(const std::optional<FloatArray>& a) {
  if (!a) return std::nullopt;
  return to_tensor(*a);
}

std::shared_ptr<ApiService> make_service(const std::optional<std::string>& models_dir, const std::string& output_dir,
                                         std::optional<int> stub_latency_ms, int concurrency, int queue_size,
                                         double task_ttl_s, int max_image_num) {
  std::shared_ptr<GenerationBackend> backend;
  if (stub_latency_ms) {
    backend = std::make_shared<StubBackend>(std::chrono::milliseconds(*stub_latency_ms));
  } else {
    if (!models_dir) throw InvalidArgument("models_dir is required unless stub_latency_ms is set");
    backend = std::make_shared<PipelineBackend>(std::shared_ptr<const ModelRegistry>(ModelRegistry::load(*models_dir)),
                                                output_dir);
  }
  ServiceOptions opt;
  opt.concurrency = concurrency;
  opt.queue_size = queue_size;
  opt.task_ttl_s = task_ttl_s;
  opt.limits.max_image_num = max_image_num;
  return std::make_shared<ApiService>(backend, opt);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of diffserve";

  py::register_exception<Error>(m, "Error");
  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<NotFound>(m, "NotFound", PyExc_LookupError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);

  m.def("init_toy_models", [](const std::string& dir, std::uint64_t seed) { return init_toy_models(dir, seed).string(); },
        py::arg("dir"), py::arg("seed") = 42, "Write the toy model zoo and return the registry path.");

  // Kernels, for checking against numpy.
  m.def("matmul", [](const FloatArray& a, const FloatArray& b) { return to_array(ops::matmul(to_tensor(a), to_tensor(b))); });
  m.def(
      "conv2d",
      [](const FloatArray& x, const FloatArray& w, const std::optional<FloatArray>& bias, int stride, int padding) {
        const std::optional<Tensor> b = optional_tensor(bias);
        return to_array(ops::conv2d(to_tensor(x), to_tensor(w), b ? &*b : nullptr, stride, padding));
      },
      py::arg("x"), py::arg("weight"), py::arg("bias") = py::none(), py::arg("stride") = 1, py::arg("padding") = 0);
  m.def("attention", [](const FloatArray& q, const FloatArray& k, const FloatArray& v) {
    return to_array(ops::attention(to_tensor(q), to_tensor(k), to_tensor(v)));
  });
  m.def(
      "group_norm",
      [](const FloatArray& x, int groups, const FloatArray& gamma, const FloatArray& beta, float eps) {
        return to_array(ops::group_norm(to_tensor(x), groups, to_tensor(gamma), to_tensor(beta), eps));
      },
      py::arg("x"), py::arg("groups"), py::arg("gamma"), py::arg("beta"), py::arg("eps") = 1e-5f);
  m.def(
      "layer_norm",
      [](const FloatArray& x, const FloatArray& gamma, const FloatArray& beta, float eps) {
        return to_array(ops::layer_norm(to_tensor(x), to_tensor(gamma), to_tensor(beta), eps));
      },
      py::arg("x"), py::arg("gamma"), py::arg("beta"), py::arg("eps") = 1e-5f);
  m.def("silu", [](const FloatArray& x) { return to_array(ops::silu(to_tensor(x))); });
  m.def("gelu", [](const FloatArray& x) { return to_array(ops::gelu(to_tensor(x))); });

  m.def(
      "canny",
      [](const FloatArray& img, double low, double high, double sigma) {
        return gray_to_array(canny(to_gray(img), low, high, sigma));
      },
      py::arg("image"), py::arg("low_threshold") = 0.1, py::arg("high_threshold") = 0.3, py::arg("sigma") = 1.0,
      "Binary edge map of a 2-D float image in [0, 1].");
  m.def("depth_proxy", [](const FloatArray& img) { return gray_to_array(depth_proxy(to_gray(img))); });

  // The HTTP API, callable in-process or served on a port. Bodies are JSON
  // text; the Python wrapper handles dicts.
  py::class_<ApiService, std::shared_ptr<ApiService>>(m, "ApiService")
      .def(py::init(&make_service), py::arg("models_dir") = py::none(), py::arg("output_dir") = "outputs",
           py::arg("stub_latency_ms") = py::none(), py::arg("concurrency") = 0, py::arg("queue_size") = 16,
           py::arg("task_ttl_s") = 600.0, py::arg("max_image_num") = 4)
      .def(
          "handle",
          [](ApiService& s, const std::string& method, const std::string& path, const std::string& body) {
            ApiResponse r;
            {
              py::gil_scoped_release release;
              r = s.handle(method, path, body);
            }
            return py::make_tuple(r.status, r.body.dump());
          },
          py::arg("method"), py::arg("path"), py::arg("body") = "")
      .def_property_readonly("queue_depth", &ApiService::queue_depth)
      .def_property_readonly("in_flight", &ApiService::in_flight);

  py::class_<HttpServer>(m, "HttpServer")
      .def(py::init<std::shared_ptr<ApiService>, std::string, int, int>(), py::arg("service"),
           py::arg("host") = "127.0.0.1", py::arg("port") = 0, py::arg("threads") = 0)
      .def("start", &HttpServer::start, py::call_guard<py::gil_scoped_release>(), "Bind and serve; returns the port.")
      .def("stop", &HttpServer::stop, py::call_guard<py::gil_scoped_release>());
}
