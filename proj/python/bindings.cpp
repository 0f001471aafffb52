#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dragkit/config.hpp"
#include "dragkit/dragengine.hpp"
#include "dragkit/error.hpp"

namespace py = pybind11;
using namespace dragkit;

namespace {

using Coord = std::pair<int, int>;
using PairList = std::vector<std::pair<Coord, Coord>>;
using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<PointPair> to_pairs(const PairList& in) {
    std::vector<PointPair> out;
    for (const auto& [h, t] : in) out.push_back({{h.first, h.second}, {t.first, t.second}});
    return out;
}

Array grid_to_array(const ScalarGrid2D& g) {
    Array out({g.height(), g.width()});
    std::copy(g.values().begin(), g.values().end(), out.mutable_data());
    return out;
}

Image array_to_image(const Array& a) {
    if (a.ndim() != 3 || a.shape(2) != 3) throw Error(ErrorKind::InvalidInput, "image must be an H x W x 3 array");
    Image img(a.shape(0), a.shape(1));
    std::copy(a.data(), a.data() + a.size(), img.rgb.begin());
    return img;
}

Array image_to_array(const Image& img) {
    Array out({img.height, img.width, std::size_t{3}});
    std::copy(img.rgb.begin(), img.rgb.end(), out.mutable_data());
    return out;
}

LatentField array_to_latent(const Array& a, int t) {
    if (a.ndim() != 3) throw Error(ErrorKind::InvalidInput, "latent must be a C x H x W array");
    return LatentField(a.shape(0), a.shape(1), a.shape(2), t, std::vector<double>(a.data(), a.data() + a.size()));
}

Array latent_to_array(const LatentField& z) {
    Array out({z.channels(), z.height(), z.width()});
    std::copy(z.values().begin(), z.values().end(), out.mutable_data());
    return out;
}

DiffusionModel model_for(int steps) {
    DiffusionModel m;
    m.schedule = NoiseSchedule::cosine(steps);
    return m;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "dragkit core bindings";
    py::register_exception<Error>(m, "DragkitError", PyExc_ValueError);

    m.def("rasterize_drag_path",
          [](Coord handle, Coord target, std::size_t height, std::size_t width) {
              const PathRaster r = rasterize_drag_path({{handle.first, handle.second}, {target.first, target.second}},
                                                       {height, width});
              std::vector<Coord> cells;
              for (const auto& c : r.cells) cells.emplace_back(c.x, c.y);
              return cells;
          },
          py::arg("handle"), py::arg("target"), py::arg("height"), py::arg("width"));

    m.def("soft_mask",
          [](const PairList& pairs, std::size_t height, std::size_t width, double sigma) {
              return grid_to_array(generate_soft_mask(to_pairs(pairs), {height, width}, sigma).grid);
          },
          py::arg("pairs"), py::arg("height"), py::arg("width"), py::arg("sigma"));

    m.def("displacement_field",
          [](const PairList& pairs, std::size_t height, std::size_t width, double sigma, double rho) {
              const SoftMask mask = generate_soft_mask(to_pairs(pairs), {height, width}, sigma);
              LwfParams p;
              p.rho = rho;
              const DisplacementField f = compute_displacement_field(mask, to_pairs(pairs), p);
              Array out({height, width, std::size_t{2}});
              double* d = out.mutable_data();
              for (const auto& v : f.vectors) {
                  *d++ = v.x;
                  *d++ = v.y;
              }
              return out;
          },
          py::arg("pairs"), py::arg("height"), py::arg("width"), py::arg("sigma"), py::arg("rho") = 0.15);

    m.def("ddim_invert",
          [](const Array& z0, int to_t, int steps) {
              const DiffusionModel model = model_for(steps);
              return latent_to_array(ddim_invert(array_to_latent(z0, 0), to_t, model.denoiser, model.schedule));
          },
          py::arg("latent"), py::arg("to_t"), py::arg("steps") = 50);

    m.def("ddim_denoise",
          [](const Array& zt, int from_t, int steps) {
              const DiffusionModel model = model_for(steps);
              return latent_to_array(ddim_denoise(array_to_latent(zt, from_t), 0, model.denoiser, model.schedule));
          },
          py::arg("latent"), py::arg("from_t"), py::arg("steps") = 50);

    m.def("aldd_schedule",
          [](int denoise_steps, int b) {
              std::vector<std::string> out;
              for (AlddAction a : aldd_schedule(denoise_steps, b)) out.push_back(a == AlddAction::Drag ? "drag" : "denoise");
              return out;
          },
          py::arg("denoise_steps"), py::arg("drag_steps_per_denoise"));

    m.def("mean_distance",
          [](const std::vector<std::pair<double, double>>& handles, const std::vector<std::pair<double, double>>& targets) {
              std::vector<Point2> h, t;
              for (const auto& [x, y] : handles) h.push_back({x, y});
              for (const auto& [x, y] : targets) t.push_back({x, y});
              return mean_distance(h, t);
          },
          py::arg("handles"), py::arg("targets"));

    m.def("make_blob_scene",
          [](std::size_t height, std::size_t width, std::pair<double, double> centre, double sigma) {
              return image_to_array(make_blob_scene(height, width, {centre.first, centre.second}, sigma));
          },
          py::arg("height") = 64, py::arg("width") = 64, py::arg("centre") = std::pair{24.0, 32.0},
          py::arg("sigma") = 5.0);

    m.def("default_config", [] { return config_to_json(EngineConfig{}); });

    m.def("run_drag_edit",
          [](const Array& image, const PairList& pairs, const std::string& config_json, std::uint64_t seed) {
              const EngineConfig cfg = parse_config(config_json.empty() ? "{}" : config_json);
              const Image img = array_to_image(image);
              EditResult r;
              {
                  py::gil_scoped_release release;
                  const ReadoutHead head = resolve_head(cfg, seed);
                  r = run_drag_edit(img, to_pairs(pairs), cfg.drag, head, cfg.model());
              }
              return py::make_tuple(image_to_array(r.image), report_to_json(r.report, -1));
          },
          py::arg("image"), py::arg("pairs"), py::arg("config") = "", py::arg("seed") = 0);
}
