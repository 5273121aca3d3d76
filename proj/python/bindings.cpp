#include <numeric>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mvaal/harness/harness.hpp"

namespace py = pybind11;
using nlohmann::json;
using namespace mvaal;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

ad::Tensor to_tensor(const Array& a) {
  ad::Shape shape(a.shape(), a.shape() + a.ndim());
  return ad::Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const ad::Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

// Images come in as [N,H,W] or [N,1,H,W].
ad::Tensor images(const Array& a) {
  ad::Tensor t = to_tensor(a);
  if (t.rank() == 3) t = ad::reshape(t, {t.dim(0), 1, t.dim(1), t.dim(2)});
  if (t.rank() != 4 || t.dim(1) != 1) throw std::invalid_argument("expected images shaped [N,H,W] or [N,1,H,W]");
  return t;
}

json parse(const std::string& text) { return text.empty() ? json::object() : json::parse(text); }

harness::ExperimentConfig config_of(const std::string& text) {
  // partial documents are layered over the defaults
  json j = harness::default_config_json();
  j.merge_patch(parse(text));
  return harness::config_from_json(j);
}

json record_json(const al::RoundRecord& r) {
  return {{"round", r.round},   {"budget", r.budget},     {"sampler", r.sampler},
          {"seed", r.seed},     {"metric", r.metric},     {"wall_time", r.wall_time},
          {"selected", r.selected}, {"short_budget", r.short_budget}};
}

json losses_json(const sampler::EpochLosses& e) {
  return {{"epoch", e.epoch}, {"adv", e.adv}, {"recon_m1", e.recon_m1}, {"recon_m2", e.recon_m2},
          {"kl", e.kl},       {"disc", e.disc}, {"gp", e.gp}};
}

class Sampler {
 public:
  Sampler(const std::string& mode, const std::string& settings, std::uint64_t seed) {
    json j = harness::default_config_json();
    j["sampler"].merge_patch(parse(settings));
    auto c = harness::config_from_json(j, false).sampler;
    c.mode = sampler::sampler_mode_from_string(mode);
    if (c.mode == sampler::SamplerMode::kVaal) c.gamma3 = 0.0;
    c.image_size = -1;  // taken from the first batch
    config_ = c;
    seed_ = seed;
  }

  std::string train(const Array& l1, std::optional<Array> l2, const Array& u1, std::optional<Array> u2) {
    sampler::SamplerData d{images(l1), l2 ? images(*l2) : ad::Tensor(), images(u1), u2 ? images(*u2) : ad::Tensor()};
    ensure(d.labeled_m1);
    json out = json::array();
    {
      py::gil_scoped_release release;
      for (const auto& e : sampler::train_sampler(*state_, d)) out.push_back(losses_json(e));
    }
    return out.dump();
  }

  Array score(const Array& m1) {
    const ad::Tensor x = images(m1);
    ensure(x);
    auto s = sampler::score_pool(*state_, x);
    return to_array(ad::Tensor({x.dim(0)}, std::move(s)));
  }

  std::vector<std::int64_t> select(const Array& m1, std::int64_t b) {
    const ad::Tensor x = images(m1);
    ensure(x);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(x.dim(0)));
    std::iota(idx.begin(), idx.end(), std::int64_t{0});
    return sampler::select_for_annotation(*state_, x, idx, b);
  }

  std::string mode() const { return sampler::to_string(config_.mode); }

 private:
  void ensure(const ad::Tensor& x) {
    if (state_) {
      if (x.dim(2) != config_.image_size) throw std::invalid_argument("image size differs from the first batch");
      return;
    }
    config_.image_size = x.dim(2);
    sampler::validate(config_);
    state_ = sampler::init_sampler(config_, seed_);
  }

  sampler::SamplerConfig config_;
  std::uint64_t seed_ = 0;
  std::optional<sampler::SamplerState> state_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of the mvaal package";

  py::register_exception<harness::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<harness::ResumeConflict>(m, "ResumeConflict", PyExc_RuntimeError);

  py::class_<synth::Dataset, std::shared_ptr<synth::Dataset>>(m, "Dataset")
      .def("__len__", [](const synth::Dataset& d) { return d.samples.size(); })
      .def_property_readonly("content_hash", [](const synth::Dataset& d) { return d.content_hash; })
      .def_property_readonly("spec_json", [](const synth::Dataset& d) { return synth::to_json(d.spec).dump(); })
      .def_property_readonly("num_classes", [](const synth::Dataset& d) { return synth::num_classes(d.spec); })
      .def_property_readonly("splits",
                             [](const synth::Dataset& d) {
                               return py::dict(py::arg("train") = d.splits.train, py::arg("val") = d.splits.val,
                                               py::arg("test") = d.splits.test);
                             })
      .def("stack",
           [](const synth::Dataset& d, const std::vector<std::int64_t>& ids, const std::string& which) {
             const auto mod = which == "m1"     ? synth::Modality::kM1
                              : which == "m2"   ? synth::Modality::kM2
                              : which == "mask" ? synth::Modality::kMask
                                                : throw std::invalid_argument("modality must be m1, m2 or mask");
             for (auto id : ids)
               if (id < 0 || id >= static_cast<std::int64_t>(d.samples.size()))
                 throw py::index_error("sample id " + std::to_string(id) + " out of range");
             return to_array(synth::stack(d, ids, mod));
           },
           py::arg("ids"), py::arg("modality") = "m1")
      .def("labels", [](const synth::Dataset& d, std::int64_t id) { return d.samples.at(static_cast<std::size_t>(id)).labels; })
      .def("primary", [](const synth::Dataset& d, std::int64_t id) { return d.samples.at(static_cast<std::size_t>(id)).primary; })
      .def("save", [](const synth::Dataset& d, const std::filesystem::path& dir) { synth::save_dataset(d, dir); });

  m.def("_generate_dataset", [](const std::string& spec) {
    json j = synth::to_json(synth::SynthSpec{});
    j.merge_patch(parse(spec));
    const auto s = synth::spec_from_json(j);
    py::gil_scoped_release release;
    return std::make_shared<synth::Dataset>(synth::generate_dataset(s));
  });
  m.def("load_dataset", [](const std::filesystem::path& dir) {
    return std::make_shared<synth::Dataset>(synth::load_dataset(dir));
  });

  m.def("_default_config", [] { return harness::default_config_json().dump(); });
  m.def("_resolve_config", [](const std::string& text) { return harness::to_json(config_of(text)).dump(); });
  m.def("_load_config", [](std::optional<std::filesystem::path> file, const std::vector<std::string>& overrides) {
    return harness::to_json(harness::load_config(file, overrides)).dump();
  });
  m.def("_config_hash", [](const std::string& text) { return harness::config_hash(config_of(text)); });
  m.def("_run_experiment", [](const std::string& text, bool force, bool ablate_gamma3) {
    const auto c = config_of(text);
    harness::RunFlags flags;
    flags.force = force;
    flags.ablate_gamma3 = ablate_gamma3;
    harness::RunOutcome r;
    {
      py::gil_scoped_release release;
      r = harness::run_experiment(c, flags);
    }
    json recs = json::array();
    for (const auto& rec : r.records) recs.push_back(record_json(rec));
    return json{{"dir", r.dir.string()}, {"hash", r.hash}, {"skipped", r.skipped}, {"records", recs}}.dump();
  });
  m.def("emit_reports", [](const std::filesystem::path& dir) { harness::emit_reports(dir); }, py::arg("run_dir"));

  py::class_<Sampler>(m, "_Sampler")
      .def(py::init<const std::string&, const std::string&, std::uint64_t>())
      .def("train", &Sampler::train)
      .def("score", &Sampler::score)
      .def("select", &Sampler::select)
      .def_property_readonly("mode", &Sampler::mode);

  m.def("bottom_b",
        [](const std::vector<double>& scores, std::int64_t b) {
          std::vector<std::int64_t> idx(scores.size());
          std::iota(idx.begin(), idx.end(), std::int64_t{0});
          return sampler::bottom_b(scores, idx, b);
        },
        py::arg("scores"), py::arg("b"), "Positions of the b lowest scores, ties to the smaller index, ascending.");
  m.def("dice_score", [](const Array& pred, const Array& gt) { return task::dice_score(to_tensor(pred), to_tensor(gt)); },
        py::arg("pred"), py::arg("gt"));
  m.def("mean_average_precision",
        [](const Array& scores, const Array& targets) {
          const auto r = task::mean_average_precision(to_tensor(scores), to_tensor(targets));
          return py::dict(py::arg("map") = r.map, py::arg("included") = r.included, py::arg("excluded") = r.excluded,
                          py::arg("per_class") = r.per_class);
        },
        py::arg("scores"), py::arg("targets"));
  m.def("overall_accuracy",
        [](const std::vector<std::int64_t>& preds, const std::vector<std::int64_t>& targets) {
          return task::overall_accuracy(preds, targets);
        },
        py::arg("preds"), py::arg("targets"));
  m.def("gaussian_kl",
        [](const Array& mu, const Array& logvar) {
          const ad::Tensor m = to_tensor(mu);
          return sampler::kl_divergence({m, to_tensor(logvar), m, ad::Tensor::zeros(m.shape())}).item();
        },
        py::arg("mu"), py::arg("logvar"), "Batch-mean KL to the unit Gaussian, summed over latent dimensions.");
}
