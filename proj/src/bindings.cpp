#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <cstring>

#include "sgunlearn/harness.hpp"

namespace py = pybind11;
using namespace sgu;

namespace {

using NumpyArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::array_t<double> to_numpy(const Matrix& m) {
  py::array_t<double> out({m.rows, m.cols});
  std::memcpy(out.mutable_data(), m.v.data(), m.v.size() * sizeof(double));
  return out;
}

py::array_t<double> to_numpy(const std::vector<double>& v) {
  py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
  std::memcpy(out.mutable_data(), v.data(), v.size() * sizeof(double));
  return out;
}

TrainConfig schedule_of(double lr, double momentum, double weight_decay, long epochs,
                        long batch_size, const std::vector<std::pair<long, double>>& milestones) {
  TrainConfig t;
  t.lr = lr;
  t.momentum = momentum;
  t.weight_decay = weight_decay;
  t.epochs = epochs;
  t.batch_size = batch_size;
  t.lr_milestones = milestones;
  return t;
}

MlpSpec spec_of(const DatasetBundle& bundle, const std::vector<long>& hidden, std::uint64_t seed) {
  MlpSpec spec;
  spec.layer_dims.push_back(bundle.dim());
  for (long h : hidden) spec.layer_dims.push_back(h);
  spec.layer_dims.push_back(bundle.num_classes);
  spec.seed = seed;
  return spec;
}

py::dict report_dict(const MetricsReport& m) {
  py::dict d;
  for (const auto& [name, member] : kMetricFields) d[name] = m.*member;
  return d;
}

py::list trace_list(const std::vector<EpochTrace>& trace) {
  py::list out;
  for (const EpochTrace& t : trace) {
    py::dict d;
    d["retain_loss"] = t.retain_loss;
    d["soft_utility"] = t.soft_utility;
    d["seconds"] = t.seconds;
    out.append(d);
  }
  return out;
}

std::pair<Matrix, std::vector<long>> split_rows(const DatasetBundle& bundle,
                                                const std::string& split) {
  const auto rows = bundle.rows_in(split_from_name(split));
  return {bundle.features.take_rows(rows), take(bundle.labels, rows)};
}

constexpr const char* kScheduleArgsDoc =
    "lr, momentum, weight_decay, epochs, batch_size and milestones follow the SGD schedule";

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Stackelberg-game machine unlearning toolkit";

  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<SolverError>(m, "SolverError", PyExc_RuntimeError);

  py::class_<DatasetBundle>(m, "DatasetBundle")
      .def_property_readonly("features", [](const DatasetBundle& b) { return to_numpy(b.features); })
      .def_property_readonly("labels", [](const DatasetBundle& b) { return b.labels; })
      .def_property_readonly("splits",
                             [](const DatasetBundle& b) {
                               std::vector<std::string> out;
                               out.reserve(b.split_ids.size());
                               for (Split s : b.split_ids) out.emplace_back(split_name(s));
                               return out;
                             })
      .def_property_readonly("num_classes", [](const DatasetBundle& b) { return b.num_classes; })
      .def_property_readonly("rows", &DatasetBundle::rows)
      .def_property_readonly("dim", &DatasetBundle::dim)
      .def("rows_in",
           [](const DatasetBundle& b, const std::string& split) {
             return b.rows_in(split_from_name(split));
           },
           py::arg("split"), "absolute row ids of one split: train, val, test_audit or test_eval")
      .def("__eq__", [](const DatasetBundle& a, const DatasetBundle& b) { return a == b; })
      .def("__repr__", [](const DatasetBundle& b) {
        return "DatasetBundle(rows=" + std::to_string(b.rows()) +
               ", dim=" + std::to_string(b.dim()) +
               ", classes=" + std::to_string(b.num_classes) + ")";
      });

  py::class_<ForgetPartition>(m, "ForgetPartition")
      .def_property_readonly("forget_indices",
                             [](const ForgetPartition& p) { return p.forget_indices; })
      .def_property_readonly("retain_indices",
                             [](const ForgetPartition& p) { return p.retain_indices; })
      .def_property_readonly("mode",
                             [](const ForgetPartition& p) {
                               return p.mode == ForgetMode::kRandom ? "random" : "classwise";
                             })
      .def("__repr__", [](const ForgetPartition& p) {
        return "ForgetPartition(forget=" + std::to_string(p.forget_indices.size()) +
               ", retain=" + std::to_string(p.retain_indices.size()) + ")";
      });

  py::class_<ModelCheckpoint>(m, "Model")
      .def_property_readonly("params", [](const ModelCheckpoint& c) { return to_numpy(c.params); })
      .def_property_readonly("layer_dims",
                             [](const ModelCheckpoint& c) { return c.spec.layer_dims; })
      .def_property_readonly("seed", [](const ModelCheckpoint& c) { return c.seed; })
      .def_property_readonly("epochs_trained",
                             [](const ModelCheckpoint& c) { return c.epochs_trained; })
      .def("evaluate",
           [](const ModelCheckpoint& c, const DatasetBundle& b, const std::string& split) {
             auto [rows, labels] = split_rows(b, split);
             return evaluate(c, rows, labels);
           },
           py::arg("bundle"), py::arg("split") = "test_eval",
           "argmax accuracy over one split of the bundle")
      .def("losses",
           [](const ModelCheckpoint& c, const DatasetBundle& b, const std::string& split) {
             auto [rows, labels] = split_rows(b, split);
             return to_numpy(per_row_ce(c, rows, labels));
           },
           py::arg("bundle"), py::arg("split") = "test_audit",
           "per-row cross-entropy losses over one split")
      .def("__repr__", [](const ModelCheckpoint& c) {
        std::string dims;
        for (long d : c.spec.layer_dims) dims += (dims.empty() ? "" : "-") + std::to_string(d);
        return "Model(" + dims + ", epochs_trained=" + std::to_string(c.epochs_trained) + ")";
      });

  m.def("gen_gaussian_mixture", &gen_gaussian_mixture, py::arg("num_classes") = 5,
        py::arg("n_per_class") = 600, py::arg("dim") = 20, py::arg("separation") = 2.0,
        py::arg("seed") = 0,
        "Gaussian blobs with a fixed per-class train/val/test_audit/test_eval split");
  m.def("load_csv", &load_csv, py::arg("path"));
  m.def("save_csv", &save_csv, py::arg("bundle"), py::arg("path"));
  m.def("load_ckpt", &load_ckpt, py::arg("path"));
  m.def("save_ckpt", &save_ckpt, py::arg("model"), py::arg("path"));

  m.def("split_forget_random", &split_forget_random, py::arg("bundle"), py::arg("ratio") = 0.1,
        py::arg("seed") = 0);
  m.def("split_forget_classwise", &split_forget_classwise, py::arg("bundle"),
        py::arg("forget_class"), py::arg("seed") = 0);

  m.def(
      "train",
      [](const DatasetBundle& bundle, const std::vector<long>& hidden, std::uint64_t seed,
         double lr, double momentum, double weight_decay, long epochs, long batch_size,
         const std::vector<std::pair<long, double>>& milestones) {
        const auto rows = bundle.rows_in(Split::kTrain);
        return train(bundle.features.take_rows(rows), take(bundle.labels, rows),
                     spec_of(bundle, hidden, seed),
                     schedule_of(lr, momentum, weight_decay, epochs, batch_size, milestones));
      },
      py::arg("bundle"), py::arg("hidden") = std::vector<long>{128, 128}, py::arg("seed") = 0,
      py::arg("lr") = 1e-2, py::arg("momentum") = 0.9, py::arg("weight_decay") = 5e-4,
      py::arg("epochs") = 120, py::arg("batch_size") = 64,
      py::arg("milestones") = std::vector<std::pair<long, double>>{{60, 0.1}, {100, 0.1}},
      kScheduleArgsDoc);

  m.def(
      "retrain",
      [](const DatasetBundle& bundle, const ForgetPartition& partition,
         const std::vector<long>& hidden, std::uint64_t seed, double lr, double momentum,
         double weight_decay, long epochs, long batch_size,
         const std::vector<std::pair<long, double>>& milestones) {
        return retrain(bundle, partition, spec_of(bundle, hidden, seed),
                       schedule_of(lr, momentum, weight_decay, epochs, batch_size, milestones),
                       seed);
      },
      py::arg("bundle"), py::arg("partition"), py::arg("hidden") = std::vector<long>{128, 128},
      py::arg("seed") = 0, py::arg("lr") = 1e-2, py::arg("momentum") = 0.9,
      py::arg("weight_decay") = 5e-4, py::arg("epochs") = 120, py::arg("batch_size") = 64,
      py::arg("milestones") = std::vector<std::pair<long, double>>{{60, 0.1}, {100, 0.1}},
      "fresh init, full training on the retain rows only");

  m.def(
      "sg_unlearn",
      [](const ModelCheckpoint& orig, const DatasetBundle& bundle,
         const ForgetPartition& partition, double alpha, double lr, double momentum,
         double weight_decay, long epochs, long batch_size,
         const std::vector<std::pair<long, double>>& milestones, const std::string& family,
         double reg, double tol, const std::string& feature_mode, std::uint64_t seed) {
        SgConfig cfg;
        cfg.alpha = alpha;
        cfg.train = schedule_of(lr, momentum, weight_decay, epochs, batch_size, milestones);
        cfg.family = attack_family_from_name(family);
        cfg.attack_reg = reg;
        cfg.attack_tol = tol;
        cfg.mode = feature_mode_from_name(feature_mode);
        cfg.seed = seed;
        UnlearnResult res = sg_unlearn(orig, bundle, partition, cfg);
        return py::make_tuple(res.ckpt, trace_list(res.trace));
      },
      py::arg("model"), py::arg("bundle"), py::arg("partition"), py::arg("alpha") = 1.0,
      py::arg("lr") = 1e-2, py::arg("momentum") = 0.98, py::arg("weight_decay") = 5e-4,
      py::arg("epochs") = 30, py::arg("batch_size") = 64,
      py::arg("milestones") =
          std::vector<std::pair<long, double>>{{3, 2.0}, {6, 2.0}, {9, 2.0}, {12, 2.0}, {25, 0.25}},
      py::arg("family") = "sq-hinge", py::arg("reg") = 1.0, py::arg("tol") = 1e-10,
      py::arg("feature_mode") = "probs+loss", py::arg("seed") = 0,
      "Stackelberg unlearning; returns (model, per-epoch trace)");

  m.def(
      "fine_tune",
      [](const ModelCheckpoint& orig, const DatasetBundle& bundle,
         const ForgetPartition& partition, double lr, double momentum, double weight_decay,
         long epochs, long batch_size, const std::vector<std::pair<long, double>>& milestones) {
        return fine_tune(orig, bundle, partition,
                         schedule_of(lr, momentum, weight_decay, epochs, batch_size, milestones));
      },
      py::arg("model"), py::arg("bundle"), py::arg("partition"), py::arg("lr") = 5e-2,
      py::arg("momentum") = 0.9, py::arg("weight_decay") = 5e-4, py::arg("epochs") = 30,
      py::arg("batch_size") = 64,
      py::arg("milestones") = std::vector<std::pair<long, double>>{}, kScheduleArgsDoc);

  m.def(
      "gradient_ascent",
      [](const ModelCheckpoint& orig, const DatasetBundle& bundle,
         const ForgetPartition& partition, double lr, double momentum, double weight_decay,
         long epochs, long batch_size, const std::vector<std::pair<long, double>>& milestones) {
        return gradient_ascent(
            orig, bundle, partition,
            schedule_of(lr, momentum, weight_decay, epochs, batch_size, milestones));
      },
      py::arg("model"), py::arg("bundle"), py::arg("partition"), py::arg("lr") = 1e-3,
      py::arg("momentum") = 0.9, py::arg("weight_decay") = 5e-4, py::arg("epochs") = 5,
      py::arg("batch_size") = 64,
      py::arg("milestones") = std::vector<std::pair<long, double>>{},
      "ascends the loss on the forget rows");

  m.def(
      "random_label",
      [](const ModelCheckpoint& orig, const DatasetBundle& bundle,
         const ForgetPartition& partition, std::uint64_t seed, double lr, double momentum,
         double weight_decay, long epochs, long batch_size,
         const std::vector<std::pair<long, double>>& milestones) {
        return random_label(orig, bundle, partition,
                            schedule_of(lr, momentum, weight_decay, epochs, batch_size, milestones),
                            seed);
      },
      py::arg("model"), py::arg("bundle"), py::arg("partition"), py::arg("seed") = 0,
      py::arg("lr") = 1e-2, py::arg("momentum") = 0.9, py::arg("weight_decay") = 5e-4,
      py::arg("epochs") = 10, py::arg("batch_size") = 64,
      py::arg("milestones") = std::vector<std::pair<long, double>>{},
      "fine-tunes with resampled wrong labels on the forget rows");

  m.def(
      "l1_sparse",
      [](const ModelCheckpoint& orig, const DatasetBundle& bundle,
         const ForgetPartition& partition, double gamma, double lr, double momentum,
         double weight_decay, long epochs, long batch_size,
         const std::vector<std::pair<long, double>>& milestones) {
        return l1_sparse(orig, bundle, partition,
                         schedule_of(lr, momentum, weight_decay, epochs, batch_size, milestones),
                         gamma);
      },
      py::arg("model"), py::arg("bundle"), py::arg("partition"), py::arg("gamma") = 5e-4,
      py::arg("lr") = 1e-2, py::arg("momentum") = 0.9, py::arg("weight_decay") = 5e-4,
      py::arg("epochs") = 10, py::arg("batch_size") = 64,
      py::arg("milestones") = std::vector<std::pair<long, double>>{},
      "fine-tuning with an L1 sparsity subgradient");

  m.def(
      "influence_unlearn",
      [](const ModelCheckpoint& orig, const DatasetBundle& bundle,
         const ForgetPartition& partition, double damping, long cg_iters, double residual_tol,
         double step_scale) {
        IuOptions opts;
        opts.damping = damping;
        opts.cg_iters = cg_iters;
        opts.residual_tol = residual_tol;
        opts.step_scale = step_scale;
        return influence_unlearn(orig, bundle, partition, opts);
      },
      py::arg("model"), py::arg("bundle"), py::arg("partition"), py::arg("damping") = 1.0,
      py::arg("cg_iters") = 100, py::arg("residual_tol") = 1e-4, py::arg("step_scale") = 1.0,
      "one-shot Newton-style update against the damped training Hessian");

  m.def(
      "audit_report",
      [](const ModelCheckpoint& model, const DatasetBundle& bundle,
         const ForgetPartition& partition, const std::string& family, double reg,
         const std::string& feature_mode, long k_folds, std::uint64_t seed, double runtime_s) {
        AuditConfig cfg;
        cfg.family = attack_family_from_name(family);
        cfg.reg = reg;
        cfg.mode = feature_mode_from_name(feature_mode);
        cfg.k_folds = k_folds;
        return report_dict(assemble_report(model, bundle, partition, cfg, seed, runtime_s));
      },
      py::arg("model"), py::arg("bundle"), py::arg("partition"), py::arg("family") = "sq-hinge",
      py::arg("reg") = 1.0, py::arg("feature_mode") = "probs+loss", py::arg("k_folds") = 10,
      py::arg("seed") = 0, py::arg("runtime_s") = 0.0,
      "accuracies, k-fold MIA metrics and forget-vs-test loss divergences");

  m.def("ks_two_sample", &ks_two_sample, py::arg("a"), py::arg("b"),
        "two-sample KS statistic and asymptotic p-value");
  m.def("wasserstein1", &wasserstein1, py::arg("a"), py::arg("b"),
        "exact 1-D Wasserstein distance between empirical distributions");
}
