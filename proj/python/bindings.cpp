#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <optional>
#include <string>

#include "pflab/errors.hpp"
#include "pflab/eval.hpp"
#include "pflab/grid.hpp"
#include "pflab/trainer.hpp"

namespace py = pybind11;
using namespace pflab;

namespace {

std::unique_ptr<Solver> make_solver(const std::string& id, int steps, const NoiseSchedule& schedule,
                                    const std::string& grid, const std::optional<PolicyParams>& policy) {
  SolverFactory factory(schedule, grid_kind_from_string(grid));
  if (policy) factory.set_policy(*policy);
  return factory.make(id, steps);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Probability-flow ODE solvers on Gaussian-mixture testbeds";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<DomainError>(m, "DomainError", base.ptr());
  py::register_exception<ContractError>(m, "ContractError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  auto config = py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<UnknownSolverError>(m, "UnknownSolverError", config.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());

  py::class_<NoiseSchedule>(m, "NoiseSchedule")
      .def_static("vp_linear", &NoiseSchedule::vp_linear, py::arg("beta_min") = 0.1,
                  py::arg("beta_max") = 20.0, py::arg("t_min") = 1e-3, py::arg("t_max") = 1.0)
      .def_static("rectified_flow", &NoiseSchedule::rectified_flow, py::arg("t_min") = 1e-3,
                  py::arg("t_max") = 1.0 - 1e-3)
      .def_property_readonly("kind", [](const NoiseSchedule& s) { return std::string(to_string(s.kind())); })
      .def_property_readonly("t_min", &NoiseSchedule::t_min)
      .def_property_readonly("t_max", &NoiseSchedule::t_max)
      .def("alpha", &NoiseSchedule::alpha)
      .def("sigma", [](const NoiseSchedule& s, double t) { return s.alpha_sigma(t).sigma; })
      .def("noise_ratio", &NoiseSchedule::noise_ratio)
      .def("time_of_noise_ratio", &NoiseSchedule::time_of_noise_ratio);

  py::class_<MixtureModel>(m, "MixtureModel")
      .def(py::init<std::vector<double>, std::vector<Vec>, std::vector<double>>(), py::arg("weights"),
           py::arg("means"), py::arg("stds"))
      .def_static("standard_gaussian", &MixtureModel::standard_gaussian, py::arg("dim"))
      .def_property_readonly("dim", &MixtureModel::dim)
      .def_property_readonly("weights", &MixtureModel::weights)
      .def_property_readonly("means", &MixtureModel::means)
      .def_property_readonly("stds", &MixtureModel::stds)
      .def("epsilon", [](const MixtureModel& mm, const NoiseSchedule& s, const Vec& x, double t) {
        return mm.epsilon(s, x, t);
      })
      .def("log_density", [](const MixtureModel& mm, const NoiseSchedule& s, const Vec& x, double t) {
        return mm.log_density(s, x, t);
      });

  m.def("synthesize_mixture",
        [](std::int64_t condition, std::uint64_t generator_seed, int dim, int components) {
          return synthesize_mixture({condition, generator_seed}, dim, components);
        },
        py::arg("condition"), py::arg("generator_seed") = 0, py::arg("dim") = 2, py::arg("components") = 0);
  m.def("sample_prior", &sample_prior, py::arg("seed"), py::arg("dim"));
  m.def("grid_times",
        [](const std::string& kind, const NoiseSchedule& s, int steps) {
          return build_grid(grid_kind_from_string(kind), s, steps).times();
        },
        py::arg("kind"), py::arg("schedule"), py::arg("steps"));

  m.def("reference_solution",
        [](const MixtureModel& mm, const NoiseSchedule& s, const Vec& z, double rel_tol, double abs_tol) {
          ReferenceOptions o;
          o.rel_tol = rel_tol;
          o.abs_tol = abs_tol;
          const auto r = reference_solution(mm, s, z, o);
          return py::make_tuple(r.x, r.nfe);
        },
        py::arg("model"), py::arg("schedule"), py::arg("z"), py::arg("rel_tol") = 1e-9,
        py::arg("abs_tol") = 1e-10, "Adaptive reference solve; returns (x, nfe).");

  py::class_<PolicyParams>(m, "Policy")
      .def_static("baseline",
                  [](int order, int width, int depth, const std::string& init, std::uint64_t seed,
                     const NoiseSchedule& s, double log_std) {
                    return init_to_baseline({order, width, depth, false}, init, seed, s.t_min(), s.t_max(),
                                            log_std);
                  },
                  py::arg("order") = 4, py::arg("width") = 256, py::arg("depth") = 3, py::arg("init") = "ddim",
                  py::arg("seed") = 0, py::arg("schedule") = NoiseSchedule::vp_linear(),
                  py::arg("log_std") = -2.995732273553991)
      .def_static("from_json", [](const std::string& text) { return policy_from_json(Json::parse(text)); })
      .def("to_json", [](const PolicyParams& p) { return policy_to_json(p).dump(); })
      .def_property_readonly("order", [](const PolicyParams& p) { return p.shape().order; })
      .def_property_readonly("num_params", &PolicyParams::size)
      .def("coefficients", &forward, py::arg("t_i"), py::arg("t_next"),
           "Mean weights w_1..w_m for the transition t_i -> t_next.")
      .def("__eq__", [](const PolicyParams& a, const PolicyParams& b) { return a == b; });

  m.def("sample",
        [](const std::string& solver, int steps, const MixtureModel& mm, const NoiseSchedule& s,
           const Vec& z, const std::string& grid, const std::optional<PolicyParams>& policy) {
          const auto out = make_solver(solver, steps, s, grid, policy)->solve(mm, s, z);
          return py::make_tuple(out.x, out.nfe);
        },
        py::arg("solver"), py::arg("steps"), py::arg("model"), py::arg("schedule"), py::arg("z"),
        py::arg("grid") = "uniform", py::arg("policy") = py::none(),
        "Solve from z at t_max down to t_min; returns (x, nfe).");

  py::class_<OfflineDataset>(m, "Dataset")
      .def("__len__", &OfflineDataset::size)
      .def("z", [](const OfflineDataset& d, std::size_t i) { return d.entries().at(i).z; })
      .def("x_gt", [](const OfflineDataset& d, std::size_t i) { return d.entries().at(i).x_gt; })
      .def("condition", [](const OfflineDataset& d, std::size_t i) { return d.entries().at(i).condition.condition_id; })
      .def("slice", &OfflineDataset::slice, py::arg("begin"), py::arg("end"))
      .def("save", [](const OfflineDataset& d, const std::string& path) { write_dataset(path, d); })
      .def("evaluate",
           [](const OfflineDataset& d, const std::string& solver, int steps, const std::string& grid,
              const std::optional<PolicyParams>& policy, int threads) {
             const auto r = consistency_report(*make_solver(solver, steps, d.schedule(), grid, policy), d, threads);
             py::dict out;
             out["psnr"] = r.psnr.mean;
             out["neg_l2"] = r.neg_l2.mean;
             out["cosine"] = r.cosine.mean;
             out["nfe"] = r.nfe_per_sample;
             out["failed"] = r.failed;
             return out;
           },
           py::arg("solver"), py::arg("steps"), py::arg("grid") = "uniform", py::arg("policy") = py::none(),
           py::arg("threads") = 1, "Mean metrics of a solver against the stored reference outputs.");

  m.def("build_dataset",
        [](std::size_t size, std::int64_t first_condition, int num_conditions, std::uint64_t seed_base,
           int components, int dim, int threads) {
          DatasetInfo info;
          info.dim = dim;
          info.components = components;
          return build_dataset(dataset_requests(size, first_condition, num_conditions, seed_base), info, threads);
        },
        py::arg("size"), py::arg("first_condition") = 0, py::arg("num_conditions") = 1,
        py::arg("seed_base") = 0, py::arg("components") = 0, py::arg("dim") = 2, py::arg("threads") = 1);
  m.def("load_dataset", &load_dataset, py::arg("path"));

  m.def("train_policy",
        [](const OfflineDataset& d, int steps, int order, int width, int depth, int iterations,
           double learning_rate, int batch, std::uint64_t seed, int threads) {
          TrainerState state{init_to_baseline({order, width, depth, false}, "ddim", seed, d.schedule().t_min(),
                                              d.schedule().t_max()),
                             {}, 0};
          PPOConfig cfg;
          cfg.iterations = iterations;
          cfg.learning_rate = learning_rate;
          cfg.batch = batch;
          cfg.seed = seed;
          cfg.threads = threads;
          py::gil_scoped_release release;
          (void)train(state, d, build_grid(GridKind::kUniform, d.schedule(), steps), cfg);
          return state.params;
        },
        py::arg("dataset"), py::arg("steps") = 5, py::arg("order") = 4, py::arg("width") = 256,
        py::arg("depth") = 3, py::arg("iterations") = 1000, py::arg("learning_rate") = 1e-3,
        py::arg("batch") = 32, py::arg("seed") = 0, py::arg("threads") = 1,
        "PPO training of a DDIM-initialized coefficient policy on a uniform grid.");

  m.def("distill",
        [](const OfflineDataset& d, int steps, int order, double ridge_lambda) {
          return distill_coeffs(d, build_grid(GridKind::kUniform, d.schedule(), steps), order, ridge_lambda).rows;
        },
        py::arg("dataset"), py::arg("steps"), py::arg("order") = 4, py::arg("ridge_lambda") = 1e-10,
        "Least-squares coefficient rows, one per transition.");

  m.def("convergence_order",
        [](const std::string& solver, const MixtureModel& mm, const NoiseSchedule& s, const std::vector<int>& steps,
           int samples, const std::string& grid) {
          const auto provider = make_classical_provider(solver);
          const auto r = convergence_order(*provider, grid_kind_from_string(grid), mm, s, steps, samples);
          py::dict out;
          out["order"] = r.order;
          out["ci95"] = py::make_tuple(r.ci_low, r.ci_high);
          out["errors"] = r.errors;
          return out;
        },
        py::arg("solver"), py::arg("model"), py::arg("schedule"), py::arg("steps") = std::vector<int>{8, 16, 32, 64},
        py::arg("samples") = 8, py::arg("grid") = "uniform");

  m.def("energy_distance", &energy_distance, py::arg("a"), py::arg("b"));
  m.def("reward",
        [](const std::string& kind, const Vec& x, const Vec& target) {
          return reward(reward_kind_from_string(kind), x, target);
        },
        py::arg("kind"), py::arg("x"), py::arg("target"));
  m.def("normalize_advantage", [](const Vec& r, double delta) { return normalize_advantage(r, delta); },
        py::arg("rewards"), py::arg("delta") = 1e-8);
}
