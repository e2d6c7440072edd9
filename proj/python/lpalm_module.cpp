#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "lpalm/analysis.hpp"
#include "lpalm/config.hpp"
#include "lpalm/experiment.hpp"

namespace py = pybind11;
using namespace lpalm;

namespace {

py::list log_rows(const std::vector<LogRow>& rows) {
  py::list out;
  for (const LogRow& r : rows) {
    py::dict d;
    d["step"] = r.step;
    d["window_return"] = r.window_return;
    d["objective"] = r.objective;
    d["penalty_residual"] = r.penalty_residual;
    d["mass_estimate"] = r.mass_estimate;
    out.append(d);
  }
  return out;
}

ScalConfig scal_config(const py::dict& overrides, std::uint64_t seed) {
  ExperimentConfig cfg;
  for (const auto& [k, v] : overrides) cfg.set("scal." + py::str(k).cast<std::string>(), py::str(v).cast<std::string>());
  return cfg.scal(seed);
}

}  // namespace

PYBIND11_MODULE(_lpalm, m) {
  m.doc() = "Tabular ALM oracle, SCAL training and verification utilities";

  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ConvergenceError>(m, "ConvergenceError", PyExc_RuntimeError);

  py::class_<TabularMDP>(m, "TabularMDP")
      .def(py::init<int, int, Mat, Vec, Vec, double>(), py::arg("n_states"), py::arg("n_actions"),
           py::arg("transition"), py::arg("reward"), py::arg("rho0"), py::arg("gamma"))
      .def_property_readonly("n_states", &TabularMDP::n_states)
      .def_property_readonly("n_actions", &TabularMDP::n_actions)
      .def_property_readonly("gamma", &TabularMDP::gamma)
      .def_property_readonly("transition", &TabularMDP::transition)
      .def_property_readonly("reward", &TabularMDP::reward)
      .def_property_readonly("rho0", &TabularMDP::rho0)
      .def("q_values", &TabularMDP::q_values);

  py::class_<Policy>(m, "Policy")
      .def(py::init<Mat>())
      .def_property_readonly("probs", &Policy::probs)
      .def("argmax", &Policy::argmax);

  m.def("chain_mdp", &chain_mdp, py::arg("n"), py::arg("gamma"), py::arg("noise") = 0.0);
  m.def(
      "random_mdp",
      [](int n_states, int n_actions, double gamma, std::uint64_t seed) {
        Rng rng(seed);
        return random_mdp(n_states, n_actions, gamma, rng);
      },
      py::arg("n_states"), py::arg("n_actions"), py::arg("gamma"), py::arg("seed") = 0);
  m.def(
      "inventory_mdp",
      [](int M, double demand_lambda, double gamma) {
        InventoryConfig c;
        c.M = M;
        c.demand_lambda = demand_lambda;
        c.gamma = gamma;
        c.validate();
        return inventory_tabular(c);
      },
      py::arg("M") = 10, py::arg("demand_lambda") = 2.0, py::arg("gamma") = 0.9);

  m.def("bellman_operator", &bellman_operator);
  m.def("value_iteration", &value_iteration, py::arg("mdp"), py::arg("tol") = 1e-10, py::arg("max_iter") = 1000000);
  m.def("greedy_policy", &greedy_policy);
  m.def("evaluate_policy", &evaluate_policy);
  m.def("uniform_weights", &uniform_weights);
  m.def(
      "alm_solve",
      [](const TabularMDP& mdp, double mu, int max_outer, double outer_tol, double tol) {
        InnerOptions opt;
        opt.tol = tol;
        const AlmRun run = alm_solve(mdp, uniform_weights(mdp), mu, max_outer, outer_tol, opt);
        py::dict d;
        d["V"] = run.state.V;
        d["h"] = run.state.h;
        d["x"] = run.state.x;
        d["outer_iterations"] = run.outer_iterations;
        return d;
      },
      py::arg("mdp"), py::arg("mu") = 1000.0, py::arg("max_outer") = 200, py::arg("outer_tol") = 1e-9,
      py::arg("tol") = 1e-10);
  m.def(
      "dual_residual", [](const TabularMDP& mdp, const Vec& x) { return dual_residuals(mdp, uniform_weights(mdp), x).norm; },
      py::arg("mdp"), py::arg("x"));
  m.def(
      "policy_from_multiplier",
      [](const TabularMDP& mdp, const Vec& x) { return policy_from_multiplier(uniform_weights(mdp), x, mdp.n_actions()); },
      py::arg("mdp"), py::arg("x"));

  m.def(
      "scaling_ratio_check",
      [](const TabularMDP& mdp, const Vec& x_k, double mu, double beta) {
        const ScalingReport r = scaling_ratio_check(mdp, uniform_weights(mdp), x_k, mu, beta);
        py::dict d;
        d["xi1"] = r.xi1;
        d["xi2"] = r.xi2;
        d["x_hat"] = r.x_hat;
        d["x_tilde"] = r.x_tilde;
        d["x_ratio_dev"] = r.x_ratio_dev;
        d["x_identity_dev"] = r.x_identity_dev;
        return d;
      },
      py::arg("mdp"), py::arg("x_k"), py::arg("mu") = 1.0, py::arg("beta") = 1.0);
  m.def(
      "strong_convexity_probe",
      [](double mu, double beta, int n_probes, std::uint64_t seed) {
        Rng rng(seed);
        const ConvexityProbe p = strong_convexity_probe(mu, beta, n_probes, rng);
        return py::make_tuple(p.x_block_constant, p.x_block_bound, p.min_quotient);
      },
      py::arg("mu") = 1.0, py::arg("beta") = 1.0, py::arg("n_probes") = 100, py::arg("seed") = 0);
  m.def(
      "ntk_residual_track",
      [](const TabularMDP& mdp, int width, int rounds, std::uint64_t seed) {
        NtkConfig c;
        c.width = width;
        c.rounds = rounds;
        c.seed = seed;
        return ntk_residual_track(mdp, uniform_weights(mdp), c);
      },
      py::arg("mdp"), py::arg("width") = 64, py::arg("rounds") = 20, py::arg("seed") = 0);

  m.def(
      "scal_train",
      [](const std::string& env_name, int n, double gamma, double noise, std::uint64_t seed, const py::dict& scal) {
        Environment env = env_name == "inventory" ? make_inventory_env(InventoryConfig{})
                                                  : make_chain_env(n, gamma, noise);
        const ScalConfig c = scal_config(scal, seed);
        return log_rows(scal_train(env, c).log);
      },
      py::arg("env") = "chain", py::arg("n") = 5, py::arg("gamma") = 0.9, py::arg("noise") = 0.0,
      py::arg("seed") = 0, py::arg("scal") = py::dict(),
      "SCAL on a chain or the default inventory; `scal` maps ScalConfig keys (steps, mu, ...) to values.");

  m.def(
      "run",
      [](const std::string& command, const py::dict& overrides) {
        ExperimentConfig cfg;
        cfg.set("command", command);
        for (const auto& [k, v] : overrides) cfg.set(py::str(k).cast<std::string>(), py::str(v).cast<std::string>());
        std::ostringstream log;
        const RunOutcome out = run_experiment(cfg, log);
        return py::make_tuple(out.exit_code, log.str(), out.files);
      },
      py::arg("command"), py::arg("config") = py::dict(),
      "Runs a CLI command in-process; returns (exit_code, log, files).");
  m.attr("METRICS_HEADER") = kMetricsHeader;
}
