#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <string>
#include <vector>

#include "cirs/harness.hpp"

namespace py = pybind11;

namespace {

py::dict row_to_dict(const cirs::harness::MetricsRow& row) {
  py::dict d;
  d["epoch"] = row.epoch;
  d["mean_cum_sat"] = row.mean_cum_sat;
  d["mean_len"] = row.mean_len;
  d["mean_single_round"] = row.mean_single_round;
  return d;
}

py::dict run_to_dict(const cirs::harness::RunResult& run) {
  py::list rows;
  for (const cirs::harness::MetricsRow& row : run.rows) rows.append(row_to_dict(row));
  py::list plan_stats;
  for (const cirs::policy::PlanEpochStats& s : run.plan_stats) {
    py::dict d;
    d["epoch"] = s.epoch;
    d["mean_reward"] = s.mean_reward;
    d["surrogate"] = s.surrogate;
    d["value_loss"] = s.value_loss;
    d["entropy"] = s.entropy;
    d["clip_fraction"] = s.clip_fraction;
    plan_stats.append(d);
  }
  py::dict out;
  out["resolved_policy"] = run.resolved_policy;
  out["final_cum_sat"] = run.final_cum_sat;
  out["rows"] = rows;
  out["plan_stats"] = plan_stats;
  out["train_loss_curve"] = run.train_loss_curve;
  return out;
}

}  // namespace

PYBIND11_MODULE(cirspy, m) {
  m.doc() =
      "Desk-scale lab for overexposure-aware interactive recommendation: "
      "config handling, experiment runs, tau sweeps, and the core numeric "
      "primitives.";

  m.def("satisfaction", &cirs::model::satisfaction, py::arg("interest"), py::arg("exposure"),
        "Interest discounted by accumulated exposure: interest / (1 + exposure).");

  m.def(
      "gae",
      [](const std::vector<double>& rewards, const std::vector<double>& values, double gamma,
         double lambda) { return cirs::policy::gae(rewards, values, gamma, lambda); },
      py::arg("rewards"), py::arg("values"), py::arg("gamma"), py::arg("lambda_"),
      "Generalized advantage estimates; values must hold one bootstrap entry "
      "more than rewards.");

  m.def(
      "derive_seed",
      [](std::uint64_t master, const std::vector<std::uint64_t>& path) {
        return cirs::derive_seed(master, path);
      },
      py::arg("master"), py::arg("path"),
      "Pure child-seed derivation from a master seed and a tag path.");

  m.def(
      "normalize_config",
      [](const std::string& text, const std::string& origin) {
        cirs::harness::ExperimentConfig cfg = cirs::harness::parse_config(text, origin);
        return cirs::harness::config_to_text(cfg, cirs::harness::policy_kind_name(cfg.policy));
      },
      py::arg("text"), py::arg("origin") = "<python>",
      "Parses a config (unknown keys are errors) and re-emits it with every "
      "field made explicit.");

  m.def(
      "run_experiment",
      [](const std::string& text, const std::string& origin) {
        cirs::harness::ExperimentConfig cfg = cirs::harness::parse_config(text, origin);
        cirs::harness::RunResult run;
        {
          py::gil_scoped_release release;
          run = cirs::harness::run_experiment(cfg);
        }
        return run_to_dict(run);
      },
      py::arg("config"), py::arg("origin") = "<python>",
      "Runs pre-learning, planning, and evaluation for one config given as "
      "structured text; returns metrics rows and writes artifacts to the "
      "configured output directory.");

  m.def(
      "sweep",
      [](const std::string& text, const std::vector<double>& taus,
         const std::vector<double>& tau_stars, const std::string& origin) {
        cirs::harness::ExperimentConfig cfg = cirs::harness::parse_config(text, origin);
        cirs::harness::SweepResult result;
        {
          py::gil_scoped_release release;
          result = cirs::harness::sweep(cfg, taus, tau_stars);
        }
        py::list cells;
        for (const cirs::harness::SweepCell& cell : result.cells) {
          py::dict d;
          d["tau"] = cell.tau;
          d["tau_star"] = cell.tau_star;
          d["ok"] = cell.ok;
          d["final_cum_sat"] = cell.final_cum_sat;
          d["error"] = cell.error;
          cells.append(d);
        }
        return cells;
      },
      py::arg("config"), py::arg("taus"), py::arg("tau_stars"), py::arg("origin") = "<python>",
      "Grid sweep over the exposure decay scales; failed cells carry their "
      "error instead of aborting the grid.");
}
