// Experiment drivers shared by the CLI and the acceptance suite: synthetic
// data generation, pseudolikelihood scans, SPSA point estimation, PMMH
// posterior sampling, the EuM explosion study, weak-order probes, and the
// cSMC-vs-BPF dispersion comparison. Each driver reads a strict key-value
// config, runs its seeds (optionally in parallel), writes CSV payloads plus
// a JSON manifest, and reports per-seed failures without aborting the run.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "splitsmc/config.hpp"
#include "splitsmc/feynman_kac.hpp"
#include "splitsmc/smc.hpp"

namespace splitsmc {

struct RunContext {
  std::string out_dir = ".";
  std::vector<std::uint64_t> seeds;  // overrides the config seed list if nonempty
  int threads = 1;
};

struct RunSummary {
  std::vector<std::string> outputs;  // files written (CSV + manifest)
  int failures = 0;
  int tasks = 0;
};

RunSummary run_simulate(const KeyValueConfig& cfg, const RunContext& ctx);
RunSummary run_loglik_scan(const KeyValueConfig& cfg, const RunContext& ctx);
RunSummary run_mle(const KeyValueConfig& cfg, const RunContext& ctx);
RunSummary run_pmmh(const KeyValueConfig& cfg, const RunContext& ctx);
RunSummary run_explosion(const KeyValueConfig& cfg, const RunContext& ctx);
RunSummary run_weak_order(const KeyValueConfig& cfg, const RunContext& ctx);
RunSummary run_csmc_variance(const KeyValueConfig& cfg, const RunContext& ctx);

// Dispatch by CLI subcommand name; validates the config's `algorithm` field.
RunSummary run_command(const std::string& subcommand, const KeyValueConfig& cfg,
                       const RunContext& ctx);

// --- pieces reused by tests ---------------------------------------------

// Model described by config keys; `factory` rebuilds it from a natural-scale
// parameter vector for SPSA/PMMH.
struct ModelSpec {
  SemiLinearModel model;
  std::function<SemiLinearModel(const Vec&)> factory;
  std::vector<std::string> param_names;
  Vec theta;  // natural scale
};
ModelSpec model_from_config(const KeyValueConfig& cfg);

struct ObsSpec {
  Regime regime = Regime::Full;
  std::vector<int> observed;
  double delta_obs = 0.0;
  int bridges = 1;
  LatentInit init;
};
ObsSpec obs_from_config(const KeyValueConfig& cfg, int dim);

Scheme scheme_from_config(const KeyValueConfig& cfg);

// Either an exact log-pseudolikelihood (full observation, K = 1) or a
// Feynman-Kac model whose normalizing constant is the pseudolikelihood.
struct LoglikProblem {
  bool exact = false;
  double exact_value = 0.0;
  FeynmanKacModel fk;
};
LoglikProblem build_loglik(const SemiLinearModel& model, Scheme scheme,
                           const ObsSpec& obs, const Mat& data);

struct EstimatorOptions {
  std::string kind = "csmc";  // csmc | bpf
  int n_particles = 20;
  double csmc_tol = 1e-2;
  int csmc_max_iters = 10;
};

// warm, when non-null, carries policies across calls (SPSA measurement
// warm-starting); it is updated with the final fitted policies.
double estimate_loglik(const LoglikProblem& problem, const EstimatorOptions& opt,
                       RngStream& rng, std::vector<QuadraticLogPolicy>* warm = nullptr);

// Fraction of observation intervals in which any of n_particles blind
// bridged proposals (K - 1 scheme steps from the interval's left endpoint)
// leaves [-1e5, 1e5] or becomes non-finite. K = 1 has no intermediate states.
double bridge_explosion_fraction(const SemiLinearModel& model, Scheme scheme,
                                 const Mat& data, double delta_obs, int K,
                                 int n_particles, RngStream& rng);

// CSV with a fixed 17-significant-digit rendering so payloads are stable.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const Mat& rows);
Mat load_csv(const std::string& path, std::vector<std::string>* header = nullptr);

// Deterministic task-parallel loop; exceptions are collected per task.
std::vector<std::string> parallel_tasks(int n_tasks, int threads,
                                        const std::function<void(int)>& fn);

std::string format_g17(double v);

}  // namespace splitsmc
