#include "splitsmc/experiments.hpp"

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <memory>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include "splitsmc/estimators.hpp"

namespace splitsmc {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
  }
};

std::string join_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

std::vector<std::uint64_t> seeds_for(const KeyValueConfig& cfg, const RunContext& ctx) {
  if (!ctx.seeds.empty()) {
    cfg.get_string("seed", "");  // config seed is superseded; still a known key
    return ctx.seeds;
  }
  return cfg.get_seed_list("seed");
}

void write_manifest(const std::string& path, const std::string& algorithm,
                    const KeyValueConfig& cfg, const std::vector<std::uint64_t>& seeds,
                    const std::vector<std::string>& outputs, double elapsed_ms,
                    const json& extra, const std::vector<std::string>& failures) {
  json m;
  m["algorithm"] = algorithm;
  m["config"] = json::object();
  for (const auto& [k, v] : cfg.values()) m["config"][k] = v;
  char hex[32];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(cfg.hash()));
  m["config_hash"] = hex;
  m["seeds"] = seeds;
  m["outputs"] = outputs;
  m["timings_ms"] = {{"total", elapsed_ms}};
  m["failures"] = failures;
  if (!extra.is_null()) m["results"] = extra;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest '" + path + "'");
  out << m.dump(2) << "\n";
}

double parse_delta_obs(const KeyValueConfig& cfg) { return cfg.get_double("delta_obs"); }

}  // namespace

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const Mat& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write CSV '" + path + "'");
  for (size_t i = 0; i < header.size(); ++i) {
    if (i) out << ",";
    out << header[i];
  }
  out << "\n";
  for (long r = 0; r < rows.rows(); ++r) {
    for (long c = 0; c < rows.cols(); ++c) {
      if (c) out << ",";
      out << format_g17(rows(r, c));
    }
    out << "\n";
  }
}

Mat load_csv(const std::string& path, std::vector<std::string>* header) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open CSV '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput("empty CSV '" + path + "'");
  std::vector<std::string> head;
  {
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) head.push_back(item);
  }
  if (header) *header = head;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) row.push_back(std::stod(item));
    if (row.size() != head.size())
      throw InvalidInput("ragged CSV row in '" + path + "'");
    rows.push_back(std::move(row));
  }
  Mat m(static_cast<long>(rows.size()), static_cast<long>(head.size()));
  for (long r = 0; r < m.rows(); ++r)
    for (long c = 0; c < m.cols(); ++c) m(r, c) = rows[r][c];
  return m;
}

std::vector<std::string> parallel_tasks(int n_tasks, int threads,
                                        const std::function<void(int)>& fn) {
  std::vector<std::string> errors(n_tasks);
  if (threads <= 1 || n_tasks <= 1) {
    for (int i = 0; i < n_tasks; ++i) {
      try {
        fn(i);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  } else {
    std::atomic<int> next{0};
    auto worker = [&]() {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= n_tasks) return;
        try {
          fn(i);
        } catch (const std::exception& e) {
          errors[i] = e.what();
        }
      }
    };
    std::vector<std::thread> pool;
    const int n_workers = std::min(threads, n_tasks);
    pool.reserve(n_workers);
    for (int t = 0; t < n_workers; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  std::vector<std::string> failures;
  for (int i = 0; i < n_tasks; ++i)
    if (!errors[i].empty())
      failures.push_back("task " + std::to_string(i) + ": " + errors[i]);
  return failures;
}

ModelSpec model_from_config(const KeyValueConfig& cfg) {
  const std::string name = cfg.get_string("model");
  ModelSpec spec;
  if (name == "cubic") {
    const double sigma = cfg.get_double("sigma");
    spec.factory = [](const Vec& t) { return cubic_model(t[0]); };
    spec.theta = Vec::Constant(1, sigma);
  } else if (name == "fhn") {
    const double eps = cfg.get_double("eps");
    const double gam = cfg.get_double("gam");
    const double beta = cfg.get_double("beta");
    const double sigma1 = cfg.get_double("sigma1", 0.0);
    const double sigma2 = cfg.get_double("sigma2");
    spec.factory = [sigma1](const Vec& t) {
      return fhn_model(t[0], t[1], t[2], sigma1, t[3]);
    };
    spec.theta = Vec{{eps, gam, beta, sigma2}};
  } else if (name == "ou2") {
    const auto a = cfg.get_double_list("ou_a");
    const auto s = cfg.get_double_list("ou_sigma");
    if (a.size() != 4 || s.size() != 2)
      throw InvalidInput("ou2 model: ou_a needs 4 entries (row-major), ou_sigma 2");
    Mat A(2, 2), S(2, 2);
    A << a[0], a[1], a[2], a[3];
    S << s[0], 0.0, 0.0, s[1];
    Mat Ac = A, Sc = S;
    spec.factory = [Ac, Sc](const Vec&) { return ou_model(Ac, Sc); };
    spec.theta = Vec(0);
  } else {
    throw InvalidInput("unknown model '" + name + "'");
  }
  spec.model = spec.factory(spec.theta);
  spec.param_names = spec.model.param_names;
  return spec;
}

Scheme scheme_from_config(const KeyValueConfig& cfg) {
  const std::string s = cfg.get_string("scheme");
  if (s == "eum") return Scheme::EuM;
  if (s == "lt") return Scheme::LieTrotter;
  if (s == "strang") return Scheme::Strang;
  throw InvalidInput("unknown scheme '" + s + "' (expected eum|lt|strang)");
}

ObsSpec obs_from_config(const KeyValueConfig& cfg, int dim) {
  ObsSpec obs;
  const std::string regime = cfg.get_string("regime", "full");
  if (regime == "full") {
    obs.regime = Regime::Full;
  } else if (regime == "partial") {
    obs.regime = Regime::Partial;
    obs.observed = cfg.get_int_list("observed");
  } else {
    throw InvalidInput("unknown regime '" + regime + "'");
  }
  obs.delta_obs = parse_delta_obs(cfg);
  obs.bridges = static_cast<int>(cfg.get_long("bridges", 1));
  if (obs.bridges < 1) throw InvalidInput("bridges must be >= 1");
  if (obs.regime == Regime::Partial) {
    const int d_lat = dim - static_cast<int>(obs.observed.size());
    const auto mean = cfg.get_double_list("latent_mean", std::vector<double>(d_lat, 0.0));
    const auto var = cfg.get_double_list("latent_var", std::vector<double>(d_lat, 1.0));
    if (static_cast<int>(mean.size()) != d_lat || static_cast<int>(var.size()) != d_lat)
      throw InvalidInput("latent_mean/latent_var must have the latent dimension");
    obs.init.mean = Eigen::Map<const Vec>(mean.data(), d_lat);
    obs.init.cov = Vec(Eigen::Map<const Vec>(var.data(), d_lat)).asDiagonal();
  }
  return obs;
}

LoglikProblem build_loglik(const SemiLinearModel& model, Scheme scheme,
                           const ObsSpec& obs, const Mat& data) {
  LoglikProblem problem;
  if (obs.regime == Regime::Full) {
    if (obs.bridges == 1) {
      problem.exact = true;
      problem.exact_value = full_unbridged_loglik(model, scheme, data, obs.delta_obs);
    } else {
      problem.fk = bridged_full(model, scheme, data, obs.delta_obs, obs.bridges);
    }
  } else {
    problem.fk = obs.bridges == 1
                     ? partial_unbridged(model, scheme, data, obs.observed,
                                         obs.delta_obs, obs.init)
                     : partial_bridged(model, scheme, data, obs.observed,
                                       obs.delta_obs, obs.bridges, obs.init);
  }
  return problem;
}

double estimate_loglik(const LoglikProblem& problem, const EstimatorOptions& opt,
                       RngStream& rng, std::vector<QuadraticLogPolicy>* warm) {
  if (problem.exact) return problem.exact_value;
  if (opt.kind == "bpf") return bpf(problem.fk, opt.n_particles, rng);
  if (opt.kind != "csmc") throw InvalidInput("estimator must be csmc or bpf");
  CsmcOptions copt;
  copt.n_particles = opt.n_particles;
  copt.tol = opt.csmc_tol;
  copt.max_iters = opt.csmc_max_iters;
  if (warm && !warm->empty()) copt.warm_start = *warm;
  CsmcReport report = csmc(problem.fk, copt, rng);
  if (warm) *warm = report.final_policies;
  return report.final_log_z;
}

double bridge_explosion_fraction(const SemiLinearModel& model, Scheme scheme,
                                 const Mat& data, double delta_obs, int K,
                                 int n_particles, RngStream& rng) {
  if (K < 1) throw InvalidInput("bridge_explosion_fraction: K >= 1");
  if (K == 1) return 0.0;  // no intermediate states
  const SchemeKernel kernel = make_kernel(model, scheme, delta_obs / K);
  const long m_obs = data.rows() - 1;
  long exploded = 0;
  std::vector<Vec> particles(n_particles);
  for (long k = 0; k < m_obs; ++k) {
    for (int i = 0; i < n_particles; ++i) particles[i] = data.row(k);
    bool boom = false;
    for (int n = 1; n <= K - 1 && !boom; ++n) {
      for (int i = 0; i < n_particles; ++i) {
        particles[i] = kernel.sample(particles[i], rng);
        if (!particles[i].allFinite() ||
            particles[i].cwiseAbs().maxCoeff() > kExplosionThreshold) {
          boom = true;
          break;
        }
      }
    }
    if (boom) ++exploded;
  }
  return static_cast<double>(exploded) / static_cast<double>(m_obs);
}

// ---------------------------------------------------------------- simulate

RunSummary run_simulate(const KeyValueConfig& cfg, const RunContext& ctx) {
  Timer timer;
  const auto seeds = seeds_for(cfg, ctx);
  const ModelSpec spec = model_from_config(cfg);
  const Scheme scheme = scheme_from_config(cfg);
  const auto x0_list = cfg.get_double_list("x0");
  if (static_cast<int>(x0_list.size()) != spec.model.dim)
    throw InvalidInput("x0 must have the model dimension");
  const Vec x0 = Eigen::Map<const Vec>(x0_list.data(), spec.model.dim);
  const double delta_sim = cfg.get_double("delta_sim");
  const double delta_obs = parse_delta_obs(cfg);
  const long n_obs = cfg.has("n_obs") ? cfg.get_long("n_obs")
                                      : std::lround(cfg.get_double("t_end") / delta_obs);
  const long stride = std::lround(delta_obs / delta_sim);
  if (stride < 1 || std::abs(stride * delta_sim - delta_obs) > 1e-9 * delta_obs)
    throw InvalidInput("delta_obs must be an integer multiple of delta_sim");

  std::string regime = cfg.get_string("regime", "full");
  std::vector<int> observed;
  if (regime == "partial") observed = cfg.get_int_list("observed");
  const std::string prefix = cfg.get_string("output_prefix", "data");
  cfg.assert_fully_consumed();

  RunSummary summary;
  json results = json::array();
  std::vector<PathSample> paths(seeds.size());
  auto failures = parallel_tasks(
      static_cast<int>(seeds.size()), ctx.threads, [&](int i) {
        RngStream rng = make_stream(seeds[i], 0);
        paths[i] = simulate_path(spec.model, scheme, x0, delta_sim,
                                 n_obs * stride, stride, rng);
      });

  for (size_t i = 0; i < seeds.size(); ++i) {
    if (paths[i].states.size() == 0) continue;  // task failed
    const PathSample& path = paths[i];
    const std::string name =
        seeds.size() == 1 ? prefix + ".csv"
                          : prefix + "_seed" + std::to_string(seeds[i]) + ".csv";
    const std::string file = join_path(ctx.out_dir, name);

    const long rows = path.states.rows();
    std::vector<std::string> header{"time"};
    Mat table;
    if (regime == "partial") {
      table.resize(rows, 1 + static_cast<long>(observed.size()));
      for (size_t j = 0; j < observed.size(); ++j)
        header.push_back("x" + std::to_string(observed[j] + 1));
      for (long r = 0; r < rows; ++r) {
        table(r, 0) = path.times[r];
        for (size_t j = 0; j < observed.size(); ++j)
          table(r, 1 + j) = path.states(r, observed[j]);
      }
    } else {
      table.resize(rows, 1 + spec.model.dim);
      for (int j = 0; j < spec.model.dim; ++j)
        header.push_back("x" + std::to_string(j + 1));
      for (long r = 0; r < rows; ++r) {
        table(r, 0) = path.times[r];
        table.row(r).tail(spec.model.dim) = path.states.row(r);
      }
    }
    write_csv(file, header, table);
    summary.outputs.push_back(file);
    results.push_back({{"seed", seeds[i]},
                       {"rows", rows},
                       {"exploded", path.exploded},
                       {"explosion_step", path.explosion_step}});
  }

  const std::string manifest = join_path(ctx.out_dir, prefix + "_manifest.json");
  write_manifest(manifest, "simulate", cfg, seeds, summary.outputs, timer.ms(),
                 results, failures);
  summary.outputs.push_back(manifest);
  summary.failures = static_cast<int>(failures.size());
  summary.tasks = static_cast<int>(seeds.size());
  return summary;
}

// ------------------------------------------------------------- loglik scan

RunSummary run_loglik_scan(const KeyValueConfig& cfg, const RunContext& ctx) {
  Timer timer;
  const auto seeds = seeds_for(cfg, ctx);
  if (seeds.empty()) throw InvalidInput("loglik-scan: need a seed");
  const ModelSpec spec = model_from_config(cfg);
  const Scheme scheme = scheme_from_config(cfg);
  ObsSpec obs = obs_from_config(cfg, spec.model.dim);
  const Mat raw = load_csv(cfg.get_string("data_file"));
  const Mat data = raw.rightCols(raw.cols() - 1);

  const std::string scan_param = cfg.get_string("scan_param");
  int scan_index = -1;
  for (size_t i = 0; i < spec.param_names.size(); ++i)
    if (spec.param_names[i] == scan_param) scan_index = static_cast<int>(i);
  if (scan_index < 0) throw InvalidInput("unknown scan_param '" + scan_param + "'");

  const double lo = cfg.get_double("grid_lo");
  const double hi = cfg.get_double("grid_hi");
  const double step = cfg.get_double("grid_step");
  if (!(step > 0.0) || hi < lo) throw InvalidInput("bad scan grid");
  std::vector<double> grid;
  for (long i = 0;; ++i) {
    const double v = lo + step * static_cast<double>(i);
    if (v > hi + 1e-12 * step) break;
    grid.push_back(v);
  }
  const auto k_list = cfg.get_int_list("k_list", {obs.bridges});

  EstimatorOptions opt;
  opt.kind = cfg.get_string("estimator", "csmc");
  opt.n_particles = static_cast<int>(cfg.get_long("n_particles", 100));
  opt.csmc_tol = cfg.get_double("csmc_tol", 1e-2);
  opt.csmc_max_iters = static_cast<int>(cfg.get_long("csmc_max_iters", 10));
  const int n_reps = static_cast<int>(cfg.get_long("n_reps", 1));
  const std::string prefix = cfg.get_string("output_prefix", "loglik_scan");
  cfg.assert_fully_consumed();

  const int n_cells = static_cast<int>(grid.size() * k_list.size());
  Mat cell_reps = Mat::Constant(n_cells, n_reps, std::numeric_limits<double>::quiet_NaN());
  auto failures = parallel_tasks(n_cells * n_reps, ctx.threads, [&](int task) {
    const int cell = task / n_reps;
    const int rep = task % n_reps;
    const int gi = cell / static_cast<int>(k_list.size());
    const int ki = cell % static_cast<int>(k_list.size());
    Vec theta = spec.theta;
    theta[scan_index] = grid[gi];
    ObsSpec cell_obs = obs;
    cell_obs.bridges = k_list[ki];
    const LoglikProblem problem =
        build_loglik(spec.factory(theta), scheme, cell_obs, data);
    RngStream rng = make_stream(seeds[0], static_cast<std::uint64_t>(task));
    cell_reps(cell, rep) = estimate_loglik(problem, opt, rng);
  });

  Mat table(n_cells, 4);
  for (int cell = 0; cell < n_cells; ++cell) {
    const int gi = cell / static_cast<int>(k_list.size());
    const int ki = cell % static_cast<int>(k_list.size());
    const double mean = cell_reps.row(cell).mean();
    double se = 0.0;
    if (n_reps > 1) {
      const double var =
          (cell_reps.row(cell).array() - mean).square().sum() / (n_reps - 1);
      se = std::sqrt(var / n_reps);
    }
    table(cell, 0) = grid[gi];
    table(cell, 1) = k_list[ki];
    table(cell, 2) = mean;
    table(cell, 3) = se;
  }

  RunSummary summary;
  const std::string file = join_path(ctx.out_dir, prefix + ".csv");
  write_csv(file, {scan_param, "K", "log_z", "stderr"}, table);
  summary.outputs.push_back(file);
  const std::string manifest = join_path(ctx.out_dir, prefix + "_manifest.json");
  write_manifest(manifest, "loglik-scan", cfg, seeds, summary.outputs, timer.ms(),
                 json(), failures);
  summary.outputs.push_back(manifest);
  summary.failures = static_cast<int>(failures.size());
  summary.tasks = n_cells * n_reps;
  return summary;
}

// -------------------------------------------------------------------- mle

namespace {

struct MleSetup {
  ModelSpec spec;
  Scheme scheme;
  ObsSpec obs;
  Mat data;
  EstimatorOptions opt;
  SpsaConfig spsa;
  Vec theta0_log;
  bool init_from_unbridged = true;
  bool warm_start_policies = true;
};

MleSetup mle_setup(const KeyValueConfig& cfg) {
  MleSetup s;
  s.spec = model_from_config(cfg);
  s.scheme = scheme_from_config(cfg);
  s.obs = obs_from_config(cfg, s.spec.model.dim);
  const Mat raw = load_csv(cfg.get_string("data_file"));
  s.data = raw.rightCols(raw.cols() - 1);
  s.opt.kind = cfg.get_string("estimator", "csmc");
  s.opt.n_particles = static_cast<int>(cfg.get_long("n_particles", 20));
  s.opt.csmc_tol = cfg.get_double("csmc_tol", 1e-2);
  s.opt.csmc_max_iters = static_cast<int>(cfg.get_long("csmc_max_iters", 10));
  s.spsa.a = cfg.get_double("spsa_a", 0.2);
  s.spsa.c = cfg.get_double("spsa_c", 0.1);
  s.spsa.alpha = cfg.get_double("spsa_alpha", 0.602);
  s.spsa.gamma_exp = cfg.get_double("spsa_gamma", 0.101);
  s.spsa.stability = cfg.get_double("spsa_stability", -1.0);
  s.spsa.iterations = static_cast<int>(cfg.get_long("spsa_iters", 200));
  s.spsa.adaptive = cfg.get_bool("adaptive", true);
  const auto t0 = cfg.get_double_list("theta0");
  if (t0.size() != s.spec.param_names.size())
    throw InvalidInput("theta0 size must match the model parameter count");
  s.theta0_log = Eigen::Map<const Vec>(t0.data(), t0.size()).array().log();
  s.init_from_unbridged = cfg.get_bool("init_from_unbridged", true);
  s.warm_start_policies = cfg.get_bool("warm_start_policies", true);
  return s;
}

// Objective on the log scale; optional policy warm-start across measurements.
Objective make_objective(const MleSetup& s, int bridges, int n_particles,
                         std::shared_ptr<std::vector<QuadraticLogPolicy>> warm,
                         std::shared_ptr<RngStream> rng) {
  ObsSpec obs = s.obs;
  obs.bridges = bridges;
  EstimatorOptions opt = s.opt;
  opt.n_particles = n_particles;
  const ModelSpec& spec = s.spec;
  const Scheme scheme = s.scheme;
  const Mat data = s.data;
  return [spec, scheme, obs, opt, data, warm, rng](const Vec& theta_log) {
    const Vec theta = theta_log.array().exp();
    const LoglikProblem problem = build_loglik(spec.factory(theta), scheme, obs, data);
    return estimate_loglik(problem, opt, *rng, warm ? warm.get() : nullptr);
  };
}

}  // namespace

RunSummary run_mle(const KeyValueConfig& cfg, const RunContext& ctx) {
  Timer timer;
  const auto seeds = seeds_for(cfg, ctx);
  const MleSetup setup = mle_setup(cfg);
  const std::string prefix = cfg.get_string("output_prefix", "mle");
  cfg.assert_fully_consumed();

  const int p = static_cast<int>(setup.spec.param_names.size());
  Mat estimates = Mat::Constant(static_cast<long>(seeds.size()), p + 1,
                                std::numeric_limits<double>::quiet_NaN());
  std::vector<Mat> traces(seeds.size());

  auto failures = parallel_tasks(
      static_cast<int>(seeds.size()), ctx.threads, [&](int i) {
        auto rng = std::make_shared<RngStream>(make_stream(seeds[i], 1));
        Vec theta0 = setup.theta0_log;
        if (setup.obs.bridges > 1 && setup.init_from_unbridged) {
          auto warm0 = setup.warm_start_policies
                           ? std::make_shared<std::vector<QuadraticLogPolicy>>()
                           : nullptr;
          const Objective pre = make_objective(
              setup, 1, std::max(2, setup.opt.n_particles / 2), warm0, rng);
          theta0 = spsa_initialize_bridged(pre, theta0, setup.spsa,
                                           setup.obs.bridges, *rng);
        }
        auto warm = setup.warm_start_policies
                        ? std::make_shared<std::vector<QuadraticLogPolicy>>()
                        : nullptr;
        const Objective obj = make_objective(setup, setup.obs.bridges,
                                             setup.opt.n_particles, warm, rng);
        const SpsaResult res = spsa_maximize(obj, theta0, setup.spsa, *rng);
        estimates(i, 0) = static_cast<double>(seeds[i]);
        estimates.row(i).tail(p) = res.theta.array().exp();
        Mat trace(res.trace.thetas.rows(), p + 2);
        for (long r = 0; r < trace.rows(); ++r) {
          trace(r, 0) = static_cast<double>(r + 1);
          trace.row(r).segment(1, p) = res.trace.thetas.row(r);
          trace(r, p + 1) = res.trace.objectives[r];
        }
        traces[i] = trace;
      });

  RunSummary summary;
  std::vector<std::string> header{"seed"};
  for (const auto& n : setup.spec.param_names) header.push_back(n + "_hat");
  const std::string file = join_path(ctx.out_dir, prefix + ".csv");
  write_csv(file, header, estimates);
  summary.outputs.push_back(file);

  std::vector<std::string> trace_header{"iter"};
  for (const auto& n : setup.spec.param_names) trace_header.push_back("log_" + n);
  trace_header.push_back("objective");
  for (size_t i = 0; i < seeds.size(); ++i) {
    if (traces[i].size() == 0) continue;
    const std::string tf = join_path(
        ctx.out_dir, prefix + "_trace_seed" + std::to_string(seeds[i]) + ".csv");
    write_csv(tf, trace_header, traces[i]);
    summary.outputs.push_back(tf);
  }

  const std::string manifest = join_path(ctx.out_dir, prefix + "_manifest.json");
  write_manifest(manifest, "mle-spsa", cfg, seeds, summary.outputs, timer.ms(),
                 json(), failures);
  summary.outputs.push_back(manifest);
  summary.failures = static_cast<int>(failures.size());
  summary.tasks = static_cast<int>(seeds.size());
  return summary;
}

// ------------------------------------------------------------------- pmmh

RunSummary run_pmmh(const KeyValueConfig& cfg, const RunContext& ctx) {
  Timer timer;
  const auto seeds = seeds_for(cfg, ctx);
  const ModelSpec spec = model_from_config(cfg);
  const Scheme scheme = scheme_from_config(cfg);
  const ObsSpec obs = obs_from_config(cfg, spec.model.dim);
  const Mat raw = load_csv(cfg.get_string("data_file"));
  const Mat data = raw.rightCols(raw.cols() - 1);

  EstimatorOptions opt;
  opt.kind = cfg.get_string("estimator", "csmc");
  opt.n_particles = static_cast<int>(cfg.get_long("n_particles", 10));
  opt.csmc_tol = cfg.get_double("csmc_tol", 1e-2);
  opt.csmc_max_iters = static_cast<int>(cfg.get_long("csmc_max_iters", 10));

  const int p = static_cast<int>(spec.param_names.size());
  PmmhOptions popt;
  popt.iterations = static_cast<int>(cfg.get_long("iterations"));
  auto std_list = cfg.get_double_list("proposal_std", std::vector<double>(p, 0.05));
  if (std_list.size() == 1) std_list.assign(p, std_list[0]);
  if (static_cast<int>(std_list.size()) != p)
    throw InvalidInput("proposal_std must have one entry per parameter");
  popt.proposal_std = Eigen::Map<const Vec>(std_list.data(), p);
  const auto t0 = cfg.get_double_list("theta0");
  if (static_cast<int>(t0.size()) != p)
    throw InvalidInput("theta0 size must match the model parameter count");
  const Vec theta0_log = Eigen::Map<const Vec>(t0.data(), p).array().log();
  const std::string prefix = cfg.get_string("output_prefix", "pmmh");
  cfg.assert_fully_consumed();

  // standard Gaussian prior on the log-scale parameters
  auto log_prior = [](const Vec& t) { return -0.5 * t.squaredNorm(); };

  RunSummary summary;
  json results = json::array();
  std::vector<PmmhResult> chains(seeds.size());
  auto failures = parallel_tasks(
      static_cast<int>(seeds.size()), ctx.threads, [&](int i) {
        RngStream chain_rng = make_stream(seeds[i], 2);
        RngStream est_rng = make_stream(seeds[i], 3);
        auto estimator = [&](const Vec& theta_log) {
          const Vec theta = theta_log.array().exp();
          const LoglikProblem problem =
              build_loglik(spec.factory(theta), scheme, obs, data);
          return estimate_loglik(problem, opt, est_rng);
        };
        chains[i] = pmmh(log_prior, estimator, theta0_log, popt, chain_rng);
      });

  for (size_t i = 0; i < seeds.size(); ++i) {
    const PmmhResult& res = chains[i];
    if (popt.iterations > 0 && res.chain.rows() > 0) {
      Mat table(res.chain.rows(), p + 3);
      for (long r = 0; r < table.rows(); ++r) {
        table(r, 0) = static_cast<double>(r + 1);
        table.row(r).segment(1, p) = res.chain.row(r);
        table(r, p + 1) = res.log_likelihoods[r];
        table(r, p + 2) = res.accepted[r];
      }
      std::vector<std::string> header{"iter"};
      for (const auto& n : spec.param_names) header.push_back("log_" + n);
      header.push_back("log_z");
      header.push_back("accepted");
      const std::string cf = join_path(
          ctx.out_dir, prefix + "_chain_seed" + std::to_string(seeds[i]) + ".csv");
      write_csv(cf, header, table);
      summary.outputs.push_back(cf);
    }
    results.push_back({{"seed", seeds[i]},
                       {"acceptance_rate", res.acceptance_rate},
                       {"estimator_failures", res.estimator_failures}});
  }

  const std::string manifest = join_path(ctx.out_dir, prefix + "_manifest.json");
  write_manifest(manifest, "pmmh", cfg, seeds, summary.outputs, timer.ms(), results,
                 failures);
  summary.outputs.push_back(manifest);
  summary.failures = static_cast<int>(failures.size());
  summary.tasks = static_cast<int>(seeds.size());
  return summary;
}

// -------------------------------------------------------------- explosion

RunSummary run_explosion(const KeyValueConfig& cfg, const RunContext& ctx) {
  Timer timer;
  const auto seeds = seeds_for(cfg, ctx);
  const auto sigma_list = cfg.get_double_list("sigma_list");
  const auto k_list = cfg.get_int_list("k_list");
  const double delta_obs = parse_delta_obs(cfg);
  const double delta_sim = cfg.get_double("delta_sim", 1e-4);
  const double t_end = cfg.get_double("t_end", 100.0);
  const int n_particles = static_cast<int>(cfg.get_long("n_particles", 100));
  const std::string prefix = cfg.get_string("output_prefix", "explosion");
  cfg.assert_fully_consumed();

  const long n_obs = std::lround(t_end / delta_obs);
  const long stride = std::lround(delta_obs / delta_sim);
  struct Cell { double frac[3]; };
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const int n_cases = static_cast<int>(seeds.size() * sigma_list.size());
  std::vector<std::vector<Cell>> cells(
      n_cases, std::vector<Cell>(k_list.size(), Cell{{nan, nan, nan}}));

  auto failures = parallel_tasks(n_cases, ctx.threads, [&](int case_idx) {
    const int si = case_idx / static_cast<int>(sigma_list.size());
    const int gi = case_idx % static_cast<int>(sigma_list.size());
    const SemiLinearModel model = cubic_model(sigma_list[gi]);
    RngStream data_rng = make_stream(seeds[si], 10);
    const PathSample path = simulate_path(model, Scheme::Strang, Vec::Zero(1),
                                          delta_sim, n_obs * stride, stride, data_rng);
    const Scheme schemes[3] = {Scheme::EuM, Scheme::LieTrotter, Scheme::Strang};
    for (size_t ki = 0; ki < k_list.size(); ++ki) {
      for (int s = 0; s < 3; ++s) {
        RngStream rng = make_stream(seeds[si], 100 + 10 * ki + s);
        cells[case_idx][ki].frac[s] = bridge_explosion_fraction(
            model, schemes[s], path.states, delta_obs, k_list[ki], n_particles, rng);
      }
    }
  });

  Mat table(static_cast<long>(n_cases * k_list.size()), 6);
  long row = 0;
  for (int case_idx = 0; case_idx < n_cases; ++case_idx) {
    const int si = case_idx / static_cast<int>(sigma_list.size());
    const int gi = case_idx % static_cast<int>(sigma_list.size());
    for (size_t ki = 0; ki < k_list.size(); ++ki) {
      table(row, 0) = static_cast<double>(seeds[si]);
      table(row, 1) = sigma_list[gi];
      table(row, 2) = k_list[ki];
      table(row, 3) = cells[case_idx][ki].frac[0];
      table(row, 4) = cells[case_idx][ki].frac[1];
      table(row, 5) = cells[case_idx][ki].frac[2];
      ++row;
    }
  }

  RunSummary summary;
  const std::string file = join_path(ctx.out_dir, prefix + ".csv");
  write_csv(file, {"seed", "sigma", "K", "frac_eum", "frac_lt", "frac_strang"}, table);
  summary.outputs.push_back(file);
  const std::string manifest = join_path(ctx.out_dir, prefix + "_manifest.json");
  write_manifest(manifest, "explosion-study", cfg, seeds, summary.outputs, timer.ms(),
                 json(), failures);
  summary.outputs.push_back(manifest);
  summary.failures = static_cast<int>(failures.size());
  summary.tasks = n_cases;
  return summary;
}

// ------------------------------------------------------------- weak order

RunSummary run_weak_order(const KeyValueConfig& cfg, const RunContext& ctx) {
  Timer timer;
  const auto seeds = seeds_for(cfg, ctx);
  if (seeds.empty()) throw InvalidInput("weak-order: need a seed");
  const ModelSpec spec = model_from_config(cfg);
  const auto x0_list = cfg.get_double_list("x0");
  const Vec x0 = Eigen::Map<const Vec>(x0_list.data(), x0_list.size());
  const auto deltas = cfg.get_double_list("delta_list");
  const int n_mc = static_cast<int>(cfg.get_long("n_mc", 100000));
  const int fine_factor = static_cast<int>(cfg.get_long("fine_factor", 128));
  std::vector<std::string> scheme_names;
  {
    std::stringstream ss(cfg.get_string("schemes", "lt,strang"));
    std::string item;
    while (std::getline(ss, item, ',')) scheme_names.push_back(item);
  }
  const std::string prefix = cfg.get_string("output_prefix", "weak_order");
  cfg.assert_fully_consumed();

  auto to_scheme = [](const std::string& s) {
    if (s == "eum") return Scheme::EuM;
    if (s == "lt") return Scheme::LieTrotter;
    if (s == "strang") return Scheme::Strang;
    throw InvalidInput("unknown scheme '" + s + "'");
  };

  std::vector<WeakOrderResult> results(scheme_names.size());
  auto failures = parallel_tasks(
      static_cast<int>(scheme_names.size()), ctx.threads, [&](int i) {
        RngStream rng = make_stream(seeds[0], 20 + i);
        results[i] = weak_order_probe(spec.model, to_scheme(scheme_names[i]), x0,
                                      deltas, n_mc, rng, fine_factor);
      });

  Mat errors(static_cast<long>(scheme_names.size() * deltas.size()), 3);
  Mat summary_rows(static_cast<long>(scheme_names.size()), 4);
  for (size_t i = 0; i < scheme_names.size(); ++i) {
    for (size_t j = 0; j < deltas.size(); ++j) {
      errors(i * deltas.size() + j, 0) = static_cast<double>(i);
      errors(i * deltas.size() + j, 1) = deltas[j];
      errors(i * deltas.size() + j, 2) =
          j < results[i].errors.size() ? results[i].errors[j] : 0.0;
    }
    summary_rows(i, 0) = static_cast<double>(i);
    summary_rows(i, 1) = results[i].slope;
    summary_rows(i, 2) = results[i].residual;
    summary_rows(i, 3) = results[i].exact ? 1.0 : 0.0;
  }

  RunSummary summary;
  const std::string ef = join_path(ctx.out_dir, prefix + ".csv");
  write_csv(ef, {"scheme_index", "delta", "mean_error"}, errors);
  summary.outputs.push_back(ef);
  const std::string sf = join_path(ctx.out_dir, prefix + "_summary.csv");
  write_csv(sf, {"scheme_index", "slope", "residual", "exact"}, summary_rows);
  summary.outputs.push_back(sf);

  json extra = json::array();
  for (size_t i = 0; i < scheme_names.size(); ++i)
    extra.push_back({{"scheme", scheme_names[i]},
                     {"slope", results[i].slope},
                     {"exact", results[i].exact}});
  const std::string manifest = join_path(ctx.out_dir, prefix + "_manifest.json");
  write_manifest(manifest, "weak-order", cfg, seeds, summary.outputs, timer.ms(),
                 extra, failures);
  summary.outputs.push_back(manifest);
  summary.failures = static_cast<int>(failures.size());
  summary.tasks = static_cast<int>(scheme_names.size());
  return summary;
}

// ---------------------------------------------------------- csmc variance

RunSummary run_csmc_variance(const KeyValueConfig& cfg, const RunContext& ctx) {
  Timer timer;
  const auto seeds = seeds_for(cfg, ctx);
  if (seeds.empty()) throw InvalidInput("csmc-variance: need a seed");
  const ModelSpec spec = model_from_config(cfg);
  const Scheme scheme = scheme_from_config(cfg);
  const ObsSpec obs = obs_from_config(cfg, spec.model.dim);
  const Mat raw = load_csv(cfg.get_string("data_file"));
  const Mat data = raw.rightCols(raw.cols() - 1);

  const int n_reps = static_cast<int>(cfg.get_long("n_reps", 100));
  const int n_bpf = static_cast<int>(cfg.get_long("n_bpf", 125));
  const int n_csmc = static_cast<int>(cfg.get_long("n_csmc", 10));
  EstimatorOptions copt;
  copt.kind = "csmc";
  copt.n_particles = n_csmc;
  copt.csmc_tol = cfg.get_double("csmc_tol", 1e-2);
  copt.csmc_max_iters = static_cast<int>(cfg.get_long("csmc_max_iters", 10));
  const std::string prefix = cfg.get_string("output_prefix", "csmc_variance");
  cfg.assert_fully_consumed();

  const LoglikProblem problem = build_loglik(spec.model, scheme, obs, data);
  Mat table = Mat::Constant(2 * n_reps, 4, std::numeric_limits<double>::quiet_NaN());
  auto failures = parallel_tasks(2 * n_reps, ctx.threads, [&](int task) {
    const int rep = task / 2;
    const bool is_bpf = task % 2 == 0;
    RngStream rng = make_stream(seeds[0], 1000 + task);
    double value;
    if (is_bpf) {
      value = bpf(problem.fk, n_bpf, rng);
    } else {
      EstimatorOptions o = copt;
      value = estimate_loglik(problem, o, rng);
    }
    table(task, 0) = rep;
    table(task, 1) = is_bpf ? 0.0 : 1.0;  // 0 = bpf, 1 = csmc
    table(task, 2) = is_bpf ? n_bpf : n_csmc;
    table(task, 3) = value;
  });

  RunSummary summary;
  const std::string file = join_path(ctx.out_dir, prefix + ".csv");
  write_csv(file, {"rep", "method", "n_particles", "log_z"}, table);
  summary.outputs.push_back(file);
  const std::string manifest = join_path(ctx.out_dir, prefix + "_manifest.json");
  write_manifest(manifest, "csmc-variance", cfg, seeds, summary.outputs, timer.ms(),
                 json(), failures);
  summary.outputs.push_back(manifest);
  summary.failures = static_cast<int>(failures.size());
  summary.tasks = 2 * n_reps;
  return summary;
}

RunSummary run_command(const std::string& subcommand, const KeyValueConfig& cfg,
                       const RunContext& ctx) {
  struct Entry {
    const char* sub;
    const char* algorithm;
    RunSummary (*fn)(const KeyValueConfig&, const RunContext&);
  };
  static const Entry table[] = {
      {"simulate", "simulate", run_simulate},
      {"loglik-scan", "loglik-scan", run_loglik_scan},
      {"mle", "mle-spsa", run_mle},
      {"pmmh", "pmmh", run_pmmh},
      {"explosion", "explosion-study", run_explosion},
      {"weak-order", "weak-order", run_weak_order},
      {"csmc-variance", "csmc-variance", run_csmc_variance},
  };
  for (const Entry& e : table) {
    if (subcommand == e.sub) {
      const std::string algo = cfg.get_string("algorithm");
      if (algo != e.algorithm)
        throw InvalidInput("config algorithm '" + algo + "' does not match command '" +
                           subcommand + "' (expected '" + e.algorithm + "')");
      return e.fn(cfg, ctx);
    }
  }
  throw InvalidInput("unknown command '" + subcommand + "'");
}

}  // namespace splitsmc
