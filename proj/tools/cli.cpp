#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <utility>

#include "asal/config.hpp"
#include "asal/deploy.hpp"
#include "asal/objectives.hpp"
#include "asal/policy.hpp"
#include "asal/problems.hpp"
#include "asal/rng.hpp"
#include "asal/task_sampler.hpp"
#include "asal/trainer.hpp"

namespace asal::cli {
namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string format_g17(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::string token;
  std::istringstream is(csv);
  while (std::getline(is, token, ',')) {
    const std::size_t a = token.find_first_not_of(" \t");
    if (a == std::string::npos) continue;
    const std::size_t b = token.find_last_not_of(" \t");
    out.push_back(token.substr(a, b - a + 1));
  }
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& csv) {
  std::vector<std::uint64_t> out;
  for (const std::string& token : split_list(csv)) {
    std::uint64_t v = 0;
    const char* last = token.data() + token.size();
    auto [ptr, ec] = std::from_chars(token.data(), last, v);
    if (ec != std::errc() || ptr != last) {
      throw std::invalid_argument("seed '" + token +
                                  "' is not a nonnegative integer");
    }
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument("empty seed list");
  return out;
}

int worker_count() {
  const char* env = std::getenv("ASAL_WORKERS");
  if (env == nullptr || *env == '\0') return 1;
  int v = 0;
  const char* last = env + std::string_view(env).size();
  auto [ptr, ec] = std::from_chars(env, last, v);
  if (ec != std::errc() || ptr != last || v < 1) {
    throw std::invalid_argument("ASAL_WORKERS must be a positive integer");
  }
  return v;
}

// Reads through the file configuration while materializing every consulted
// key, so the final hash covers the fully resolved values, defaults
// included. Seeds stay out of the hash; records carry them separately.
struct Resolver {
  const config::Config* file = nullptr;
  config::Config resolved;

  long long geti(const std::string& key, long long fallback) {
    const long long v = file->get_int(key, fallback);
    resolved.set(key, std::to_string(v));
    return v;
  }
  double getd(const std::string& key, double fallback) {
    const double v = file->get_double(key, fallback);
    resolved.set(key, format_g17(v));
    return v;
  }
  bool getb(const std::string& key, bool fallback) {
    const bool v = file->get_bool(key, fallback);
    resolved.set(key, v ? "true" : "false");
    return v;
  }
  std::string gets(const std::string& key, const std::string& fallback) {
    const std::string v = file->get_string(key, fallback);
    if (!v.empty()) resolved.set(key, v);
    return v;
  }
  std::string hash_hex() const {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "0x%016llx",
                  static_cast<unsigned long long>(resolved.hash()));
    return buf;
  }
};

// Misspelled keys inside a command's namespaces fail instead of silently
// falling back to defaults. Namespaces not consulted by the command pass
// through untouched, so one file can configure several commands.
void reject_unread(const config::Config& cfg,
                   std::initializer_list<std::string_view> prefixes) {
  std::string bad;
  for (const std::string& key : cfg.unread_keys()) {
    for (const std::string_view prefix : prefixes) {
      if (key.starts_with(prefix)) {
        bad += bad.empty() ? "" : ", ";
        bad += key;
        break;
      }
    }
  }
  if (!bad.empty()) {
    throw std::invalid_argument("config: unknown keys: " + bad);
  }
}

json to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

json to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

std::ofstream open_truncated(const fs::path& path, const char* what) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) {
    throw std::runtime_error(std::string(what) + ": cannot write '" +
                             path.string() + "'");
  }
  return os;
}

struct Args {
  std::string config_path;
  std::string seed_csv = "0";
  std::string out_dir = ".";
  std::string method_csv;
  std::string problem_csv;
  double gamma = 0.0;
  bool gamma_set = false;
  int budget = 0;
  bool budget_set = false;
  std::string checkpoint;
  bool force = false;
};

// ---------------------------------------------------------------------------
// train

int cmd_train(const Args& a, const config::Config& cfg, std::ostream& out) {
  const std::vector<std::uint64_t> seeds = parse_seeds(a.seed_csv);
  if (seeds.size() != 1) {
    throw std::invalid_argument("train: exactly one seed expected");
  }

  Resolver r{&cfg, {}};
  trainer::TrainConfig tc;
  tc.objective =
      objectives::parse_objective(r.gets("train.objective", "mutual-info"));
  const bool contrastive = tc.objective == objectives::Objective::kDad;
  const bool entropy_penalized =
      tc.objective == objectives::Objective::kSafeEntropy ||
      tc.objective == objectives::Objective::kSafeDivision;
  tc.dim = static_cast<int>(r.geti("train.dim", 1));
  tc.horizon = static_cast<int>(r.geti("train.horizon", 20));
  tc.n_init = static_cast<int>(r.geti("train.n_init", 1));
  tc.gamma = r.getd("train.gamma", 0.05);
  tc.n_hyper = static_cast<int>(r.geti("train.hyper_sets", 10));
  tc.n_pairs = static_cast<int>(r.geti("train.pairs", contrastive ? 200 : 5));
  tc.n_noise =
      static_cast<int>(r.geti("train.noise_draws", entropy_penalized ? 1 : 10));
  tc.n_features = static_cast<int>(r.geti("train.features", 100));
  tc.n_grid =
      static_cast<int>(r.geti("train.grid", tc.dim <= 2 ? 100 : 500));
  tc.learning_rate = r.getd("train.lr", 1e-3);
  tc.lr_decay = r.getd("train.lr_decay", 0.02);
  tc.decay_interval = static_cast<int>(r.geti("train.decay_interval", 50));
  tc.total_steps =
      static_cast<int>(r.geti("train.steps", contrastive ? 20000 : 10000));
  tc.epoch_length = static_cast<int>(r.geti("train.epoch_length", 50));
  tc.heldout_tasks = static_cast<int>(r.geti("train.heldout_tasks", 32));
  tc.heldout_points = static_cast<int>(r.geti("train.heldout_points", 200));
  tc.seed = seeds[0];

  policy::PolicyConfig pc;
  pc.dim = tc.dim;
  pc.embed_dim = static_cast<int>(r.geti("policy.embed", 128));
  pc.hidden = static_cast<int>(r.geti("policy.hidden", 512));
  pc.encoder_layers = static_cast<int>(r.geti("policy.layers", 2));
  pc.head_dim = static_cast<int>(r.geti("policy.head_dim", 16));
  const std::string mode = r.gets("policy.mode", "attention");
  if (mode == "attention") {
    pc.mode = policy::PolicyConfig::Mode::kAttention;
  } else if (mode == "deep_set") {
    pc.mode = policy::PolicyConfig::Mode::kDeepSet;
  } else {
    throw std::invalid_argument(
        "policy.mode must be 'attention' or 'deep_set'");
  }
  pc.has_safety_branch = r.getb("policy.safety_branch",
                                objectives::needs_safety(tc.objective));
  pc.has_budget_input = r.getb("policy.budget_input", !contrastive);
  tc.policy = pc;

  const std::string resume_path = r.gets("train.resume", "");
  reject_unread(cfg, {"train.", "policy."});
  tc.validate();

  const fs::path outdir(a.out_dir);
  fs::create_directories(outdir);
  const std::string ckpt =
      a.checkpoint.empty() ? (outdir / "policy.ckpt").string() : a.checkpoint;
  if (fs::exists(ckpt) && !a.force) {
    throw std::invalid_argument("train: checkpoint '" + ckpt +
                                "' exists; pass --force to overwrite");
  }

  std::optional<trainer::TrainState> state;
  if (!resume_path.empty()) {
    state = trainer::load_train_state(resume_path);
  }

  const fs::path log_path = outdir / "train_log.jsonl";
  std::ofstream log = open_truncated(log_path, "train");
  const trainer::TrainResult res =
      trainer::train_resumable(tc, (outdir / "train_state.bin").string(),
                               state ? &*state : nullptr, &log);
  log.close();
  policy::save_checkpoint(res.policy, ckpt);

  json rec;
  rec["kind"] = "train_summary";
  rec["config_hash"] = r.hash_hex();
  rec["seed"] = seeds[0];
  rec["objective"] = objectives::objective_name(tc.objective);
  rec["steps"] = tc.total_steps;
  rec["selected_epoch"] = res.selected_epoch;
  json selected_loss;  // null when the resumed segment recorded no epochs
  for (const trainer::EpochRecord& e : res.log.epochs) {
    if (e.epoch == res.selected_epoch) selected_loss = e.mean_loss;
  }
  rec["selected_mean_loss"] = selected_loss;
  if (!res.log.epochs.empty()) {
    rec["final_mean_loss"] = res.log.epochs.back().mean_loss;
    rec["final_gp_rmse"] = res.log.epochs.back().gp_rmse;
  }
  rec["skipped_steps"] = res.skipped_steps;
  rec["parameter_count"] = res.policy.parameter_count();
  rec["checkpoint"] = ckpt;
  std::ofstream summary =
      open_truncated(outdir / "train_summary.jsonl", "train");
  summary << rec.dump() << "\n";

  out << "trained " << objectives::objective_name(tc.objective)
      << " policy (seed " << seeds[0] << ", " << tc.total_steps
      << " steps); selected epoch " << res.selected_epoch << "\n";
  out << "checkpoint: " << ckpt << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// deploy

struct PoolSetup {
  problems::Pool pool;
  std::string name;
  int test_count = 0;
  int n_init = 0;
  double seed_lo = 0.4;
  double seed_hi = 0.6;
};

json run_record(const std::string& method, const std::string& problem,
                std::uint64_t seed, const std::string& config_hash,
                const deploy::RunResult& run) {
  json payload;
  payload["rmse"] = run.rmse;
  payload["safe_fraction"] = run.safe_fraction;
  payload["fallbacks"] = run.fallback_count;
  payload["queries"] = to_json(run.queries);
  payload["outputs"] = to_json(run.outputs);
  if (run.safety_obs.size() > 0) payload["safety"] = to_json(run.safety_obs);
  if (!run.pool_indices.empty()) payload["pool_indices"] = run.pool_indices;
  json fit;
  fit["variance"] = run.final_fit.kernel.variance;
  fit["lengthscales"] = to_json(run.final_fit.kernel.lengthscales);
  fit["noise_var"] = run.final_fit.noise_var;
  fit["log_ml"] = run.final_fit.log_ml;
  fit["degraded"] = run.final_fit.degraded;
  payload["final_fit"] = fit;

  double total = 0.0;
  for (double s : run.query_seconds) total += s;
  json timing;
  timing["query_seconds"] = run.query_seconds;
  timing["mean_query_seconds"] =
      run.query_seconds.empty()
          ? 0.0
          : total / static_cast<double>(run.query_seconds.size());

  json rec;
  rec["kind"] = "run";
  rec["config_hash"] = config_hash;
  rec["method"] = method;
  rec["problem"] = problem;
  rec["seed"] = seed;
  rec["payload"] = payload;
  rec["timing"] = timing;
  return rec;
}

int cmd_deploy(const Args& a, const config::Config& cfg, std::ostream& out) {
  const std::vector<std::string> methods = split_list(a.method_csv);
  const std::vector<std::string> problem_names = split_list(a.problem_csv);
  if (methods.empty()) {
    throw std::invalid_argument(
        "deploy: --method is required (comma-separated list)");
  }
  if (problem_names.empty()) {
    throw std::invalid_argument(
        "deploy: --problem is required (comma-separated list)");
  }
  const std::vector<std::uint64_t> seeds = parse_seeds(a.seed_csv);

  // Flag overrides land in the configuration before resolution, so the
  // recorded hash is the same whether a value came from the file or a flag.
  config::Config merged = cfg;
  if (a.budget_set) merged.set("deploy.budget", std::to_string(a.budget));
  if (a.gamma_set) merged.set("deploy.gamma", format_g17(a.gamma));

  Resolver r{&merged, {}};
  deploy::DeployConfig base;
  base.horizon = static_cast<int>(r.geti("deploy.budget", 20));
  base.n_init = static_cast<int>(r.geti("deploy.n_init", 1));
  base.gamma = r.getd("deploy.gamma", 0.05);
  base.discretization =
      static_cast<int>(r.geti("deploy.discretization", 5000));
  base.resample_candidates = r.getb("deploy.resample", true);
  base.fit.restarts = static_cast<int>(r.geti("deploy.fit_restarts", 5));
  base.fit.max_iterations =
      static_cast<int>(r.geti("deploy.fit_iterations", 200));

  bool wants_pool = false;
  bool needs_policy = false;
  for (const std::string& m : methods) {
    if (deploy::parse_mode(m) == deploy::Mode::kPolicy) needs_policy = true;
  }
  for (const std::string& p : problem_names) {
    if (p == "pool") {
      wants_pool = true;
    } else {
      (void)problems::make_problem(p);  // validates the name
    }
  }

  std::optional<PoolSetup> pool;
  if (wants_pool) {
    PoolSetup ps;
    const std::string path = r.gets("pool.path", "");
    if (path.empty()) {
      throw std::invalid_argument(
          "deploy: the pool problem needs pool.path in the config");
    }
    const int dim = static_cast<int>(r.geti("pool.dimension", 0));
    if (dim < 1) {
      throw std::invalid_argument("deploy: pool.dimension must be >= 1");
    }
    const bool safety = r.getb("pool.safety", false);
    ps.pool = problems::parse_pool_csv(path, dim, safety);
    ps.name = r.gets("pool.name", "pool");
    const std::optional<int> registered =
        problems::registry_test_count(ps.name);
    ps.test_count = static_cast<int>(
        r.geti("pool.test_count", registered ? *registered : 50));
    ps.n_init = static_cast<int>(r.geti("pool.n_init", 10));
    ps.seed_lo = r.getd("pool.seed_lo", 0.4);
    ps.seed_hi = r.getd("pool.seed_hi", 0.6);
    pool = std::move(ps);
  }

  std::optional<policy::PolicyParams> params;
  if (needs_policy) {
    if (a.checkpoint.empty()) {
      throw std::invalid_argument(
          "deploy: the policy method requires --checkpoint");
    }
    params = policy::load_checkpoint(a.checkpoint);
  }

  if (wants_pool) {
    reject_unread(merged, {"deploy.", "pool."});
  } else {
    reject_unread(merged, {"deploy."});
  }
  const std::string config_hash = r.hash_hex();
  const int workers = worker_count();

  struct GridItem {
    std::string method;
    std::string problem;
    std::uint64_t seed = 0;
  };
  std::vector<GridItem> grid;
  for (const std::string& m : methods) {
    for (const std::string& p : problem_names) {
      for (const std::uint64_t s : seeds) grid.push_back({m, p, s});
    }
  }

  std::vector<json> records(grid.size());
  std::vector<std::exception_ptr> errors(grid.size());
  std::atomic<std::size_t> cursor{0};
  const policy::PolicyParams* params_ptr = params ? &*params : nullptr;

  auto run_items = [&] {
    for (;;) {
      const std::size_t i = cursor.fetch_add(1);
      if (i >= grid.size()) return;
      try {
        const GridItem& g = grid[i];
        deploy::DeployConfig c = base;
        c.mode = deploy::parse_mode(g.method);
        c.seed = g.seed;
        c.strict_counters = workers == 1;
        deploy::RunResult run;
        std::string problem_label = g.problem;
        if (g.problem == "pool") {
          Rng rng(derive_seed(g.seed, 0x706f6f6cULL));
          c.n_init = pool->n_init;
          const problems::PoolSplit split =
              problems::split_pool(rng, pool->pool, pool->test_count,
                                   pool->n_init, pool->seed_lo, pool->seed_hi);
          run = deploy::deploy_pool(c, split, params_ptr);
          problem_label = "pool:" + pool->name;
        } else {
          const problems::BenchmarkProblem prob =
              problems::make_problem(g.problem);
          run = deploy::deploy(c, prob, params_ptr);
        }
        records[i] =
            run_record(g.method, problem_label, g.seed, config_hash, run);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };

  if (workers == 1) {
    run_items();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) threads.emplace_back(run_items);
    for (std::thread& t : threads) t.join();
  }
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  const fs::path outdir(a.out_dir);
  fs::create_directories(outdir);
  std::ofstream os = open_truncated(outdir / "deploy_records.jsonl", "deploy");
  for (std::size_t i = 0; i < records.size(); ++i) {
    os << records[i].dump() << "\n";
    const json& p = records[i]["payload"];
    char line[160];
    std::snprintf(line, sizeof(line),
                  "%-16s %-14s seed %-4llu rmse %.4f  safe %.3f",
                  records[i]["method"].get<std::string>().c_str(),
                  records[i]["problem"].get<std::string>().c_str(),
                  static_cast<unsigned long long>(grid[i].seed),
                  p["rmse"].get<double>(), p["safe_fraction"].get<double>());
    out << line << "\n";
  }
  out << "wrote " << records.size() << " run records to "
      << (outdir / "deploy_records.jsonl").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// bench

struct Aggregate {
  std::vector<double> rmse;
  std::vector<double> safe;
  std::vector<double> mean_seconds;
  std::vector<std::string> hashes;
};

int cmd_bench(const Args& a, const config::Config& cfg, std::ostream& out) {
  const fs::path outdir(a.out_dir);
  Resolver r{&cfg, {}};
  const std::string input =
      r.gets("bench.input", (outdir / "deploy_records.jsonl").string());
  reject_unread(cfg, {"bench."});

  std::ifstream is(input);
  if (!is) {
    throw std::runtime_error("bench: cannot read '" + input + "'");
  }
  std::map<std::pair<std::string, std::string>, Aggregate> groups;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error("bench: " + input + " line " +
                               std::to_string(lineno) + ": " + e.what());
    }
    if (rec.value("kind", "") != "run") continue;
    Aggregate& g = groups[{rec.at("problem").get<std::string>(),
                           rec.at("method").get<std::string>()}];
    g.rmse.push_back(rec.at("payload").at("rmse").get<double>());
    g.safe.push_back(rec.at("payload").at("safe_fraction").get<double>());
    g.mean_seconds.push_back(
        rec.at("timing").at("mean_query_seconds").get<double>());
    g.hashes.push_back(rec.at("config_hash").get<std::string>());
  }
  if (groups.empty()) {
    throw std::runtime_error("bench: no run records in '" + input + "'");
  }

  auto mean = [](const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) acc += x;
    return acc / static_cast<double>(v.size());
  };
  // Standard error of the mean with the n-1 variance divisor.
  auto stderr_mean = [&](const std::vector<double>& v) {
    const double m = mean(v);
    double acc = 0.0;
    for (double x : v) acc += (x - m) * (x - m);
    return std::sqrt(acc / static_cast<double>(v.size() - 1) /
                     static_cast<double>(v.size()));
  };

  // Per-problem mean query time of the amortized method, the denominator of
  // the timing ratio column.
  std::map<std::string, double> policy_seconds;
  for (const auto& [key, g] : groups) {
    if (key.second == "policy") policy_seconds[key.first] = mean(g.mean_seconds);
  }

  std::ofstream rec_os = open_truncated(outdir / "bench_records.jsonl", "bench");
  std::ostringstream table;
  char buf[200];
  std::snprintf(buf, sizeof(buf), "%-16s %-16s %4s  %-22s %-10s %-13s %s",
                "problem", "method", "runs", "rmse (mean +- se)", "safe frac",
                "s/query", "time vs policy");
  table << buf << "\n";
  table << std::string(96, '-') << "\n";

  for (const auto& [key, g] : groups) {
    const auto& [problem, method] = key;
    const int n = static_cast<int>(g.rmse.size());
    const double rmse_mean = mean(g.rmse);
    const bool has_se = n > 1;
    const double rmse_se = has_se ? stderr_mean(g.rmse) : 0.0;
    const double safe_mean = mean(g.safe);
    const double sec_mean = mean(g.mean_seconds);
    const auto policy_it = policy_seconds.find(problem);
    const bool has_ratio = policy_it != policy_seconds.end() &&
                           policy_it->second > 0.0;
    const double ratio = has_ratio ? sec_mean / policy_it->second : 0.0;

    std::vector<std::string> sources = g.hashes;
    std::sort(sources.begin(), sources.end());
    sources.erase(std::unique(sources.begin(), sources.end()), sources.end());

    json rec;
    rec["kind"] = "aggregate";
    rec["config_hash"] = r.hash_hex();
    rec["source_hashes"] = sources;
    rec["problem"] = problem;
    rec["method"] = method;
    rec["runs"] = n;
    rec["rmse_mean"] = rmse_mean;
    rec["rmse_se"] = has_se ? json(rmse_se) : json();
    rec["safe_fraction_mean"] = safe_mean;
    rec["mean_query_seconds"] = sec_mean;
    rec["time_ratio_vs_policy"] = has_ratio ? json(ratio) : json();
    rec_os << rec.dump() << "\n";

    char se_col[24];
    if (has_se) {
      std::snprintf(se_col, sizeof(se_col), "%.4f +- %.4f", rmse_mean,
                    rmse_se);
    } else {
      std::snprintf(se_col, sizeof(se_col), "%.4f +- -", rmse_mean);
    }
    char ratio_col[16];
    if (has_ratio) {
      std::snprintf(ratio_col, sizeof(ratio_col), "%.1fx", ratio);
    } else {
      std::snprintf(ratio_col, sizeof(ratio_col), "-");
    }
    std::snprintf(buf, sizeof(buf), "%-16s %-16s %4d  %-22s %-10.3f %-13.3g %s",
                  problem.c_str(), method.c_str(), n, se_col, safe_mean,
                  sec_mean, ratio_col);
    table << buf << "\n";
  }

  std::ofstream table_os = open_truncated(outdir / "bench_table.txt", "bench");
  table_os << table.str();
  out << table.str();
  out << "wrote " << groups.size() << " aggregates to "
      << (outdir / "bench_records.jsonl").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// sample-tasks

int cmd_sample_tasks(const Args& a, const config::Config& cfg,
                     std::ostream& out) {
  Resolver r{&cfg, {}};
  TaskSamplerOptions opt;
  opt.dim = static_cast<int>(r.geti("tasks.dim", 1));
  opt.constrained = r.getb("tasks.constrained", false);
  opt.n_init = static_cast<int>(r.geti("tasks.n_init", 1));
  opt.n_features = static_cast<int>(r.geti("tasks.features", 100));
  const int count = static_cast<int>(r.geti("tasks.count", 16));
  if (count < 1) {
    throw std::invalid_argument("sample-tasks: tasks.count must be >= 1");
  }
  reject_unread(cfg, {"tasks."});
  const std::vector<std::uint64_t> seeds = parse_seeds(a.seed_csv);

  const fs::path outdir(a.out_dir);
  fs::create_directories(outdir);
  std::ofstream os = open_truncated(outdir / "tasks.jsonl", "sample-tasks");
  int fallbacks = 0;
  for (const std::uint64_t seed : seeds) {
    Rng rng(seed);
    for (int i = 0; i < count; ++i) {
      const Task task = sample_task(rng, opt);
      json payload;
      payload["f_variance"] = task.hp.f_kernel.variance;
      payload["f_lengthscales"] = to_json(task.hp.f_kernel.lengthscales);
      payload["f_noise_var"] = task.hp.f_noise_var;
      if (task.hp.q_kernel) {
        payload["q_variance"] = task.hp.q_kernel->variance;
        payload["q_lengthscales"] = to_json(task.hp.q_kernel->lengthscales);
        payload["q_noise_var"] = task.hp.q_noise_var;
        payload["mean_scale"] = task.hp.q_mean->c;
        payload["mean_widths"] = to_json(task.hp.q_mean->w);
      }
      json init;
      init["inputs"] = to_json(task.init.inputs);
      init["outputs"] = to_json(task.init.outputs);
      if (task.init.safety) init["safety"] = to_json(*task.init.safety);
      payload["init"] = init;
      payload["init_fallback"] = task.init_fallback;
      if (task.init_fallback) ++fallbacks;

      json rec;
      rec["kind"] = "task";
      rec["config_hash"] = r.hash_hex();
      rec["seed"] = seed;
      rec["index"] = i;
      rec["payload"] = payload;
      os << rec.dump() << "\n";
    }
  }
  out << "sampled " << count << " task(s) per seed across " << seeds.size()
      << " seed(s); " << fallbacks << " initial-draw fallback(s)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

int cmd_gradcheck(const Args& a, const config::Config& cfg,
                  std::ostream& out) {
  const std::vector<std::uint64_t> seeds = parse_seeds(a.seed_csv);
  if (seeds.size() != 1) {
    throw std::invalid_argument("gradcheck: exactly one seed expected");
  }
  Resolver r{&cfg, {}};
  const double tol = r.getd("gradcheck.tol", 1e-3);
  const bool sabotage = r.getb("gradcheck.sabotage", false);
  reject_unread(cfg, {"gradcheck."});

  const objectives::GradCheckReport report =
      objectives::gradcheck_all(seeds[0], tol, sabotage);
  for (const objectives::GradCheckEntry& e : report.entries) {
    char line[96];
    std::snprintf(line, sizeof(line), "%-24s max relative error %.3e  %s",
                  e.objective.c_str(), e.max_rel_err,
                  e.max_rel_err <= tol ? "ok" : "FAIL");
    out << line << "\n";
  }

  const fs::path outdir(a.out_dir);
  fs::create_directories(outdir);
  json rec;
  rec["kind"] = "gradcheck";
  rec["config_hash"] = r.hash_hex();
  rec["seed"] = seeds[0];
  rec["pass"] = report.pass;
  rec["max_rel_err"] = report.max_rel_err;
  json entries = json::array();
  for (const objectives::GradCheckEntry& e : report.entries) {
    json item;
    item["objective"] = e.objective;
    item["max_rel_err"] = e.max_rel_err;
    entries.push_back(item);
  }
  rec["entries"] = entries;
  std::ofstream os =
      open_truncated(outdir / "gradcheck_records.jsonl", "gradcheck");
  os << rec.dump() << "\n";

  if (report.pass) {
    out << "gradient check passed (max relative error "
        << format_g17(report.max_rel_err) << ")\n";
    return 0;
  }
  out << "gradient check FAILED (max relative error "
      << format_g17(report.max_rel_err) << ")\n";
  return 2;
}

// ---------------------------------------------------------------------------
// report

int cmd_report(const Args& a, const config::Config& cfg, std::ostream& out) {
  (void)cfg;
  const fs::path outdir(a.out_dir);
  bool any = false;

  const fs::path train_path = outdir / "train_summary.jsonl";
  if (fs::exists(train_path)) {
    std::ifstream is(train_path);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const json rec = json::parse(line);
      out << "training: objective " << rec.value("objective", "?")
          << ", seed " << rec.value("seed", 0ULL) << ", selected epoch "
          << rec.value("selected_epoch", -1) << ", checkpoint "
          << rec.value("checkpoint", "?") << "\n";
      any = true;
    }
  }

  const fs::path deploy_path = outdir / "deploy_records.jsonl";
  if (fs::exists(deploy_path)) {
    std::ifstream is(deploy_path);
    std::map<std::pair<std::string, std::string>, int> counts;
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const json rec = json::parse(line);
      if (rec.value("kind", "") != "run") continue;
      ++counts[{rec.at("problem").get<std::string>(),
                rec.at("method").get<std::string>()}];
    }
    for (const auto& [key, n] : counts) {
      out << "runs: " << key.second << " on " << key.first << ": " << n
          << " seed(s)\n";
      any = true;
    }
  }

  const fs::path table_path = outdir / "bench_table.txt";
  if (fs::exists(table_path)) {
    std::ifstream is(table_path);
    out << is.rdbuf();
    any = true;
  }

  if (!any) {
    throw std::invalid_argument("report: no artifacts under '" +
                                outdir.string() + "'");
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
  Args a;
  CLI::App app{"amortized safe active-learning harness"};
  app.require_subcommand(1);

  CLI::App* sub_train =
      app.add_subcommand("train", "train a query policy");
  CLI::App* sub_deploy = app.add_subcommand(
      "deploy", "run query methods on benchmark problems");
  CLI::App* sub_bench = app.add_subcommand(
      "bench", "aggregate deployment records into a comparison table");
  CLI::App* sub_tasks = app.add_subcommand(
      "sample-tasks", "draw simulated tasks and record their parameters");
  CLI::App* sub_grad = app.add_subcommand(
      "gradcheck", "finite-difference check of every training objective");
  CLI::App* sub_report = app.add_subcommand(
      "report", "summarize the artifacts in an output directory");

  for (CLI::App* sub :
       {sub_train, sub_deploy, sub_bench, sub_tasks, sub_grad, sub_report}) {
    sub->add_option("--config", a.config_path,
                    "configuration file with flat dotted keys");
    sub->add_option("--seed", a.seed_csv, "seed or comma-separated seeds");
    sub->add_option("--out", a.out_dir, "output directory (default .)");
    sub->add_option("--method", a.method_csv, "comma-separated methods");
    sub->add_option("--problem", a.problem_csv, "comma-separated problems");
    sub->add_option("--gamma", a.gamma, "safety tolerance override");
    sub->add_option("--budget", a.budget, "query budget override");
    sub->add_option("--checkpoint", a.checkpoint, "policy checkpoint path");
    sub->add_flag("--force", a.force, "overwrite existing outputs");
  }

  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("asal");
  for (const std::string& s : args) argv.push_back(s.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  const std::vector<CLI::App*> parsed = app.get_subcommands();
  CLI::App* sub = parsed.front();
  a.gamma_set = sub->count("--gamma") > 0;
  a.budget_set = sub->count("--budget") > 0;

  config::Config cfg;
  if (!a.config_path.empty()) {
    try {
      cfg = config::load_config(a.config_path);
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return 1;
    }
  }

  try {
    const std::string name = sub->get_name();
    if (name == "train") return cmd_train(a, cfg, out);
    if (name == "deploy") return cmd_deploy(a, cfg, out);
    if (name == "bench") return cmd_bench(a, cfg, out);
    if (name == "sample-tasks") return cmd_sample_tasks(a, cfg, out);
    if (name == "gradcheck") return cmd_gradcheck(a, cfg, out);
    return cmd_report(a, cfg, out);
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace asal::cli
