#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "doctest.h"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct CliRun {
  int code = 0;
  std::string out;
  std::string err;
};

CliRun run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  CliRun r;
  r.code = asal::cli::run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

// Fresh scratch directory per test case.
fs::path scratch(const char* name) {
  const fs::path dir = fs::path("/tmp/asal_cli_tests") / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  os << text;
}

std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream buf;
  buf << is.rdbuf();
  return buf.str();
}

std::vector<json> read_records(const fs::path& path) {
  std::ifstream is(path);
  std::vector<json> out;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty()) out.push_back(json::parse(line));
  }
  return out;
}

// Small enough to train in milliseconds.
std::string tiny_train_cfg(int steps, int epoch_length) {
  std::ostringstream os;
  os << "train.objective = entropy\n"
     << "train.horizon = 3\n"
     << "train.steps = " << steps << "\n"
     << "train.epoch_length = " << epoch_length << "\n"
     << "train.hyper_sets = 1\n"
     << "train.pairs = 1\n"
     << "train.noise_draws = 1\n"
     << "train.features = 20\n"
     << "train.heldout_tasks = 1\n"
     << "train.heldout_points = 8\n"
     << "policy.embed = 8\n"
     << "policy.hidden = 8\n"
     << "policy.head_dim = 4\n"
     << "policy.mode = deep_set\n";
  return os.str();
}

// Cheap deployment settings shared by the deploy tests.
std::string tiny_deploy_cfg() {
  return "deploy.budget = 3\n"
         "deploy.discretization = 40\n"
         "deploy.fit_restarts = 2\n"
         "deploy.fit_iterations = 60\n";
}

std::string synthetic_pool_csv() {
  std::ostringstream os;
  os << "x1,x2,y,z\n";
  for (int i = 0; i < 40; ++i) {
    const double u = (i + 0.5) / 40.0;
    const double v = 1.0 - u;
    const double y = std::sin(8.0 * u) + 0.1 * v;
    const double z = 0.45 - std::abs(u - 0.5);  // safe near the center
    os << u << "," << v << "," << y << "," << z << "\n";
  }
  return os.str();
}

double loss_at_step(const fs::path& log_path, int step) {
  for (const json& rec : read_records(log_path)) {
    if (rec.value("kind", "") == "step" && rec.value("step", -1) == step) {
      return rec.at("loss").get<double>();
    }
  }
  FAIL("step record not found in " << log_path.string());
  return 0.0;
}

}  // namespace

TEST_CASE("invalid invocations exit with the validation code") {
  const fs::path dir = scratch("validation");
  CHECK(run({}).code == 1);                       // missing subcommand
  CHECK(run({"unknown-cmd"}).code == 1);          // unknown subcommand
  CHECK(run({"deploy", "--bogus-flag"}).code == 1);
  CHECK(run({"deploy", "--problem", "sin", "--out", dir.string()}).code == 1);
  CHECK(run({"deploy", "--method", "gp_al", "--out", dir.string()}).code == 1);
  CHECK(run({"deploy", "--method", "not_a_method", "--problem", "sin",
             "--out", dir.string()}).code == 1);
  CHECK(run({"deploy", "--method", "gp_al", "--problem", "not_a_problem",
             "--out", dir.string()}).code == 1);
  CHECK(run({"deploy", "--method", "policy", "--problem", "sin", "--out",
             dir.string()}).code == 1);  // no --checkpoint
  CHECK(run({"deploy", "--method", "gp_al", "--problem", "sin", "--seed",
             "zero", "--out", dir.string()}).code == 1);
  CHECK(run({"train", "--config", (dir / "missing.cfg").string()}).code == 1);

  // Misspelled keys in a consulted namespace fail loudly.
  write_file(dir / "typo.cfg", "train.stepz = 4\n");
  const CliRun r = run({"train", "--config", (dir / "typo.cfg").string(),
                        "--out", (dir / "t").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("train.stepz") != std::string::npos);

  // Runtime failures exit with 2.
  CHECK(run({"bench", "--out", (dir / "empty").string()}).code == 2);
}

TEST_CASE("help exits cleanly") {
  const CliRun r = run({"--help"});
  CHECK(r.code == 0);
  CHECK(r.out.find("train") != std::string::npos);
  CHECK(r.out.find("deploy") != std::string::npos);
}

TEST_CASE("train writes artifacts and refuses checkpoint overwrite") {
  const fs::path dir = scratch("train_basic");
  write_file(dir / "train.cfg", tiny_train_cfg(4, 2));
  const std::string cfg = (dir / "train.cfg").string();
  const std::string out = (dir / "run").string();

  const CliRun first = run({"train", "--config", cfg, "--seed", "5",
                            "--out", out});
  CHECK(first.code == 0);
  CHECK(fs::exists(fs::path(out) / "policy.ckpt"));
  CHECK(fs::exists(fs::path(out) / "train_log.jsonl"));
  CHECK(fs::exists(fs::path(out) / "train_state.bin"));
  const std::vector<json> summary =
      read_records(fs::path(out) / "train_summary.jsonl");
  REQUIRE(summary.size() == 1);
  CHECK(summary[0].at("kind") == "train_summary");
  CHECK(summary[0].at("seed") == 5);
  CHECK(summary[0].at("config_hash").get<std::string>().substr(0, 2) == "0x");
  CHECK(summary[0].at("parameter_count").get<long long>() > 0);

  // Existing checkpoint: refused without --force, replaced with it.
  const CliRun second = run({"train", "--config", cfg, "--seed", "5",
                             "--out", out});
  CHECK(second.code == 1);
  CHECK(second.err.find("--force") != std::string::npos);
  const CliRun forced = run({"train", "--config", cfg, "--seed", "5",
                             "--out", out, "--force"});
  CHECK(forced.code == 0);

  // The input configuration is never touched.
  CHECK(read_file(dir / "train.cfg") == tiny_train_cfg(4, 2));
}

TEST_CASE("a resumed training run matches the uninterrupted losses") {
  const fs::path dir = scratch("train_resume");
  write_file(dir / "full.cfg", tiny_train_cfg(16, 4));
  write_file(dir / "half.cfg", tiny_train_cfg(8, 4));

  const std::string full_out = (dir / "full").string();
  REQUIRE(run({"train", "--config", (dir / "full.cfg").string(), "--seed",
               "3", "--out", full_out}).code == 0);

  const std::string half_out = (dir / "half").string();
  REQUIRE(run({"train", "--config", (dir / "half.cfg").string(), "--seed",
               "3", "--out", half_out}).code == 0);

  // Resume the half-trained state under the full schedule.
  write_file(dir / "resume.cfg",
             tiny_train_cfg(16, 4) + "train.resume = " + half_out +
                 "/train_state.bin\n");
  const std::string resumed_out = (dir / "resumed").string();
  REQUIRE(run({"train", "--config", (dir / "resume.cfg").string(), "--seed",
               "3", "--out", resumed_out}).code == 0);

  const fs::path full_log = fs::path(full_out) / "train_log.jsonl";
  const fs::path resumed_log = fs::path(resumed_out) / "train_log.jsonl";
  for (int step : {8, 11, 15}) {
    CHECK(std::abs(loss_at_step(resumed_log, step) -
                   loss_at_step(full_log, step)) <= 1e-10);
  }
  // The resumed log starts where the state left off.
  const std::vector<json> resumed_records = read_records(resumed_log);
  REQUIRE(!resumed_records.empty());
  CHECK(resumed_records.front().value("step", -1) == 8);

  // Identical selected checkpoints, bit for bit.
  CHECK(read_file(fs::path(full_out) / "policy.ckpt") ==
        read_file(fs::path(resumed_out) / "policy.ckpt"));
}

TEST_CASE("identical seeds produce identical deploy payloads") {
  const fs::path dir = scratch("deploy_identical");
  write_file(dir / "deploy.cfg", tiny_deploy_cfg());
  const std::string cfg = (dir / "deploy.cfg").string();

  const std::vector<std::string> base = {"deploy",    "--method",
                                         "gp_al",     "--problem",
                                         "sin",       "--seed",
                                         "7",         "--config",
                                         cfg};
  std::vector<std::string> first = base;
  first.insert(first.end(), {"--out", (dir / "a").string()});
  std::vector<std::string> second = base;
  second.insert(second.end(), {"--out", (dir / "b").string()});
  REQUIRE(run(first).code == 0);
  REQUIRE(run(second).code == 0);

  const std::vector<json> ra =
      read_records(dir / "a" / "deploy_records.jsonl");
  const std::vector<json> rb =
      read_records(dir / "b" / "deploy_records.jsonl");
  REQUIRE(ra.size() == 1);
  REQUIRE(rb.size() == 1);
  CHECK(ra[0].at("config_hash") == rb[0].at("config_hash"));
  CHECK(ra[0].at("seed") == rb[0].at("seed"));
  // Equal hash and seed imply an equal payload; timing may differ.
  CHECK(ra[0].at("payload") == rb[0].at("payload"));
  CHECK(ra[0].at("payload").dump() == rb[0].at("payload").dump());

  // The configuration file is input-only.
  CHECK(read_file(dir / "deploy.cfg") == tiny_deploy_cfg());
}

TEST_CASE("flag overrides and file keys hash identically") {
  const fs::path dir = scratch("deploy_hash");
  write_file(dir / "flags.cfg", tiny_deploy_cfg());
  write_file(dir / "file.cfg", tiny_deploy_cfg() + "deploy.gamma = 0.25\n");

  // Same resolved configuration, one via --gamma, one via the file.
  REQUIRE(run({"deploy", "--method", "safe_gp_al", "--problem", "simionescu",
               "--seed", "0", "--config", (dir / "flags.cfg").string(),
               "--gamma", "0.25", "--out", (dir / "a").string()})
              .code == 0);
  REQUIRE(run({"deploy", "--method", "safe_gp_al", "--problem", "simionescu",
               "--seed", "0", "--config", (dir / "file.cfg").string(),
               "--out", (dir / "b").string()})
              .code == 0);
  const std::vector<json> ra =
      read_records(dir / "a" / "deploy_records.jsonl");
  const std::vector<json> rb =
      read_records(dir / "b" / "deploy_records.jsonl");
  REQUIRE(ra.size() == 1);
  REQUIRE(rb.size() == 1);
  CHECK(ra[0].at("config_hash") == rb[0].at("config_hash"));
  CHECK(ra[0].at("payload") == rb[0].at("payload"));

  // A different tolerance changes the hash.
  REQUIRE(run({"deploy", "--method", "safe_gp_al", "--problem", "simionescu",
               "--seed", "0", "--config", (dir / "flags.cfg").string(),
               "--gamma", "0.5", "--out", (dir / "c").string()})
              .code == 0);
  const std::vector<json> rc =
      read_records(dir / "c" / "deploy_records.jsonl");
  CHECK(rc[0].at("config_hash") != ra[0].at("config_hash"));
}

TEST_CASE("worker parallelism preserves record order and payloads") {
  const fs::path dir = scratch("deploy_workers");
  write_file(dir / "deploy.cfg", tiny_deploy_cfg());
  const std::string cfg = (dir / "deploy.cfg").string();

  REQUIRE(run({"deploy", "--method", "gp_al,random", "--problem", "sin",
               "--seed", "0,1", "--config", cfg, "--out",
               (dir / "seq").string()})
              .code == 0);

  ::setenv("ASAL_WORKERS", "2", 1);
  const CliRun parallel = run({"deploy", "--method", "gp_al,random",
                               "--problem", "sin", "--seed", "0,1",
                               "--config", cfg, "--out",
                               (dir / "par").string()});
  ::unsetenv("ASAL_WORKERS");
  REQUIRE(parallel.code == 0);

  const std::vector<json> rs =
      read_records(dir / "seq" / "deploy_records.jsonl");
  const std::vector<json> rp =
      read_records(dir / "par" / "deploy_records.jsonl");
  REQUIRE(rs.size() == 4);
  REQUIRE(rp.size() == 4);
  for (std::size_t i = 0; i < rs.size(); ++i) {
    CHECK(rs[i].at("method") == rp[i].at("method"));
    CHECK(rs[i].at("seed") == rp[i].at("seed"));
    CHECK(rs[i].at("payload") == rp[i].at("payload"));
  }

  ::setenv("ASAL_WORKERS", "zero", 1);
  const CliRun bad = run({"deploy", "--method", "gp_al", "--problem", "sin",
                          "--config", cfg, "--out", (dir / "bad").string()});
  ::unsetenv("ASAL_WORKERS");
  CHECK(bad.code == 1);
}

TEST_CASE("pool problems deploy from CSV without mutating it") {
  const fs::path dir = scratch("deploy_pool");
  const std::string csv = synthetic_pool_csv();
  write_file(dir / "pool.csv", csv);
  write_file(dir / "pool.cfg",
             tiny_deploy_cfg() + "pool.path = " + (dir / "pool.csv").string() +
                 "\npool.dimension = 2\npool.safety = true\n"
                 "pool.test_count = 5\npool.n_init = 4\n");

  const CliRun r = run({"deploy", "--method", "safe_gp_al", "--problem",
                        "pool", "--seed", "0", "--config",
                        (dir / "pool.cfg").string(), "--out",
                        (dir / "out").string()});
  REQUIRE(r.code == 0);
  const std::vector<json> recs =
      read_records(dir / "out" / "deploy_records.jsonl");
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].at("problem") == "pool:pool");
  const json& payload = recs[0].at("payload");
  REQUIRE(payload.contains("pool_indices"));
  CHECK(payload.at("pool_indices").size() == 3);
  CHECK(payload.at("queries").size() == 3);
  CHECK(read_file(dir / "pool.csv") == csv);
}

TEST_CASE("bench aggregates match a hand recomputation") {
  const fs::path dir = scratch("bench_agg");
  // Crafted records with easy arithmetic, including one single-seed group.
  std::ostringstream rows;
  auto row = [&](const char* method, const char* problem, int seed,
                 double rmse, double safe, double secs) {
    json rec;
    rec["kind"] = "run";
    rec["config_hash"] = "0x00000000000000aa";
    rec["method"] = method;
    rec["problem"] = problem;
    rec["seed"] = seed;
    rec["payload"] = {{"rmse", rmse}, {"safe_fraction", safe}};
    rec["timing"] = {{"mean_query_seconds", secs}};
    rows << rec.dump() << "\n";
  };
  row("policy", "sin", 0, 0.5, 1.0, 0.002);
  row("policy", "sin", 1, 0.7, 1.0, 0.004);
  row("gp_al", "sin", 0, 1.0, 1.0, 0.03);
  row("gp_al", "sin", 1, 2.0, 0.5, 0.05);
  row("gp_al", "branin", 0, 3.0, 1.0, 0.01);
  write_file(dir / "records.jsonl", rows.str());
  write_file(dir / "bench.cfg",
             "bench.input = " + (dir / "records.jsonl").string() + "\n");

  const CliRun r = run({"bench", "--config", (dir / "bench.cfg").string(),
                        "--out", dir.string()});
  REQUIRE(r.code == 0);
  const std::vector<json> aggs = read_records(dir / "bench_records.jsonl");
  REQUIRE(aggs.size() == 3);

  auto find = [&](const std::string& problem,
                  const std::string& method) -> const json& {
    for (const json& a : aggs) {
      if (a.at("problem") == problem && a.at("method") == method) return a;
    }
    FAIL("aggregate not found");
    return aggs[0];
  };

  const json& pol = find("sin", "policy");
  CHECK(pol.at("runs") == 2);
  CHECK(pol.at("rmse_mean").get<double>() == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(pol.at("rmse_se").get<double>() == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(pol.at("time_ratio_vs_policy").get<double>() ==
        doctest::Approx(1.0).epsilon(1e-12));

  const json& gp = find("sin", "gp_al");
  CHECK(gp.at("rmse_mean").get<double>() == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(gp.at("rmse_se").get<double>() == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(gp.at("safe_fraction_mean").get<double>() ==
        doctest::Approx(0.75).epsilon(1e-12));
  // Timing ratio is the quotient of the recorded means: 0.04 / 0.003.
  CHECK(gp.at("time_ratio_vs_policy").get<double>() ==
        doctest::Approx(0.04 / 0.003).epsilon(1e-12));

  // Single-seed group: standard error reported as absent.
  const json& lone = find("branin", "gp_al");
  CHECK(lone.at("runs") == 1);
  CHECK(lone.at("rmse_se").is_null());
  CHECK(lone.at("time_ratio_vs_policy").is_null());  // no policy runs there
  const std::string table = read_file(dir / "bench_table.txt");
  CHECK(table.find("+- -") != std::string::npos);
  CHECK(r.out.find("branin") != std::string::npos);
}

TEST_CASE("sample-tasks emits deterministic records") {
  const fs::path dir = scratch("tasks");
  write_file(dir / "tasks.cfg",
             "tasks.count = 3\ntasks.constrained = true\ntasks.features = "
             "20\ntasks.n_init = 2\n");
  const std::string cfg = (dir / "tasks.cfg").string();
  REQUIRE(run({"sample-tasks", "--config", cfg, "--seed", "4", "--out",
               (dir / "a").string()}).code == 0);
  REQUIRE(run({"sample-tasks", "--config", cfg, "--seed", "4", "--out",
               (dir / "b").string()}).code == 0);
  const std::string a = read_file(dir / "a" / "tasks.jsonl");
  CHECK(a == read_file(dir / "b" / "tasks.jsonl"));

  const std::vector<json> recs = read_records(dir / "a" / "tasks.jsonl");
  REQUIRE(recs.size() == 3);
  for (const json& rec : recs) {
    CHECK(rec.at("kind") == "task");
    CHECK(rec.at("payload").contains("q_variance"));
    CHECK(rec.at("payload").at("init").at("inputs").size() == 2);
  }
}

TEST_CASE("gradcheck passes clean and catches sabotage") {
  const fs::path dir = scratch("gradcheck");
  const CliRun ok = run({"gradcheck", "--seed", "1", "--out", dir.string()});
  CHECK(ok.code == 0);
  CHECK(ok.out.find("dad") != std::string::npos);
  CHECK(ok.out.find("FAIL") == std::string::npos);
  const std::vector<json> recs =
      read_records(dir / "gradcheck_records.jsonl");
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].at("pass") == true);
  CHECK(recs[0].at("entries").size() == 7);

  write_file(dir / "sab.cfg", "gradcheck.sabotage = true\n");
  const CliRun bad = run({"gradcheck", "--seed", "1", "--config",
                          (dir / "sab.cfg").string(), "--out",
                          (dir / "s").string()});
  CHECK(bad.code == 2);
  CHECK(bad.out.find("FAIL") != std::string::npos);
}

TEST_CASE("report summarizes artifacts and rejects empty directories") {
  const fs::path dir = scratch("report");
  write_file(dir / "deploy.cfg", tiny_deploy_cfg());
  REQUIRE(run({"deploy", "--method", "random", "--problem", "sin", "--seed",
               "0,1", "--config", (dir / "deploy.cfg").string(), "--out",
               dir.string()}).code == 0);
  REQUIRE(run({"bench", "--out", dir.string()}).code == 0);

  const CliRun r = run({"report", "--out", dir.string()});
  CHECK(r.code == 0);
  CHECK(r.out.find("random") != std::string::npos);
  CHECK(r.out.find("sin") != std::string::npos);

  CHECK(run({"report", "--out", (dir / "nothing").string()}).code == 1);
}
