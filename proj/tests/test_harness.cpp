// Configuration, CSV output, statistics and the command line tool.

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mbproj/error.hpp"
#include "mbproj/harness.hpp"

using namespace mbproj;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("mbproj_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string csv_body(const fs::path& path) {
  std::istringstream in(slurp(path));
  std::string body;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line[0] != '#') body += line + "\n";
  }
  return body;
}

int invoke(std::vector<std::string> args, std::string* out_text = nullptr) {
  args.insert(args.begin(), "mbproj");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str() + err.str();
  return code;
}

RunRecord record(std::uint64_t seed, std::size_t k, double f_gap, double dist) {
  RunRecord r;
  r.seed = seed;
  r.k = k;
  r.f_gap = f_gap;
  r.max_violation = dist * 0.5;
  r.dist_X = dist;
  r.beta_k = 1.0;
  return r;
}

}  // namespace

TEST_CASE("config files parse and echo round trips") {
  std::istringstream in(
      "# experiment\n"
      "[problem]\n"
      "problem = orthonormal\n"
      "n = 12 ; trailing comment\n"
      "m = 6\n"
      "[solver]\n"
      "variant = sequential\n"
      "N = 3\n"
      "beta = 1.5\n"
      "sampler = without_replacement\n"
      "iterations = 500\n"
      "seeds = 3..6\n"
      "assertions = lemma-checks\n");
  const auto config = parse_config(in, "exp.ini");
  CHECK(config.problem.family == "orthonormal");
  CHECK(config.problem.n == 12);
  CHECK(config.problem.m == 6);
  CHECK(config.variant == Variant::sequential);
  CHECK(config.N == 3);
  CHECK(config.sampler == Sampler::Kind::without_replacement);
  CHECK(config.seeds == std::vector<std::uint64_t>{3, 4, 5, 6});
  CHECK(config.assertions == AssertionMode::lemma_checks);

  std::string echoed;
  for (const auto& line : config.echo()) echoed += line + "\n";
  std::istringstream again(echoed);
  const auto back = parse_config(again, "echo");
  CHECK(back.echo() == config.echo());
}

TEST_CASE("config errors carry the line number") {
  auto message = [](const std::string& text) {
    std::istringstream in(text);
    try {
      parse_config(in, "bad.ini");
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message("n = 10\nfrobnicate = 3\n").find("bad.ini:2") != std::string::npos);
  CHECK(message("iterations = -4\n").find("bad.ini:1") != std::string::npos);
  CHECK(message("\n\nvariant = diagonal\n").find("bad.ini:3") != std::string::npos);
  CHECK(message("no equals sign\n").find("bad.ini:1") != std::string::npos);

  RunConfig config;
  config.iterations = 0;
  CHECK_THROWS_AS(config.validate(), ConfigError);
  config = RunConfig{};
  config.seeds.clear();
  CHECK_THROWS_AS(config.validate(), ConfigError);
}

TEST_CASE("seed lists") {
  CHECK(parse_seed_list("7") == std::vector<std::uint64_t>{7});
  CHECK(parse_seed_list("1..3") == std::vector<std::uint64_t>{1, 2, 3});
  CHECK(parse_seed_list("5, 2,9") == std::vector<std::uint64_t>{5, 2, 9});
  CHECK_THROWS_AS(parse_seed_list("4..2"), ConfigError);
  CHECK_THROWS_AS(parse_seed_list("x"), ConfigError);
  CHECK_THROWS_AS(parse_seed_list(""), ConfigError);
}

TEST_CASE("run CSV round trip") {
  std::vector<RunRecord> records{record(3, 1, 0.5, 0.25), record(3, 2, -1e-3, 0.0)};
  records[1].LN_k = 0.625;
  records[1].f_gap.reset();
  std::stringstream ss;
  write_run_csv(ss, {"note"}, records);
  CHECK(ss.str().rfind("# note\n", 0) == 0);
  CHECK(ss.str().find(kCsvHeader) != std::string::npos);
  const auto back = read_run_csv(ss);
  REQUIRE(back.size() == 2);
  CHECK(back[0].f_gap == 0.5);
  CHECK_FALSE(back[0].LN_k.has_value());
  CHECK_FALSE(back[1].f_gap.has_value());
  CHECK(back[1].LN_k == 0.625);
  CHECK(back[1].dist_X == 0.0);
}

TEST_CASE("aggregate rows are seed means") {
  const std::vector<std::vector<RunRecord>> runs{
      {record(1, 1, 1.0, 2.0), record(1, 2, -0.5, 1.0)},
      {record(2, 1, 3.0, 4.0), record(2, 2, 0.5, 3.0)},
  };
  const auto rows = aggregate(runs);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].n_seeds == 2);
  CHECK(*rows[0].f_gap == doctest::Approx(2.0));
  CHECK(*rows[1].f_gap == doctest::Approx(0.0));
  CHECK(*rows[1].abs_f_gap == doctest::Approx(0.5));
  CHECK(*rows[1].dist_X == doctest::Approx(2.0));
  CHECK(*rows[0].max_violation == doctest::Approx(1.5));
}

TEST_CASE("log-log slope fits") {
  std::vector<std::size_t> ks;
  std::vector<double> flat, power, scaled;
  for (std::size_t k = 1; k <= 100000; k *= 2) {
    ks.push_back(k);
    flat.push_back(3.0);
    power.push_back(5.0 * std::pow(static_cast<double>(k), -1.3));
    scaled.push_back(1e3 * power.back());
  }
  CHECK(std::abs(fit_loglog_slope(ks, flat, 1, 100000).slope) <= 1e-12);
  const auto p = fit_loglog_slope(ks, power, 100, 100000);
  CHECK(p.slope == doctest::Approx(-1.3).epsilon(1e-10));
  CHECK(p.intercept == doctest::Approx(std::log(5.0)).epsilon(1e-10));
  CHECK(fit_loglog_slope(ks, scaled, 100, 100000).slope == doctest::Approx(p.slope).epsilon(1e-12));
  CHECK(p.k_lo == 128);

  auto truncated = power;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] >= 4096) truncated[i] = 0.0;
  }
  const auto t = fit_loglog_slope(ks, truncated, 1, 100000);
  CHECK(t.truncated);
  CHECK(t.k_hi == 2048);
  CHECK(t.slope == doctest::Approx(-1.3).epsilon(1e-10));
  CHECK_THROWS_AS(fit_loglog_slope(ks, truncated, 4096, 100000), ConfigError);
}

TEST_CASE("bootstrap intervals are deterministic and cover the mean") {
  std::vector<double> samples;
  Rng rng(4, 0);
  for (int i = 0; i < 30; ++i) samples.push_back(rng.normal());
  const auto a = bootstrap_mean_ci(samples, 9), b = bootstrap_mean_ci(samples, 9);
  CHECK(a.lo == b.lo);
  CHECK(a.hi == b.hi);
  double mean = 0.0;
  for (double s : samples) mean += s / 30.0;
  CHECK(a.lo <= mean);
  CHECK(mean <= a.hi);
  CHECK(a.half_width() > 0.0);
  const auto constant = bootstrap_mean_ci(std::vector<double>(10, 2.5), 1);
  CHECK(constant.lo == 2.5);
  CHECK(constant.hi == 2.5);
}

TEST_CASE("rate check windows") {
  std::vector<std::vector<RunRecord>> runs(3);
  for (std::uint64_t s = 0; s < 3; ++s) {
    for (std::size_t k = 1; k <= 10000; k *= 10) {
      for (std::size_t j : {1, 2, 5}) {
        const double kk = static_cast<double>(k * j);
        runs[s].push_back(record(s + 1, k * j, (1.0 + 0.1 * s) / kk, (2.0 + 0.1 * s) / kk));
      }
    }
  }
  const auto report = rate_check(runs, 10, 10000);
  REQUIRE(report.slopes.size() == 2);
  for (const auto& r : report.slopes) {
    CHECK(r.fit.slope == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(r.half_width <= 1e-9);
  }
  CHECK_THROWS_AS(rate_check(runs, 100, 5000), WindowError);
  CHECK_THROWS_AS(rate_check(runs, 100, 100000), WindowError);
}

TEST_CASE("experiments are reproducible across invocations and worker counts") {
  const auto dir1 = scratch_dir("det1"), dir4 = scratch_dir("det4");
  const std::vector<std::string> common{"solve", "--builtin", "random", "--iters", "2000",
                                        "--seeds", "1..3", "--N", "4"};
  auto args1 = common, args4 = common;
  args1.insert(args1.end(), {"--workers", "1", "--output", dir1.string()});
  args4.insert(args4.end(), {"--workers", "4", "--output", dir4.string()});
  REQUIRE(invoke(args1) == kExitOk);
  REQUIRE(invoke(args4) == kExitOk);
  for (const char* name : {"run_seed1.csv", "run_seed2.csv", "run_seed3.csv", "aggregate.csv"}) {
    const auto body = csv_body(dir1 / name);
    CHECK(!body.empty());
    CHECK(body == csv_body(dir4 / name));
  }
  const auto dir_again = scratch_dir("det_again");
  auto again = args1;
  again.back() = dir_again.string();
  REQUIRE(invoke(again) == kExitOk);
  CHECK(csv_body(dir1 / "run_seed2.csv") == csv_body(dir_again / "run_seed2.csv"));

  const auto runs = read_experiment_runs(dir1.string());
  REQUIRE(runs.size() == 3);
  CHECK(runs[1].front().seed == 2);
}

TEST_CASE("command line exit codes") {
  std::string text;
  CHECK(invoke({"solve", "--iters", "0"}, &text) == kExitConfig);
  CHECK(text.find("iterations") != std::string::npos);
  CHECK(invoke({"solve", "--variant", "diagonal"}) == kExitConfig);
  CHECK(invoke({"frobnicate"}) == kExitConfig);

  const auto dir = scratch_dir("window");
  REQUIRE(invoke({"solve", "--iters", "500", "--seeds", "1..2", "--output", dir.string()}) == kExitOk);
  CHECK(invoke({"rate-check", "--dir", dir.string(), "--k-min", "10", "--k-max", "500"}) == kExitWindow);
  CHECK(invoke({"rate-check", "--dir", dir.string(), "--k-min", "100", "--k-max", "10000"}) == kExitWindow);
  CHECK(invoke({"rate-check", "--dir", dir.string(), "--k-min", "1", "--k-max", "100"}, &text) == kExitOk);
  CHECK(text.find("dist_X") != std::string::npos);
}

TEST_CASE("numerical failures exit with the solver code") {
  const auto dir = scratch_dir("abort");
  const auto instance = dir / "huge.txt";
  {
    std::ofstream out(instance);
    out << "2 1\n1 0 0\nobjective quadratic\n1e200 1e200\nsimple_set ball\n0 0 1e300\n";
  }
  std::string text;
  const int code = invoke({"solve", "--instance", instance.string(), "--iters", "50", "--output",
                           dir.string()}, &text);
  CHECK(code == kExitSolverAbort);
  CHECK(text.find("distance oracle") != std::string::npos);
}

TEST_CASE("export and reload an instance") {
  const auto dir = scratch_dir("export");
  const auto path = (dir / "inst.txt").string();
  REQUIRE(invoke({"export-instance", "--builtin", "duplicated", "--to", path}) == kExitOk);
  const auto inst = load_instance(path);
  CHECK(inst.poly.A.rows() == 20);
  std::string text;
  CHECK(invoke({"validate", "--instance", path, "--samples", "50"}, &text) == kExitOk);
}

TEST_CASE("minibatch sweep reports measured and predicted columns") {
  RunConfig config;
  config.variant = Variant::sequential;
  config.iterations = 2000;
  config.seeds = parse_seed_list("1..4");
  const auto report = minibatch_sweep(config, {1, 4});
  REQUIRE(report.rows.size() == 2);
  CHECK(report.rows[0].measured_ratio == 1.0);
  CHECK(report.rows[1].mean_final_dist < report.rows[0].mean_final_dist);
  REQUIRE(report.c_hat.has_value());
  CHECK(report.rows[0].final_dist.size() == 4);
}
