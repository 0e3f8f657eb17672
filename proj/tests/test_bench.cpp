#include "polyreg/bench/bench.hpp"
#include "polyreg/datagen/generator.hpp"
#include "polyreg/errors.hpp"
#include "polyreg/net/encoder.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace polyreg;
using namespace polyreg::bench;

namespace {

BenchSuite small_suite(std::vector<std::string> methods, int trials = 30) {
  BenchSuite s = BenchSuite::for_spec(ModelSpec::scalar());
  for (const auto& m : methods) s.methods.push_back(parse_method(m));
  s.trials = trials;
  s.seed = 5;
  return s;
}

}  // namespace

TEST_SUITE("bench") {

TEST_CASE("method parsing") {
  CHECK(parse_method("lse").kind == MethodKind::Lse);
  CHECK(parse_method("ransac").kind == MethodKind::Ransac);
  CHECK(parse_method("irwls").kind == MethodKind::Irwls);
  const auto n = parse_method("FullNet=model.ckpt");
  CHECK(n.kind == MethodKind::Network);
  CHECK(n.name == "FullNet");
  CHECK(n.checkpoint == "model.ckpt");
  CHECK_THROWS_AS(parse_method("svm"), InvalidArgument);
  CHECK_THROWS_AS(parse_method("=x"), InvalidArgument);
}

TEST_CASE("suite defaults and validation") {
  const auto s = BenchSuite::for_spec(ModelSpec::scalar());
  CHECK(s.ratios == std::vector<double>{0.0, 0.1, 0.2, 0.3, 0.4, 0.5});
  CHECK(s.noise_sigma == 0.01);
  CHECK(s.trials == 200);
  CHECK(BenchSuite::for_spec(ModelSpec::quadratic_motion()).noise_sigma == 0.5);
  auto bad = small_suite({"lse", "lse"});
  CHECK_THROWS_AS(run_suite(bad), InvalidArgument);
  bad = small_suite({"lse"});
  bad.ratios = {1.0};
  CHECK_THROWS_AS(run_suite(bad), InvalidArgument);
}

TEST_CASE("noiseless lse is exact") {
  auto s = small_suite({"lse"});
  s.ratios = {0.0};
  s.noise_sigma = 0.0;
  const auto r = run_suite(s);
  CHECK(r.cell(0, 0).mean < 1e-20);
}

TEST_CASE("cells are paired and match a direct evaluation") {
  auto s = small_suite({"lse"});
  Method twin = parse_method("lse");
  twin.name = "lse-copy";
  s.methods.push_back(twin);
  const auto r = run_suite(s);
  const auto design = build_design_matrix(s.spec, s.grid);
  for (std::size_t k = 0; k < s.ratios.size(); ++k) {
    CHECK(r.cell(0, k).mean == r.cell(1, k).mean);
    double sum = 0;
    for (const auto& p : evaluation_set(s.spec, s.grid, s.ratios[k], s.noise_sigma, s.trials, s.seed)) {
      sum += field_error(s.spec, design * fit_lse(design, p.input), p.target);
    }
    CHECK(r.cell(0, k).mean == doctest::Approx(sum / s.trials).epsilon(1e-12));
  }
}

TEST_CASE("lse error grows with contamination") {
  const auto r = run_suite(small_suite({"lse"}, 200));
  for (std::size_t k = 1; k < r.ratios.size(); ++k) CHECK(r.cell(0, k).mean >= r.cell(0, k - 1).mean);
}

TEST_CASE("results do not depend on worker count") {
  auto s = small_suite({"lse", "ransac", "irwls"}, 10);
  s.methods[1].ransac.iterations = 100;
  const auto a = run_suite(s);
  s.jobs = 3;
  const auto b = run_suite(s);
  CHECK(a.cells == b.cells);
  CHECK(a.total_failures() == 0);
}

TEST_CASE("best marking and averages") {
  BenchResults r;
  r.methods = {"a", "b"};
  r.ratios = {0.0, 0.5};
  r.cells = {{"a", 0.0, 1.0, 0, 1, 0}, {"a", 0.5, 5.0, 0, 1, 0}, {"b", 0.0, 2.0, 0, 1, 0}, {"b", 0.5, 3.0, 0, 1, 0}};
  CHECK(r.best_in_column(0) == 0);
  CHECK(r.best_in_column(1) == 1);
  CHECK(r.average(0) == 3.0);
  CHECK(r.average(1) == 2.5);
  CHECK(r.best_average() == 1);
  const auto table = render_table(r);
  std::istringstream lines(table);
  std::string header, row_a, row_b;
  std::getline(lines, header);
  std::getline(lines, row_a);
  std::getline(lines, row_b);
  CHECK(header.find("Average") != std::string::npos);
  CHECK(row_a.find("1.000e+00*") != std::string::npos);
  CHECK(row_a.find("5.000e+00*") == std::string::npos);
  CHECK(row_b.find("3.000e+00*") != std::string::npos);
  CHECK(row_b.find("2.500e+00*") != std::string::npos);
}

TEST_CASE("csv round trip") {
  const auto r = run_suite(small_suite({"lse", "irwls"}, 5));
  std::stringstream ss;
  write_csv(r, ss);
  const auto back = read_csv(ss);
  CHECK(back.methods == r.methods);
  CHECK(back.ratios == r.ratios);
  CHECK(back.cells == r.cells);

  std::stringstream empty;
  write_csv(run_suite(small_suite({})), empty);
  CHECK(empty.str() == "method,ratio,mean,std,trials\n");

  std::stringstream junk("a,b\n");
  CHECK_THROWS_AS(read_csv(junk), FormatError);

  emit_report(r, "test_bench.csv");
  CHECK(std::filesystem::exists("test_bench.csv"));
  std::ifstream txt("test_bench.csv.txt");
  std::string first;
  std::getline(txt, first);
  CHECK(first.rfind("method", 0) == 0);
  std::filesystem::remove("test_bench.csv");
  std::filesystem::remove("test_bench.csv.txt");
}

TEST_CASE("network methods") {
  const auto spec = ModelSpec::scalar();
  const auto grid = default_grid(spec);
  auto c = net::EncoderConfig::for_spec(spec, grid, net::Architecture::HalfNet, GenScheme::input_scale(spec), 4);
  const net::ModelBasedAutoencoder model(spec, grid, c, 3);
  net::ModelManifest m;
  m.spec_id = spec.id();
  m.encoder = c;
  m.scheme = "data1";
  model.save("test_bench_net.ckpt", m);

  auto s = small_suite({"net=test_bench_net.ckpt"}, 4);
  s.ratios = {0.2};
  const auto r = run_suite(s);
  double sum = 0;
  for (const auto& p : evaluation_set(spec, grid, 0.2, s.noise_sigma, 4, s.seed)) {
    sum += field_error(spec, decode(spec, model.predict(p.input), grid), p.target);
  }
  CHECK(r.cell(0, 0).mean == doctest::Approx(sum / 4).epsilon(1e-10));

  auto wrong = s;
  wrong.grid = DomainGrid::line(32);
  CHECK_THROWS_AS(run_suite(wrong), ConfigError);
  auto missing = small_suite({"net=does_not_exist.ckpt"});
  CHECK_THROWS_AS(run_suite(missing), ConfigError);
  std::filesystem::remove("test_bench_net.ckpt");
  std::filesystem::remove("test_bench_net.ckpt.manifest");
}

}
