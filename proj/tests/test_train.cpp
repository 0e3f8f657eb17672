#include "polyreg/autodiff/ops.hpp"
#include "polyreg/errors.hpp"
#include "polyreg/train/trainer.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

using namespace polyreg;
namespace ad = polyreg::ad;

namespace {

net::ModelBasedAutoencoder tiny_model(std::uint64_t seed = 1) {
  const auto spec = ModelSpec::scalar();
  const auto grid = DomainGrid::line(64);
  auto c = net::EncoderConfig::for_spec(spec, grid, net::Architecture::FullNet, GenScheme::input_scale(spec), 4);
  return net::ModelBasedAutoencoder(spec, grid, c, seed);
}

std::vector<double> flat_state(const net::ModelBasedAutoencoder& m) {
  std::vector<double> out;
  for (const auto& a : m.encoder().store().export_state()) out.insert(out.end(), a.values.begin(), a.values.end());
  return out;
}

train::TrainConfig quick(long steps) {
  train::TrainConfig c;
  c.steps = steps;
  c.batch_size = 4;
  c.log_every = 1;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("names round trip") {
  for (auto s : {train::Schedule::Data1, train::Schedule::Data1ThenData2, train::Schedule::Data1Plus2}) {
    CHECK(train::parse_schedule(train::schedule_name(s)) == s);
  }
  for (auto m : {train::LossMode::DecodedMse, train::LossMode::CoefficientMse, train::LossMode::RobustDecoded}) {
    CHECK(train::parse_loss_mode(train::loss_mode_name(m)) == m);
  }
  CHECK_THROWS_AS(train::parse_loss_mode("l1"), InvalidArgument);
  CHECK_THROWS_AS(train::parse_schedule("data3"), InvalidArgument);
  auto c = quick(10);
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = quick(10);
  for (double f : {0.0, -0.5, 1.5}) {
    c.final_lr_fraction = f;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
  }
  c.final_lr_fraction = 0.01;
  CHECK_NOTHROW(c.validate());
  CHECK(c.to_map().at("final_lr_fraction") == "0.01");
}

TEST_CASE("loss modes") {
  const auto clean = ad::Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  const auto theta = ad::Tensor::constant({2, 2}, {1, 1, 2, 2});
  net::ModelBasedAutoencoder::Output perfect{{theta, theta}, {clean, clean}};
  CHECK(train::total_loss(perfect, train::LossMode::DecodedMse, clean, theta, clean).item() == 0.0);
  CHECK(train::total_loss(perfect, train::LossMode::CoefficientMse, clean, theta, clean).item() == 0.0);
  CHECK(train::total_loss(perfect, train::LossMode::RobustDecoded, clean, theta, clean).item() == 0.0);

  const auto off = ad::Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 8});
  net::ModelBasedAutoencoder::Output single{{theta}, {off}};
  CHECK(train::total_loss(single, train::LossMode::DecodedMse, clean, theta, clean).item() ==
        ad::mse_loss(off, clean).item());

  // Heads are weighted equally.
  net::ModelBasedAutoencoder::Output two{{theta, theta}, {off, clean}};
  CHECK(train::total_loss(two, train::LossMode::DecodedMse, clean, theta, clean).item() ==
        doctest::Approx(ad::mse_loss(off, clean).item() / 2));

  // The robust mode compares against the corrupted input only.
  CHECK(train::total_loss(single, train::LossMode::RobustDecoded, clean, theta, off).item() == 0.0);
}

TEST_CASE("zero steps leave the weights unchanged") {
  auto m = tiny_model();
  const auto before = flat_state(m);
  const auto report = train::train(m, quick(0));
  CHECK(report.curve.empty());
  CHECK(flat_state(m) == before);
}

TEST_CASE("training is reproducible and leaves the decoder alone") {
  auto a = tiny_model(), b = tiny_model();
  const Eigen::MatrixXd design = a.decoder().design();
  const auto ra = train::train(a, quick(12));
  const auto rb = train::train(b, quick(12));
  REQUIRE(ra.curve.size() == 12);
  for (std::size_t i = 0; i < ra.curve.size(); ++i) {
    CHECK(ra.curve[i].loss == rb.curve[i].loss);
    CHECK(std::isfinite(ra.curve[i].loss));
  }
  CHECK(flat_state(a) == flat_state(b));
  CHECK(a.decoder().design() == design);
  CHECK(a.decoder().trainable_parameter_count() == 0);

  auto c = tiny_model();
  auto cfg = quick(12);
  cfg.seed = 4;
  train::train(c, cfg);
  CHECK(flat_state(c) != flat_state(a));
}

TEST_CASE("training does not depend on heap layout") {
  // Vectorized reductions must not pick their summation order from buffer
  // addresses; shifting the heap between runs exposes that.
  for (int dims : {1, 2}) {
    std::vector<std::vector<double>> results;
    std::vector<std::unique_ptr<char[]>> junk;
    for (int run = 0; run < 3; ++run) {
      junk.emplace_back(new char[static_cast<std::size_t>(8 + 24 * run)]);
      const auto spec = dims == 1 ? ModelSpec::scalar() : ModelSpec::quadratic_motion();
      const auto grid = dims == 1 ? DomainGrid::line(32) : DomainGrid::lattice(8, 8);
      auto c = net::EncoderConfig::for_spec(spec, grid, net::Architecture::FullNet,
                                            GenScheme::input_scale(spec), 4);
      c.levels = 2;
      net::ModelBasedAutoencoder m(spec, grid, c, 2);
      auto cfg = quick(5);
      cfg.batch_size = 3;
      train::train(m, cfg);
      auto state = flat_state(m);
      Rng rng(1);
      const auto single = m.predict(generate_pair(spec, GenScheme::data2(spec), grid, rng).input);
      state.insert(state.end(), single.data(), single.data() + single.size());
      results.push_back(std::move(state));
    }
    CHECK(results[0] == results[1]);
    CHECK(results[0] == results[2]);
  }
}

TEST_CASE("training batches depend only on seed and index") {
  const auto m = tiny_model();
  const auto scheme = GenScheme::mixed(m.spec());
  const auto a = train::training_batch(m, scheme, 3, 9, 5);
  const auto b = train::training_batch(m, scheme, 3, 9, 5);
  const auto c = train::training_batch(m, scheme, 3, 9, 6);
  for (int i = 0; i < 3; ++i) CHECK(a[i].input == b[i].input);
  CHECK(a[0].input != c[0].input);
}

TEST_CASE("curriculum phases") {
  auto m = tiny_model();
  auto cfg = quick(6);
  cfg.schedule = train::Schedule::Data1ThenData2;
  cfg.phase1_steps = 3;
  const auto r = train::train(m, cfg);
  REQUIRE(r.curve.size() == 6);
  for (int i = 0; i < 6; ++i) CHECK(r.curve[i].phase == (i < 3 ? 1 : 2));
  cfg.phase1_steps = 7;
  CHECK_THROWS_AS(train::train(m, cfg), InvalidArgument);
}

TEST_CASE("loss decreases over a short run") {
  auto m = tiny_model();
  auto cfg = quick(1000);
  cfg.schedule = train::Schedule::Data1;
  const auto r = train::train(m, cfg);
  auto window = [&](std::size_t from) {
    double s = 0;
    for (std::size_t i = from; i < from + 500; ++i) s += r.curve[i].loss;
    return s / 500;
  };
  CHECK(window(500) <= window(0));
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  const bool checks = ad::finite_checks_enabled();
  ad::set_finite_checks(false);
  auto m = tiny_model();
  for (auto t : m.encoder().store().trainable()) t.mutable_values()[0] = std::nan("");
  try {
    train::train(m, quick(3));
    FAIL("expected divergence");
  } catch (const TrainingDivergedError& e) {
    CHECK(std::string(e.what()).find("step 0") != std::string::npos);
    CHECK(std::string(e.what()).find("batch seed") != std::string::npos);
  }
  ad::set_finite_checks(checks);
}

TEST_CASE("validation is reproducible") {
  const auto m = tiny_model();
  const auto a = train::validate(m, {0.0, 0.3}, 0.01, 8, 2);
  const auto b = train::validate(m, {0.0, 0.3}, 0.01, 8, 2);
  CHECK(a == b);
  CHECK(a.size() == 2);
}

TEST_CASE("loss csv and periodic checkpoints") {
  auto m = tiny_model();
  auto cfg = quick(4);
  cfg.log_every = 2;
  cfg.checkpoint_every = 2;
  cfg.checkpoint_path = "test_train_ckpt";
  const auto r = train::train(m, cfg);
  REQUIRE(r.curve.size() == 3);  // steps 0, 2 and the last one
  CHECK(r.curve.back().step == 3);
  CHECK(std::filesystem::exists("test_train_ckpt.step2"));
  CHECK(std::filesystem::exists("test_train_ckpt.step4.manifest"));
  const auto loaded = net::ModelBasedAutoencoder::load("test_train_ckpt.step4");
  CHECK(flat_state(*loaded) == flat_state(m));

  train::write_loss_csv("test_train_loss.csv", r.curve);
  std::ifstream f("test_train_loss.csv");
  std::string header, row;
  std::getline(f, header);
  std::getline(f, row);
  CHECK(header == "step,loss,phase");
  CHECK(row.rfind("0,", 0) == 0);
  for (const char* p : {"test_train_ckpt.step2", "test_train_ckpt.step2.manifest", "test_train_ckpt.step4",
                        "test_train_ckpt.step4.manifest", "test_train_loss.csv"}) {
    std::filesystem::remove(p);
  }
}

}
