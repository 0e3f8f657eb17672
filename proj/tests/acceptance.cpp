// Acceptance runner: one PASS/FAIL line per criterion (criterion 8 has four
// sub-lines). Exit status is 0 whenever every criterion was evaluated, red or
// green; infrastructure errors exit 1.
//
// Trained networks are cached under --cache (default ./acceptance_cache) and
// reused when the stored manifest matches the requested configuration.

#include "decoder_suite.hpp"
#include "gradient_suite.hpp"

#include "polyreg/bench/bench.hpp"
#include "polyreg/datagen/generator.hpp"
#include "polyreg/estimators/estimators.hpp"
#include "polyreg/motion/motion.hpp"
#include "polyreg/net/encoder.hpp"
#include "polyreg/train/trainer.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace polyreg;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kGradRelTol = 1e-4;
constexpr double kAdjointTol = 1e-8;
constexpr double kGradSeconds = 60.0;
constexpr double kDecoderAdjointTol = 1e-10;
constexpr double kLseCleanMse = 1e-4;
// "Best" allows a relative tie: at 0% RANSAC and IRWLS reduce to LSE on
// (almost) every point and differ from it only in isolated trials.
constexpr double kTieRel = 0.01;
constexpr double kRobustFactor = 2.0;
constexpr double kNetVsLse1d = 5.0;
constexpr double kNetVsIrwls1d = 2.0;
constexpr double kTrainMinutes1d = 30.0;
constexpr double kAmbiguousGap = 0.10;
constexpr double kNetAt50 = 2.0;
constexpr double kLseClean2d = 1e-3;
constexpr double kNetVsLse2d = 3.0;
constexpr double kTrainHours2d = 2.0;
constexpr double kMotionFraction = 0.10;
constexpr double kStabilizeLevels = 2.0;

// Training budgets.
constexpr long kSteps1d = 20000;
constexpr long kSteps2d = 28000;
constexpr int kChannels2d = 8;
constexpr double kLr2d = 3e-3;
constexpr double kLrFinal2d = 0.01;
constexpr const char* kCacheVersion = "4";

void report(const std::string& id, bool pass, const std::string& detail) {
  std::printf("criterion %-3s %s  %s\n", id.c_str(), pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) return {};
  return {std::istreambuf_iterator<char>(f), {}};
}

struct Trained {
  std::string path;
  double wall_seconds = 0.0;
  bool cached = false;
};

// Trains (or reuses) a network. The manifest carries the whole configuration,
// so a cached checkpoint is reused only for an identical request.
Trained train_cached(const fs::path& dir, const std::string& label, const ModelSpec& spec,
                     const net::EncoderConfig& enc, const train::TrainConfig& tc) {
  fs::create_directories(dir);
  const std::string path = (dir / (label + ".ckpt")).string();
  net::ModelManifest want;
  want.spec_id = spec.id();
  want.encoder = enc;
  want.scheme = train::schedule_name(tc.schedule);
  want.seed = tc.seed;
  want.steps = tc.steps;
  want.extra = tc.to_map();
  want.extra["cache_version"] = kCacheVersion;

  if (fs::exists(path) && fs::exists(path + ".wall")) {
    try {
      net::ModelManifest have;
      net::ModelBasedAutoencoder::load(path, &have);
      if (have.to_text() == want.to_text()) {
        std::ifstream w(path + ".wall");
        Trained t{path, 0.0, true};
        w >> t.wall_seconds;
        std::printf("  [%s] cached checkpoint, trained in %.0f s\n", label.c_str(), t.wall_seconds);
        return t;
      }
    } catch (const std::exception&) {
      // stale or foreign checkpoint: retrain below
    }
  }

  net::ModelBasedAutoencoder model(spec, default_grid(spec), enc, tc.seed);
  std::printf("  [%s] training %ld steps (%zu parameters)\n", label.c_str(), tc.steps,
              model.trainable_parameter_count());
  std::fflush(stdout);
  const auto rep = train::train(model, tc, [&](const train::LossRecord& r) {
    std::printf("  [%s] step %ld loss %.4g\n", label.c_str(), r.step, r.loss);
    std::fflush(stdout);
  });
  model.save(path, want);
  std::ofstream(path + ".wall") << rep.wall_seconds << "\n";
  return {path, rep.wall_seconds, false};
}

train::TrainConfig train_config(long steps, std::uint64_t seed, train::Schedule schedule, train::LossMode loss) {
  train::TrainConfig tc;
  tc.steps = steps;
  tc.seed = seed;
  tc.schedule = schedule;
  tc.loss = loss;
  tc.log_every = 1000;
  return tc;
}

// Mean validation error over the 10-50% columns.
double mid_range_average(const std::string& ckpt, std::uint64_t seed) {
  const auto model = net::ModelBasedAutoencoder::load(ckpt);
  const auto v = train::validate(*model, {0.1, 0.2, 0.3, 0.4, 0.5}, GenScheme::table_noise(model->spec()), 200, seed);
  double s = 0;
  for (const auto& [r, e] : v) s += e;
  return s / static_cast<double>(v.size());
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

bench::BenchResults run_bench(const ModelSpec& spec, const std::vector<std::string>& methods, std::uint64_t seed) {
  auto suite = bench::BenchSuite::for_spec(spec);
  for (const auto& m : methods) suite.methods.push_back(bench::parse_method(m));
  suite.seed = seed;
  suite.trials = 200;
  for (auto& m : suite.methods) m.ransac.inlier_threshold = 5.0 * suite.noise_sigma;
  const auto t0 = std::chrono::steady_clock::now();
  auto res = bench::run_suite(suite);
  std::printf("%s bench (%d trials, %.0f s)\n%s", spec.id().c_str(), suite.trials, seconds_since(t0),
              bench::render_table(res).c_str());
  return res;
}

bool lse_best(double lse, double ransac, double irwls) {
  return lse <= (1.0 + kTieRel) * std::min(ransac, irwls);
}

double cell(const bench::BenchResults& r, std::size_t m, double ratio) {
  for (std::size_t k = 0; k < r.ratios.size(); ++k)
    if (std::abs(r.ratios[k] - ratio) < 1e-12) return r.cell(m, k).mean;
  throw std::runtime_error("ratio missing from bench");
}

// ---------------------------------------------------------------- 1, 2

void criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_grad = 0, worst_adj = 0;
  std::string grad_name, adj_name;
  for (const auto& c : testing::gradient_checks())
    if (!(c.value <= worst_grad)) worst_grad = c.value, grad_name = c.name;
  for (const auto& c : testing::adjoint_checks())
    if (!(c.value <= worst_adj)) worst_adj = c.value, adj_name = c.name;
  const double secs = seconds_since(t0);
  const bool ok = worst_grad < kGradRelTol && worst_adj < kAdjointTol && secs < kGradSeconds;
  report("1", ok,
         "max FD rel err " + fmt("%.2e", worst_grad) + " (" + grad_name + "), max adjoint mismatch " +
             fmt("%.2e", worst_adj) + " (" + adj_name + "), " + fmt("%.1f s", secs));
}

void criterion2() {
  bool ok = true;
  std::string detail;
  const std::vector<std::pair<ModelSpec, DomainGrid>> cases{
      {ModelSpec::scalar(), DomainGrid::line(64)},
      {ModelSpec::quadratic_motion(), DomainGrid::lattice(32, 32)},
  };
  for (const auto& [spec, grid] : cases) {
    for (const auto& c : testing::decoder_checks(spec, grid)) {
      ok = ok && c.ok();
      if (c.name.find("adjoint") != std::string::npos) {
        ok = ok && c.value <= kDecoderAdjointTol;
        detail += spec.id() + " adjoint " + fmt("%.1e", c.value) + ", ";
      }
    }
    // Census: every trainable parameter of the autoencoder belongs to the encoder.
    const auto enc = net::EncoderConfig::for_spec(spec, grid, net::Architecture::FullNet, 1.0, 4);
    const net::ModelBasedAutoencoder model(spec, grid, enc, 1);
    const net::Encoder bare(enc, 1);
    const bool census = FixedDecoder::trainable_parameter_count() == 0 &&
                        model.trainable_parameter_count() == bare.store().trainable_count();
    ok = ok && census;
    detail += spec.id() + " decoder params " + std::to_string(FixedDecoder::trainable_parameter_count()) + "; ";
  }
  report("2", ok, detail + "linearity and per-point checks " + (ok ? "hold" : "violated"));
}

// ---------------------------------------------------------------- 3, 4

void criteria3and4(const bench::BenchResults& r) {
  const double lse0 = cell(r, 0, 0.0);
  const bool best = lse_best(lse0, cell(r, 1, 0.0), cell(r, 2, 0.0));
  report("3", lse0 <= kLseCleanMse && best,
         "LSE@0 " + fmt("%.3e", lse0) + (best ? " (best classical)" : " (not best)") + ", RANSAC " +
             fmt("%.3e", cell(r, 1, 0.0)) + ", IRWLS " + fmt("%.3e", cell(r, 2, 0.0)));

  bool ok = true;
  std::string detail;
  for (double ratio : {0.2, 0.3, 0.4, 0.5}) {
    const double l = cell(r, 0, ratio);
    const double fr = l / cell(r, 1, ratio), fi = l / cell(r, 2, ratio);
    ok = ok && fr >= kRobustFactor && fi >= kRobustFactor;
    detail += fmt("%.0f%%: ", 100 * ratio) + "RANSAC x" + fmt("%.3g", fr) + " IRWLS x" + fmt("%.3g", fi) + "; ";
  }
  report("4", ok, "LSE/method " + detail);
}

// ---------------------------------------------------------------- 5, 6, 7

void criteria5to7(const fs::path& cache) {
  const auto spec = ModelSpec::scalar();
  const auto grid = default_grid(spec);
  const auto enc = net::EncoderConfig::for_spec(spec, grid, net::Architecture::FullNet, GenScheme::input_scale(spec));
  using train::LossMode;
  using train::Schedule;

  const auto full =
      train_cached(cache, "scalar_d12_decoded_s1", spec, enc,
                   train_config(kSteps1d, 1, Schedule::Data1Plus2, LossMode::DecodedMse));
  const auto r = run_bench(spec, {"lse", "ransac", "irwls", "fullnet=" + full.path}, 7);

  const double lse30 = cell(r, 0, 0.3), irwls30 = cell(r, 2, 0.3), net30 = cell(r, 3, 0.3);
  const double minutes = full.wall_seconds / 60.0;
  report("5", net30 * kNetVsLse1d <= lse30 && net30 * kNetVsIrwls1d <= irwls30 && minutes <= kTrainMinutes1d,
         "net@30% " + fmt("%.3e", net30) + ", LSE/net " + fmt("%.3g", lse30 / net30) + ", IRWLS/net " +
             fmt("%.3g", irwls30 / net30) + ", trained in " + fmt("%.1f min", minutes));

  // Ablations on the 10-50% average, same budget and seed.
  const std::uint64_t val_seed = 77;
  const auto d1 = train_cached(cache, "scalar_d1_decoded_s1", spec, enc,
                               train_config(kSteps1d, 1, Schedule::Data1, LossMode::DecodedMse));
  const auto coef = train_cached(cache, "scalar_d12_coef_s1", spec, enc,
                                 train_config(kSteps1d, 1, Schedule::Data1Plus2, LossMode::CoefficientMse));
  std::vector<double> a_full{mid_range_average(full.path, val_seed)};
  std::vector<double> a_d1{mid_range_average(d1.path, val_seed)};
  std::vector<double> a_coef{mid_range_average(coef.path, val_seed)};
  const auto ambiguous = [](double a, double b) { return std::abs(a - b) < kAmbiguousGap * std::max(a, b); };
  const bool need_seeds = ambiguous(a_full[0], a_d1[0]) || ambiguous(a_full[0], a_coef[0]);
  if (need_seeds) {
    std::printf("  ablation gap under %.0f%%: adding seeds 2 and 3\n", 100 * kAmbiguousGap);
    for (std::uint64_t s : {2, 3}) {
      const std::string tag = "_s" + std::to_string(s);
      a_full.push_back(mid_range_average(
          train_cached(cache, "scalar_d12_decoded" + tag, spec, enc,
                       train_config(kSteps1d, s, Schedule::Data1Plus2, LossMode::DecodedMse))
              .path,
          val_seed));
      if (ambiguous(a_full[0], a_d1[0]))
        a_d1.push_back(mid_range_average(
            train_cached(cache, "scalar_d1_decoded" + tag, spec, enc,
                         train_config(kSteps1d, s, Schedule::Data1, LossMode::DecodedMse))
                .path,
            val_seed));
      if (ambiguous(a_full[0], a_coef[0]))
        a_coef.push_back(mid_range_average(
            train_cached(cache, "scalar_d12_coef" + tag, spec, enc,
                         train_config(kSteps1d, s, Schedule::Data1Plus2, LossMode::CoefficientMse))
                .path,
            val_seed));
    }
  }
  const auto pick = [](const std::vector<double>& v) { return v.size() >= 3 ? median3(v) : v[0]; };
  const double m_full = pick(a_full), m_d1 = pick(a_d1), m_coef = pick(a_coef);
  report("6", m_full <= m_d1 && m_full <= m_coef,
         "10-50% avg: Data1+2 " + fmt("%.3e", m_full) + ", Data1-only " + fmt("%.3e", m_d1) +
             ", coefficient loss " + fmt("%.3e", m_coef) + (need_seeds ? " (median of 3 seeds)" : " (seed 1)"));

  const double lse50 = cell(r, 0, 0.5), net50 = cell(r, 3, 0.5);
  report("7", net50 * kNetAt50 <= lse50,
         "net@50% " + fmt("%.3e", net50) + ", LSE@50% " + fmt("%.3e", lse50) + ", LSE/net " +
             fmt("%.3g", lse50 / net50));
}

// ---------------------------------------------------------------- 8

std::string criterion8(const fs::path& cache) {
  const auto spec = ModelSpec::quadratic_motion();
  const auto grid = default_grid(spec);
  const auto enc = net::EncoderConfig::for_spec(spec, grid, net::Architecture::FullNet, GenScheme::input_scale(spec),
                                                kChannels2d);
  auto tc = train_config(kSteps2d, 1, train::Schedule::Data1Plus2, train::LossMode::DecodedMse);
  tc.learning_rate = kLr2d;
  tc.final_lr_fraction = kLrFinal2d;
  const auto net = train_cached(cache, "quad2d_d12_decoded_s1", spec, enc, tc);
  const auto r = run_bench(spec, {"lse", "ransac", "irwls", "fullnet=" + net.path}, 7);

  const double lse0 = cell(r, 0, 0.0);
  report("8a", lse0 <= kLseClean2d, "LSE@0 " + fmt("%.3e", lse0) + " (bound " + fmt("%.0e", kLseClean2d) + ")");
  const bool best = lse_best(lse0, cell(r, 1, 0.0), cell(r, 2, 0.0));
  report("8b", best, "LSE@0 " + fmt("%.3e", lse0) + ", RANSAC " + fmt("%.3e", cell(r, 1, 0.0)) + ", IRWLS " +
                         fmt("%.3e", cell(r, 2, 0.0)));
  bool ok = true;
  std::string detail;
  for (double ratio : {0.2, 0.3, 0.4, 0.5}) {
    const double l = cell(r, 0, ratio);
    const double fr = l / cell(r, 1, ratio), fi = l / cell(r, 2, ratio);
    ok = ok && fr >= kRobustFactor && fi >= kRobustFactor;
    detail += fmt("%.0f%%: ", 100 * ratio) + "RANSAC x" + fmt("%.3g", fr) + " IRWLS x" + fmt("%.3g", fi) + "; ";
  }
  report("8c", ok, "LSE/method " + detail);
  const double lse30 = cell(r, 0, 0.3), net30 = cell(r, 3, 0.3);
  const double hours = net.wall_seconds / 3600.0;
  report("8d", net30 * kNetVsLse2d <= lse30 && hours <= kTrainHours2d,
         "net@30% " + fmt("%.3e", net30) + ", LSE/net " + fmt("%.3g", lse30 / net30) + ", " +
             std::to_string(kChannels2d) + " channels, " + std::to_string(kSteps2d) + " steps in " +
             fmt("%.2f h", hours));
  return net.path;
}

// ---------------------------------------------------------------- 9

Coefficients coeffs(std::initializer_list<double> v) {
  Coefficients t = Coefficients::Zero(12);
  int k = 0;
  for (double x : v) t[k++] = x;
  return t;
}

motion::Image pattern(int w, int h) {
  motion::Image img(w, h, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      img.pixels[static_cast<std::size_t>(y) * w + x] =
          static_cast<std::uint8_t>(std::lround(128 + 60 * std::sin(0.21 * x) + 50 * std::cos(0.17 * y)));
  return img;
}

void criterion9(const fs::path& work, const std::string& net2d) {
  using namespace motion;
  const int W = 128, H = 96;
  const auto spec = ModelSpec::quadratic_motion();
  const auto fgrid = flow_grid(W, H);

  // Dominant quadratic motion plus a 40% polygon moving with its own translation.
  const Coefficients bg = coeffs({1.5, -0.8, 0.6, -0.3, 0.2, 0.5, 0.4, -0.2, 0.3, -0.3, 0.25, 0.2});
  const double ou = 8.0, ov = 6.0;
  const double outlier_disp = std::hypot(ou, ov);
  Rng rng(derive_seed(9, 0xAC9000));
  const auto mask = polygon_mask(DomainGrid::lattice(H, W), 0.4, rng);
  const RangeField clean = decode(spec, bg, fgrid);
  RangeField field = clean;
  std::normal_distribution<double> noise(0.0, 0.2);
  for (int i = 0; i < W * H; ++i) {
    if (mask[i]) field[2 * i] += ou, field[2 * i + 1] += ov;
    field[2 * i] += noise(rng);
    field[2 * i + 1] += noise(rng);
  }
  const double ratio = static_cast<double>(std::count(mask.begin(), mask.end(), true)) / (W * H);

  const FlowMap flow = field_to_flow(field, W, H);
  const auto flo_path = (work / "motion.flo").string();
  write_flo(flow, flo_path);
  const FlowMap back = read_flo(flo_path);
  write_flo(back, (work / "motion2.flo").string());
  const bool flo_exact = slurp(flo_path) == slurp(work / "motion2.flo") &&
                         std::equal(back.data.begin(), back.data.end(), flow.data.begin(), [](float a, float b) {
                           return std::memcmp(&a, &b, sizeof a) == 0;
                         }) && back.width == W && back.height == H;

  Image rgb(37, 23, 3);
  for (std::size_t i = 0; i < rgb.pixels.size(); ++i) rgb.pixels[i] = static_cast<std::uint8_t>(i * 7 + 3);
  const Image gray = pattern(41, 29);
  bool pnm_exact = true;
  for (const auto& [img, name] : {std::pair{rgb, "rgb.ppm"}, std::pair{gray, "gray.pgm"}}) {
    const auto p = (work / name).string();
    write_pnm(img, p);
    const Image r = read_pnm(p);
    write_pnm(r, p + ".2");
    pnm_exact = pnm_exact && r == img && slurp(p) == slurp(p + ".2");
  }

  const auto param_error = [&](const MotionFit& fit) {
    const RangeField est = decode(spec, fit.theta, fgrid);
    return field_error(spec, est, clean);
  };
  MotionFitConfig cfg;
  cfg.method = FitMethod::Lse;
  const double e_lse = param_error(fit_dominant_motion(back, cfg));
  cfg.method = FitMethod::Ransac;
  const double e_ransac = param_error(fit_dominant_motion(back, cfg));
  cfg.method = FitMethod::Network;
  cfg.network = std::shared_ptr<const net::ModelBasedAutoencoder>(net::ModelBasedAutoencoder::load(net2d));
  const double e_net = param_error(fit_dominant_motion(back, cfg));
  const double limit = kMotionFraction * outlier_disp;

  // Jitter: frame t shows the pattern displaced by o_t; window 1 locks to frame 0.
  const Image base = pattern(96, 72);
  const std::vector<std::pair<double, double>> offsets{{0, 0}, {2.5, -1}, {-1.5, 2}, {1, 0.5}, {-2, -1.5}, {0.5, 1}};
  std::vector<Image> frames;
  for (const auto& [ox, oy] : offsets) frames.push_back(warp_backward(base, coeffs({-ox, -oy}), BorderPolicy::Clamp));
  std::vector<FlowMap> flows;
  std::normal_distribution<double> fnoise(0.0, 0.1);
  for (std::size_t t = 0; t + 1 < offsets.size(); ++t) {
    const Coefficients d =
        coeffs({offsets[t + 1].first - offsets[t].first, offsets[t + 1].second - offsets[t].second});
    FlowMap f = field_to_flow(decode(spec, d, flow_grid(96, 72)), 96, 72);
    for (float& x : f.data) x += static_cast<float>(fnoise(rng));
    flows.push_back(std::move(f));
  }
  StabilizationParams sp;
  MotionFitConfig scfg;
  scfg.method = FitMethod::Ransac;
  const auto st = stabilize_sequence(frames, flows, sp, scfg);
  const int margin = 6;
  double worst = 0;
  for (const auto& fr : st.frames) {
    double s = 0;
    int n = 0;
    for (int y = margin; y < fr.height - margin; ++y)
      for (int x = margin; x < fr.width - margin; ++x, ++n) s += std::abs(int(fr.at(x, y)) - int(frames[0].at(x, y)));
    worst = std::max(worst, s / n);
  }

  const bool ok = e_ransac <= limit && e_net <= limit && e_lse > limit && flo_exact && pnm_exact &&
                  worst <= kStabilizeLevels;
  report("9", ok,
         fmt("outliers %.0f%%", 100 * ratio) + ", limit " + fmt("%.3g px", limit) + ": LSE " + fmt("%.3g", e_lse) +
             ", RANSAC " + fmt("%.3g", e_ransac) + ", net " + fmt("%.3g", e_net) + "; flo round trip " +
             (flo_exact ? "exact" : "differs") + ", PNM " + (pnm_exact ? "exact" : "differs") +
             "; stabilized mean abs diff " + fmt("%.2f", worst));
}

// ---------------------------------------------------------------- 10

bool run_cli(const std::string& cli, const std::string& args) {
  const std::string cmd = "\"" + cli + "\" " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str()) == 0;
}

void criterion10(const fs::path& work, const std::string& cli) {
  const auto d = work / "determinism";
  fs::create_directories(d);
  const auto p = [&](const char* n) { return (d / n).string(); };
  bool ran = true;
  ran = ran && run_cli(cli, "bench --spec scalar --trials 50 --seed 5 --out " + p("b1.csv"));
  ran = ran && run_cli(cli, "bench --spec scalar --trials 50 --seed 5 --jobs 3 --out " + p("b2.csv"));
  ran = ran && run_cli(cli, "bench --spec quad2d --trials 5 --seed 5 --out " + p("b3.csv"));
  ran = ran && run_cli(cli, "bench --spec quad2d --trials 5 --seed 5 --out " + p("b4.csv"));
  const std::string targs = "train --spec scalar --steps 40 --seed 9 --log-every 5 --validate-trials 20 --out ";
  ran = ran && run_cli(cli, targs + p("t1.ckpt"));
  ran = ran && run_cli(cli, targs + p("t2.ckpt"));
  const std::string t2d = "train --spec quad2d --channels 4 --steps 5 --seed 9 --log-every 1 --validate-trials 5 --out ";
  ran = ran && run_cli(cli, t2d + p("u1.ckpt"));
  ran = ran && run_cli(cli, t2d + p("u2.ckpt"));

  const auto same = [&](const std::string& a, const std::string& b) {
    const auto x = slurp(d / a);
    return !x.empty() && x == slurp(d / b);
  };
  bool ok = ran && same("b1.csv", "b2.csv") && same("b1.csv.txt", "b2.csv.txt") && same("b3.csv", "b4.csv");
  for (const char* sfx : {".ckpt", ".ckpt.manifest", ".ckpt.loss.csv", ".ckpt.validation.csv"}) {
    ok = ok && same(std::string("t1") + sfx, std::string("t2") + sfx);
    ok = ok && same(std::string("u1") + sfx, std::string("u2") + sfx);
  }
  report("10", ok, std::string(ran ? "" : "a CLI run failed; ") +
                       "bench CSVs (1 vs 3 jobs, 1D and 2D) and train checkpoints, manifests, loss and validation "
                       "CSVs across separate processes " + (ok ? "identical" : "differ"));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance runner"};
  std::string cli, cache = "acceptance_cache", only;
  app.add_option("--cli", cli, "Path of the polyreg executable")->required();
  app.add_option("--cache", cache, "Checkpoint cache directory");
  app.add_option("--only", only, "Comma list of criteria to run (default all)");
  CLI11_PARSE(app, argc, argv);

  const auto wanted = [&](const std::string& id) {
    if (only.empty()) return true;
    std::stringstream ss(only);
    std::string tok;
    while (std::getline(ss, tok, ','))
      if (tok == id) return true;
    return false;
  };

  try {
    const fs::path cache_dir = fs::absolute(cache);
    const fs::path work = cache_dir / "work";
    fs::create_directories(work);
    const auto t0 = std::chrono::steady_clock::now();
    if (wanted("1")) criterion1();
    if (wanted("2")) criterion2();
    if (wanted("3") || wanted("4")) criteria3and4(run_bench(ModelSpec::scalar(), {"lse", "ransac", "irwls"}, 7));
    if (wanted("5") || wanted("6") || wanted("7")) criteria5to7(cache_dir);
    std::string net2d;
    if (wanted("8") || wanted("9")) net2d = criterion8(cache_dir);
    if (wanted("9")) criterion9(work, net2d);
    if (wanted("10")) criterion10(work, cli);
    std::printf("acceptance finished in %.0f s\n", seconds_since(t0));
  } catch (const std::exception& e) {
    std::fprintf(stderr, "acceptance aborted: %s\n", e.what());
    return 1;
  }
  return 0;
}
