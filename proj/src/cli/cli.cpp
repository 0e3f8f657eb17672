#include "polyreg/cli/cli.hpp"

#include "polyreg/bench/bench.hpp"
#include "polyreg/errors.hpp"
#include "polyreg/estimators/estimators.hpp"
#include "polyreg/motion/motion.hpp"
#include "polyreg/net/encoder.hpp"
#include "polyreg/train/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iterator>
#include <sstream>

namespace polyreg::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::uint64_t kGenStream = 0x6E7000;

const std::vector<std::string> kSubcommands{"gen", "fit", "train", "bench", "motion-fit", "stabilize"};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> parse_ratios(const std::string& s) {
  std::vector<double> out;
  for (const std::string& t : split(s, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(t, &used));
      if (used != t.size()) throw std::invalid_argument(t);
    } catch (const std::exception&) {
      throw InvalidArgument("'" + t + "' is not a number");
    }
  }
  return out;
}

std::string join_doubles(const Eigen::VectorXd& v) {
  std::ostringstream out;
  out.precision(17);
  for (Eigen::Index i = 0; i < v.size(); ++i) out << (i ? " " : "") << v[i];
  return out.str();
}

/// Fully resolved option values of a subcommand, by long name.
std::map<std::string, std::string> resolved_options(const CLI::App& sub) {
  std::map<std::string, std::string> out;
  for (const CLI::Option* opt : sub.get_options()) {
    const std::string name = opt->get_single_name();
    if (name == "help" || name == "config" || name.empty()) continue;
    std::string value;
    if (opt->count() > 0) {
      const auto& results = opt->results();
      for (std::size_t i = 0; i < results.size(); ++i) value += (i ? "," : "") + results[i];
    } else {
      value = opt->get_default_str();
    }
    out[name] = value;
  }
  return out;
}

void write_sidecar(const std::string& artifact, const std::string& subcommand,
                   const std::map<std::string, std::string>& resolved) {
  std::ofstream f(artifact + ".run", std::ios::trunc);
  f << "# polyreg " << subcommand << " --config " << artifact << ".run\n";
  for (const auto& [k, v] : resolved) f << k << "=" << v << "\n";
  if (!f) throw std::runtime_error("failed writing " + artifact + ".run");
}

void log_header(std::ostream& err, const std::string& subcommand, const std::map<std::string, std::string>& resolved) {
  err << "# polyreg " << subcommand << "\n";
  for (const auto& [k, v] : resolved) err << "#   " << k << "=" << v << "\n";
}

std::shared_ptr<const net::ModelBasedAutoencoder> load_network(const std::string& checkpoint) {
  if (checkpoint.empty()) throw InvalidArgument("--checkpoint is required for the network method");
  return net::ModelBasedAutoencoder::load(checkpoint);
}

json grid_json(const DomainGrid& grid) {
  if (!grid.is_lattice()) throw InvalidArgument("pair files need a line or lattice grid");
  return {{"height", grid.height()}, {"width", grid.width()}};
}

std::vector<double> to_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<fs::path> sorted_files(const std::string& dir, const std::vector<std::string>& extensions) {
  if (!fs::is_directory(dir)) throw std::runtime_error(dir + " is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string ext = e.path().extension().string();
    if (std::find(extensions.begin(), extensions.end(), ext) != extensions.end()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  std::map<std::string, std::string> out;
  std::string line;
  int number = 0;
  while (std::getline(f, line)) {
    ++number;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError(path + ":" + std::to_string(number) + ": expected key=value");
    }
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

std::vector<std::string> merge_config(const std::vector<std::string>& args, std::size_t subcommand_index,
                                      const std::map<std::string, std::string>& config) {
  auto given = [&](const std::string& key) {
    const std::string flag = "--" + key;
    return std::any_of(args.begin(), args.end(), [&](const std::string& a) {
      return a == flag || a.rfind(flag + "=", 0) == 0;
    });
  };
  std::vector<std::string> out(args.begin(), args.begin() + static_cast<std::ptrdiff_t>(subcommand_index + 1));
  for (const auto& [key, value] : config) {
    if (!given(key)) out.push_back("--" + key + "=" + value);
  }
  out.insert(out.end(), args.begin() + static_cast<std::ptrdiff_t>(subcommand_index + 1), args.end());
  return out;
}

void write_pair(const std::string& path, const ModelSpec& spec, const DomainGrid& grid, const TrainingPair& pair) {
  json j;
  j["spec"] = spec.id();
  j["grid"] = grid_json(grid);
  j["theta_true"] = to_vector(pair.theta_true);
  j["realized_outlier_ratio"] = pair.realized_outlier_ratio;
  j["input"] = to_vector(pair.input);
  j["target"] = to_vector(pair.target);
  std::vector<int> mask(pair.outlier_mask.begin(), pair.outlier_mask.end());
  j["outlier_mask"] = mask;
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << j.dump() << "\n";
  if (!f) throw std::runtime_error("failed writing " + path);
}

namespace {

constexpr char kPairMagic[8] = {'P', 'R', 'P', 'A', 'I', 'R', '0', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xffu));
}

std::uint32_t get_u32(const std::string& b, std::size_t at) {
  std::uint32_t v = 0;
  for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + k])) << (8 * k);
  return v;
}

void put_floats(std::string& out, const Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v[i])));
}

PairFile read_pair_binary(const std::string& path, const std::string& b) {
  std::size_t at = sizeof kPairMagic;
  auto need = [&](std::size_t n) {
    if (b.size() < at + n) throw FormatError(path + ": truncated pair file");
  };
  auto u32 = [&] {
    need(4);
    const std::uint32_t v = get_u32(b, at);
    at += 4;
    return v;
  };
  auto floats = [&](std::size_t n) {
    need(4 * n);
    Eigen::VectorXd v(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) v[static_cast<Eigen::Index>(i)] = std::bit_cast<float>(get_u32(b, at + 4 * i));
    at += 4 * n;
    return v;
  };
  const std::uint32_t id_len = u32();
  need(id_len);
  PairFile p;
  p.spec = ModelSpec::parse(b.substr(at, id_len));
  at += id_len;
  const int h = static_cast<int>(u32());
  const int w = static_cast<int>(u32());
  const int r = static_cast<int>(u32());
  const int m = static_cast<int>(u32());
  if (h <= 0 || w <= 0 || r != p.spec.range_dim() || m != p.spec.coeff_count() || (p.spec.domain_dim() == 1 && h != 1)) {
    throw FormatError(path + ": pair header does not match its spec");
  }
  p.grid = p.spec.domain_dim() == 1 ? DomainGrid::line(w) : DomainGrid::lattice(h, w);
  const auto len = static_cast<std::size_t>(r) * p.grid.size();
  p.pair.input = floats(len);
  p.pair.target = floats(len);
  p.has_target = true;
  p.pair.theta_true = floats(static_cast<std::size_t>(m));
  const Eigen::VectorXd mask = floats(static_cast<std::size_t>(p.grid.size()));
  for (Eigen::Index i = 0; i < mask.size(); ++i) p.pair.outlier_mask.push_back(mask[i] != 0.0);
  p.pair.realized_outlier_ratio = mask.sum() / static_cast<double>(mask.size());
  if (at != b.size()) throw FormatError(path + ": trailing bytes after the pair payload");
  return p;
}

}  // namespace

void write_pair_binary(const std::string& path, const ModelSpec& spec, const DomainGrid& grid, const TrainingPair& pair) {
  if (!grid.is_lattice()) throw InvalidArgument("pair files need a line or lattice grid");
  std::string b(kPairMagic, sizeof kPairMagic);
  const std::string id = spec.id();
  put_u32(b, static_cast<std::uint32_t>(id.size()));
  b += id;
  put_u32(b, static_cast<std::uint32_t>(grid.height()));
  put_u32(b, static_cast<std::uint32_t>(grid.width()));
  put_u32(b, static_cast<std::uint32_t>(spec.range_dim()));
  put_u32(b, static_cast<std::uint32_t>(spec.coeff_count()));
  put_floats(b, pair.input);
  put_floats(b, pair.target);
  put_floats(b, pair.theta_true);
  Eigen::VectorXd mask(static_cast<Eigen::Index>(pair.outlier_mask.size()));
  for (std::size_t i = 0; i < pair.outlier_mask.size(); ++i) mask[static_cast<Eigen::Index>(i)] = pair.outlier_mask[i] ? 1.0 : 0.0;
  put_floats(b, mask);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f.write(b.data(), static_cast<std::streamsize>(b.size()));
  if (!f) throw std::runtime_error("failed writing " + path);
}

PairFile read_pair(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  const std::string bytes{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  if (bytes.size() >= sizeof kPairMagic && bytes.compare(0, sizeof kPairMagic, kPairMagic, sizeof kPairMagic) == 0) {
    return read_pair_binary(path, bytes);
  }
  PairFile p;
  try {
    const json j = json::parse(bytes);
    p.spec = ModelSpec::parse(j.at("spec").get<std::string>());
    const int h = j.at("grid").at("height").get<int>();
    const int w = j.at("grid").at("width").get<int>();
    p.grid = p.spec.domain_dim() == 1 ? DomainGrid::line(w) : DomainGrid::lattice(h, w);
    p.pair.input = from_json(j.at("input"));
    if (j.contains("target")) {
      p.pair.target = from_json(j.at("target"));
      p.has_target = true;
    }
    if (j.contains("theta_true")) p.pair.theta_true = from_json(j.at("theta_true"));
    if (j.contains("outlier_mask")) {
      for (int v : j.at("outlier_mask").get<std::vector<int>>()) p.pair.outlier_mask.push_back(v != 0);
    }
    if (j.contains("realized_outlier_ratio")) p.pair.realized_outlier_ratio = j.at("realized_outlier_ratio").get<double>();
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  const auto expected = static_cast<Eigen::Index>(p.spec.range_dim()) * p.grid.size();
  if (p.pair.input.size() != expected || (p.has_target && p.pair.target.size() != expected)) {
    throw FormatError(path + ": field length does not match the grid");
  }
  return p;
}

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Polynomial regression with a fixed decoder: data generation, classical and learned fitting, "
               "training, benchmarks and dominant-motion stabilization."};
  app.name(raw_args.empty() ? "polyreg" : fs::path(raw_args[0]).filename().string());
  app.require_subcommand(1, 1);
  app.option_defaults()->always_capture_default();

  // ---- gen
  std::string gen_spec = "scalar", gen_scheme = "mixed", gen_out, gen_format = "json";
  double gen_ratio = 0.3, gen_sigma = -1.0;
  int gen_count = 1;
  std::uint64_t gen_seed = 0;
  CLI::App* gen = app.add_subcommand("gen", "Write synthetic (corrupted, clean) pairs (JSON or float32 binary)");
  gen->add_option("--spec", gen_spec, "scalar, scalar<k> or quad2d");
  gen->add_option("--scheme", gen_scheme, "data1, data2, mixed or evaluation");
  gen->add_option("--ratio", gen_ratio, "Outlier ratio for --scheme evaluation");
  gen->add_option("--sigma", gen_sigma, "Noise for --scheme evaluation; negative selects the table noise");
  gen->add_option("--count", gen_count, "Number of pairs")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "Master seed");
  gen->add_option("--format", gen_format, "json (double precision) or bin (float32 arrays)")
      ->check(CLI::IsMember({"json", "bin"}));
  gen->add_option("--out", gen_out, "Output directory")->required();

  // ---- fit
  std::string fit_input, fit_method = "lse", fit_checkpoint, fit_out;
  double fit_threshold = -1.0;
  int fit_iterations = 500, fit_irwls_iterations = 50;
  std::uint64_t fit_seed = 0;
  CLI::App* fit = app.add_subcommand("fit", "Fit one pair file and print the coefficients");
  fit->add_option("--input", fit_input, "Pair file (JSON or binary) written by gen")->required();
  fit->add_option("--method", fit_method, "lse, ransac, irwls or network");
  fit->add_option("--checkpoint", fit_checkpoint, "Network weights for --method network");
  fit->add_option("--ransac-threshold", fit_threshold, "Inlier residual norm; negative selects 5x the table noise");
  fit->add_option("--ransac-iterations", fit_iterations)->check(CLI::PositiveNumber);
  fit->add_option("--irwls-iterations", fit_irwls_iterations)->check(CLI::PositiveNumber);
  fit->add_option("--seed", fit_seed, "RANSAC seed");
  fit->add_option("--out", fit_out, "Optional file receiving the coefficients");

  // ---- train
  std::string tr_spec = "scalar", tr_arch = "fullnet", tr_schedule = "data1plus2", tr_loss = "decoded_mse", tr_out;
  std::string tr_ratios = "0,0.1,0.2,0.3,0.4,0.5";
  int tr_channels = 0, tr_batch = 16, tr_val_trials = 200;
  long tr_steps = 20000, tr_phase1 = -1, tr_log_every = 100, tr_ckpt_every = 0;
  double tr_lr = 1e-3;
  double tr_lr_final = 1.0;
  std::uint64_t tr_seed = 0, tr_val_seed = 1;
  CLI::App* trn = app.add_subcommand("train", "Train an encoder through the fixed decoder");
  trn->add_option("--spec", tr_spec, "scalar, scalar<k> or quad2d");
  trn->add_option("--arch", tr_arch, "fullnet or halfnet");
  trn->add_option("--channels", tr_channels, "Feature planes; 0 selects 32 (1D) / 64 (2D)");
  trn->add_option("--schedule", tr_schedule, "data1, data1_then_data2 or data1plus2");
  trn->add_option("--loss", tr_loss, "decoded_mse, coefficient_mse or robust_decoded");
  trn->add_option("--steps", tr_steps)->check(CLI::NonNegativeNumber);
  trn->add_option("--phase1-steps", tr_phase1, "Data1 steps of data1_then_data2; negative = steps/2");
  trn->add_option("--batch", tr_batch)->check(CLI::PositiveNumber);
  trn->add_option("--lr", tr_lr);
  trn->add_option("--lr-final", tr_lr_final, "Cosine decay down to this fraction of --lr; 1 = constant");
  trn->add_option("--seed", tr_seed);
  trn->add_option("--log-every", tr_log_every)->check(CLI::PositiveNumber);
  trn->add_option("--checkpoint-every", tr_ckpt_every, "Intermediate checkpoints every K steps (0 = off)");
  trn->add_option("--validate-ratios", tr_ratios, "Comma-separated outlier ratios");
  trn->add_option("--validate-trials", tr_val_trials)->check(CLI::NonNegativeNumber);
  trn->add_option("--validate-seed", tr_val_seed, "Seed of the held-out validation sets");
  trn->add_option("--out", tr_out, "Checkpoint path")->required();

  // ---- bench
  std::string b_spec = "scalar", b_methods = "lse,ransac,irwls", b_ratios = "0,0.1,0.2,0.3,0.4,0.5", b_out;
  int b_trials = 200, b_jobs = 1;
  double b_sigma = -1.0, b_threshold = -1.0;
  std::uint64_t b_seed = 0;
  CLI::App* bch = app.add_subcommand("bench", "Run every method over the outlier-ratio sweep");
  bch->add_option("--spec", b_spec, "scalar, scalar<k> or quad2d");
  bch->add_option("--methods", b_methods, "Comma list of lse, ransac, irwls, label=checkpoint");
  bch->add_option("--ratios", b_ratios, "Comma-separated outlier ratios");
  bch->add_option("--trials", b_trials)->check(CLI::PositiveNumber);
  bch->add_option("--sigma", b_sigma, "Noise; negative selects the table noise");
  bch->add_option("--ransac-threshold", b_threshold, "Negative selects 5x the noise");
  bch->add_option("--seed", b_seed);
  bch->add_option("--jobs", b_jobs)->check(CLI::PositiveNumber);
  bch->add_option("--out", b_out, "CSV path; the table goes to <out>.txt")->required();

  // ---- motion-fit
  std::string m_flow, m_method = "ransac", m_checkpoint, m_theta, m_param, m_residual;
  double m_threshold = 2.5;
  std::uint64_t m_seed = 0;
  CLI::App* mfit = app.add_subcommand("motion-fit", "Fit the dominant quadratic motion of a .flo file");
  mfit->add_option("--flow", m_flow, "Input .flo")->required();
  mfit->add_option("--method", m_method, "lse, ransac, irwls or network");
  mfit->add_option("--checkpoint", m_checkpoint, "Network weights for --method network");
  mfit->add_option("--ransac-threshold", m_threshold, "Inlier residual norm in pixels");
  mfit->add_option("--seed", m_seed, "RANSAC seed");
  mfit->add_option("--out-theta", m_theta, "Text file receiving the 12 coefficients");
  mfit->add_option("--out-flow", m_param, "Parametric flow .flo");
  mfit->add_option("--out-residual", m_residual, "Residual magnitude PGM (255 = max residual)");

  // ---- stabilize
  std::string s_frames, s_flows, s_out, s_border = "black", s_method = "ransac", s_checkpoint;
  int s_window = 1, s_jobs = 1;
  double s_threshold = 2.5;
  std::uint64_t s_seed = 0;
  CLI::App* stab = app.add_subcommand("stabilize", "Backwarp a frame sequence by its dominant motion");
  stab->add_option("--frames", s_frames, "Directory of .pgm/.ppm frames (sorted by name)")->required();
  stab->add_option("--flows", s_flows, "Directory of .flo files, one per consecutive pair")->required();
  stab->add_option("--window", s_window, "Odd moving-average window; 1 locks to the first frame");
  stab->add_option("--border", s_border, "black or clamp");
  stab->add_option("--method", s_method, "lse, ransac, irwls or network");
  stab->add_option("--checkpoint", s_checkpoint, "Network weights for --method network");
  stab->add_option("--ransac-threshold", s_threshold, "Inlier residual norm in pixels");
  stab->add_option("--seed", s_seed, "RANSAC seed");
  stab->add_option("--jobs", s_jobs, "Parallel per-frame fits")->check(CLI::PositiveNumber);
  stab->add_option("--out", s_out, "Output directory")->required();

  for (CLI::App* sub : {gen, fit, trn, bch, mfit, stab}) {
    sub->add_option("--config", "Flat key=value file; explicit flags take precedence");
  }

  std::vector<std::string> args = raw_args;
  try {
    // Locate the subcommand and splice in its config file before the real parse.
    std::size_t sub_index = 0;
    for (std::size_t i = 1; i < args.size(); ++i) {
      if (std::find(kSubcommands.begin(), kSubcommands.end(), args[i]) != kSubcommands.end()) {
        sub_index = i;
        break;
      }
    }
    if (sub_index > 0) {
      std::string config_path;
      for (std::size_t i = sub_index + 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
        if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
      }
      if (!config_path.empty()) args = merge_config(args, sub_index, read_config_file(config_path));
    }
    std::vector<std::string> reversed(args.begin() + 1, args.end());
    std::reverse(reversed.begin(), reversed.end());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  const auto resolved = resolved_options(*sub);
  log_header(err, name, resolved);

  try {
    if (sub == gen) {
      const ModelSpec spec = ModelSpec::parse(gen_spec);
      const DomainGrid grid = default_grid(spec);
      GenScheme scheme = gen_scheme == "evaluation"
                             ? GenScheme::evaluation(spec, gen_ratio, gen_sigma < 0 ? GenScheme::table_noise(spec) : gen_sigma)
                             : GenScheme::parse(spec, gen_scheme);
      fs::create_directories(gen_out);
      for (int k = 0; k < gen_count; ++k) {
        Rng rng(derive_seed(gen_seed, kGenStream, static_cast<std::uint64_t>(k)));
        const TrainingPair pair = generate_pair(spec, scheme, grid, rng);
        char file[32];
        std::snprintf(file, sizeof file, "pair_%05d.%s", k, gen_format.c_str());
        const std::string path = (fs::path(gen_out) / file).string();
        if (gen_format == "bin") {
          write_pair_binary(path, spec, grid, pair);
        } else {
          write_pair(path, spec, grid, pair);
        }
        write_sidecar(path, name, resolved);
      }
      out << "wrote " << gen_count << " pair(s) to " << gen_out << "\n";
      return 0;
    }

    if (sub == fit) {
      const PairFile p = read_pair(fit_input);
      Coefficients theta;
      std::vector<bool> inliers;
      if (fit_method == "network") {
        const auto model = load_network(fit_checkpoint);
        if (!(model->spec() == p.spec) || !(model->grid() == p.grid)) {
          throw ConfigError("checkpoint does not match the pair's spec and grid");
        }
        theta = model->predict(p.pair.input);
      } else if (fit_method == "lse") {
        theta = fit_lse(p.spec, p.grid, p.pair.input);
      } else if (fit_method == "ransac") {
        RansacConfig rc;
        rc.iterations = fit_iterations;
        rc.seed = fit_seed;
        rc.inlier_threshold = fit_threshold > 0 ? fit_threshold : 5.0 * GenScheme::table_noise(p.spec);
        const FitReport r = fit_ransac(p.spec, p.grid, p.pair.input, rc);
        theta = r.theta_hat;
        inliers = r.inlier_mask;
      } else if (fit_method == "irwls") {
        IrwlsConfig ic;
        ic.max_iterations = fit_irwls_iterations;
        const FitReport r = fit_irwls(p.spec, p.grid, p.pair.input, ic);
        theta = r.theta_hat;
        inliers = r.inlier_mask;
      } else {
        throw InvalidArgument("unknown method '" + fit_method + "' (expected lse, ransac, irwls or network)");
      }
      const RangeField fitted = decode(p.spec, theta, p.grid);
      out << std::setprecision(17);
      out << "theta: " << join_doubles(theta) << "\n";
      out << "residual_norm: " << (p.pair.input - fitted).norm() << "\n";
      if (!inliers.empty()) {
        out << "inliers: " << std::count(inliers.begin(), inliers.end(), true) << "/" << inliers.size() << "\n";
      }
      if (p.has_target) out << "error_vs_clean: " << field_error(p.spec, fitted, p.pair.target) << "\n";
      if (p.pair.theta_true.size() == theta.size()) {
        out << "theta_error_max: " << (theta - p.pair.theta_true).cwiseAbs().maxCoeff() << "\n";
      }
      if (!fit_out.empty()) {
        std::ofstream f(fit_out, std::ios::trunc);
        f << std::setprecision(17) << join_doubles(theta) << "\n";
        if (!f) throw std::runtime_error("failed writing " + fit_out);
        write_sidecar(fit_out, name, resolved);
      }
      return 0;
    }

    if (sub == trn) {
      const ModelSpec spec = ModelSpec::parse(tr_spec);
      const DomainGrid grid = default_grid(spec);
      const auto arch = net::parse_architecture(tr_arch);
      const auto ec = net::EncoderConfig::for_spec(spec, grid, arch, GenScheme::input_scale(spec), tr_channels);
      train::TrainConfig tc;
      tc.schedule = train::parse_schedule(tr_schedule);
      tc.loss = train::parse_loss_mode(tr_loss);
      tc.steps = tr_steps;
      tc.phase1_steps = tr_phase1;
      tc.batch_size = tr_batch;
      tc.learning_rate = tr_lr;
      tc.final_lr_fraction = tr_lr_final;
      tc.seed = tr_seed;
      tc.log_every = tr_log_every;
      tc.checkpoint_every = tr_ckpt_every;
      tc.checkpoint_path = tr_out;
      const auto ratios = parse_ratios(tr_ratios);
      tc.validate();

      net::ModelBasedAutoencoder model(spec, grid, ec, tc.seed);
      out << "trainable parameters: " << model.trainable_parameter_count() << "\n";
      auto report = train::train(model, tc, [&](const train::LossRecord& r) {
        out << "step " << r.step << " phase " << r.phase << " loss " << std::setprecision(6) << r.loss << "\n";
        out.flush();
      });
      net::ModelManifest manifest;
      manifest.spec_id = spec.id();
      manifest.encoder = ec;
      manifest.scheme = tr_schedule;
      manifest.seed = tr_seed;
      manifest.steps = tr_steps;
      manifest.extra["loss"] = tr_loss;
      manifest.extra["resample_rule"] = "area-average to the trained grid; values scaled by the size ratio; theta divided by it";
      model.save(tr_out, manifest);
      write_sidecar(tr_out, name, resolved);
      train::write_loss_csv(tr_out + ".loss.csv", report.curve);
      write_sidecar(tr_out + ".loss.csv", name, resolved);
      if (tr_val_trials > 0 && !ratios.empty()) {
        report.validation =
            train::validate(model, ratios, GenScheme::table_noise(spec), tr_val_trials, tr_val_seed);
        std::ofstream v(tr_out + ".validation.csv", std::ios::trunc);
        v << std::setprecision(17) << "ratio,error\n";
        for (const auto& [r, e] : report.validation) {
          v << r << "," << e << "\n";
          out << "validation ratio " << r << " error " << std::setprecision(6) << e << "\n";
        }
        write_sidecar(tr_out + ".validation.csv", name, resolved);
      }
      out << "trained " << tr_steps << " steps in " << std::setprecision(4) << report.wall_seconds << " s; wrote "
          << tr_out << "\n";
      return 0;
    }

    if (sub == bch) {
      bench::BenchSuite suite = bench::BenchSuite::for_spec(ModelSpec::parse(b_spec));
      if (b_sigma >= 0) suite.noise_sigma = b_sigma;
      suite.ratios = parse_ratios(b_ratios);
      suite.trials = b_trials;
      suite.seed = b_seed;
      suite.jobs = b_jobs;
      const double threshold = b_threshold > 0 ? b_threshold : std::max(5.0 * suite.noise_sigma, 1e-6);
      for (const std::string& m : split(b_methods, ',')) {
        bench::Method method = bench::parse_method(m);
        method.ransac.inlier_threshold = threshold;
        suite.methods.push_back(method);
      }
      const bench::BenchResults results = bench::run_suite(suite);
      bench::emit_report(results, b_out);
      write_sidecar(b_out, name, resolved);
      out << bench::render_table(results);
      if (results.total_failures() > 0) {
        err << "error: " << results.total_failures() << " trial(s) failed\n";
        return 1;
      }
      return 0;
    }

    motion::MotionFitConfig mc;
    auto configure_motion = [&](const std::string& method, const std::string& checkpoint, double threshold,
                                std::uint64_t seed) {
      mc.method = motion::parse_fit_method(method);
      mc.ransac.inlier_threshold = threshold;
      mc.ransac.seed = seed;
      if (mc.method == motion::FitMethod::Network) mc.network = load_network(checkpoint);
    };

    if (sub == mfit) {
      configure_motion(m_method, m_checkpoint, m_threshold, m_seed);
      const motion::FlowMap flow = motion::read_flo(m_flow);
      const motion::MotionFit result = motion::fit_dominant_motion(flow, mc);
      double mean_residual = 0.0;
      float max_residual = 0.0f;
      for (float r : result.residual) {
        mean_residual += r;
        max_residual = std::max(max_residual, r);
      }
      mean_residual /= static_cast<double>(result.residual.size());
      out << std::setprecision(17) << "theta: " << join_doubles(result.theta) << "\n";
      out << "mean_residual: " << mean_residual << "\n";
      if (!m_theta.empty()) {
        std::ofstream f(m_theta, std::ios::trunc);
        f << std::setprecision(17) << join_doubles(result.theta) << "\n";
        if (!f) throw std::runtime_error("failed writing " + m_theta);
        write_sidecar(m_theta, name, resolved);
      }
      if (!m_param.empty()) {
        motion::write_flo(result.parametric, m_param);
        write_sidecar(m_param, name, resolved);
      }
      if (!m_residual.empty()) {
        motion::Image img(flow.width, flow.height, 1);
        for (std::size_t i = 0; i < result.residual.size(); ++i) {
          const double s = max_residual > 0 ? result.residual[i] / max_residual : 0.0;
          img.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * s));
        }
        motion::write_pnm(img, m_residual);
        write_sidecar(m_residual, name, resolved);
      }
      return 0;
    }

    if (sub == stab) {
      configure_motion(s_method, s_checkpoint, s_threshold, s_seed);
      const auto frame_files = sorted_files(s_frames, {".pgm", ".ppm"});
      const auto flow_files = sorted_files(s_flows, {".flo"});
      std::vector<motion::Image> frames;
      for (const auto& f : frame_files) frames.push_back(motion::read_pnm(f.string()));
      std::vector<motion::FlowMap> flows;
      for (const auto& f : flow_files) flows.push_back(motion::read_flo(f.string()));
      motion::StabilizationParams params;
      params.smoothing_window = s_window;
      params.border = motion::parse_border_policy(s_border);
      params.jobs = s_jobs;
      const auto result = motion::stabilize_sequence(frames, flows, params, mc);
      fs::create_directories(s_out);
      for (std::size_t t = 0; t < frame_files.size(); ++t) {
        const std::string path = (fs::path(s_out) / frame_files[t].filename()).string();
        motion::write_pnm(result.frames[t], path);
        write_sidecar(path, name, resolved);
      }
      const std::string timeline = (fs::path(s_out) / "theta_timeline.csv").string();
      motion::write_theta_timeline(timeline, result.thetas);
      write_sidecar(timeline, name, resolved);
      out << "stabilized " << frames.size() << " frame(s) into " << s_out << "\n";
      return 0;
    }
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace polyreg::cli
