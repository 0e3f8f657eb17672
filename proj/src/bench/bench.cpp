#include "polyreg/bench/bench.hpp"

#include "polyreg/datagen/generator.hpp"
#include "polyreg/errors.hpp"
#include "polyreg/net/encoder.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <memory>
#include <sstream>
#include <thread>

namespace polyreg::bench {

namespace {

constexpr std::uint64_t kRansacStream = 0xBA5AC0;

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

struct LoadedMethod {
  const Method* method = nullptr;
  std::shared_ptr<const net::ModelBasedAutoencoder> model;
};

CellResult run_cell(const BenchSuite& suite, const LoadedMethod& lm, std::size_t ratio_index,
                    const std::vector<TrainingPair>& pairs) {
  const Method& method = *lm.method;
  const double ratio = suite.ratios[ratio_index];
  std::vector<double> errors;
  int failures = 0;
  if (method.kind == MethodKind::Network) {
    constexpr std::size_t kChunk = 32;
    for (std::size_t start = 0; start < pairs.size(); start += kChunk) {
      std::vector<RangeField> inputs;
      for (std::size_t t = start; t < std::min(pairs.size(), start + kChunk); ++t) inputs.push_back(pairs[t].input);
      const auto thetas = lm.model->predict_batch(inputs);
      for (std::size_t k = 0; k < thetas.size(); ++k) {
        errors.push_back(field_error(suite.spec, decode(suite.spec, thetas[k], suite.grid), pairs[start + k].target));
      }
    }
  } else {
    const DesignMatrix design = build_design_matrix(suite.spec, suite.grid);
    for (std::size_t t = 0; t < pairs.size(); ++t) {
      try {
        Coefficients theta;
        switch (method.kind) {
          case MethodKind::Lse: theta = fit_lse(design, pairs[t].input); break;
          case MethodKind::Ransac: {
            RansacConfig rc = method.ransac;
            rc.seed = derive_seed(suite.seed ^ rc.seed, kRansacStream + static_cast<std::uint64_t>(std::llround(ratio * 1000)), t);
            theta = fit_ransac(suite.spec, suite.grid, pairs[t].input, rc).theta_hat;
            break;
          }
          case MethodKind::Irwls: theta = fit_irwls(suite.spec, suite.grid, pairs[t].input, method.irwls).theta_hat; break;
          case MethodKind::Network: break;
        }
        errors.push_back(field_error(suite.spec, design * theta, pairs[t].target));
      } catch (const std::runtime_error&) {
        ++failures;
      }
    }
  }
  CellResult cell;
  cell.method = method.name;
  cell.ratio = ratio;
  cell.trials = static_cast<int>(pairs.size());
  cell.failures = failures;
  if (!errors.empty()) {
    double sum = 0.0;
    for (double e : errors) sum += e;
    cell.mean = sum / static_cast<double>(errors.size());
    double sq = 0.0;
    for (double e : errors) sq += (e - cell.mean) * (e - cell.mean);
    cell.std = errors.size() > 1 ? std::sqrt(sq / static_cast<double>(errors.size() - 1)) : 0.0;
  } else {
    cell.mean = std::nan("");
    cell.std = std::nan("");
  }
  return cell;
}

}  // namespace

Method parse_method(const std::string& text) {
  Method m;
  m.name = text;
  if (text == "lse") return m;
  if (text == "ransac") {
    m.kind = MethodKind::Ransac;
    return m;
  }
  if (text == "irwls") {
    m.kind = MethodKind::Irwls;
    return m;
  }
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == text.size()) {
    throw InvalidArgument("unknown method '" + text + "' (expected lse, ransac, irwls or label=checkpoint)");
  }
  m.kind = MethodKind::Network;
  m.name = text.substr(0, eq);
  m.checkpoint = text.substr(eq + 1);
  return m;
}

BenchSuite BenchSuite::for_spec(const ModelSpec& spec) {
  BenchSuite s;
  s.spec = spec;
  s.grid = default_grid(spec);
  s.noise_sigma = GenScheme::table_noise(spec);
  return s;
}

void BenchSuite::validate() const {
  if (trials < 1) throw InvalidArgument("trials must be at least 1");
  if (jobs < 1) throw InvalidArgument("jobs must be at least 1");
  if (!(noise_sigma >= 0.0)) throw InvalidArgument("noise sigma must be non-negative");
  for (double r : ratios) {
    if (!(r >= 0.0 && r < 1.0)) throw InvalidArgument("outlier ratios must lie in [0, 1)");
  }
  for (std::size_t i = 0; i < methods.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (methods[i].name == methods[j].name) throw InvalidArgument("duplicate method name '" + methods[i].name + "'");
    }
  }
}

const CellResult& BenchResults::cell(std::size_t method, std::size_t ratio) const {
  return cells.at(method * ratios.size() + ratio);
}

double BenchResults::average(std::size_t method) const {
  if (ratios.empty()) return std::nan("");
  double sum = 0.0;
  for (std::size_t r = 0; r < ratios.size(); ++r) sum += cell(method, r).mean;
  return sum / static_cast<double>(ratios.size());
}

std::size_t BenchResults::best_in_column(std::size_t ratio) const {
  std::size_t best = 0;
  for (std::size_t m = 1; m < methods.size(); ++m) {
    if (cell(m, ratio).mean < cell(best, ratio).mean) best = m;
  }
  return best;
}

std::size_t BenchResults::best_average() const {
  std::size_t best = 0;
  for (std::size_t m = 1; m < methods.size(); ++m) {
    if (average(m) < average(best)) best = m;
  }
  return best;
}

int BenchResults::total_failures() const {
  int n = 0;
  for (const CellResult& c : cells) n += c.failures;
  return n;
}

BenchResults run_suite(const BenchSuite& suite) {
  suite.validate();
  std::vector<LoadedMethod> loaded;
  for (const Method& m : suite.methods) {
    LoadedMethod lm{&m, nullptr};
    if (m.kind == MethodKind::Network) {
      std::shared_ptr<net::ModelBasedAutoencoder> model;
      try {
        model = net::ModelBasedAutoencoder::load(m.checkpoint);
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception& e) {
        throw ConfigError("cannot load checkpoint for '" + m.name + "': " + e.what());
      }
      if (!(model->spec() == suite.spec) || !(model->grid() == suite.grid)) {
        throw ConfigError("checkpoint for '" + m.name + "' was trained for " + model->spec().id() +
                          " on a different grid than the suite");
      }
      lm.model = std::move(model);
    }
    loaded.push_back(lm);
  }

  BenchResults results;
  for (const Method& m : suite.methods) results.methods.push_back(m.name);
  results.ratios = suite.ratios;
  std::vector<std::vector<TrainingPair>> sets;
  for (double r : suite.ratios) {
    sets.push_back(evaluation_set(suite.spec, suite.grid, r, suite.noise_sigma, suite.trials, suite.seed));
  }

  const std::size_t n_cells = suite.methods.size() * suite.ratios.size();
  results.cells.resize(n_cells);
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t k = next++; k < n_cells; k = next++) {
      const std::size_t m = k / suite.ratios.size();
      const std::size_t r = k % suite.ratios.size();
      try {
        results.cells[k] = run_cell(suite, loaded[m], r, sets[r]);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const int workers = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(suite.jobs), std::max<std::size_t>(n_cells, 1)));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  return results;
}

std::string render_table(const BenchResults& results) {
  std::ostringstream out;
  std::size_t name_w = 6;
  for (const auto& m : results.methods) name_w = std::max(name_w, m.size());
  out << std::left << std::setw(static_cast<int>(name_w)) << "method";
  for (double r : results.ratios) out << "  " << std::right << std::setw(11) << (std::to_string(std::lround(r * 100)) + "%");
  out << "  " << std::setw(11) << "Average" << "\n";
  std::vector<std::size_t> best(results.ratios.size());
  for (std::size_t r = 0; r < results.ratios.size(); ++r) best[r] = results.best_in_column(r);
  const std::size_t best_avg = results.methods.empty() ? 0 : results.best_average();
  auto entry = [](double v, bool mark) {
    std::ostringstream s;
    s << std::scientific << std::setprecision(3) << v << (mark ? "*" : " ");
    return s.str();
  };
  for (std::size_t m = 0; m < results.methods.size(); ++m) {
    out << std::left << std::setw(static_cast<int>(name_w)) << results.methods[m];
    for (std::size_t r = 0; r < results.ratios.size(); ++r) {
      out << "  " << std::right << std::setw(11) << entry(results.cell(m, r).mean, best[r] == m);
    }
    out << "  " << std::setw(11) << entry(results.average(m), best_avg == m) << "\n";
  }
  return out.str();
}

void write_csv(const BenchResults& results, std::ostream& out) {
  out << "method,ratio,mean,std,trials\n";
  for (const CellResult& c : results.cells) {
    out << c.method << ',' << format_double(c.ratio) << ',' << format_double(c.mean) << ',' << format_double(c.std)
        << ',' << c.trials << '\n';
  }
}

BenchResults read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "method,ratio,mean,std,trials") throw FormatError("not a bench CSV");
  BenchResults results;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != 5) throw FormatError("bench CSV row needs 5 fields: " + line);
    CellResult c;
    try {
      c.method = fields[0];
      c.ratio = std::stod(fields[1]);
      c.mean = std::stod(fields[2]);
      c.std = std::stod(fields[3]);
      c.trials = std::stoi(fields[4]);
    } catch (const std::exception&) {
      throw FormatError("malformed bench CSV row: " + line);
    }
    if (std::find(results.methods.begin(), results.methods.end(), c.method) == results.methods.end()) {
      results.methods.push_back(c.method);
    }
    if (results.methods.size() == 1) results.ratios.push_back(c.ratio);
    results.cells.push_back(c);
  }
  if (results.cells.size() != results.methods.size() * results.ratios.size()) {
    throw FormatError("bench CSV is not a full method x ratio table");
  }
  return results;
}

void emit_report(const BenchResults& results, const std::string& csv_path) {
  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot open " + csv_path + " for writing");
  write_csv(results, csv);
  std::ofstream txt(csv_path + ".txt", std::ios::trunc);
  if (!txt) throw std::runtime_error("cannot open " + csv_path + ".txt for writing");
  txt << render_table(results);
  if (!csv || !txt) throw std::runtime_error("failed writing the bench report");
}

}  // namespace polyreg::bench
