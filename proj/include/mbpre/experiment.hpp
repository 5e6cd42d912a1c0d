#ifndef MBPRE_EXPERIMENT_HPP
#define MBPRE_EXPERIMENT_HPP

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mbpre/branching.hpp"
#include "mbpre/config.hpp"
#include "mbpre/errors.hpp"
#include "mbpre/matrix_analysis.hpp"
#include "mbpre/parallel.hpp"
#include "mbpre/polling_map.hpp"
#include "mbpre/polling_sim.hpp"
#include "mbpre/tail_stats.hpp"

namespace mbpre {

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitGuard = 3, kExitCapExhausted = 4, kExitRuntime = 1 };

/// Shortest decimal form that round-trips, so data files are byte-stable.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  for (int precision = 6; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

/// CSV file whose first line records the tool version, spec hash and seed.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const ExperimentSpec& spec, const std::vector<std::string>& columns)
      : out_(path) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
    out_ << "# mbpre " << kVersion << " spec_hash=" << hex64(spec.spec_hash) << " seed=" << spec.seed << "\n";
    for (std::size_t k = 0; k < columns.size(); ++k) out_ << (k ? "," : "") << columns[k];
    out_ << "\n";
  }

  template <class... Ts>
  void row(const Ts&... values) {
    bool first = true;
    ((out_ << (first ? "" : ",") << cell(values), first = false), ...);
    out_ << "\n";
  }

 private:
  static std::string cell(double v) { return format_number(v); }
  static std::string cell(bool v) { return v ? "1" : "0"; }
  static std::string cell(const std::string& v) { return v; }
  static std::string cell(const char* v) { return v; }
  template <class T>
    requires std::is_integral_v<T>
  static std::string cell(T v) {
    return std::to_string(v);
  }

  std::ofstream out_;
};

/// Reads one numeric column of a CSV produced by this tool. Rows whose
/// `censored` column is 1 are counted but not returned.
inline SampleSet read_csv_column(const std::string& path, std::string column) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'", "tail.input");
  std::string line;
  std::vector<std::string> header;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
  };
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    header = split(line);
    break;
  }
  if (header.empty()) throw ConfigError("no header row in '" + path + "'", "tail.input");
  if (column.empty()) {
    for (const char* guess : {"theta_total", "theta_P", "phi_total"})
      if (std::find(header.begin(), header.end(), guess) != header.end()) {
        column = guess;
        break;
      }
  }
  const auto col = std::find(header.begin(), header.end(), column);
  if (col == header.end()) throw ConfigError("column '" + column + "' not found in '" + path + "'", "tail.column");
  const std::size_t ci = static_cast<std::size_t>(col - header.begin());
  const auto cens = std::find(header.begin(), header.end(), "censored");
  SampleSet s;
  s.source = path;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split(line);
    if (cells.size() != header.size())
      throw ConfigError("row " + std::to_string(line_no) + " has " + std::to_string(cells.size()) + " cells", "tail.input");
    if (cens != header.end() && cells[static_cast<std::size_t>(cens - header.begin())] == "1") {
      ++s.censored;
      continue;
    }
    s.values.push_back(std::stod(cells[ci]));
  }
  return s;
}

struct ExperimentResult {
  int exit_code = kExitOk;
  std::vector<std::string> files;
  std::string summary;
};

namespace experiment_detail {

inline void write_tail_files(const std::filesystem::path& dir, const std::string& prefix, const ExperimentSpec& spec,
                             const SampleSet& samples, const TailFit& fit, std::vector<std::string>& files) {
  {
    CsvWriter w(dir / (prefix + "hill_plot.csv"), spec, {"k", "hill_index"});
    for (const auto& p : fit.hill_plot) w.row(p.k, p.index);
  }
  {
    CsvWriter w(dir / (prefix + "ccdf.csv"), spec, {"y", "ccdf"});
    for (const auto& [y, p] : empirical_ccdf(samples, log_grid(samples))) w.row(y, p);
  }
  files.push_back(prefix + "hill_plot.csv");
  files.push_back(prefix + "ccdf.csv");
}

inline std::optional<TailFit> try_fit(const SampleSet& samples, const ExperimentSpec& spec, std::ostream& summary,
                                      const std::string& label) {
  try {
    TailFit f = hill_estimator(samples, spec.hill_k);
    summary << label << " hill_index = " << format_number(f.hill_index) << " CI [" << format_number(f.ci_lo) << ", "
            << format_number(f.ci_hi) << "] k = " << f.k_used << " n = " << f.n
            << " hill_plot_spread = " << format_number(f.plot_spread) << (f.plot_flat ? " (flat)" : " (not flat)")
            << (f.unreliable ? " UNRELIABLE" : "") << "\n";
    return f;
  } catch (const StatisticsError& e) {
    summary << label << " tail fit unavailable: " << e.what() << "\n";
    return std::nullopt;
  }
}

inline void censoring_note(const SampleSet& s, const std::string& label, std::ostream& summary) {
  summary << label << " censored = " << s.censored << " of " << (s.censored + s.size()) << " ("
          << format_number(100.0 * s.censored_fraction()) << "%)\n";
  if (s.heavily_censored())
    summary << "WARNING: " << label << " censored fraction above 1%; tail fits are unreliable\n";
}

inline std::vector<LifePeriodRecord> life_periods(const ProcessConfig& config, std::size_t n, const RandomStream& root,
                                                  std::size_t workers) {
  return run_replicates(n, workers, [&](std::size_t r) {
    RandomStream rng = root.substream(r);
    return simulate_life_period(config, rng);
  });
}

inline SampleSet write_life_periods(const std::filesystem::path& file, const ExperimentSpec& spec,
                                    const std::vector<LifePeriodRecord>& recs) {
  CsvWriter w(file, spec, {"replica_id", "upsilon", "theta_total", "censored", "max_population"});
  SampleSet s;
  s.seed = spec.seed;
  s.source = file.string();
  for (std::size_t r = 0; r < recs.size(); ++r) {
    const auto& rec = recs[r];
    w.row(r, rec.upsilon, rec.theta_total, rec.censored, rec.max_population);
    if (rec.censored) ++s.censored;
    else s.values.push_back(rec.theta_total);
  }
  return s;
}

inline SampleSet write_polling(const std::filesystem::path& file, const ExperimentSpec& spec,
                               const std::vector<PollingRecord>& recs) {
  CsvWriter w(file, spec,
              {"replica_id", "theta_P", "duration_services", "duration_switchover", "n_cycles", "n_services", "censored"});
  SampleSet s;
  s.seed = spec.seed;
  s.source = file.string();
  for (std::size_t r = 0; r < recs.size(); ++r) {
    const auto& rec = recs[r];
    w.row(r, rec.theta_P, rec.duration_services, rec.duration_switchover, rec.n_cycles, rec.n_services, rec.censored);
    if (rec.censored) ++s.censored;
    else s.values.push_back(rec.theta_P);
  }
  return s;
}

inline double sample_mean(const SampleSet& s) {
  double m = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) m += (s.values[k] - m) / static_cast<double>(k + 1);
  return m;
}

inline double sample_sd(const SampleSet& s) {
  const double m = sample_mean(s);
  double q = 0.0;
  for (double v : s.values) q += (v - m) * (v - m);
  return s.size() > 1 ? std::sqrt(q / static_cast<double>(s.size() - 1)) : 0.0;
}

inline void run_analyze(const ExperimentSpec& spec, const std::filesystem::path& dir, std::ostream& summary,
                        ExperimentResult& result) {
  const EnvironmentDistribution dist =
      spec.environment ? *spec.environment
                       : associated_environment(spec.polling->cycles, spec.polling->disciplines, spec.polling->mode,
                                                spec.polling->start_station);
  const RandomStream root(spec.seed);
  const AnalysisReport report = classify(dist, spec.analysis, root);
  {
    CsvWriter w(dir / "s_curve.csv", spec, {"x", "s_hat", "ci_lo", "ci_hi"});
    for (const auto& p : report.s_curve) w.row(p.x, p.s_hat, p.ci_lo, p.ci_hi);
  }
  {
    CsvWriter w(dir / "kappa_search.csv", spec, {"x", "s_hat", "ci_lo", "ci_hi"});
    for (const auto& p : report.kappa.s_curve) w.row(p.x, p.s_hat, p.ci_lo, p.ci_hi);
  }
  result.files.insert(result.files.end(), {"s_curve.csv", "kappa_search.csv"});

  summary << "types = " << dist.types() << ", atoms = " << dist.size() << ", norm = " << report.norm << "\n";
  summary << "alpha = " << format_number(report.alpha.alpha) << " CI [" << format_number(report.alpha.ci_lo) << ", "
          << format_number(report.alpha.ci_hi) << "] (n = " << report.alpha.horizon
          << ", replicates = " << report.alpha.replicates << ")\n";
  summary << "alpha_tail = " << format_number(report.alpha.tail_alpha) << " CI [" << format_number(report.alpha.tail_ci_lo)
          << ", " << format_number(report.alpha.tail_ci_hi) << "]\n";
  if (dist.closed_form_moments()) summary << "alpha_closed_form = " << format_number(alpha_closed_form(dist)) << "\n";
  summary << "classification = " << to_string(report.classification) << "\n";
  summary << "kappa = " << format_number(report.kappa.kappa) << " (" << to_string(report.kappa.kind) << ", method "
          << to_string(report.kappa.method) << ") CI [" << format_number(report.kappa.ci_lo) << ", "
          << format_number(report.kappa.ci_hi) << "]\n";
  for (const auto& p : report.s_curve)
    if (p.unreliable) summary << "s(" << format_number(p.x) << ") unreliable: relative CI too wide\n";

  const double k0 = report.kappa.kind == KappaEstimate::Kind::finite ? report.kappa.kappa : 1.0;
  RandomStream krng = root.substream(3);
  const KestenReport kr = kesten_check(dist, k0, spec.kesten_samples, krng);
  {
    CsvWriter w(dir / "kesten.csv", spec, {"condition", "status", "detail"});
    for (const auto& e : kr.entries) {
      std::string d = e.detail;
      std::replace(d.begin(), d.end(), ',', ';');
      w.row(e.name, to_string(e.status), d);
    }
  }
  result.files.push_back("kesten.csv");
  summary << "kesten conditions at kappa0 = " << format_number(k0) << ":\n";
  for (const auto& e : kr.entries) summary << "  " << e.name << ": " << to_string(e.status) << " - " << e.detail << "\n";
}

}  // namespace experiment_detail

/// Runs one experiment, writing CSV data files and summary.txt into the
/// output directory. Returns the process exit code; configuration and guard
/// errors are reported through exceptions by the parser, runtime caps
/// through the exit code.
inline ExperimentResult run_experiment(const ExperimentSpec& spec) {
  using namespace experiment_detail;
  namespace fs = std::filesystem;
  const fs::path dir(spec.out);
  fs::create_directories(dir);
  ExperimentResult result;
  std::ostringstream summary;
  summary << "mbpre " << kVersion << "\ncommand = " << to_string(spec.command) << "\nspec_hash = " << hex64(spec.spec_hash)
          << "\nseed = " << spec.seed << "\nreplicates = " << spec.replicates << "\n";
  const RandomStream root(spec.seed);
  double censored_fraction = 0.0;

  switch (spec.command) {
    case Command::analyze:
      run_analyze(spec, dir, summary, result);
      break;

    case Command::simulate_branching: {
      const auto recs = life_periods(*spec.process, spec.replicates, root, spec.workers);
      const SampleSet s = write_life_periods(dir / "life_periods.csv", spec, recs);
      result.files.push_back("life_periods.csv");
      censoring_note(s, "life periods", summary);
      censored_fraction = s.censored_fraction();
      if (auto f = try_fit(s, spec, summary, "theta_total")) write_tail_files(dir, "", spec, s, *f, result.files);
      break;
    }

    case Command::simulate_polling: {
      const PollingConfig& pc = *spec.polling;
      const auto recs = run_replicates(spec.replicates, spec.workers, [&](std::size_t r) {
        RandomStream rng = root.substream(r);
        return spec.period == PollingPeriod::busy ? run_busy_period(pc, rng) : run_generalized_busy_period(pc, rng);
      });
      const SampleSet s = write_polling(dir / "polling.csv", spec, recs);
      result.files.push_back("polling.csv");
      summary << "period = " << (spec.period == PollingPeriod::busy ? "busy" : "generalized")
              << ", final_product = " << to_string(pc.mode) << "\n";
      censoring_note(s, "polling periods", summary);
      censored_fraction = s.censored_fraction();
      if (auto f = try_fit(s, spec, summary, "theta_P")) write_tail_files(dir, "", spec, s, *f, result.files);
      break;
    }

    case Command::validate_equivalence: {
      const PollingConfig& pc = *spec.polling;
      const auto polling = run_replicates(spec.replicates, spec.workers, [&](std::size_t r) {
        RandomStream rng = root.substream(r);
        return run_generalized_busy_period(pc, rng);
      });
      ProcessConfig branching{associated_environment(pc.cycles, pc.disciplines, pc.mode, pc.start_station)};
      CountVector start(pc.stations(), 0);
      start[0] = 1;  // station J after relabelling
      branching.initial = InitialState{start, 0.0};
      branching.generation_cap = pc.max_cycles;
      const auto lives = life_periods(branching, spec.replicates, root.substream(0xB4A7C41Eull), spec.workers);
      const SampleSet a = write_polling(dir / "polling.csv", spec, polling);
      const SampleSet b = write_life_periods(dir / "life_periods.csv", spec, lives);
      result.files.insert(result.files.end(), {"polling.csv", "life_periods.csv"});
      summary << "final_product = " << to_string(pc.mode) << ", start_station = " << pc.start_station + 1 << "\n";
      censoring_note(a, "generalized busy periods", summary);
      censoring_note(b, "branching life periods", summary);
      censored_fraction = std::max(a.censored_fraction(), b.censored_fraction());
      auto fa = try_fit(a, spec, summary, "polling theta_P");
      auto fb = try_fit(b, spec, summary, "branching theta_total");
      if (fa) write_tail_files(dir, "polling_", spec, a, *fa, result.files);
      if (fb) write_tail_files(dir, "branching_", spec, b, *fb, result.files);
      const double ma = sample_mean(a), mb = sample_mean(b);
      const double se = std::sqrt(std::pow(sample_sd(a), 2) / std::max<double>(1, a.size()) +
                                  std::pow(sample_sd(b), 2) / std::max<double>(1, b.size()));
      summary << "mean polling = " << format_number(ma) << ", mean branching = " << format_number(mb)
              << ", |diff| / joint sd = " << format_number(se > 0 ? std::abs(ma - mb) / se : 0.0) << "\n";
      try {
        const KsResult ks = ks_two_sample(a, b);
        summary << "ks_statistic = " << format_number(ks.statistic) << "\nks_p_value = " << format_number(ks.p_value)
                << "\ninvariant ks_p_value > 0.01: " << (ks.p_value > 0.01 ? "pass" : "fail") << "\n";
      } catch (const StatisticsError& e) {
        summary << "ks unavailable: " << e.what() << "\n";
      }
      if (fa && fb) {
        const bool overlap = fa->ci_lo <= fb->ci_hi && fb->ci_lo <= fa->ci_hi;
        summary << "invariant hill CIs overlap: " << (overlap ? "pass" : "fail") << "\n";
      }
      break;
    }

    case Command::tail_fit: {
      SampleSet s = read_csv_column(spec.tail_input, spec.tail_column);
      s.seed = spec.seed;
      summary << "input = " << spec.tail_input << "\n";
      censoring_note(s, "input rows", summary);
      censored_fraction = s.censored_fraction();
      if (auto f = try_fit(s, spec, summary, "sample")) write_tail_files(dir, "", spec, s, *f, result.files);
      break;
    }
  }

  if (censored_fraction > spec.max_censored_fraction) {
    summary << "cap exhaustion: censored fraction " << format_number(censored_fraction) << " exceeds "
            << format_number(spec.max_censored_fraction) << "\n";
    result.exit_code = kExitCapExhausted;
  }
  result.summary = summary.str();
  std::ofstream(dir / "summary.txt") << result.summary;
  result.files.push_back("summary.txt");
  return result;
}

}  // namespace mbpre

#endif  // MBPRE_EXPERIMENT_HPP
