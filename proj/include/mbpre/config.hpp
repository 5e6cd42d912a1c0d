#ifndef MBPRE_CONFIG_HPP
#define MBPRE_CONFIG_HPP

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mbpre/branching.hpp"
#include "mbpre/environment.hpp"
#include "mbpre/errors.hpp"
#include "mbpre/matrix_analysis.hpp"
#include "mbpre/polling_map.hpp"
#include "mbpre/polling_sim.hpp"

namespace mbpre {

inline constexpr const char* kVersion = "0.1.0";

enum class Command { analyze, simulate_branching, simulate_polling, validate_equivalence, tail_fit };

inline const char* to_string(Command c) {
  switch (c) {
    case Command::analyze: return "analyze";
    case Command::simulate_branching: return "simulate-branching";
    case Command::simulate_polling: return "simulate-polling";
    case Command::validate_equivalence: return "validate-equivalence";
    case Command::tail_fit: return "tail-fit";
  }
  return "?";
}

enum class PollingPeriod { busy, generalized };

/// A parsed and validated experiment description.
struct ExperimentSpec {
  Command command = Command::analyze;
  std::uint64_t seed = 1;
  std::size_t replicates = 10000;
  std::size_t workers = 1;
  std::string out = "out";
  double max_censored_fraction = 0.01;

  std::optional<EnvironmentDistribution> environment;
  std::optional<ProcessConfig> process;
  std::optional<PollingConfig> polling;
  PollingPeriod period = PollingPeriod::generalized;

  AnalysisParams analysis;
  std::size_t kesten_samples = 10000;

  std::optional<std::size_t> hill_k;
  std::string tail_input;
  std::string tail_column;

  std::uint64_t spec_hash = 0;
};

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

namespace config_detail {

using json = nlohmann::json;

inline std::string at(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }
inline std::string at(const std::string& path, std::size_t index) { return path + "[" + std::to_string(index) + "]"; }

/// Rejects keys outside `allowed`, so a misspelt option is not silently ignored.
inline void known_keys(const json& j, const std::string& path, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ConfigError("expected an object", path.empty() ? "<config>" : path);
  for (const auto& [key, value] : j.items())
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) throw ConfigError("unknown key", at(path, key));
}

inline const json& require(const json& j, const std::string& path, const std::string& key) {
  if (!j.is_object()) throw ConfigError("expected an object", path);
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError("missing required field", at(path, key));
  return *it;
}

inline double number(const json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError("expected a number", path);
  return j.get<double>();
}

inline double number(const json& j, const std::string& path, const std::string& key, double fallback) {
  auto it = j.find(key);
  return it == j.end() ? fallback : number(*it, at(path, key));
}

inline std::uint64_t count(const json& j, const std::string& path) {
  if (!j.is_number_integer() || j.get<long long>() < 0)
    throw ConfigError("expected a nonnegative integer", path);
  return j.get<std::uint64_t>();
}

inline std::uint64_t count(const json& j, const std::string& path, const std::string& key, std::uint64_t fallback) {
  auto it = j.find(key);
  return it == j.end() ? fallback : count(*it, at(path, key));
}

inline std::string text(const json& j, const std::string& path) {
  if (!j.is_string()) throw ConfigError("expected a string", path);
  return j.get<std::string>();
}

inline std::string text(const json& j, const std::string& path, const std::string& key, const std::string& fallback) {
  auto it = j.find(key);
  return it == j.end() ? fallback : text(*it, at(path, key));
}

inline Vector numbers(const json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError("expected an array of numbers", path);
  Vector v;
  for (std::size_t k = 0; k < j.size(); ++k) v.push_back(number(j[k], at(path, k)));
  return v;
}

inline Vector rates(const json& j, const std::string& path) {
  Vector v = numbers(j, path);
  for (std::size_t k = 0; k < v.size(); ++k)
    if (!(v[k] >= 0.0) || !std::isfinite(v[k])) throw ConfigError("must be finite and >= 0", at(path, k));
  return v;
}

inline Matrix matrix(const json& j, const std::string& path, std::size_t rows, std::size_t cols) {
  if (!j.is_array() || j.size() != rows)
    throw ConfigError("expected " + std::to_string(rows) + " rows", path);
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const Vector row = numbers(j[r], at(path, r));
    if (row.size() != cols) throw ConfigError("expected " + std::to_string(cols) + " entries", at(path, r));
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = row[c];
  }
  return m;
}

/// Runs a factory and attaches `path` to any ConfigError it throws.
template <class F>
auto with_path(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const GuardViolation& e) {
    if (!e.path().empty()) throw;
    throw GuardViolation(e.what(), path);
  } catch (const ConfigError& e) {
    if (!e.path().empty()) throw;
    throw ConfigError(e.what(), path);
  }
}

inline AmountLaw parse_amount(const json& j, const std::string& path) {
  if (j.is_number()) return with_path(path, [&] { return AmountLaw::deterministic(j.get<double>()); });
  const std::string family = text(require(j, path, "family"), at(path, "family"));
  if (family == "deterministic")
    return with_path(at(path, "value"), [&] { return AmountLaw::deterministic(number(require(j, path, "value"), at(path, "value"))); });
  if (family == "exponential")
    return with_path(at(path, "mean"), [&] { return AmountLaw::exponential(number(require(j, path, "mean"), at(path, "mean"))); });
  if (family == "gamma")
    return with_path(path, [&] {
      return AmountLaw::gamma(number(require(j, path, "shape"), at(path, "shape")),
                              number(require(j, path, "mean"), at(path, "mean")));
    });
  if (family == "lognormal")
    return with_path(path, [&] {
      return AmountLaw::lognormal(number(require(j, path, "mu"), at(path, "mu")),
                                  number(require(j, path, "sigma"), at(path, "sigma")));
    });
  throw ConfigError("unknown amount family '" + family + "' (deterministic, exponential, gamma, lognormal)",
                    at(path, "family"));
}

inline CountLaw parse_counts(const json& j, const std::string& path, std::size_t m) {
  if (j.is_string() && j.get<std::string>() == "zero") return CountLaw::zero(m);
  const std::string family = text(require(j, path, "family"), at(path, "family"));
  auto sized = [&](const Vector& v, const std::string& key) {
    if (v.size() != m) throw ConfigError("expected " + std::to_string(m) + " entries", at(path, key));
    return v;
  };
  if (family == "zero") return CountLaw::zero(m);
  if (family == "poisson") return CountLaw::poisson(sized(rates(require(j, path, "means"), at(path, "means")), "means"));
  if (family == "geometric")
    return CountLaw::geometric(sized(rates(require(j, path, "means"), at(path, "means")), "means"));
  if (family == "categorical" || family == "bernoulli")
    return with_path(at(path, "probs"), [&] {
      return CountLaw::categorical(sized(rates(require(j, path, "probs"), at(path, "probs")), "probs"),
                                   count(j, path, "trials", 1));
    });
  if (family == "degenerate") {
    const json& c = require(j, path, "counts");
    if (!c.is_array() || c.size() != m) throw ConfigError("expected " + std::to_string(m) + " counts", at(path, "counts"));
    CountVector v;
    for (std::size_t k = 0; k < m; ++k) v.push_back(count(c[k], at(at(path, "counts"), k)));
    return CountLaw::degenerate(std::move(v));
  }
  throw ConfigError("unknown count family '" + family + "' (zero, poisson, geometric, categorical, degenerate)",
                    at(path, "family"));
}

inline EnvironmentDistribution parse_environment(const json& j, const std::string& path) {
  known_keys(j, path, {"types", "atoms", "estimation_draws"});
  const json& atoms = require(j, path, "atoms");
  const std::string apath = at(path, "atoms");
  if (!atoms.is_array() || atoms.empty()) throw ConfigError("expected a nonempty array", apath);
  const std::size_t m = count(require(j, path, "types"), at(path, "types"));
  if (m == 0) throw ConfigError("must be >= 1", at(path, "types"));
  std::vector<std::pair<double, std::shared_ptr<const EnvironmentLaw>>> laws;
  for (std::size_t k = 0; k < atoms.size(); ++k) {
    const std::string p = at(apath, k);
    const json& a = atoms[k];
    known_keys(a, p, {"weight", "offspring", "immigration"});
    const double w = number(a, p, "weight", atoms.size() == 1 ? 1.0 : NAN);
    if (!(w > 0.0)) throw ConfigError("must be > 0", at(p, "weight"));
    const json& off = require(a, p, "offspring");
    if (!off.is_array() || off.size() != m)
      throw ConfigError("expected one law per type (" + std::to_string(m) + ")", at(p, "offspring"));
    std::vector<ParentLaw> parents;
    for (std::size_t i = 0; i < m; ++i) {
      const std::string op = at(at(p, "offspring"), i);
      parents.push_back({parse_counts(require(off[i], op, "children"), at(op, "children"), m),
                         off[i].contains("product") ? parse_amount(off[i]["product"], at(op, "product"))
                                                    : AmountLaw::deterministic(0.0)});
    }
    ImmigrationLaw imm{CountLaw::zero(m), AmountLaw::deterministic(0.0)};
    if (a.contains("immigration")) {
      const std::string ip = at(p, "immigration");
      const json& im = a["immigration"];
      if (im.contains("arrivals")) imm.arrivals = parse_counts(im["arrivals"], at(ip, "arrivals"), m);
      if (im.contains("product")) imm.product = parse_amount(im["product"], at(ip, "product"));
    }
    laws.emplace_back(w, std::make_shared<ParametricEnvironment>(std::move(parents), std::move(imm)));
  }
  EnvironmentOptions opts;
  opts.estimation_draws = count(j, path, "estimation_draws", opts.estimation_draws);
  return with_path(path, [&] { return EnvironmentDistribution(std::move(laws), opts); });
}

inline ProcessMode parse_mode(const std::string& s, const std::string& path) {
  if (s == "with_immigration" || s == "MBPIFPRE") return ProcessMode::with_immigration;
  if (s == "final_product" || s == "MBPFPRE") return ProcessMode::final_product;
  if (s == "plain" || s == "MBPRE") return ProcessMode::plain;
  throw ConfigError("unknown mode '" + s + "' (with_immigration, final_product, plain)", path);
}

inline ProcessConfig parse_process(const json* j, const std::string& path, EnvironmentDistribution env) {
  ProcessConfig c{std::move(env)};
  if (j != nullptr) {
    known_keys(*j, path, {"mode", "generation_cap", "population_cap", "initial"});
    c.mode = parse_mode(text(*j, path, "mode", "with_immigration"), at(path, "mode"));
    c.generation_cap = count(*j, path, "generation_cap", c.generation_cap);
    c.population_cap = count(*j, path, "population_cap", c.population_cap);
    if (j->contains("initial")) {
      const json& in = (*j)["initial"];
      const std::string ip = at(path, "initial");
      if (in.is_string()) {
        if (in.get<std::string>() != "first_immigration")
          throw ConfigError("expected \"first_immigration\" or {counts, theta}", ip);
      } else {
        const json& cs = require(in, ip, "counts");
        if (!cs.is_array()) throw ConfigError("expected an array", at(ip, "counts"));
        CountVector v;
        for (std::size_t k = 0; k < cs.size(); ++k) v.push_back(count(cs[k], at(at(ip, "counts"), k)));
        c.initial = InitialState{std::move(v), number(in, ip, "theta", 0.0)};
      }
    }
  }
  c.validate();
  return c;
}

inline Discipline parse_discipline(const json& j, const std::string& path) {
  const std::string s = text(j, path);
  if (s == "gated") return Discipline::gated;
  if (s == "exhaustive") return Discipline::exhaustive;
  throw ConfigError("unknown discipline '" + s + "' (gated, exhaustive)", path);
}

inline FinalProductMode parse_product_mode(const std::string& s, const std::string& path) {
  if (s == "service_time") return FinalProductMode::service_time;
  if (s == "service_plus_switchover") return FinalProductMode::service_plus_switchover;
  if (s == "unit") return FinalProductMode::unit;
  throw ConfigError("unknown final product '" + s + "' (service_time, service_plus_switchover, unit)", path);
}

inline PollingConfig parse_polling(const json& j, const std::string& path) {
  known_keys(j, path, {"disciplines", "start_station", "final_product", "max_cycles", "max_services", "cycles"});
  PollingConfig c;
  const json& st = require(j, path, "disciplines");
  if (!st.is_array() || st.empty()) throw ConfigError("expected a nonempty array", at(path, "disciplines"));
  const std::size_t m = st.size();
  for (std::size_t i = 0; i < m; ++i) c.disciplines.push_back(parse_discipline(st[i], at(at(path, "disciplines"), i)));
  const std::uint64_t start = count(j, path, "start_station", 1);
  if (start < 1 || start > m) throw ConfigError("must be between 1 and " + std::to_string(m), at(path, "start_station"));
  c.start_station = start - 1;
  c.mode = parse_product_mode(text(j, path, "final_product", "service_time"), at(path, "final_product"));
  c.max_cycles = count(j, path, "max_cycles", c.max_cycles);
  c.max_services = count(j, path, "max_services", c.max_services);
  const json& cycles = require(j, path, "cycles");
  const std::string cpath = at(path, "cycles");
  if (!cycles.is_array() || cycles.empty()) throw ConfigError("expected a nonempty array", cpath);
  for (std::size_t k = 0; k < cycles.size(); ++k) {
    const std::string p = at(cpath, k);
    const json& cy = cycles[k];
    known_keys(cy, p, {"weight", "epsilon", "epsilon_switchover", "routing", "service", "switchover"});
    c.cycles.weights.push_back(number(cy, p, "weight", cycles.size() == 1 ? 1.0 : NAN));
    PollingCycleParams params;
    params.epsilon = matrix(require(cy, p, "epsilon"), at(p, "epsilon"), m, m);
    params.epsilon_switchover = cy.contains("epsilon_switchover")
                                    ? matrix(cy["epsilon_switchover"], at(p, "epsilon_switchover"), m, m)
                                    : Matrix(m, m);
    params.routing = matrix(require(cy, p, "routing"), at(p, "routing"), m, m + 1);
    for (const char* key : {"service", "switchover"}) {
      const json& laws = require(cy, p, key);
      if (!laws.is_array() || laws.size() != m)
        throw ConfigError("expected one law per station (" + std::to_string(m) + ")", at(p, key));
      auto& dst = std::string(key) == "service" ? params.service : params.switchover;
      for (std::size_t i = 0; i < m; ++i) dst.push_back(parse_amount(laws[i], at(at(p, key), i)));
    }
    params.validate(p);
    for (std::size_t i = 0; i < m; ++i) {
      if (c.disciplines[i] != Discipline::exhaustive) continue;
      const double rho = params.gamma(i, i) + params.epsilon(i, i) * params.service[i].mean();
      if (!(rho < 1.0))
        throw GuardViolation("station " + std::to_string(i + 1) + " exhaustive sub-busy period unstable", p);
    }
    c.cycles.atoms.push_back(std::move(params));
  }
  c.validate();
  return c;
}

inline MomentMethod parse_method(const std::string& s, const std::string& path) {
  if (s == "automatic") return MomentMethod::automatic;
  if (s == "closed_form") return MomentMethod::closed_form;
  if (s == "plain") return MomentMethod::plain;
  if (s == "resampled") return MomentMethod::resampled;
  throw ConfigError("unknown method '" + s + "' (automatic, closed_form, plain, resampled)", path);
}

}  // namespace config_detail

inline Command parse_command(const std::string& s, const std::string& path = "command") {
  for (Command c : {Command::analyze, Command::simulate_branching, Command::simulate_polling,
                    Command::validate_equivalence, Command::tail_fit})
    if (s == to_string(c)) return c;
  throw ConfigError("unknown command '" + s +
                        "' (analyze, simulate-branching, simulate-polling, validate-equivalence, tail-fit)",
                    path);
}

/// Parses and validates a JSON experiment description. Every error names
/// the offending field.
inline ExperimentSpec parse_experiment(const std::string& content) {
  using namespace config_detail;
  json j;
  try {
    j = json::parse(content);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what(), "<config>");
  }
  if (!j.is_object()) throw ConfigError("top level must be an object", "<config>");
  known_keys(j, "", {"command", "seed", "replicates", "workers", "out", "max_censored_fraction", "environment",
                     "polling", "process", "period", "analysis", "tail"});
  ExperimentSpec s;
  s.spec_hash = fnv1a(j.dump());
  s.command = parse_command(text(require(j, "", "command"), "command"));
  s.seed = count(j, "", "seed", s.seed);
  s.replicates = count(j, "", "replicates", s.replicates);
  s.workers = count(j, "", "workers", s.workers);
  s.out = text(j, "", "out", s.out);
  s.max_censored_fraction = number(j, "", "max_censored_fraction", s.max_censored_fraction);
  if (!(s.max_censored_fraction >= 0.0 && s.max_censored_fraction <= 1.0))
    throw ConfigError("must lie in [0, 1]", "max_censored_fraction");

  if (j.contains("environment")) s.environment = parse_environment(j["environment"], "environment");
  if (j.contains("polling")) s.polling = parse_polling(j["polling"], "polling");
  if (s.environment)
    s.process = parse_process(j.contains("process") ? &j["process"] : nullptr, "process", *s.environment);
  if (j.contains("period")) {
    const std::string p = text(j["period"], "period");
    if (p == "busy") s.period = PollingPeriod::busy;
    else if (p == "generalized") s.period = PollingPeriod::generalized;
    else throw ConfigError("expected \"busy\" or \"generalized\"", "period");
  }
  if (j.contains("analysis")) {
    const json& a = j["analysis"];
    const std::string p = "analysis";
    known_keys(a, p, {"horizon", "replicates", "method", "max_relative_ci", "lyapunov_horizon", "lyapunov_replicates",
                      "x_max", "tol", "s_grid", "kesten_samples"});
    s.analysis.mc.horizon = count(a, p, "horizon", s.analysis.mc.horizon);
    s.analysis.mc.replicates = count(a, p, "replicates", s.analysis.mc.replicates);
    s.analysis.mc.method = parse_method(text(a, p, "method", "automatic"), at(p, "method"));
    s.analysis.mc.max_relative_ci = number(a, p, "max_relative_ci", s.analysis.mc.max_relative_ci);
    s.analysis.lyapunov_horizon = count(a, p, "lyapunov_horizon", s.analysis.lyapunov_horizon);
    s.analysis.lyapunov_replicates = count(a, p, "lyapunov_replicates", s.analysis.lyapunov_replicates);
    s.analysis.x_max = number(a, p, "x_max", s.analysis.x_max);
    s.analysis.tol = number(a, p, "tol", s.analysis.tol);
    if (a.contains("s_grid")) s.analysis.s_grid = rates(a["s_grid"], at(p, "s_grid"));
    s.kesten_samples = count(a, p, "kesten_samples", s.kesten_samples);
    if (s.analysis.mc.horizon < 1) throw ConfigError("must be >= 1", "analysis.horizon");
    if (s.analysis.mc.replicates < 2) throw ConfigError("must be >= 2", "analysis.replicates");
    if (s.analysis.lyapunov_replicates < 2) throw ConfigError("must be >= 2", "analysis.lyapunov_replicates");
    if (!(s.analysis.x_max > 0.0)) throw ConfigError("must be > 0", "analysis.x_max");
    if (!(s.analysis.tol > 0.0)) throw ConfigError("must be > 0", "analysis.tol");
    if (s.kesten_samples < 4) throw ConfigError("must be >= 4", "analysis.kesten_samples");
  }
  if (j.contains("tail")) {
    const json& t = j["tail"];
    known_keys(t, "tail", {"k", "input", "column"});
    if (t.contains("k") && !t["k"].is_null()) s.hill_k = count(t["k"], "tail.k");
    s.tail_input = text(t, "tail", "input", "");
    s.tail_column = text(t, "tail", "column", "");
  }

  switch (s.command) {
    case Command::analyze:
      if (!s.environment && !s.polling) throw ConfigError("analyze needs an environment or a polling section", "environment");
      break;
    case Command::simulate_branching:
      if (!s.environment) throw ConfigError("simulate-branching needs an environment section", "environment");
      break;
    case Command::simulate_polling:
    case Command::validate_equivalence:
      if (!s.polling) throw ConfigError(std::string(to_string(s.command)) + " needs a polling section", "polling");
      break;
    case Command::tail_fit:
      if (s.tail_input.empty()) throw ConfigError("tail-fit needs an input CSV", "tail.input");
      break;
  }
  if (s.replicates < 1) throw ConfigError("must be >= 1", "replicates");
  s.analysis.mc.workers = s.workers;
  return s;
}

inline ExperimentSpec load_experiment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'", "--config");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_experiment(buf.str());
}

}  // namespace mbpre

#endif  // MBPRE_CONFIG_HPP
