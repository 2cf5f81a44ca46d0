#pragma once

// Declarative run description: strict JSON parsing (unknown keys rejected with
// their path), defaults, cross-field validation and canonical serialization.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "qbcast/envelope.hpp"
#include "qbcast/errors.hpp"
#include "qbcast/fock.hpp"
#include "qbcast/protocol.hpp"
#include "qbcast/wigner.hpp"

namespace qbcast {

using json = nlohmann::ordered_json;

enum class Engine { Moments, Fock };
enum class AnalysisKind { NlvParabola, NlvEnvelope, Wigner, Moments };
enum class OutputFormat { Csv, Json };

inline constexpr int kMaxFockN = 60;

/// Per-gate override of the shared channel settings (moments engine).
struct GateOverride {
  std::optional<double> eta, S, nu_m, split, asymmetry;
  std::optional<std::array<double, 4>> eta_damp;

  bool operator==(const GateOverride&) const = default;
};

struct MomentsChannel {
  GainMode gain_mode = GainMode::Symmetric;
  bool gain_mode_given = false;
  double eta = 1.0;
  double S = 1.0;
  std::optional<double> nu_m;  // otherwise 2 Gamma_m tau
  double Gamma_m = 0.0;
  double tau = 1.0;
  double split = 1.0;
  double asymmetry = 1.0;
  std::array<double, 4> eta_damp{1.0, 1.0, 1.0, 1.0};
  bool final_readout = false;
  std::vector<GateOverride> gates;

  double heating() const { return nu_m ? *nu_m : 2.0 * Gamma_m * tau; }

  bool operator==(const MomentsChannel&) const = default;
};

struct FockChannel {
  LindbladRates rates;
  double T_gate = 1.0;

  bool operator==(const FockChannel&) const = default;
};

struct FockSettings {
  int N = 40;
  double tail_guard = kTailGuard;
  double atol = 1e-9;
  double rtol = 1e-7;

  bool operator==(const FockSettings&) const = default;
};

struct LambdaGrid {
  double min = 0.0;
  double max = 1.2;
  std::size_t points = 200;

  std::vector<double> values() const { return linspace(min, max, points); }
  bool operator==(const LambdaGrid&) const = default;
};

struct Analysis {
  AnalysisKind kind = AnalysisKind::NlvParabola;
  LambdaGrid lambda_grid;
  // nlv-envelope
  EnvelopeBounds bounds;
  std::size_t budget = 1500;
  std::size_t coarse_points = 7;
  std::size_t coarse_cap = 4096;
  std::size_t starts = 3;
  std::size_t sweeps = 2;
  NelderMeadOptions nelder_mead;
  std::optional<bool> symmetric;
  // wigner
  WignerGridSpec grid;
  std::vector<std::string> checkpoints{"after_nl", "final"};
  std::vector<std::string> modes{"target", "source"};

  bool operator==(const Analysis&) const = default;
};

struct Scenario {
  Engine engine = Engine::Moments;
  std::uint64_t seed = 1;
  RegimeSpec regime;
  double gamma = 0.0;
  int order = 3;
  GaussianModeState target;
  GaussianModeState source;
  bool has_channel = false;
  MomentsChannel channel;
  FockChannel fock_channel;
  FockSettings fock;
  Analysis analysis;
  std::string output_path = "out";
  OutputFormat format = OutputFormat::Csv;

  bool operator==(const Scenario&) const = default;
};

inline const char* to_string(Engine e) { return e == Engine::Moments ? "moments" : "fock"; }

inline const char* to_string(AnalysisKind k) {
  switch (k) {
    case AnalysisKind::NlvParabola: return "nlv-parabola";
    case AnalysisKind::NlvEnvelope: return "nlv-envelope";
    case AnalysisKind::Wigner: return "wigner";
    case AnalysisKind::Moments: return "moments";
  }
  return "?";
}

inline const char* to_string(OutputFormat f) { return f == OutputFormat::Csv ? "csv" : "json"; }

inline const char* mode_kind_name(GaussianModeState::Kind k) {
  switch (k) {
    case GaussianModeState::Kind::Vacuum: return "vacuum";
    case GaussianModeState::Kind::Squeezed: return "squeezed";
    case GaussianModeState::Kind::Thermal: return "thermal";
    case GaussianModeState::Kind::SqueezedThermal: return "squeezed-thermal";
  }
  return "?";
}

namespace detail {

// Object reader that remembers which keys were consumed.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError("expected an object", where());
  }

  const std::string& path() const { return path_; }
  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key); }

  const json& raw(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }

  double number(const std::string& key, std::optional<double> def = std::nullopt) {
    if (!has(key)) {
      if (!def) throw ValidationError("required", at(key));
      return *def;
    }
    const json& v = raw(key);
    if (!v.is_number()) throw ValidationError("expected a number", at(key));
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ValidationError("must be finite", at(key));
    return x;
  }

  std::optional<double> maybe_number(const std::string& key) {
    if (!has(key)) return std::nullopt;
    return number(key);
  }

  std::uint64_t count(const std::string& key, std::uint64_t def) {
    if (!has(key)) return def;
    const json& v = raw(key);
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0))
      throw ValidationError("expected a non-negative integer", at(key));
    return v.get<std::uint64_t>();
  }

  bool boolean(const std::string& key, bool def) {
    if (!has(key)) return def;
    const json& v = raw(key);
    if (!v.is_boolean()) throw ValidationError("expected true or false", at(key));
    return v.get<bool>();
  }

  std::string string(const std::string& key, std::optional<std::string> def = std::nullopt) {
    if (!has(key)) {
      if (!def) throw ValidationError("required", at(key));
      return *def;
    }
    const json& v = raw(key);
    if (!v.is_string()) throw ValidationError("expected a string", at(key));
    return v.get<std::string>();
  }

  std::vector<double> numbers(const std::string& key, std::size_t n) {
    const json& v = raw(key);
    if (!v.is_array() || v.size() != n)
      throw ValidationError("expected an array of " + std::to_string(n) + " numbers", at(key));
    std::vector<double> out;
    for (std::size_t i = 0; i < n; ++i) {
      if (!v[i].is_number() || !std::isfinite(v[i].get<double>()))
        throw ValidationError("expected a finite number", at(key) + "[" + std::to_string(i) + "]");
      out.push_back(v[i].get<double>());
    }
    return out;
  }

  std::vector<std::string> strings(const std::string& key, const std::vector<std::string>& def) {
    if (!has(key)) return def;
    const json& v = raw(key);
    if (!v.is_array()) throw ValidationError("expected an array of strings", at(key));
    std::vector<std::string> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_string()) throw ValidationError("expected a string", at(key) + "[" + std::to_string(i) + "]");
      out.push_back(v[i].get<std::string>());
    }
    return out;
  }

  Reader child(const std::string& key) { return Reader(raw(key), at(key)); }

  void reject(const std::string& key, const std::string& why) {
    if (has(key)) throw ValidationError(why, at(key));
  }

  // every key not consumed is an error
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw ValidationError("unknown key", at(it.key()));
  }

 private:
  std::string where() const { return path_.empty() ? "(root)" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

inline GaussianModeState parse_mode(Reader r) {
  const std::string kind = r.string("kind");
  GaussianModeState s;
  if (kind == "vacuum") {
    s = GaussianModeState::vacuum();
  } else if (kind == "squeezed") {
    s = GaussianModeState::squeezed(r.number("r"));
  } else if (kind == "thermal") {
    s = GaussianModeState::thermal(r.number("n"));
  } else if (kind == "squeezed-thermal") {
    s = GaussianModeState::squeezed_thermal(r.number("n"), r.number("S_m"));
  } else {
    throw ValidationError("unknown state kind '" + kind + "'", r.at("kind"));
  }
  r.finish();
  s.validate(r.path());
  return s;
}

inline RegimeSpec parse_regime(Reader r, bool gains_optional) {
  RegimeSpec reg;
  const std::string kind = r.string("kind");
  const std::optional<double> def = gains_optional ? std::optional<double>(1.0) : std::nullopt;
  if (kind == "full-broadcast" || kind == "simplified") {
    reg.kind = kind == "simplified" ? RegimeKind::Simplified : RegimeKind::FullBroadcast;
    reg.g = r.number("g", def);
  } else if (kind == "squeezing-generation") {
    reg.kind = RegimeKind::SqueezingGeneration;
    reg.g = r.number("g", def);
    reg.g1 = r.number("g1", def);
  } else if (kind == "custom") {
    reg.kind = RegimeKind::Custom;
    if (r.has("gains")) {
      auto v = r.numbers("gains", 4);
      std::copy(v.begin(), v.end(), reg.gains.begin());
    } else if (!gains_optional) {
      throw ValidationError("required", r.at("gains"));
    }
  } else {
    throw ValidationError("unknown regime '" + kind + "'", r.at("kind"));
  }
  r.finish();
  reg.expand();
  return reg;
}

inline void check_unit_interval(double x, const std::string& path) {
  if (!(x > 0.0 && x <= 1.0)) throw ValidationError("must lie in (0, 1]", path);
}

inline std::array<double, 4> parse_damp(Reader& r) {
  auto v = r.numbers("eta_damp", 4);
  std::array<double, 4> d{};
  std::copy(v.begin(), v.end(), d.begin());
  return d;
}

inline GateOverride parse_gate(Reader r) {
  GateOverride o;
  o.eta = r.maybe_number("eta");
  o.S = r.maybe_number("S");
  o.nu_m = r.maybe_number("nu_m");
  o.split = r.maybe_number("split");
  o.asymmetry = r.maybe_number("asymmetry");
  if (r.has("eta_damp")) o.eta_damp = parse_damp(r);
  r.finish();
  if (o.eta) check_unit_interval(*o.eta, r.at("eta"));
  if (o.S && *o.S < 1.0) throw ValidationError("must be >= 1", r.at("S"));
  if (o.nu_m && *o.nu_m < 0.0) throw ValidationError("must be >= 0", r.at("nu_m"));
  if (o.split && *o.split <= 0.0) throw ValidationError("must be > 0", r.at("split"));
  if (o.asymmetry && !(*o.asymmetry >= 0.0 && *o.asymmetry <= 1.0))
    throw ValidationError("must lie in [0, 1]", r.at("asymmetry"));
  return o;
}

inline GainMode parse_gain_mode(const std::string& s, const std::string& path) {
  if (s == "symmetric") return GainMode::Symmetric;
  if (s == "asymmetric") return GainMode::Asymmetric;
  throw ValidationError("expected 'symmetric' or 'asymmetric'", path);
}

inline MomentsChannel parse_moments_channel(Reader r, bool envelope, std::size_t gate_count) {
  MomentsChannel c;
  if (r.has("gain_mode")) {
    c.gain_mode = parse_gain_mode(r.string("gain_mode"), r.at("gain_mode"));
    c.gain_mode_given = true;
  }
  c.eta = r.number("eta", 1.0);
  check_unit_interval(c.eta, r.at("eta"));
  if (r.has("nu_m") && (r.has("Gamma_m") || r.has("tau")))
    throw ValidationError("give either nu_m or Gamma_m and tau", r.at("nu_m"));
  c.Gamma_m = r.number("Gamma_m", 0.0);
  c.tau = r.number("tau", 1.0);
  if (c.Gamma_m < 0) throw ValidationError("must be >= 0", r.at("Gamma_m"));
  if (c.tau < 0) throw ValidationError("must be >= 0", r.at("tau"));
  if (r.has("eta_damp")) c.eta_damp = parse_damp(r);
  for (std::size_t i = 0; i < 4; ++i)
    check_unit_interval(c.eta_damp[i], r.at("eta_damp[" + std::to_string(i) + "]"));
  if (envelope) {
    for (const char* k : {"S", "split", "asymmetry", "nu_m", "final_readout", "gates"})
      r.reject(k, "not allowed for nlv-envelope (optimized or derived from Gamma_m and tau)");
    r.finish();
    return c;
  }
  c.S = r.number("S", 1.0);
  if (!(c.S >= 1.0)) throw ValidationError("must be >= 1", r.at("S"));
  c.nu_m = r.maybe_number("nu_m");
  if (c.nu_m && *c.nu_m < 0) throw ValidationError("must be >= 0", r.at("nu_m"));
  c.split = r.number("split", 1.0);
  if (!(c.split > 0.0)) throw ValidationError("must be > 0", r.at("split"));
  c.asymmetry = r.number("asymmetry", 1.0);
  if (!(c.asymmetry >= 0.0 && c.asymmetry <= 1.0)) throw ValidationError("must lie in [0, 1]", r.at("asymmetry"));
  c.final_readout = r.boolean("final_readout", false);
  if (r.has("gates")) {
    const json& g = r.raw("gates");
    if (!g.is_array() || g.size() != gate_count)
      throw ValidationError("expected an array of " + std::to_string(gate_count) + " gate objects", r.at("gates"));
    for (std::size_t i = 0; i < g.size(); ++i)
      c.gates.push_back(parse_gate(Reader(g[i], r.at("gates") + "[" + std::to_string(i) + "]")));
  }
  r.finish();
  return c;
}

inline FockChannel parse_fock_channel(Reader r) {
  FockChannel c;
  c.rates.zeta_a = r.number("zeta_a", 0.0);
  c.rates.zeta_m = r.number("zeta_m", 0.0);
  c.rates.n_th = r.number("n_th", 0.0);
  c.T_gate = r.number("T_gate", 1.0);
  r.finish();
  if (c.rates.zeta_a < 0) throw ValidationError("must be >= 0", r.at("zeta_a"));
  if (c.rates.zeta_m < 0) throw ValidationError("must be >= 0", r.at("zeta_m"));
  if (c.rates.n_th < 0) throw ValidationError("must be >= 0", r.at("n_th"));
  if (!(c.T_gate > 0)) throw ValidationError("must be > 0", r.at("T_gate"));
  return c;
}

inline FockSettings parse_fock(Reader r) {
  FockSettings f;
  const auto N = r.count("N", 40);
  if (N < 2 || N > static_cast<std::uint64_t>(kMaxFockN))
    throw ValidationError("must lie in [2, " + std::to_string(kMaxFockN) + "]", r.at("N"));
  f.N = static_cast<int>(N);
  f.tail_guard = r.number("tail_guard", kTailGuard);
  f.atol = r.number("atol", 1e-9);
  f.rtol = r.number("rtol", 1e-7);
  r.finish();
  if (!(f.tail_guard > 0)) throw ValidationError("must be > 0", r.at("tail_guard"));
  if (!(f.atol > 0)) throw ValidationError("must be > 0", r.at("atol"));
  if (!(f.rtol > 0)) throw ValidationError("must be > 0", r.at("rtol"));
  return f;
}

inline Interval parse_interval(Reader& r, const std::string& key, const Interval& def) {
  if (!r.has(key)) return def;
  auto v = r.numbers(key, 2);
  return {v[0], v[1]};
}

inline EnvelopeBounds parse_bounds(Reader r) {
  EnvelopeBounds b;
  b.g = parse_interval(r, "g", b.g);
  b.g1 = parse_interval(r, "g1", b.g1);
  b.gain = parse_interval(r, "gain", b.gain);
  b.S_db = parse_interval(r, "S_db", b.S_db);
  b.split_log10 = parse_interval(r, "split_log10", b.split_log10);
  b.asymmetry = parse_interval(r, "asymmetry", b.asymmetry);
  if (r.has("tau")) b.tau = parse_interval(r, "tau", {});
  r.finish();
  if (b.S_db.first < 0) throw ValidationError("mediator squeezing must be >= 0 dB", r.at("S_db"));
  if (b.asymmetry.first < 0 || b.asymmetry.second > 1) throw ValidationError("must lie in [0, 1]", r.at("asymmetry"));
  return b;
}

inline NelderMeadOptions parse_nelder_mead(Reader r) {
  NelderMeadOptions o;
  o.max_iterations = r.count("max_iterations", o.max_iterations);
  o.ftol = r.number("ftol", o.ftol);
  o.reflection = r.number("reflection", o.reflection);
  o.expansion = r.number("expansion", o.expansion);
  o.contraction = r.number("contraction", o.contraction);
  o.shrink = r.number("shrink", o.shrink);
  o.initial_step = r.number("initial_step", o.initial_step);
  o.restarts = r.count("restarts", o.restarts);
  r.finish();
  if (!(o.ftol >= 0)) throw ValidationError("must be >= 0", r.at("ftol"));
  if (!(o.reflection > 0)) throw ValidationError("must be > 0", r.at("reflection"));
  if (!(o.expansion > 1)) throw ValidationError("must be > 1", r.at("expansion"));
  if (!(o.contraction > 0 && o.contraction < 1)) throw ValidationError("must lie in (0, 1)", r.at("contraction"));
  if (!(o.shrink > 0 && o.shrink < 1)) throw ValidationError("must lie in (0, 1)", r.at("shrink"));
  if (!(o.initial_step > 0)) throw ValidationError("must be > 0", r.at("initial_step"));
  return o;
}

inline AnalysisKind parse_analysis_kind(const std::string& s, const std::string& path) {
  if (s == "nlv-parabola") return AnalysisKind::NlvParabola;
  if (s == "nlv-envelope") return AnalysisKind::NlvEnvelope;
  if (s == "wigner") return AnalysisKind::Wigner;
  if (s == "moments") return AnalysisKind::Moments;
  throw ValidationError("unknown analysis '" + s + "'", path);
}

inline Analysis parse_analysis(Reader r) {
  Analysis a;
  a.kind = parse_analysis_kind(r.string("kind"), r.at("kind"));
  const bool envelope = a.kind == AnalysisKind::NlvEnvelope;
  const bool wig = a.kind == AnalysisKind::Wigner;
  if (a.kind == AnalysisKind::NlvParabola || envelope) {
    if (r.has("lambda_grid")) {
      Reader g = r.child("lambda_grid");
      a.lambda_grid.min = g.number("min", a.lambda_grid.min);
      a.lambda_grid.max = g.number("max", a.lambda_grid.max);
      a.lambda_grid.points = g.count("points", a.lambda_grid.points);
      g.finish();
      if (a.lambda_grid.points < 1) throw ValidationError("must be >= 1", g.at("points"));
      if (a.lambda_grid.min > a.lambda_grid.max) throw ValidationError("min must not exceed max", g.path());
    }
  }
  if (envelope) {
    if (r.has("bounds")) a.bounds = parse_bounds(r.child("bounds"));
    a.budget = r.count("budget", a.budget);
    a.coarse_points = r.count("coarse_points", a.coarse_points);
    a.coarse_cap = r.count("coarse_cap", a.coarse_cap);
    a.starts = r.count("starts", a.starts);
    a.sweeps = r.count("sweeps", a.sweeps);
    if (a.coarse_points < 1) throw ValidationError("must be >= 1", r.at("coarse_points"));
    if (a.coarse_cap < 1) throw ValidationError("must be >= 1", r.at("coarse_cap"));
    if (r.has("nelder_mead")) a.nelder_mead = parse_nelder_mead(r.child("nelder_mead"));
    if (r.has("symmetric")) a.symmetric = r.boolean("symmetric", true);
  }
  if (wig) {
    if (r.has("grid")) {
      Reader g = r.child("grid");
      auto& s = a.grid;
      s.x_min = g.number("x_min", s.x_min);
      s.x_max = g.number("x_max", s.x_max);
      s.y_min = g.number("y_min", s.y_min);
      s.y_max = g.number("y_max", s.y_max);
      const auto nx = g.count("nx", static_cast<std::uint64_t>(s.nx));
      const auto ny = g.count("ny", static_cast<std::uint64_t>(s.ny));
      g.finish();
      if (nx > 4001) throw ValidationError("at most 4001 points", g.at("nx"));
      if (ny > 4001) throw ValidationError("at most 4001 points", g.at("ny"));
      s.nx = static_cast<int>(nx);
      s.ny = static_cast<int>(ny);
      s.validate(g.path());
    }
    a.checkpoints = r.strings("checkpoints", a.checkpoints);
    a.modes = r.strings("modes", a.modes);
    auto check = [&](const std::vector<std::string>& v, std::initializer_list<const char*> allowed, const std::string& key) {
      if (v.empty()) throw ValidationError("must not be empty", r.at(key));
      std::set<std::string> seen;
      for (std::size_t i = 0; i < v.size(); ++i) {
        bool ok = false;
        for (const char* x : allowed) ok |= v[i] == x;
        if (!ok || !seen.insert(v[i]).second)
          throw ValidationError("unknown or repeated entry '" + v[i] + "'", r.at(key) + "[" + std::to_string(i) + "]");
      }
    };
    check(a.checkpoints, {"after_nl", "final"}, "checkpoints");
    check(a.modes, {"target", "source"}, "modes");
  }
  r.finish();
  return a;
}

inline EnvelopeSystem envelope_system(const Scenario& s) {
  EnvelopeSystem sys;
  sys.kind = s.regime.kind;
  sys.gamma = s.gamma;
  sys.order = s.order;
  sys.mode = s.channel.gain_mode;
  sys.eta = s.channel.eta;
  sys.Gamma_m = s.channel.Gamma_m;
  sys.tau = s.channel.tau;
  sys.eta_damp = s.channel.eta_damp;
  sys.target = s.target;
  sys.source = s.source;
  return sys;
}

}  // namespace detail

inline Scenario scenario_from_json(const json& root) {
  detail::Reader r(root, "");
  Scenario s;
  const std::string engine = r.string("engine", "moments");
  if (engine == "moments")
    s.engine = Engine::Moments;
  else if (engine == "fock")
    s.engine = Engine::Fock;
  else
    throw ValidationError("expected 'moments' or 'fock'", "engine");
  s.seed = r.count("seed", 1);

  s.analysis = detail::parse_analysis(r.child("analysis"));
  const AnalysisKind ak = s.analysis.kind;
  if (ak == AnalysisKind::Wigner && s.engine != Engine::Fock)
    throw ValidationError("wigner analysis needs the fock engine", "analysis.kind");
  if (ak == AnalysisKind::NlvEnvelope && s.engine != Engine::Moments)
    throw ValidationError("nlv-envelope analysis needs the moments engine", "analysis.kind");
  const bool envelope = ak == AnalysisKind::NlvEnvelope;

  s.regime = detail::parse_regime(r.child("regime"), envelope);
  {
    detail::Reader n = r.child("nonlinearity");
    s.gamma = n.number("gamma");
    const auto order = n.count("order", 3);
    if (order < 2 || order > 6) throw ValidationError("must lie in [2, 6]", n.at("order"));
    s.order = static_cast<int>(order);
    n.finish();
  }
  if (r.has("initial")) {
    detail::Reader in = r.child("initial");
    if (in.has("target")) s.target = detail::parse_mode(in.child("target"));
    if (in.has("source")) s.source = detail::parse_mode(in.child("source"));
    in.finish();
  }

  if (r.has("channel")) {
    s.has_channel = true;
    if (s.engine == Engine::Moments)
      s.channel = detail::parse_moments_channel(r.child("channel"), envelope, s.regime.gate_count());
    else
      s.fock_channel = detail::parse_fock_channel(r.child("channel"));
  }
  if (s.channel.final_readout && s.regime.kind != RegimeKind::Simplified)
    throw ValidationError("final readout replaces the last gate of the simplified regime only", "channel.final_readout");

  if (r.has("fock")) {
    if (s.engine != Engine::Fock) throw ValidationError("only valid with the fock engine", "fock");
    s.fock = detail::parse_fock(r.child("fock"));
  }

  if (s.analysis.symmetric) {
    const GainMode m = *s.analysis.symmetric ? GainMode::Symmetric : GainMode::Asymmetric;
    if (s.channel.gain_mode_given && s.channel.gain_mode != m)
      throw ValidationError("conflicts with channel.gain_mode", "analysis.symmetric");
    s.channel.gain_mode = m;
  }
  if (envelope) {
    s.analysis.symmetric = s.channel.gain_mode == GainMode::Symmetric;
    make_layout(detail::envelope_system(s), s.analysis.bounds);
  }

  if (r.has("output")) {
    detail::Reader o = r.child("output");
    s.output_path = o.string("path", s.output_path);
    const std::string f = o.string("format", "csv");
    if (f == "csv")
      s.format = OutputFormat::Csv;
    else if (f == "json")
      s.format = OutputFormat::Json;
    else
      throw ValidationError("expected 'csv' or 'json'", o.at("format"));
    o.finish();
    if (s.output_path.empty()) throw ValidationError("must not be empty", "output.path");
  }
  r.finish();
  return s;
}

inline Scenario parse_scenario(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("malformed JSON: ") + e.what());
  }
  return scenario_from_json(root);
}

namespace detail {

inline json mode_json(const GaussianModeState& m) {
  json j;
  j["kind"] = mode_kind_name(m.kind);
  switch (m.kind) {
    case GaussianModeState::Kind::Vacuum: break;
    case GaussianModeState::Kind::Squeezed: j["r"] = m.r; break;
    case GaussianModeState::Kind::Thermal: j["n"] = m.n; break;
    case GaussianModeState::Kind::SqueezedThermal:
      j["n"] = m.n;
      j["S_m"] = m.S_m;
      break;
  }
  return j;
}

inline json interval_json(const Interval& iv) { return json::array({iv.first, iv.second}); }

}  // namespace detail

/// Canonical form with every default resolved; parse_scenario inverts it.
inline json serialize_scenario(const Scenario& s) {
  json j;
  j["engine"] = to_string(s.engine);
  j["seed"] = s.seed;
  json reg;
  reg["kind"] = to_string(s.regime.kind);
  switch (s.regime.kind) {
    case RegimeKind::FullBroadcast:
    case RegimeKind::Simplified: reg["g"] = s.regime.g; break;
    case RegimeKind::SqueezingGeneration:
      reg["g"] = s.regime.g;
      reg["g1"] = s.regime.g1;
      break;
    case RegimeKind::Custom: reg["gains"] = s.regime.gains; break;
  }
  j["regime"] = reg;
  j["nonlinearity"] = {{"gamma", s.gamma}, {"order", s.order}};
  j["initial"] = {{"target", detail::mode_json(s.target)}, {"source", detail::mode_json(s.source)}};

  const bool envelope = s.analysis.kind == AnalysisKind::NlvEnvelope;
  if (s.has_channel && s.engine == Engine::Moments) {
    const auto& c = s.channel;
    json ch;
    if (c.gain_mode_given) ch["gain_mode"] = to_string(c.gain_mode);
    ch["eta"] = c.eta;
    if (!envelope) ch["S"] = c.S;
    if (c.nu_m) {
      ch["nu_m"] = *c.nu_m;
    } else {
      ch["Gamma_m"] = c.Gamma_m;
      ch["tau"] = c.tau;
    }
    ch["eta_damp"] = c.eta_damp;
    if (!envelope) {
      ch["split"] = c.split;
      ch["asymmetry"] = c.asymmetry;
      ch["final_readout"] = c.final_readout;
      if (!c.gates.empty()) {
        json gs = json::array();
        for (const auto& g : c.gates) {
          json o = json::object();
          if (g.eta) o["eta"] = *g.eta;
          if (g.S) o["S"] = *g.S;
          if (g.nu_m) o["nu_m"] = *g.nu_m;
          if (g.split) o["split"] = *g.split;
          if (g.asymmetry) o["asymmetry"] = *g.asymmetry;
          if (g.eta_damp) o["eta_damp"] = *g.eta_damp;
          gs.push_back(o);
        }
        ch["gates"] = gs;
      }
    }
    j["channel"] = ch;
  } else if (s.has_channel) {
    const auto& c = s.fock_channel;
    j["channel"] = {{"zeta_a", c.rates.zeta_a}, {"zeta_m", c.rates.zeta_m}, {"n_th", c.rates.n_th}, {"T_gate", c.T_gate}};
  }
  if (s.engine == Engine::Fock)
    j["fock"] = {{"N", s.fock.N}, {"tail_guard", s.fock.tail_guard}, {"atol", s.fock.atol}, {"rtol", s.fock.rtol}};

  const auto& a = s.analysis;
  json an;
  an["kind"] = to_string(a.kind);
  if (a.kind == AnalysisKind::NlvParabola || envelope)
    an["lambda_grid"] = {{"min", a.lambda_grid.min}, {"max", a.lambda_grid.max}, {"points", a.lambda_grid.points}};
  if (envelope) {
    json b;
    b["g"] = detail::interval_json(a.bounds.g);
    b["g1"] = detail::interval_json(a.bounds.g1);
    b["gain"] = detail::interval_json(a.bounds.gain);
    b["S_db"] = detail::interval_json(a.bounds.S_db);
    b["split_log10"] = detail::interval_json(a.bounds.split_log10);
    b["asymmetry"] = detail::interval_json(a.bounds.asymmetry);
    if (a.bounds.tau) b["tau"] = detail::interval_json(*a.bounds.tau);
    an["bounds"] = b;
    an["budget"] = a.budget;
    an["coarse_points"] = a.coarse_points;
    an["coarse_cap"] = a.coarse_cap;
    an["starts"] = a.starts;
    an["sweeps"] = a.sweeps;
    const auto& nm = a.nelder_mead;
    an["nelder_mead"] = {{"max_iterations", nm.max_iterations}, {"ftol", nm.ftol},
                         {"reflection", nm.reflection},         {"expansion", nm.expansion},
                         {"contraction", nm.contraction},       {"shrink", nm.shrink},
                         {"initial_step", nm.initial_step},     {"restarts", nm.restarts}};
    if (a.symmetric) an["symmetric"] = *a.symmetric;
  }
  if (a.kind == AnalysisKind::Wigner) {
    an["grid"] = {{"x_min", a.grid.x_min}, {"x_max", a.grid.x_max}, {"y_min", a.grid.y_min},
                  {"y_max", a.grid.y_max}, {"nx", a.grid.nx},       {"ny", a.grid.ny}};
    an["checkpoints"] = a.checkpoints;
    an["modes"] = a.modes;
  }
  j["analysis"] = an;
  j["output"] = {{"path", s.output_path}, {"format", to_string(s.format)}};
  return j;
}

/// Per-gate settings for the moments engine: shared channel values with
/// per-gate overrides applied.
inline std::vector<GateSetting> gate_settings(const Scenario& s) {
  const auto& c = s.channel;
  std::vector<GateSetting> out(s.regime.gate_count());
  for (std::size_t i = 0; i < out.size(); ++i) {
    GateSetting& g = out[i];
    g.eta = c.eta;
    g.S = c.S;
    g.nu_m = c.heating();
    g.eta_damp = c.eta_damp;
    g.split = c.split;
    g.asymmetry = c.asymmetry;
    if (i < c.gates.size()) {
      const auto& o = c.gates[i];
      g.eta = o.eta.value_or(g.eta);
      g.S = o.S.value_or(g.S);
      g.nu_m = o.nu_m.value_or(g.nu_m);
      g.split = o.split.value_or(g.split);
      g.asymmetry = o.asymmetry.value_or(g.asymmetry);
      if (o.eta_damp) g.eta_damp = *o.eta_damp;
    }
  }
  return out;
}

}  // namespace qbcast
