#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "divac/excited.hpp"
#include "divac/ground_spin.hpp"
#include "divac/inference/linewidth.hpp"
#include "divac/inference/ple_ensemble.hpp"
#include "divac/io.hpp"
#include "divac/optical_cycle.hpp"

namespace divac::cli {

using json = nlohmann::json;
using inference::Estimate;

inline constexpr const char* kVersion = "0.1.0";

/// Bad command line or configuration; exit status 2.
class UsageError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

// ---------------------------------------------------------------------------
// Parameter overrides

class Params {
 public:
  Params(const std::map<std::string, std::string>& given, std::map<std::string, std::string> defaults)
      : values_(std::move(defaults)) {
    for (const auto& [k, v] : given) {
      if (!values_.count(k)) {
        std::string known;
        for (const auto& [d, _] : values_) known += (known.empty() ? "" : ", ") + d;
        throw UsageError("unknown key '" + k + "' (accepted: " + (known.empty() ? "none" : known) + ")");
      }
      values_[k] = v;
    }
  }

  const std::string& str(const std::string& key) const { return values_.at(key); }
  bool empty(const std::string& key) const { return str(key).empty(); }

  double num(const std::string& key) const {
    double v = 0.0;
    if (!io::detail::parse_double(str(key), v) || !std::isfinite(v))
      throw UsageError("key '" + key + "' needs a finite number, got '" + str(key) + "'");
    return v;
  }
  double num_or(const std::string& key, double fallback) const { return empty(key) ? fallback : num(key); }

  std::size_t count(const std::string& key) const {
    const double v = num(key);
    if (v < 0 || v != std::floor(v) || v > 1e9) throw UsageError("key '" + key + "' needs a non-negative integer");
    return static_cast<std::size_t>(v);
  }

  bool flag(const std::string& key) const {
    const auto& s = str(key);
    if (s == "1" || s == "true" || s == "yes") return true;
    if (s == "0" || s == "false" || s == "no") return false;
    throw UsageError("key '" + key + "' needs 0 or 1, got '" + s + "'");
  }

  std::vector<double> list(const std::string& key) const {
    std::vector<double> out;
    std::string s = str(key);
    std::replace(s.begin(), s.end(), ',', ' ');
    std::istringstream in(s);
    for (std::string w; in >> w;) {
      double v = 0.0;
      if (!io::detail::parse_double(w, v) || !std::isfinite(v))
        throw UsageError("key '" + key + "' needs a list of numbers, got '" + str(key) + "'");
      out.push_back(v);
    }
    return out;
  }

  const std::string& choice(const std::string& key, std::initializer_list<const char*> options) const {
    for (const char* o : options)
      if (str(key) == o) return str(key);
    std::string all;
    for (const char* o : options) all += (all.empty() ? "" : "|") + std::string(o);
    throw UsageError("key '" + key + "' must be one of " + all + ", got '" + str(key) + "'");
  }

 private:
  std::map<std::string, std::string> values_;
};

namespace detail {

inline std::string full(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void add_rate_keys(std::map<std::string, std::string>& k) {
  const optical::RateParams r;
  k["k_r"] = full(r.k_r);
  k["G_isc0"] = full(r.G_isc0);
  k["G_isc1"] = full(r.G_isc1);
  k["G_s"] = full(r.G_s);
  k["beta"] = full(r.beta);
  k["bg"] = full(r.bg);
}

inline optical::RateParams rates_from(const Params& p) {
  optical::RateParams r;
  r.k_r = p.num("k_r");
  r.G_isc0 = p.num("G_isc0");
  r.G_isc1 = p.num("G_isc1");
  r.G_s = p.num("G_s");
  r.beta = p.num("beta");
  r.bg = p.num("bg");
  r.validate();
  return r;
}

inline std::vector<double> default_powers() {
  std::vector<double> p;
  for (int i = 0; i < 11; ++i) p.push_back(0.35 + (2.87 - 0.35) * i / 10.0);
  return p;
}

inline std::vector<double> linear_grid(double lo, double hi, std::size_t n) {
  if (n < 2) throw UsageError("grids need at least 2 points");
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return g;
}

inline ground::HyperfineTensor tensor_from(const Params& p) {
  const auto n = ground::parse_nucleus(p.str("nucleus"));
  auto hf = p.choice("tensor", {"theory", "experimental"}) == "theory" ? ground::theory_tensor(n)
                                                                      : ground::experimental_tensor(n);
  hf.Axx = p.num_or("Axx", hf.Axx);
  hf.Ayy = p.num_or("Ayy", hf.tied && p.empty("Ayy") ? hf.Axx : hf.Ayy);
  hf.Azz = p.num_or("Azz", hf.Azz);
  hf.theta = p.num_or("theta_hf", hf.theta);
  hf.tied = hf.tied && hf.Ayy == hf.Axx;
  hf.validate();
  return hf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Outputs

/// Plot-ready table that is not one of the measurement kinds.
struct GenericTable {
  std::vector<std::string> header;
  std::vector<std::vector<io::Cell>> rows;
};

struct ReportEntry {
  std::string name;
  Estimate estimate;
  std::string unit;
};

/// Fit result: point estimates with 95% intervals plus free-form diagnostics.
struct Report {
  std::vector<ReportEntry> entries;
  json diagnostics = json::object();
  void add(const std::string& name, const Estimate& e, const std::string& unit) { entries.push_back({name, e, unit}); }
};

using Output = std::variant<io::MeasurementTable, GenericTable, Report>;

namespace detail {

inline json cell_json(const io::Cell& c) {
  if (const auto* d = std::get_if<double>(&c)) return *d;
  return std::get<std::string>(c);
}

inline json to_json(const Output& o) {
  json j;
  if (const auto* t = std::get_if<io::MeasurementTable>(&o)) {
    j["kind"] = io::kind_name(t->kind);
    j["meta"] = t->meta;
    json cols = json::object();
    for (const auto& c : t->columns) {
      const auto& s = io::schema(t->kind);
      const auto& spec = *std::find_if(s.begin(), s.end(), [&](const io::ColumnSpec& q) { return q.name == c.name; });
      cols[c.name] = {{"unit", spec.unit()}, {"values", spec.text ? json(c.labels) : json(c.values)}};
    }
    j["columns"] = cols;
  } else if (const auto* g = std::get_if<GenericTable>(&o)) {
    j["columns"] = g->header;
    json rows = json::array();
    for (const auto& r : g->rows) {
      json row = json::array();
      for (const auto& c : r) row.push_back(cell_json(c));
      rows.push_back(row);
    }
    j["rows"] = rows;
  } else {
    const auto& r = std::get<Report>(o);
    json est = json::object();
    for (const auto& e : r.entries)
      est[e.name] = {{"value", e.estimate.value}, {"lower", e.estimate.lower}, {"upper", e.estimate.upper}, {"unit", e.unit}};
    j["estimates"] = est;
    j["diagnostics"] = r.diagnostics;
  }
  return j;
}

inline void write_output(const Output& o, const std::string& format, std::ostream& out, const std::string& path) {
  if (format == "json") {
    out << to_json(o).dump(2) << '\n';
    if (!out) throw IoError("write failed: " + path);
    return;
  }
  if (const auto* t = std::get_if<io::MeasurementTable>(&o)) {
    io::write_table(*t, out, path);
  } else if (const auto* g = std::get_if<GenericTable>(&o)) {
    io::CsvWriter w(out, g->header, path);
    for (const auto& r : g->rows) w.row(r);
  } else {
    io::CsvWriter w(out, {"parameter", "value", "lower", "upper", "unit"}, path);
    for (const auto& e : std::get<Report>(o).entries)
      w.row({e.name, e.estimate.value, e.estimate.lower, e.estimate.upper, e.unit});
  }
}

inline Estimate point(double v) { return {v, v, v}; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands

struct Context {
  const io::RunConfig& config;
  const Params& params;
};

struct CommandSpec {
  std::string group;
  std::string name;
  std::string summary;
  std::size_t min_inputs = 0;
  std::size_t max_inputs = 0;
  std::string default_format = "csv";
  std::function<std::map<std::string, std::string>()> keys;
  std::function<Output(const Context&)> run;
};

namespace commands {

using detail::point;

inline std::map<std::string, std::string> form_keys(const std::string& form) {
  return {{"form", form}, {"lambda_z", ""}, {"D_es", ""}, {"Delta1", ""},
          {"Delta2", ""}, {"zpl_THz", ""},  {"D_ground", ""}};
}

struct FormSetup {
  excited::Form form;
  excited::ExcitedStateParams p;
  double zpl_THz, D_ground;
};

inline FormSetup form_setup(const Params& k) {
  FormSetup s{excited::parse_form(k.str("form")), {}, 0, 0};
  const auto pre = excited::preset(s.form);
  s.p = {k.num_or("lambda_z", pre.params.lambda_z), k.num_or("D_es", pre.params.D_es),
         k.num_or("Delta1", pre.params.Delta1), k.num_or("Delta2", pre.params.Delta2)};
  s.p.validate();
  s.zpl_THz = k.num_or("zpl_THz", pre.zpl_THz);
  s.D_ground = k.num_or("D_ground", pre.D_ground_GHz);
  return s;
}

inline io::MeasurementTable load(const Context& c, std::size_t i, io::TableKind kind) {
  return io::parse_table(c.config.inputs.at(i), kind);
}

inline Output ple_simulate(const Context& c) {
  const auto& k = c.params;
  const auto s = form_setup(k);
  if (k.choice("mode", {"fan", "ensemble"}) == "ensemble") {
    const auto strains = inference::random_strains(k.count("defects"), k.num("strain_lo"), k.num("strain_hi"), c.config.seed);
    const auto data = inference::synthesize_ple_ensemble(s.form, s.p, s.zpl_THz, s.D_ground, strains, k.num("noise_MHz"),
                                                         c.config.seed + 1, k.count("lines"));
    auto t = io::to_table(data);
    t.meta["form"] = excited::form_name(s.form);
    return t;
  }
  const auto grid = detail::linear_grid(0.0, k.num("strain_max"), k.count("strain_points"));
  const auto fan = excited::strain_fan(s.p, s.zpl_THz, s.D_ground, grid, k.num("phi"));
  GenericTable g;
  g.header = {"strain(GHz)"};
  for (auto l : excited::kLabels) g.header.push_back(excited::label_name(l) + "(THz)");
  for (auto l : excited::kLabels) g.header.push_back("ms0_" + excited::label_name(l));
  for (const auto& r : fan) {
    std::vector<io::Cell> row{r.delta_perp};
    for (double f : r.frequency_THz) row.push_back(f);
    for (double f : r.ms0_fraction) row.push_back(f);
    g.rows.push_back(std::move(row));
  }
  return g;
}

inline Output ple_fit(const Context& c) {
  const auto& k = c.params;
  const auto data = io::ple_dataset(load(c, 0, io::TableKind::ple_lines));
  std::set<excited::Form> forms;
  for (const auto& d : data.defects) forms.insert(d.form);
  excited::Form form = *forms.begin();
  if (!k.empty("form"))
    form = excited::parse_form(k.str("form"));
  else if (forms.size() > 1)
    throw UsageError("dataset holds several forms; choose one with form=");
  inference::PleFitOptions opt;
  if (!k.empty("zpl_THz")) opt.zpl_THz = k.num("zpl_THz");
  if (!k.empty("D_ground")) opt.D_ground_GHz = k.num("D_ground");
  opt.n_steps = k.count("steps");
  opt.n_walkers = k.count("walkers");
  opt.seed = c.config.seed;
  opt.move = k.choice("move", {"differential", "stretch"}) == "stretch" ? inference::Move::stretch
                                                                         : inference::Move::differential;
  opt.matching = k.choice("matching", {"optimal", "marginal"}) == "marginal" ? inference::LineMatching::marginal
                                                                             : inference::LineMatching::optimal;
  opt.sample = k.flag("sample");
  const auto fit = inference::fit_ple_ensemble(data, form, opt);
  Report r;
  for (const auto& n : fit.names) r.add(n, fit.estimate(n), "GHz");
  auto& d = r.diagnostics;
  d["form"] = excited::form_name(fit.form);
  d["zpl_nominal_THz"] = fit.zpl_nominal_THz;
  d["D_ground_GHz"] = fit.D_ground_GHz;
  d["map"] = json::object();
  for (std::size_t i = 0; i < fit.names.size(); ++i) d["map"][fit.names[i]] = fit.map[i];
  d["interval"] = fit.posterior ? "posterior median, 95% credible" : "least squares, 95% normal";
  if (fit.posterior) {
    const auto& p = *fit.posterior;
    d["converged"] = fit.converged;
    d["acceptance"] = p.acceptance;
    d["walkers"] = p.n_walkers;
    d["steps"] = p.n_steps;
    d["draws"] = p.draws();
    d["rhat"] = json::object();
    d["ess"] = json::object();
    for (std::size_t i = 0; i < p.dim(); ++i) {
      d["rhat"][p.names[i]] = p.rhat[i];
      d["ess"][p.names[i]] = p.ess[i];
    }
  }
  return r;
}

inline Output odmr_lines(const Context& c) {
  const auto& k = c.params;
  std::optional<ground::HyperfineTensor> hf;
  if (k.str("nucleus") != "none") hf = detail::tensor_from(k);
  std::mt19937_64 g(c.config.seed);
  std::normal_distribution<double> nd;
  const double noise = k.num("noise_MHz");
  if (noise < 0) throw UsageError("noise_MHz must be non-negative");
  io::MeasurementTable t(io::TableKind::odmr_resonances);
  std::vector<double> B, th, ph, br, f, sg, st;
  for (double b : k.list("B"))
    for (double a : k.list("theta")) {
      ground::GroundStateParams p;
      p.D = k.num("D");
      p.B_mag = b;
      p.B_theta = a;
      p.B_phi = k.num("phi");
      p.validate();
      const auto lines = ground::odmr_transitions(p, hf, k.flag("secular"));
      double mx = 0.0;
      for (const auto& x : lines) mx = std::max(mx, x.strength);
      for (const auto& x : lines) {
        if (!(x.strength >= k.num("min_strength") * mx) || mx == 0.0) continue;
        B.push_back(b), th.push_back(a), ph.push_back(p.B_phi), br.push_back(x.branch);
        f.push_back(x.frequency + (noise > 0 ? noise * 1e-3 * nd(g) : 0.0));
        sg.push_back(noise > 0 ? noise : 1.0);
        st.push_back(x.strength / mx);
      }
    }
  t.set("B", B);
  t.set("theta", th);
  t.set("phi", ph);
  t.set("branch", br);
  t.set("frequency", f);
  t.set("sigma", sg);
  t.set("strength", st);
  return t;
}

inline Output odmr_fit(const Context& c) {
  const auto& k = c.params;
  const auto recs = io::odmr_records(load(c, 0, io::TableKind::odmr_resonances));
  ground::HyperfineFitOptions opt;
  opt.nucleus = ground::parse_nucleus(k.str("nucleus"));
  opt.D = k.num("D");
  const auto& tie = k.choice("tie", {"auto", "tied", "free"});
  opt.tie = tie == "tied" ? ground::TieMode::Tied : tie == "free" ? ground::TieMode::Free : ground::TieMode::Auto;
  const auto fit = ground::fit_hyperfine(recs, opt);
  Report r;
  r.add("Axx", fit.Axx, "MHz");
  r.add("Ayy", fit.Ayy, "MHz");
  r.add("Azz", fit.Azz, "MHz");
  r.add("theta", fit.theta, "deg");
  r.add("Az_eff", point(ground::effective_az(fit.tensor)), "MHz");
  r.diagnostics["nucleus"] = ground::nucleus_name(opt.nucleus);
  r.diagnostics["tied"] = fit.tied;
  r.diagnostics["chi2"] = fit.chi2;
  r.diagnostics["records"] = fit.records;
  return r;
}

inline Output echo_simulate(const Context& c) {
  const auto& k = c.params;
  const auto grid = detail::linear_grid(k.num("t_min_us"), k.num("t_max_us"), k.count("points"));
  std::vector<double> times, signal;
  if (k.choice("sequence", {"hahn", "ramsey"}) == "ramsey") {
    const double T = k.num("T2star_us"), n = k.num("n"), f = k.num("detuning_MHz");
    if (!(T > 0.0)) throw UsageError("T2star_us must be positive");
    for (double t : grid) {
      times.push_back(t);
      signal.push_back(std::exp(-std::pow(t / T, n)) * std::cos(2.0 * std::numbers::pi * f * t));
    }
  } else {
    ground::GroundStateParams p;
    p.D = k.num("D");
    p.B_mag = k.num("B");
    p.B_theta = k.num("theta");
    p.validate();
    std::vector<double> tau;
    for (double t : grid) tau.push_back(0.5 * t);  // grid holds the total echo time 2τ
    const auto env = ground::hahn_echo_eseem(p, detail::tensor_from(k), k.num("T2_us"), k.num("n"), tau,
                                             k.flag("secular"));
    times = env.times;
    signal = env.signal;
  }
  io::MeasurementTable t(io::TableKind::coherence);
  const double noise = k.num("noise");
  if (noise > 0) {
    std::mt19937_64 g(c.config.seed);
    std::normal_distribution<double> nd;
    for (auto& v : signal) v += noise * nd(g);
    t.set("sigma", std::vector<double>(signal.size(), noise));
  }
  t.set("time", times);
  t.set("signal", signal);
  return t;
}

inline Output echo_fit(const Context& c) {
  const auto& k = c.params;
  const auto t = load(c, 0, io::TableKind::coherence);
  const bool fringe = k.choice("model", {"stretched", "fringe"}) == "fringe";
  ground::DecayFitOptions opt;
  opt.n_min = k.num("n_min");
  opt.n_max = k.num("n_max");
  const auto sigma = t.values_or_empty("sigma");
  const auto fit = ground::fit_decay(t.values("time"), t.values("signal"), sigma,
                                     fringe ? ground::DecayModel::Fringe : ground::DecayModel::StretchedExp, opt);
  Report r;
  r.add("amplitude", fit.amplitude, "");
  r.add("decay", fit.decay, "us");
  r.add("n", fit.n, "");
  if (fringe) {
    r.add("frequency", fit.frequency, "MHz");
    r.add("phase", fit.phase, "rad");
  }
  r.diagnostics["model"] = fringe ? "fringe" : "stretched";
  r.diagnostics["residual_norm"] = fit.residual_norm;
  return r;
}

inline Output rabi_fit(const Context& c) {
  const auto t = load(c, 0, io::TableKind::coherence);
  const auto fit = ground::rabi_fit(t.values("time"), t.values("signal"), t.values_or_empty("sigma"));
  Report r;
  r.add("frequency", fit.frequency, "MHz");
  r.add("contrast", fit.contrast, "");
  r.add("decay", fit.decay, "us");
  r.diagnostics["residual_norm"] = fit.residual_norm;
  return r;
}

inline Output rates_simulate(const Context& c) {
  const auto& k = c.params;
  const auto rates = detail::rates_from(k);
  const double pol = k.num("polarization"), fid = k.num("pi_fidelity"), noise = k.num("noise");
  if (noise < 0) throw UsageError("noise must be non-negative");
  std::mt19937_64 g(c.config.seed);
  std::normal_distribution<double> nd;
  std::vector<optical::PlTrace> traces;
  std::vector<std::string> ids;
  if (k.choice("mode", {"cw", "pulsed"}) == "pulsed") {
    const auto times = detail::linear_grid(0.0, k.num_or("t_max_ns", 200.0), k.count("points"));
    for (auto prep : {optical::Preparation::ms0, optical::Preparation::ms1}) {
      auto tr = optical::pulsed_pl(rates, optical::prepared_ms0(pol, prep, fid), times);
      tr.preparation = prep;
      // Shot-noise-like: proportional to each point.
      if (noise > 0) {
        tr.sigma.resize(tr.pl.size());
        for (std::size_t i = 0; i < tr.pl.size(); ++i) {
          tr.sigma[i] = std::max(noise * tr.pl[i], 1e-300);
          tr.pl[i] += tr.sigma[i] * nd(g);
        }
      }
      traces.push_back(tr);
      ids.push_back(prep == optical::Preparation::ms0 ? "theta0" : "thetapi");
    }
  } else {
    const auto powers = k.empty("powers") ? detail::default_powers() : k.list("powers");
    const auto times = detail::linear_grid(0.0, k.num_or("t_max_ns", 2000.0), k.count("points"));
    for (std::size_t i = 0; i < powers.size(); ++i)
      for (auto prep : {optical::Preparation::ms0, optical::Preparation::ms1}) {
        auto tr = optical::cw_pl(rates, powers[i], prep, times, pol, fid);
        // Flat noise at a fraction of the trace peak.
        if (noise > 0) {
          const double peak = *std::max_element(tr.pl.begin(), tr.pl.end());
          tr.sigma.assign(tr.pl.size(), noise * peak);
          for (auto& v : tr.pl) v += noise * peak * nd(g);
        }
        traces.push_back(tr);
        ids.push_back("P" + std::to_string(i + 1) + "_" + optical::preparation_name(prep));
      }
  }
  return io::to_table(traces, ids);
}

inline Output rates_fit_biexp(const Context& c) {
  const auto [traces, ids] = io::pl_traces(load(c, 0, io::TableKind::pl_trace));
  const optical::PlTrace* t0 = nullptr;
  const optical::PlTrace* tpi = nullptr;
  for (const auto& t : traces) (t.preparation == optical::Preparation::ms0 ? t0 : tpi) = &t;
  if (traces.size() != 2 || !t0 || !tpi) throw InvalidArgument("biexponential fit needs one ms0 and one ms1 trace");
  optical::BiexpOptions opt;
  opt.pi_fidelity = c.params.num("pi_fidelity");
  const auto fit = optical::extract_biexponential(*t0, *tpi, opt);
  Report r;
  r.add("tau0", fit.tau0, "ns");
  r.add("tau1", fit.tau1, "ns");
  r.add("polarization", fit.polarization, "");
  r.diagnostics["bg"] = fit.bg;
  r.diagnostics["amplitude0"] = fit.amplitude0;
  r.diagnostics["amplitude_pi"] = fit.amplitude_pi;
  return r;
}

inline Output rates_fit_global(const Context& c) {
  const auto& k = c.params;
  const auto [traces, ids] = io::pl_traces(load(c, 0, io::TableKind::pl_trace));
  optical::RateConstraints con;
  con.tau0 = k.num("tau0");
  con.tau1 = k.num("tau1");
  con.polarization = k.num("polarization");
  con.pi_fidelity = k.num("pi_fidelity");
  con.bg = k.num("bg");
  const auto init = detail::rates_from(k);
  const auto fit = optical::global_rate_fit(traces, con, init, k.num("eta"));
  Report r;
  const char* names[4] = {"k_r", "G_s", "beta", "eta"};
  const char* units[4] = {"1/ns", "1/ns", "1/(ns mW)", ""};
  for (int i = 0; i < 4; ++i) r.add(names[i], fit.intervals[i], units[i]);
  r.add("G_isc0", point(fit.rates.G_isc0), "1/ns");
  r.add("G_isc1", point(fit.rates.G_isc1), "1/ns");
  r.diagnostics["trace_rms"] = json::object();
  for (std::size_t i = 0; i < ids.size(); ++i) r.diagnostics["trace_rms"][ids[i]] = fit.trace_rms[i];
  r.diagnostics["tau0_ns"] = con.tau0;
  r.diagnostics["tau1_ns"] = con.tau1;
  return r;
}

inline Output g2_simulate(const Context& c) {
  const auto& k = c.params;
  const auto rates = detail::rates_from(k);
  const auto taus = detail::linear_grid(0.0, k.num("tau_max_ns"), k.count("points"));
  auto g2 = optical::g2_curve(rates, k.num("power"), taus);
  const double rho = k.num("rho");
  if (!(rho > 0.0 && rho <= 1.0)) throw UsageError("rho must lie in (0, 1]");
  for (auto& v : g2) v = rho * rho * v + (1.0 - rho * rho);  // uncorrelated background
  io::MeasurementTable t(io::TableKind::g2_histogram);
  const double noise = k.num("noise");
  if (noise > 0) {
    std::mt19937_64 g(c.config.seed);
    std::normal_distribution<double> nd;
    for (auto& v : g2) v += noise * nd(g);
    t.set("sigma", std::vector<double>(g2.size(), noise));
  }
  t.set("tau", taus);
  t.set("g2", g2);
  return t;
}

inline Output g2_correct(const Context& c) {
  const auto& k = c.params;
  const double rho = k.num("rho");
  if (c.config.inputs.empty()) {
    if (k.empty("raw")) throw UsageError("g2 correct needs an input table or raw=");
    GenericTable g{{"raw", "rho", "corrected"}, {}};
    g.rows.push_back({k.num("raw"), rho, optical::background_correct_g2(k.num("raw"), rho)});
    return g;
  }
  auto t = load(c, 0, io::TableKind::g2_histogram);
  for (auto& v : t.column("g2").values) v = optical::background_correct_g2(v, rho);
  if (t.has("sigma"))
    for (auto& v : t.column("sigma").values) v /= rho * rho;
  return t;
}

inline Output linewidth_fit(const Context& c) {
  const auto& k = c.params;
  const auto t = load(c, 0, io::TableKind::linewidth_vs_T);
  inference::LinewidthOptions opt;
  opt.exponent = k.num("exponent");
  opt.free_exponent = k.flag("free_exponent");
  opt.sigma_MHz = t.values_or_empty("sigma");
  const auto fit = inference::fit_linewidth_temperature(t.values("temperature"), t.values("width"), opt);
  Report r;
  r.add("gamma0", fit.gamma0_MHz, "MHz");
  r.add("a", fit.a, "MHz/K^n");
  r.add("exponent", fit.exponent, "");
  r.diagnostics["residuals_MHz"] = fit.residuals_MHz;
  return r;
}

inline Output saturation_fit(const Context& c) {
  const auto t = load(c, 0, io::TableKind::saturation);
  const auto fit = optical::saturation_fit(t.values("power"), t.values("rate"), t.values_or_empty("sigma"));
  Report r;
  r.add("R_max", fit.R_max, "kHz");
  r.add("P_sat", fit.P_sat, "mW");
  r.diagnostics["well_constrained"] = fit.well_constrained;
  return r;
}

inline Output mixing_report(const Context& c) {
  const auto& k = c.params;
  const auto s = form_setup(k);
  excited::ExcitedStateParams ref{k.num("ref_lambda_z"), k.num("ref_D_es"), k.num("ref_Delta1"), k.num("ref_Delta2")};
  ref.validate();
  const auto level = k.choice("level", {"Ex", "Ey"}) == "Ex" ? excited::Label::Ex : excited::Label::Ey;
  GenericTable g{{"strain(GHz)", "p_" + excited::form_name(s.form), "p_reference", "ratio", "photons_per_flip"}, {}};
  for (double d : k.list("strains")) {
    const excited::StrainVector sv{d, k.num("phi")};
    const double p = excited::spin_flip_probability(s.p, sv, level);
    const double q = excited::spin_flip_probability(ref, sv, level);
    g.rows.push_back({d, p, q, p > 0 ? q / p : std::numeric_limits<double>::infinity(),
                      p > 0 ? 1.0 / p : std::numeric_limits<double>::infinity()});
  }
  return g;
}

}  // namespace commands

inline const std::vector<CommandSpec>& registry() {
  using namespace commands;
  static const std::vector<CommandSpec> all = [] {
    auto rate_keys = [](std::map<std::string, std::string> k) {
      detail::add_rate_keys(k);
      return k;
    };
    auto hf_keys = [](std::map<std::string, std::string> k) {
      k.insert({{"nucleus", "13C-I"}, {"tensor", "experimental"}, {"Axx", ""}, {"Ayy", ""}, {"Azz", ""}, {"theta_hf", ""}});
      return k;
    };
    std::vector<CommandSpec> v;
    v.push_back({"ple", "simulate", "strain fan of the six PLE branches, or a synthetic defect ensemble", 0, 0, "csv",
                 [] {
                   auto k = form_keys("kk");
                   k.insert({{"mode", "fan"}, {"phi", "0"}, {"strain_max", "20"}, {"strain_points", "201"},
                             {"defects", "10"}, {"strain_lo", "0"}, {"strain_hi", "30"}, {"noise_MHz", "10"},
                             {"lines", "6"}});
                   return k;
                 },
                 ple_simulate});
    v.push_back({"ple", "fit", "shared excited-state parameters from a PLE line ensemble", 1, 1, "json",
                 [] {
                   return std::map<std::string, std::string>{{"form", ""},          {"zpl_THz", ""},  {"D_ground", ""},
                                                             {"steps", "5000"},     {"walkers", "0"}, {"move", "differential"},
                                                             {"matching", "optimal"}, {"sample", "1"}};
                 },
                 ple_fit});
    v.push_back({"odmr", "lines", "ground-state ODMR resonances over a field/angle grid", 0, 0, "csv",
                 [hf_keys] {
                   auto k = hf_keys({{"D", "1.336"}, {"B", "120"}, {"theta", "40"}, {"phi", "0"}, {"secular", "0"},
                                     {"noise_MHz", "0"}, {"min_strength", "0.05"}});
                   k["nucleus"] = "none";
                   return k;
                 },
                 odmr_lines});
    v.push_back({"odmr", "fit-hyperfine", "hyperfine tensor from ODMR resonances", 1, 1, "json",
                 [] {
                   return std::map<std::string, std::string>{{"nucleus", "13C-I"}, {"tie", "auto"}, {"D", "1.336"}};
                 },
                 odmr_fit});
    v.push_back({"echo", "simulate", "Hahn echo with ESEEM, or a Ramsey fringe", 0, 0, "csv",
                 [hf_keys] {
                   return hf_keys({{"sequence", "hahn"}, {"D", "1.336"}, {"B", "120"}, {"theta", "0"},
                                   {"T2_us", "901"}, {"n", "2"}, {"T2star_us", "1.8"}, {"detuning_MHz", "2"},
                                   {"t_min_us", "0"}, {"t_max_us", "3000"}, {"points", "301"}, {"noise", "0"},
                                   {"secular", "0"}});
                 },
                 echo_simulate});
    v.push_back({"echo", "fit", "stretched-exponential or fringe decay fit", 1, 1, "json",
                 [] {
                   return std::map<std::string, std::string>{{"model", "stretched"}, {"n_min", "0.5"}, {"n_max", "4"}};
                 },
                 echo_fit});
    v.push_back({"rabi", "fit", "Rabi frequency, contrast and decay", 1, 1, "json",
                 [] { return std::map<std::string, std::string>{}; }, rabi_fit});
    v.push_back({"rates", "simulate", "CW trace bundle at several powers, or a pulsed lifetime pair", 0, 0, "csv",
                 [rate_keys] {
                   return rate_keys({{"mode", "cw"}, {"powers", ""}, {"polarization", "1"}, {"pi_fidelity", "1"},
                                     {"t_max_ns", ""}, {"points", "501"}, {"noise", "0"}});
                 },
                 rates_simulate});
    v.push_back({"rates", "fit-biexp", "lifetimes and polarization from a pulsed pair", 1, 1, "json",
                 [] { return std::map<std::string, std::string>{{"pi_fidelity", "1"}}; }, rates_fit_biexp});
    auto global_keys = [rate_keys] {
      return rate_keys({{"tau0", "18.7"}, {"tau1", "15.7"}, {"polarization", "1"}, {"pi_fidelity", "1"}, {"eta", "1"}});
    };
    v.push_back({"rates", "fit-global", "shared rates from CW traces", 1, 1, "json", global_keys, rates_fit_global});
    v.push_back({"rates", "fit", "alias of fit-global", 1, 1, "json", global_keys, rates_fit_global});
    v.push_back({"g2", "simulate", "g2(tau) from the rate model", 0, 0, "csv",
                 [rate_keys] {
                   return rate_keys(
                       {{"power", "0.5"}, {"tau_max_ns", "200"}, {"points", "401"}, {"rho", "1"}, {"noise", "0"}});
                 },
                 g2_simulate});
    v.push_back({"g2", "correct", "background correction of g2 values", 0, 1, "csv",
                 [] { return std::map<std::string, std::string>{{"rho", "0.95"}, {"raw", ""}}; }, g2_correct});
    v.push_back({"linewidth", "fit", "Gamma0 + a T^n linewidth fit", 1, 1, "json",
                 [] { return std::map<std::string, std::string>{{"exponent", "5"}, {"free_exponent", "0"}}; },
                 linewidth_fit});
    v.push_back({"saturation", "fit", "R_max P/(P + P_sat) spin-flip saturation fit", 1, 1, "json",
                 [] { return std::map<std::string, std::string>{}; }, saturation_fit});
    v.push_back({"mixing", "report", "spin-flip probability against a reference parameter set", 0, 0, "csv",
                 [] {
                   auto k = form_keys("hh");
                   const auto nv = excited::nv_like_params();
                   k.insert({{"strains", "1,5,10"}, {"level", "Ex"}, {"phi", "0"}, {"ref_lambda_z", detail::full(nv.lambda_z)},
                             {"ref_D_es", detail::full(nv.D_es)}, {"ref_Delta1", detail::full(nv.Delta1)},
                             {"ref_Delta2", detail::full(nv.Delta2)}});
                   return k;
                 },
                 mixing_report});
    return v;
  }();
  return all;
}

inline const CommandSpec* find_command(const std::vector<std::string>& words) {
  if (words.size() != 2) return nullptr;
  for (const auto& c : registry())
    if (c.group == words[0] && c.name == words[1]) return &c;
  return nullptr;
}

inline std::string usage() {
  std::ostringstream s;
  s << "usage: divac <group> <command> [inputs...] [--config PATH] [--seed N] [--out PATH] [--format csv|json]"
       " [--set key=value]...\ncommands:\n";
  for (const auto& c : registry()) {
    std::string name = c.group + " " + c.name;
    s << "  " << name << std::string(name.size() < 26 ? 26 - name.size() : 1, ' ') << c.summary << '\n';
  }
  return s.str();
}

// ---------------------------------------------------------------------------
// Orchestration

namespace detail {

inline std::string fnv1a64(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 14];
  while (f.read(buf, sizeof buf) || f.gcount() > 0) {
    for (std::streamsize i = 0; i < f.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

inline std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace detail

inline std::string manifest_path(const std::string& out) { return out + ".manifest.json"; }

/// Runs one command. Results go to config.output (or `out` when empty); a
/// JSON manifest is written next to file outputs. Returns the exit status:
/// 0 success, 1 failure, 2 usage error.
inline int run_command(const io::RunConfig& config, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  const auto start = std::chrono::steady_clock::now();
  try {
    const auto* spec = find_command(config.command);
    if (!spec) {
      std::string words;
      for (const auto& w : config.command) words += (words.empty() ? "" : " ") + w;
      throw UsageError(words.empty() ? "no command given" : "unknown command '" + words + "'");
    }
    if (config.inputs.size() < spec->min_inputs || config.inputs.size() > spec->max_inputs)
      throw UsageError(spec->group + " " + spec->name + " takes " +
                       (spec->min_inputs == spec->max_inputs ? std::to_string(spec->min_inputs)
                                                             : std::to_string(spec->min_inputs) + " to " +
                                                                   std::to_string(spec->max_inputs)) +
                       " input file(s)");
    const std::string format = config.format.empty() ? spec->default_format : config.format;
    if (format != "csv" && format != "json") throw UsageError("format must be csv or json");
    const Params params(config.overrides, spec->keys());
    namespace fs = std::filesystem;
    if (!config.output.empty())
      for (const auto& in : config.inputs) {
        std::error_code ec;
        if (in == config.output || fs::equivalent(in, config.output, ec))
          throw UsageError("output would overwrite input " + in);
      }

    const Output result = spec->run(Context{config, params});

    if (config.output.empty()) {
      detail::write_output(result, format, out, "<stdout>");
      out.flush();
      return 0;
    }
    {
      std::ofstream f(config.output, std::ios::binary);
      if (!f) throw IoError("cannot open for writing: " + config.output);
      detail::write_output(result, format, f, config.output);
      f.flush();
      if (!f) throw IoError("write failed: " + config.output);
    }
    json m;
    m["tool"] = "divac";
    m["version"] = kVersion;
    m["compiler"] = __VERSION__;
    m["command"] = spec->group + " " + spec->name;
    m["seed"] = config.seed;
    m["format"] = format;
    m["output"] = config.output;
    m["overrides"] = config.overrides;
    m["parameters"] = json::object();
    for (const auto& [key, _] : spec->keys()) m["parameters"][key] = params.str(key);
    m["inputs"] = json::array();
    for (const auto& in : config.inputs)
      m["inputs"].push_back({{"path", in}, {"bytes", fs::file_size(in)}, {"fnv1a64", detail::fnv1a64(in)}});
    if (config.timing)
      m["wall_time_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::ofstream f(manifest_path(config.output), std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + manifest_path(config.output));
    f << m.dump(2) << '\n';
    if (!f) throw IoError("write failed: " + manifest_path(config.output));
    return 0;
  } catch (const UsageError& e) {
    err << "divac: " << detail::one_line(e.what()) << '\n' << usage();
    return 2;
  } catch (const std::exception& e) {
    err << "divac: error: " << detail::one_line(e.what()) << '\n';
    return 1;
  }
}

}  // namespace divac::cli
