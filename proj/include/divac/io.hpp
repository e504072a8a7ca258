#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "divac/errors.hpp"
#include "divac/ground_spin.hpp"
#include "divac/inference/ple_ensemble.hpp"
#include "divac/optical_cycle.hpp"

namespace divac::io {

inline constexpr std::uint64_t kDefaultSeed = 1729;
inline constexpr double kSpeedOfLight_nm_THz = 299792.458;  // c in nm·THz

enum class TableKind { ple_lines, odmr_resonances, pl_trace, g2_histogram, linewidth_vs_T, saturation, coherence };

inline constexpr TableKind kAllKinds[] = {TableKind::ple_lines,      TableKind::odmr_resonances, TableKind::pl_trace,
                                          TableKind::g2_histogram,   TableKind::linewidth_vs_T,  TableKind::saturation,
                                          TableKind::coherence};

inline std::string kind_name(TableKind k) {
  switch (k) {
    case TableKind::ple_lines: return "ple-lines";
    case TableKind::odmr_resonances: return "odmr-resonances";
    case TableKind::pl_trace: return "pl-trace";
    case TableKind::g2_histogram: return "g2-histogram";
    case TableKind::linewidth_vs_T: return "linewidth-vs-T";
    case TableKind::saturation: return "saturation";
    case TableKind::coherence: return "coherence";
  }
  throw InvalidArgument("unknown table kind");
}

inline TableKind parse_kind(const std::string& s) {
  for (auto k : kAllKinds)
    if (kind_name(k) == s) return k;
  throw InvalidArgument("unknown table kind '" + s + "'");
}

// ---------------------------------------------------------------------------
// Schemas

/// Accepted header unit: internal = factor·x, or factor/x when reciprocal.
struct UnitRule {
  std::string unit;
  double factor = 1.0;
  bool reciprocal = false;
};

struct ColumnSpec {
  std::string name;
  bool text = false;
  bool required = true;
  std::vector<UnitRule> units;  // first entry is the internal unit; empty for text
  const std::string& unit() const {
    static const std::string none;
    return units.empty() ? none : units.front().unit;
  }
};

namespace detail {

inline std::vector<UnitRule> dimensionless() { return {{""}}; }
inline std::vector<UnitRule> thz() { return {{"THz"}, {"GHz", 1e-3}, {"nm", kSpeedOfLight_nm_THz, true}}; }
inline std::vector<UnitRule> ghz() { return {{"GHz"}, {"MHz", 1e-3}, {"THz", 1e3}}; }
inline std::vector<UnitRule> mhz() { return {{"MHz"}, {"kHz", 1e-3}, {"GHz", 1e3}}; }
inline std::vector<UnitRule> khz() { return {{"kHz"}, {"Hz", 1e-3}, {"MHz", 1e3}}; }
inline std::vector<UnitRule> ns() { return {{"ns"}, {"ps", 1e-3}, {"us", 1e3}, {"µs", 1e3}}; }
inline std::vector<UnitRule> us() { return {{"us"}, {"µs", 1.0}, {"ns", 1e-3}, {"ms", 1e3}}; }
inline std::vector<UnitRule> mw() { return {{"mW"}, {"uW", 1e-3}, {"µW", 1e-3}, {"W", 1e3}}; }
inline std::vector<UnitRule> gauss() { return {{"G"}, {"mT", 10.0}, {"T", 1e4}}; }
inline std::vector<UnitRule> degrees() { return {{"deg"}, {"rad", 180.0 / std::numbers::pi}}; }
inline std::vector<UnitRule> kelvin() { return {{"K"}}; }

}  // namespace detail

inline const std::vector<ColumnSpec>& schema(TableKind k) {
  using namespace detail;
  static const std::map<TableKind, std::vector<ColumnSpec>> all{
      {TableKind::ple_lines,
       {{"defect", true, true, {}},
        {"form", true, true, {}},
        {"frequency", false, true, thz()},
        {"sigma", false, false, mhz()},
        {"microwave", false, false, dimensionless()}}},
      {TableKind::odmr_resonances,
       {{"B", false, true, gauss()},
        {"theta", false, true, degrees()},
        {"phi", false, false, degrees()},
        {"branch", false, true, dimensionless()},
        {"frequency", false, true, ghz()},
        {"sigma", false, false, mhz()},
        {"strength", false, false, dimensionless()}}},
      {TableKind::pl_trace,
       {{"trace", true, true, {}},
        {"preparation", true, true, {}},
        {"power", false, true, mw()},
        {"time", false, true, ns()},
        {"pl", false, true, dimensionless()},
        {"sigma", false, false, dimensionless()}}},
      {TableKind::g2_histogram,
       {{"tau", false, true, ns()}, {"g2", false, true, dimensionless()}, {"sigma", false, false, dimensionless()}}},
      {TableKind::linewidth_vs_T,
       {{"temperature", false, true, kelvin()}, {"width", false, true, mhz()}, {"sigma", false, false, mhz()}}},
      {TableKind::saturation,
       {{"power", false, true, mw()}, {"rate", false, true, khz()}, {"sigma", false, false, khz()}}},
      {TableKind::coherence,
       {{"time", false, true, us()}, {"signal", false, true, dimensionless()}, {"sigma", false, false, dimensionless()}}},
  };
  return all.at(k);
}

inline std::string header_cell(const ColumnSpec& c) { return c.unit().empty() ? c.name : c.name + "(" + c.unit() + ")"; }

// ---------------------------------------------------------------------------
// Table

struct Column {
  std::string name;
  std::vector<double> values;       // numeric columns, internal units
  std::vector<std::string> labels;  // text columns
  bool operator==(const Column&) const = default;
};

struct MeasurementTable {
  TableKind kind = TableKind::ple_lines;
  std::map<std::string, std::string> meta;  // sample, defect, temperature_K, ...
  std::vector<Column> columns;              // present columns, schema order

  explicit MeasurementTable(TableKind k = TableKind::ple_lines) : kind(k) {}

  bool operator==(const MeasurementTable&) const = default;

  bool has(std::string_view name) const {
    return std::any_of(columns.begin(), columns.end(), [&](const Column& c) { return c.name == name; });
  }
  const Column& column(std::string_view name) const {
    for (const auto& c : columns)
      if (c.name == name) return c;
    throw InvalidArgument(kind_name(kind) + " table has no column '" + std::string(name) + "'");
  }
  Column& column(std::string_view name) {
    return const_cast<Column&>(static_cast<const MeasurementTable&>(*this).column(name));
  }
  const std::vector<double>& values(std::string_view name) const { return column(name).values; }
  const std::vector<std::string>& labels(std::string_view name) const { return column(name).labels; }
  std::vector<double> values_or_empty(std::string_view name) const {
    return has(name) ? values(name) : std::vector<double>{};
  }

  std::size_t rows() const {
    if (columns.empty()) return 0;
    return std::max(columns.front().values.size(), columns.front().labels.size());
  }

  /// Adds a column in schema position. Values are in internal units.
  Column& add(const std::string& name) {
    const auto& s = schema(kind);
    const auto it = std::find_if(s.begin(), s.end(), [&](const ColumnSpec& c) { return c.name == name; });
    if (it == s.end()) throw InvalidArgument(kind_name(kind) + " tables have no column '" + name + "'");
    if (has(name)) throw InvalidArgument("duplicate column '" + name + "'");
    const auto pos = static_cast<std::size_t>(it - s.begin());
    auto at = std::find_if(columns.begin(), columns.end(), [&](const Column& c) {
      const auto j = std::find_if(s.begin(), s.end(), [&](const ColumnSpec& q) { return q.name == c.name; });
      return static_cast<std::size_t>(j - s.begin()) > pos;
    });
    return *columns.insert(at, Column{name, {}, {}});
  }
  void set(const std::string& name, std::vector<double> v) { add(name).values = std::move(v); }
  void set_labels(const std::string& name, std::vector<std::string> v) { add(name).labels = std::move(v); }

  /// Required columns present, lengths equal, numeric cells finite.
  void validate() const {
    for (const auto& spec : schema(kind)) {
      if (spec.required && !has(spec.name))
        throw InvalidArgument(kind_name(kind) + " table is missing column '" + spec.name + "'");
      if (!has(spec.name)) continue;
      const auto& c = column(spec.name);
      if (spec.text ? !c.values.empty() : !c.labels.empty())
        throw InvalidArgument("column '" + spec.name + "' has the wrong cell type");
      const std::size_t n = spec.text ? c.labels.size() : c.values.size();
      if (n != rows()) throw InvalidArgument("column '" + spec.name + "' length differs from the table");
      for (double v : c.values)
        if (!std::isfinite(v)) throw NonFiniteError("column '" + spec.name + "' has a non-finite value");
    }
  }
};

// ---------------------------------------------------------------------------
// CSV writing

using Cell = std::variant<double, std::string>;

inline std::string format_number(double v) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof buf, "%.9g", v);
  return std::string(buf, static_cast<std::size_t>(n));
}

/// Row-at-a-time CSV output (LF endings, 9 significant digits).
class CsvWriter {
 public:
  CsvWriter(std::ostream& out, const std::vector<std::string>& header, std::string path = "<stream>")
      : out_(out), width_(header.size()), path_(std::move(path)) {
    write_cells(header);
  }

  void row(const std::vector<Cell>& cells) {
    if (cells.size() != width_) throw InvalidArgument("CSV row has the wrong number of cells");
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_.put(',');
      if (const auto* d = std::get_if<double>(&cells[i]))
        out_ << format_number(*d);
      else
        put_text(std::get<std::string>(cells[i]));
    }
    out_.put('\n');
    check();
  }

  void row(std::initializer_list<double> v) {
    if (v.size() != width_) throw InvalidArgument("CSV row has the wrong number of cells");
    bool first = true;
    for (double x : v) {
      if (!first) out_.put(',');
      first = false;
      out_ << format_number(x);
    }
    out_.put('\n');
    check();
  }

 private:
  void put_text(const std::string& s) {
    if (s.find_first_of(",\n\r\"") != std::string::npos)
      throw InvalidArgument("text cell '" + s + "' contains a comma, quote or newline");
    out_ << s;
  }
  void write_cells(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_.put(',');
      put_text(cells[i]);
    }
    out_.put('\n');
    check();
  }
  void check() {
    if (!out_) throw IoError("write failed: " + path_);
  }

  std::ostream& out_;
  std::size_t width_;
  std::string path_;
};

inline void write_table(const MeasurementTable& t, std::ostream& out, const std::string& path = "<stream>") {
  t.validate();
  for (const auto& [k, v] : t.meta) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw InvalidArgument("metadata key/value must be single-line and '='-free in the key");
    out << "# " << k << " = " << v << '\n';
  }
  const auto& s = schema(t.kind);
  std::vector<const ColumnSpec*> specs;
  std::vector<std::string> header;
  for (const auto& c : t.columns) {
    specs.push_back(&*std::find_if(s.begin(), s.end(), [&](const ColumnSpec& q) { return q.name == c.name; }));
    header.push_back(header_cell(*specs.back()));
  }
  CsvWriter w(out, header, path);
  std::vector<Cell> cells(t.columns.size());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t i = 0; i < t.columns.size(); ++i) {
      if (specs[i]->text)
        cells[i] = t.columns[i].labels[r];
      else
        cells[i] = t.columns[i].values[r];
    }
    w.row(cells);
  }
}

/// Writes the table as unit-annotated CSV, streaming row by row.
inline void emit_table(const MeasurementTable& t, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  write_table(t, f, path);
  f.flush();
  if (!f) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// CSV reading

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_csv(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline bool parse_double(const std::string& s, double& v) {
  const char* b = s.data();
  const char* e = b + s.size();
  if (b != e && *b == '+') ++b;
  const auto r = std::from_chars(b, e, v);
  return r.ec == std::errc() && r.ptr == e;
}

}  // namespace detail

/// Reads a unit-annotated CSV table of the given kind, converting to internal units.
inline MeasurementTable read_table(std::istream& in, TableKind kind, const std::string& source = "<stream>") {
  const auto& s = schema(kind);
  MeasurementTable t(kind);
  std::string line;
  std::size_t lineno = 0;
  struct Bound {
    const ColumnSpec* spec;
    UnitRule rule;
    std::string header;
  };
  std::vector<Bound> bound;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto trimmed = detail::trim(line);
    if (trimmed.empty()) continue;
    if (trimmed[0] == '#') {
      const auto eq = trimmed.find('=');
      if (eq != std::string::npos) {
        const auto key = detail::trim(std::string_view(trimmed).substr(1, eq - 1));
        if (!key.empty()) t.meta[key] = detail::trim(std::string_view(trimmed).substr(eq + 1));
      }
      continue;
    }
    auto cells = detail::split_csv(trimmed);
    if (!have_header) {
      have_header = true;
      for (const auto& h : cells) {
        std::string name = h, unit;
        const auto open = h.find('(');
        if (open != std::string::npos) {
          if (h.back() != ')') throw LoadError(source, lineno, h, "malformed unit annotation");
          name = detail::trim(std::string_view(h).substr(0, open));
          unit = detail::trim(std::string_view(h).substr(open + 1, h.size() - open - 2));
        }
        const auto it = std::find_if(s.begin(), s.end(), [&](const ColumnSpec& c) { return c.name == name; });
        if (it == s.end()) throw LoadError(source, lineno, name, "not a " + kind_name(kind) + " column");
        if (std::any_of(bound.begin(), bound.end(), [&](const Bound& b) { return b.spec == &*it; }))
          throw LoadError(source, lineno, name, "duplicate column");
        UnitRule rule;
        if (it->text) {
          if (!unit.empty()) throw LoadError(source, lineno, name, "text column takes no unit");
        } else {
          const auto u = std::find_if(it->units.begin(), it->units.end(), [&](const UnitRule& r) { return r.unit == unit; });
          if (u == it->units.end())
            throw LoadError(source, lineno, name,
                            "unit mismatch: got '" + unit + "', expected '" + it->unit() + "' or a convertible unit");
          rule = *u;
        }
        bound.push_back({&*it, rule, h});
      }
      for (const auto& c : s)
        if (c.required && std::none_of(bound.begin(), bound.end(), [&](const Bound& b) { return b.spec == &c; }))
          throw LoadError(source, lineno, c.name, "missing required column");
      // Columns stored in schema order regardless of file order.
      for (const auto& c : s)
        if (std::any_of(bound.begin(), bound.end(), [&](const Bound& b) { return b.spec == &c; })) t.add(c.name);
      continue;
    }
    if (cells.size() != bound.size())
      throw LoadError(source, lineno, "", "expected " + std::to_string(bound.size()) + " cells, got " +
                                              std::to_string(cells.size()));
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const auto& b = bound[i];
      auto& col = t.column(b.spec->name);
      if (b.spec->text) {
        if (cells[i].empty()) throw LoadError(source, lineno, b.spec->name, "empty cell");
        col.labels.push_back(cells[i]);
        continue;
      }
      double v = 0.0;
      if (!detail::parse_double(cells[i], v)) throw LoadError(source, lineno, b.spec->name, "not a number: '" + cells[i] + "'");
      if (!std::isfinite(v)) throw LoadError(source, lineno, b.spec->name, "non-finite value '" + cells[i] + "'");
      if (b.rule.reciprocal) {
        if (v == 0.0) throw LoadError(source, lineno, b.spec->name, "zero cannot be converted from " + b.rule.unit);
        v = b.rule.factor / v;
      } else {
        v *= b.rule.factor;
      }
      col.values.push_back(v);
    }
  }
  if (!have_header) throw LoadError(source, 0, "", "no header row");
  return t;
}

inline MeasurementTable parse_table(const std::string& path, TableKind kind) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path);
  return read_table(f, kind, path);
}

// ---------------------------------------------------------------------------
// Domain conversions

inline MeasurementTable to_table(const inference::EnsemblePleDataset& d) {
  MeasurementTable t(TableKind::ple_lines);
  std::vector<std::string> ids, forms;
  std::vector<double> f, s, mw;
  for (const auto& rec : d.defects)
    for (const auto& l : rec.lines) {
      ids.push_back(rec.id);
      forms.push_back(excited::form_name(rec.form));
      f.push_back(l.frequency_THz);
      s.push_back(l.sigma_MHz);
      mw.push_back(l.microwave_on ? 1.0 : 0.0);
    }
  t.set_labels("defect", ids);
  t.set_labels("form", forms);
  t.set("frequency", f);
  t.set("sigma", s);
  t.set("microwave", mw);
  return t;
}

/// Groups rows by defect id in order of first appearance.
inline inference::EnsemblePleDataset ple_dataset(const MeasurementTable& t) {
  if (t.kind != TableKind::ple_lines) throw InvalidArgument("expected a ple-lines table");
  t.validate();
  inference::EnsemblePleDataset d;
  std::map<std::string, std::size_t> index;
  const auto& ids = t.labels("defect");
  const auto& forms = t.labels("form");
  const auto& f = t.values("frequency");
  const auto sig = t.values_or_empty("sigma");
  const auto mw = t.values_or_empty("microwave");
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const auto form = excited::parse_form(forms[r]);
    auto [it, fresh] = index.emplace(ids[r], d.defects.size());
    if (fresh) d.defects.push_back({ids[r], form, {}});
    auto& rec = d.defects[it->second];
    if (rec.form != form) throw InvalidArgument("defect " + ids[r] + " listed with two forms");
    if (!mw.empty() && mw[r] != 0.0 && mw[r] != 1.0) throw InvalidArgument("microwave flag must be 0 or 1");
    rec.lines.push_back({f[r], sig.empty() ? 10.0 : sig[r], mw.empty() || mw[r] != 0.0});
  }
  d.validate();
  return d;
}

inline MeasurementTable to_table(const std::vector<ground::OdmrRecord>& recs) {
  MeasurementTable t(TableKind::odmr_resonances);
  std::vector<double> B, th, ph, br, f, s;
  for (const auto& r : recs) {
    B.push_back(r.B_G), th.push_back(r.theta_deg), ph.push_back(r.phi_deg), br.push_back(r.branch);
    f.push_back(r.freq_GHz), s.push_back(r.sigma_MHz);
  }
  t.set("B", B);
  t.set("theta", th);
  t.set("phi", ph);
  t.set("branch", br);
  t.set("frequency", f);
  t.set("sigma", s);
  return t;
}

inline std::vector<ground::OdmrRecord> odmr_records(const MeasurementTable& t) {
  if (t.kind != TableKind::odmr_resonances) throw InvalidArgument("expected an odmr-resonances table");
  t.validate();
  const auto ph = t.values_or_empty("phi");
  const auto sg = t.values_or_empty("sigma");
  std::vector<ground::OdmrRecord> out;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const double b = t.values("branch")[r];
    if (b != 1.0 && b != -1.0) throw InvalidArgument("ODMR branch must be +1 or -1 (row " + std::to_string(r + 1) + ")");
    out.push_back({t.values("B")[r], t.values("theta")[r], ph.empty() ? 0.0 : ph[r], static_cast<int>(b),
                   t.values("frequency")[r], sg.empty() ? 1.0 : sg[r]});
  }
  return out;
}

inline MeasurementTable to_table(const std::vector<optical::PlTrace>& traces, const std::vector<std::string>& ids) {
  if (ids.size() != traces.size()) throw InvalidArgument("one id per trace required");
  MeasurementTable t(TableKind::pl_trace);
  std::vector<std::string> id, prep;
  std::vector<double> power, time, pl, sigma;
  const bool with_sigma = std::all_of(traces.begin(), traces.end(), [](const auto& tr) { return !tr.sigma.empty(); });
  for (std::size_t k = 0; k < traces.size(); ++k) {
    const auto& tr = traces[k];
    for (std::size_t i = 0; i < tr.times.size(); ++i) {
      id.push_back(ids[k]);
      prep.push_back(optical::preparation_name(tr.preparation));
      power.push_back(tr.power);
      time.push_back(tr.times[i]);
      pl.push_back(tr.pl[i]);
      if (with_sigma) sigma.push_back(tr.sigma[i]);
    }
  }
  t.set_labels("trace", id);
  t.set_labels("preparation", prep);
  t.set("power", power);
  t.set("time", time);
  t.set("pl", pl);
  if (with_sigma) t.set("sigma", sigma);
  return t;
}

inline optical::Preparation parse_preparation(const std::string& s) {
  if (s == "ms0") return optical::Preparation::ms0;
  if (s == "ms1") return optical::Preparation::ms1;
  throw InvalidArgument("preparation must be ms0 or ms1, got '" + s + "'");
}

/// Traces in order of first appearance, with their ids.
inline std::pair<std::vector<optical::PlTrace>, std::vector<std::string>> pl_traces(const MeasurementTable& t) {
  if (t.kind != TableKind::pl_trace) throw InvalidArgument("expected a pl-trace table");
  t.validate();
  std::vector<optical::PlTrace> out;
  std::vector<std::string> ids;
  std::map<std::string, std::size_t> index;
  const auto sg = t.values_or_empty("sigma");
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const auto& id = t.labels("trace")[r];
    auto [it, fresh] = index.emplace(id, out.size());
    if (fresh) {
      out.emplace_back();
      ids.push_back(id);
      out.back().power = t.values("power")[r];
      out.back().preparation = parse_preparation(t.labels("preparation")[r]);
    }
    auto& tr = out[it->second];
    if (tr.power != t.values("power")[r] || tr.preparation != parse_preparation(t.labels("preparation")[r]))
      throw InvalidArgument("trace " + id + " changes power or preparation between rows");
    tr.times.push_back(t.values("time")[r]);
    tr.pl.push_back(t.values("pl")[r]);
    if (!sg.empty()) tr.sigma.push_back(sg[r]);
  }
  return {out, ids};
}

// ---------------------------------------------------------------------------
// Run configuration

struct RunConfig {
  std::vector<std::string> command;  // e.g. {"ple", "fit"}
  std::vector<std::string> inputs;
  std::string output;                // empty: standard output
  std::uint64_t seed = kDefaultSeed;
  std::string format;                // csv or json; empty picks the command's default
  std::map<std::string, std::string> overrides;
  bool timing = false;
};

namespace detail {

inline std::vector<std::string> words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

inline std::uint64_t parse_seed(const std::string& s) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw InvalidArgument("seed must be a non-negative integer");
  return v;
}

}  // namespace detail

/// Adds one `key=value` override; keys are checked by the command that runs.
inline void add_override(RunConfig& c, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos) throw InvalidArgument("override '" + kv + "' is not key=value");
  const auto key = detail::trim(std::string_view(kv).substr(0, eq));
  if (key.empty()) throw InvalidArgument("override '" + kv + "' has an empty key");
  c.overrides[key] = detail::trim(std::string_view(kv).substr(eq + 1));
}

/// Line-oriented `key = value` with `#` comments. Reserved keys: command,
/// input (repeatable), out, seed, format, timing; anything else is a model
/// parameter override.
inline RunConfig parse_config(std::istream& in, const std::string& source = "<config>") {
  RunConfig c;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto t = detail::trim(line);
    if (t.empty() || t == "\r") continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw LoadError(source, lineno, "", "expected key = value");
    const auto key = detail::trim(std::string_view(t).substr(0, eq));
    auto value = detail::trim(std::string_view(t).substr(eq + 1));
    if (!value.empty() && value.back() == '\r') value.pop_back();
    if (key.empty()) throw LoadError(source, lineno, "", "empty key");
    try {
      if (key == "command")
        c.command = detail::words(value);
      else if (key == "input")
        c.inputs.push_back(value);
      else if (key == "out")
        c.output = value;
      else if (key == "seed")
        c.seed = detail::parse_seed(value);
      else if (key == "format")
        c.format = value;
      else if (key == "timing")
        c.timing = value == "1" || value == "true";
      else
        c.overrides[key] = value;
    } catch (const InvalidArgument& e) {
      throw LoadError(source, lineno, key, e.what());
    }
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config: " + path);
  return parse_config(f, path);
}

}  // namespace divac::io
