#pragma once

// Run-configuration layer: a small INI-style text format (sections of
// key = value lines, '#' comments) parsed into a RunConfig, validated with
// per-field error collection, and serialized back in a canonical form so that
// parse -> serialize -> parse is a fixed point. The exact syntax is documented
// in docs/config_schema.md (schema version 1).

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "ttns/common.hpp"
#include "ttns/initstates.hpp"
#include "ttns/tdvp.hpp"
#include "ttns/topology.hpp"

namespace ttns {

inline constexpr int kConfigSchemaVersion = 1;

// Critical transverse-field ratio of the square-lattice Ising model in a
// transverse field; configs may give g and h as multiples of this value.
inline constexpr double kCriticalG = 3.04;

enum class Backend { ttn, ed, pxp_ed, fermion };

inline std::string to_string(Backend b) {
  switch (b) {
    case Backend::ttn: return "ttn";
    case Backend::ed: return "ed";
    case Backend::pxp_ed: return "pxp_ed";
    case Backend::fermion: return "fermion";
  }
  throw Error("to_string: unknown backend");
}

struct ObservableChoice {
  bool site_x = true;
  bool site_z = true;
  bool correlations = false;
  bool spectrum = false;
  bool energy = true;
  bool domain_walls = true;
  enum class Entropy { all, none, list } entropy = Entropy::all;
  std::vector<int> entropy_levels;  // populated only for Entropy::list

  friend bool operator==(const ObservableChoice&, const ObservableChoice&) = default;
};

struct OutputChoice {
  std::string directory;
  bool jsonl = true;
  bool csv = true;

  friend bool operator==(const OutputChoice&, const OutputChoice&) = default;
};

struct RunConfig {
  int lx = 0;
  int ly = 0;
  double j = 1.0;  // reduced units: times are measured in 1/J
  double g = 0.0;
  double h = 0.0;
  PatternSpec initial;
  TdvpConfig evolution;
  int chi = 32;
  int stride = 1;
  Backend backend = Backend::ttn;
  std::uint64_t seed = 1;
  ObservableChoice observables;
  OutputChoice output;
};

// Collected field-level validation failures; `what()` joins all of them.
class ConfigErrors : public Error {
public:
  explicit ConfigErrors(std::vector<std::string> fields)
      : Error(join(fields)), fields_(std::move(fields)) {}
  const std::vector<std::string>& fields() const { return fields_; }

private:
  static std::string join(const std::vector<std::string>& fields) {
    std::string out = "invalid configuration:";
    for (const std::string& f : fields) out += "\n  - " + f;
    return out;
  }
  std::vector<std::string> fields_;
};

namespace cfg_detail {

inline std::string trim(std::string_view v) {
  const auto b = v.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = v.find_last_not_of(" \t\r");
  return std::string(v.substr(b, e - b + 1));
}

// Raw parse result: section -> key -> value, with duplicate detection.
struct RawConfig {
  std::map<std::string, std::map<std::string, std::string>> sections;
  std::vector<std::string> duplicates;
};

inline bool valid_name(const std::string& s) {
  if (s.empty()) return false;
  if (!std::isalpha(static_cast<unsigned char>(s[0])) && s[0] != '_') return false;
  return std::all_of(s.begin(), s.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '_';
  });
}

// Splits the text into sections of key = value lines. Syntax errors (not
// semantic ones) throw immediately with a line number.
inline RawConfig parse_raw(std::string_view text) {
  RawConfig raw;
  std::string section;  // keys before any [section] live in ""
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t eol = std::min(text.find('\n', pos), text.size());
    std::string line(text.substr(pos, eol - pos));
    pos = eol + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no);
    if (line.front() == '[') {
      require(line.back() == ']', "config " + where + ": unterminated section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      require(valid_name(section), "config " + where + ": bad section name '" + section + "'");
      raw.sections[section];  // empty sections are legal
      continue;
    }
    const auto eq = line.find('=');
    require(eq != std::string::npos, "config " + where + ": expected 'key = value'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    require(valid_name(key), "config " + where + ": bad key name '" + key + "'");
    const std::string label = section.empty() ? key : section + "." + key;
    if (!raw.sections[section].emplace(key, value).second)
      raw.duplicates.push_back(label + ": given more than once");
  }
  return raw;
}

// Typed accessors over a RawConfig that collect errors instead of throwing.
class Fields {
public:
  Fields(const RawConfig& raw, std::vector<std::string>& errors)
      : raw_(&raw), errors_(&errors) {}

  std::optional<std::string> take(const std::string& section, const std::string& key) {
    seen_.insert(section + "\n" + key);
    const auto s = raw_->sections.find(section);
    if (s == raw_->sections.end()) return std::nullopt;
    const auto k = s->second.find(key);
    if (k == s->second.end()) return std::nullopt;
    return k->second;
  }

  template <class Parse>
  auto field(const std::string& section, const std::string& key, Parse&& parse)
      -> std::optional<decltype(parse(std::string{}))> {
    const auto v = take(section, key);
    if (!v) return std::nullopt;
    try {
      return parse(*v);
    } catch (const Error& e) {
      fail(section, key, e.what());
      return std::nullopt;
    }
  }

  void fail(const std::string& section, const std::string& key, const std::string& msg) {
    errors_->push_back((section.empty() ? key : section + "." + key) + ": " + msg);
  }

  void missing(const std::string& section, const std::string& key) {
    fail(section, key, "required but missing");
  }

  // Every key the schema never asked about is unknown: flag it.
  void flag_unknown() {
    static const std::set<std::string> known_sections{"",          "lattice", "model",
                                                      "initial",   "evolution", "run",
                                                      "observables", "output"};
    for (const auto& [section, kv] : raw_->sections) {
      if (!known_sections.count(section)) {
        errors_->push_back("[" + section + "]: unknown section");
        continue;
      }
      for (const auto& [key, value] : kv)
        if (!seen_.count(section + "\n" + key))
          fail(section, key, "unknown key");
    }
  }

private:
  const RawConfig* raw_;
  std::vector<std::string>* errors_;
  std::set<std::string> seen_;
};

inline long long parse_int(const std::string& v) {
  long long out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  require(ec == std::errc{} && p == v.data() + v.size(), "not an integer: '" + v + "'");
  return out;
}

inline double parse_real(const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    require(used == v.size(), "not a number: '" + v + "'");
    return out;
  } catch (const std::exception&) {
    throw Error("not a number: '" + v + "'");
  }
}

inline bool parse_bool(const std::string& v) {
  std::string s = v;
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s == "true" || s == "yes" || s == "on" || s == "1") return true;
  if (s == "false" || s == "no" || s == "off" || s == "0") return false;
  throw Error("not a boolean: '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= v.size()) {
    const std::size_t comma = std::min(v.find(',', pos), v.size());
    const std::string item = trim(std::string_view(v).substr(pos, comma - pos));
    if (!item.empty()) out.push_back(item);
    pos = comma + 1;
  }
  return out;
}

inline std::string format_real(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  require(ec == std::errc{}, "format_real: conversion failed");
  return std::string(buf, p);
}

inline bool is_power_of_two(int v) { return v >= 1 && (v & (v - 1)) == 0; }

}  // namespace cfg_detail

// Parses and validates a full run configuration. All semantic problems are
// collected and reported together as ConfigErrors; syntax problems (bad
// lines) throw Error immediately.
inline RunConfig run_config_from_text(std::string_view text) {
  using namespace cfg_detail;
  const RawConfig raw = parse_raw(text);
  std::vector<std::string> errors = raw.duplicates;
  Fields f(raw, errors);
  RunConfig c;

  // --- schema --------------------------------------------------------------
  if (const auto v = f.field("", "schema", parse_int)) {
    if (*v != kConfigSchemaVersion)
      f.fail("", "schema", "unsupported version " + std::to_string(*v) + " (expected " +
                               std::to_string(kConfigSchemaVersion) + ")");
  } else {
    f.missing("", "schema");
  }

  // --- lattice ---------------------------------------------------------------
  auto dim = [&](const char* key) -> int {
    if (const auto v = f.field("lattice", key, parse_int)) {
      if (*v >= 1 && *v <= 1 << 20) return static_cast<int>(*v);
      f.fail("lattice", key, "must be a positive side length");
    } else {
      f.missing("lattice", key);
    }
    return 0;
  };
  c.lx = dim("Lx");
  c.ly = dim("Ly");

  // --- model -----------------------------------------------------------------
  if (const auto v = f.field("model", "J", parse_real)) {
    if (*v > 0.0)
      c.j = *v;
    else
      f.fail("model", "J", "must be positive");
  }
  auto coupling = [&](const char* key, const char* rel_key) {
    const auto abs_v = f.field("model", key, parse_real);
    const auto rel_v = f.field("model", rel_key, parse_real);
    if (abs_v && rel_v) {
      f.fail("model", key, std::string("give either ") + key + " or " + rel_key + ", not both");
      return 0.0;
    }
    if (rel_v) return *rel_v * kCriticalG * c.j;
    return abs_v.value_or(0.0);
  };
  c.g = coupling("g", "g_rel");
  c.h = coupling("h", "h_rel");

  // --- initial ---------------------------------------------------------------
  bool kind_known = false;
  if (const auto v = f.take("initial", "kind")) {
    kind_known = true;
    if (*v == "uniform_x")
      c.initial.kind = PatternKind::uniform_x;
    else if (*v == "uniform_z")
      c.initial.kind = PatternKind::uniform_z_polarized;
    else if (*v == "strip")
      c.initial.kind = PatternKind::strip;
    else if (*v == "corner")
      c.initial.kind = PatternKind::corner;
    else if (*v == "bubble")
      c.initial.kind = PatternKind::bubble;
    else {
      kind_known = false;
      f.fail("initial", "kind",
             "unknown kind '" + *v + "' (uniform_x, uniform_z, strip, corner, bubble)");
    }
  } else {
    f.missing("initial", "kind");
  }
  if (const auto v = f.take("initial", "background")) {
    if (*v == "up")
      c.initial.background = Background::up;
    else if (*v == "down")
      c.initial.background = Background::down;
    else
      f.fail("initial", "background", "must be 'up' or 'down'");
  }
  auto pattern_int = [&](const char* key, int& dst, bool required) {
    if (const auto v = f.field("initial", key, parse_int)) {
      if (*v >= 0 && *v <= 1 << 20)
        dst = static_cast<int>(*v);
      else
        f.fail("initial", key, "out of range");
    } else if (required) {
      f.missing("initial", key);
    }
  };
  const bool is_strip = c.initial.kind == PatternKind::strip;
  const bool is_corner = c.initial.kind == PatternKind::corner;
  const bool is_bubble = c.initial.kind == PatternKind::bubble;
  pattern_int("length", c.initial.length, kind_known && is_strip);
  pattern_int("width", c.initial.width, kind_known && is_strip);
  pattern_int("corner_size", c.initial.corner_size, kind_known && is_corner);
  pattern_int("bubble_w", c.initial.bubble_w, kind_known && is_bubble);
  pattern_int("bubble_h", c.initial.bubble_h, kind_known && is_bubble);
  pattern_int("anchor_x", c.initial.anchor_x, false);
  pattern_int("anchor_y", c.initial.anchor_y, false);
  if (const auto v = f.take("initial", "along")) {
    if (*v == "x")
      c.initial.along_x = true;
    else if (*v == "y")
      c.initial.along_x = false;
    else
      f.fail("initial", "along", "must be 'x' or 'y'");
  }

  // --- evolution ---------------------------------------------------------------
  if (const auto v = f.field("evolution", "dt", parse_real)) {
    if (*v > 0.0)
      c.evolution.dt = *v;
    else
      f.fail("evolution", "dt", "must be positive");
  } else {
    f.missing("evolution", "dt");
  }
  if (const auto v = f.field("evolution", "t_max", parse_real)) {
    if (*v >= 0.0)
      c.evolution.t_max = *v;
    else
      f.fail("evolution", "t_max", "must be non-negative");
  } else {
    f.missing("evolution", "t_max");
  }
  if (c.evolution.t_max > 0.0 && c.evolution.dt > c.evolution.t_max)
    f.fail("evolution", "dt", "must not exceed t_max");
  if (const auto v = f.field("evolution", "krylov_tol", parse_real)) {
    if (*v > 0.0)
      c.evolution.krylov_tol = *v;
    else
      f.fail("evolution", "krylov_tol", "must be positive");
  }
  if (const auto v = f.field("evolution", "krylov_max", parse_int)) {
    if (*v >= 1 && *v <= 10000)
      c.evolution.krylov_max = static_cast<int>(*v);
    else
      f.fail("evolution", "krylov_max", "must be in [1, 10000]");
  }
  if (const auto v = f.field("evolution", "renormalize", parse_bool)) c.evolution.renormalize = *v;

  // --- run -----------------------------------------------------------------
  bool backend_known = false;
  if (const auto v = f.take("run", "backend")) {
    backend_known = true;
    if (*v == "ttn")
      c.backend = Backend::ttn;
    else if (*v == "ed")
      c.backend = Backend::ed;
    else if (*v == "pxp_ed")
      c.backend = Backend::pxp_ed;
    else if (*v == "fermion")
      c.backend = Backend::fermion;
    else {
      backend_known = false;
      f.fail("run", "backend", "unknown backend '" + *v + "' (ttn, ed, pxp_ed, fermion)");
    }
  } else {
    f.missing("run", "backend");
  }
  const auto chi_v = f.field("run", "chi", parse_int);
  if (chi_v) {
    if (*chi_v >= 1 && *chi_v <= 1 << 16)
      c.chi = static_cast<int>(*chi_v);
    else
      f.fail("run", "chi", "must be in [1, 65536]");
  }
  if (const auto v = f.field("run", "seed", parse_int)) c.seed = static_cast<std::uint64_t>(*v);
  if (const auto v = f.field("run", "stride", parse_int)) {
    if (*v >= 1)
      c.stride = static_cast<int>(*v);
    else
      f.fail("run", "stride", "must be at least 1");
  }

  // --- observables -----------------------------------------------------------
  // Explicitly given flags win; unset ones keep their defaults, which the
  // fermion backend narrows below (it only reports site occupations).
  auto obs_flag = [&](const char* key, bool& dst) -> bool {
    if (const auto v = f.field("observables", key, parse_bool)) {
      dst = *v;
      return true;
    }
    return false;
  };
  obs_flag("site_x", c.observables.site_x);
  const bool given_site_z = obs_flag("site_z", c.observables.site_z);
  const bool given_corr = obs_flag("correlations", c.observables.correlations);
  const bool given_spectrum = obs_flag("spectrum", c.observables.spectrum);
  const bool given_energy = obs_flag("energy", c.observables.energy);
  const bool given_dw = obs_flag("domain_walls", c.observables.domain_walls);
  if (const auto v = f.take("observables", "entropy")) {
    if (*v == "all") {
      c.observables.entropy = ObservableChoice::Entropy::all;
    } else if (*v == "none") {
      c.observables.entropy = ObservableChoice::Entropy::none;
    } else {
      c.observables.entropy = ObservableChoice::Entropy::list;
      for (const std::string& item : cfg_detail::split_list(*v)) {
        try {
          const long long lvl = parse_int(item);
          if (lvl < 1 || lvl > 64) throw Error("level out of range");
          c.observables.entropy_levels.push_back(static_cast<int>(lvl));
        } catch (const Error&) {
          f.fail("observables", "entropy",
                 "must be 'all', 'none', or a comma-separated level list (got '" + *v + "')");
          c.observables.entropy_levels.clear();
          break;
        }
      }
    }
  }

  // --- output ----------------------------------------------------------------
  if (const auto v = f.take("output", "directory")) {
    if (v->empty())
      f.fail("output", "directory", "must not be empty");
    else
      c.output.directory = *v;
  } else {
    f.missing("output", "directory");
  }
  if (const auto v = f.take("output", "formats")) {
    c.output.jsonl = false;
    c.output.csv = false;
    for (const std::string& fmt : cfg_detail::split_list(*v)) {
      if (fmt == "jsonl")
        c.output.jsonl = true;
      else if (fmt == "csv")
        c.output.csv = true;
      else
        f.fail("output", "formats", "unknown format '" + fmt + "' (jsonl, csv)");
    }
    if (!c.output.jsonl && !c.output.csv)
      f.fail("output", "formats", "at least one of jsonl, csv is required");
  }

  f.flag_unknown();

  // --- cross-field validation --------------------------------------------------
  const bool lattice_ok = c.lx >= 1 && c.ly >= 1;
  const int n_sites = lattice_ok ? c.lx * c.ly : 0;
  if (backend_known && lattice_ok) {
    switch (c.backend) {
      case Backend::ttn:
        if (!cfg_detail::is_power_of_two(c.lx) || !cfg_detail::is_power_of_two(c.ly))
          f.fail("lattice", "Lx", "the ttn backend needs power-of-two side lengths");
        break;
      case Backend::ed:
      case Backend::pxp_ed:
        if (n_sites > 20)
          f.fail("lattice", "Lx",
                 "dense backends support at most 20 sites (got " + std::to_string(n_sites) + ")");
        break;
      case Backend::fermion:
        if (c.ly != 1) f.fail("lattice", "Ly", "the fermion backend runs on a chain (Ly = 1)");
        if (c.lx < 2) f.fail("lattice", "Lx", "the fermion chain needs at least 2 sites");
        break;
    }
  }
  if (backend_known && c.backend != Backend::ttn && chi_v)
    f.fail("run", "chi", "only meaningful for the ttn backend");
  if (backend_known && c.backend == Backend::fermion) {
    auto narrow = [&](bool& flag, bool given, const char* key) {
      if (flag && given) f.fail("observables", key, "not available for the fermion backend");
      flag = false;
    };
    narrow(c.observables.site_z, given_site_z, "site_z");
    narrow(c.observables.correlations, given_corr, "correlations");
    narrow(c.observables.spectrum, given_spectrum, "spectrum");
    narrow(c.observables.energy, given_energy, "energy");
    narrow(c.observables.domain_walls, given_dw, "domain_walls");
    if (c.observables.entropy == ObservableChoice::Entropy::list)
      f.fail("observables", "entropy", "explicit levels are not available for the fermion backend");
    c.observables.entropy = ObservableChoice::Entropy::none;
    c.observables.entropy_levels.clear();
    if (c.initial.kind == PatternKind::uniform_z_polarized)
      f.fail("initial", "kind", "uniform_z has no fermion-chain reading");
  }
  const bool tree_available = lattice_ok && cfg_detail::is_power_of_two(c.lx) &&
                              cfg_detail::is_power_of_two(c.ly);
  if (backend_known && (c.backend == Backend::ed || c.backend == Backend::pxp_ed) &&
      !tree_available) {
    if (c.observables.entropy == ObservableChoice::Entropy::list)
      f.fail("observables", "entropy",
             "explicit levels need power-of-two side lengths (tree cuts)");
    if (c.observables.spectrum)
      f.fail("observables", "spectrum", "needs power-of-two side lengths (tree cuts)");
  }
  if (kind_known && lattice_ok) {
    try {
      const LatticeSpec lat = build_lattice(c.lx, c.ly);
      (void)pattern_flips(lat, c.initial);
    } catch (const Error& e) {
      f.fail("initial", "kind", std::string("invalid pattern geometry: ") + e.what());
    }
  }

  if (!errors.empty()) throw ConfigErrors(std::move(errors));
  return c;
}

// Canonical serialization; resolved values only (g and h are written
// absolutely even when the input used multiples of the critical coupling).
inline std::string serialize_run_config(const RunConfig& c) {
  using cfg_detail::format_real;
  std::string out;
  auto line = [&](const std::string& s) { out += s + "\n"; };
  line("schema = " + std::to_string(kConfigSchemaVersion));
  line("");
  line("[lattice]");
  line("Lx = " + std::to_string(c.lx));
  line("Ly = " + std::to_string(c.ly));
  line("");
  line("[model]");
  line("J = " + format_real(c.j));
  line("g = " + format_real(c.g));
  line("h = " + format_real(c.h));
  line("");
  line("[initial]");
  switch (c.initial.kind) {
    case PatternKind::uniform_x:
      line("kind = uniform_x");
      break;
    case PatternKind::uniform_z_polarized:
      line("kind = uniform_z");
      break;
    case PatternKind::strip:
      line("kind = strip");
      line("length = " + std::to_string(c.initial.length));
      line("width = " + std::to_string(c.initial.width));
      line(std::string("along = ") + (c.initial.along_x ? "x" : "y"));
      line("anchor_x = " + std::to_string(c.initial.anchor_x));
      line("anchor_y = " + std::to_string(c.initial.anchor_y));
      break;
    case PatternKind::corner:
      line("kind = corner");
      line("corner_size = " + std::to_string(c.initial.corner_size));
      line("anchor_x = " + std::to_string(c.initial.anchor_x));
      line("anchor_y = " + std::to_string(c.initial.anchor_y));
      break;
    case PatternKind::bubble:
      line("kind = bubble");
      line("bubble_w = " + std::to_string(c.initial.bubble_w));
      line("bubble_h = " + std::to_string(c.initial.bubble_h));
      line("anchor_x = " + std::to_string(c.initial.anchor_x));
      line("anchor_y = " + std::to_string(c.initial.anchor_y));
      break;
  }
  if (c.initial.kind != PatternKind::uniform_z_polarized)
    line(std::string("background = ") + (c.initial.background == Background::up ? "up" : "down"));
  line("");
  line("[evolution]");
  line("dt = " + format_real(c.evolution.dt));
  line("t_max = " + format_real(c.evolution.t_max));
  line("krylov_tol = " + format_real(c.evolution.krylov_tol));
  line("krylov_max = " + std::to_string(c.evolution.krylov_max));
  line(std::string("renormalize = ") + (c.evolution.renormalize ? "true" : "false"));
  line("");
  line("[run]");
  line("backend = " + to_string(c.backend));
  if (c.backend == Backend::ttn) line("chi = " + std::to_string(c.chi));
  line("seed = " + std::to_string(c.seed));
  line("stride = " + std::to_string(c.stride));
  line("");
  line("[observables]");
  auto flag = [&](const char* key, bool v) { line(std::string(key) + " = " + (v ? "true" : "false")); };
  flag("site_x", c.observables.site_x);
  flag("site_z", c.observables.site_z);
  flag("correlations", c.observables.correlations);
  flag("spectrum", c.observables.spectrum);
  flag("energy", c.observables.energy);
  flag("domain_walls", c.observables.domain_walls);
  switch (c.observables.entropy) {
    case ObservableChoice::Entropy::all:
      line("entropy = all");
      break;
    case ObservableChoice::Entropy::none:
      line("entropy = none");
      break;
    case ObservableChoice::Entropy::list: {
      std::string levels;
      for (std::size_t k = 0; k < c.observables.entropy_levels.size(); ++k)
        levels += (k ? "," : "") + std::to_string(c.observables.entropy_levels[k]);
      line("entropy = " + levels);
      break;
    }
  }
  line("");
  line("[output]");
  line("directory = " + c.output.directory);
  std::string formats;
  if (c.output.jsonl) formats += "jsonl";
  if (c.output.csv) formats += std::string(formats.empty() ? "" : ",") + "csv";
  line("formats = " + formats);
  return out;
}

}  // namespace ttns
