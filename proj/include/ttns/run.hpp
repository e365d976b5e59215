#pragma once

// Experiment orchestration on top of the engine headers: a validated
// RunConfig is turned into an artifact directory holding the canonical config
// echo, trajectory records (JSONL and/or CSV), a final-state checkpoint, and
// a manifest that hashes every file. Also: run-to-run comparison with
// per-field tolerances, the step-time benchmark harness, and a checkpoint
// inspector.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "ttns/config.hpp"
#include "ttns/hamiltonian.hpp"
#include "ttns/initstates.hpp"
#include "ttns/io_json.hpp"
#include "ttns/observables.hpp"
#include "ttns/oracles.hpp"
#include "ttns/state.hpp"
#include "ttns/tdvp.hpp"
#include "ttns/topology.hpp"

namespace ttns {

inline constexpr int kRecordSchemaVersion = 1;

using ojson = nlohmann::ordered_json;

// --- record serialization ------------------------------------------------------

inline ojson record_to_json(const ObservableRecord& r) {
  ojson j;
  j["schema_version"] = kRecordSchemaVersion;
  j["time"] = r.time;
  j["norm"] = r.norm;
  if (r.energy) j["energy"] = *r.energy;
  if (r.dw_length) j["domain_walls"] = *r.dw_length;
  if (!r.sx.empty()) j["sx"] = r.sx;
  if (!r.sz.empty()) j["sz"] = r.sz;
  if (!r.corr_z.empty()) {
    j["corr_center"] = r.corr_center;
    j["corr_z"] = r.corr_z;
  }
  if (!r.entropies.empty()) {
    ojson e;
    for (const auto& [level, val] : r.entropies) e[std::to_string(level)] = val;
    j["entropies"] = std::move(e);
  }
  if (!r.spectrum.empty()) {
    ojson sp;
    for (const auto& [level, vals] : r.spectrum) sp[std::to_string(level)] = vals;
    j["spectrum"] = std::move(sp);
  }
  if (!r.region_means.empty()) {
    ojson rg;
    for (const auto& [name, val] : r.region_means) rg[name] = val;
    j["regions"] = std::move(rg);
  }
  return j;
}

namespace run_detail {

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace run_detail

// One row per record; site-resolved columns are sx_{x}_{y} (likewise sz/corrz),
// entropies are ent_L{level}, region means are reg_{name}.
inline std::string records_to_csv(const std::vector<ObservableRecord>& records,
                                  const LatticeSpec& lat) {
  require(!records.empty(), "records_to_csv: no records");
  const ObservableRecord& first = records.front();
  std::string head = "time,norm";
  auto site_cols = [&](const char* prefix) {
    std::string cols;
    for (int s = 0; s < lat.n_sites(); ++s)
      cols += "," + std::string(prefix) + "_" + std::to_string(s % lat.Lx) + "_" +
              std::to_string(s / lat.Lx);
    return cols;
  };
  if (first.energy) head += ",energy";
  if (first.dw_length) head += ",domain_walls";
  if (!first.sx.empty()) head += site_cols("sx");
  if (!first.sz.empty()) head += site_cols("sz");
  if (!first.corr_z.empty()) head += site_cols("corrz");
  for (const auto& [level, val] : first.entropies) head += ",ent_L" + std::to_string(level);
  for (const auto& [name, val] : first.region_means) head += ",reg_" + name;

  std::string out = head + "\n";
  for (const ObservableRecord& r : records) {
    using run_detail::fmt17;
    require(r.sx.size() == first.sx.size() && r.sz.size() == first.sz.size() &&
                r.corr_z.size() == first.corr_z.size() &&
                r.entropies.size() == first.entropies.size() &&
                r.region_means.size() == first.region_means.size() &&
                r.energy.has_value() == first.energy.has_value() &&
                r.dw_length.has_value() == first.dw_length.has_value(),
            "records_to_csv: records disagree on the measured column set");
    std::string row = fmt17(r.time) + "," + fmt17(r.norm);
    if (r.energy) row += "," + fmt17(*r.energy);
    if (r.dw_length) row += "," + fmt17(*r.dw_length);
    for (double v : r.sx) row += "," + fmt17(v);
    for (double v : r.sz) row += "," + fmt17(v);
    for (double v : r.corr_z) row += "," + fmt17(v);
    for (const auto& [level, val] : r.entropies) row += "," + fmt17(val);
    for (const auto& [name, val] : r.region_means) row += "," + fmt17(val);
    out += row + "\n";
  }
  return out;
}

// --- dense / fermion checkpoints -------------------------------------------------
//
// The network checkpoint ("TTNS", state.hpp) stores tensors; the dense and
// fermion engines get sibling container formats distinguished by magic so one
// inspector handles all three.

inline void save_dense_checkpoint(const std::string& path, int lx, int ly, double time,
                                  const DenseState& psi) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(os), "save_dense_checkpoint: cannot open " + path);
  os.write("TTND", 4);
  detail::put_pod(os, std::uint32_t{1});
  detail::put_pod(os, static_cast<std::int32_t>(lx));
  detail::put_pod(os, static_cast<std::int32_t>(ly));
  detail::put_pod(os, time);
  detail::put_pod(os, static_cast<std::uint64_t>(psi.size()));
  os.write(reinterpret_cast<const char*>(psi.data()),
           static_cast<std::streamsize>(static_cast<std::size_t>(psi.size()) * sizeof(cplx)));
  require(static_cast<bool>(os), "save_dense_checkpoint: write failed for " + path);
}

struct DenseCheckpoint {
  int lx = 0, ly = 0;
  double time = 0.0;
  DenseState psi;
};

inline DenseCheckpoint load_dense_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), "load_dense_checkpoint: cannot open " + path);
  char magic[4] = {};
  is.read(magic, 4);
  require(static_cast<bool>(is) && std::memcmp(magic, "TTND", 4) == 0,
          "load_dense_checkpoint: not a dense checkpoint: " + path);
  const auto version = detail::get_pod<std::uint32_t>(is);
  require(version == 1, "load_dense_checkpoint: unsupported version");
  DenseCheckpoint out;
  out.lx = detail::get_pod<std::int32_t>(is);
  out.ly = detail::get_pod<std::int32_t>(is);
  out.time = detail::get_pod<double>(is);
  const auto n = detail::get_pod<std::uint64_t>(is);
  require(n > 0 && n <= (1ull << kMaxDenseSites), "load_dense_checkpoint: bad amplitude count");
  out.psi.resize(static_cast<Eigen::Index>(n));
  is.read(reinterpret_cast<char*>(out.psi.data()),
          static_cast<std::streamsize>(n * sizeof(cplx)));
  require(static_cast<bool>(is), "load_dense_checkpoint: truncated payload");
  return out;
}

inline void save_fermion_checkpoint(const std::string& path, const FermionChain& chain,
                                    double time, const std::vector<double>& densities) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(os), "save_fermion_checkpoint: cannot open " + path);
  os.write("TTNF", 4);
  detail::put_pod(os, std::uint32_t{1});
  detail::put_pod(os, static_cast<std::int32_t>(chain.n_sites));
  detail::put_pod(os, chain.g);
  detail::put_pod(os, chain.h);
  detail::put_pod(os, time);
  detail::put_pod(os, static_cast<std::uint64_t>(densities.size()));
  os.write(reinterpret_cast<const char*>(densities.data()),
           static_cast<std::streamsize>(densities.size() * sizeof(double)));
  require(static_cast<bool>(os), "save_fermion_checkpoint: write failed for " + path);
}

struct FermionCheckpoint {
  int n_sites = 0;
  double g = 0.0, h = 0.0, time = 0.0;
  std::vector<double> densities;
};

inline FermionCheckpoint load_fermion_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), "load_fermion_checkpoint: cannot open " + path);
  char magic[4] = {};
  is.read(magic, 4);
  require(static_cast<bool>(is) && std::memcmp(magic, "TTNF", 4) == 0,
          "load_fermion_checkpoint: not a fermion checkpoint: " + path);
  const auto version = detail::get_pod<std::uint32_t>(is);
  require(version == 1, "load_fermion_checkpoint: unsupported version");
  FermionCheckpoint out;
  out.n_sites = detail::get_pod<std::int32_t>(is);
  out.g = detail::get_pod<double>(is);
  out.h = detail::get_pod<double>(is);
  out.time = detail::get_pod<double>(is);
  const auto n = detail::get_pod<std::uint64_t>(is);
  require(n == static_cast<std::uint64_t>(out.n_sites),
          "load_fermion_checkpoint: density count mismatch");
  out.densities.resize(n);
  is.read(reinterpret_cast<char*>(out.densities.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  require(static_cast<bool>(is), "load_fermion_checkpoint: truncated payload");
  return out;
}

// --- run -----------------------------------------------------------------------

struct RunResult {
  std::string directory;
  int n_records = 0;
  double wall_seconds = 0.0;
  std::vector<std::string> files;  // artifact names, manifest last
};

namespace run_detail {

namespace fs = std::filesystem;

inline std::string hash_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  require(static_cast<bool>(is), "manifest: cannot re-read " + p.string());
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  char buf[24];
  std::snprintf(buf, sizeof(buf), "0x%016llx",
                static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(os), "run: cannot write " + p.string());
  os << text;
  require(static_cast<bool>(os), "run: write failed for " + p.string());
}

inline bool tree_available(const RunConfig& c) {
  return cfg_detail::is_power_of_two(c.lx) && cfg_detail::is_power_of_two(c.ly);
}

// Resolves the configured observable switches against a concrete topology
// (may be null for non-tree lattices). Ownership of the operators stays with
// the caller; the plan only points at them.
inline MeasurementPlan resolve_plan(const RunConfig& c, const LatticeSpec& lat,
                                    const TreeTopology* topo, const LocalSumOperator* energy_op,
                                    const LocalSumOperator* dw_op,
                                    const std::vector<int>& pattern_sites) {
  MeasurementPlan plan;
  plan.site_x = c.observables.site_x;
  plan.site_z = c.observables.site_z;
  plan.correlations = c.observables.correlations;
  plan.spectrum = c.observables.spectrum;
  plan.lattice = &lat;
  plan.energy_op = c.observables.energy ? energy_op : nullptr;
  plan.domain_wall_op = c.observables.domain_walls ? dw_op : nullptr;
  switch (c.observables.entropy) {
    case ObservableChoice::Entropy::all:
      if (topo == nullptr) plan.entropy_levels = MeasurementPlan::no_entropy();
      break;  // empty list = every level
    case ObservableChoice::Entropy::none:
      plan.entropy_levels = MeasurementPlan::no_entropy();
      break;
    case ObservableChoice::Entropy::list: {
      require(topo != nullptr, "run: explicit entropy levels need a tree topology");
      const int depth = entropy_levels_available(*topo);
      for (int lvl : c.observables.entropy_levels)
        require(lvl >= 1 && lvl <= depth,
                "observables.entropy: level " + std::to_string(lvl) +
                    " out of range (tree has " + std::to_string(depth) + ")");
      plan.entropy_levels = c.observables.entropy_levels;
      break;
    }
  }
  if (!pattern_sites.empty()) {
    // Flipped-region mean and its complement: the strip/corner/bubble runs
    // report bulk (inside the pattern) and edge (everything else) averages.
    std::vector<int> rest;
    for (int s = 0; s < lat.n_sites(); ++s)
      if (!std::binary_search(pattern_sites.begin(), pattern_sites.end(), s)) rest.push_back(s);
    plan.regions["bulk"] = RegionSpec{PauliAxis::x, pattern_sites};
    if (!rest.empty()) plan.regions["edge"] = RegionSpec{PauliAxis::x, rest};
  }
  return plan;
}

}  // namespace run_detail

// Executes one configured experiment and writes its artifact directory.
// Throws Error (or ConfigErrors upstream) on invalid setups; a mid-run
// integrator failure still leaves the last completed state as a checkpoint.
inline RunResult run(const RunConfig& c) {
  namespace fs = std::filesystem;
  using clock = std::chrono::steady_clock;
  const auto t_start = clock::now();

  const fs::path dir(c.output.directory);
  fs::create_directories(dir);
  RunResult result;
  result.directory = dir.string();

  const std::string canonical = serialize_run_config(c);
  run_detail::write_text(dir / "config.ini", canonical);
  result.files.push_back("config.ini");

  const LatticeSpec lat = build_lattice(c.lx, c.ly);
  const LocalSumOperator ising = transverse_ising_operator(lat, c.j, c.g, c.h);
  const LocalSumOperator dw = domain_wall_operator(lat);
  const std::vector<int> pattern_sites =
      (c.initial.kind == PatternKind::uniform_x || c.initial.kind == PatternKind::uniform_z_polarized)
          ? std::vector<int>{}
          : pattern_region(lat, c.initial);

  std::shared_ptr<const TreeTopology> topo;
  if (run_detail::tree_available(c))
    topo = std::make_shared<const TreeTopology>(build_tree(lat));

  std::vector<ObservableRecord> records;
  std::ofstream jsonl;
  if (c.output.jsonl) {
    jsonl.open(dir / "records.jsonl", std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(jsonl), "run: cannot write records.jsonl");
    result.files.push_back("records.jsonl");
  }
  auto sink = [&](ObservableRecord rec) {
    if (jsonl.is_open()) {
      jsonl << record_to_json(rec).dump() << "\n";
      jsonl.flush();
    }
    records.push_back(std::move(rec));
  };
  const std::string checkpoint_path = (dir / "checkpoint.ttns").string();

  switch (c.backend) {
    case Backend::ttn: {
      const MeasurementPlan plan =
          run_detail::resolve_plan(c, lat, topo.get(), &ising, &dw, pattern_sites);
      TtnState s = pattern_state(topo, lat, c.initial, c.chi);
      evolve(
          s, ising, c.evolution,
          [&](const TtnState& state, int, double t) { sink(measure_record(state, plan, t)); },
          CacheMode::collapsed, c.stride, checkpoint_path);
      save_state(checkpoint_path, s, records.back().time);
      break;
    }
    case Backend::ed: {
      const MeasurementPlan plan =
          run_detail::resolve_plan(c, lat, topo.get(), &ising, &dw, pattern_sites);
      const DenseState psi0 = dense_product_state(make_pattern(lat, c.initial));
      DenseState last = psi0;
      double last_t = 0.0;
      try {
        ed_evolve(
            ising, psi0, c.evolution,
            [&](const DenseState& p, int, double t) {
              sink(dense_measure_record(p, plan, t, topo.get()));
              last = p;
              last_t = t;
            },
            c.stride);
      } catch (...) {
        save_dense_checkpoint(checkpoint_path, c.lx, c.ly, last_t, last);
        throw;
      }
      save_dense_checkpoint(checkpoint_path, c.lx, c.ly, last_t, last);
      break;
    }
    case Backend::pxp_ed: {
      MeasurementPlan plan =
          run_detail::resolve_plan(c, lat, topo.get(), &ising, &dw, pattern_sites);
      plan.energy_op = nullptr;  // the constrained model is not a local sum; filled below
      const PxpOperator op = pxp_operator(lat, c.g, c.h);
      const DenseState psi0 = dense_product_state(make_pattern(lat, c.initial));
      DenseState last = psi0;
      double last_t = 0.0;
      try {
        ed_evolve(
            op, psi0, c.evolution,
            [&](const DenseState& p, int, double t) {
              ObservableRecord rec = dense_measure_record(p, plan, t, topo.get());
              if (c.observables.energy)
                rec.energy = p.dot(op.apply(p)).real() / p.squaredNorm();
              sink(std::move(rec));
              last = p;
              last_t = t;
            },
            c.stride);
      } catch (...) {
        save_dense_checkpoint(checkpoint_path, c.lx, c.ly, last_t, last);
        throw;
      }
      save_dense_checkpoint(checkpoint_path, c.lx, c.ly, last_t, last);
      break;
    }
    case Backend::fermion: {
      // Chain reading: occupied orbitals sit where the pattern flips spins;
      // recorded sx is the spin image 1 - 2 n_x of the exact densities.
      FermionChain chain;
      chain.n_sites = c.lx;
      chain.g = c.g;
      chain.h = c.h;
      std::vector<int> occupied = pattern_sites;
      const int n_steps =
          static_cast<int>(std::floor(c.evolution.t_max / c.evolution.dt + 1e-9));
      std::vector<double> last_density;
      double last_t = 0.0;
      for (int k = 0; k <= n_steps; ++k) {
        if (k != 0 && k % c.stride != 0 && k != n_steps) continue;
        const double t = k * c.evolution.dt;
        const std::vector<double> density = fermion_evolve(chain, occupied, t);
        ObservableRecord rec;
        rec.time = t;
        rec.norm = 1.0;
        if (c.observables.site_x) {
          rec.sx.resize(density.size());
          for (std::size_t x = 0; x < density.size(); ++x) rec.sx[x] = 1.0 - 2.0 * density[x];
        }
        sink(std::move(rec));
        last_density = density;
        last_t = t;
      }
      save_fermion_checkpoint(checkpoint_path, chain, last_t, last_density);
      break;
    }
  }
  result.files.push_back("checkpoint.ttns");
  if (jsonl.is_open()) jsonl.close();

  if (topo != nullptr) {
    run_detail::write_text(dir / "topology.json", topology_to_json(*topo).dump(2) + "\n");
    result.files.push_back("topology.json");
  }
  if (c.output.csv) {
    run_detail::write_text(dir / "records.csv", records_to_csv(records, lat));
    result.files.push_back("records.csv");
  }

  result.n_records = static_cast<int>(records.size());
  result.wall_seconds =
      std::chrono::duration_cast<std::chrono::duration<double>>(clock::now() - t_start).count();

  ojson manifest;
  manifest["schema_version"] = 1;
  manifest["code_version"] = std::string(kCodeVersion);
  manifest["backend"] = to_string(c.backend);
  manifest["config"] = canonical;
  manifest["n_records"] = result.n_records;
  manifest["wall_time_seconds"] = result.wall_seconds;
  ojson files;
  std::sort(result.files.begin(), result.files.end());
  for (const std::string& name : result.files) {
    ojson entry;
    entry["bytes"] = static_cast<std::uint64_t>(fs::file_size(dir / name));
    entry["fnv1a64"] = run_detail::hash_file(dir / name);
    files[name] = std::move(entry);
  }
  manifest["files"] = std::move(files);
  run_detail::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  result.files.push_back("manifest.json");
  return result;
}

inline RunResult run_from_file(const std::string& config_path) {
  std::ifstream is(config_path, std::ios::binary);
  require(static_cast<bool>(is), "run: cannot open config " + config_path);
  const std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return run(run_config_from_text(text));
}

// --- compare ---------------------------------------------------------------------

struct CompareTolerances {
  double default_tol = 1e-9;
  std::map<std::string, double> per_field;
  bool interpolate = false;  // linearly map run B onto run A's time grid
};

struct FieldReport {
  double max_dev = 0.0;
  double mean_dev = 0.0;
  double tol = 0.0;
  bool pass = true;
  std::size_t count = 0;  // compared components across all records
};

struct CompareReport {
  std::string run_a, run_b;
  bool pass = true;
  bool interpolated = false;
  std::map<std::string, FieldReport> fields;
  std::vector<std::string> only_a, only_b;      // fields present on one side
  std::vector<std::string> structure_mismatch;  // shared fields with unequal shapes
};

namespace run_detail {

// Per-record numeric views: every compared field is flattened to a vector of
// doubles with a fixed component layout across the run.
struct Loaded {
  std::vector<double> times;
  std::map<std::string, std::vector<std::vector<double>>> fields;
};

inline Loaded load_records_dir(const std::string& dir) {
  const fs::path path = fs::path(dir) / "records.jsonl";
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), "compare: cannot open " + path.string() +
                                     " (runs must be written with the jsonl format)");
  Loaded out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    ojson j;
    try {
      j = ojson::parse(line);
    } catch (const std::exception& e) {
      throw Error("compare: " + path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    require(j.contains("time"), "compare: record without a time field");
    out.times.push_back(j["time"].get<double>());
    auto push = [&](const std::string& name, std::vector<double> vals) {
      out.fields[name].push_back(std::move(vals));
    };
    if (j.contains("norm")) push("norm", {j["norm"].get<double>()});
    if (j.contains("energy")) push("energy", {j["energy"].get<double>()});
    if (j.contains("domain_walls")) push("domain_walls", {j["domain_walls"].get<double>()});
    for (const char* vec : {"sx", "sz", "corr_z"})
      if (j.contains(vec)) push(vec, j[vec].get<std::vector<double>>());
    if (j.contains("entropies")) {
      std::vector<double> vals;  // ordered_json keeps numeric-keyed maps in insert order
      std::map<int, double> sorted;
      for (const auto& [k, v] : j["entropies"].items()) sorted[std::stoi(k)] = v.get<double>();
      for (const auto& [k, v] : sorted) vals.push_back(v);
      push("entropies", std::move(vals));
    }
    if (j.contains("regions")) {
      std::vector<double> vals;
      std::map<std::string, double> sorted;
      for (const auto& [k, v] : j["regions"].items()) sorted[k] = v.get<double>();
      for (const auto& [k, v] : sorted) vals.push_back(v);
      push("regions", std::move(vals));
    }
  }
  require(!out.times.empty(), "compare: " + path.string() + " holds no records");
  for (const auto& [name, rows] : out.fields)
    require(rows.size() == out.times.size(),
            "compare: field '" + name + "' is missing from some records");
  return out;
}

inline bool grids_equal(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t k = 0; k < a.size(); ++k)
    if (std::abs(a[k] - b[k]) > 1e-9 * std::max(1.0, std::abs(a[k]))) return false;
  return true;
}

// Linear interpolation of one flattened field onto a new time grid.
inline std::vector<std::vector<double>> interp_field(const std::vector<double>& tb,
                                                     const std::vector<std::vector<double>>& vb,
                                                     const std::vector<double>& ta) {
  std::vector<std::vector<double>> out;
  out.reserve(ta.size());
  for (double t : ta) {
    require(t >= tb.front() - 1e-9 && t <= tb.back() + 1e-9,
            "compare: time " + std::to_string(t) + " outside run B's grid; cannot interpolate");
    const auto hi_it = std::lower_bound(tb.begin(), tb.end(), t);
    std::size_t hi = std::min(static_cast<std::size_t>(hi_it - tb.begin()), tb.size() - 1);
    if (hi == 0) hi = 1;
    const std::size_t lo = hi - 1;
    const double span = tb[hi] - tb[lo];
    const double w = span > 0.0 ? std::clamp((t - tb[lo]) / span, 0.0, 1.0) : 0.0;
    const std::vector<double>& a = vb[lo];
    const std::vector<double>& b = vb[hi];
    require(a.size() == b.size(), "compare: inconsistent component counts inside run B");
    std::vector<double> row(a.size());
    for (std::size_t k = 0; k < a.size(); ++k) row[k] = (1.0 - w) * a[k] + w * b[k];
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace run_detail

inline CompareReport compare_runs(const std::string& dir_a, const std::string& dir_b,
                                  const CompareTolerances& tols = {}) {
  using run_detail::Loaded;
  Loaded a = run_detail::load_records_dir(dir_a);
  Loaded b = run_detail::load_records_dir(dir_b);
  CompareReport report;
  report.run_a = dir_a;
  report.run_b = dir_b;

  if (!run_detail::grids_equal(a.times, b.times)) {
    require(tols.interpolate,
            "compare: time grids differ (" + std::to_string(a.times.size()) + " vs " +
                std::to_string(b.times.size()) + " records); rerun with interpolation enabled");
    report.interpolated = true;
    for (auto& [name, rows] : b.fields) rows = run_detail::interp_field(b.times, rows, a.times);
    b.times = a.times;
  }

  for (const auto& [name, rows_a] : a.fields) {
    const auto it = b.fields.find(name);
    if (it == b.fields.end()) {
      report.only_a.push_back(name);
      continue;
    }
    const auto& rows_b = it->second;
    FieldReport fr;
    fr.tol = tols.per_field.count(name) ? tols.per_field.at(name) : tols.default_tol;
    bool shape_ok = true;
    double sum = 0.0;
    for (std::size_t r = 0; r < rows_a.size(); ++r) {
      if (rows_a[r].size() != rows_b[r].size()) {
        shape_ok = false;
        break;
      }
      for (std::size_t k = 0; k < rows_a[r].size(); ++k) {
        const double d = std::abs(rows_a[r][k] - rows_b[r][k]);
        fr.max_dev = std::max(fr.max_dev, d);
        sum += d;
        ++fr.count;
      }
    }
    if (!shape_ok) {
      report.structure_mismatch.push_back(name);
      report.pass = false;
      continue;
    }
    fr.mean_dev = fr.count ? sum / static_cast<double>(fr.count) : 0.0;
    fr.pass = fr.max_dev <= fr.tol;
    report.pass = report.pass && fr.pass;
    report.fields[name] = fr;
  }
  for (const auto& [name, rows] : b.fields)
    if (!a.fields.count(name)) report.only_b.push_back(name);
  return report;
}

inline ojson compare_report_to_json(const CompareReport& r) {
  ojson j;
  j["schema_version"] = 1;
  j["run_a"] = r.run_a;
  j["run_b"] = r.run_b;
  j["interpolated"] = r.interpolated;
  j["pass"] = r.pass;
  ojson fields;
  for (const auto& [name, fr] : r.fields) {
    ojson f;
    f["max_dev"] = fr.max_dev;
    f["mean_dev"] = fr.mean_dev;
    f["tol"] = fr.tol;
    f["pass"] = fr.pass;
    f["components"] = static_cast<std::uint64_t>(fr.count);
    fields[name] = std::move(f);
  }
  j["fields"] = std::move(fields);
  j["only_a"] = r.only_a;
  j["only_b"] = r.only_b;
  j["structure_mismatch"] = r.structure_mismatch;
  return j;
}

inline std::string render_compare_table(const CompareReport& r) {
  char buf[160];
  std::string out = "comparing " + r.run_a + " vs " + r.run_b +
                    (r.interpolated ? " (B interpolated onto A's grid)\n" : "\n");
  std::snprintf(buf, sizeof(buf), "%-14s %12s %12s %10s  %s\n", "field", "max dev", "mean dev",
                "tol", "result");
  out += buf;
  for (const auto& [name, fr] : r.fields) {
    std::snprintf(buf, sizeof(buf), "%-14s %12.4e %12.4e %10.2e  %s\n", name.c_str(), fr.max_dev,
                  fr.mean_dev, fr.tol, fr.pass ? "pass" : "FAIL");
    out += buf;
  }
  for (const std::string& n : r.structure_mismatch) out += n + ": component layouts differ: FAIL\n";
  for (const std::string& n : r.only_a) out += n + ": only in run A (skipped)\n";
  for (const std::string& n : r.only_b) out += n + ": only in run B (skipped)\n";
  out += r.pass ? "PASS\n" : "FAIL\n";
  return out;
}

// --- bench -----------------------------------------------------------------------

struct BenchOptions {
  std::vector<int> sizes{8};          // square side lengths, power of two
  std::vector<int> chis{32, 64, 128};
  std::vector<int> naive_chis{32, 64};  // which bond dimensions also time naive mode
  int steps = 5;                        // timed steps per cell (median)
  int warmup = 1;                       // untimed entangling steps
  double g = kCriticalG;
  double h = 0.0;
  std::size_t memory_budget = 3ull << 30;
};

struct BenchCell {
  int L = 0;
  int chi = 0;
  CacheMode mode = CacheMode::collapsed;
  bool ok = false;
  std::string note;
  double median_step_seconds = 0.0;
  std::vector<double> step_seconds;
  std::size_t summands = 0;         // total block applications per sweep position
  std::size_t memory_estimate = 0;  // bytes: tensors + environment blocks
};

struct BenchPreflight {
  int L = 0;
  int chi = 0;
  double max_rel_dev = 0.0;
  bool pass = false;
  std::size_t collapsed_summands = 0;
  std::size_t naive_summands = 0;
};

struct BenchReport {
  std::vector<BenchCell> cells;
  std::vector<BenchPreflight> preflight;
  bool all_preflight_pass() const {
    return std::all_of(preflight.begin(), preflight.end(),
                       [](const BenchPreflight& p) { return p.pass; });
  }
};

namespace run_detail {

inline std::size_t link_dim_bound(const TreeTopology& t, int link, int chi) {
  const int below = t.sites_below(t.links[static_cast<std::size_t>(link)].lower);
  const int m = std::min(below, t.n_sites() - below);
  if (m >= 31) return static_cast<std::size_t>(chi);
  return std::min<std::size_t>(static_cast<std::size_t>(chi), 1ull << m);
}

// Conservative byte estimate for one bench cell: all node tensors plus the
// per-link environment blocks the chosen mode materializes.
inline std::size_t bench_memory_estimate(const TreeTopology& t, const LocalSumOperator& op,
                                         int chi, CacheMode mode) {
  std::size_t elems = 0;
  for (int n = 0; n < t.n_nodes(); ++n) {
    std::size_t sz = 1;
    if (t.is_leaf(n)) {
      sz *= 2;
    } else {
      for (int c : t.nodes[static_cast<std::size_t>(n)].children) sz *= link_dim_bound(t, c - 1, chi);
    }
    if (n != t.root()) sz *= link_dim_bound(t, n - 1, chi);
    elems += sz;
  }
  for (int l = 0; l < t.n_links(); ++l) {
    const int lower = t.links[static_cast<std::size_t>(l)].lower;
    std::size_t inside = 0, outside = 0, straddle = 0;
    for (const LocalTerm& term : op.terms()) {
      bool any_in = false, any_out = false;
      for (const auto& [site, m] : term.factors)
        (t.site_in_subtree(lower, site) ? any_in : any_out) = true;
      inside += any_in;
      outside += any_out;
      straddle += any_in && any_out;
    }
    const std::size_t d = link_dim_bound(t, l, chi);
    const std::size_t per_dir =
        mode == CacheMode::naive ? inside + outside : 2 * (1 + straddle);
    elems += per_dir * d * d;
  }
  return elems * sizeof(cplx);
}

inline std::size_t total_summands(const EnvironmentCache& cache, const TreeTopology& t) {
  std::size_t total = 0;
  for (int n = 0; n < t.n_nodes(); ++n) total += cache.node_summand_count(n);
  return total;
}

}  // namespace run_detail

// Times TDVP sweeps cell by cell. Cells that would exceed the memory budget,
// or whose allocation fails, are reported and skipped; the rest still run.
inline BenchReport run_bench(const BenchOptions& opt) {
  require(opt.steps >= 1, "bench: need at least one timed step");
  require(opt.warmup >= 0, "bench: warmup must be non-negative");
  BenchReport report;

  for (int L : opt.sizes) {
    if (!cfg_detail::is_power_of_two(L)) {
      BenchCell bad;
      bad.L = L;
      bad.note = "side length must be a power of two";
      report.cells.push_back(bad);
      continue;
    }
    const LatticeSpec lat = build_lattice(L, L);
    const auto topo = std::make_shared<const TreeTopology>(build_tree(lat));
    const LocalSumOperator op = transverse_ising_operator(lat, 1.0, opt.g, opt.h);

    TdvpConfig step_cfg;
    step_cfg.dt = 0.01;
    step_cfg.krylov_tol = 1e-8;  // both modes apply the same operator (checked
                                 // below), so their Lanczos depths match

    // Correctness gate at the smallest requested bond dimension: the two
    // cache modes must apply identical effective operators.
    {
      const int chi_gate = *std::min_element(opt.chis.begin(), opt.chis.end());
      BenchPreflight pf;
      pf.L = L;
      pf.chi = chi_gate;
      TtnState s = product_state(topo, std::vector<std::array<cplx, 2>>(
                                           static_cast<std::size_t>(lat.n_sites()),
                                           std::array<cplx, 2>{cplx{M_SQRT1_2, 0.0},
                                                               cplx{M_SQRT1_2, 0.0}}),
                                 chi_gate);
      {
        EnvironmentCache warm_cache(s, op, CacheMode::collapsed);
        warm_cache.build_all();
        tdvp_step(s, op, warm_cache, step_cfg);
      }
      s.move_center_to(topo->root());
      EnvironmentCache collapsed(s, op, CacheMode::collapsed);
      collapsed.build_all();
      EnvironmentCache naive(s, op, CacheMode::naive);
      naive.build_all();
      for (int n = 0; n < topo->n_nodes(); ++n) {
        const Tensor& x = s.tensor(n);
        const Tensor yc = collapsed.apply_node(x, n);
        const Tensor yn = naive.apply_node(x, n);
        const double scale = std::max(norm(yn), 1.0);
        pf.max_rel_dev = std::max(pf.max_rel_dev, max_abs_diff(yc, yn) / scale);
      }
      pf.collapsed_summands = run_detail::total_summands(collapsed, *topo);
      pf.naive_summands = run_detail::total_summands(naive, *topo);
      pf.pass = pf.max_rel_dev <= 1e-12 && pf.collapsed_summands <= pf.naive_summands;
      report.preflight.push_back(pf);
    }

    for (int chi : opt.chis) {
      for (const CacheMode mode : {CacheMode::collapsed, CacheMode::naive}) {
        if (mode == CacheMode::naive &&
            std::find(opt.naive_chis.begin(), opt.naive_chis.end(), chi) == opt.naive_chis.end())
          continue;
        BenchCell cell;
        cell.L = L;
        cell.chi = chi;
        cell.mode = mode;
        cell.memory_estimate = run_detail::bench_memory_estimate(*topo, op, chi, mode);
        if (cell.memory_estimate > opt.memory_budget) {
          cell.note = "skipped: estimated " +
                      std::to_string(cell.memory_estimate >> 20) + " MiB exceeds budget";
          report.cells.push_back(cell);
          continue;
        }
        try {
          TtnState s = product_state(topo, std::vector<std::array<cplx, 2>>(
                                               static_cast<std::size_t>(lat.n_sites()),
                                               std::array<cplx, 2>{cplx{M_SQRT1_2, 0.0},
                                                                   cplx{M_SQRT1_2, 0.0}}),
                                     chi);
          EnvironmentCache cache(s, op, mode);
          cache.build_all();
          for (int w = 0; w < opt.warmup; ++w) tdvp_step(s, op, cache, step_cfg);
          cell.summands = run_detail::total_summands(cache, *topo);
          for (int k = 0; k < opt.steps; ++k) {
            const auto t0 = std::chrono::steady_clock::now();
            tdvp_step(s, op, cache, step_cfg);
            const auto t1 = std::chrono::steady_clock::now();
            cell.step_seconds.push_back(
                std::chrono::duration_cast<std::chrono::duration<double>>(t1 - t0).count());
          }
          std::vector<double> sorted = cell.step_seconds;
          std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
          cell.median_step_seconds = sorted[sorted.size() / 2];
          cell.ok = true;
        } catch (const std::bad_alloc&) {
          cell.note = "allocation failed";
        } catch (const Error& e) {
          cell.note = e.what();
        }
        report.cells.push_back(cell);
      }
    }
  }
  return report;
}

inline std::string bench_to_csv(const BenchReport& r) {
  std::string out = "L,chi,mode,ok,median_step_seconds,summands,memory_estimate_bytes,note\n";
  for (const BenchCell& c : r.cells) {
    out += std::to_string(c.L) + "," + std::to_string(c.chi) + "," + to_string(c.mode) + "," +
           (c.ok ? "1" : "0") + "," + run_detail::fmt17(c.median_step_seconds) + "," +
           std::to_string(c.summands) + "," + std::to_string(c.memory_estimate) + "," + c.note +
           "\n";
  }
  return out;
}

inline std::string render_bench_table(const BenchReport& r) {
  std::string out;
  char buf[200];
  for (const BenchPreflight& p : r.preflight) {
    std::snprintf(buf, sizeof(buf),
                  "preflight L=%d chi=%d: modes agree to %.2e, summands %zu (collapsed) vs %zu "
                  "(naive): %s\n",
                  p.L, p.chi, p.max_rel_dev, p.collapsed_summands, p.naive_summands,
                  p.pass ? "pass" : "FAIL");
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "%4s %6s %-10s %14s %10s %12s  %s\n", "L", "chi", "mode",
                "step median", "summands", "memory", "note");
  out += buf;
  for (const BenchCell& c : r.cells) {
    if (c.ok)
      std::snprintf(buf, sizeof(buf), "%4d %6d %-10s %12.4fs %10zu %10zuMiB  %s\n", c.L, c.chi,
                    to_string(c.mode).c_str(), c.median_step_seconds, c.summands,
                    c.memory_estimate >> 20, c.note.c_str());
    else
      std::snprintf(buf, sizeof(buf), "%4d %6d %-10s %14s %10s %12s  %s\n", c.L, c.chi,
                    to_string(c.mode).c_str(), "-", "-", "-", c.note.c_str());
    out += buf;
  }
  return out;
}

// --- inspect ---------------------------------------------------------------------

namespace run_detail {

inline char spin_glyph(double sx) {
  if (sx >= 1.0 / 3.0) return '.';
  if (sx <= -1.0 / 3.0) return 'X';
  return '~';
}

inline std::string spin_map(const std::vector<double>& sx, int lx, int ly) {
  std::string out;
  for (int y = 0; y < ly; ++y) {
    out += "  ";
    for (int x = 0; x < lx; ++x) out += spin_glyph(sx[static_cast<std::size_t>(y * lx + x)]);
    out += "\n";
  }
  return out;
}

}  // namespace run_detail

// Human-readable summary of any checkpoint flavor: lattice, x-basis pattern
// map ('.' up, 'X' down, '~' mixed), and the entanglement profile when the
// state carries one.
inline std::string inspect_state(const std::string& path) {
  namespace fs = std::filesystem;
  std::ifstream probe(path, std::ios::binary);
  require(static_cast<bool>(probe), "inspect: cannot open " + path);
  char magic[4] = {};
  probe.read(magic, 4);
  require(static_cast<bool>(probe), "inspect: " + path + " is too short to be a checkpoint");
  probe.close();
  char buf[160];
  std::string out;

  if (std::memcmp(magic, "TTNS", 4) == 0) {
    const fs::path topo_path = fs::path(path).parent_path() / "topology.json";
    std::ifstream tis(topo_path, std::ios::binary);
    require(static_cast<bool>(tis),
            "inspect: need " + topo_path.string() + " next to a network checkpoint");
    const ojson tj = ojson::parse(tis);
    const LatticeSpec lat = build_lattice(tj["Lx"].get<int>(), tj["Ly"].get<int>());
    const auto topo = std::make_shared<const TreeTopology>(
        build_tree(lat, orientation_from_string(tj["orientation"].get<std::string>())));
    const LoadedState loaded = load_state(path, topo);
    MeasurementPlan plan;
    plan.site_z = false;
    const ObservableRecord rec = measure_record(loaded.state, plan, loaded.time);
    std::size_t max_dim = 0;
    for (int n = 0; n < topo->n_nodes(); ++n)
      for (std::size_t d : loaded.state.tensor(n).dims()) max_dim = std::max(max_dim, d);
    std::snprintf(buf, sizeof(buf),
                  "network checkpoint: %dx%d lattice, time %.6g, norm %.12g, max bond %zu\n",
                  lat.Lx, lat.Ly, loaded.time, rec.norm, max_dim);
    out += buf;
    out += "pattern ('.' up, 'X' down, '~' mixed):\n" + run_detail::spin_map(rec.sx, lat.Lx, lat.Ly);
    out += "entropy by level (cut site fraction 1/2^level):\n";
    for (const auto& [level, s] : rec.entropies) {
      std::snprintf(buf, sizeof(buf), "  L%d: %.6f\n", level, s);
      out += buf;
    }
    return out;
  }

  if (std::memcmp(magic, "TTND", 4) == 0) {
    const DenseCheckpoint ck = load_dense_checkpoint(path);
    const LatticeSpec lat = build_lattice(ck.lx, ck.ly);
    const int n = lat.n_sites();
    require(ck.psi.size() == (1LL << n), "inspect: amplitude count does not match the lattice");
    std::snprintf(buf, sizeof(buf), "dense checkpoint: %dx%d lattice, time %.6g, norm %.12g\n",
                  ck.lx, ck.ly, ck.time, ck.psi.norm());
    out += buf;
    std::vector<double> sx(static_cast<std::size_t>(n));
    for (int s = 0; s < n; ++s)
      sx[static_cast<std::size_t>(s)] = dense_site_expectation(ck.psi, s, PauliAxis::x);
    out += "pattern ('.' up, 'X' down, '~' mixed):\n" + run_detail::spin_map(sx, ck.lx, ck.ly);
    if (cfg_detail::is_power_of_two(ck.lx) && cfg_detail::is_power_of_two(ck.ly)) {
      const TreeTopology topo = build_tree(lat);
      out += "entropy by level (cut site fraction 1/2^level):\n";
      for (int level = 1; level <= entropy_levels_available(topo); ++level) {
        const auto sv = dense_schmidt(ck.psi, level_cut_sites(topo, level), n);
        std::snprintf(buf, sizeof(buf), "  L%d: %.6f\n", level, entropy_from_spectrum(sv));
        out += buf;
      }
    }
    return out;
  }

  if (std::memcmp(magic, "TTNF", 4) == 0) {
    const FermionCheckpoint ck = load_fermion_checkpoint(path);
    double total = 0.0;
    for (double d : ck.densities) total += d;
    std::snprintf(buf, sizeof(buf),
                  "fermion checkpoint: chain of %d, g %.6g, h %.6g, time %.6g, particles %.9g\n",
                  ck.n_sites, ck.g, ck.h, ck.time, total);
    out += buf;
    if (total > 0.0) {
      std::snprintf(buf, sizeof(buf), "density centroid %.6f, spread %.6f\n",
                    density_centroid(ck.densities), density_spread(ck.densities));
      out += buf;
    }
    out += "site densities:\n";
    for (int x = 0; x < ck.n_sites; ++x) {
      const double d = ck.densities[static_cast<std::size_t>(x)];
      std::snprintf(buf, sizeof(buf), "  %3d %.6f %s\n", x, d,
                    std::string(static_cast<std::size_t>(std::lround(d * 40.0)), '#').c_str());
      out += buf;
    }
    return out;
  }

  throw Error("inspect: " + path + " is not a recognized checkpoint (magic '" +
              std::string(magic, 4) + "')");
}

}  // namespace ttns
