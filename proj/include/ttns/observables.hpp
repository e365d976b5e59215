#pragma once

// Measurement layer: single-site expectations, two-point correlators, domain-wall
// counting, entanglement entropies across tree cuts, and a batched per-record
// driver that collects everything a time-evolution observer wants to log.
//
// All routines take the state by const reference. Anything that needs a specific
// gauge works on an internal copy, so callers never see their state or their
// environment caches disturbed. Expectation values are divided by the squared
// norm, which makes every quantity here insensitive to both the gauge center
// and the overall normalization of the state.
//
// The batched driver measures every site in one top-down pass: with the gauge
// at the root, the reduced density matrix of a leaf is its tensor sandwiched
// around a "density environment" matrix that descends from the root. One sweep
// computes the environments of all nodes, after which each leaf evaluation is a
// local contraction.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ttns/hamiltonian.hpp"
#include "ttns/state.hpp"
#include "ttns/tensor.hpp"
#include "ttns/topology.hpp"

namespace ttns {

// --- Pauli axes --------------------------------------------------------------------

enum class PauliAxis { x, z };

inline Eigen::Matrix2cd pauli(PauliAxis axis) {
  return axis == PauliAxis::x ? sigma_x() : sigma_z();
}

inline const char* axis_name(PauliAxis axis) { return axis == PauliAxis::x ? "x" : "z"; }

namespace detail {

// Returns `s` itself when it is already gauged at the root; otherwise fills
// `storage` with a rooted copy and returns that. Keeps the public API
// const-correct without forcing a copy in the common case.
inline const TtnState& rooted(const TtnState& s, std::optional<TtnState>& storage) {
  if (s.center() == s.topo().root()) return s;
  storage.emplace(s);
  storage->move_center_to(s.topo().root());
  return *storage;
}

// Density environments seen from above. env[n] is a matrix on the link above
// node n, with the bra index first: env[n](u', u) is the contraction of
// everything outside n's subtree. Requires the gauge center at the root, so
// that each subtree below a sibling branch collapses to the identity.
struct DensityEnvs {
  std::vector<MatrixXc> env;
  double norm_sq = 0.0;
};

inline DensityEnvs density_environments(const TtnState& s) {
  const TreeTopology& t = s.topo();
  require(s.center() == t.root(), "density_environments: gauge center must be at the root");
  DensityEnvs out;
  out.env.resize(static_cast<std::size_t>(t.n_nodes()));
  {
    const double n = norm(s.tensor(t.root()));
    out.norm_sq = n * n;
  }
  require(out.norm_sq > 0.0, "density_environments: state has zero norm");
  // Pre-order ids put parents before children, so a single ascending loop
  // propagates environments from the root to every node.
  for (int n = 0; n < t.n_nodes(); ++n) {
    const TreeNode& node = t.node(n);
    if (node.is_leaf()) continue;
    const Tensor& tn = s.tensor(n);
    Tensor ket = tn;
    if (node.parent >= 0)
      ket = apply_matrix(out.env[static_cast<std::size_t>(n)], tn, Leg::link(t.link_above(n)));
    for (int c : {node.children[0], node.children[1]})
      out.env[static_cast<std::size_t>(c)] = sandwich(tn, ket, Leg::link(t.link_above(c)));
  }
  return out;
}

// <psi| M_leaf |psi> with the complement of the leaf summarized by `env`.
// Unnormalized; divide by the squared norm of the state.
inline cplx leaf_bracket(const TtnState& s, int leaf, const MatrixXc& env,
                         const Eigen::Matrix2cd& op) {
  const TreeTopology& t = s.topo();
  const TreeNode& node = t.node(leaf);
  const Tensor& tl = s.tensor(leaf);
  const Tensor ket = apply_matrix(env, tl, Leg::link(t.link_above(leaf)));
  const MatrixXc m = sandwich(tl, ket, Leg::phys(node.site));  // m(p_bra, p_ket)
  cplx v{0.0, 0.0};
  for (int pb = 0; pb < 2; ++pb)
    for (int pk = 0; pk < 2; ++pk) v += op(pb, pk) * m(pb, pk);
  return v;
}

inline double drop_imag(cplx v, const char* what) {
  require(std::abs(v.imag()) <= 1e-9 * (1.0 + std::abs(v.real())), what);
  return v.real();
}

}  // namespace detail

// --- single-site expectations --------------------------------------------------------

// <sigma_axis> for every lattice site, indexed by site id. One environment
// sweep serves all sites.
inline std::vector<double> site_expectations(const TtnState& s, PauliAxis axis) {
  std::optional<TtnState> storage;
  const TtnState& r = detail::rooted(s, storage);
  const TreeTopology& t = r.topo();
  const auto envs = detail::density_environments(r);
  const Eigen::Matrix2cd op = pauli(axis);
  std::vector<double> out(static_cast<std::size_t>(t.n_sites()), 0.0);
  for (int site = 0; site < t.n_sites(); ++site) {
    const int leaf = t.leaf_of_site[static_cast<std::size_t>(site)];
    const cplx v = detail::leaf_bracket(r, leaf, envs.env[static_cast<std::size_t>(leaf)], op);
    out[static_cast<std::size_t>(site)] =
        detail::drop_imag(v / envs.norm_sq, "site_expectations: non-real expectation value");
  }
  return out;
}

inline double site_expectation(const TtnState& s, int site, PauliAxis axis) {
  require(site >= 0 && site < s.topo().n_sites(), "site_expectation: site out of range");
  return site_expectations(s, axis)[static_cast<std::size_t>(site)];
}

// Arithmetic mean of <sigma_axis> over a nonempty group of sites.
inline double region_mean(const TtnState& s, const std::vector<int>& sites, PauliAxis axis) {
  require(!sites.empty(), "region_mean: empty site list");
  const auto all = site_expectations(s, axis);
  double acc = 0.0;
  for (int site : sites) {
    require(site >= 0 && site < s.topo().n_sites(), "region_mean: site out of range");
    acc += all[static_cast<std::size_t>(site)];
  }
  return acc / static_cast<double>(sites.size());
}

// --- two-point correlators -----------------------------------------------------------

// <sigma_axis_i sigma_axis_j> for two distinct sites. Both insertions ride a
// single bottom-up sweep; no gauge motion is needed because bra and ket use
// the same tensors everywhere.
inline double two_point(const TtnState& s, int i, int j, PauliAxis axis) {
  const int n_sites = s.topo().n_sites();
  require(i >= 0 && i < n_sites && j >= 0 && j < n_sites, "two_point: site out of range");
  require(i != j, "two_point: sites must be distinct");
  const double n2 = std::abs(overlap(s, s));
  require(n2 > 0.0, "two_point: state has zero norm");
  const Eigen::Matrix2cd op = pauli(axis);
  const LocalTerm term{1.0, {{i, op}, {j, op}}};
  return detail::drop_imag(detail::term_bracket(s, term) / n2, "two_point: non-real correlator");
}

// Connected correlator <AB> - <A><B>.
inline double two_point_connected(const TtnState& s, int i, int j, PauliAxis axis) {
  const double raw = two_point(s, i, j, axis);
  const auto m = site_expectations(s, axis);
  return raw - m[static_cast<std::size_t>(i)] * m[static_cast<std::size_t>(j)];
}

// --- correlations from a reference site, batched -------------------------------------

// Site nearest the geometric center of the lattice; reference point for
// correlation-spread profiles.
inline int center_site(const LatticeSpec& lat) { return lat.site(lat.Lx / 2, lat.Ly / 2); }

// Connected <sigma_c sigma_j> for every site j, with c fixed, in one combined
// sweep: an upward pass threads the sigma_c insertion from its leaf to the
// root, a downward pass then carries density environments (with the insertion
// folded in on every branch that excludes c) to all leaves. Entry j = c holds
// the connected self-correlation 1 - <sigma_c>^2.
inline std::vector<double> center_correlations(const TtnState& s, int c, PauliAxis axis,
                                               bool connected = true) {
  std::optional<TtnState> storage;
  const TtnState& r = detail::rooted(s, storage);
  const TreeTopology& t = r.topo();
  require(c >= 0 && c < t.n_sites(), "center_correlations: site out of range");
  const Eigen::Matrix2cd op = pauli(axis);
  const int leaf_c = t.leaf_of_site[static_cast<std::size_t>(c)];
  const double n = norm(r.tensor(t.root()));
  const double norm_sq = n * n;
  require(norm_sq > 0.0, "center_correlations: state has zero norm");

  // Upward pass: v[n], for n on the path leaf_c -> root (root excluded), is the
  // subtree bracket of n with sigma_c inserted, as a matrix on n's up link.
  const std::size_t nn = static_cast<std::size_t>(t.n_nodes());
  std::vector<MatrixXc> v(nn);
  std::vector<char> on_path(nn, 0);
  for (int a = leaf_c; a >= 0; a = t.node(a).parent) on_path[static_cast<std::size_t>(a)] = 1;
  {
    const Tensor& tl = r.tensor(leaf_c);
    const Tensor ket = apply_matrix(op, tl, Leg::phys(c));
    v[static_cast<std::size_t>(leaf_c)] = sandwich(tl, ket, Leg::link(t.link_above(leaf_c)));
  }
  for (int a = t.node(leaf_c).parent; a >= 0 && t.node(a).parent >= 0; a = t.node(a).parent) {
    const TreeNode& node = t.node(a);
    const int k = on_path[static_cast<std::size_t>(node.children[0])] ? node.children[0]
                                                                      : node.children[1];
    const Tensor& tn = r.tensor(a);
    const Tensor ket = apply_matrix(v[static_cast<std::size_t>(k)], tn, Leg::link(t.link_above(k)));
    v[static_cast<std::size_t>(a)] = sandwich(tn, ket, Leg::link(t.link_above(a)));
  }

  // Downward pass: env[n] is the density environment on n's up link, with the
  // sigma_c insertion included as soon as the branch to c has been left.
  std::vector<MatrixXc> env(nn);
  for (int a = 0; a < t.n_nodes(); ++a) {
    const TreeNode& node = t.node(a);
    if (node.is_leaf()) continue;
    const Tensor& tn = r.tensor(a);
    Tensor ket = tn;
    if (node.parent >= 0)
      ket = apply_matrix(env[static_cast<std::size_t>(a)], tn, Leg::link(t.link_above(a)));
    for (int side = 0; side < 2; ++side) {
      const int child = node.children[side];
      const int other = node.children[1 - side];
      Tensor branch_ket = ket;
      if (on_path[static_cast<std::size_t>(other)])
        branch_ket = apply_matrix(v[static_cast<std::size_t>(other)], branch_ket,
                                  Leg::link(t.link_above(other)));
      env[static_cast<std::size_t>(child)] =
          sandwich(tn, branch_ket, Leg::link(t.link_above(child)));
    }
  }

  std::vector<double> out(static_cast<std::size_t>(t.n_sites()), 0.0);
  for (int site = 0; site < t.n_sites(); ++site) {
    const int leaf = t.leaf_of_site[static_cast<std::size_t>(site)];
    if (leaf == leaf_c) {
      out[static_cast<std::size_t>(site)] = 1.0;  // sigma^2 = identity
      continue;
    }
    const cplx val = detail::leaf_bracket(r, leaf, env[static_cast<std::size_t>(leaf)], op);
    out[static_cast<std::size_t>(site)] =
        detail::drop_imag(val / norm_sq, "center_correlations: non-real correlator");
  }
  if (connected) {
    const auto m = site_expectations(r, axis);
    const double mc = m[static_cast<std::size_t>(c)];
    for (int site = 0; site < t.n_sites(); ++site)
      out[static_cast<std::size_t>(site)] -= mc * m[static_cast<std::size_t>(site)];
  }
  return out;
}

// Reduces a per-site profile to means over shells of equal Chebyshev distance
// from `center`. Entry r of the result averages all sites at distance r; the
// length is the largest distance present plus one.
inline std::vector<double> chebyshev_profile(const LatticeSpec& lat, int center,
                                             const std::vector<double>& per_site) {
  require(center >= 0 && center < lat.n_sites(), "chebyshev_profile: center out of range");
  require(static_cast<int>(per_site.size()) == lat.n_sites(),
          "chebyshev_profile: profile length does not match the lattice");
  const int cx = center % lat.Lx;
  const int cy = center / lat.Lx;
  const int max_r = std::max(std::max(cx, lat.Lx - 1 - cx), std::max(cy, lat.Ly - 1 - cy));
  std::vector<double> sum(static_cast<std::size_t>(max_r) + 1, 0.0);
  std::vector<int> count(static_cast<std::size_t>(max_r) + 1, 0);
  for (int y = 0; y < lat.Ly; ++y)
    for (int x = 0; x < lat.Lx; ++x) {
      const int r = std::max(std::abs(x - cx), std::abs(y - cy));
      sum[static_cast<std::size_t>(r)] += per_site[static_cast<std::size_t>(lat.site(x, y))];
      ++count[static_cast<std::size_t>(r)];
    }
  for (std::size_t r = 0; r < sum.size(); ++r) sum[r] /= static_cast<double>(count[r]);
  return sum;
}

// --- domain walls ---------------------------------------------------------------------

// Number of nearest-neighbor bonds whose sigma_x values disagree, evaluated as
// the expectation of the supplied domain-wall counting operator.
inline double domain_wall_length(const TtnState& s, const LocalSumOperator& dw) {
  return expectation_value(s, dw);
}

// --- entanglement entropies -----------------------------------------------------------

// Von Neumann entropy (natural log) from a Schmidt spectrum.
inline double entropy_from_spectrum(const std::vector<double>& singular_values) {
  double acc = 0.0;
  for (double sv : singular_values) {
    const double p = sv * sv;
    if (p > 1e-30) acc -= p * std::log(p);
  }
  return acc;
}

// Number of link levels below the root: 1 (half/half cut) down to the leaf
// links.
inline int entropy_levels_available(const TreeTopology& t) { return t.total_depth(); }

// The representative link for a given level: the cut on the leftmost root-to-
// leaf chain whose subtree holds a 1/2^level fraction of the sites. Node ids
// are assigned in pre-order, so the chain is 0, 1, 2, ... and the link above
// node `level` has id level - 1.
inline int link_of_level(const TreeTopology& t, int level) {
  require(level >= 1 && level <= entropy_levels_available(t),
          "link_of_level: level out of range");
  return level - 1;
}

// The sites on the small side of a level's representative cut (the subtree
// below the cut link). Used by dense reference engines to reproduce the same
// entropy profile from a statevector.
inline std::vector<int> level_cut_sites(const TreeTopology& t, int level) {
  const int node = link_of_level(t, level) + 1;  // lower endpoint of the cut link
  std::vector<int> out;
  for (int site = 0; site < t.n_sites(); ++site)
    if (t.site_in_subtree(node, site)) out.push_back(site);
  return out;
}

// Entanglement entropy across the representative cut of each requested level.
// An empty request means every available level. The state must be normalized.
inline std::map<int, double> entropy_profile(const TtnState& s, std::vector<int> levels = {}) {
  const TreeTopology& t = s.topo();
  if (levels.empty()) {
    levels.resize(static_cast<std::size_t>(entropy_levels_available(t)));
    for (std::size_t k = 0; k < levels.size(); ++k) levels[k] = static_cast<int>(k) + 1;
  }
  std::map<int, double> out;
  for (int level : levels)
    out[level] = entropy_from_spectrum(schmidt_spectrum(s, link_of_level(t, level)));
  return out;
}

// --- per-record batch ------------------------------------------------------------------

// What to measure at each observation time.
struct RegionSpec {
  PauliAxis axis = PauliAxis::x;
  std::vector<int> sites;
};

struct MeasurementPlan {
  bool site_x = true;
  bool site_z = true;
  bool correlations = false;  // connected sigma_z correlations from the lattice center
  bool spectrum = false;      // keep the Schmidt spectra alongside the entropies
  std::vector<int> entropy_levels;  // empty = every level; {-1} sentinel = none
  std::map<std::string, RegionSpec> regions;
  const LocalSumOperator* energy_op = nullptr;       // optional: fills ObservableRecord::energy
  const LocalSumOperator* domain_wall_op = nullptr;  // optional: fills dw_length
  const LatticeSpec* lattice = nullptr;              // required when correlations = true

  bool wants_entropy() const {
    return entropy_levels.empty() || entropy_levels.front() != -1;
  }
  static std::vector<int> no_entropy() { return {-1}; }
};

struct ObservableRecord {
  double time = 0.0;
  double norm = 0.0;
  std::optional<double> energy;
  std::optional<double> dw_length;
  std::vector<double> sx;      // per site; empty when not measured
  std::vector<double> sz;      // per site; empty when not measured
  std::vector<double> corr_z;  // connected, from corr_center; empty when not measured
  int corr_center = -1;
  std::map<int, double> entropies;                // tree level -> entropy
  std::map<int, std::vector<double>> spectrum;    // tree level -> Schmidt values
  std::map<std::string, double> region_means;
};

// Collects one record. Works on an internal rooted copy, so `s` and any caches
// attached to it stay untouched; single-site quantities for both axes share
// one environment sweep.
inline ObservableRecord measure_record(const TtnState& s, const MeasurementPlan& plan,
                                       double time) {
  std::optional<TtnState> storage;
  const TtnState& r = detail::rooted(s, storage);
  const TreeTopology& t = r.topo();

  ObservableRecord rec;
  rec.time = time;
  rec.norm = norm_of(r);
  require(rec.norm > 0.0, "measure_record: state has zero norm");

  const bool need_x = plan.site_x || !plan.regions.empty();
  const bool need_z = plan.site_z || !plan.regions.empty();
  std::vector<double> mx, mz;
  if (need_x || need_z) {
    const auto envs = detail::density_environments(r);
    auto batch = [&](PauliAxis axis) {
      const Eigen::Matrix2cd op = pauli(axis);
      std::vector<double> out(static_cast<std::size_t>(t.n_sites()), 0.0);
      for (int site = 0; site < t.n_sites(); ++site) {
        const int leaf = t.leaf_of_site[static_cast<std::size_t>(site)];
        const cplx val =
            detail::leaf_bracket(r, leaf, envs.env[static_cast<std::size_t>(leaf)], op);
        out[static_cast<std::size_t>(site)] =
            detail::drop_imag(val / envs.norm_sq, "measure_record: non-real expectation value");
      }
      return out;
    };
    if (need_x) mx = batch(PauliAxis::x);
    if (need_z) mz = batch(PauliAxis::z);
    for (const std::vector<double>* m : {&mx, &mz})
      for (double val : *m)
        require(std::abs(val) <= 1.0 + 1e-9, "measure_record: expectation value out of bounds");
  }
  if (plan.site_x) rec.sx = mx;
  if (plan.site_z) rec.sz = mz;

  for (const auto& [name, region] : plan.regions) {
    require(!region.sites.empty(), "measure_record: empty region");
    const auto& m = region.axis == PauliAxis::x ? mx : mz;
    double acc = 0.0;
    for (int site : region.sites) {
      require(site >= 0 && site < t.n_sites(), "measure_record: region site out of range");
      acc += m[static_cast<std::size_t>(site)];
    }
    rec.region_means[name] = acc / static_cast<double>(region.sites.size());
  }

  if (plan.correlations) {
    require(plan.lattice != nullptr, "measure_record: correlations need the lattice");
    rec.corr_center = center_site(*plan.lattice);
    rec.corr_z = center_correlations(r, rec.corr_center, PauliAxis::z, /*connected=*/true);
  }

  if (plan.energy_op != nullptr) rec.energy = expectation_value(r, *plan.energy_op);
  if (plan.domain_wall_op != nullptr) {
    rec.dw_length = domain_wall_length(r, *plan.domain_wall_op);
    const double bonds = static_cast<double>(plan.domain_wall_op->n_terms());
    require(*rec.dw_length >= -1e-9 && *rec.dw_length <= bonds + 1e-9,
            "measure_record: domain-wall length out of bounds");
  }

  if (plan.wants_entropy()) {
    // schmidt_spectrum insists on unit norm; feed it a normalized copy when the
    // caller's state has drifted.
    std::optional<TtnState> unit_storage;
    const TtnState* u = &r;
    if (std::abs(rec.norm - 1.0) > 1e-9) {
      unit_storage.emplace(r);
      Tensor root = unit_storage->tensor(t.root());
      scale(root, cplx{1.0 / rec.norm, 0.0});
      unit_storage->set_tensor(t.root(), root, /*preserves_gauge=*/true);
      u = &*unit_storage;
    }
    std::vector<int> levels = plan.entropy_levels;
    if (levels.empty()) {
      levels.resize(static_cast<std::size_t>(entropy_levels_available(t)));
      for (std::size_t k = 0; k < levels.size(); ++k) levels[k] = static_cast<int>(k) + 1;
    }
    for (int level : levels) {
      const auto sv = schmidt_spectrum(*u, link_of_level(t, level));
      rec.entropies[level] = entropy_from_spectrum(sv);
      if (plan.spectrum) rec.spectrum[level] = sv;
    }
  }

  return rec;
}

}  // namespace ttns
