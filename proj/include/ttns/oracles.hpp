#pragma once

// Independent reference engines used to validate the tree-network evolution:
//
//   - dense statevector evolution (matrix-free local-term application plus the
//     same Lanczos exponential the network integrator uses),
//   - the constrained-flip model: spin flips allowed only where they keep the
//     domain-wall count unchanged, plus a diagonal longitudinal field,
//   - a free-fermion chain in a linear potential, solved exactly through its
//     single-particle propagator,
//   - the closed-form steady-state prediction for the strip magnetization.
//
// Basis conventions are shared with the rest of the library: basis index bit s
// is the state of lattice site s, bit value 0 is "up" (the +1 eigenstate of
// the diagonal sigma_x), and sigma_z flips a bit.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "ttns/common.hpp"
#include "ttns/hamiltonian.hpp"
#include "ttns/observables.hpp"
#include "ttns/tdvp.hpp"
#include "ttns/topology.hpp"

namespace ttns {

// Dense statevector; amplitudes indexed by the shared bit convention.
using DenseState = Eigen::VectorXcd;

// Largest site count the dense engines accept (one vector is 16 MiB there).
inline constexpr int kMaxDenseSites = 20;

// --- dense building blocks ------------------------------------------------------------

// Product state from per-site two-component amplitudes.
inline DenseState dense_product_state(const std::vector<std::array<cplx, 2>>& amps) {
  const int n = static_cast<int>(amps.size());
  require(n >= 1 && n <= kMaxDenseSites, "dense_product_state: site count out of range");
  const long long dim = 1LL << n;
  DenseState psi(dim);
  for (long long idx = 0; idx < dim; ++idx) {
    cplx a{1.0, 0.0};
    for (int s = 0; s < n; ++s) a *= amps[static_cast<std::size_t>(s)][(idx >> s) & 1];
    psi(idx) = a;
  }
  return psi;
}

// One single-site operator applied to site `s`.
inline DenseState apply_single_site(const Eigen::Matrix2cd& m, int s, const DenseState& psi) {
  const long long dim = psi.size();
  const long long mask = 1LL << s;
  DenseState out(dim);
  for (long long idx = 0; idx < dim; ++idx) {
    const int b = static_cast<int>((idx >> s) & 1);
    out(idx) = m(b, 0) * psi(idx & ~mask) + m(b, 1) * psi(idx | mask);
  }
  return out;
}

// H|psi> for a local-sum operator, term by term, never materializing a matrix.
inline DenseState apply_local_sum(const LocalSumOperator& op, const DenseState& psi) {
  require(psi.size() == (1LL << op.n_sites()),
          "apply_local_sum: state dimension does not match the operator");
  DenseState out = op.constant() * psi;
  for (const LocalTerm& term : op.terms()) {
    DenseState tmp = psi;
    for (const auto& [site, m] : term.factors) tmp = apply_single_site(m, site, tmp);
    out += term.coeff * tmp;
  }
  return out;
}

inline double dense_site_expectation(const DenseState& psi, int site, PauliAxis axis) {
  const cplx v = psi.dot(apply_single_site(pauli(axis), site, psi)) / psi.squaredNorm();
  require(std::abs(v.imag()) <= 1e-9 * (1.0 + std::abs(v.real())),
          "dense_site_expectation: non-real expectation value");
  return v.real();
}

inline double dense_two_point(const DenseState& psi, int i, int j, PauliAxis axis) {
  require(i != j, "dense_two_point: sites must be distinct");
  const Eigen::Matrix2cd m = pauli(axis);
  const cplx v =
      psi.dot(apply_single_site(m, i, apply_single_site(m, j, psi))) / psi.squaredNorm();
  require(std::abs(v.imag()) <= 1e-9 * (1.0 + std::abs(v.real())),
          "dense_two_point: non-real correlator");
  return v.real();
}

inline double dense_expectation(const DenseState& psi, const LocalSumOperator& op) {
  const cplx v = psi.dot(apply_local_sum(op, psi)) / psi.squaredNorm();
  require(std::abs(v.imag()) <= 1e-9 * (1.0 + std::abs(v.real())),
          "dense_expectation: non-real expectation of a Hermitian operator");
  return v.real();
}

// Schmidt values across the bipartition (a_sites | rest), descending. Works on
// the smaller side's Gram matrix, so only eigenvalues of a 2^min(a, n-a)
// square matrix are needed.
inline std::vector<double> dense_schmidt(const DenseState& psi, const std::vector<int>& a_sites,
                                         int n_sites) {
  std::vector<char> in_a(static_cast<std::size_t>(n_sites), 0);
  for (int s : a_sites) {
    require(s >= 0 && s < n_sites, "dense_schmidt: site out of range");
    in_a[static_cast<std::size_t>(s)] = 1;
  }
  std::vector<int> a, b;
  for (int s = 0; s < n_sites; ++s) (in_a[static_cast<std::size_t>(s)] ? a : b).push_back(s);
  require(!a.empty() && !b.empty(), "dense_schmidt: bipartition must be nontrivial");
  const long long rows = 1LL << a.size();
  const long long cols = 1LL << b.size();
  Eigen::MatrixXcd m(rows, cols);
  for (long long idx = 0; idx < psi.size(); ++idx) {
    long long r = 0, c = 0;
    for (std::size_t k = 0; k < a.size(); ++k)
      if ((idx >> a[k]) & 1) r |= 1LL << k;
    for (std::size_t k = 0; k < b.size(); ++k)
      if ((idx >> b[k]) & 1) c |= 1LL << k;
    m(r, c) = psi(idx);
  }
  const Eigen::MatrixXcd gram =
      rows <= cols ? Eigen::MatrixXcd(m * m.adjoint()) : Eigen::MatrixXcd(m.adjoint() * m);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(gram, Eigen::EigenvaluesOnly);
  const double n2 = psi.squaredNorm();
  std::vector<double> sv;
  sv.reserve(static_cast<std::size_t>(es.eigenvalues().size()));
  for (Eigen::Index k = es.eigenvalues().size() - 1; k >= 0; --k)
    sv.push_back(std::sqrt(std::max(0.0, es.eigenvalues()(k) / n2)));
  return sv;
}

// --- dense time evolution ---------------------------------------------------------------

namespace detail {

template <class ApplyFn, class Observer>
void dense_evolve_impl(ApplyFn&& apply, DenseState psi, const TdvpConfig& cfg,
                       Observer&& observe, int measure_stride) {
  require(cfg.dt > 0.0, "ed_evolve: dt must be positive");
  require(cfg.t_max >= 0.0, "ed_evolve: t_max must be nonnegative");
  require(cfg.t_max == 0.0 || cfg.dt <= cfg.t_max, "ed_evolve: dt exceeds t_max");
  require(measure_stride >= 1, "ed_evolve: measurement stride must be at least 1");
  const int n_steps = static_cast<int>(std::floor(cfg.t_max / cfg.dt + 1e-9));
  observe(static_cast<const DenseState&>(psi), 0, 0.0);
  for (int k = 1; k <= n_steps; ++k) {
    psi = krylov_expm(apply, psi, cplx{cfg.dt, 0.0}, cfg);
    if (cfg.renormalize) psi /= psi.norm();
    if (k % measure_stride == 0 || k == n_steps)
      observe(static_cast<const DenseState&>(psi), k, static_cast<double>(k) * cfg.dt);
  }
}

}  // namespace detail

// Dense Krylov evolution under a local-sum operator. The observer is called as
// observe(psi, step, time) at step 0, at every `measure_stride`-th step, and
// at the final step.
template <class Observer>
void ed_evolve(const LocalSumOperator& op, const DenseState& psi0, const TdvpConfig& cfg,
               Observer&& observe, int measure_stride = 1) {
  require(op.n_sites() <= kMaxDenseSites, "ed_evolve: too many sites for dense evolution");
  require(psi0.size() == (1LL << op.n_sites()),
          "ed_evolve: state dimension does not match the operator");
  detail::dense_evolve_impl([&](const DenseState& v) { return apply_local_sum(op, v); }, psi0,
                            cfg, std::forward<Observer>(observe), measure_stride);
}

// --- constrained-flip model --------------------------------------------------------------

// Effective dynamics deep in the ordered phase: a spin may flip only when the
// flip leaves the domain-wall count unchanged, which on the open lattice means
// its existing neighbors split evenly between up and down (sites with an odd
// number of neighbors can never flip). Each allowed flip carries amplitude -g;
// a longitudinal field -h * sum_i sigma_x_i acts diagonally. The domain-wall
// count D commutes with this operator by construction.
struct PxpOperator {
  LatticeSpec lat;
  double g = 0.0;
  double h = 0.0;
  std::vector<std::vector<int>> neighbors;  // per site, ascending ids

  int n_sites() const { return lat.n_sites(); }

  DenseState apply(const DenseState& psi) const {
    const int n = n_sites();
    require(psi.size() == (1LL << n), "PxpOperator: state dimension mismatch");
    const long long dim = psi.size();
    DenseState out(dim);
    for (long long idx = 0; idx < dim; ++idx) {
      const int down =
          static_cast<int>(__builtin_popcountll(static_cast<unsigned long long>(idx)));
      out(idx) = -h * static_cast<double>(n - 2 * down) * psi(idx);
    }
    for (int s = 0; s < n; ++s) {
      const auto& nb = neighbors[static_cast<std::size_t>(s)];
      if (nb.size() % 2 != 0) continue;  // odd coordination: flip never allowed
      const int half = static_cast<int>(nb.size()) / 2;
      const long long mask = 1LL << s;
      for (long long idx = 0; idx < dim; ++idx) {
        int down = 0;
        for (int t : nb) down += static_cast<int>((idx >> t) & 1);
        if (down == half) out(idx) += -g * psi(idx ^ mask);
      }
    }
    return out;
  }

  // Domain-wall count of one basis configuration.
  int walls(long long idx) const {
    int d = 0;
    for (const auto& [i, j] : lat.bonds)
      if (((idx >> i) & 1) != ((idx >> j) & 1)) ++d;
    return d;
  }

  // <D> of a dense state.
  double mean_walls(const DenseState& psi) const {
    double acc = 0.0;
    for (long long idx = 0; idx < psi.size(); ++idx)
      acc += std::norm(psi(idx)) * static_cast<double>(walls(idx));
    return acc / psi.squaredNorm();
  }
};

inline PxpOperator pxp_operator(const LatticeSpec& lat, double g, double h) {
  require(lat.n_sites() >= 2 && lat.n_sites() <= kMaxDenseSites,
          "pxp_operator: site count out of range");
  PxpOperator op;
  op.lat = lat;
  op.g = g;
  op.h = h;
  op.neighbors.resize(static_cast<std::size_t>(lat.n_sites()));
  for (const auto& [i, j] : lat.bonds) {
    op.neighbors[static_cast<std::size_t>(i)].push_back(j);
    op.neighbors[static_cast<std::size_t>(j)].push_back(i);
  }
  for (auto& nb : op.neighbors) std::sort(nb.begin(), nb.end());
  return op;
}

// Dense Krylov evolution under the constrained-flip operator.
template <class Observer>
void ed_evolve(const PxpOperator& op, const DenseState& psi0, const TdvpConfig& cfg,
               Observer&& observe, int measure_stride = 1) {
  require(psi0.size() == (1LL << op.n_sites()),
          "ed_evolve: state dimension does not match the operator");
  detail::dense_evolve_impl([&](const DenseState& v) { return op.apply(v); }, psi0, cfg,
                            std::forward<Observer>(observe), measure_stride);
}

// --- dense records -------------------------------------------------------------------------

// Mirror of measure_record for dense states: same plan switches, same record
// fields, so trajectory comparisons are backend-agnostic. The topology is only
// needed when the plan asks for entropies (it defines the cut ladder).
inline ObservableRecord dense_measure_record(const DenseState& psi, const MeasurementPlan& plan,
                                             double time, const TreeTopology* topo = nullptr) {
  int n = 0;
  while ((1LL << n) < psi.size()) ++n;
  require(psi.size() == (1LL << n), "dense_measure_record: dimension is not a power of two");

  ObservableRecord rec;
  rec.time = time;
  rec.norm = psi.norm();
  require(rec.norm > 0.0, "dense_measure_record: state has zero norm");

  const bool need_x = plan.site_x || !plan.regions.empty();
  const bool need_z = plan.site_z || !plan.regions.empty();
  std::vector<double> mx, mz;
  auto batch = [&](PauliAxis axis) {
    std::vector<double> out(static_cast<std::size_t>(n), 0.0);
    for (int site = 0; site < n; ++site) {
      out[static_cast<std::size_t>(site)] = dense_site_expectation(psi, site, axis);
      require(std::abs(out[static_cast<std::size_t>(site)]) <= 1.0 + 1e-9,
              "dense_measure_record: expectation value out of bounds");
    }
    return out;
  };
  if (need_x) mx = batch(PauliAxis::x);
  if (need_z) mz = batch(PauliAxis::z);
  if (plan.site_x) rec.sx = mx;
  if (plan.site_z) rec.sz = mz;

  for (const auto& [name, region] : plan.regions) {
    require(!region.sites.empty(), "dense_measure_record: empty region");
    const auto& m = region.axis == PauliAxis::x ? mx : mz;
    double acc = 0.0;
    for (int site : region.sites) {
      require(site >= 0 && site < n, "dense_measure_record: region site out of range");
      acc += m[static_cast<std::size_t>(site)];
    }
    rec.region_means[name] = acc / static_cast<double>(region.sites.size());
  }

  if (plan.correlations) {
    require(plan.lattice != nullptr, "dense_measure_record: correlations need the lattice");
    rec.corr_center = center_site(*plan.lattice);
    rec.corr_z.assign(static_cast<std::size_t>(n), 0.0);
    const double mc = dense_site_expectation(psi, rec.corr_center, PauliAxis::z);
    for (int site = 0; site < n; ++site) {
      if (site == rec.corr_center) {
        rec.corr_z[static_cast<std::size_t>(site)] = 1.0 - mc * mc;
        continue;
      }
      const double ms = mz.empty() ? dense_site_expectation(psi, site, PauliAxis::z)
                                   : mz[static_cast<std::size_t>(site)];
      rec.corr_z[static_cast<std::size_t>(site)] =
          dense_two_point(psi, rec.corr_center, site, PauliAxis::z) - mc * ms;
    }
  }

  if (plan.energy_op != nullptr) rec.energy = dense_expectation(psi, *plan.energy_op);
  if (plan.domain_wall_op != nullptr) {
    rec.dw_length = dense_expectation(psi, *plan.domain_wall_op);
    const double bonds = static_cast<double>(plan.domain_wall_op->n_terms());
    require(*rec.dw_length >= -1e-9 && *rec.dw_length <= bonds + 1e-9,
            "dense_measure_record: domain-wall length out of bounds");
  }

  if (plan.wants_entropy()) {
    require(topo != nullptr, "dense_measure_record: entropies need the tree topology");
    require(topo->n_sites() == n, "dense_measure_record: topology does not match the state");
    std::vector<int> levels = plan.entropy_levels;
    if (levels.empty()) {
      levels.resize(static_cast<std::size_t>(entropy_levels_available(*topo)));
      for (std::size_t k = 0; k < levels.size(); ++k) levels[k] = static_cast<int>(k) + 1;
    }
    for (int level : levels) {
      const auto sv = dense_schmidt(psi, level_cut_sites(*topo, level), n);
      rec.entropies[level] = entropy_from_spectrum(sv);
      if (plan.spectrum) rec.spectrum[level] = sv;
    }
  }

  return rec;
}

// --- free-fermion chain ---------------------------------------------------------------------

// Open chain of free fermions with uniform hopping -g and a linear on-site
// potential of slope 2h. The coordinate in the potential is centered
// (x - n/2), which shifts the spectrum but not the dynamics.
struct FermionChain {
  int n_sites = 64;
  double g = 0.0;
  double h = 0.0;

  Eigen::MatrixXd single_particle() const {
    require(n_sites >= 2, "FermionChain: need at least two sites");
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n_sites, n_sites);
    for (int x = 0; x < n_sites; ++x)
      m(x, x) = 2.0 * h * (static_cast<double>(x) - 0.5 * static_cast<double>(n_sites));
    for (int x = 0; x + 1 < n_sites; ++x) {
      m(x, x + 1) = -g;
      m(x + 1, x) = -g;
    }
    return m;
  }
};

// Site densities n_x(t) for an initial product occupation of `occupied` sites,
// from the exact single-particle propagator: n_x(t) = sum_k |U(x, x_k)|^2.
inline std::vector<double> fermion_evolve(const FermionChain& chain,
                                          const std::vector<int>& occupied, double t) {
  const Eigen::MatrixXd m = chain.single_particle();
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  require(es.info() == Eigen::Success, "fermion_evolve: eigendecomposition failed");
  const Eigen::VectorXd& w = es.eigenvalues();
  const Eigen::MatrixXd& v = es.eigenvectors();
  Eigen::VectorXcd phases(w.size());
  for (Eigen::Index k = 0; k < w.size(); ++k) phases(k) = std::exp(cplx{0.0, -w(k) * t});
  const Eigen::MatrixXcd u = v.cast<cplx>() * phases.asDiagonal() * v.transpose().cast<cplx>();
  std::vector<double> density(static_cast<std::size_t>(chain.n_sites), 0.0);
  for (int x0 : occupied) {
    require(x0 >= 0 && x0 < chain.n_sites, "fermion_evolve: occupied site out of range");
    for (int x = 0; x < chain.n_sites; ++x)
      density[static_cast<std::size_t>(x)] += std::norm(u(x, x0));
  }
  return density;
}

// First moment of a density profile (site coordinates 0..n-1).
inline double density_centroid(const std::vector<double>& density) {
  double mass = 0.0, moment = 0.0;
  for (std::size_t x = 0; x < density.size(); ++x) {
    mass += density[x];
    moment += static_cast<double>(x) * density[x];
  }
  require(mass > 0.0, "density_centroid: empty density");
  return moment / mass;
}

// Root-mean-square spatial extent of a density profile about its centroid.
// For a single particle released in the tilted chain this breathing width
// oscillates as sqrt(2)*(g/h)*|sin(h*t)| while the centroid stays pinned, so
// the spread carries the linear-in-|g/h| oscillation amplitude.
inline double density_spread(const std::vector<double>& density) {
  const double c = density_centroid(density);
  double mass = 0.0, second = 0.0;
  for (std::size_t x = 0; x < density.size(); ++x) {
    const double d = static_cast<double>(x) - c;
    mass += density[x];
    second += d * d * density[x];
  }
  return std::sqrt(std::max(0.0, second / mass));
}

// Period after which the chain's dynamics revives: 2*pi over the median level
// spacing. In the linear potential the bulk levels form a ladder with spacing
// 2h, so the revival period approaches pi/h; the median makes the estimate
// robust against edge levels of the finite chain.
inline double revival_time(const FermionChain& chain) {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(chain.single_particle(),
                                                          Eigen::EigenvaluesOnly);
  const Eigen::VectorXd& w = es.eigenvalues();
  require(w.size() >= 2, "revival_time: need at least two levels");
  std::vector<double> gaps;
  gaps.reserve(static_cast<std::size_t>(w.size() - 1));
  for (Eigen::Index k = 0; k + 1 < w.size(); ++k) gaps.push_back(w(k + 1) - w(k));
  std::sort(gaps.begin(), gaps.end());
  const double median = gaps[gaps.size() / 2];
  require(median > 0.0, "revival_time: degenerate spectrum");
  return 2.0 * M_PI / median;
}

// --- closed-form strip value -------------------------------------------------------------

// Steady-state magnetization inside a wide strip, from the golden-ratio
// closed form. The derivation fixes the magnitude, 1/sqrt(5); its overall
// sign convention is ambiguous in the source derivation, so callers should
// compare magnitudes (sign_uncertain stays true).
struct StripPrediction {
  double phi = 0.0;        // golden ratio
  double magnitude = 0.0;  // |steady-state magnetization|
  bool sign_uncertain = true;
};

inline StripPrediction strip_prediction() {
  StripPrediction p;
  p.phi = 0.5 * (1.0 + std::sqrt(5.0));
  p.magnitude = 1.0 / std::sqrt(5.0);
  p.sign_uncertain = true;
  return p;
}

}  // namespace ttns
