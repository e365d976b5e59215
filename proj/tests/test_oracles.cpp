// Reference-engine tests: the dense evolution against closed-form and
// matrix-built cross-checks, the constrained-flip model's frozen flip rules
// and conservation laws, the free-fermion chain's exact periodicity and
// amplitude scaling, and the agreement between two independent oracles on the
// corner-melting problem.

#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <complex>
#include <memory>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "ttns/hamiltonian.hpp"
#include "ttns/initstates.hpp"
#include "ttns/observables.hpp"
#include "ttns/oracles.hpp"
#include "ttns/state.hpp"
#include "ttns/tdvp.hpp"
#include "ttns/topology.hpp"

namespace {

using ttns::cplx;
using ttns::DenseState;
using ttns::PauliAxis;

Eigen::MatrixXcd kron(const Eigen::MatrixXcd& a, const Eigen::MatrixXcd& b) {
  Eigen::MatrixXcd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

// Dense matrix of a local-sum operator with the site-s-is-bit-s convention:
// kron factors run from the highest site down to site 0.
Eigen::MatrixXcd dense_matrix(const ttns::LocalSumOperator& op) {
  const int n = op.n_sites();
  const long long dim = 1LL << n;
  Eigen::MatrixXcd h = Eigen::MatrixXcd::Identity(dim, dim) * op.constant();
  for (const auto& term : op.terms()) {
    Eigen::MatrixXcd m = Eigen::MatrixXcd::Identity(1, 1);
    for (int s = n - 1; s >= 0; --s) {
      Eigen::Matrix2cd f = Eigen::Matrix2cd::Identity();
      for (const auto& [site, factor] : term.factors)
        if (site == s) f = factor;
      m = kron(m, f);
    }
    h += term.coeff * m;
  }
  return h;
}

constexpr std::array<cplx, 2> kUp{cplx{1.0, 0.0}, cplx{0.0, 0.0}};

DenseState random_state(long long dim, std::uint64_t seed) {
  ttns::Rng rng(seed);
  DenseState v(dim);
  for (long long i = 0; i < dim; ++i) v(i) = rng.next_cplx_normal();
  return v / v.norm();
}

}  // namespace

TEST(DenseBasics, ProductStatesMatchTheNetworkConvention) {
  const ttns::LatticeSpec lat = ttns::build_lattice(2, 4);
  const auto topo = std::make_shared<const ttns::TreeTopology>(ttns::build_tree(lat));
  ttns::PatternSpec spec;
  spec.kind = ttns::PatternKind::bubble;
  spec.bubble_w = 1;
  spec.bubble_h = 2;
  spec.anchor_x = 1;
  spec.anchor_y = 1;
  const auto amps = ttns::make_pattern(lat, spec);
  const DenseState psi = ttns::dense_product_state(amps);
  const Eigen::VectorXcd ref = ttns::to_statevector(ttns::product_state(topo, amps, 1));
  ASSERT_EQ(psi.size(), ref.size());
  EXPECT_LT((psi - ref).norm(), 1e-12);

  for (int site = 0; site < 8; ++site) {
    const double want = (site == lat.site(1, 1) || site == lat.site(1, 2)) ? -1.0 : 1.0;
    EXPECT_NEAR(ttns::dense_site_expectation(psi, site, PauliAxis::x), want, 1e-12);
  }
}

TEST(DenseBasics, LocalSumApplyMatchesTheDenseMatrix) {
  const ttns::LatticeSpec lat = ttns::build_lattice(2, 2);
  const ttns::LocalSumOperator op = ttns::transverse_ising_operator(lat, 1.0, 1.3, 0.4);
  const Eigen::MatrixXcd h = dense_matrix(op);
  const DenseState v = random_state(16, 11);
  const DenseState via_terms = ttns::apply_local_sum(op, v);
  const DenseState via_matrix = h * v;
  EXPECT_LT((via_terms - via_matrix).norm(), 1e-12);
  EXPECT_NEAR(ttns::dense_expectation(v, op), v.dot(via_matrix).real(), 1e-10);
}

TEST(DenseBasics, SchmidtValuesMatchAFullSvd) {
  const int n = 8;
  const DenseState psi = random_state(1 << n, 29);
  const std::vector<int> a_sites{0, 2, 5};
  const auto sv = ttns::dense_schmidt(psi, a_sites, n);

  Eigen::MatrixXcd m(8, 32);
  for (long long idx = 0; idx < psi.size(); ++idx) {
    long long r = 0, c = 0, kb = 0;
    for (std::size_t k = 0; k < a_sites.size(); ++k)
      if ((idx >> a_sites[k]) & 1) r |= 1LL << k;
    for (int s = 0; s < n; ++s) {
      if (std::find(a_sites.begin(), a_sites.end(), s) != a_sites.end()) continue;
      if ((idx >> s) & 1) c |= 1LL << kb;
      ++kb;
    }
    m(r, c) = psi(idx);
  }
  const Eigen::JacobiSVD<Eigen::MatrixXcd> svd(m);
  ASSERT_EQ(static_cast<Eigen::Index>(sv.size()), svd.singularValues().size());
  for (Eigen::Index k = 0; k < svd.singularValues().size(); ++k)
    EXPECT_NEAR(sv[static_cast<std::size_t>(k)], svd.singularValues()(k), 1e-10);

  EXPECT_THROW(ttns::dense_schmidt(psi, {}, n), ttns::Error);
  EXPECT_THROW(ttns::dense_schmidt(psi, {0, 1, 2, 3, 4, 5, 6, 7}, n), ttns::Error);
}

TEST(EdEvolve, CouplingEigenstatesAreStationary) {
  const ttns::LatticeSpec lat = ttns::build_lattice(2, 2);
  const ttns::LocalSumOperator op = ttns::transverse_ising_operator(lat, 1.0, 0.0, 0.0);
  const DenseState psi0 = ttns::dense_product_state({kUp, kUp, kUp, kUp});
  ttns::TdvpConfig cfg;
  cfg.dt = 0.1;
  cfg.t_max = 0.5;
  DenseState last;
  ttns::ed_evolve(op, psi0, cfg, [&](const DenseState& p, int, double) { last = p; });
  EXPECT_NEAR(std::abs(psi0.dot(last)), 1.0, 1e-12);
}

TEST(EdEvolve, TwoSiteTrajectoryMatchesTheEigendecomposition) {
  const ttns::LatticeSpec lat = ttns::build_lattice(2, 1);
  const ttns::LocalSumOperator op = ttns::transverse_ising_operator(lat, 1.0, 1.0, 0.0);
  const Eigen::MatrixXcd h = dense_matrix(op);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(h);
  const DenseState psi0 = ttns::dense_product_state({kUp, kUp});

  ttns::TdvpConfig cfg;
  cfg.dt = 0.05;
  cfg.t_max = 2.0;
  cfg.krylov_tol = 1e-12;
  std::vector<std::pair<double, double>> traj;  // (time, <sz_0>)
  ttns::ed_evolve(op, psi0, cfg, [&](const DenseState& p, int, double t) {
    traj.emplace_back(t, ttns::dense_site_expectation(p, 0, PauliAxis::z));
  });
  ASSERT_EQ(traj.size(), 41u);
  for (const auto& [t, sz] : traj) {
    Eigen::VectorXcd phases(4);
    for (int k = 0; k < 4; ++k) phases(k) = std::exp(cplx{0.0, -es.eigenvalues()(k) * t});
    const DenseState exact =
        es.eigenvectors() * phases.asDiagonal() * es.eigenvectors().adjoint() * psi0;
    EXPECT_NEAR(sz, ttns::dense_site_expectation(exact, 0, PauliAxis::z), 1e-10) << "t=" << t;
  }
}

TEST(EdEvolve, SingleSpinPrecessesAtTwiceTheField) {
  const ttns::LatticeSpec lat = ttns::build_lattice(2, 1);
  const double g = 0.7;
  const ttns::LocalSumOperator op = ttns::transverse_ising_operator(lat, 0.0, g, 0.0);
  const DenseState psi0 = ttns::dense_product_state({kUp, kUp});
  ttns::TdvpConfig cfg;
  cfg.dt = 0.02;
  cfg.t_max = 3.0;
  cfg.krylov_tol = 1e-12;
  ttns::ed_evolve(op, psi0, cfg, [&](const DenseState& p, int, double t) {
    EXPECT_NEAR(ttns::dense_site_expectation(p, 0, PauliAxis::x), std::cos(2.0 * g * t), 1e-10);
    EXPECT_NEAR(ttns::dense_site_expectation(p, 1, PauliAxis::x), std::cos(2.0 * g * t), 1e-10);
  });
}

TEST(EdEvolve, ConservesEnergyAndNormOverAQuench) {
  const ttns::LatticeSpec lat = ttns::build_lattice(4, 3);
  const ttns::LocalSumOperator op = ttns::transverse_ising_operator(lat, 1.0, 6.08, 0.0);
  std::vector<std::array<cplx, 2>> amps(12, kUp);
  const DenseState psi0 = ttns::dense_product_state(amps);
  const double e0 = ttns::dense_expectation(psi0, op);

  ttns::TdvpConfig cfg;
  cfg.dt = 0.005;
  cfg.t_max = 2.0;
  cfg.renormalize = false;
  int records = 0;
  double worst_e = 0.0, worst_n = 0.0;
  ttns::ed_evolve(
      op, psi0, cfg,
      [&](const DenseState& p, int, double) {
        ++records;
        worst_n = std::max(worst_n, std::abs(p.norm() - 1.0));
        worst_e = std::max(worst_e, std::abs(ttns::dense_expectation(p, op) - e0));
      },
      40);
  EXPECT_EQ(records, 11);  // step 0 plus every 40th of 400
  EXPECT_LT(worst_n, 1e-12);
  EXPECT_LT(worst_e, 1e-9);
}

TEST(Pxp, FlipRulesAreFrozen) {
  const ttns::LatticeSpec lat = ttns::build_lattice(4, 4);
  const double g = 0.8, h = 0.3;
  const ttns::PxpOperator op = ttns::pxp_operator(lat, g, h);
  const long long dim = 1LL << 16;

  // The uniform configuration admits no flips: applying the operator leaves
  // only its diagonal field entry.
  DenseState e0 = DenseState::Zero(dim);
  e0(0) = 1.0;
  const DenseState he0 = op.apply(e0);
  EXPECT_NEAR(std::abs(he0(0) - cplx{-h * 16.0, 0.0}), 0.0, 1e-14);
  EXPECT_NEAR(he0.norm(), h * 16.0, 1e-12);

  // Interior site (1,1) with neighbors (0,1) and (2,1) flipped: two down, two
  // up -> the flip matrix element is exactly -g.
  const int center = lat.site(1, 1);
  const long long idx = (1LL << lat.site(0, 1)) | (1LL << lat.site(2, 1));
  DenseState ei = DenseState::Zero(dim);
  ei(idx) = 1.0;
  const DenseState hei = op.apply(ei);
  EXPECT_NEAR(std::abs(hei(idx ^ (1LL << center)) - cplx{-g, 0.0}), 0.0, 1e-14);

  // Corner site (0,0) with one of its two neighbors down: flip allowed.
  const long long cidx = 1LL << lat.site(1, 0);
  DenseState ec = DenseState::Zero(dim);
  ec(cidx) = 1.0;
  EXPECT_NEAR(std::abs(op.apply(ec)(cidx ^ 1LL) - cplx{-g, 0.0}), 0.0, 1e-14);

  // Three-neighbor edge sites can never flip: no matrix element reaches the
  // configuration where only edge site (1, 0) is flipped from uniform.
  const int edge = lat.site(1, 0);
  for (long long probe : {0LL, 1LL << lat.site(0, 0), (1LL << lat.site(0, 0)) | (1LL << lat.site(2, 0))}) {
    DenseState ep = DenseState::Zero(dim);
    ep(probe) = 1.0;
    EXPECT_EQ(op.apply(ep)(probe ^ (1LL << edge)), cplx(0.0, 0.0));
  }

  // Every matrix element preserves the domain-wall count.
  for (long long probe : {idx, cidx, (idx | cidx), 0x5aLL}) {
    DenseState ep = DenseState::Zero(dim);
    ep(probe) = 1.0;
    const DenseState hep = op.apply(ep);
    for (long long out = 0; out < dim; ++out)
      if (std::abs(hep(out)) > 0.0)
        EXPECT_EQ(op.walls(out), op.walls(probe)) << "from " << probe << " to " << out;
  }

  // Hermiticity on random vectors.
  const DenseState u = random_state(dim, 3), v = random_state(dim, 4);
  const cplx a = u.dot(op.apply(v));
  const cplx b = v.dot(op.apply(u));
  EXPECT_NEAR(std::abs(a - std::conj(b)), 0.0, 1e-12);
}

TEST(Pxp, ConservesWallsAndEnergyAlongATrajectory) {
  const ttns::LatticeSpec lat = ttns::build_lattice(4, 4);
  const auto topo = std::make_shared<const ttns::TreeTopology>(ttns::build_tree(lat));
  const ttns::PxpOperator op = ttns::pxp_operator(lat, 0.3, 0.1);

  ttns::PatternSpec spec;
  spec.kind = ttns::PatternKind::corner;
  spec.corner_size = 3;
  const DenseState psi0 = ttns::dense_product_state(ttns::make_pattern(lat, spec));
  const double d0 = op.mean_walls(psi0);
  EXPECT_NEAR(d0, 6.0, 1e-12);
  const double e0 = psi0.dot(op.apply(psi0)).real();

  ttns::TdvpConfig cfg;
  cfg.dt = 0.1;
  cfg.t_max = 1.0;
  cfg.renormalize = false;
  double worst_d = 0.0, worst_e = 0.0, worst_n = 0.0;
  ttns::ed_evolve(op, psi0, cfg, [&](const DenseState& p, int, double) {
    worst_d = std::max(worst_d, std::abs(op.mean_walls(p) - d0));
    worst_e = std::max(worst_e, std::abs(p.dot(op.apply(p)).real() - e0));
    worst_n = std::max(worst_n, std::abs(p.norm() - 1.0));
  });
  EXPECT_LT(worst_d, 1e-10);
  EXPECT_LT(worst_e, 1e-9);
  EXPECT_LT(worst_n, 1e-12);
}

TEST(Fermions, FrozenAtZeroHoppingAndBlochPeriodic) {
  ttns::FermionChain chain;
  chain.n_sites = 64;
  chain.g = 0.0;
  chain.h = 0.25;
  const std::vector<int> occ{20, 32, 33};
  const auto n0 = ttns::fermion_evolve(chain, occ, 0.0);
  const auto nt = ttns::fermion_evolve(chain, occ, 7.3);
  for (int x = 0; x < 64; ++x)
    EXPECT_NEAR(nt[static_cast<std::size_t>(x)], n0[static_cast<std::size_t>(x)], 1e-12);

  chain.g = 0.5;
  const double period = M_PI / chain.h;
  const auto n_rev = ttns::fermion_evolve(chain, {32}, period);
  const auto n_init = ttns::fermion_evolve(chain, {32}, 0.0);
  for (int x = 0; x < 64; ++x)
    EXPECT_NEAR(n_rev[static_cast<std::size_t>(x)], n_init[static_cast<std::size_t>(x)], 1e-8);

  // Particle number is conserved at any time.
  const auto n_mid = ttns::fermion_evolve(chain, occ, 3.71);
  double total = 0.0;
  for (double d : n_mid) total += d;
  EXPECT_NEAR(total, 3.0, 1e-12);
}

TEST(Fermions, CentroidStaysPinnedWhileTheProfileBreathes) {
  // A particle released in the bulk spreads into a symmetric profile, so its
  // centroid never moves even though each site density oscillates.
  ttns::FermionChain chain;
  chain.n_sites = 64;
  chain.g = 0.5;
  chain.h = 0.5;
  for (double t : {0.7, 1.9, 3.1, 5.2}) {
    const auto n = ttns::fermion_evolve(chain, {32}, t);
    EXPECT_NEAR(ttns::density_centroid(n), 32.0, 1e-10) << "t=" << t;
  }
}

TEST(Fermions, SpreadAmplitudeScalesLinearlyInTheRatio) {
  // The breathing width peaks at sqrt(2)*(g/h) halfway through each period:
  // exactly linear in the ratio, and independent of the two scales separately.
  auto peak_spread = [](double g, double h) {
    ttns::FermionChain chain;
    chain.n_sites = 64;
    chain.g = g;
    chain.h = h;
    double hi = 0.0;
    for (int k = 1; k <= 16; ++k) {
      const double t = (M_PI / h) * static_cast<double>(k) / 16.0;
      hi = std::max(hi, ttns::density_spread(ttns::fermion_evolve(chain, {32}, t)));
    }
    return hi;
  };
  const double a1 = peak_spread(0.125, 0.5);
  const double a2 = peak_spread(0.25, 0.5);
  const double a3 = peak_spread(0.5, 0.5);
  EXPECT_NEAR(a1, std::sqrt(2.0) * 0.25, 1e-9);
  EXPECT_NEAR(a2 / a1, 2.0, 1e-9);
  EXPECT_NEAR(a3 / a2, 2.0, 1e-9);
  // Same ratio at a different field: the amplitude depends on g/h alone.
  EXPECT_NEAR(peak_spread(0.025, 0.05), a2, 1e-9);
}

TEST(Fermions, RevivalTimeComesFromTheLevelSpacing) {
  ttns::FermionChain chain;
  chain.n_sites = 64;
  chain.g = 0.02;
  chain.h = 0.05;
  EXPECT_NEAR(ttns::revival_time(chain), M_PI / chain.h, 1e-6 * (M_PI / chain.h));
  chain.h = 0.02;
  chain.g = 0.01;
  EXPECT_NEAR(ttns::revival_time(chain), M_PI / chain.h, 1e-6 * (M_PI / chain.h));
}

TEST(CrossOracle, CornerOscillationMatchesTheFermionRevival) {
  // Corner melting in the constrained model vs the independent free-fermion
  // period: the corner-site magnetization departs from its initial value and
  // revives after one fermion period.
  const ttns::LatticeSpec lat = ttns::build_lattice(4, 4);
  const double g = 0.02, h = 0.05;
  const ttns::PxpOperator op = ttns::pxp_operator(lat, g, h);

  ttns::PatternSpec spec;
  spec.kind = ttns::PatternKind::corner;
  spec.corner_size = 3;
  const DenseState psi0 = ttns::dense_product_state(ttns::make_pattern(lat, spec));
  const int corner_site = lat.site(2, 2);
  const double m0 = ttns::dense_site_expectation(psi0, corner_site, PauliAxis::x);

  ttns::FermionChain chain;
  chain.n_sites = 64;
  chain.g = g;
  chain.h = h;
  const double t_rev = ttns::revival_time(chain);

  ttns::TdvpConfig cfg;
  cfg.dt = 0.5;
  cfg.t_max = 1.3 * t_rev;
  std::vector<std::pair<double, double>> dev;  // (time, |m - m0|)
  ttns::ed_evolve(op, psi0, cfg, [&](const DenseState& p, int, double t) {
    dev.emplace_back(t, std::abs(ttns::dense_site_expectation(p, corner_site, PauliAxis::x) - m0));
  });

  // Peak departure, then the revival: the deviation minimum after the peak.
  double peak = 0.0;
  double t_peak = 0.0;
  for (const auto& [t, d] : dev)
    if (t < t_rev && d > peak) {
      peak = d;
      t_peak = t;
    }
  ASSERT_GT(peak, 0.05);  // the corner actually melts
  double t_return = -1.0;
  double depth = 1e300;
  for (const auto& [t, d] : dev)
    if (t > t_peak && d < depth) {
      depth = d;
      t_return = t;
    }
  ASSERT_GT(t_return, 0.0) << "no revival observed";
  EXPECT_NEAR(t_return, t_rev, 0.05 * t_rev);
  EXPECT_LT(depth, 0.05 * peak);  // the recovery is essentially complete
}

TEST(StripValue, ClosedFormConstants) {
  const ttns::StripPrediction p = ttns::strip_prediction();
  EXPECT_NEAR(p.phi, 1.6180339887498949, 1e-12);
  EXPECT_NEAR(p.magnitude, 0.44721359549995793, 1e-12);
  EXPECT_NEAR(2.0 * p.phi - 1.0, std::sqrt(5.0), 1e-12);
  EXPECT_NEAR(p.magnitude, 1.0 / (2.0 * p.phi - 1.0), 1e-12);
  EXPECT_TRUE(p.sign_uncertain);
}

TEST(DenseRecords, MirrorTheNetworkRecords) {
  const ttns::LatticeSpec lat = ttns::build_lattice(2, 4);
  const auto topo = std::make_shared<const ttns::TreeTopology>(ttns::build_tree(lat));

  // Entangle a padded product state with a few network steps, then compare
  // record-for-record against the dense mirror of the same state.
  std::vector<std::array<cplx, 2>> amps(8, kUp);
  ttns::TtnState s = ttns::product_state(topo, amps, 16);
  const ttns::LocalSumOperator ham = ttns::transverse_ising_operator(lat, 1.0, 1.2, 0.3);
  ttns::EnvironmentCache cache(s, ham);
  cache.build_all();
  ttns::TdvpConfig step;
  step.dt = 0.02;
  for (int k = 0; k < 5; ++k) ttns::tdvp_step(s, ham, cache, step);
  const DenseState psi = ttns::to_statevector(s);

  const ttns::LocalSumOperator dw = ttns::domain_wall_operator(lat);
  ttns::MeasurementPlan plan;
  plan.correlations = true;
  plan.spectrum = true;
  plan.lattice = &lat;
  plan.energy_op = &ham;
  plan.domain_wall_op = &dw;
  plan.regions["left"] = {PauliAxis::x, {0, 1, 2, 3}};

  const ttns::ObservableRecord a = ttns::measure_record(s, plan, 0.1);
  const ttns::ObservableRecord b = ttns::dense_measure_record(psi, plan, 0.1, topo.get());

  ASSERT_EQ(a.sx.size(), b.sx.size());
  for (std::size_t k = 0; k < a.sx.size(); ++k) {
    EXPECT_NEAR(a.sx[k], b.sx[k], 1e-9);
    EXPECT_NEAR(a.sz[k], b.sz[k], 1e-9);
    EXPECT_NEAR(a.corr_z[k], b.corr_z[k], 1e-9);
  }
  EXPECT_EQ(a.corr_center, b.corr_center);
  EXPECT_NEAR(*a.energy, *b.energy, 1e-9);
  EXPECT_NEAR(*a.dw_length, *b.dw_length, 1e-9);
  EXPECT_NEAR(a.region_means.at("left"), b.region_means.at("left"), 1e-9);
  ASSERT_EQ(a.entropies.size(), b.entropies.size());
  for (const auto& [level, ent] : a.entropies) EXPECT_NEAR(ent, b.entropies.at(level), 1e-9);
  for (const auto& [level, sv] : a.spectrum) {
    const auto& bsv = b.spectrum.at(level);
    ASSERT_EQ(sv.size(), bsv.size()) << "level " << level;
    for (std::size_t k = 0; k < sv.size(); ++k) EXPECT_NEAR(sv[k], bsv[k], 1e-8);
  }
}

TEST(DenseRecords, ValidatesInputs) {
  const DenseState psi = random_state(16, 5);
  ttns::MeasurementPlan plan;
  plan.entropy_levels = ttns::MeasurementPlan::no_entropy();
  EXPECT_NO_THROW(ttns::dense_measure_record(psi, plan, 0.0));

  ttns::MeasurementPlan wants_entropy;
  EXPECT_THROW(ttns::dense_measure_record(psi, wants_entropy, 0.0), ttns::Error);

  ttns::MeasurementPlan wants_corr;
  wants_corr.entropy_levels = ttns::MeasurementPlan::no_entropy();
  wants_corr.correlations = true;
  EXPECT_THROW(ttns::dense_measure_record(psi, wants_corr, 0.0), ttns::Error);

  EXPECT_THROW(ttns::dense_measure_record(random_state(12, 6), plan, 0.0), ttns::Error);
}
