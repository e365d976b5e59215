#pragma once
// Single-site sweep integration for tree tensor network states: Lanczos
// exponentials of the effective operators, a palindromic Euler-tour schedule,
// and the step/evolve drivers. Node tensors are evolved forward in time,
// detached bond factors backward, so one full sweep advances the state by dt.

#include <cmath>
#include <complex>
#include <cstdlib>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ttns/common.hpp"
#include "ttns/hamiltonian.hpp"
#include "ttns/state.hpp"
#include "ttns/tensor.hpp"
#include "ttns/topology.hpp"

namespace ttns {

struct TdvpConfig {
  double dt = 0.01;           // sweep length, in units of inverse coupling
  double t_max = 0.0;         // total evolution window used by evolve()
  int krylov_max = 30;        // hard cap on the Lanczos basis size
  double krylov_tol = 1e-10;  // relative residual target for the exponentials
  bool renormalize = true;    // rescale the root tensor after each sweep
};

// Outcome of one Lanczos exponential solve.
struct KrylovReport {
  int iterations = 0;
  double residual = std::numeric_limits<double>::infinity();
  bool converged = false;
  bool breakdown = false;  // basis exhausted the reachable subspace: result exact
};

// Inner-product plumbing so krylov_expm can drive dense statevectors as well
// as tensors (the Tensor overloads live in tensor.hpp).
inline cplx dot(const Eigen::VectorXcd& a, const Eigen::VectorXcd& b) { return a.dot(b); }
inline void axpy(cplx alpha, const Eigen::VectorXcd& x, Eigen::VectorXcd& y) {
  y.noalias() += alpha * x;
}
inline Eigen::VectorXcd& scale(Eigen::VectorXcd& v, cplx alpha) {
  v *= alpha;
  return v;
}
inline double norm(const Eigen::VectorXcd& v) { return v.norm(); }

// exp(-i*tau*A) v for a Hermitian map A, via Lanczos with full
// reorthogonalization. The residual estimate is the last subdiagonal element
// times the last component of the small solution, relative to |v|; iteration
// stops early once it falls below cfg.krylov_tol or the reachable subspace is
// exhausted. Detectably non-Hermitian maps, non-finite applies, and zero
// inputs are hard errors.
template <typename Vec, typename ApplyFn>
Vec krylov_expm(ApplyFn&& apply, const Vec& v, cplx tau, const TdvpConfig& cfg,
                KrylovReport* report = nullptr) {
  require(cfg.krylov_max >= 2, "krylov_expm: krylov_max must be at least 2");
  const double beta0 = norm(v);
  require(std::isfinite(beta0), "krylov_expm: input vector is not finite");
  require(beta0 > 0.0, "krylov_expm: input vector has zero norm");
  const cplx expo = cplx(0.0, -1.0) * tau;

  std::vector<Vec> basis;
  basis.reserve(static_cast<std::size_t>(cfg.krylov_max));
  {
    Vec q0 = v;
    scale(q0, 1.0 / beta0);
    basis.push_back(std::move(q0));
  }
  std::vector<double> alpha;  // tridiagonal diagonal
  std::vector<double> beta;   // beta[i] couples basis[i] and basis[i+1]
  Eigen::VectorXcd y;         // exp(expo * T_m) e1 for the current basis
  KrylovReport rep;
  double scale_est = 1.0;  // running magnitude of A on the explored subspace

  for (int j = 0; j < cfg.krylov_max; ++j) {
    Vec w = apply(basis[static_cast<std::size_t>(j)]);

    // Hermiticity tripwires: the projected matrix must be real symmetric.
    const cplx diag = dot(basis[static_cast<std::size_t>(j)], w);
    require(std::isfinite(diag.real()) && std::isfinite(diag.imag()),
            "krylov_expm: apply produced a non-finite value");
    require(std::abs(diag.imag()) <= 1e-8 * std::max(scale_est, std::abs(diag)),
            "krylov_expm: map is not Hermitian (complex diagonal)");
    if (j > 0) {
      const cplx sub = dot(basis[static_cast<std::size_t>(j - 1)], w);
      require(std::abs(sub - beta[static_cast<std::size_t>(j - 1)]) <=
                  1e-8 * std::max(scale_est, std::abs(sub)),
              "krylov_expm: map is not Hermitian (asymmetric couplings)");
    }
    alpha.push_back(diag.real());
    scale_est = std::max(scale_est, std::abs(diag));

    // Two Gram-Schmidt passes against the whole basis keep orthonormality at
    // roundoff level (this also removes the alpha/beta components).
    for (int pass = 0; pass < 2; ++pass)
      for (const Vec& q : basis) {
        const cplx c = dot(q, w);
        axpy(-c, q, w);
      }
    const double bj = norm(w);
    require(std::isfinite(bj), "krylov_expm: apply produced a non-finite value");

    const int m = j + 1;
    Eigen::MatrixXd tmat = Eigen::MatrixXd::Zero(m, m);
    for (int i = 0; i < m; ++i) tmat(i, i) = alpha[static_cast<std::size_t>(i)];
    for (int i = 0; i + 1 < m; ++i) {
      tmat(i, i + 1) = beta[static_cast<std::size_t>(i)];
      tmat(i + 1, i) = beta[static_cast<std::size_t>(i)];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(tmat);
    require(es.info() == Eigen::Success, "krylov_expm: tridiagonal eigensolve failed");
    const Eigen::VectorXcd phases =
        (expo * es.eigenvalues().array().cast<cplx>()).exp().matrix();
    const Eigen::VectorXcd e1_coef = es.eigenvectors().row(0).transpose().cast<cplx>();
    y = es.eigenvectors().cast<cplx>() * phases.cwiseProduct(e1_coef);

    rep.iterations = m;
    rep.residual = bj * std::abs(y(m - 1));
    if (bj <= 1e-13 * scale_est) {
      rep.breakdown = true;
      rep.converged = true;
      rep.residual = 0.0;
      break;
    }
    if (rep.residual <= cfg.krylov_tol) {
      rep.converged = true;
      break;
    }
    if (m == cfg.krylov_max) break;
    beta.push_back(bj);
    scale_est = std::max(scale_est, bj);
    scale(w, 1.0 / bj);
    basis.push_back(std::move(w));
  }

  Vec out = v;
  scale(out, cplx(0.0, 0.0));
  for (int i = 0; i < rep.iterations; ++i)
    axpy(beta0 * y(i), basis[static_cast<std::size_t>(i)], out);
  if (report) *report = rep;
  return out;
}

// --- sweep schedule ------------------------------------------------------------

enum class SweepActionKind { evolve_node, evolve_link, move_gauge };

struct SweepAction {
  SweepActionKind kind = SweepActionKind::evolve_node;
  int a = -1;           // node evolved, or source of a gauge move
  int b = -1;           // destination of a gauge move
  int link = -1;        // link id for evolve_link
  double weight = 0.0;  // fraction of dt (forward for nodes, backward for links)
};

// Palindromic depth-first sweep. The first phase visits every node once,
// evolving it forward by dt/2 and each bond backward by dt/2 on the way down;
// the second phase is the literal reversal of the first with every gauge move
// inverted. Per full sweep each node accumulates dt forward and each link dt
// backward, and the gauge center starts and ends at the root.
inline std::vector<SweepAction> make_schedule(const TreeTopology& topo) {
  std::vector<SweepAction> phase1;
  auto rec = [&](auto&& self, int n) -> void {
    phase1.push_back({SweepActionKind::evolve_node, n, -1, -1, 0.5});
    for (int c : topo.node(n).children) {
      if (c < 0) continue;
      const int link = topo.link_between(n, c);
      phase1.push_back({SweepActionKind::evolve_link, -1, -1, link, 0.5});
      phase1.push_back({SweepActionKind::move_gauge, n, c, link, 0.0});
      self(self, c);
      phase1.push_back({SweepActionKind::move_gauge, c, n, link, 0.0});
    }
  };
  rec(rec, topo.root());

  std::vector<SweepAction> out = phase1;
  out.reserve(2 * phase1.size());
  for (auto it = phase1.rbegin(); it != phase1.rend(); ++it) {
    SweepAction rev = *it;
    if (rev.kind == SweepActionKind::move_gauge) std::swap(rev.a, rev.b);
    out.push_back(rev);
  }
  return out;
}

namespace detail {

constexpr Leg kSweepTmp = Leg::aux(999'999'997);

// QR the gauge-center tensor at `a` against its leg toward `b`, leaving the
// isometric part at `a` and returning the bond factor with legs
// (link, kSweepTmp); kSweepTmp faces `b`. Rebuilds the environment block on
// that link pointing away from `a`, so apply_link is immediately valid.
inline Tensor detach_bond_factor(TtnState& s, EnvironmentCache& cache, int a, int b) {
  const TreeTopology& topo = s.topo();
  const int link = topo.link_between(a, b);
  const Leg L = Leg::link(link);
  Tensor ta = s.tensor(a);
  ta.rename_leg(L, kSweepTmp);
  std::vector<Leg> rows;
  for (const Leg& l : ta.legs())
    if (!(l == kSweepTmp)) rows.push_back(l);
  auto fac = factorize(ta, std::span<const Leg>(rows.data(), rows.size()), FactorizeMode::qr, L);
  s.set_tensor(a, std::move(fac.isometry), /*preserves_gauge=*/true);
  if (topo.node(a).parent == b)
    cache.refresh_down(link);
  else
    cache.refresh_up(link);
  return std::move(fac.remainder);
}

}  // namespace detail

// One full palindromic sweep of length cfg.dt. The state must be gauged at
// the root and `cache` must have been built on exactly this state and
// operator; both are updated in place. Node tensors are evolved by
// exp(-i*H_eff*w*dt), detached bond factors by exp(+i*Htilde*w*dt).
inline void tdvp_step(TtnState& s, const LocalSumOperator& op, EnvironmentCache& cache,
                      const TdvpConfig& cfg) {
  const TreeTopology& topo = s.topo();
  require(&cache.state() == &s && &cache.op() == &op,
          "tdvp_step: cache was built for a different state or operator");
  require(cfg.dt > 0.0, "tdvp_step: dt must be positive");
  require(s.center() == topo.root(), "tdvp_step: gauge center must start at the root");

  const std::vector<SweepAction> schedule = make_schedule(topo);
  for (const SweepAction& act : schedule) {
    switch (act.kind) {
      case SweepActionKind::evolve_node: {
        require(s.center() == act.a, "tdvp_step: schedule reached a node away from the center");
        KrylovReport rep;
        Tensor evolved = krylov_expm(
            [&](const Tensor& x) { return cache.apply_node(x, act.a); }, s.tensor(act.a),
            cplx(act.weight * cfg.dt, 0.0), cfg, &rep);
        require(rep.converged,
                "tdvp_step: node exponential did not converge within the Krylov budget");
        s.set_tensor(act.a, std::move(evolved), /*preserves_gauge=*/true);
        break;
      }
      case SweepActionKind::evolve_link: {
        const LinkInfo& li = topo.links[static_cast<std::size_t>(act.link)];
        const int a = s.center();
        require(a == li.lower || a == li.upper,
                "tdvp_step: bond evolution away from the gauge center");
        const int b = (a == li.lower) ? li.upper : li.lower;
        Tensor r = detail::detach_bond_factor(s, cache, a, b);
        // The factor's link leg faces `a`, kSweepTmp faces `b`.
        const Leg L = Leg::link(act.link);
        const Leg lower_leg = (a == li.lower) ? L : detail::kSweepTmp;
        const Leg upper_leg = (a == li.lower) ? detail::kSweepTmp : L;
        KrylovReport rep;
        Tensor evolved = krylov_expm(
            [&](const Tensor& x) { return cache.apply_link(act.link, x, lower_leg, upper_leg); },
            r, cplx(-act.weight * cfg.dt, 0.0), cfg, &rep);
        require(rep.converged,
                "tdvp_step: bond exponential did not converge within the Krylov budget");
        // Reabsorb into the isometric part left at `a`; the center stays put.
        Tensor na = contract(evolved, s.tensor(a), {{L, L}});
        na.rename_leg(detail::kSweepTmp, L);
        s.set_tensor(a, std::move(na), /*preserves_gauge=*/true);
        break;
      }
      case SweepActionKind::move_gauge: {
        require(s.center() == act.a, "tdvp_step: gauge move away from the center");
        Tensor r = detail::detach_bond_factor(s, cache, act.a, act.b);
        const Leg L = Leg::link(act.link);
        Tensor nb = contract(r, s.tensor(act.b), {{detail::kSweepTmp, L}});
        s.set_tensor(act.b, std::move(nb), /*preserves_gauge=*/true);
        s.set_center(act.b);
        break;
      }
    }
  }
  require(s.center() == topo.root(), "tdvp_step: sweep did not return the center to the root");

  if (cfg.renormalize) {
    Tensor root = s.tensor(topo.root());
    const double nrm = norm(root);
    require(nrm > 0.0, "tdvp_step: state norm collapsed to zero");
    scale(root, 1.0 / nrm);
    s.set_tensor(topo.root(), std::move(root), /*preserves_gauge=*/true);
  }
}

// Runs floor(t_max/dt) sweeps. `observe(state, step_index, time)` fires once
// before the first sweep (step 0) and after every `measure_stride`-th sweep;
// the final sweep is always reported. If a sweep throws and
// `failure_checkpoint` is non-empty, the last completed state is saved there
// before the error propagates.
template <typename Observer>
void evolve(TtnState& s, const LocalSumOperator& op, const TdvpConfig& cfg, Observer&& observe,
            CacheMode mode = CacheMode::collapsed, int measure_stride = 1,
            const std::string& failure_checkpoint = {}) {
  require(cfg.dt > 0.0, "evolve: dt must be positive");
  require(cfg.t_max >= 0.0, "evolve: t_max must be non-negative");
  require(cfg.t_max == 0.0 || cfg.dt <= cfg.t_max, "evolve: dt must not exceed t_max");
  require(measure_stride >= 1, "evolve: measure_stride must be positive");

  const int n_steps = static_cast<int>(std::floor(cfg.t_max / cfg.dt + 1e-9));
  s.move_center_to(s.topo().root());
  EnvironmentCache cache(s, op, mode);
  cache.build_all();

  observe(static_cast<const TtnState&>(s), 0, 0.0);
  for (int k = 1; k <= n_steps; ++k) {
    if (!failure_checkpoint.empty()) {
      const TtnState last_good = s;
      try {
        tdvp_step(s, op, cache, cfg);
      } catch (...) {
        save_state(failure_checkpoint, last_good, (k - 1) * cfg.dt);
        throw;
      }
    } else {
      tdvp_step(s, op, cache, cfg);
    }
    if (k % measure_stride == 0 || k == n_steps)
      observe(static_cast<const TtnState&>(s), k, k * cfg.dt);
  }
}

}  // namespace ttns
