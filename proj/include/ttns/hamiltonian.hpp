#pragma once

// Local-sum operators (sums of few-site Pauli-string terms) and their
// tree-network environment machinery.
//
// Basis convention, pinned project-wide: the local basis diagonalizes the
// transverse component. sigma_x is diag(1, -1) (basis state 0 = +1), and
// sigma_z is the off-diagonal flip [[0,1],[1,0]]. The ferromagnetic model is
//   H = -J sum_<ss'> sx sx - g sum_s sz - h sum_s sx.
//
// Environment blocks: for every link, `down` blocks summarize the subtree
// below it and `up` blocks the complement, as matrices on the link index.
// Two bookkeeping modes:
//  * collapsed — terms fully inside a region are accumulated (with their
//    coefficients) into one block per region; only terms whose support
//    crosses the cut stay per-term. Coefficients are applied exactly once:
//    at the absorption event for collapsed content, at the final apply for
//    per-term content.
//  * naive — nothing is accumulated; every term is tracked per-term in every
//    region it touches. Same operator, more summands; kept as the
//    distributivity cross-check and the baseline for benchmarks.
//
// Freshness: every block records the state's write counter at build time and
// is validated against the stamps of the region it summarizes before use; a
// stale block raises StaleEnvironmentError rather than returning wrong data.

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ttns/common.hpp"
#include "ttns/state.hpp"
#include "ttns/tensor.hpp"
#include "ttns/topology.hpp"

namespace ttns {

inline Eigen::Matrix2cd sigma_x() {
  Eigen::Matrix2cd m;
  m << 1, 0, 0, -1;
  return m;
}

inline Eigen::Matrix2cd sigma_z() {
  Eigen::Matrix2cd m;
  m << 0, 1, 1, 0;
  return m;
}

inline Eigen::Matrix2cd identity2() { return Eigen::Matrix2cd::Identity(); }

struct LocalTerm {
  cplx coeff{0.0, 0.0};
  std::vector<std::pair<int, Eigen::Matrix2cd>> factors;  // sorted by site, distinct sites
};

class LocalSumOperator {
public:
  explicit LocalSumOperator(int n_sites) : n_sites_(n_sites) {
    require(n_sites_ > 0, "LocalSumOperator: need a positive site count");
  }

  void add_constant(double c) { constant_ += c; }

  void add_term(cplx coeff, std::vector<std::pair<int, Eigen::Matrix2cd>> factors) {
    if (factors.empty()) {
      require(std::abs(coeff.imag()) == 0.0, "add_term: constant terms must be real");
      constant_ += coeff.real();
      return;
    }
    std::sort(factors.begin(), factors.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t i = 0; i < factors.size(); ++i) {
      require(factors[i].first >= 0 && factors[i].first < n_sites_,
              "add_term: factor site out of range");
      if (i > 0)
        require(factors[i].first != factors[i - 1].first,
                "add_term: duplicate site in one term");
    }
    terms_.push_back(LocalTerm{coeff, std::move(factors)});
  }

  int n_sites() const { return n_sites_; }
  double constant() const { return constant_; }
  const std::vector<LocalTerm>& terms() const { return terms_; }
  int n_terms() const { return static_cast<int>(terms_.size()); }

  // Sufficient hermiticity check for the terms this engine evolves with:
  // real coefficients and Hermitian factors, term by term.
  void require_hermitian(double tol = 1e-12) const {
    for (const LocalTerm& t : terms_) {
      require(std::abs(t.coeff.imag()) <= tol,
              "require_hermitian: complex coefficient found");
      for (const auto& [site, op] : t.factors)
        require((op - op.adjoint()).cwiseAbs().maxCoeff() <= tol,
                "require_hermitian: non-Hermitian factor at site " + std::to_string(site));
    }
  }

private:
  int n_sites_ = 0;
  double constant_ = 0.0;
  std::vector<LocalTerm> terms_;
};

// H = -J sum_bonds sx sx - g sum_s sz - h sum_s sx (zero couplings omitted).
inline LocalSumOperator transverse_ising_operator(const LatticeSpec& lat, double J, double g,
                                                  double h) {
  LocalSumOperator op(lat.n_sites());
  if (J != 0.0)
    for (const auto& [s, sp] : lat.bonds)
      op.add_term(-J, {{s, sigma_x()}, {sp, sigma_x()}});
  for (int s = 0; s < lat.n_sites(); ++s) {
    if (g != 0.0) op.add_term(-g, {{s, sigma_z()}});
    if (h != 0.0) op.add_term(-h, {{s, sigma_x()}});
  }
  return op;
}

// Domain-wall count D = sum_bonds (1 - sx sx) / 2.
inline LocalSumOperator domain_wall_operator(const LatticeSpec& lat) {
  LocalSumOperator op(lat.n_sites());
  op.add_constant(0.5 * static_cast<double>(lat.bonds.size()));
  for (const auto& [s, sp] : lat.bonds)
    op.add_term(-0.5, {{s, sigma_x()}, {sp, sigma_x()}});
  return op;
}

// --- independent expectation route ------------------------------------------------
//
// <psi|O|psi> by one bottom-up sweep per term with the factors inserted at
// their leaves. Makes no use of gauge or caches, so it cross-checks both.

namespace detail {

inline cplx term_bracket(const TtnState& s, const LocalTerm& term) {
  const TreeTopology& t = s.topo();
  auto factor_at = [&](int site) -> const Eigen::Matrix2cd* {
    for (const auto& [fs, op] : term.factors)
      if (fs == site) return &op;
    return nullptr;
  };
  std::vector<Tensor> env(static_cast<std::size_t>(t.n_nodes()));
  std::vector<int> order(static_cast<std::size_t>(t.n_nodes()));
  for (int i = 0; i < t.n_nodes(); ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(),
            [&](int x, int y) { return t.node(x).depth > t.node(y).depth; });
  for (int n : order) {
    const TreeNode& node = t.node(n);
    Tensor ket = s.tensor(n);
    if (node.is_leaf()) {
      if (const auto* op = factor_at(node.site)) ket = apply_matrix(*op, ket, Leg::phys(node.site));
    } else {
      for (int c : {node.children[0], node.children[1]}) {
        const int l = t.link_above(c);
        ket = contract(env[static_cast<std::size_t>(c)], ket, {{Leg::link(l), Leg::link(l)}});
      }
    }
    Tensor bra = conj(s.tensor(n));
    std::vector<std::pair<Leg, Leg>> pairs;
    if (node.is_leaf()) {
      pairs.emplace_back(Leg::phys(node.site), Leg::phys(node.site));
    } else {
      for (int c : {node.children[0], node.children[1]}) {
        const int l = t.link_above(c);
        bra.rename_leg(Leg::link(l), Leg::aux(l));
        pairs.emplace_back(Leg::aux(l), Leg::aux(l));
      }
    }
    if (node.parent >= 0) {
      const int l = t.link_above(n);
      bra.rename_leg(Leg::link(l), Leg::aux(l));
    }
    Tensor e = contract(bra, ket, std::span<const std::pair<Leg, Leg>>(pairs.data(), pairs.size()));
    if (node.parent < 0) return e[0];
    env[static_cast<std::size_t>(n)] = std::move(e);
  }
  throw Error("term_bracket: unreachable");
}

}  // namespace detail

inline double expectation_value(const TtnState& s, const LocalSumOperator& op) {
  const double n2 = std::abs(overlap(s, s));
  require(n2 > 0.0, "expectation_value: state has zero norm");
  cplx acc{0.0, 0.0};
  for (const LocalTerm& term : op.terms()) acc += term.coeff * detail::term_bracket(s, term);
  const double value = acc.real() / n2 + op.constant();
  require(std::abs(acc.imag()) / n2 <= 1e-9 * (1.0 + std::abs(value)),
          "expectation_value: non-real expectation of a Hermitian operator");
  return value;
}

// --- collapse plan -----------------------------------------------------------------
//
// Pure topology-times-operator bookkeeping (no tensor data): which terms stay
// per-term at which links and nodes, and where terms are absorbed into the
// accumulated blocks.

enum class CacheMode { collapsed, naive };

inline std::string to_string(CacheMode m) {
  return m == CacheMode::collapsed ? "collapsed" : "naive";
}

struct NodeTermEntry {
  int term = -1;
  std::uint32_t touch_mask = 0;  // bit k = canonical leg position k participates
};

class CollapsePlan {
public:
  CollapsePlan() = default;

  CollapsePlan(const TreeTopology& topo, const LocalSumOperator& op, CacheMode mode)
      : mode_(mode) {
    require(topo.n_sites() == op.n_sites(),
            "CollapsePlan: operator and topology site counts differ");
    const int n_nodes = topo.n_nodes();
    const int n_links = topo.n_links();
    const auto& terms = op.terms();

    node_terms_.resize(static_cast<std::size_t>(n_nodes));
    down_terms_.resize(static_cast<std::size_t>(n_links));
    up_terms_.resize(static_cast<std::size_t>(n_links));
    absorbed_down_at_.resize(static_cast<std::size_t>(n_nodes));
    absorbed_up_at_.resize(static_cast<std::size_t>(n_links));
    leaf_single_.assign(static_cast<std::size_t>(topo.n_sites()),
                        Eigen::Matrix2cd::Zero());
    leaf_single_present_.assign(static_cast<std::size_t>(topo.n_sites()), false);

    for (int ti = 0; ti < static_cast<int>(terms.size()); ++ti) {
      const LocalTerm& term = terms[static_cast<std::size_t>(ti)];
      const int support = static_cast<int>(term.factors.size());
      auto sites_inside = [&](int node) {
        int c = 0;
        for (const auto& [s, m] : term.factors) c += topo.site_in_subtree(node, s) ? 1 : 0;
        return c;
      };

      // Absorption events (collapsed mode only).
      if (mode_ == CacheMode::collapsed) {
        // Lowest node whose subtree holds the whole support.
        int lca = topo.leaf_of_site[static_cast<std::size_t>(term.factors[0].first)];
        while (sites_inside(lca) < support) lca = topo.parent(lca);
        if (topo.is_leaf(lca)) {
          leaf_single_[static_cast<std::size_t>(term.factors[0].first)] +=
              term.coeff * term.factors[0].second;
          leaf_single_present_[static_cast<std::size_t>(term.factors[0].first)] = true;
        } else {
          absorbed_down_at_[static_cast<std::size_t>(lca)].push_back(ti);
        }
      }

      // Per-link populations.
      for (int l = 0; l < n_links; ++l) {
        const int below = sites_inside(topo.links[static_cast<std::size_t>(l)].lower);
        const bool strict = below > 0 && below < support;
        if (mode_ == CacheMode::collapsed) {
          if (strict) {
            down_terms_[static_cast<std::size_t>(l)].push_back(ti);
            up_terms_[static_cast<std::size_t>(l)].push_back(ti);
          }
        } else {
          if (below > 0) down_terms_[static_cast<std::size_t>(l)].push_back(ti);
          if (below < support) up_terms_[static_cast<std::size_t>(l)].push_back(ti);
        }
      }

      // Up-side absorption: term's support is disjoint from below(l) but
      // still split by the upper node's other two directions.
      if (mode_ == CacheMode::collapsed) {
        for (int l = 0; l < n_links; ++l) {
          const LinkInfo& li = topo.links[static_cast<std::size_t>(l)];
          if (li.upper == topo.root()) continue;
          if (sites_inside(li.lower) != 0) continue;
          const int sib = topo.sibling(li.lower);
          const int in_sib = sites_inside(sib);
          if (in_sib > 0 && in_sib < support)
            absorbed_up_at_[static_cast<std::size_t>(l)].push_back(ti);
        }
      }

      // Per-node populations with direction masks.
      for (int n = 0; n < n_nodes; ++n) {
        const TreeNode& node = topo.node(n);
        std::uint32_t mask = 0;
        int touched = 0;
        if (node.is_leaf()) {
          const bool at_site = sites_inside(n) > 0;
          if (at_site) {
            mask |= 1u;
            ++touched;
          }
          if (support - (at_site ? 1 : 0) > 0) {
            mask |= 2u;
            ++touched;
          }
        } else {
          const int in0 = sites_inside(node.children[0]);
          const int in1 = sites_inside(node.children[1]);
          if (in0 > 0) {
            mask |= 1u;
            ++touched;
          }
          if (in1 > 0) {
            mask |= 2u;
            ++touched;
          }
          if (node.parent >= 0 && support - in0 - in1 > 0) {
            mask |= 4u;
            ++touched;
          }
        }
        const bool keep = mode_ == CacheMode::collapsed ? touched >= 2 : touched >= 1;
        if (keep)
          node_terms_[static_cast<std::size_t>(n)].push_back(NodeTermEntry{ti, mask});
      }
    }
  }

  CacheMode mode() const { return mode_; }
  const std::vector<NodeTermEntry>& node_terms(int node) const {
    return node_terms_[static_cast<std::size_t>(node)];
  }
  const std::vector<int>& down_terms(int link) const {
    return down_terms_[static_cast<std::size_t>(link)];
  }
  const std::vector<int>& up_terms(int link) const {
    return up_terms_[static_cast<std::size_t>(link)];
  }
  const std::vector<int>& absorbed_down_at(int node) const {
    return absorbed_down_at_[static_cast<std::size_t>(node)];
  }
  const std::vector<int>& absorbed_up_at(int link) const {
    return absorbed_up_at_[static_cast<std::size_t>(link)];
  }
  bool leaf_single_present(int site) const {
    return leaf_single_present_[static_cast<std::size_t>(site)];
  }
  const Eigen::Matrix2cd& leaf_single(int site) const {
    return leaf_single_[static_cast<std::size_t>(site)];
  }

private:
  CacheMode mode_ = CacheMode::collapsed;
  std::vector<std::vector<NodeTermEntry>> node_terms_;
  std::vector<std::vector<int>> down_terms_, up_terms_;
  std::vector<std::vector<int>> absorbed_down_at_;
  std::vector<std::vector<int>> absorbed_up_at_;
  std::vector<Eigen::Matrix2cd> leaf_single_;
  std::vector<char> leaf_single_present_;
};

// --- environment cache -------------------------------------------------------------

class EnvironmentCache {
public:
  EnvironmentCache(const TtnState& state, const LocalSumOperator& op,
                   CacheMode mode = CacheMode::collapsed)
      : state_(&state), op_(&op), plan_(state.topo(), op, mode) {
    op.require_hermitian();
    down_.resize(static_cast<std::size_t>(state.topo().n_links()));
    up_.resize(static_cast<std::size_t>(state.topo().n_links()));
  }

  const CollapsePlan& plan() const { return plan_; }
  CacheMode mode() const { return plan_.mode(); }
  const TtnState& state() const { return *state_; }
  const LocalSumOperator& op() const { return *op_; }

  // --- freshness ---------------------------------------------------------------

  bool down_fresh(int link) const {
    const LinkBlocks& b = down_[static_cast<std::size_t>(link)];
    return b.built &&
           b.built_at >= state_->subtree_stamp(state_->topo().links[static_cast<std::size_t>(link)].lower);
  }

  bool up_fresh(int link) const {
    const LinkBlocks& b = up_[static_cast<std::size_t>(link)];
    return b.built &&
           b.built_at >= complement_stamp(*state_, state_->topo().links[static_cast<std::size_t>(link)].lower);
  }

  // --- building ----------------------------------------------------------------

  // Recompute the blocks below `link` from the lower node's tensor and its
  // children's (fresh) down blocks.
  void refresh_down(int link) {
    const TreeTopology& t = state_->topo();
    const int v = t.links[static_cast<std::size_t>(link)].lower;
    const Tensor& T = state_->tensor(v);
    const Leg out_leg = Leg::link(link);
    LinkBlocks nb;
    nb.built = true;
    nb.built_at = state_->stamp_counter();

    if (t.is_leaf(v)) {
      const int site = t.node(v).site;
      const Leg p = Leg::phys(site);
      if (plan_.mode() == CacheMode::collapsed && plan_.leaf_single_present(site))
        nb.collapsed = sandwich(T, apply_matrix(plan_.leaf_single(site), T, p), out_leg);
      for (int ti : plan_.down_terms(link)) {
        const Eigen::Matrix2cd* op = factor_of(ti, site);
        require(op != nullptr, "refresh_down: leaf term without a factor at its own site");
        nb.per_term.emplace(ti, sandwich(T, apply_matrix(*op, T, p), out_leg));
      }
    } else {
      const int c0 = t.node(v).children[0], c1 = t.node(v).children[1];
      const int l0 = t.link_above(c0), l1 = t.link_above(c1);
      for (int lc : {l0, l1})
        if (!down_fresh(lc))
          throw StaleEnvironmentError("refresh_down(" + std::to_string(link) +
                                      "): ingredient below link " + std::to_string(lc) +
                                      " is stale");
      const LinkBlocks& b0 = down_[static_cast<std::size_t>(l0)];
      const LinkBlocks& b1 = down_[static_cast<std::size_t>(l1)];

      Tensor acc = zeros_like(T);
      bool any = false;
      if (b0.collapsed.size() > 0) {
        accumulate_apply_matrix(acc, 1.0, b0.collapsed, T, Leg::link(l0));
        any = true;
      }
      if (b1.collapsed.size() > 0) {
        accumulate_apply_matrix(acc, 1.0, b1.collapsed, T, Leg::link(l1));
        any = true;
      }
      for (int ti : plan_.absorbed_down_at(v)) {
        Tensor y = apply_matrix(b0.per_term.at(ti), T, Leg::link(l0));
        y = apply_matrix(b1.per_term.at(ti), y, Leg::link(l1));
        axpy(op_->terms()[static_cast<std::size_t>(ti)].coeff, y, acc);
        any = true;
      }
      if (any) nb.collapsed = sandwich(T, acc, out_leg);

      for (int ti : plan_.down_terms(link)) {
        Tensor y = T;
        const auto it0 = b0.per_term.find(ti);
        if (it0 != b0.per_term.end()) y = apply_matrix(it0->second, y, Leg::link(l0));
        const auto it1 = b1.per_term.find(ti);
        if (it1 != b1.per_term.end()) y = apply_matrix(it1->second, y, Leg::link(l1));
        nb.per_term.emplace(ti, sandwich(T, y, out_leg));
      }
    }
    down_[static_cast<std::size_t>(link)] = std::move(nb);
  }

  // Recompute the blocks above `link` from the upper node's tensor, the
  // sibling's down blocks, and (below the root) the parent's up blocks.
  void refresh_up(int link) {
    const TreeTopology& t = state_->topo();
    const LinkInfo& li = t.links[static_cast<std::size_t>(link)];
    const int u = li.upper;
    const int v = li.lower;
    const int sib = t.sibling(v);
    const int lsib = t.link_above(sib);
    const Tensor& T = state_->tensor(u);
    const Leg out_leg = Leg::link(link);
    LinkBlocks nb;
    nb.built = true;
    nb.built_at = state_->stamp_counter();

    if (!down_fresh(lsib))
      throw StaleEnvironmentError("refresh_up(" + std::to_string(link) +
                                  "): sibling blocks below link " + std::to_string(lsib) +
                                  " are stale");
    const LinkBlocks& bs = down_[static_cast<std::size_t>(lsib)];
    const LinkBlocks* bu = nullptr;
    int lup = -1;
    if (u != t.root()) {
      lup = t.link_above(u);
      if (!up_fresh(lup))
        throw StaleEnvironmentError("refresh_up(" + std::to_string(link) +
                                    "): parent blocks above link " + std::to_string(lup) +
                                    " are stale");
      bu = &up_[static_cast<std::size_t>(lup)];
    }

    Tensor acc = zeros_like(T);
    bool any = false;
    if (bs.collapsed.size() > 0) {
      accumulate_apply_matrix(acc, 1.0, bs.collapsed, T, Leg::link(lsib));
      any = true;
    }
    if (bu != nullptr && bu->collapsed.size() > 0) {
      accumulate_apply_matrix(acc, 1.0, bu->collapsed, T, Leg::link(lup));
      any = true;
    }
    for (int ti : plan_.absorbed_up_at(link)) {
      Tensor y = apply_matrix(bs.per_term.at(ti), T, Leg::link(lsib));
      y = apply_matrix(bu->per_term.at(ti), y, Leg::link(lup));
      axpy(op_->terms()[static_cast<std::size_t>(ti)].coeff, y, acc);
      any = true;
    }
    if (any) nb.collapsed = sandwich(T, acc, out_leg);

    for (int ti : plan_.up_terms(link)) {
      Tensor y = T;
      const auto its = bs.per_term.find(ti);
      if (its != bs.per_term.end()) y = apply_matrix(its->second, y, Leg::link(lsib));
      if (bu != nullptr) {
        const auto itu = bu->per_term.find(ti);
        if (itu != bu->per_term.end()) y = apply_matrix(itu->second, y, Leg::link(lup));
      }
      nb.per_term.emplace(ti, sandwich(T, y, out_leg));
    }
    up_[static_cast<std::size_t>(link)] = std::move(nb);
  }

  // Build everything: down blocks leaves-first, then up blocks root-first.
  void build_all() {
    const TreeTopology& t = state_->topo();
    std::vector<int> links(static_cast<std::size_t>(t.n_links()));
    for (int l = 0; l < t.n_links(); ++l) links[static_cast<std::size_t>(l)] = l;
    std::sort(links.begin(), links.end(), [&](int a, int b) {
      return t.node(t.links[static_cast<std::size_t>(a)].lower).depth >
             t.node(t.links[static_cast<std::size_t>(b)].lower).depth;
    });
    for (int l : links) refresh_down(l);
    for (auto it = links.rbegin(); it != links.rend(); ++it) refresh_up(*it);
  }

  // --- application -------------------------------------------------------------

  // H_eff x at a node: the full operator with every other tensor projected in.
  Tensor apply_node(const Tensor& x, int node) const {
    const TreeTopology& t = state_->topo();
    check_node_fresh(node);
    const std::vector<Leg> legs = canonical_legs(t, node);
    require(x.legs() == legs, "apply_node: tensor is not in canonical leg order for node " +
                                  std::to_string(node));
    const TreeNode& nd = t.node(node);

    Tensor out = zeros_like(x);
    if (op_->constant() != 0.0) axpy(op_->constant(), x, out);
    for (std::size_t k = 0; k < legs.size(); ++k) {
      const MatrixXc* B = collapsed_for(node, static_cast<int>(k));
      if (B != nullptr && B->size() > 0) accumulate_apply_matrix(out, 1.0, *B, x, legs[k]);
    }
    for (const NodeTermEntry& e : plan_.node_terms(node)) {
      Tensor y = x;
      for (std::size_t k = 0; k < legs.size(); ++k) {
        if ((e.touch_mask & (1u << k)) == 0) continue;
        if (nd.is_leaf() && k == 0) {
          const Eigen::Matrix2cd* f = factor_of(e.term, nd.site);
          y = apply_matrix(*f, y, legs[k]);
        } else {
          y = apply_matrix(per_term_for(node, static_cast<int>(k), e.term), y, legs[k]);
        }
      }
      axpy(op_->terms()[static_cast<std::size_t>(e.term)].coeff, y, out);
    }
    return out;
  }

  // H~ R at a link: both sides of the cut projected in. `lower_leg` is R's leg
  // facing the subtree below the link, `upper_leg` the complement.
  Tensor apply_link(int link, const Tensor& R, Leg lower_leg, Leg upper_leg) const {
    if (!down_fresh(link))
      throw StaleEnvironmentError("apply_link: blocks below link " + std::to_string(link) +
                                  " are stale");
    if (!up_fresh(link))
      throw StaleEnvironmentError("apply_link: blocks above link " + std::to_string(link) +
                                  " are stale");
    const LinkBlocks& bd = down_[static_cast<std::size_t>(link)];
    const LinkBlocks& bup = up_[static_cast<std::size_t>(link)];

    Tensor out = zeros_like(R);
    if (op_->constant() != 0.0) axpy(op_->constant(), R, out);
    if (bd.collapsed.size() > 0) accumulate_apply_matrix(out, 1.0, bd.collapsed, R, lower_leg);
    if (bup.collapsed.size() > 0) accumulate_apply_matrix(out, 1.0, bup.collapsed, R, upper_leg);
    for (int ti = 0; ti < op_->n_terms(); ++ti) {
      const auto itd = bd.per_term.find(ti);
      const auto itu = bup.per_term.find(ti);
      if (itd == bd.per_term.end() && itu == bup.per_term.end()) continue;
      Tensor y = R;
      if (itd != bd.per_term.end()) y = apply_matrix(itd->second, y, lower_leg);
      if (itu != bup.per_term.end()) y = apply_matrix(itu->second, y, upper_leg);
      axpy(op_->terms()[static_cast<std::size_t>(ti)].coeff, y, out);
    }
    return out;
  }

  // <x|H_eff|x> at a node (the total energy when x is the center tensor).
  double node_expectation(const Tensor& x, int node) const {
    const cplx e = dot(x, apply_node(x, node));
    require(std::abs(e.imag()) <= 1e-9 * (1.0 + std::abs(e.real())),
            "node_expectation: non-real energy");
    return e.real();
  }

  // Number of block applications one apply_node(·, node) performs; the
  // workload metric compared across modes.
  std::size_t node_summand_count(int node) const {
    const TreeTopology& t = state_->topo();
    const std::vector<Leg> legs = canonical_legs(t, node);
    std::size_t count = 0;
    for (std::size_t k = 0; k < legs.size(); ++k) {
      const MatrixXc* B = collapsed_for(node, static_cast<int>(k));
      if (B != nullptr && B->size() > 0) ++count;
    }
    for (const NodeTermEntry& e : plan_.node_terms(node)) {
      for (std::size_t k = 0; k < legs.size(); ++k)
        if (e.touch_mask & (1u << k)) ++count;
    }
    return count;
  }

private:
  struct LinkBlocks {
    bool built = false;
    std::uint64_t built_at = 0;
    MatrixXc collapsed;  // 0x0 when the region contributes no complete terms
    std::unordered_map<int, MatrixXc> per_term;
  };

  const Eigen::Matrix2cd* factor_of(int term, int site) const {
    for (const auto& [s, m] : op_->terms()[static_cast<std::size_t>(term)].factors)
      if (s == site) return &m;
    return nullptr;
  }

  void check_node_fresh(int node) const {
    const TreeTopology& t = state_->topo();
    const TreeNode& nd = t.node(node);
    if (!nd.is_leaf())
      for (int c : {nd.children[0], nd.children[1]})
        if (!down_fresh(t.link_above(c)))
          throw StaleEnvironmentError("apply_node(" + std::to_string(node) +
                                      "): blocks below link " +
                                      std::to_string(t.link_above(c)) + " are stale");
    if (nd.parent >= 0 && !up_fresh(t.link_above(node)))
      throw StaleEnvironmentError("apply_node(" + std::to_string(node) +
                                  "): blocks above link " +
                                  std::to_string(t.link_above(node)) + " are stale");
  }

  // Collapsed block on canonical leg position k of `node` (nullptr if that
  // direction has none; the leaf single-site matrix is materialized lazily).
  const MatrixXc* collapsed_for(int node, int k) const {
    const TreeTopology& t = state_->topo();
    const TreeNode& nd = t.node(node);
    if (nd.is_leaf()) {
      if (k == 0) {
        if (plan_.mode() != CacheMode::collapsed || !plan_.leaf_single_present(nd.site))
          return nullptr;
        leaf_single_scratch_ = plan_.leaf_single(nd.site);
        return &leaf_single_scratch_;
      }
      return &up_[static_cast<std::size_t>(t.link_above(node))].collapsed;
    }
    if (k < 2) return &down_[static_cast<std::size_t>(t.link_above(nd.children[k]))].collapsed;
    return &up_[static_cast<std::size_t>(t.link_above(node))].collapsed;
  }

  const MatrixXc& per_term_for(int node, int k, int term) const {
    const TreeTopology& t = state_->topo();
    const TreeNode& nd = t.node(node);
    if (!nd.is_leaf() && k < 2)
      return down_[static_cast<std::size_t>(t.link_above(nd.children[k]))].per_term.at(term);
    return up_[static_cast<std::size_t>(t.link_above(node))].per_term.at(term);
  }

  const TtnState* state_;
  const LocalSumOperator* op_;
  CollapsePlan plan_;
  std::vector<LinkBlocks> down_, up_;
  mutable MatrixXc leaf_single_scratch_;
};

}  // namespace ttns
