#pragma once

// Tree tensor network state over a lattice bisection tree.
//
// Storage: one tensor per tree node, legs in canonical order —
//   leaf:     (phys(site), link(up))
//   internal: (link(child0), link(child1), link(up))
//   root:     (link(child0), link(child1))
// Link legs are labelled by link id, so the two endpoint tensors of a link
// share the label and contractions never need positional bookkeeping.
//
// Gauge: `center()` is the node all other tensors are isometric toward (-1 if
// unknown). Gauge moves are exact QR factorizations; they never change the
// represented state.
//
// Change tracking: every tensor write bumps a state-wide counter into the
// node's own stamp and the subtree stamps of all its ancestors. Environment
// caches compare their build stamps against these to detect staleness in
// O(depth) instead of O(nodes).

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ttns/common.hpp"
#include "ttns/tensor.hpp"
#include "ttns/topology.hpp"

namespace ttns {

inline Leg phys_leg(int site) { return Leg::phys(site); }

inline std::vector<Leg> canonical_legs(const TreeTopology& topo, int node_id) {
  const TreeNode& n = topo.node(node_id);
  std::vector<Leg> legs;
  if (n.is_leaf()) {
    legs = {Leg::phys(n.site), Leg::link(topo.link_above(node_id))};
  } else {
    legs = {Leg::link(topo.link_above(n.children[0])),
            Leg::link(topo.link_above(n.children[1]))};
    if (n.parent >= 0) legs.push_back(Leg::link(topo.link_above(node_id)));
  }
  return legs;
}

// 2^k saturating at size_t max (subtree site counts can exceed 63).
inline std::size_t bounded_pow2(int k) {
  if (k >= 63) return std::numeric_limits<std::size_t>::max();
  return std::size_t{1} << k;
}

// Largest admissible dimension of a link for a given target bond dimension:
// the Hilbert-space dimensions of the two sides of the cut bound it.
inline std::size_t link_dim_cap(const TreeTopology& topo, int link_id, std::size_t chi) {
  const int below = topo.sites_below(topo.links[static_cast<std::size_t>(link_id)].lower);
  const int above = topo.n_sites() - below;
  return std::min({chi, bounded_pow2(below), bounded_pow2(above)});
}

class TtnState {
public:
  TtnState() = default;

  explicit TtnState(std::shared_ptr<const TreeTopology> topo)
      : topo_(std::move(topo)),
        tensors_(static_cast<std::size_t>(topo_->n_nodes())),
        own_stamp_(static_cast<std::size_t>(topo_->n_nodes()), 0),
        subtree_stamp_(static_cast<std::size_t>(topo_->n_nodes()), 0) {}

  const TreeTopology& topo() const { return *topo_; }
  const std::shared_ptr<const TreeTopology>& topo_ptr() const { return topo_; }
  int n_nodes() const { return topo_->n_nodes(); }

  const Tensor& tensor(int node_id) const { return tensors_[static_cast<std::size_t>(node_id)]; }

  int center() const { return center_; }
  void set_center(int node_id) { center_ = node_id; }

  std::uint64_t own_stamp(int node_id) const {
    return own_stamp_[static_cast<std::size_t>(node_id)];
  }
  std::uint64_t subtree_stamp(int node_id) const {
    return subtree_stamp_[static_cast<std::size_t>(node_id)];
  }
  std::uint64_t stamp_counter() const { return counter_; }

  // Store a tensor (any leg order with exactly the canonical leg set; it is
  // permuted into canonical order). Invalidates the gauge center unless the
  // caller asserts it maintains the gauge itself.
  void set_tensor(int node_id, Tensor t, bool preserves_gauge = false) {
    const std::vector<Leg> want = canonical_legs(*topo_, node_id);
    require(t.rank() == static_cast<int>(want.size()),
            "set_tensor: wrong rank for node " + std::to_string(node_id));
    for (const Leg& l : want)
      require(t.has_leg(l), "set_tensor: node " + std::to_string(node_id) + " is missing leg " +
                                to_string(l));
    tensors_[static_cast<std::size_t>(node_id)] =
        permuted(t, std::span<const Leg>(want.data(), want.size()));
    if (!preserves_gauge) center_ = -1;
    bump(node_id);
  }

  std::size_t link_dim(int link_id) const {
    const LinkInfo& l = topo_->links[static_cast<std::size_t>(link_id)];
    return tensor(l.lower).dim(Leg::link(link_id));
  }

  // Full structural consistency check (leg sets, matching link dimensions).
  void validate() const {
    for (int n = 0; n < n_nodes(); ++n) {
      const std::vector<Leg> want = canonical_legs(*topo_, n);
      require(tensor(n).legs() == want, "validate: node " + std::to_string(n) +
                                            " does not hold canonical legs");
    }
    for (const LinkInfo& l : topo_->links)
      require(tensor(l.lower).dim(Leg::link(l.id)) == tensor(l.upper).dim(Leg::link(l.id)),
              "validate: link " + std::to_string(l.id) + " dimension mismatch");
  }

  // Exact single gauge step between adjacent nodes: QR the tensor at `a`
  // against its leg toward `b`, absorb the remainder into `b`.
  void gauge_step(int a, int b) {
    const int link_id = topo_->link_between(a, b);
    const Leg L = Leg::link(link_id);
    Tensor ta = tensors_[static_cast<std::size_t>(a)];
    ta.rename_leg(L, kGaugeTmp);
    std::vector<Leg> rows;
    for (const Leg& l : ta.legs())
      if (!(l == kGaugeTmp)) rows.push_back(l);
    const auto fac =
        factorize(ta, std::span<const Leg>(rows.data(), rows.size()), FactorizeMode::qr, L);
    const Tensor nb = contract(fac.remainder, tensors_[static_cast<std::size_t>(b)], {{kGaugeTmp, L}});
    set_tensor(a, fac.isometry, /*preserves_gauge=*/true);
    set_tensor(b, nb, /*preserves_gauge=*/true);
    center_ = b;
  }

  // Make every tensor isometric toward `target` (default root), by exact QR
  // sweeps. Works from any starting tensors; the represented state does not
  // change.
  void isometrize(int target = 0) {
    // Deepest-first pass pushes all weight to the root.
    std::vector<int> order(static_cast<std::size_t>(n_nodes()));
    for (int i = 0; i < n_nodes(); ++i) order[static_cast<std::size_t>(i)] = i;
    std::sort(order.begin(), order.end(), [&](int x, int y) {
      return topo_->node(x).depth > topo_->node(y).depth;
    });
    for (int n : order)
      if (n != topo_->root()) gauge_step(n, topo_->parent(n));
    center_ = topo_->root();
    move_center_to(target);
  }

  // Walk the gauge center along the tree path to `target`.
  void move_center_to(int target) {
    if (center_ < 0) {
      isometrize(target);
      return;
    }
    const std::vector<int> p = topo_->path(center_, target);
    for (std::size_t i = 0; i + 1 < p.size(); ++i) gauge_step(p[i], p[i + 1]);
    center_ = target;
  }

private:
  static constexpr Leg kGaugeTmp = Leg::aux(999'999'999);

  void bump(int node_id) {
    ++counter_;
    own_stamp_[static_cast<std::size_t>(node_id)] = counter_;
    for (int n = node_id; n >= 0; n = topo_->node(n).parent)
      subtree_stamp_[static_cast<std::size_t>(n)] = counter_;
  }

  std::shared_ptr<const TreeTopology> topo_;
  std::vector<Tensor> tensors_;
  std::vector<std::uint64_t> own_stamp_;
  std::vector<std::uint64_t> subtree_stamp_;
  std::uint64_t counter_ = 0;
  int center_ = -1;
};

// --- construction ------------------------------------------------------------

// Product state from per-site amplitudes (normalized per site), embedded with
// bond dimension min(chi_init, Hilbert bounds) per link: existing directions
// are kept exactly, new ones are orthonormal with zero amplitude, so the
// represented state is the product state regardless of chi_init.
inline TtnState product_state(std::shared_ptr<const TreeTopology> topo,
                              const std::vector<std::array<cplx, 2>>& site_amplitudes,
                              std::size_t chi_init = 1) {
  require(chi_init >= 1, "product_state: chi_init must be positive");
  require(static_cast<int>(site_amplitudes.size()) == topo->n_sites(),
          "product_state: need one amplitude pair per site");
  TtnState state(topo);
  const TreeTopology& t = *topo;

  for (int n = 0; n < t.n_nodes(); ++n) {
    const TreeNode& node = t.node(n);
    const std::vector<Leg> legs = canonical_legs(t, n);
    if (node.is_leaf()) {
      const auto& a = site_amplitudes[static_cast<std::size_t>(node.site)];
      const double nrm = std::sqrt(std::norm(a[0]) + std::norm(a[1]));
      require(nrm > 0.0, "product_state: zero amplitude at site " + std::to_string(node.site));
      Tensor leaf(legs, {2, 1});
      leaf.at({0, 0}) = a[0] / nrm;
      leaf.at({1, 0}) = a[1] / nrm;
      state.set_tensor(n, leaf, true);
    } else {
      std::vector<std::size_t> dims(legs.size(), 1);
      Tensor trivial(legs, dims);
      trivial[0] = cplx{1.0, 0.0};
      state.set_tensor(n, trivial, true);
    }
  }
  state.set_center(t.root());
  if (chi_init == 1) return state;

  // Pad links bottom-up. Each lower tensor is isometric toward its up leg;
  // extend it with orthonormal columns from the complement of its range and
  // zero-pad the parent on the same leg.
  std::vector<int> order;
  for (int n = 1; n < t.n_nodes(); ++n) order.push_back(n);
  std::sort(order.begin(), order.end(),
            [&](int x, int y) { return t.node(x).depth > t.node(y).depth; });
  for (int lower : order) {
    const int link_id = t.link_above(lower);
    const Leg L = Leg::link(link_id);
    const Tensor& tl = state.tensor(lower);
    const std::size_t d_old = tl.dim(L);
    std::size_t m = 1;
    for (const Leg& l : tl.legs())
      if (!(l == L)) m *= tl.dim(l);
    const std::size_t d_new = std::min(link_dim_cap(t, link_id, chi_init), m);
    if (d_new <= d_old) continue;

    // Matricize with L last (canonical order already has the up leg last).
    std::vector<Leg> order_legs;
    for (const Leg& l : tl.legs())
      if (!(l == L)) order_legs.push_back(l);
    std::vector<std::size_t> row_dims;
    for (const Leg& l : order_legs) row_dims.push_back(tl.dim(l));
    order_legs.push_back(L);
    const Tensor tp = permuted(tl, std::span<const Leg>(order_legs.data(), order_legs.size()));
    // Row-major (m x d_old) buffer = column-major (d_old x m) transposed.
    MatrixXc M = CMap(tp.data(), static_cast<Eigen::Index>(d_old), static_cast<Eigen::Index>(m))
                     .transpose();
    const MatrixXc proj = MatrixXc::Identity(static_cast<Eigen::Index>(m),
                                             static_cast<Eigen::Index>(m)) -
                          M * M.adjoint();
    Eigen::ColPivHouseholderQR<MatrixXc> qr(proj);
    const MatrixXc Q = qr.householderQ() * MatrixXc::Identity(static_cast<Eigen::Index>(m),
                                                              static_cast<Eigen::Index>(d_new - d_old));
    MatrixXc ext(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d_new));
    ext.leftCols(static_cast<Eigen::Index>(d_old)) = M;
    ext.rightCols(static_cast<Eigen::Index>(d_new - d_old)) = Q;

    std::vector<std::size_t> new_dims = row_dims;
    new_dims.push_back(d_new);
    Tensor nt(order_legs, new_dims);
    MMap(nt.data(), static_cast<Eigen::Index>(d_new), static_cast<Eigen::Index>(m)) =
        ext.transpose();
    state.set_tensor(lower, nt, true);

    const int upper = t.links[static_cast<std::size_t>(link_id)].upper;
    state.set_tensor(upper, state.tensor(upper).padded_leg(L, d_new), true);
  }
  state.set_center(t.root());
  return state;
}

inline TtnState random_state(std::shared_ptr<const TreeTopology> topo, std::size_t chi,
                             std::uint64_t seed) {
  TtnState state(topo);
  const TreeTopology& t = *topo;
  Rng rng(seed);
  for (int n = 0; n < t.n_nodes(); ++n) {
    const std::vector<Leg> legs = canonical_legs(t, n);
    std::vector<std::size_t> dims;
    for (const Leg& l : legs)
      dims.push_back(l.kind() == LegKind::phys
                         ? 2
                         : link_dim_cap(t, static_cast<int>(l.index()), chi));
    Tensor tn(legs, dims);
    fill_random_normal(tn, rng);
    state.set_tensor(n, tn, true);
  }
  state.isometrize(t.root());
  Tensor root = state.tensor(t.root());
  const double nrm = norm(root);
  require(nrm > 0.0, "random_state: degenerate draw");
  scale(root, cplx{1.0 / nrm, 0.0});
  state.set_tensor(t.root(), root, true);
  return state;
}

// --- global quantities ---------------------------------------------------------

// <a|b> for two states on the same topology (no gauge assumptions).
inline cplx overlap(const TtnState& a, const TtnState& b) {
  require(topology_fingerprint(a.topo()) == topology_fingerprint(b.topo()),
          "overlap: states live on different topologies");
  const TreeTopology& t = a.topo();
  // Bottom-up environments with the bra-side link relabelled to aux(link).
  auto bra_label = [](int link_id) { return Leg::aux(link_id); };
  std::vector<Tensor> env(static_cast<std::size_t>(t.n_nodes()));
  // Process deepest-first so children are ready before their parent.
  std::vector<int> order(static_cast<std::size_t>(t.n_nodes()));
  for (int i = 0; i < t.n_nodes(); ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(),
            [&](int x, int y) { return t.node(x).depth > t.node(y).depth; });
  cplx result{0.0, 0.0};
  for (int n : order) {
    const TreeNode& node = t.node(n);
    Tensor ket = b.tensor(n);
    if (!node.is_leaf()) {
      for (int c : {node.children[0], node.children[1]}) {
        const int l = t.link_above(c);
        ket = contract(env[static_cast<std::size_t>(c)], ket, {{Leg::link(l), Leg::link(l)}});
      }
    }
    Tensor bra = conj(a.tensor(n));
    std::vector<std::pair<Leg, Leg>> pairs;
    if (!node.is_leaf()) {
      for (int c : {node.children[0], node.children[1]}) {
        const int l = t.link_above(c);
        bra.rename_leg(Leg::link(l), bra_label(l));
        pairs.emplace_back(bra_label(l), bra_label(l));
      }
    } else {
      pairs.emplace_back(Leg::phys(node.site), Leg::phys(node.site));
    }
    if (node.parent >= 0) bra.rename_leg(Leg::link(t.link_above(n)), bra_label(t.link_above(n)));
    const Tensor e = contract(bra, ket, std::span<const std::pair<Leg, Leg>>(pairs.data(), pairs.size()));
    if (node.parent < 0) {
      result = e[0];
    } else {
      // e legs: (aux(up), link(up)); stored for the parent step.
      env[static_cast<std::size_t>(n)] = e;
    }
  }
  return result;
}

inline double norm_of(const TtnState& s) {
  if (s.center() >= 0) return norm(s.tensor(s.center()));
  return std::sqrt(std::abs(overlap(s, s)));
}

// Dense statevector psi[b] with site s stored in bit s (1 = second basis
// state). Guarded to small systems.
inline Eigen::VectorXcd to_statevector(const TtnState& s) {
  const TreeTopology& t = s.topo();
  const int N = t.n_sites();
  require(N <= 20, "to_statevector: refusing to build 2^" + std::to_string(N) + " amplitudes");

  // Recursive contraction; each call returns a tensor with the subtree's phys
  // legs plus the up link.
  auto rec = [&](auto&& self, int n) -> Tensor {
    const TreeNode& node = t.node(n);
    if (node.is_leaf()) return s.tensor(n);
    Tensor acc = s.tensor(n);
    for (int c : {node.children[0], node.children[1]}) {
      const int l = t.link_above(c);
      acc = contract(self(self, c), acc, {{Leg::link(l), Leg::link(l)}});
    }
    return acc;
  };
  Tensor full = rec(rec, t.root());
  // Order phys legs descending by site: row-major flattening then puts site s
  // at bit s.
  std::vector<Leg> order;
  for (int site = N - 1; site >= 0; --site) order.push_back(Leg::phys(site));
  full = permuted(full, std::span<const Leg>(order.data(), order.size()));
  Eigen::VectorXcd v(static_cast<Eigen::Index>(full.size()));
  std::copy(full.data(), full.data() + full.size(), v.data());
  return v;
}

// Schmidt values across a link (descending). The state must be normalized;
// the spectrum then satisfies sum sigma^2 = 1 up to roundoff. Works on a copy,
// so the input state (and any caches tied to its stamps) is untouched.
inline std::vector<double> schmidt_spectrum(const TtnState& s, int link_id) {
  require(std::abs(norm_of(s) - 1.0) < 1e-8, "schmidt_spectrum: state must be normalized");
  const TreeTopology& t = s.topo();
  require(link_id >= 0 && link_id < t.n_links(), "schmidt_spectrum: no such link");
  TtnState w = s;
  const int lower = t.links[static_cast<std::size_t>(link_id)].lower;
  w.move_center_to(lower);
  const Tensor& tc = w.tensor(lower);
  const Leg L = Leg::link(link_id);
  std::vector<Leg> rows;
  for (const Leg& l : tc.legs())
    if (!(l == L)) rows.push_back(l);
  const auto fac = factorize(tc, std::span<const Leg>(rows.data(), rows.size()),
                             FactorizeMode::svd, Leg::aux(999'999'998));
  return fac.singular_values;
}

// --- checkpointing ---------------------------------------------------------------
//
// Binary snapshot of all tensors plus the simulation time. Host-endian; the
// header carries a topology fingerprint so a checkpoint cannot be loaded onto
// a different tree.

namespace detail {

template <class T>
void put_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  require(static_cast<bool>(is), "checkpoint: truncated file");
  return v;
}

}  // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_state(const std::string& path, const TtnState& s, double time) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(os), "save_state: cannot open " + path);
  os.write("TTNS", 4);
  detail::put_pod(os, kCheckpointVersion);
  detail::put_pod(os, topology_fingerprint(s.topo()));
  detail::put_pod(os, time);
  detail::put_pod(os, static_cast<std::int32_t>(s.center()));
  detail::put_pod(os, static_cast<std::uint32_t>(s.n_nodes()));
  for (int n = 0; n < s.n_nodes(); ++n) {
    const Tensor& t = s.tensor(n);
    detail::put_pod(os, static_cast<std::uint32_t>(t.rank()));
    for (int k = 0; k < t.rank(); ++k) {
      detail::put_pod(os, t.legs()[static_cast<std::size_t>(k)].raw);
      detail::put_pod(os, static_cast<std::uint64_t>(t.dims()[static_cast<std::size_t>(k)]));
    }
    detail::put_pod(os, static_cast<std::uint64_t>(t.size()));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(cplx)));
  }
  require(static_cast<bool>(os), "save_state: write failed for " + path);
}

struct LoadedState {
  TtnState state;
  double time = 0.0;
};

inline LoadedState load_state(const std::string& path,
                              std::shared_ptr<const TreeTopology> topo) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), "load_state: cannot open " + path);
  char magic[4] = {};
  is.read(magic, 4);
  require(static_cast<bool>(is) && std::memcmp(magic, "TTNS", 4) == 0,
          "load_state: not a state checkpoint: " + path);
  const auto version = detail::get_pod<std::uint32_t>(is);
  require(version == kCheckpointVersion,
          "load_state: unsupported checkpoint version " + std::to_string(version));
  const auto fp = detail::get_pod<std::uint64_t>(is);
  require(fp == topology_fingerprint(*topo),
          "load_state: checkpoint was written for a different topology");
  LoadedState out{TtnState(topo), detail::get_pod<double>(is)};
  const auto center = detail::get_pod<std::int32_t>(is);
  const auto n_nodes = detail::get_pod<std::uint32_t>(is);
  require(n_nodes == static_cast<std::uint32_t>(topo->n_nodes()),
          "load_state: node count mismatch");
  for (std::uint32_t n = 0; n < n_nodes; ++n) {
    const auto rank = detail::get_pod<std::uint32_t>(is);
    std::vector<Leg> legs;
    std::vector<std::size_t> dims;
    for (std::uint32_t k = 0; k < rank; ++k) {
      legs.push_back(Leg{detail::get_pod<std::int64_t>(is)});
      dims.push_back(static_cast<std::size_t>(detail::get_pod<std::uint64_t>(is)));
    }
    Tensor t(legs, dims);
    const auto count = detail::get_pod<std::uint64_t>(is);
    require(count == t.size(), "load_state: tensor payload size mismatch");
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(count * sizeof(cplx)));
    require(static_cast<bool>(is), "load_state: truncated tensor payload");
    out.state.set_tensor(static_cast<int>(n), std::move(t), true);
  }
  out.state.set_center(center);
  return out;
}

// Newest write stamp among all tensors OUTSIDE the subtree of `node_id`:
// the staleness reference for blocks summarizing that complement region.
// O(depth): walks the root path, folding each ancestor's own stamp and each
// sibling subtree's stamp.
inline std::uint64_t complement_stamp(const TtnState& s, int node_id) {
  const TreeTopology& t = s.topo();
  std::uint64_t m = 0;
  for (int n = node_id; n != t.root();) {
    const int u = t.parent(n);
    m = std::max({m, s.own_stamp(u), s.subtree_stamp(t.sibling(n))});
    n = u;
  }
  return m;
}

// Worst isometry defect over all non-center tensors, each checked toward its
// center-pointing leg. Zero (to roundoff) iff the gauge invariant holds.
inline double gauge_defect(const TtnState& s) {
  require(s.center() >= 0, "gauge_defect: state has no gauge center");
  const TreeTopology& t = s.topo();
  double worst = 0.0;
  for (int n = 0; n < t.n_nodes(); ++n) {
    if (n == s.center()) continue;
    // Leg toward the center: down into the child whose subtree holds the
    // center, else up.
    Leg toward = Leg::link(0);
    const TreeNode& node = t.node(n);
    bool found = false;
    if (!node.is_leaf()) {
      for (int c : {node.children[0], node.children[1]}) {
        const std::vector<int> p = t.path(c, s.center());
        if (p.front() == c && (p.size() == 1 || p[1] != n)) {
          toward = Leg::link(t.link_above(c));
          found = true;
          break;
        }
      }
    }
    if (!found) {
      require(node.parent >= 0, "gauge_defect: root cannot point upward");
      toward = Leg::link(t.link_above(n));
    }
    worst = std::max(worst, isometry_defect(s.tensor(n), toward));
  }
  return worst;
}

}  // namespace ttns
