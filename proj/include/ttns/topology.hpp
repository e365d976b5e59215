#pragma once

// Lattice and binary-tree topology.
//
// The square lattice is row-major: site(x, y) = y * Lx + x, open boundaries.
// The tree is built by recursive spatial bisection of the lattice rectangle.
// Every node owns a rectangle; internal nodes split theirs into two halves
// (child 0 = lower coordinates), leaves own a single site. Split axis rule:
// equal sides alternate with depth (orientation picks the starting axis),
// unequal sides split the longer axis so subtrees stay balanced.
//
// Node ids are assigned in pre-order (root = 0). Every non-root node has
// exactly one link to its parent, with link id = node id - 1.

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ttns/common.hpp"

namespace ttns {

struct LatticeSpec {
  int Lx = 0;
  int Ly = 0;
  std::vector<std::pair<int, int>> bonds;  // nearest-neighbour pairs (s, s'), s < s'

  int n_sites() const { return Lx * Ly; }
  int site(int x, int y) const { return y * Lx + x; }
  std::pair<int, int> coords(int s) const { return {s % Lx, s / Lx}; }
};

// Nearest-neighbour bonds in deterministic row-major order: for each site,
// first the +x bond, then the +y bond (when they exist).
inline LatticeSpec build_lattice(int Lx, int Ly) {
  require(Lx >= 1 && Ly >= 1, "build_lattice: lattice sides must be positive");
  LatticeSpec lat;
  lat.Lx = Lx;
  lat.Ly = Ly;
  for (int y = 0; y < Ly; ++y) {
    for (int x = 0; x < Lx; ++x) {
      const int s = lat.site(x, y);
      if (x + 1 < Lx) lat.bonds.emplace_back(s, lat.site(x + 1, y));
      if (y + 1 < Ly) lat.bonds.emplace_back(s, lat.site(x, y + 1));
    }
  }
  return lat;
}

enum class Orientation { standard, rotated90 };

inline std::string to_string(Orientation o) {
  return o == Orientation::standard ? "standard" : "rotated90";
}

inline Orientation orientation_from_string(const std::string& s) {
  if (s == "standard") return Orientation::standard;
  if (s == "rotated90") return Orientation::rotated90;
  throw Error("orientation_from_string: unknown orientation '" + s + "'");
}

struct Rect {
  int x0 = 0, y0 = 0, w = 0, h = 0;
  bool contains(int x, int y) const { return x >= x0 && x < x0 + w && y >= y0 && y < y0 + h; }
  friend bool operator==(const Rect&, const Rect&) = default;
};

struct TreeNode {
  int id = -1;
  int parent = -1;                     // -1 for the root
  std::array<int, 2> children{-1, -1}; // {-1,-1} for leaves
  int depth = 0;                       // edges from the root
  int layer = 0;                       // leaves = 1, root = log2(N) + 1
  int site = -1;                       // lattice site for leaves, -1 otherwise
  Rect rect;                           // lattice rectangle owned by the subtree

  bool is_leaf() const { return children[0] < 0; }
};

struct LinkInfo {
  int id = -1;
  int lower = -1;  // node farther from the root
  int upper = -1;  // its parent
};

struct TreeTopology {
  int Lx = 0, Ly = 0;
  Orientation orientation = Orientation::standard;
  std::vector<TreeNode> nodes;  // indexed by id, pre-order
  std::vector<LinkInfo> links;  // indexed by id = lower node id - 1
  std::vector<int> leaf_of_site;

  int n_sites() const { return Lx * Ly; }
  int n_nodes() const { return static_cast<int>(nodes.size()); }
  int n_links() const { return static_cast<int>(links.size()); }
  int root() const { return 0; }
  int total_depth() const { return nodes.empty() ? 0 : nodes[leaf_of_site[0]].depth; }

  const TreeNode& node(int id) const { return nodes[static_cast<std::size_t>(id)]; }
  bool is_leaf(int id) const { return node(id).is_leaf(); }
  int parent(int id) const { return node(id).parent; }

  int link_above(int node_id) const {
    require(node_id != root(), "link_above: the root has no upper link");
    return node_id - 1;
  }
  int link_between(int a, int b) const {
    if (node(a).parent == b) return link_above(a);
    if (node(b).parent == a) return link_above(b);
    throw Error("link_between: nodes " + std::to_string(a) + " and " + std::to_string(b) +
                " are not adjacent");
  }

  int sites_below(int node_id) const {
    const Rect& r = node(node_id).rect;
    return r.w * r.h;
  }

  int sibling(int id) const {
    const int p = node(id).parent;
    require(p >= 0, "sibling: the root has no sibling");
    const TreeNode& pn = node(p);
    return pn.children[0] == id ? pn.children[1] : pn.children[0];
  }

  // Tree neighbours (parent first if present, then children).
  std::vector<int> neighbors(int id) const {
    std::vector<int> out;
    const TreeNode& n = node(id);
    if (n.parent >= 0) out.push_back(n.parent);
    if (!n.is_leaf()) {
      out.push_back(n.children[0]);
      out.push_back(n.children[1]);
    }
    return out;
  }

  // Sites of the subtree rooted at `id`, ascending.
  std::vector<int> subtree_sites(int id) const {
    const Rect& r = node(id).rect;
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(r.w) * static_cast<std::size_t>(r.h));
    for (int y = r.y0; y < r.y0 + r.h; ++y)
      for (int x = r.x0; x < r.x0 + r.w; ++x) out.push_back(y * Lx + x);
    return out;
  }

  bool site_in_subtree(int node_id, int site) const {
    const Rect& r = node(node_id).rect;
    const int x = site % Lx, y = site / Lx;
    return r.contains(x, y);
  }

  // Leaf sites in tree order (in-order traversal, child 0 before child 1).
  std::vector<int> leaves_inorder() const {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(n_sites()));
    std::vector<int> stack{root()};
    while (!stack.empty()) {
      const int id = stack.back();
      stack.pop_back();
      const TreeNode& n = node(id);
      if (n.is_leaf()) {
        out.push_back(n.site);
      } else {
        stack.push_back(n.children[1]);
        stack.push_back(n.children[0]);
      }
    }
    return out;
  }

  // Unique tree path a -> b, inclusive.
  std::vector<int> path(int a, int b) const {
    std::vector<int> up_a, up_b;
    for (int n = a; n >= 0; n = node(n).parent) up_a.push_back(n);
    for (int n = b; n >= 0; n = node(n).parent) up_b.push_back(n);
    // Trim the shared tail above the meeting node.
    int ia = static_cast<int>(up_a.size()) - 1, ib = static_cast<int>(up_b.size()) - 1;
    while (ia > 0 && ib > 0 && up_a[ia - 1] == up_b[ib - 1]) {
      --ia;
      --ib;
    }
    std::vector<int> out(up_a.begin(), up_a.begin() + ia);
    out.push_back(up_a[ia]);  // the meeting node
    for (int i = ib - 1; i >= 0; --i) out.push_back(up_b[i]);
    return out;
  }
};

// Content hash of the tree structure (shape, orientation, wiring). Used to
// refuse loading checkpoints against a different topology.
inline std::uint64_t topology_fingerprint(const TreeTopology& t) {
  std::vector<std::int64_t> fields{t.Lx, t.Ly, static_cast<std::int64_t>(t.orientation)};
  for (const TreeNode& n : t.nodes) {
    fields.push_back(n.parent);
    fields.push_back(n.children[0]);
    fields.push_back(n.children[1]);
    fields.push_back(n.site);
  }
  return fnv1a64(fields.data(), fields.size() * sizeof(std::int64_t));
}

namespace detail {

inline bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

inline int int_log2(int v) {
  int k = 0;
  while ((1 << k) < v) ++k;
  return k;
}

inline int build_tree_rec(TreeTopology& topo, Rect rect, int depth, int parent) {
  const int id = topo.n_nodes();
  topo.nodes.push_back({});
  TreeNode& n = topo.nodes.back();
  n.id = id;
  n.parent = parent;
  n.depth = depth;
  n.rect = rect;
  if (rect.w == 1 && rect.h == 1) {
    n.site = rect.y0 * topo.Lx + rect.x0;
    return id;
  }
  // Split axis: alternate on squares, otherwise halve the longer side.
  bool split_x;
  if (rect.w == rect.h) {
    const int phase = topo.orientation == Orientation::rotated90 ? 1 : 0;
    split_x = ((depth + phase) % 2) == 0;
  } else {
    split_x = rect.w > rect.h;
  }
  Rect lo = rect, hi = rect;
  if (split_x) {
    lo.w = rect.w / 2;
    hi.w = rect.w - lo.w;
    hi.x0 = rect.x0 + lo.w;
  } else {
    lo.h = rect.h / 2;
    hi.h = rect.h - lo.h;
    hi.y0 = rect.y0 + lo.h;
  }
  const int c0 = build_tree_rec(topo, lo, depth + 1, id);
  const int c1 = build_tree_rec(topo, hi, depth + 1, id);
  topo.nodes[static_cast<std::size_t>(id)].children = {c0, c1};
  return id;
}

}  // namespace detail

inline TreeTopology build_tree(const LatticeSpec& lat,
                               Orientation orientation = Orientation::standard) {
  require(detail::is_power_of_two(lat.Lx) && detail::is_power_of_two(lat.Ly),
          "build_tree: lattice sides must be powers of two, got " + std::to_string(lat.Lx) +
              "x" + std::to_string(lat.Ly));
  require(lat.n_sites() >= 2, "build_tree: need at least two sites");
  TreeTopology topo;
  topo.Lx = lat.Lx;
  topo.Ly = lat.Ly;
  topo.orientation = orientation;
  detail::build_tree_rec(topo, Rect{0, 0, lat.Lx, lat.Ly}, 0, -1);

  const int total_depth = detail::int_log2(lat.n_sites());
  topo.leaf_of_site.assign(static_cast<std::size_t>(lat.n_sites()), -1);
  for (TreeNode& n : topo.nodes) {
    n.layer = total_depth - n.depth + 1;
    if (n.is_leaf()) {
      require(n.depth == total_depth, "build_tree: unbalanced leaf depth");
      topo.leaf_of_site[static_cast<std::size_t>(n.site)] = n.id;
    }
  }
  topo.links.reserve(topo.nodes.size() - 1);
  for (int id = 1; id < topo.n_nodes(); ++id)
    topo.links.push_back(LinkInfo{id - 1, id, topo.node(id).parent});
  return topo;
}

// --- Hilbert curve (diagnostic site ordering) ---------------------------------
//
// Order-k Hilbert curve on an L x L grid, L = 2^k. Returns the site index
// (row-major) of every curve position, so consecutive entries are adjacent on
// the lattice. Provided as a locality diagnostic; the tree itself uses the
// bisection order above.

inline std::vector<int> hilbert_order(int L) {
  require(detail::is_power_of_two(L), "hilbert_order: L must be a power of two");
  const auto d2xy = [L](std::int64_t d, int& x, int& y) {
    std::int64_t rx, ry, t = d;
    x = y = 0;
    for (std::int64_t s = 1; s < L; s *= 2) {
      rx = 1 & (t / 2);
      ry = 1 & (t ^ rx);
      if (ry == 0) {  // rotate quadrant
        if (rx == 1) {
          x = static_cast<int>(s - 1 - x);
          y = static_cast<int>(s - 1 - y);
        }
        std::swap(x, y);
      }
      x += static_cast<int>(s * rx);
      y += static_cast<int>(s * ry);
      t /= 4;
    }
  };
  std::vector<int> order(static_cast<std::size_t>(L) * static_cast<std::size_t>(L));
  for (std::int64_t d = 0; d < static_cast<std::int64_t>(order.size()); ++d) {
    int x = 0, y = 0;
    d2xy(d, x, y);
    order[static_cast<std::size_t>(d)] = y * L + x;
  }
  return order;
}

}  // namespace ttns
