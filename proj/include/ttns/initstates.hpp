#pragma once

// Initial-state pattern constructors: product states with a flipped region
// (strip, corner, bubble) on a uniform background, plus uniform product
// states along either measurement axis.
//
// Axis convention: "up" and "down" name the two sigma_x eigenstates, because
// the ferromagnetic coupling acts along x; the transverse field acts along z.
// Up sites carry amplitude (1, 0), down sites (0, 1), and the transversely
// polarized state carries the +1 eigenvector of sigma_z, (1, 1)/sqrt(2), at
// every site. All patterns are exact product states: every link entropy of
// the generated state is zero by construction.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "ttns/common.hpp"
#include "ttns/state.hpp"
#include "ttns/topology.hpp"

namespace ttns {

enum class PatternKind { uniform_x, uniform_z_polarized, strip, corner, bubble };

enum class Background { up, down };

// Geometry of one pattern. The flipped region (strip, corner, or bubble) is
// an axis-aligned rectangle of sites polarized opposite to the background:
//   - strip:  `length` sites along the strip axis (x when `along_x`) and
//             `width` across, anchored at (anchor_x, anchor_y);
//   - corner: a `corner_size` x `corner_size` square whose anchor must be one
//             of the four lattice corners, so its boundary forms a single
//             right-angle interface with the background;
//   - bubble: a `bubble_w` x `bubble_h` block with lower-left offset
//             (anchor_x, anchor_y), fully inside the lattice.
// Uniform kinds ignore the geometry fields; uniform_z_polarized also ignores
// `background`.
struct PatternSpec {
  PatternKind kind = PatternKind::uniform_x;
  Background background = Background::up;
  int length = 0;
  int width = 0;
  bool along_x = true;
  int corner_size = 0;
  int bubble_w = 0;
  int bubble_h = 0;
  int anchor_x = 0;
  int anchor_y = 0;
};

namespace detail {

// True when the flipped region, re-oriented so its anchor corner sits at the
// origin, is a staircase: each row is a prefix of flipped cells and the
// prefix lengths never grow with the row index. Such a region has no
// overhangs, which is exactly the condition for its boundary, viewed in the
// frame rotated by 45 degrees, to be the graph of a 1-Lipschitz discrete
// function.
inline bool staircase_region(const LatticeSpec& lat, const std::vector<char>& flips,
                             bool mirror_x, bool mirror_y) {
  int prev = lat.Lx + 1;
  for (int row = 0; row < lat.Ly; ++row) {
    const int y = mirror_y ? lat.Ly - 1 - row : row;
    int prefix = 0;
    while (prefix < lat.Lx) {
      const int x = mirror_x ? lat.Lx - 1 - prefix : prefix;
      if (!flips[static_cast<std::size_t>(lat.site(x, y))]) break;
      ++prefix;
    }
    for (int col = prefix; col < lat.Lx; ++col) {
      const int x = mirror_x ? lat.Lx - 1 - col : col;
      if (flips[static_cast<std::size_t>(lat.site(x, y))]) return false;  // gap in the row
    }
    if (prefix > prev) return false;  // overhang
    prev = prefix;
  }
  return true;
}

}  // namespace detail

// Which sites the pattern flips relative to the background (true inside the
// strip/corner/bubble region; all false for the uniform kinds).
inline std::vector<char> pattern_flips(const LatticeSpec& lat, const PatternSpec& spec) {
  std::vector<char> flips(static_cast<std::size_t>(lat.n_sites()), 0);
  int x0 = 0, y0 = 0, w = 0, h = 0;
  switch (spec.kind) {
    case PatternKind::uniform_x:
    case PatternKind::uniform_z_polarized:
      return flips;
    case PatternKind::strip:
      require(spec.length >= 1 && spec.width >= 1, "pattern: strip region is empty");
      x0 = spec.anchor_x;
      y0 = spec.anchor_y;
      w = spec.along_x ? spec.length : spec.width;
      h = spec.along_x ? spec.width : spec.length;
      break;
    case PatternKind::corner: {
      require(spec.corner_size >= 1, "pattern: corner region is empty");
      const bool right = spec.anchor_x != 0;
      const bool top = spec.anchor_y != 0;
      w = h = spec.corner_size;
      x0 = right ? lat.Lx - w : 0;
      y0 = top ? lat.Ly - h : 0;
      require(spec.anchor_x == x0 && spec.anchor_y == y0,
              "pattern: corner anchor must be a lattice corner");
      break;
    }
    case PatternKind::bubble:
      require(spec.bubble_w >= 1 && spec.bubble_h >= 1, "pattern: bubble region is empty");
      x0 = spec.anchor_x;
      y0 = spec.anchor_y;
      w = spec.bubble_w;
      h = spec.bubble_h;
      break;
  }
  require(x0 >= 0 && y0 >= 0 && x0 + w <= lat.Lx && y0 + h <= lat.Ly,
          "pattern: region does not fit inside the lattice");
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) flips[static_cast<std::size_t>(lat.site(x, y))] = 1;
  if (spec.kind == PatternKind::corner)
    require(detail::staircase_region(lat, flips, spec.anchor_x != 0, spec.anchor_y != 0),
            "pattern: corner interface is not a staircase in the rotated frame");
  return flips;
}

// Sites inside the flipped region, ascending.
inline std::vector<int> pattern_region(const LatticeSpec& lat, const PatternSpec& spec) {
  const auto flips = pattern_flips(lat, spec);
  std::vector<int> out;
  for (int site = 0; site < lat.n_sites(); ++site)
    if (flips[static_cast<std::size_t>(site)]) out.push_back(site);
  return out;
}

// Number of nearest-neighbor bonds whose two sites straddle the region
// boundary: the domain-wall count of the generated product state, computed
// combinatorially.
inline int pattern_domain_walls(const LatticeSpec& lat, const PatternSpec& spec) {
  const auto flips = pattern_flips(lat, spec);
  int walls = 0;
  for (const auto& [i, j] : lat.bonds)
    if (flips[static_cast<std::size_t>(i)] != flips[static_cast<std::size_t>(j)]) ++walls;
  return walls;
}

// Per-site local states for the pattern, indexed by site id; feed directly to
// product_state.
inline std::vector<std::array<cplx, 2>> make_pattern(const LatticeSpec& lat,
                                                     const PatternSpec& spec) {
  constexpr std::array<cplx, 2> up{cplx{1.0, 0.0}, cplx{0.0, 0.0}};
  constexpr std::array<cplx, 2> down{cplx{0.0, 0.0}, cplx{1.0, 0.0}};
  const double r = 1.0 / std::sqrt(2.0);
  const std::array<cplx, 2> plus_z{cplx{r, 0.0}, cplx{r, 0.0}};

  if (spec.kind == PatternKind::uniform_z_polarized)
    return std::vector<std::array<cplx, 2>>(static_cast<std::size_t>(lat.n_sites()), plus_z);

  const std::array<cplx, 2>& bg = spec.background == Background::up ? up : down;
  const std::array<cplx, 2>& fg = spec.background == Background::up ? down : up;
  const auto flips = pattern_flips(lat, spec);
  std::vector<std::array<cplx, 2>> out(static_cast<std::size_t>(lat.n_sites()), bg);
  for (int site = 0; site < lat.n_sites(); ++site)
    if (flips[static_cast<std::size_t>(site)]) out[static_cast<std::size_t>(site)] = fg;
  return out;
}

// The pattern as a ready-made tree state, padded to bond dimension chi_init.
inline TtnState pattern_state(std::shared_ptr<const TreeTopology> topo, const LatticeSpec& lat,
                              const PatternSpec& spec, int chi_init = 1) {
  require(topo != nullptr && topo->n_sites() == lat.n_sites(),
          "pattern_state: topology does not match the lattice");
  return product_state(std::move(topo), make_pattern(lat, spec), chi_init);
}

// ASCII rendering for run logs: one row per y (y = 0 printed first), 'X'
// inside the flipped region, '.' on the background. The uniform kinds render
// as all '.' (uniform_z_polarized sites are not x-eigenstates at all; the
// picture only shows the flip geometry).
inline std::string ascii_pattern(const LatticeSpec& lat, const PatternSpec& spec) {
  const auto flips = pattern_flips(lat, spec);
  std::string out;
  out.reserve(static_cast<std::size_t>((lat.Lx + 1) * lat.Ly));
  for (int y = 0; y < lat.Ly; ++y) {
    for (int x = 0; x < lat.Lx; ++x)
      out.push_back(flips[static_cast<std::size_t>(lat.site(x, y))] ? 'X' : '.');
    out.push_back('\n');
  }
  return out;
}

}  // namespace ttns
