#pragma once

// Dense complex tensors with labelled legs.
//
// A leg is an opaque identity (physical site, tree link, or auxiliary) rather
// than a position, so contractions are specified by label pairs and never by
// index bookkeeping at call sites. Storage is row-major in the order of the
// leg list. Heavy kernels (GEMM, QR, SVD) are delegated to Eigen; everything
// above the matrix level — permutation planning, matricization, phase
// conventions — lives here.
//
// Conventions pinned by tests:
//  * factorize(qr): R has a real, non-negative diagonal (Q absorbs phases).
//  * factorize(svd): singular values descending; each left vector's largest
//    entry is made real positive (the right vector absorbs the phase).
//  * truncation only ever drops the smallest singular values (max_kept).

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cstdint>
#include <complex>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ttns/common.hpp"

namespace ttns {

enum class LegKind : std::uint8_t { phys = 0, link = 1, aux = 2 };

struct Leg {
  std::int64_t raw = -1;

  static constexpr Leg make(LegKind k, std::int64_t index) {
    return Leg{(static_cast<std::int64_t>(k) << 56) | index};
  }
  static constexpr Leg phys(std::int64_t site) { return make(LegKind::phys, site); }
  static constexpr Leg link(std::int64_t id) { return make(LegKind::link, id); }
  static constexpr Leg aux(std::int64_t n) { return make(LegKind::aux, n); }

  LegKind kind() const { return static_cast<LegKind>(raw >> 56); }
  std::int64_t index() const { return raw & ((std::int64_t{1} << 56) - 1); }

  friend constexpr bool operator==(Leg a, Leg b) { return a.raw == b.raw; }
  friend constexpr auto operator<=>(Leg a, Leg b) { return a.raw <=> b.raw; }
};

inline std::string to_string(Leg l) {
  switch (l.kind()) {
    case LegKind::phys: return "phys(" + std::to_string(l.index()) + ")";
    case LegKind::link: return "link(" + std::to_string(l.index()) + ")";
    case LegKind::aux: return "aux(" + std::to_string(l.index()) + ")";
  }
  return "leg(?)";
}

using MatrixXc = Eigen::MatrixXcd;  // column-major
using CMap = Eigen::Map<const MatrixXc>;
using MMap = Eigen::Map<MatrixXc>;

class Tensor {
public:
  Tensor() = default;

  Tensor(std::vector<Leg> legs, std::vector<std::size_t> dims)
      : legs_(std::move(legs)), dims_(std::move(dims)) {
    require(legs_.size() == dims_.size(), "Tensor: one dimension per leg");
    for (std::size_t i = 0; i < legs_.size(); ++i) {
      require(dims_[i] > 0, "Tensor: zero dimension on " + to_string(legs_[i]));
      for (std::size_t j = i + 1; j < legs_.size(); ++j)
        require(!(legs_[i] == legs_[j]), "Tensor: duplicate leg " + to_string(legs_[i]));
    }
    data_.assign(product(dims_), cplx{0.0, 0.0});
  }

  static Tensor scalar(cplx v) {
    Tensor t;
    t.data_.assign(1, v);
    return t;
  }

  int rank() const { return static_cast<int>(legs_.size()); }
  const std::vector<Leg>& legs() const { return legs_; }
  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }
  cplx* data() { return data_.data(); }
  const cplx* data() const { return data_.data(); }
  cplx& operator[](std::size_t i) { return data_[i]; }
  const cplx& operator[](std::size_t i) const { return data_[i]; }

  bool has_leg(Leg l) const {
    return std::find(legs_.begin(), legs_.end(), l) != legs_.end();
  }
  int leg_pos(Leg l) const {
    const auto it = std::find(legs_.begin(), legs_.end(), l);
    require(it != legs_.end(), "Tensor: no leg " + to_string(l));
    return static_cast<int>(it - legs_.begin());
  }
  std::size_t dim(Leg l) const { return dims_[static_cast<std::size_t>(leg_pos(l))]; }

  cplx& at(std::initializer_list<std::size_t> idx) {
    return data_[flat_index(idx)];
  }
  const cplx& at(std::initializer_list<std::size_t> idx) const {
    return data_[flat_index(idx)];
  }

  Tensor& rename_leg(Leg from, Leg to) {
    if (from == to) return *this;
    require(!has_leg(to), "rename_leg: target " + to_string(to) + " already present");
    legs_[static_cast<std::size_t>(leg_pos(from))] = to;
    return *this;
  }

  // Grow one leg to new_dim, zero-filling the new slices. The represented
  // tensor is embedded unchanged.
  Tensor padded_leg(Leg leg, std::size_t new_dim) const {
    const auto pos = static_cast<std::size_t>(leg_pos(leg));
    require(new_dim >= dims_[pos], "padded_leg: cannot shrink");
    if (new_dim == dims_[pos]) return *this;
    std::vector<std::size_t> nd = dims_;
    nd[pos] = new_dim;
    Tensor out(legs_, nd);
    std::size_t pre = 1, post = 1;
    for (std::size_t i = 0; i < pos; ++i) pre *= dims_[i];
    for (std::size_t i = pos + 1; i < dims_.size(); ++i) post *= dims_[i];
    const std::size_t d = dims_[pos];
    for (std::size_t p = 0; p < pre; ++p)
      std::copy(data_.begin() + static_cast<std::ptrdiff_t>(p * d * post),
                data_.begin() + static_cast<std::ptrdiff_t>((p + 1) * d * post),
                out.data_.begin() + static_cast<std::ptrdiff_t>(p * new_dim * post));
    return out;
  }

private:
  std::size_t flat_index(std::initializer_list<std::size_t> idx) const {
    require(idx.size() == dims_.size(), "Tensor::at: wrong index rank");
    std::size_t flat = 0;
    std::size_t k = 0;
    for (std::size_t i : idx) {
      require(i < dims_[k], "Tensor::at: index out of range");
      flat = flat * dims_[k] + i;
      ++k;
    }
    return flat;
  }

  std::vector<Leg> legs_;
  std::vector<std::size_t> dims_;
  // SIMD-aligned so mapped reductions peel identically regardless of where
  // the heap places the buffer; keeps repeated runs bit-identical.
  std::vector<cplx, Eigen::aligned_allocator<cplx>> data_;
};

inline Tensor zeros_like(const Tensor& t) { return Tensor(t.legs(), t.dims()); }

inline void fill_random_normal(Tensor& t, Rng& rng) {
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.next_cplx_normal();
}

// --- permutation ---------------------------------------------------------------

inline Tensor permuted(const Tensor& t, std::span<const Leg> new_order) {
  require(new_order.size() == static_cast<std::size_t>(t.rank()),
          "permuted: leg count mismatch");
  std::vector<std::size_t> src_axis(new_order.size());
  bool identity = true;
  for (std::size_t k = 0; k < new_order.size(); ++k) {
    src_axis[k] = static_cast<std::size_t>(t.leg_pos(new_order[k]));
    if (src_axis[k] != k) identity = false;
  }
  if (identity) return t;

  const auto& in_dims = t.dims();
  std::vector<std::size_t> in_stride(in_dims.size(), 1);
  for (int i = static_cast<int>(in_dims.size()) - 2; i >= 0; --i)
    in_stride[static_cast<std::size_t>(i)] =
        in_stride[static_cast<std::size_t>(i) + 1] * in_dims[static_cast<std::size_t>(i) + 1];

  std::vector<std::size_t> out_dims(new_order.size());
  std::vector<std::size_t> gather_stride(new_order.size());
  for (std::size_t k = 0; k < new_order.size(); ++k) {
    out_dims[k] = in_dims[src_axis[k]];
    gather_stride[k] = in_stride[src_axis[k]];
  }
  Tensor out(std::vector<Leg>(new_order.begin(), new_order.end()), out_dims);

  // Odometer over the output multi-index, accumulating the input offset.
  const std::size_t rank = out_dims.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t in_off = 0;
  const std::size_t total = out.size();
  const std::size_t inner_n = out_dims[rank - 1];
  const std::size_t inner_s = gather_stride[rank - 1];
  const cplx* src = t.data();
  cplx* dst = out.data();
  for (std::size_t flat = 0; flat < total;) {
    std::size_t off = in_off;
    for (std::size_t i = 0; i < inner_n; ++i, off += inner_s) dst[flat++] = src[off];
    // Carry into the next-outer digits.
    for (int k = static_cast<int>(rank) - 2; k >= 0; --k) {
      const auto ku = static_cast<std::size_t>(k);
      in_off += gather_stride[ku];
      if (++idx[ku] < out_dims[ku]) break;
      in_off -= gather_stride[ku] * out_dims[ku];
      idx[ku] = 0;
    }
  }
  return out;
}

inline Tensor permuted(const Tensor& t, std::initializer_list<Leg> new_order) {
  return permuted(t, std::span<const Leg>(new_order.begin(), new_order.size()));
}

// --- elementwise / vector-space operations --------------------------------------

inline Tensor conj(const Tensor& t) {
  Tensor out = t;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::conj(out[i]);
  return out;
}

inline double norm(const Tensor& t) {
  return Eigen::Map<const Eigen::VectorXcd>(t.data(), static_cast<Eigen::Index>(t.size())).norm();
}

inline Tensor& scale(Tensor& t, cplx a) {
  Eigen::Map<Eigen::VectorXcd>(t.data(), static_cast<Eigen::Index>(t.size())) *= a;
  return t;
}

inline void check_same_layout(const Tensor& a, const Tensor& b, const char* who) {
  require(a.legs() == b.legs() && a.dims() == b.dims(),
          std::string(who) + ": tensors must share leg order and dimensions");
}

// y += a * x (same leg order required; callers keep canonical orders)
inline Tensor& axpy(cplx a, const Tensor& x, Tensor& y) {
  check_same_layout(x, y, "axpy");
  Eigen::Map<Eigen::VectorXcd>(y.data(), static_cast<Eigen::Index>(y.size())) +=
      a * Eigen::Map<const Eigen::VectorXcd>(x.data(), static_cast<Eigen::Index>(x.size()));
  return y;
}

// <a|b> with the first argument conjugated; b may have any leg order.
inline cplx dot(const Tensor& a, const Tensor& b) {
  if (a.legs() == b.legs()) {
    check_same_layout(a, b, "dot");
    return Eigen::Map<const Eigen::VectorXcd>(a.data(), static_cast<Eigen::Index>(a.size()))
        .dot(Eigen::Map<const Eigen::VectorXcd>(b.data(), static_cast<Eigen::Index>(b.size())));
  }
  const Tensor br = permuted(b, std::span<const Leg>(a.legs().data(), a.legs().size()));
  return dot(a, br);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  const Tensor br = permuted(b, std::span<const Leg>(a.legs().data(), a.legs().size()));
  check_same_layout(a, br, "max_abs_diff");
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - br[i]));
  return m;
}

// --- contraction -----------------------------------------------------------------

// Contract a and b over the given (leg-of-a, leg-of-b) pairs. Free legs keep
// their labels; the result carries a's free legs first, then b's. An empty
// pair list is the outer product.
inline Tensor contract(const Tensor& a, const Tensor& b,
                       std::span<const std::pair<Leg, Leg>> pairs) {
  std::vector<Leg> a_paired, b_paired;
  a_paired.reserve(pairs.size());
  b_paired.reserve(pairs.size());
  for (const auto& [la, lb] : pairs) {
    require(a.dim(la) == b.dim(lb), "contract: dimension mismatch between " + to_string(la) +
                                        " and " + to_string(lb));
    for (const Leg& seen : a_paired)
      require(!(seen == la), "contract: leg " + to_string(la) + " paired twice");
    for (const Leg& seen : b_paired)
      require(!(seen == lb), "contract: leg " + to_string(lb) + " paired twice");
    a_paired.push_back(la);
    b_paired.push_back(lb);
  }
  auto is_paired = [](const std::vector<Leg>& v, Leg l) {
    return std::find(v.begin(), v.end(), l) != v.end();
  };
  std::vector<Leg> a_free, b_free;
  for (const Leg& l : a.legs())
    if (!is_paired(a_paired, l)) a_free.push_back(l);
  for (const Leg& l : b.legs())
    if (!is_paired(b_paired, l)) b_free.push_back(l);
  for (const Leg& l : a_free)
    require(std::find(b_free.begin(), b_free.end(), l) == b_free.end(),
            "contract: free leg " + to_string(l) + " appears in both tensors");

  std::vector<Leg> a_order = a_free;
  a_order.insert(a_order.end(), a_paired.begin(), a_paired.end());
  std::vector<Leg> b_order = b_paired;
  b_order.insert(b_order.end(), b_free.begin(), b_free.end());
  const Tensor ap = permuted(a, std::span<const Leg>(a_order.data(), a_order.size()));
  const Tensor bp = permuted(b, std::span<const Leg>(b_order.data(), b_order.size()));

  std::size_t m = 1, k = 1, n = 1;
  std::vector<std::size_t> out_dims;
  std::vector<Leg> out_legs;
  for (const Leg& l : a_free) {
    const std::size_t d = a.dim(l);
    m *= d;
    out_dims.push_back(d);
    out_legs.push_back(l);
  }
  for (const Leg& l : a_paired) k *= a.dim(l);
  for (const Leg& l : b_free) {
    const std::size_t d = b.dim(l);
    n *= d;
    out_dims.push_back(d);
    out_legs.push_back(l);
  }

  Tensor out = out_legs.empty() ? Tensor::scalar(0.0) : Tensor(out_legs, out_dims);
  // Row-major (r x c) buffers are column-major (c x r) matrices; compute
  // C^T = B^T A^T entirely in column-major form.
  CMap at(ap.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(m));
  CMap bt(bp.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  MMap ct(out.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  ct.noalias() = bt * at;
  return out;
}

inline Tensor contract(const Tensor& a, const Tensor& b,
                       std::initializer_list<std::pair<Leg, Leg>> pairs) {
  return contract(a, b, std::span<const std::pair<Leg, Leg>>(pairs.begin(), pairs.size()));
}

// --- single-leg matrix application ------------------------------------------------
//
// out += alpha * M applied to one leg of t: out[..., i, ...] =
// sum_j M(i, j) t[..., j, ...]. This is the effective-Hamiltonian hot path, so
// it avoids general permutations: the tensor is viewed blockwise and handled
// with column-major GEMMs.

inline void accumulate_apply_matrix(Tensor& out, cplx alpha, const MatrixXc& M,
                                    const Tensor& t, Leg leg) {
  const auto pos = static_cast<std::size_t>(t.leg_pos(leg));
  const auto& dims = t.dims();
  std::size_t pre = 1, post = 1;
  for (std::size_t i = 0; i < pos; ++i) pre *= dims[i];
  for (std::size_t i = pos + 1; i < dims.size(); ++i) post *= dims[i];
  const std::size_t d = dims[pos];
  const auto dnew = static_cast<std::size_t>(M.rows());
  require(static_cast<std::size_t>(M.cols()) == d,
          "apply_matrix: matrix columns must match " + to_string(leg));
  require(out.legs() == t.legs(), "apply_matrix: output leg order must match input");
  require(out.dim(leg) == dnew && out.size() == t.size() / d * dnew,
          "apply_matrix: output dimensions must match");

  if (post == 1) {
    // Row-major (pre x d) is column-major (d x pre): out_cm += alpha * M in_cm.
    CMap in(t.data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(pre));
    MMap o(out.data(), static_cast<Eigen::Index>(dnew), static_cast<Eigen::Index>(pre));
    o.noalias() += alpha * (M * in);
    return;
  }
  for (std::size_t p = 0; p < pre; ++p) {
    // Row-major (d x post) block is column-major (post x d): out += alpha in M^T.
    CMap in(t.data() + p * d * post, static_cast<Eigen::Index>(post),
            static_cast<Eigen::Index>(d));
    MMap o(out.data() + p * dnew * post, static_cast<Eigen::Index>(post),
           static_cast<Eigen::Index>(dnew));
    o.noalias() += alpha * (in * M.transpose());
  }
}

inline Tensor apply_matrix(const MatrixXc& M, const Tensor& t, Leg leg) {
  std::vector<std::size_t> nd = t.dims();
  nd[static_cast<std::size_t>(t.leg_pos(leg))] = static_cast<std::size_t>(M.rows());
  Tensor out(t.legs(), nd);
  accumulate_apply_matrix(out, cplx{1.0, 0.0}, M, t, leg);
  return out;
}

// --- factorization ----------------------------------------------------------------

enum class FactorizeMode { qr, svd };

struct DecompositionResult {
  Tensor isometry;    // row legs + bond; orthonormal columns
  Tensor remainder;   // bond + column legs (R, or S V^dagger)
  std::vector<double> singular_values;  // svd mode only, descending, untruncated
  std::size_t kept = 0;                 // bond dimension of the result
};

// Split t = isometry * remainder across (row_legs | the rest). `bond` names
// the new connecting leg on both factors and must not collide with t's legs.
// svd mode truncates to at most max_kept singular values (largest kept).
inline DecompositionResult factorize(const Tensor& t, std::span<const Leg> row_legs,
                                     FactorizeMode mode, Leg bond,
                                     std::size_t max_kept = std::numeric_limits<std::size_t>::max()) {
  require(!row_legs.empty(), "factorize: need at least one row leg");
  require(!t.has_leg(bond), "factorize: bond label " + to_string(bond) + " already on tensor");
  std::vector<Leg> rows(row_legs.begin(), row_legs.end());
  std::vector<Leg> cols;
  for (const Leg& l : t.legs())
    if (std::find(rows.begin(), rows.end(), l) == rows.end()) cols.push_back(l);
  require(!cols.empty(), "factorize: need at least one column leg");
  for (const Leg& l : rows) (void)t.leg_pos(l);  // validates membership

  std::vector<Leg> order = rows;
  order.insert(order.end(), cols.begin(), cols.end());
  const Tensor tp = permuted(t, std::span<const Leg>(order.data(), order.size()));

  std::size_t m = 1, n = 1;
  std::vector<std::size_t> row_dims, col_dims;
  for (const Leg& l : rows) {
    row_dims.push_back(t.dim(l));
    m *= row_dims.back();
  }
  for (const Leg& l : cols) {
    col_dims.push_back(t.dim(l));
    n *= col_dims.back();
  }
  // Row-major (m x n) buffer viewed as column-major (n x m) = A^T; Eigen
  // factorizations want a concrete column-major A.
  MatrixXc A = CMap(tp.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m))
                   .transpose();

  const std::size_t full_k = std::min(m, n);
  DecompositionResult res;
  MatrixXc Q, R;

  if (mode == FactorizeMode::qr) {
    require(max_kept >= full_k, "factorize: qr mode cannot truncate");
    Eigen::HouseholderQR<MatrixXc> qr(A);
    Q = qr.householderQ() * MatrixXc::Identity(static_cast<Eigen::Index>(m),
                                               static_cast<Eigen::Index>(full_k));
    R = qr.matrixQR()
            .topRows(static_cast<Eigen::Index>(full_k))
            .template triangularView<Eigen::Upper>();
    // Phase convention: R diagonal real and non-negative.
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(full_k); ++i) {
      const cplx rii = R(i, i);
      if (std::abs(rii) > 0.0) {
        const cplx ph = rii / std::abs(rii);
        Q.col(i) *= ph;
        R.row(i) *= std::conj(ph);
      }
    }
    res.kept = full_k;
  } else {
    Eigen::BDCSVD<MatrixXc> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& S = svd.singularValues();
    res.singular_values.assign(S.data(), S.data() + S.size());
    const std::size_t kept = std::min<std::size_t>(max_kept, static_cast<std::size_t>(S.size()));
    require(kept > 0, "factorize: svd must keep at least one value");
    Q = svd.matrixU().leftCols(static_cast<Eigen::Index>(kept));
    MatrixXc Vh = svd.matrixV().leftCols(static_cast<Eigen::Index>(kept)).adjoint();
    // Phase convention: the largest-magnitude entry of each left vector is
    // real positive; the right vector absorbs the conjugate phase.
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(kept); ++i) {
      Eigen::Index jmax = 0;
      Q.col(i).cwiseAbs().maxCoeff(&jmax);
      const cplx u = Q(jmax, i);
      if (std::abs(u) > 0.0) {
        const cplx ph = u / std::abs(u);
        Q.col(i) *= std::conj(ph);
        Vh.row(i) *= ph;
      }
      Vh.row(i) *= S(i);
    }
    R = std::move(Vh);
    res.kept = kept;
  }

  std::vector<Leg> iso_legs = rows;
  iso_legs.push_back(bond);
  std::vector<std::size_t> iso_dims = row_dims;
  iso_dims.push_back(res.kept);
  res.isometry = Tensor(iso_legs, iso_dims);
  // Q is column-major (m x kept); the tensor buffer is row-major (m x kept),
  // i.e. column-major (kept x m) = Q^T.
  MMap(res.isometry.data(), static_cast<Eigen::Index>(res.kept),
       static_cast<Eigen::Index>(m)) = Q.transpose();

  std::vector<Leg> rem_legs{bond};
  rem_legs.insert(rem_legs.end(), cols.begin(), cols.end());
  std::vector<std::size_t> rem_dims{res.kept};
  rem_dims.insert(rem_dims.end(), col_dims.begin(), col_dims.end());
  res.remainder = Tensor(rem_legs, rem_dims);
  MMap(res.remainder.data(), static_cast<Eigen::Index>(n),
       static_cast<Eigen::Index>(res.kept)) = R.transpose();
  return res;
}

inline DecompositionResult factorize(const Tensor& t, std::initializer_list<Leg> row_legs,
                                     FactorizeMode mode, Leg bond,
                                     std::size_t max_kept = std::numeric_limits<std::size_t>::max()) {
  return factorize(t, std::span<const Leg>(row_legs.begin(), row_legs.size()), mode, bond,
                   max_kept);
}

// Contraction of conj(bra) with ket over all shared legs except `open`,
// returning the matrix B(i', i) where i' indexes the bra's open leg and i the
// ket's. Both tensors must carry the same leg set; dimensions may differ only
// on `open`.
inline MatrixXc sandwich(const Tensor& bra, const Tensor& ket, Leg open) {
  constexpr Leg tmp = Leg::aux(std::numeric_limits<std::int64_t>::max() - 2);
  Tensor bc = conj(bra);
  bc.rename_leg(open, tmp);
  std::vector<std::pair<Leg, Leg>> pairs;
  for (const Leg& l : bc.legs())
    if (!(l == tmp)) pairs.emplace_back(l, l);
  const Tensor g =
      contract(bc, ket, std::span<const std::pair<Leg, Leg>>(pairs.data(), pairs.size()));
  const auto rows = static_cast<Eigen::Index>(bra.dim(open));
  const auto cols = static_cast<Eigen::Index>(ket.dim(open));
  // g legs (tmp, open): row-major (rows x cols) buffer = column-major
  // (cols x rows) matrix, so transpose back.
  return CMap(g.data(), cols, rows).transpose();
}

// Contraction of conj(a) with a over all legs except `kept`: the Gram matrix
// G(i', i) = sum conj(a[..., i', ...]) a[..., i, ...]. Used for isometry checks
// and environment projections.
inline MatrixXc gram_matrix(const Tensor& a, Leg kept) {
  std::vector<std::pair<Leg, Leg>> pairs;
  for (const Leg& l : a.legs())
    if (!(l == kept)) pairs.emplace_back(l, l);
  Tensor ac = conj(a);
  ac.rename_leg(kept, Leg::aux(std::numeric_limits<std::int64_t>::max() - 1));
  const Tensor g = contract(ac, a, std::span<const std::pair<Leg, Leg>>(pairs.data(), pairs.size()));
  const std::size_t d = a.dim(kept);
  // g legs: (aux, kept), row-major (d x d) = column-major transposed.
  return CMap(g.data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d)).transpose();
}

inline double isometry_defect(const Tensor& a, Leg toward) {
  const MatrixXc g = gram_matrix(a, toward);
  return (g - MatrixXc::Identity(g.rows(), g.cols())).cwiseAbs().maxCoeff();
}

}  // namespace ttns
