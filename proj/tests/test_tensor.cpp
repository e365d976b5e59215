// Tests for the labelled-leg tensor layer.
//
// Contraction is checked against an independent naive implementation that
// loops over every index explicitly, so the permute+GEMM path is validated
// end to end. Factorization tests pin the phase conventions (real
// non-negative R diagonal; left singular vectors with real-positive leading
// entry) and the truncation residual identity.

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numeric>
#include <vector>

#include "ttns/tensor.hpp"

namespace ttns {
namespace {

Tensor make_random(std::vector<Leg> legs, std::vector<std::size_t> dims, std::uint64_t seed) {
  Tensor t(std::move(legs), std::move(dims));
  Rng rng(seed);
  fill_random_normal(t, rng);
  return t;
}

std::vector<std::size_t> row_major_strides(const std::vector<std::size_t>& dims) {
  std::vector<std::size_t> s(dims.size(), 1);
  for (int i = static_cast<int>(dims.size()) - 2; i >= 0; --i)
    s[static_cast<std::size_t>(i)] = s[static_cast<std::size_t>(i) + 1] * dims[static_cast<std::size_t>(i) + 1];
  return s;
}

// Reference contraction: explicit sums, no matrix algebra. Result leg order
// matches the library convention (a's free legs, then b's).
Tensor naive_contract(const Tensor& a, const Tensor& b,
                      const std::vector<std::pair<Leg, Leg>>& pairs) {
  auto contains = [](const std::vector<Leg>& v, Leg l) {
    return std::find(v.begin(), v.end(), l) != v.end();
  };
  std::vector<Leg> a_paired, b_paired;
  for (const auto& [la, lb] : pairs) {
    a_paired.push_back(la);
    b_paired.push_back(lb);
  }
  std::vector<Leg> out_legs;
  std::vector<std::size_t> out_dims;
  std::vector<int> out_axis_a, out_axis_b;  // positions in a / b for each out leg
  for (const Leg& l : a.legs())
    if (!contains(a_paired, l)) {
      out_legs.push_back(l);
      out_dims.push_back(a.dim(l));
      out_axis_a.push_back(a.leg_pos(l));
      out_axis_b.push_back(-1);
    }
  for (const Leg& l : b.legs())
    if (!contains(b_paired, l)) {
      out_legs.push_back(l);
      out_dims.push_back(b.dim(l));
      out_axis_a.push_back(-1);
      out_axis_b.push_back(b.leg_pos(l));
    }

  const auto sa = row_major_strides(a.dims());
  const auto sb = row_major_strides(b.dims());
  std::vector<std::size_t> k_dims;
  std::vector<std::size_t> k_stride_a, k_stride_b;
  for (const auto& [la, lb] : pairs) {
    k_dims.push_back(a.dim(la));
    k_stride_a.push_back(sa[static_cast<std::size_t>(a.leg_pos(la))]);
    k_stride_b.push_back(sb[static_cast<std::size_t>(b.leg_pos(lb))]);
  }

  const std::size_t out_total =
      out_dims.empty() ? 1 : std::accumulate(out_dims.begin(), out_dims.end(), std::size_t{1},
                                             std::multiplies<>());
  const std::size_t k_total = k_dims.empty()
                                  ? 1
                                  : std::accumulate(k_dims.begin(), k_dims.end(), std::size_t{1},
                                                    std::multiplies<>());
  Tensor out = out_legs.empty() ? Tensor::scalar(0.0) : Tensor(out_legs, out_dims);
  for (std::size_t of = 0; of < out_total; ++of) {
    // Decode the output multi-index into base offsets in a and b.
    std::size_t rem = of, base_a = 0, base_b = 0;
    for (int k = static_cast<int>(out_dims.size()) - 1; k >= 0; --k) {
      const auto ku = static_cast<std::size_t>(k);
      const std::size_t ik = rem % out_dims[ku];
      rem /= out_dims[ku];
      if (out_axis_a[ku] >= 0) base_a += ik * sa[static_cast<std::size_t>(out_axis_a[ku])];
      if (out_axis_b[ku] >= 0) base_b += ik * sb[static_cast<std::size_t>(out_axis_b[ku])];
    }
    cplx acc{0.0, 0.0};
    for (std::size_t kf = 0; kf < k_total; ++kf) {
      std::size_t krem = kf, off_a = base_a, off_b = base_b;
      for (int k = static_cast<int>(k_dims.size()) - 1; k >= 0; --k) {
        const auto ku = static_cast<std::size_t>(k);
        const std::size_t ik = krem % k_dims[ku];
        krem /= k_dims[ku];
        off_a += ik * k_stride_a[ku];
        off_b += ik * k_stride_b[ku];
      }
      acc += a[off_a] * b[off_b];
    }
    out[of] = acc;
  }
  return out;
}

constexpr Leg A0 = Leg::aux(0);
constexpr Leg A1 = Leg::aux(1);
constexpr Leg A2 = Leg::aux(2);
constexpr Leg A3 = Leg::aux(3);
constexpr Leg A4 = Leg::aux(4);
constexpr Leg A5 = Leg::aux(5);

TEST(Leg, IdentityAndOrdering) {
  EXPECT_EQ(Leg::phys(7).kind(), LegKind::phys);
  EXPECT_EQ(Leg::phys(7).index(), 7);
  EXPECT_EQ(Leg::link(123).index(), 123);
  EXPECT_FALSE(Leg::phys(3) == Leg::link(3));
  EXPECT_TRUE(Leg::link(3) == Leg::link(3));
  EXPECT_LT(Leg::phys(2), Leg::phys(5));
  EXPECT_EQ(to_string(Leg::aux(9)), "aux(9)");
}

TEST(Tensor, LayoutIsRowMajor) {
  Tensor t({A0, A1, A2}, {2, 3, 4});
  std::size_t flat = 0;
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 4; ++k) t.at({i, j, k}) = cplx(static_cast<double>(flat++), 0);
  for (std::size_t f = 0; f < t.size(); ++f)
    EXPECT_EQ(t[f].real(), static_cast<double>(f));
  EXPECT_EQ(t.dim(A1), 3u);
  EXPECT_EQ(t.leg_pos(A2), 2);
}

TEST(Tensor, ConstructionErrors) {
  EXPECT_THROW(Tensor({A0, A0}, {2, 2}), Error);
  EXPECT_THROW(Tensor({A0, A1}, {2, 0}), Error);
  EXPECT_THROW(Tensor({A0}, {2, 3}), Error);
  Tensor t({A0, A1}, {2, 2});
  EXPECT_THROW(t.leg_pos(A2), Error);
  EXPECT_THROW(t.at({2, 0}), Error);
}

TEST(Tensor, RenameLeg) {
  Tensor t = make_random({A0, A1}, {2, 3}, 1);
  const Tensor orig = t;
  t.rename_leg(A1, Leg::link(5));
  EXPECT_TRUE(t.has_leg(Leg::link(5)));
  EXPECT_FALSE(t.has_leg(A1));
  EXPECT_EQ(t[4], orig[4]);
  EXPECT_THROW(t.rename_leg(Leg::link(5), A0), Error);
}

TEST(Permute, MatchesIndexArithmetic) {
  const Tensor t = make_random({A0, A1, A2}, {2, 3, 4}, 2);
  const Tensor p = permuted(t, {A2, A0, A1});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(p.at({k, i, j}), t.at({i, j, k}));
}

TEST(Permute, RoundTripAndIdentity) {
  const Tensor t = make_random({A0, A1, A2, A3}, {3, 2, 5, 4}, 3);
  const Tensor p = permuted(t, {A3, A1, A0, A2});
  const Tensor back = permuted(p, {A0, A1, A2, A3});
  EXPECT_EQ(back.legs(), t.legs());
  EXPECT_LT(max_abs_diff(back, t), 1e-15);
  const Tensor same = permuted(t, {A0, A1, A2, A3});
  EXPECT_LT(max_abs_diff(same, t), 1e-15);
}

TEST(Contract, MatchesNaiveReference) {
  struct Case {
    std::vector<Leg> la, lb;
    std::vector<std::size_t> da, db;
    std::vector<std::pair<Leg, Leg>> pairs;
  };
  const std::vector<Case> cases = {
      // matrix * matrix
      {{A0, A1}, {A2, A3}, {4, 5}, {5, 3}, {{A1, A2}}},
      // two contracted legs, mixed order
      {{A0, A1, A2}, {A3, A4, A5}, {2, 3, 4}, {4, 3, 5}, {{A2, A3}, {A1, A4}}},
      // cross-kind pairing (phys against link)
      {{Leg::phys(0), Leg::link(2)}, {Leg::link(7), Leg::phys(1)}, {2, 6}, {6, 2},
       {{Leg::link(2), Leg::link(7)}}},
      // full contraction to a scalar
      {{A0, A1}, {A2, A3}, {3, 4}, {4, 3}, {{A0, A3}, {A1, A2}}},
      // outer product
      {{A0}, {A1, A2}, {3}, {2, 2}, {}},
      // contracted leg first on a, last on b
      {{A0, A1, A2}, {A3, A4}, {5, 2, 3}, {4, 5}, {{A0, A4}}},
  };
  int seed = 10;
  for (const auto& c : cases) {
    const Tensor a = make_random(c.la, c.da, static_cast<std::uint64_t>(seed++));
    const Tensor b = make_random(c.lb, c.db, static_cast<std::uint64_t>(seed++));
    const Tensor lib = contract(a, b, std::span<const std::pair<Leg, Leg>>(c.pairs.data(), c.pairs.size()));
    const Tensor ref = naive_contract(a, b, c.pairs);
    EXPECT_EQ(lib.legs(), ref.legs());
    EXPECT_LT(max_abs_diff(lib, ref), 1e-12);
  }
}

TEST(Contract, IsBilinear) {
  const Tensor a1 = make_random({A0, A1}, {3, 4}, 30);
  const Tensor a2 = make_random({A0, A1}, {3, 4}, 31);
  const Tensor b = make_random({A1, A2}, {4, 2}, 32);
  const cplx alpha{0.7, -1.3};
  Tensor lhs_in = a1;
  axpy(alpha, a2, lhs_in);
  const Tensor lhs = contract(lhs_in, b, {{A1, A1}});
  Tensor rhs = contract(a1, b, {{A1, A1}});
  const Tensor t2 = contract(a2, b, {{A1, A1}});
  axpy(alpha, t2, rhs);
  EXPECT_LT(max_abs_diff(lhs, rhs), 1e-12);
}

TEST(Contract, ErrorCases) {
  const Tensor a = make_random({A0, A1}, {3, 4}, 40);
  const Tensor b = make_random({A1, A2}, {5, 2}, 41);
  // dimension mismatch on the paired leg
  EXPECT_THROW(contract(a, b, {{A1, A1}}), Error);
  const Tensor c = make_random({A0, A2}, {3, 2}, 42);
  // free leg A0 appears on both sides
  EXPECT_THROW(contract(a, c, {{A1, A2}}), Error);
  const Tensor d = make_random({A1, A2, A3}, {4, 2, 4}, 43);
  // same leg of a paired twice
  EXPECT_THROW(contract(a, d, {{A1, A1}, {A1, A3}}), Error);
}

TEST(Dot, ConjugatesFirstArgumentAndAlignsLegs) {
  const Tensor a = make_random({A0, A1}, {3, 4}, 50);
  const Tensor b_mixed = permuted(make_random({A0, A1}, {3, 4}, 51), {A1, A0});
  const cplx d = dot(a, b_mixed);
  cplx ref{0.0, 0.0};
  const Tensor b = permuted(b_mixed, {A0, A1});
  for (std::size_t i = 0; i < a.size(); ++i) ref += std::conj(a[i]) * b[i];
  EXPECT_LT(std::abs(d - ref), 1e-12);
  EXPECT_NEAR(std::sqrt(dot(a, a).real()), norm(a), 1e-12);
  EXPECT_NEAR(dot(a, a).imag(), 0.0, 1e-14);
}

TEST(Axpy, AccumulatesAndChecksLayout) {
  const Tensor x = make_random({A0, A1}, {2, 3}, 60);
  Tensor y = make_random({A0, A1}, {2, 3}, 61);
  const Tensor y0 = y;
  axpy(cplx{0.0, 2.0}, x, y);
  for (std::size_t i = 0; i < y.size(); ++i)
    EXPECT_LT(std::abs(y[i] - (y0[i] + cplx{0.0, 2.0} * x[i])), 1e-14);
  Tensor wrong = make_random({A1, A0}, {3, 2}, 62);
  EXPECT_THROW(axpy(cplx{1.0, 0.0}, x, wrong), Error);
}

TEST(ApplyMatrix, MatchesContractionOnEveryLegPosition) {
  const Tensor t = make_random({A0, A1, A2}, {3, 4, 5}, 70);
  Rng rng(71);
  for (const Leg leg : {A0, A1, A2}) {
    const std::size_t d = t.dim(leg);
    const std::size_t dnew = d + 1;  // also exercises dimension change
    MatrixXc M(dnew, d);
    for (Eigen::Index i = 0; i < M.size(); ++i) M(i) = rng.next_cplx_normal();
    const Tensor got = apply_matrix(M, t, leg);
    // Reference: write M as a tensor and contract, then restore leg order.
    constexpr Leg tmp = Leg::aux(99);
    Tensor mt({tmp, leg}, {dnew, d});
    for (std::size_t r = 0; r < dnew; ++r)
      for (std::size_t c = 0; c < d; ++c)
        mt.at({r, c}) = M(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    Tensor ref = contract(mt, t, {{leg, leg}});
    ref.rename_leg(tmp, leg);
    EXPECT_LT(max_abs_diff(got, ref), 1e-12);
  }
}

TEST(ApplyMatrix, AccumulateAddsWithCoefficient) {
  const Tensor t = make_random({A0, A1}, {4, 3}, 80);
  MatrixXc M = MatrixXc::Identity(4, 4) * cplx{2.0, 0.0};
  Tensor out = t;
  accumulate_apply_matrix(out, cplx{0.5, 0.5}, M, t, A0);
  for (std::size_t i = 0; i < t.size(); ++i)
    EXPECT_LT(std::abs(out[i] - t[i] * cplx{2.0, 1.0}), 1e-14);
}

TEST(Factorize, QrProperties) {
  const Tensor t = make_random({A0, A1, A2}, {3, 4, 5}, 91);
  constexpr Leg bond = Leg::aux(50);
  const auto res = factorize(t, {A0, A2}, FactorizeMode::qr, bond);
  EXPECT_EQ(res.kept, 4u);  // min(15, 4)
  EXPECT_EQ(res.isometry.legs(), (std::vector<Leg>{A0, A2, bond}));
  EXPECT_EQ(res.remainder.legs(), (std::vector<Leg>{bond, A1}));
  EXPECT_LT(isometry_defect(res.isometry, bond), 1e-13);
  const Tensor back = contract(res.isometry, res.remainder, {{bond, bond}});
  EXPECT_LT(max_abs_diff(back, t), 1e-12);
  // R diagonal real and non-negative; here kept == cols so R is square upper.
  for (std::size_t i = 0; i < res.kept; ++i) {
    const cplx rii = res.remainder.at({i, i});
    EXPECT_NEAR(rii.imag(), 0.0, 1e-13);
    EXPECT_GE(rii.real(), -1e-13);
    for (std::size_t j = 0; j < i; ++j)
      EXPECT_LT(std::abs(res.remainder.at({i, j})), 1e-13);
  }
}

TEST(Factorize, QrHandlesRankDeficiency) {
  // Two identical columns: rank 1, but Q must still be a clean isometry.
  Tensor t({A0, A1}, {4, 2});
  Rng rng(92);
  for (std::size_t i = 0; i < 4; ++i) {
    const cplx v = rng.next_cplx_normal();
    t.at({i, 0}) = v;
    t.at({i, 1}) = v;
  }
  const auto res = factorize(t, {A0}, FactorizeMode::qr, Leg::aux(50));
  EXPECT_LT(isometry_defect(res.isometry, Leg::aux(50)), 1e-13);
  const Tensor back = contract(res.isometry, res.remainder, {{Leg::aux(50), Leg::aux(50)}});
  EXPECT_LT(max_abs_diff(back, t), 1e-13);
}

TEST(Factorize, SvdReconstructsAndOrdersValues) {
  const Tensor t = make_random({A0, A1, A2}, {4, 3, 4}, 93);
  constexpr Leg bond = Leg::aux(51);
  const auto res = factorize(t, {A1, A0}, FactorizeMode::svd, bond);
  EXPECT_EQ(res.kept, 4u);  // min(12, 4)
  EXPECT_EQ(res.singular_values.size(), 4u);
  for (std::size_t i = 1; i < res.singular_values.size(); ++i)
    EXPECT_GE(res.singular_values[i - 1], res.singular_values[i]);
  EXPECT_LT(isometry_defect(res.isometry, bond), 1e-13);
  const Tensor back = contract(res.isometry, res.remainder, {{bond, bond}});
  EXPECT_LT(max_abs_diff(back, t), 1e-12);
  // Frobenius norm identity: sum of squared singular values.
  double s2 = 0;
  for (double s : res.singular_values) s2 += s * s;
  EXPECT_NEAR(s2, norm(t) * norm(t), 1e-10);
}

TEST(Factorize, SvdTruncationResidualMatchesDroppedValues) {
  const Tensor t = make_random({A0, A1}, {12, 9}, 94);
  constexpr Leg bond = Leg::aux(51);
  const auto full = factorize(t, {A0}, FactorizeMode::svd, bond);
  const std::size_t keep = 4;
  const auto trunc = factorize(t, {A0}, FactorizeMode::svd, bond, keep);
  EXPECT_EQ(trunc.kept, keep);
  EXPECT_EQ(trunc.singular_values.size(), full.singular_values.size());
  const Tensor approx = contract(trunc.isometry, trunc.remainder, {{bond, bond}});
  Tensor diff = t;
  axpy(cplx{-1.0, 0.0}, approx, diff);
  double dropped = 0;
  for (std::size_t i = keep; i < full.singular_values.size(); ++i)
    dropped += full.singular_values[i] * full.singular_values[i];
  EXPECT_NEAR(norm(diff) * norm(diff), dropped, 1e-10);
}

TEST(Factorize, SvdPhaseConventionIsDeterministic) {
  const Tensor t = make_random({A0, A1}, {6, 5}, 95);
  constexpr Leg bond = Leg::aux(51);
  const auto res = factorize(t, {A0}, FactorizeMode::svd, bond);
  // Largest-magnitude entry of each left vector is real positive.
  for (std::size_t c = 0; c < res.kept; ++c) {
    double best = 0;
    cplx lead{0, 0};
    for (std::size_t r = 0; r < 6; ++r) {
      const cplx v = res.isometry.at({r, c});
      if (std::abs(v) > best) {
        best = std::abs(v);
        lead = v;
      }
    }
    EXPECT_NEAR(lead.imag(), 0.0, 1e-12);
    EXPECT_GT(lead.real(), 0.0);
  }
  // Multiplying the input by a global phase must not change the isometry.
  Tensor t2 = t;
  scale(t2, std::exp(cplx{0.0, 0.9}));
  const auto res2 = factorize(t2, {A0}, FactorizeMode::svd, bond);
  EXPECT_LT(max_abs_diff(res2.isometry, res.isometry), 1e-11);
}

TEST(Factorize, ErrorCases) {
  const Tensor t = make_random({A0, A1}, {3, 4}, 96);
  EXPECT_THROW(factorize(t, {A0, A1}, FactorizeMode::qr, Leg::aux(50)), Error);  // no cols
  EXPECT_THROW(factorize(t, std::initializer_list<Leg>{}, FactorizeMode::qr, Leg::aux(50)),
               Error);                                                    // no rows
  EXPECT_THROW(factorize(t, {A0}, FactorizeMode::qr, A1), Error);         // bond collides
  EXPECT_THROW(factorize(t, {A2}, FactorizeMode::qr, Leg::aux(50)), Error);  // unknown row
  EXPECT_THROW(factorize(t, {A0}, FactorizeMode::qr, Leg::aux(50), 2), Error);  // qr truncation
}

TEST(PaddedLeg, EmbedsAndZeroFills) {
  const Tensor t = make_random({A0, A1, A2}, {2, 3, 2}, 97);
  const Tensor p = t.padded_leg(A1, 5);
  EXPECT_EQ(p.dim(A1), 5u);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t k = 0; k < 2; ++k) {
        if (j < 3)
          EXPECT_EQ(p.at({i, j, k}), t.at({i, j, k}));
        else
          EXPECT_EQ(p.at({i, j, k}), cplx(0.0, 0.0));
      }
  EXPECT_THROW(t.padded_leg(A1, 2), Error);
}

TEST(GramMatrix, MatchesDefinition) {
  const Tensor t = make_random({A0, A1, A2}, {3, 2, 4}, 98);
  const MatrixXc g = gram_matrix(t, A1);
  for (std::size_t ip = 0; ip < 2; ++ip)
    for (std::size_t i = 0; i < 2; ++i) {
      cplx ref{0, 0};
      for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t c = 0; c < 4; ++c) ref += std::conj(t.at({a, ip, c})) * t.at({a, i, c});
      EXPECT_LT(std::abs(g(static_cast<Eigen::Index>(ip), static_cast<Eigen::Index>(i)) - ref),
                1e-12);
    }
}

}  // namespace
}  // namespace ttns
