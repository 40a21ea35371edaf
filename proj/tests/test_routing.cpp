#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "hdm/routing.hpp"
#include "test_util.hpp"

using namespace hdm;
using namespace hdm::routing;
using hdm::testing::error_kind;
using hdm::testing::random_mat;

TEST(RouteMask, RateBoundaries) {
  const auto none = make_route_mask(64, 0.0, 1);
  EXPECT_TRUE(none.bypassed.empty());
  EXPECT_EQ(none.kept.size(), 64u);
  const auto all = make_route_mask(64, 1.0, 1);
  EXPECT_TRUE(all.kept.empty());
  EXPECT_EQ(all.bypassed.size(), 64u);
}

TEST(RouteMask, HalfOf256) {
  const auto m = make_route_mask(256, 0.5, 9);
  EXPECT_EQ(m.kept.size(), 128u);
  EXPECT_EQ(m.bypassed.size(), 128u);
}

TEST(RouteMask, PartitionsTheTokenSet) {
  for (double rate : {0.1, 0.25, 0.5, 0.75}) {
    const auto m = make_route_mask(100, rate, 17);
    EXPECT_EQ(static_cast<long>(m.bypassed.size()), std::lround(rate * 100));
    std::vector<int> all = m.kept;
    all.insert(all.end(), m.bypassed.begin(), m.bypassed.end());
    std::sort(all.begin(), all.end());
    std::vector<int> expected(100);
    std::iota(expected.begin(), expected.end(), 0);
    EXPECT_EQ(all, expected);
    EXPECT_TRUE(std::is_sorted(m.kept.begin(), m.kept.end()));
    EXPECT_TRUE(std::is_sorted(m.bypassed.begin(), m.bypassed.end()));
  }
}

TEST(RouteMask, SeedDetermined) {
  EXPECT_EQ(make_route_mask(256, 0.5, 3).bypassed, make_route_mask(256, 0.5, 3).bypassed);
  EXPECT_NE(make_route_mask(256, 0.5, 3).bypassed, make_route_mask(256, 0.5, 4).bypassed);
}

TEST(RouteMask, RoughlyUniformSelection) {
  std::vector<int> hits(16, 0);
  for (std::uint64_t s = 0; s < 4000; ++s) {
    for (int i : make_route_mask(16, 0.25, s).bypassed) ++hits[static_cast<std::size_t>(i)];
  }
  for (int h : hits) EXPECT_NEAR(h / 4000.0, 0.25, 0.03);
}

TEST(RouteMask, RejectsInvalidRate) {
  EXPECT_EQ(error_kind([] { make_route_mask(10, -0.1, 0); }), ErrorKind::kInvalidRate);
  EXPECT_EQ(error_kind([] { make_route_mask(10, 1.5, 0); }), ErrorKind::kInvalidRate);
  EXPECT_EQ(error_kind([] { make_route_mask(10, std::nan(""), 0); }), ErrorKind::kInvalidRate);
}

TEST(SplitMerge, IdentityRoundTrip) {
  ag::Tape<double> tape;
  const auto x = tape.constant(random_mat<double>(20, 5, 1));
  const auto mask = make_route_mask(16, 0.5, 2);
  const auto split = route_split(x, 16, mask);
  EXPECT_EQ(split.kept.rows(), 8 + 4);
  EXPECT_EQ(split.bypass.rows(), 8);
  EXPECT_EQ(route_merge(split.kept, split).value(), x.value());
}

TEST(SplitMerge, ConservesRowMultiset) {
  ag::Tape<double> tape;
  const auto xm = random_mat<double>(12, 3, 3);
  const auto split = route_split(tape.constant(xm), 10, make_route_mask(10, 0.3, 4));
  std::vector<std::vector<double>> in, out;
  for (int r = 0; r < 12; ++r) in.push_back({xm(r, 0), xm(r, 1), xm(r, 2)});
  for (const auto* part : {&split.kept, &split.bypass}) {
    const auto& v = part->value();
    for (int r = 0; r < v.rows(); ++r) out.push_back({v(r, 0), v(r, 1), v(r, 2)});
  }
  std::sort(in.begin(), in.end());
  std::sort(out.begin(), out.end());
  EXPECT_EQ(in, out);
}

// Kept rows transformed by f, bypassed rows untouched, text rows at the end.
TEST(SplitMerge, MatchesHandAssembledStream) {
  ag::Tape<double> tape;
  const auto xm = random_mat<double>(9, 4, 5);
  const auto mask = make_route_mask(6, 0.5, 6);
  const auto split = route_split(tape.constant(xm), 6, mask);
  const auto processed = ag::scale(split.kept, 3.0);
  const auto merged = route_merge(processed, split).value();
  ag::Mat<double> expected = xm;
  for (int i : mask.kept) expected.row(i) *= 3.0;
  for (int r = 6; r < 9; ++r) expected.row(r) *= 3.0;
  EXPECT_EQ(merged, expected);
}

TEST(SplitMerge, GradientOfBypassedRowsIsIdentity) {
  ag::Tape<double> tape;
  const auto x = tape.leaf(random_mat<double>(8, 2, 7));
  const auto mask = make_route_mask(8, 0.5, 8);
  const auto split = route_split(x, 8, mask);
  const auto merged = route_merge(ag::scale(split.kept, 2.0), split);
  tape.backward(ag::sum(merged));
  for (int i : mask.bypassed) EXPECT_EQ(x.grad().row(i), ag::Mat<double>::Ones(1, 2));
  for (int i : mask.kept) EXPECT_EQ(x.grad().row(i), ag::Mat<double>::Constant(1, 2, 2.0));
}

TEST(SplitMerge, RejectsMismatchedMask) {
  ag::Tape<double> tape;
  const auto x = tape.constant(random_mat<double>(8, 2, 7));
  EXPECT_EQ(error_kind([&] { route_split(x, 8, make_route_mask(7, 0.5, 1)); }), ErrorKind::kInvariant);
}

TEST(RegionBounds, Examples) {
  EXPECT_EQ(routed_region_bounds(20, 1, 3), std::make_pair(1, 17));
  EXPECT_EQ(routed_region_bounds(20, 0, 0), std::make_pair(0, 20));
  EXPECT_EQ(routed_region_bounds(backbone::XutConfig::xut_base()), std::make_pair(1, 17));
  EXPECT_EQ(routed_region_bounds(backbone::XutConfig::toy()), std::make_pair(1, 7));
  EXPECT_EQ(routed_region_bounds(4, 2, 2), std::make_pair(2, 2));
}

TEST(RegionBounds, RejectsOversizedBoundary) {
  EXPECT_EQ(error_kind([] { routed_region_bounds(4, 3, 2); }), ErrorKind::kInvalidConfig);
  EXPECT_EQ(error_kind([] { routed_region_bounds(4, -1, 0); }), ErrorKind::kInvalidConfig);
}

TEST(Guidance, MixingFormula) {
  const auto c = random_mat<double>(3, 4, 1);
  const auto u = random_mat<double>(3, 4, 2);
  EXPECT_EQ(auto_guidance(c, u, 1.0), c);
  EXPECT_EQ(auto_guidance(c, u, 0.0), u);
  const ag::Mat<double> ref = u + 2.5 * (c - u);
  EXPECT_LE((auto_guidance(c, u, 2.5) - ref).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Guidance, ActivationRule) {
  EXPECT_FALSE((GuidanceSpec{1.0, 0.0, 0.0}).auto_guidance());
  EXPECT_TRUE((GuidanceSpec{1.0, 0.0, 0.3}).auto_guidance());
  EXPECT_TRUE((GuidanceSpec{1.0, 0.25, 0.5}).auto_guidance());
}

TEST(Guidance, AcceptsOrderedRates) {
  EXPECT_NO_THROW((GuidanceSpec{2.0, 0.25, 0.5}).validate());
  EXPECT_NO_THROW((GuidanceSpec{2.0, 0.0, 0.5}).validate());
  EXPECT_NO_THROW((GuidanceSpec{2.0, 0.0, 0.0}).validate());
}

TEST(Guidance, RejectsUnorderedRates) {
  EXPECT_EQ(error_kind([] { GuidanceSpec{2.0, 0.5, 0.25}.validate(); }), ErrorKind::kInvalidGuidance);
  EXPECT_EQ(error_kind([] { GuidanceSpec{2.0, 0.3, 0.3}.validate(); }), ErrorKind::kInvalidGuidance);
  EXPECT_EQ(error_kind([] { GuidanceSpec{2.0, 0.5, 0.9}.validate(); }), ErrorKind::kInvalidGuidance);
  EXPECT_EQ(error_kind([] { GuidanceSpec{2.0, 0.2, 1.5}.validate(); }), ErrorKind::kInvalidGuidance);
}

TEST(SplitMerge, FullBypassLeavesImageRowsUntouched) {
  ag::Tape<double> tape;
  const auto xm = random_mat<double>(10, 3, 11);
  const auto split = route_split(tape.constant(xm), 8, make_route_mask(8, 1.0, 1));
  const auto merged = route_merge(ag::scale(split.kept, -1.0), split).value();
  EXPECT_EQ(merged.topRows(8), xm.topRows(8));
  EXPECT_EQ(merged.bottomRows(2), (-xm.bottomRows(2)).eval());
}
