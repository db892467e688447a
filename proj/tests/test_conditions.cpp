#include <algorithm>
#include <numeric>

#include "doctest.h"
#include "scenemaker/conditions.hpp"
#include "scenemaker/layout.hpp"
#include "scenemaker/rng.hpp"
#include "support.hpp"

using namespace scenemaker;

namespace {

struct Encoders {
  nn::ParameterSet<double> ps;
  ConditionEncoders<double> enc;
  explicit Encoders(const EncoderSettings& s = {32, 16, 4, 8}) : enc(ps, s) {
    Rng rng(123);
    for (std::size_t i = 0; i < ps.size(); ++i) {
      ps[i] = ps[i].unaryExpr([&](double) { return 0.3 * rng.normal(); });
    }
  }
};

PointCloud shuffled(PointCloud c, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = c.size(); i > 1; --i) std::swap(c[i - 1], c[rng.index(i)]);
  return c;
}

}  // namespace

TEST_CASE("k=1 pooling is permutation and duplication invariant, bit-exact") {
  Encoders e;
  const PointCloud c = testing::random_cloud(1, 200);
  const auto token = e.enc.encode_points(e.ps, c, 1);
  CHECK(token.rows() == 1);
  for (std::uint64_t s = 0; s < 5; ++s) CHECK(e.enc.encode_points(e.ps, shuffled(c, s), 1) == token);
  PointCloud doubled = c;
  doubled.insert(doubled.end(), c.begin(), c.end());
  CHECK(e.enc.encode_points(e.ps, doubled, 1) == token);
  CHECK(e.enc.encode_geometry(e.ps, shuffled(c, 9)) == e.enc.encode_geometry(e.ps, c));
}

TEST_CASE("farthest point sampling: one center per well-separated cluster") {
  PointCloud c = testing::random_cloud(2, 100, -0.1, 0.1);
  PointCloud far = testing::random_cloud(3, 100, -0.1, 0.1);
  for (Vec3& p : far) p += Vec3(10, 0, 0);
  c.insert(c.end(), far.begin(), far.end());
  const auto picks = farthest_point_sample(c, 2);
  REQUIRE(picks.size() == 2);
  CHECK((picks[0] < 100) != (picks[1] < 100));

  // The selected set does not depend on input order.
  const PointCloud perm = shuffled(c, 4);
  auto points_of = [](const PointCloud& cloud, const std::vector<std::size_t>& idx) {
    PointCloud out;
    for (std::size_t i : idx) out.push_back(cloud[i]);
    return out;
  };
  CHECK(points_of(c, farthest_point_sample(c, 7)) == points_of(perm, farthest_point_sample(perm, 7)));
  CHECK(farthest_point_sample(c, 1000).size() == c.size());
}

TEST_CASE("group assignment is nearest center") {
  const PointCloud c = testing::random_cloud(5, 300);
  const PointGroups g = group_points(c, 6);
  REQUIRE(g.centers.size() == 6);
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double mine = (c[i] - g.centers[static_cast<std::size_t>(g.assignment[i])]).squaredNorm();
    for (const Vec3& other : g.centers) CHECK(mine <= (c[i] - other).squaredNorm());
  }
}

TEST_CASE("token counts and the empty-condition marker") {
  Encoders e;
  const PointCloud scene = testing::random_cloud(6, 500);
  CHECK(e.enc.encode_global(e.ps, scene).rows() == e.enc.settings().k_global);
  CHECK(e.enc.encode_points(e.ps, testing::random_cloud(7, 3), 8).rows() == 3);  // k clamped

  const auto empty_local = e.enc.encode_local(e.ps, std::nullopt);
  CHECK(empty_local.rows() == 1);
  CHECK(empty_local == e.ps[e.ps.find("cond.empty")]);
  CHECK(e.enc.encode_geometry(e.ps, {}) == e.ps[e.ps.find("cond.empty")]);
}

TEST_CASE("local tokens ignore rigid scene translation; global tokens do not") {
  Encoders e;
  const PointCloud partial = testing::random_cloud(8, 300, 0.2, 0.6);
  PointCloud moved = partial;
  for (Vec3& p : moved) p += Vec3(0.3, -0.2, 0.1);
  const auto a = e.enc.encode_local(e.ps, normalize_object_partial(partial));
  const auto b = e.enc.encode_local(e.ps, normalize_object_partial(moved));
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-6);
  const auto ga = e.enc.encode_global(e.ps, partial);
  const auto gb = e.enc.encode_global(e.ps, moved);
  CHECK((ga - gb).cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("local keys depend only on the object's own normalized cloud") {
  Encoders e;
  ConditionInput in;
  for (int i = 0; i < 3; ++i) {
    in.geometry.push_back(testing::random_cloud(static_cast<std::uint64_t>(10 + i), 100, -0.5, 0.5));
    in.local.push_back(normalize_object_partial(testing::random_cloud(static_cast<std::uint64_t>(20 + i), 80)));
  }
  in.local[1] = std::nullopt;
  in.global = testing::random_cloud(30, 400);
  in.global_owner.resize(in.global.size());
  for (std::size_t p = 0; p < in.global.size(); ++p) in.global_owner[p] = static_cast<std::uint32_t>(p % 3);

  const EncodedConditions<double> base = e.enc.encode(e.ps, in, nullptr);
  ConditionInput mutated = in;
  for (Vec3& p : mutated.global) p = 0.5 * p + Vec3(0.1, 0.2, 0.3);
  mutated.geometry[0] = testing::random_cloud(99, 100, -0.5, 0.5);
  const EncodedConditions<double> other = e.enc.encode(e.ps, mutated, nullptr);
  REQUIRE(base.layout.kind == other.layout.kind);
  int locals = 0;
  for (int r = 0; r < base.layout.size(); ++r) {
    if (base.layout.kind[static_cast<std::size_t>(r)] != ConditionKeys::Kind::Local) continue;
    ++locals;
    CHECK(base.keys.row(r) == other.keys.row(r));
    CHECK(base.key_position[static_cast<std::size_t>(r)] == base.layout.owner[static_cast<std::size_t>(r)]);
  }
  CHECK(locals == 4 + 1 + 4);  // k_local tokens, the empty marker, k_local tokens
  CHECK(base.geometry.row(1) == other.geometry.row(1));
  CHECK(base.geometry.row(0) != other.geometry.row(0));
}

TEST_CASE("encoders are deterministic") {
  Encoders a, b;
  const PointCloud c = testing::random_cloud(40, 256);
  CHECK(a.enc.encode_points(a.ps, c, 4) == b.enc.encode_points(b.ps, c, 4));
}
