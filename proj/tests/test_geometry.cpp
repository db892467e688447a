#include <cmath>

#include "doctest.h"
#include "scenemaker/errors.hpp"
#include "scenemaker/geometry.hpp"
#include "scenemaker/rng.hpp"
#include "support.hpp"

using namespace scenemaker;

namespace {

Mat3 random_rotation(Rng& rng) {
  // Uniform unit quaternion.
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  return q.toRotationMatrix();
}

PointCloud unit_cube_corners() {
  PointCloud c;
  for (int i = 0; i < 8; ++i) c.emplace_back((i & 1) ? 0.5 : -0.5, (i & 2) ? 0.5 : -0.5, (i & 4) ? 0.5 : -0.5);
  return c;
}

}  // namespace

TEST_CASE("rot6d_to_matrix: identity and scale invariance") {
  CHECK(rot6d_to_matrix({Vec3(1, 0, 0), Vec3(0, 1, 0)}).isApprox(Mat3::Identity(), 1e-12));
  CHECK(rot6d_to_matrix({Vec3(2, 0, 0), Vec3(0, 3, 0)}).isApprox(Mat3::Identity(), 1e-12));
}

TEST_CASE("rot6d_to_matrix: hand-executed Gram-Schmidt") {
  const Mat3 m = rot6d_to_matrix({Vec3(1, 1, 0), Vec3(0, 1, 0)});
  const double h = 1.0 / std::sqrt(2.0);
  CHECK((m.col(0) - Vec3(h, h, 0)).norm() < 1e-12);
  CHECK((m.col(1) - Vec3(-h, h, 0)).norm() < 1e-12);
  CHECK((m.col(2) - Vec3(0, 0, 1)).norm() < 1e-12);
}

TEST_CASE("rot6d_to_matrix: degenerate inputs throw") {
  CHECK_THROWS_AS(rot6d_to_matrix({Vec3(0, 0, 0), Vec3(0, 1, 0)}), DegenerateRotationError);
  CHECK_THROWS_AS(rot6d_to_matrix({Vec3(1, 0, 0), Vec3(1e-10, 0, 0)}), DegenerateRotationError);
  CHECK_THROWS_AS(rot6d_to_matrix({Vec3(1, 2, 3), Vec3(2, 4, 6)}), DegenerateRotationError);
}

TEST_CASE("rotation suite: 1000 random 6D vectors") {
  Rng rng(20240601);
  for (int i = 0; i < 1000; ++i) {
    const Rotation6D r{Vec3(rng.normal(), rng.normal(), rng.normal()), Vec3(rng.normal(), rng.normal(), rng.normal())};
    const Mat3 m = rot6d_to_matrix(r);
    CHECK((m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(std::abs(m.determinant() - 1.0) < 1e-6);
    const Mat3 back = rot6d_to_matrix(matrix_to_rot6d(m));
    CHECK((back - m).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("matrix_to_rot6d: identity, yaw and round trip") {
  const Rotation6D id = matrix_to_rot6d(Mat3::Identity());
  CHECK(id.a1 == Vec3(1, 0, 0));
  CHECK(id.a2 == Vec3(0, 1, 0));
  const Rotation6D yaw = matrix_to_rot6d(rotation_z(M_PI / 2));
  CHECK((yaw.a1 - Vec3(0, 1, 0)).norm() < 1e-12);
  CHECK((yaw.a2 - Vec3(-1, 0, 0)).norm() < 1e-12);
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const Mat3 m = random_rotation(rng);
    CHECK((rot6d_to_matrix(matrix_to_rot6d(m)) - m).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("is_rotation rejects reflections and scaled matrices") {
  CHECK(is_rotation(rotation_y(0.3)));
  Mat3 reflect = Mat3::Identity();
  reflect(2, 2) = -1;
  CHECK_FALSE(is_rotation(reflect));
  CHECK_FALSE(is_rotation(2.0 * Mat3::Identity()));
}

TEST_CASE("apply_pose examples") {
  const PointCloud cloud = testing::random_cloud(3, 50, -0.5, 0.5);
  const PointCloud same = apply_pose(Pose::identity(), cloud);
  for (std::size_t i = 0; i < cloud.size(); ++i) CHECK(same[i] == cloud[i]);  // bit-exact

  Pose p;
  p.size = Vec3(2, 2, 2);
  p.translation = Vec3(1, 0, 0);
  CHECK(apply_pose(p, Vec3(1, 1, 1)) == Vec3(3, 2, 2));

  Pose yaw;
  yaw.rotation = rotation_z(M_PI / 2);
  CHECK((apply_pose(yaw, Vec3(1, 0, 0)) - Vec3(0, 1, 0)).norm() < 1e-12);
}

TEST_CASE("apply_pose with unit size is an isometry") {
  Rng rng(11);
  const PointCloud cloud = testing::random_cloud(12, 40, -0.5, 0.5);
  for (int trial = 0; trial < 20; ++trial) {
    Pose p;
    p.rotation = random_rotation(rng);
    p.translation = Vec3(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5));
    const PointCloud out = apply_pose(p, cloud);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      for (std::size_t j = i + 1; j < cloud.size(); ++j) {
        CHECK(std::abs((out[i] - out[j]).norm() - (cloud[i] - cloud[j]).norm()) < 1e-6);
      }
    }
  }
}

TEST_CASE("aabb basics and IoU examples") {
  const Aabb unit{Vec3(0, 0, 0), Vec3(1, 1, 1)};
  const Aabb shifted{Vec3(0.5, 0, 0), Vec3(1.5, 1, 1)};
  const Aabb far{Vec3(3, 3, 3), Vec3(4, 4, 4)};
  CHECK(aabb_iou_3d(unit, unit).value == 1.0);
  CHECK_FALSE(aabb_intersects(unit, far));
  CHECK(aabb_iou_3d(unit, far).value == 0.0);
  CHECK(aabb_iou_3d(unit, shifted).value == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(aabb_intersects(unit, shifted));

  const Aabb touching{Vec3(1, 0, 0), Vec3(2, 1, 1)};
  CHECK_FALSE(aabb_intersects(unit, touching));

  const Aabb flat{Vec3(0, 0, 0), Vec3(1, 1, 0)};
  const IouResult degenerate = aabb_iou_3d(flat, flat);
  CHECK(degenerate.value == 0.0);
  CHECK(degenerate.degenerate);

  const Aabb box = aabb_of({Vec3(1, -2, 3), Vec3(-1, 4, 0), Vec3(0, 0, 5)});
  CHECK(box.min == Vec3(-1, -2, 0));
  CHECK(box.max == Vec3(1, 4, 5));
  CHECK_THROWS_AS(aabb_of({}), DegenerateGeometryError);
}

TEST_CASE("aabb IoU is symmetric, bounded and 1 only for identical boxes") {
  Rng rng(77);
  for (int i = 0; i < 500; ++i) {
    auto box = [&] {
      const Vec3 a(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
      const Vec3 e(rng.uniform(0.1, 1), rng.uniform(0.1, 1), rng.uniform(0.1, 1));
      return Aabb{a, a + e};
    };
    const Aabb a = box(), b = box();
    const double ab = aabb_iou_3d(a, b).value, ba = aabb_iou_3d(b, a).value;
    CHECK(ab == ba);
    CHECK(ab >= 0.0);
    CHECK(ab < 1.0);
    CHECK(aabb_iou_3d(a, a).value == 1.0);
  }
}

TEST_CASE("normalize_scene examples") {
  const PointCloud cube = unit_cube_corners();
  Pose big;
  big.size = Vec3(2, 2, 2);
  const PosedObject centered[] = {{&cube, big}};
  const NormalizedScene a = normalize_scene(centered);
  CHECK(a.normalization.center.norm() < 1e-12);
  CHECK(a.normalization.scale == doctest::Approx(1.0));
  CHECK((a.poses[0].translation).norm() < 1e-12);
  CHECK(a.poses[0].size.isApprox(Vec3(2, 2, 2)));

  Pose moved;
  moved.translation = Vec3(10, 0, 0);
  const PosedObject one[] = {{&cube, moved}};
  const NormalizedScene b = normalize_scene(one);
  CHECK((b.normalization.center - Vec3(10, 0, 0)).norm() < 1e-6);
}

TEST_CASE("normalize_scene round trip and unit-cube fit") {
  Rng rng(9);
  const PointCloud cloud = testing::random_cloud(10, 200, -0.5, 0.5);
  std::vector<PosedObject> objects;
  for (int i = 0; i < 4; ++i) {
    Pose p;
    p.rotation = random_rotation(rng);
    p.translation = Vec3(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0, 2));
    p.size = Vec3(rng.uniform(0.2, 1), rng.uniform(0.2, 1), rng.uniform(0.2, 1));
    objects.push_back({&cloud, p});
  }
  const NormalizedScene n = normalize_scene(objects);
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const Pose back = n.normalization.from_normalized(n.poses[i]);
    CHECK((back.translation - objects[i].pose.translation).norm() < 1e-6);
    CHECK((back.size - objects[i].pose.size).norm() < 1e-6);
    CHECK(n.poses[i].rotation == objects[i].pose.rotation);
    for (const Vec3& p : apply_pose(n.poses[i], cloud)) CHECK(p.cwiseAbs().maxCoeff() <= 1.0 + 1e-9);
  }
}

TEST_CASE("normalization rejects degenerate input") {
  CHECK_THROWS_AS(fit_normalization({}), DegenerateGeometryError);
  CHECK_THROWS_AS(fit_normalization({Vec3(1, 1, 1), Vec3(1, 1, 1)}), DegenerateGeometryError);
}

TEST_CASE("compose_scene") {
  const PointCloud a = testing::random_cloud(1, 30, -0.5, 0.5);
  const PointCloud b = testing::random_cloud(2, 45, -0.5, 0.5);
  const PointCloud objs1[] = {a};
  const Pose id[] = {Pose::identity()};
  const ComposedScene single = compose_scene(objs1, id);
  CHECK(single.points == a);

  Pose pa, pb;
  pa.translation = Vec3(-3, 0, 0);
  pb.translation = Vec3(3, 0, 0);
  pb.rotation = rotation_z(0.7);
  const PointCloud objs[] = {a, b};
  const Pose poses[] = {pa, pb};
  const ComposedScene scene = compose_scene(objs, poses);
  CHECK(scene.points.size() == a.size() + b.size());
  CHECK(std::count(scene.owner.begin(), scene.owner.end(), 1u) == static_cast<long>(b.size()));
  const Aabb joined = aabb_of(apply_pose(pa, a)).merged(aabb_of(apply_pose(pb, b)));
  const Aabb composed = aabb_of(scene.points);
  CHECK(composed.min == joined.min);
  CHECK(composed.max == joined.max);

  const Pose two[] = {pa, pb};
  CHECK_THROWS_AS(compose_scene(objs1, two), ConfigError);
  CHECK_THROWS_AS(compose_scene({}, {}), ConfigError);
}

TEST_CASE("seed derivation is stable and path-separated") {
  CHECK(derive_seed(42, "a") == derive_seed(42, "a"));
  CHECK(derive_seed(42, "a") != derive_seed(42, "b"));
  CHECK(derive_seed(42, "a") != derive_seed(43, "a"));
  // FNV-1a test vector.
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  Rng r1(7), r2(7);
  for (int i = 0; i < 100; ++i) CHECK(r1.next() == r2.next());
  Rng u(3);
  for (int i = 0; i < 1000; ++i) {
    const double x = u.uniform();
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
    CHECK(u.index(7) < 7u);
  }
}
