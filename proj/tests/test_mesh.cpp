#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rigrefine/mesh.hpp"
#include "test_util.hpp"

using namespace rigrefine;
using namespace rigrefine::testutil;

namespace {

// Fills a single-level field from an analytic inside/outside predicate.
VoxelField field_from_predicate(const Eigen::AlignedBox3d& bounds, int res,
                                const std::function<bool(const Vec3&)>& inside) {
  VoxelField field(bounds, {res}, {});
  const Vec3 lo = bounds.min();
  const Vec3 extent = bounds.max() - lo;
  for (int k = 0; k < res; ++k) {
    for (int j = 0; j < res; ++j) {
      for (int i = 0; i < res; ++i) {
        const Vec3 p(lo.x() + extent.x() * i / (res - 1), lo.y() + extent.y() * j / (res - 1),
                     lo.z() + extent.z() * k / (res - 1));
        field.density(0)[static_cast<std::size_t>(i) + res * j + res * res * k] =
            inside(p) ? 30.0 : -30.0;
      }
    }
  }
  return field;
}

TriangleMesh random_mesh(CounterRng& rng, int n_triangles, double scale = 5.0) {
  TriangleMesh mesh;
  for (int i = 0; i < n_triangles; ++i) {
    const Vec3 base(rng.uniform(-scale, scale), rng.uniform(-scale, scale),
                    rng.uniform(-scale, scale));
    const std::uint32_t v = static_cast<std::uint32_t>(mesh.vertices.size());
    mesh.vertices.push_back(base);
    mesh.vertices.push_back(base + Vec3(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                                        rng.uniform(-1.0, 1.0)));
    mesh.vertices.push_back(base + Vec3(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                                        rng.uniform(-1.0, 1.0)));
    mesh.triangles.push_back({v, v + 1, v + 2});
  }
  return mesh;
}

double exhaustive_sq_distance(const TriangleMesh& mesh, const Vec3& p) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& t : mesh.triangles) {
    const double d =
        point_triangle_sq_distance(p, mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
    if (d < best) best = d;
  }
  return best;
}

}  // namespace

TEST_CASE("sphere isosurface sits at the sphere radius") {
  const Vec3 center(5.0, 5.0, 5.0);
  const double radius = 3.0;
  const Eigen::AlignedBox3d bounds(Vec3::Zero(), Vec3(10.0, 10.0, 10.0));
  const int res = 48;
  const VoxelField field = field_from_predicate(
      bounds, res, [&](const Vec3& p) { return (p - center).norm() < radius; });

  const TriangleMesh mesh = extract_mesh(field, 10.0, 64);
  REQUIRE_FALSE(mesh.empty());
  const double voxel = 10.0 / (res - 1);
  for (const Vec3& v : mesh.vertices) {
    CHECK(std::abs((v - center).norm() - radius) < 2.0 * voxel);
  }
}

TEST_CASE("empty field yields EmptyMeshError") {
  VoxelField field(Eigen::AlignedBox3d(Vec3::Zero(), Vec3::Ones()), {8}, {});
  for (double& d : field.density(0)) d = -30.0;
  CHECK_THROWS_AS(extract_mesh(field, 5.0, 16), EmptyMeshError);
  CHECK_THROWS_AS(extract_mesh(field, 5.0, 4), Error);  // resolution too low
}

TEST_CASE("box isosurface recovers the box extents") {
  const Eigen::AlignedBox3d bounds(Vec3::Zero(), Vec3(10.0, 10.0, 10.0));
  const Eigen::AlignedBox3d solid(Vec3(3.0, 2.0, 4.0), Vec3(7.0, 8.0, 6.0));
  const int res = 64;
  const VoxelField field =
      field_from_predicate(bounds, res, [&](const Vec3& p) { return solid.contains(p); });

  const TriangleMesh mesh = extract_mesh(field, 10.0, 80);
  const Eigen::AlignedBox3d got = mesh.bounding_box();
  const double voxel = 10.0 / (res - 1);
  CHECK((got.min() - solid.min()).cwiseAbs().maxCoeff() < voxel);
  CHECK((got.max() - solid.max()).cwiseAbs().maxCoeff() < voxel);
}

TEST_CASE("bvh distance is bit-equal to the exhaustive scan") {
  CounterRng rng(60);
  const TriangleMesh mesh = random_mesh(rng, 200);
  const TriangleBvh bvh(mesh);
  for (int i = 0; i < 10000; ++i) {
    const Vec3 p(rng.uniform(-8.0, 8.0), rng.uniform(-8.0, 8.0), rng.uniform(-8.0, 8.0));
    const double a = bvh.squared_distance(p);
    const double b = exhaustive_sq_distance(mesh, p);
    CHECK(a == b);
    CHECK(bvh.distance(p) == std::sqrt(b));
  }
}

TEST_CASE("points on triangles have zero distance") {
  CounterRng rng(61);
  const TriangleMesh mesh = random_mesh(rng, 50);
  const TriangleBvh bvh(mesh);
  for (int i = 0; i < 500; ++i) {
    const auto& t = mesh.triangles[rng.next_below(mesh.triangles.size())];
    double u = rng.next_double(), v = rng.next_double();
    if (u + v > 1.0) {
      u = 1.0 - u;
      v = 1.0 - v;
    }
    const Vec3 p = mesh.vertices[t[0]] + u * (mesh.vertices[t[1]] - mesh.vertices[t[0]]) +
                   v * (mesh.vertices[t[2]] - mesh.vertices[t[0]]);
    CHECK(bvh.distance(p) < 1e-9);
  }
}

TEST_CASE("mesh distance is invariant under a joint rigid transform") {
  CounterRng rng(62);
  TriangleMesh mesh = random_mesh(rng, 120);
  const TriangleBvh bvh(mesh);

  const Pose rigid = random_pose(rng, 10.0);
  TriangleMesh moved = mesh;
  moved.transform(rigid);
  const TriangleBvh moved_bvh(moved);

  for (int i = 0; i < 300; ++i) {
    const Vec3 p(rng.uniform(-8.0, 8.0), rng.uniform(-8.0, 8.0), rng.uniform(-8.0, 8.0));
    CHECK(std::abs(bvh.distance(p) - moved_bvh.distance(rigid.apply(p))) < 1e-9);
  }
}
