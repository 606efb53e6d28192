#pragma once

#include <Eigen/Geometry>
#include <array>
#include <cstdint>
#include <vector>

#include "rigrefine/geometry.hpp"
#include "rigrefine/scene_field.hpp"

namespace rigrefine {

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;

  bool empty() const { return triangles.empty(); }
  Eigen::AlignedBox3d bounding_box() const;
  void transform(const Pose& pose);
};

// Marching-cubes isosurface of the decoded density at sigma = iso, sampled on
// a (resolution+1)^3 lattice over the field bounds. Shared edge vertices keep
// the surface watertight where the sampling allows. Throws EmptyMeshError if
// the density never crosses iso.
TriangleMesh extract_mesh(const VoxelField& field, double iso, int resolution);

// Squared distance from p to triangle (a, b, c). Used by both the BVH and
// the exhaustive checks so the two routes agree bit for bit.
double point_triangle_sq_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

// Median-split BVH over mesh triangles for closest-distance queries. Pruning
// is conservative, so the returned distance equals the exhaustive minimum
// exactly.
class TriangleBvh {
 public:
  explicit TriangleBvh(const TriangleMesh& mesh);

  double squared_distance(const Vec3& p) const;
  double distance(const Vec3& p) const;

 private:
  struct Node {
    Eigen::AlignedBox3d box;
    std::int32_t left = -1;   // node index, or -1 for leaf
    std::int32_t right = -1;
    std::uint32_t first = 0;  // leaf triangle range
    std::uint32_t count = 0;
  };

  std::vector<Node> nodes_;
  std::vector<std::array<Vec3, 3>> triangles_;  // leaf order
  std::uint32_t build(std::vector<std::uint32_t>& ids, std::uint32_t begin, std::uint32_t end,
                      const std::vector<Vec3>& centroids, const TriangleMesh& mesh);
};

}  // namespace rigrefine
