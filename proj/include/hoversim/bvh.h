#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace hoversim
{

struct Aabb
{
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = Eigen::Vector3d::Constant(-std::numeric_limits<double>::infinity());

  void extend(const Eigen::Vector3d& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }

  void extend(const Aabb& b) {
    lo = lo.cwiseMin(b.lo);
    hi = hi.cwiseMax(b.hi);
  }

  bool empty() const {
    return (lo.array() > hi.array()).any();
  }

  Eigen::Vector3d center() const {
    return 0.5 * (lo + hi);
  }

  double surfaceArea() const {
    if (empty()) {
      return 0.0;
    }
    const Eigen::Vector3d e = hi - lo;
    return 2.0 * (e.x() * e.y() + e.y() * e.z() + e.z() * e.x());
  }
};

/// Ray with precomputed reciprocal direction for slab tests.
struct Ray
{
  Eigen::Vector3d origin;
  Eigen::Vector3d direction;
  double          inv[3];
  int             sign[3];

  Ray(const Eigen::Vector3d& o, const Eigen::Vector3d& d) : origin(o), direction(d) {
    for (int i = 0; i < 3; i++) {
      // a zero component would produce 0 * inf = NaN in the slab test
      const double di = d(i) == 0.0 ? std::copysign(1e-300, d(i)) : d(i);
      inv[i]          = 1.0 / di;
      sign[i]         = inv[i] < 0.0 ? 1 : 0;
    }
  }
};

/// Node bounds are stored as floats rounded outward; the slab test itself runs in double.
struct BvhNode
{
  float         bounds[2][3];  // [lo|hi][axis]
  std::uint32_t index;         // first primitive (leaf) or left child (interior; right = index + 1)
  std::uint32_t count;         // primitive count, 0 for interior nodes
};

/**
 * @brief Bounding-volume hierarchy over axis-aligned boxes, built with binned SAH.
 *
 * The structure only knows box indices; callers resolve those to their own
 * primitives inside the leaf callback.
 */
class Bvh {
public:
  void build(std::span<const Aabb> boxes, int max_leaf_size = 4);

  void clear() {
    nodes_.clear();
    order_.clear();
  }

  bool empty() const {
    return nodes_.empty();
  }

  Aabb bounds() const;

  const std::vector<BvhNode>& nodes() const {
    return nodes_;
  }

  /// Primitive indices in leaf order.
  const std::vector<std::uint32_t>& order() const {
    return order_;
  }

  /// Entry distance of the ray into the node, or +inf when it misses within [0, t_max].
  static double slab(const BvhNode& node, const Ray& ray, double t_max) {
    double t0 = (node.bounds[ray.sign[0]][0] - ray.origin.x()) * ray.inv[0];
    double t1 = (node.bounds[1 - ray.sign[0]][0] - ray.origin.x()) * ray.inv[0];

    const double y0 = (node.bounds[ray.sign[1]][1] - ray.origin.y()) * ray.inv[1];
    const double y1 = (node.bounds[1 - ray.sign[1]][1] - ray.origin.y()) * ray.inv[1];
    t0              = y0 > t0 ? y0 : t0;
    t1              = y1 < t1 ? y1 : t1;

    const double z0 = (node.bounds[ray.sign[2]][2] - ray.origin.z()) * ray.inv[2];
    const double z1 = (node.bounds[1 - ray.sign[2]][2] - ray.origin.z()) * ray.inv[2];
    t0              = z0 > t0 ? z0 : t0;
    t1              = z1 < t1 ? z1 : t1;

    t0 = t0 > 0.0 ? t0 : 0.0;
    t1 = t1 < t_max ? t1 : t_max;

    return t0 <= t1 ? t0 : std::numeric_limits<double>::infinity();
  }

  /**
   * @brief Front-to-back traversal.
   *
   * `leaf(primitive, t_max)` tests one primitive and shrinks `t_max` on a closer hit.
   */
  template <class LeafFn>
  void traverse(const Ray& ray, double& t_max, LeafFn&& leaf) const {

    if (nodes_.empty() || !(slab(nodes_[0], ray, t_max) <= t_max)) {
      return;
    }

    struct Entry
    {
      std::uint32_t node;
      double        t;
    };
    Entry stack[64];
    int   top = 0;

    stack[top++] = {0, 0.0};

    while (top > 0) {
      const Entry e = stack[--top];
      if (e.t > t_max) {
        continue;
      }

      const BvhNode& n = nodes_[e.node];

      if (n.count > 0) {
        for (std::uint32_t i = 0; i < n.count; i++) {
          leaf(order_[n.index + i], t_max);
        }
        continue;
      }

      const std::uint32_t l  = n.index;
      const std::uint32_t r  = n.index + 1;
      const double        tl = slab(nodes_[l], ray, t_max);
      const double        tr = slab(nodes_[r], ray, t_max);

      // push the far child first so the near one is popped next
      if (tl <= tr) {
        if (tr <= t_max) {
          stack[top++] = {r, tr};
        }
        if (tl <= t_max) {
          stack[top++] = {l, tl};
        }
      } else {
        if (tl <= t_max) {
          stack[top++] = {l, tl};
        }
        if (tr <= t_max) {
          stack[top++] = {r, tr};
        }
      }
    }
  }

private:
  std::vector<BvhNode>       nodes_;
  std::vector<std::uint32_t> order_;
};

}  // namespace hoversim
