#include <hoversim/bvh.h>

#include <algorithm>
#include <array>
#include <stdexcept>

namespace hoversim
{

namespace
{

constexpr int kBins = 16;

float roundDown(double v) {
  float f = static_cast<float>(v);
  if (static_cast<double>(f) > v) {
    f = std::nextafter(f, -std::numeric_limits<float>::infinity());
  }
  return f;
}

float roundUp(double v) {
  float f = static_cast<float>(v);
  if (static_cast<double>(f) < v) {
    f = std::nextafter(f, std::numeric_limits<float>::infinity());
  }
  return f;
}

struct Builder
{
  std::span<const Aabb>        boxes;
  std::vector<Eigen::Vector3d> centers;
  std::vector<std::uint32_t>&  order;
  std::vector<BvhNode>&        nodes;
  int                          max_leaf;

  void setBounds(BvhNode& node, const Aabb& b) {
    for (int a = 0; a < 3; a++) {
      node.bounds[0][a] = roundDown(b.lo(a));
      node.bounds[1][a] = roundUp(b.hi(a));
    }
  }

  Aabb rangeBounds(std::uint32_t first, std::uint32_t count) const {
    Aabb b;
    for (std::uint32_t i = first; i < first + count; i++) {
      b.extend(boxes[order[i]]);
    }
    return b;
  }

  void split(std::uint32_t node_index, std::uint32_t first, std::uint32_t count, int depth) {

    const Aabb bounds = rangeBounds(first, count);
    setBounds(nodes[node_index], bounds);

    if (count <= static_cast<std::uint32_t>(max_leaf) || depth >= 60) {
      nodes[node_index].index = first;
      nodes[node_index].count = count;
      return;
    }

    Aabb centroid_bounds;
    for (std::uint32_t i = first; i < first + count; i++) {
      centroid_bounds.extend(centers[order[i]]);
    }

    // binned SAH over the three axes
    double best_cost  = std::numeric_limits<double>::infinity();
    int    best_axis  = -1;
    int    best_split = 0;

    for (int axis = 0; axis < 3; axis++) {
      const double lo     = centroid_bounds.lo(axis);
      const double extent = centroid_bounds.hi(axis) - lo;
      if (!(extent > 0.0)) {
        continue;
      }

      std::array<Aabb, kBins> bin_box{};
      std::array<int, kBins>  bin_count{};
      const double            scale = kBins / extent;

      for (std::uint32_t i = first; i < first + count; i++) {
        const int b = std::min(kBins - 1, static_cast<int>((centers[order[i]](axis) - lo) * scale));
        bin_count[b]++;
        bin_box[b].extend(boxes[order[i]]);
      }

      std::array<double, kBins> right_area{};
      std::array<int, kBins>    right_count{};
      Aabb                      acc;
      int                       n = 0;
      for (int b = kBins - 1; b > 0; b--) {
        acc.extend(bin_box[b]);
        n += bin_count[b];
        right_area[b]  = acc.surfaceArea();
        right_count[b] = n;
      }

      acc = Aabb{};
      n   = 0;
      for (int b = 0; b < kBins - 1; b++) {
        acc.extend(bin_box[b]);
        n += bin_count[b];
        if (n == 0 || right_count[b + 1] == 0) {
          continue;
        }
        const double cost = acc.surfaceArea() * n + right_area[b + 1] * right_count[b + 1];
        if (cost < best_cost) {
          best_cost  = cost;
          best_axis  = axis;
          best_split = b;
        }
      }
    }

    std::uint32_t mid = first;

    if (best_axis >= 0) {
      const double lo    = centroid_bounds.lo(best_axis);
      const double scale = kBins / (centroid_bounds.hi(best_axis) - lo);
      auto         it    = std::partition(order.begin() + first, order.begin() + first + count, [&](std::uint32_t p) {
        return std::min(kBins - 1, static_cast<int>((centers[p](best_axis) - lo) * scale)) <= best_split;
      });
      mid = static_cast<std::uint32_t>(it - order.begin());
    }

    if (mid == first || mid == first + count) {
      // degenerate centroids: median split on the widest axis
      int axis = 0;
      (bounds.hi - bounds.lo).maxCoeff(&axis);
      mid = first + count / 2;
      std::nth_element(order.begin() + first, order.begin() + mid, order.begin() + first + count,
                       [&](std::uint32_t a, std::uint32_t b) { return centers[a](axis) < centers[b](axis); });
    }

    const auto left = static_cast<std::uint32_t>(nodes.size());
    nodes.push_back({});
    nodes.push_back({});

    nodes[node_index].index = left;
    nodes[node_index].count = 0;

    split(left, first, mid - first, depth + 1);
    split(left + 1, mid, first + count - mid, depth + 1);
  }
};

}  // namespace

void Bvh::build(std::span<const Aabb> boxes, int max_leaf_size) {

  clear();

  if (boxes.empty()) {
    return;
  }
  if (boxes.size() > std::numeric_limits<std::uint32_t>::max() / 2) {
    throw std::length_error("too many primitives for the BVH");
  }

  order_.resize(boxes.size());
  for (std::uint32_t i = 0; i < order_.size(); i++) {
    order_[i] = i;
  }

  nodes_.reserve(2 * boxes.size());
  nodes_.push_back({});

  Builder b{boxes, {}, order_, nodes_, std::max(1, max_leaf_size)};
  b.centers.reserve(boxes.size());
  for (const Aabb& box : boxes) {
    b.centers.push_back(box.center());
  }

  b.split(0, 0, static_cast<std::uint32_t>(boxes.size()), 0);
}

Aabb Bvh::bounds() const {
  Aabb b;
  if (!nodes_.empty()) {
    const BvhNode& n = nodes_[0];
    b.lo             = Eigen::Vector3d(n.bounds[0][0], n.bounds[0][1], n.bounds[0][2]);
    b.hi             = Eigen::Vector3d(n.bounds[1][0], n.bounds[1][1], n.bounds[1][2]);
  }
  return b;
}

}  // namespace hoversim
