#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include <hoversim/worldgen.h>

// independent reference implementations shared by the unit tests and the acceptance suite
namespace hoversim::oracle
{

// plane hit followed by a same-side test on the three edges; deliberately unlike Moller-Trumbore
inline bool oracleTriangle(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const Eigen::Vector3d& c, const Eigen::Vector3d& o, const Eigen::Vector3d& d,
                           double& t) {
  const Eigen::Vector3d n     = (b - a).cross(c - a);
  const double          denom = n.dot(d);
  if (denom == 0.0) {
    return false;
  }
  t = n.dot(a - o) / denom;
  if (!(t > 0.0)) {
    return false;
  }
  const Eigen::Vector3d p = o + t * d;
  return n.dot((b - a).cross(p - a)) >= 0.0 && n.dot((c - b).cross(p - b)) >= 0.0 && n.dot((a - c).cross(p - c)) >= 0.0;
}

inline bool oracleCylinder(const FoliageInstance& f, const Eigen::Vector3d& o, const Eigen::Vector3d& d, double& t) {
  bool   hit  = false;
  double best = std::numeric_limits<double>::infinity();

  // side: |(o + t d - c)_xy| = r
  const Eigen::Vector2d oc(o.x() - f.position.x(), o.y() - f.position.y());
  const Eigen::Vector2d dh(d.x(), d.y());
  const double          a = dh.squaredNorm();
  if (a > 0.0) {
    const double tc   = -oc.dot(dh) / a;  // closest approach
    const double dist = (oc + tc * dh).squaredNorm();
    const double r2   = f.radius * f.radius;
    if (dist <= r2) {
      const double half = std::sqrt((r2 - dist) / a);
      for (double tt : {tc - half, tc + half}) {
        const double z = o.z() + tt * d.z();
        if (tt > 0.0 && tt < best && z >= f.position.z() && z <= f.position.z() + f.height) {
          best = tt;
          hit  = true;
        }
      }
    }
  }

  // caps
  for (double zc : {f.position.z(), f.position.z() + f.height}) {
    if (d.z() == 0.0) {
      continue;
    }
    const double tt = (zc - o.z()) / d.z();
    if (tt > 0.0 && tt < best && (oc + tt * dh).squaredNorm() <= f.radius * f.radius) {
      best = tt;
      hit  = true;
    }
  }

  t = best;
  return hit;
}

struct OracleHit
{
  double       t     = std::numeric_limits<double>::infinity();
  std::uint8_t label = SceneMaterials::kMissLabel;
};

inline OracleHit oracleCast(const std::vector<TerrainCell>& cells, const Eigen::Vector3d& o, const Eigen::Vector3d& d, double max_range) {
  OracleHit best;
  for (const TerrainCell& c : cells) {
    for (std::size_t i = 0; i < c.mesh.triangles.size(); i++) {
      const auto& tri = c.mesh.triangles[i];
      double      t   = 0.0;
      if (oracleTriangle(c.mesh.vertices[tri[0]], c.mesh.vertices[tri[1]], c.mesh.vertices[tri[2]], o, d, t) && t <= max_range && t < best.t) {
        best = {t, c.triangle_labels[i]};
      }
    }
    for (const FoliageInstance& f : c.foliage) {
      double t = 0.0;
      if (f.kind == FoliageKind::Tree && oracleCylinder(f, o, d, t) && t <= max_range && t < best.t) {
        best = {t, f.label};
      }
    }
  }
  return best;
}

inline Eigen::Vector3d randomUnit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Eigen::Vector3d(n(rng), n(rng), n(rng)).normalized();
}

// observer at the shared border of cells (0,0) and (1,0) with a short range: exactly those two cells
inline World twoCellWorld(TerrainParams p) {
  p.visibility_range = 10.0;
  World                        w(p);
  std::vector<Eigen::Vector3d> obs{Eigen::Vector3d(p.cell_size, 0.5 * p.cell_size, 50.0)};
  w.update_cells(obs);
  return w;
}

struct OracleStats
{
  int hits       = 0;
  int mismatches = 0;
};

inline OracleStats compareWithOracle(const World& w, int rays, std::uint64_t seed) {
  std::vector<TerrainCell> cells;
  for (const CellIndex& c : w.activeCells()) {
    cells.push_back(generate_cell(c, w.params()));
  }

  const double                           size = w.params().cell_size;
  std::mt19937_64                        rng(seed);
  std::uniform_real_distribution<double> ux(0.0, 2.0 * size), uy(0.0, size), uz(-5.0, 60.0);

  OracleStats stats;
  for (int i = 0; i < rays; i++) {
    const Eigen::Vector3d o(ux(rng), uy(rng), uz(rng));
    const Eigen::Vector3d d = randomUnit(rng);

    const auto      hit = w.raycast(o, d, 300.0);
    const OracleHit ref = oracleCast(cells, o, d, 300.0);

    const bool ref_hit = std::isfinite(ref.t);
    if (hit.has_value() != ref_hit) {
      stats.mismatches++;
      continue;
    }
    if (!ref_hit) {
      continue;
    }
    stats.hits++;
    if (std::abs(hit->distance - ref.t) > 1e-9 || hit->semantic_label != ref.label) {
      stats.mismatches++;
    }
  }
  return stats;
}

// plain row-major evaluation of the quad-X allocation, written out from the matrix entries
inline std::array<double, 4> denseAllocation(double d, double c_tf, const std::array<double, 4>& f) {
  const double a = d / std::sqrt(2.0);
  const double gamma[4][4] = {
      {1.0, 1.0, 1.0, 1.0},
      {-a, a, a, -a},
      {-a, a, -a, a},
      {-c_tf, -c_tf, c_tf, c_tf},
  };
  std::array<double, 4> out{};
  for (int r = 0; r < 4; r++) {
    for (int c = 0; c < 4; c++) {
      out[r] += gamma[r][c] * f[c];
    }
  }
  return out;
}

inline double stddev(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) {
    m += x;
  }
  m /= v.size();
  double s = 0.0;
  for (double x : v) {
    s += (x - m) * (x - m);
  }
  return std::sqrt(s / (v.size() - 1));
}

}  // namespace hoversim::oracle
