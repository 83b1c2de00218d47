#include <hoversim/worldgen.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <Eigen/Geometry>

#include <hoversim/parallel.h>
#include <hoversim/random.h>

namespace hoversim
{

namespace
{

constexpr double kTreeFraction = 0.6;

// eight unit gradients, 45 degrees apart
constexpr double kDiag        = 0.70710678118654752440;
constexpr double kGradX[8]    = {1.0, kDiag, 0.0, -kDiag, -1.0, -kDiag, 0.0, kDiag};
constexpr double kGradY[8]    = {0.0, kDiag, 1.0, kDiag, 0.0, -kDiag, -1.0, -kDiag};

double fade(double t) {
  return t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
}

double lerp(double a, double b, double t) {
  return a + t * (b - a);
}

double gradientDot(std::uint64_t seed, std::int64_t ix, std::int64_t iy, double dx, double dy) {
  const std::uint64_t h = hashValues(seed, {static_cast<std::uint64_t>(ix), static_cast<std::uint64_t>(iy)});
  const int           g = static_cast<int>(h >> 61);
  return kGradX[g] * dx + kGradY[g] * dy;
}

double cellFoliageUniform(std::uint64_t seed, const CellIndex& c, std::uint64_t k, std::uint64_t channel) {
  return toUnit(hashValues(seed ^ 0xf011a6e5eedULL, {static_cast<std::uint64_t>(c.ix), static_cast<std::uint64_t>(c.iy), k, channel}));
}

/* ray primitives //{ */

struct PackedTriangle
{
  Eigen::Vector3d v0;
  Eigen::Vector3d e1;
  Eigen::Vector3d e2;
};

struct Cylinder
{
  double        cx, cy, z0, z1, radius;
  std::uint32_t foliage;
};

struct Candidate
{
  double        t = std::numeric_limits<double>::infinity();
  std::uint32_t prim = 0;
  double        u = 0.0, v = 0.0;
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();  // cylinders only
};

// Moller-Trumbore, two-sided
bool intersectTriangle(const PackedTriangle& tri, const Ray& ray, double t_max, double& t, double& u, double& v) {

  const Eigen::Vector3d pvec = ray.direction.cross(tri.e2);
  const double          det  = tri.e1.dot(pvec);
  if (det == 0.0) {
    return false;
  }
  const double          inv  = 1.0 / det;
  const Eigen::Vector3d tvec = ray.origin - tri.v0;

  u = tvec.dot(pvec) * inv;
  if (u < 0.0 || u > 1.0) {
    return false;
  }

  const Eigen::Vector3d qvec = tvec.cross(tri.e1);
  v                          = ray.direction.dot(qvec) * inv;
  if (v < 0.0 || u + v > 1.0) {
    return false;
  }

  t = tri.e2.dot(qvec) * inv;
  return t > 0.0 && t < t_max;
}

bool intersectCylinder(const Cylinder& cyl, const Ray& ray, double t_max, double& t, Eigen::Vector3d& normal) {

  const Eigen::Vector3d& o = ray.origin;
  const Eigen::Vector3d& d = ray.direction;

  bool   hit  = false;
  double best = t_max;

  const double dx = o.x() - cyl.cx;
  const double dy = o.y() - cyl.cy;
  const double a  = d.x() * d.x() + d.y() * d.y();

  if (a > 0.0) {
    const double b    = 2.0 * (dx * d.x() + dy * d.y());
    const double c    = dx * dx + dy * dy - cyl.radius * cyl.radius;
    const double disc = b * b - 4.0 * a * c;
    if (disc >= 0.0) {
      const double sq = std::sqrt(disc);
      for (double root : {(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)}) {
        if (root > 0.0 && root < best) {
          const double z = o.z() + root * d.z();
          if (z >= cyl.z0 && z <= cyl.z1) {
            best   = root;
            normal = Eigen::Vector3d(dx + root * d.x(), dy + root * d.y(), 0.0).normalized();
            hit    = true;
            break;
          }
        }
      }
    }
  }

  if (d.z() != 0.0) {
    const double caps[2]    = {cyl.z1, cyl.z0};
    const double signs[2]   = {1.0, -1.0};
    for (int i = 0; i < 2; i++) {
      const double tc = (caps[i] - o.z()) / d.z();
      if (tc > 0.0 && tc < best) {
        const double px = dx + tc * d.x();
        const double py = dy + tc * d.y();
        if (px * px + py * py <= cyl.radius * cyl.radius) {
          best   = tc;
          normal = Eigen::Vector3d(0.0, 0.0, signs[i]);
          hit    = true;
        }
      }
    }
  }

  t = best;
  return hit;
}

//}

}  // namespace

/* World::CellEntry //{ */

struct World::CellEntry
{
  TerrainCell                 cell;
  std::vector<PackedTriangle> triangles;
  std::vector<Cylinder>       cylinders;
  Bvh                         bvh;
  Aabb                        bounds;

  explicit CellEntry(TerrainCell c) : cell(std::move(c)) {
    build();
  }

  void build() {
    triangles.clear();
    cylinders.clear();

    std::vector<Aabb> boxes;
    boxes.reserve(cell.mesh.triangles.size() + cell.foliage.size());

    for (const auto& tri : cell.mesh.triangles) {
      const Eigen::Vector3d& a = cell.mesh.vertices[tri[0]];
      const Eigen::Vector3d& b = cell.mesh.vertices[tri[1]];
      const Eigen::Vector3d& c = cell.mesh.vertices[tri[2]];
      triangles.push_back({a, b - a, c - a});
      Aabb box;
      box.extend(a);
      box.extend(b);
      box.extend(c);
      boxes.push_back(box);
    }

    for (std::uint32_t i = 0; i < cell.foliage.size(); i++) {
      const FoliageInstance& f = cell.foliage[i];
      if (f.kind != FoliageKind::Tree) {
        continue;
      }
      cylinders.push_back({f.position.x(), f.position.y(), f.position.z(), f.position.z() + f.height, f.radius, i});
      Aabb box;
      box.lo = Eigen::Vector3d(f.position.x() - f.radius, f.position.y() - f.radius, f.position.z());
      box.hi = Eigen::Vector3d(f.position.x() + f.radius, f.position.y() + f.radius, f.position.z() + f.height);
      boxes.push_back(box);
    }

    bounds = Aabb{};
    for (const Aabb& b : boxes) {
      bounds.extend(b);
    }

    bvh.build(boxes, 4);
  }

  void intersect(const Ray& ray, double& t_max, Candidate& best, const CellEntry*& best_entry) const {

    const auto n_tris = static_cast<std::uint32_t>(triangles.size());

    bvh.traverse(ray, t_max, [&](std::uint32_t prim, double& t_limit) {
      double t = 0.0;
      if (prim < n_tris) {
        double u = 0.0, v = 0.0;
        if (intersectTriangle(triangles[prim], ray, t_limit, t, u, v)) {
          t_limit    = t;
          best.t     = t;
          best.prim  = prim;
          best.u     = u;
          best.v     = v;
          best_entry = this;
        }
      } else {
        Eigen::Vector3d normal;
        if (intersectCylinder(cylinders[prim - n_tris], ray, t_limit, t, normal)) {
          t_limit     = t;
          best.t      = t;
          best.prim   = prim;
          best.normal = normal;
          best_entry  = this;
        }
      }
    });
  }
};

//}

/* TerrainParams / SceneMaterials //{ */

void TerrainParams::validate() const {
  std::ostringstream err;
  if (!(cell_size > 0.0) || !std::isfinite(cell_size)) {
    err << "cell_size must be > 0; ";
  }
  if (grid_resolution < 2) {
    err << "grid_resolution must be >= 2; ";
  }
  if (!(roughness >= 0.0) || !std::isfinite(roughness)) {
    err << "roughness must be >= 0; ";
  }
  if (!std::isfinite(amplitude)) {
    err << "amplitude must be finite; ";
  }
  if (!(base_frequency > 0.0) || !std::isfinite(base_frequency)) {
    err << "base_frequency must be > 0; ";
  }
  if (octaves < 1) {
    err << "octaves must be >= 1; ";
  }
  if (!(forest_density >= 0.0) || !std::isfinite(forest_density)) {
    err << "forest_density must be >= 0; ";
  }
  if (!(visibility_range > 0.0) || !std::isfinite(visibility_range)) {
    err << "visibility_range must be > 0; ";
  }
  if (!err.str().empty()) {
    throw WorldError(err.str());
  }
}

std::array<float, 256> SceneMaterials::defaultIntensities() {
  std::array<float, 256> out{};
  out[1] = 0.35f;
  out[2] = 0.6f;
  out[3] = 0.2f;
  return out;
}

void SceneMaterials::validate() const {
  for (std::uint8_t label : {terrain_label, tree_label, grass_label}) {
    if (label == kMissLabel) {
      throw WorldError("semantic class 255 is reserved for misses");
    }
  }
  for (float v : intensity) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw WorldError("material intensities must lie in [0, 1]");
    }
  }
}

std::ostream& operator<<(std::ostream& os, const CellIndex& c) {
  return os << "(" << c.ix << ", " << c.iy << ")";
}

//}

/* terrain functions //{ */

double perlin(double x, double y, double frequency, std::uint64_t seed) {

  const double px = x * frequency;
  const double py = y * frequency;
  const double fx = std::floor(px);
  const double fy = std::floor(py);

  const auto ix = static_cast<std::int64_t>(fx);
  const auto iy = static_cast<std::int64_t>(fy);

  const double tx = px - fx;
  const double ty = py - fy;

  const double n00 = gradientDot(seed, ix, iy, tx, ty);
  const double n10 = gradientDot(seed, ix + 1, iy, tx - 1.0, ty);
  const double n01 = gradientDot(seed, ix, iy + 1, tx, ty - 1.0);
  const double n11 = gradientDot(seed, ix + 1, iy + 1, tx - 1.0, ty - 1.0);

  const double u = fade(tx);
  const double v = fade(ty);

  // 2D gradient noise with unit gradients is bounded by sqrt(2)/2
  const double value = std::sqrt(2.0) * lerp(lerp(n00, n10, u), lerp(n01, n11, u), v);

  return std::clamp(value, -1.0, 1.0);
}

double terrain_height(double x, double y, const TerrainParams& p) {

  double sum       = 0.0;
  double weight    = 1.0;
  double frequency = p.base_frequency;

  for (int o = 0; o < p.octaves; o++) {
    sum += weight * perlin(x, y, frequency, p.seed ^ static_cast<std::uint64_t>(o));
    weight *= p.roughness;
    frequency *= 2.0;
  }

  return p.amplitude * sum;
}

CellIndex cell_of(const Eigen::Vector3d& position, double cell_size) {
  return CellIndex{static_cast<std::int64_t>(std::floor(position.x() / cell_size)), static_cast<std::int64_t>(std::floor(position.y() / cell_size))};
}

bool cell_visible(const CellIndex& cell, const Eigen::Vector3d& observer, const TerrainParams& p) {

  const double x0 = static_cast<double>(cell.ix) * p.cell_size;
  const double y0 = static_cast<double>(cell.iy) * p.cell_size;

  const double dx = std::max({x0 - observer.x(), 0.0, observer.x() - (x0 + p.cell_size)});
  const double dy = std::max({y0 - observer.y(), 0.0, observer.y() - (y0 + p.cell_size)});

  return std::hypot(dx, dy) <= p.visibility_range;
}

std::set<CellIndex> required_cells(std::span<const Eigen::Vector3d> observers, const TerrainParams& p) {

  std::set<CellIndex> out;

  for (const Eigen::Vector3d& observer : observers) {
    const CellIndex center = cell_of(observer, p.cell_size);
    for (std::int64_t dx = -1; dx <= 1; dx++) {
      for (std::int64_t dy = -1; dy <= 1; dy++) {
        const CellIndex c{center.ix + dx, center.iy + dy};
        if (cell_visible(c, observer, p)) {
          out.insert(c);
        }
      }
    }
  }

  return out;
}

/* generate_cell() //{ */

TerrainCell generate_cell(const CellIndex& idx, const TerrainParams& p, const SceneMaterials& materials) {

  TerrainCell cell;
  cell.index = idx;

  const int    n       = p.grid_resolution;
  const int    q       = n - 1;
  const double spacing = p.cell_size / q;

  // shared border vertices come from the same global lattice index on both sides
  auto lattice = [&](std::int64_t cell_coord, int i) { return static_cast<double>(cell_coord * q + i) * spacing; };

  cell.mesh.vertices.reserve(static_cast<std::size_t>(n) * n);
  cell.mesh.normals.reserve(static_cast<std::size_t>(n) * n);

  const double eps = 0.5 * spacing;

  for (int j = 0; j < n; j++) {
    const double y = lattice(idx.iy, j);
    for (int i = 0; i < n; i++) {
      const double x = lattice(idx.ix, i);
      cell.mesh.vertices.emplace_back(x, y, terrain_height(x, y, p));

      const double dzdx = (terrain_height(x + eps, y, p) - terrain_height(x - eps, y, p)) / (2.0 * eps);
      const double dzdy = (terrain_height(x, y + eps, p) - terrain_height(x, y - eps, p)) / (2.0 * eps);
      cell.mesh.normals.push_back(Eigen::Vector3d(-dzdx, -dzdy, 1.0).normalized());
    }
  }

  cell.mesh.triangles.reserve(2 * static_cast<std::size_t>(q) * q);
  for (int j = 0; j < q; j++) {
    for (int i = 0; i < q; i++) {
      const auto v00 = static_cast<std::uint32_t>(j * n + i);
      const auto v10 = v00 + 1;
      const auto v01 = v00 + static_cast<std::uint32_t>(n);
      const auto v11 = v01 + 1;
      cell.mesh.triangles.push_back({v00, v10, v11});
      cell.mesh.triangles.push_back({v00, v11, v01});
    }
  }
  cell.triangle_labels.assign(cell.mesh.triangles.size(), materials.terrain_label);

  // candidates over the cell surface, thinned to the requested density
  const double expected = p.forest_density * p.cell_size * p.cell_size;
  if (expected > 0.0) {
    const auto   candidates = static_cast<std::uint64_t>(std::ceil(4.0 * expected)) + 8;
    const double accept     = expected / static_cast<double>(candidates);

    const double x0 = static_cast<double>(idx.ix) * p.cell_size;
    const double y0 = static_cast<double>(idx.iy) * p.cell_size;

    for (std::uint64_t k = 0; k < candidates; k++) {
      if (cellFoliageUniform(p.seed, idx, k, 0) >= accept) {
        continue;
      }

      const double x = x0 + cellFoliageUniform(p.seed, idx, k, 1) * p.cell_size;
      const double y = y0 + cellFoliageUniform(p.seed, idx, k, 2) * p.cell_size;

      FoliageInstance f;
      f.position = Eigen::Vector3d(x, y, terrain_height(x, y, p));
      if (cellFoliageUniform(p.seed, idx, k, 3) < kTreeFraction) {
        f.kind   = FoliageKind::Tree;
        f.radius = 0.15 + 0.35 * cellFoliageUniform(p.seed, idx, k, 4);
        f.height = 6.0 + 14.0 * cellFoliageUniform(p.seed, idx, k, 5);
        f.label  = materials.tree_label;
      } else {
        f.kind   = FoliageKind::Grass;
        f.radius = 0.3;
        f.height = 0.5;
        f.label  = materials.grass_label;
      }
      cell.foliage.push_back(f);
    }
  }

  return cell;
}

//}

//}

/* World //{ */

World::World(const TerrainParams& params, const SceneMaterials& materials) : params_(params), materials_(materials) {
  params_.validate();
  materials_.validate();
}

World::~World() = default;

World::World(World&&) noexcept = default;

World& World::operator=(World&&) noexcept = default;

CellUpdate World::update_cells(std::span<const Eigen::Vector3d> uav_positions, const std::optional<Eigen::Vector3d>& spectator) {

  std::vector<Eigen::Vector3d> observers(uav_positions.begin(), uav_positions.end());
  if (spectator) {
    observers.push_back(*spectator);
  }
  if (observers.empty()) {
    throw WorldError("update_cells needs at least one observer");
  }
  for (const auto& o : observers) {
    if (!o.allFinite()) {
      throw WorldError("observer position is not finite");
    }
  }

  const std::set<CellIndex> required = required_cells(observers, params_);

  CellUpdate update;

  for (auto it = cells_.begin(); it != cells_.end();) {
    if (!required.contains(it->first)) {
      update.removed.push_back(it->first);
      it = cells_.erase(it);
    } else {
      ++it;
    }
  }

  for (const CellIndex& c : required) {
    if (!cells_.contains(c)) {
      update.added.push_back(c);
    }
  }

  if (!update.added.empty()) {
    std::vector<std::unique_ptr<CellEntry>> fresh(update.added.size());
    parallel_for(update.added.size(), [&](std::size_t i) { fresh[i] = std::make_unique<CellEntry>(generate_cell(update.added[i], params_, materials_)); });
    for (std::size_t i = 0; i < fresh.size(); i++) {
      cells_.emplace(update.added[i], std::move(fresh[i]));
    }
  }

  if (!update.added.empty() || !update.removed.empty()) {
    rebuildTopLevel();
  }

  return update;
}

void World::rebuildTopLevel() {

  top_entries_.clear();
  std::vector<Aabb> boxes;

  for (const auto& [idx, entry] : cells_) {
    top_entries_.push_back(entry.get());
    boxes.push_back(entry->bounds);
  }

  top_.build(boxes, 1);
}

void World::rebuildAcceleration() {
  for (auto& [idx, entry] : cells_) {
    entry->build();
  }
  rebuildTopLevel();
}

std::optional<RayHit> World::raycast(const Eigen::Vector3d& origin, const Eigen::Vector3d& direction, double max_range) const {

  if (!origin.allFinite() || !direction.allFinite()) {
    throw WorldError("ray origin and direction must be finite");
  }
  if (std::abs(direction.norm() - 1.0) > 1e-6) {
    throw WorldError("ray direction must be a unit vector");
  }
  if (!(max_range > 0.0)) {
    throw WorldError("max_range must be positive");
  }

  const Ray ray(origin, direction);

  // strict upper bound, so a hit exactly at max_range is still accepted
  double           t_max = std::nextafter(max_range, std::numeric_limits<double>::infinity());
  Candidate        best;
  const CellEntry* best_entry = nullptr;

  top_.traverse(ray, t_max, [&](std::uint32_t i, double& t_limit) { top_entries_[i]->intersect(ray, t_limit, best, best_entry); });

  if (best_entry == nullptr) {
    return std::nullopt;
  }

  RayHit hit;
  hit.distance = best.t;
  hit.point    = origin + best.t * direction;

  const auto n_tris = static_cast<std::uint32_t>(best_entry->triangles.size());
  if (best.prim < n_tris) {
    const auto&            tri = best_entry->cell.mesh.triangles[best.prim];
    const TerrainMesh&     m   = best_entry->cell.mesh;
    const Eigen::Vector3d  n   = (1.0 - best.u - best.v) * m.normals[tri[0]] + best.u * m.normals[tri[1]] + best.v * m.normals[tri[2]];
    hit.normal                 = n.normalized();
    hit.semantic_label         = best_entry->cell.triangle_labels[best.prim];
  } else {
    const Cylinder& cyl = best_entry->cylinders[best.prim - n_tris];
    hit.normal          = best.normal;
    hit.semantic_label  = best_entry->cell.foliage[cyl.foliage].label;
  }
  hit.material_intensity = materials_.intensity[hit.semantic_label];

  return hit;
}

std::vector<CellIndex> World::activeCells() const {
  std::vector<CellIndex> out;
  out.reserve(cells_.size());
  for (const auto& [idx, entry] : cells_) {
    out.push_back(idx);
  }
  return out;
}

const TerrainCell* World::cell(const CellIndex& idx) const {
  const auto it = cells_.find(idx);
  return it == cells_.end() ? nullptr : &it->second->cell;
}

std::size_t World::triangleCount() const {
  std::size_t n = 0;
  for (const auto& [idx, entry] : cells_) {
    n += entry->cell.mesh.triangles.size();
  }
  return n;
}

void World::writeObj(std::ostream& os) const {

  os << "# procedural terrain, " << cells_.size() << " cells\n";
  os.precision(9);

  std::size_t base = 1;
  for (const auto& [idx, entry] : cells_) {
    const TerrainMesh& m = entry->cell.mesh;
    os << "o cell_" << idx.ix << "_" << idx.iy << "\n";
    for (const auto& v : m.vertices) {
      os << "v " << v.x() << " " << v.y() << " " << v.z() << "\n";
    }
    for (const auto& n : m.normals) {
      os << "vn " << n.x() << " " << n.y() << " " << n.z() << "\n";
    }
    for (const auto& t : m.triangles) {
      os << "f";
      for (std::uint32_t k : t) {
        os << " " << base + k << "//" << base + k;
      }
      os << "\n";
    }
    for (const auto& f : entry->cell.foliage) {
      os << "# " << (f.kind == FoliageKind::Tree ? "tree" : "grass") << " " << f.position.x() << " " << f.position.y() << " " << f.position.z() << " "
         << f.radius << " " << f.height << " " << static_cast<int>(f.label) << "\n";
    }
    base += m.vertices.size();
  }
}

//}

}  // namespace hoversim
