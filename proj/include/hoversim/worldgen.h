#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include <hoversim/bvh.h>

namespace hoversim
{

class WorldError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

struct TerrainParams
{
  std::uint64_t seed             = 0;
  double        cell_size        = 100.0;  // [m]
  int           grid_resolution  = 33;     // vertices per cell edge
  double        roughness        = 0.5;    // per-octave persistence
  double        amplitude        = 10.0;   // [m]
  double        base_frequency   = 0.01;   // [1/m]
  int           octaves          = 4;
  double        forest_density   = 0.002;  // [instances/m^2]
  double        visibility_range = 150.0;  // [m]

  void validate() const;
};

/// Semantic classes (0-255) and per-class LiDAR intensity. Class 255 is reserved for "no hit".
struct SceneMaterials
{
  static constexpr std::uint8_t kMissLabel = 255;

  std::uint8_t terrain_label = 1;
  std::uint8_t tree_label    = 2;
  std::uint8_t grass_label   = 3;

  std::array<float, 256> intensity = defaultIntensities();

  static std::array<float, 256> defaultIntensities();

  void validate() const;
};

struct CellIndex
{
  std::int64_t ix = 0;
  std::int64_t iy = 0;

  auto operator<=>(const CellIndex&) const = default;
};

std::ostream& operator<<(std::ostream& os, const CellIndex& c);

enum class FoliageKind : std::uint8_t
{
  Tree  = 0,
  Grass = 1,
};

struct FoliageInstance
{
  Eigen::Vector3d position;  // base, on the terrain surface
  FoliageKind     kind   = FoliageKind::Tree;
  double          radius = 0.0;
  double          height = 0.0;
  std::uint8_t    label  = 0;
};

struct TerrainMesh
{
  std::vector<Eigen::Vector3d>              vertices;
  std::vector<Eigen::Vector3d>              normals;  // per vertex, unit
  std::vector<std::array<std::uint32_t, 3>> triangles;
};

struct TerrainCell
{
  CellIndex                    index;
  TerrainMesh                  mesh;
  std::vector<std::uint8_t>    triangle_labels;
  std::vector<FoliageInstance> foliage;
};

struct RayHit
{
  double          distance = 0.0;
  Eigen::Vector3d point    = Eigen::Vector3d::Zero();
  Eigen::Vector3d normal   = Eigen::Vector3d::UnitZ();
  std::uint8_t    semantic_label     = 0;
  double          material_intensity = 0.0;
};

/* terrain functions //{ */

/// Improved-gradient 2D Perlin noise scaled to [-1, 1]; zero on the lattice of `frequency`.
double perlin(double x, double y, double frequency, std::uint64_t seed);

/// Fractal octave sum; a pure function of world coordinates.
double terrain_height(double x, double y, const TerrainParams& p);

CellIndex cell_of(const Eigen::Vector3d& position, double cell_size);

/// Horizontal distance from the observer to the cell footprint is within the visibility range.
bool cell_visible(const CellIndex& cell, const Eigen::Vector3d& observer, const TerrainParams& p);

/// Cells required by a set of observers: own cell and 8-neighbours, filtered by visibility.
std::set<CellIndex> required_cells(std::span<const Eigen::Vector3d> observers, const TerrainParams& p);

TerrainCell generate_cell(const CellIndex& idx, const TerrainParams& p, const SceneMaterials& materials = {});

//}

/* World //{ */

struct CellUpdate
{
  std::vector<CellIndex> added;
  std::vector<CellIndex> removed;
};

/**
 * @brief Live set of terrain cells plus a two-level ray-query structure.
 *
 * Every active cell owns a BVH over its triangles and tree proxies; a top-level
 * BVH over the cell bounds is rebuilt whenever the active set changes.
 * raycast() is const and may be called concurrently between updates.
 */
class World {
public:
  explicit World(const TerrainParams& params, const SceneMaterials& materials = {});
  ~World();

  World(World&&) noexcept;
  World& operator=(World&&) noexcept;

  const TerrainParams& params() const {
    return params_;
  }

  const SceneMaterials& materials() const {
    return materials_;
  }

  CellUpdate update_cells(std::span<const Eigen::Vector3d> uav_positions, const std::optional<Eigen::Vector3d>& spectator = std::nullopt);

  /// Nearest hit within max_range; std::nullopt is a miss. Throws WorldError on a non-unit direction.
  std::optional<RayHit> raycast(const Eigen::Vector3d& origin, const Eigen::Vector3d& direction, double max_range) const;

  std::vector<CellIndex> activeCells() const;

  const TerrainCell* cell(const CellIndex& idx) const;

  std::size_t triangleCount() const;

  /// Rebuilds every per-cell structure and the top level from scratch.
  void rebuildAcceleration();

  /// Wavefront OBJ dump of the active terrain; tree proxies as comment records.
  void writeObj(std::ostream& os) const;

private:
  struct CellEntry;

  void rebuildTopLevel();

  TerrainParams                                   params_;
  SceneMaterials                                  materials_;
  std::map<CellIndex, std::unique_ptr<CellEntry>> cells_;
  std::vector<const CellEntry*>                   top_entries_;
  Bvh                                             top_;
};

//}

}  // namespace hoversim
