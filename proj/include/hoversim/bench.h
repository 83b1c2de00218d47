#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include <hoversim/sensors.h>
#include <hoversim/session.h>
#include <hoversim/worldgen.h>

namespace hoversim::bench
{

/// Point counts of the LiDAR suite.
const std::vector<int>& lidarPointCounts();

/// Ray grid used for a given point count (n_horizontal x n_vertical, full azimuth).
LidarConfig lidarConfigFor(int points);

/// Fixed generated scene: 3 x 3 cells at 76 vertices per edge (101250 triangles) with forest.
struct LidarScene
{
  std::unique_ptr<World> world;
  SensorPose             pose;
};

LidarScene standardLidarScene();

/// n UAVs holding position on a grid, no sensors, flat world.
SessionConfig swarmConfig(int n_uavs, RunMode mode = RunMode::Stepped);

struct DynamicsResult
{
  int    uavs;
  double steps_per_second;       // session steps (all UAVs advanced once)
  double uav_steps_per_second;   // steps * uavs
};

struct SwarmResult
{
  int    uavs;
  double realtime_factor;  // simulated seconds per wall second at dt = 1/250
};

struct LidarResult
{
  int         points;
  int         n_horizontal;
  int         n_vertical;
  double      scans_per_second;
  std::size_t hits;
};

/// Each measurement runs for at least min_seconds of wall time.
DynamicsResult runDynamics(int n_uavs, double min_seconds);

SwarmResult runSwarm(int n_uavs, double min_seconds);

LidarResult runLidar(const LidarScene& scene, int points, double min_seconds);

/// Wall-clock paced run of a realtime session; returns simulated / (wall * factor).
double pacedRatio(int n_uavs, double wall_seconds, double factor = 1.0);

}  // namespace hoversim::bench
