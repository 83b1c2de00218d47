#include <hoversim/bench.h>

#include <chrono>
#include <thread>

namespace hoversim::bench
{

namespace
{

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

const std::vector<int>& lidarPointCounts() {
  static const std::vector<int> counts{128, 256, 1024, 4096, 8192, 32768};
  return counts;
}

LidarConfig lidarConfigFor(int points) {
  LidarConfig c;
  c.n_vertical = points >= 32768 ? 32 : points >= 4096 ? 16 : points >= 1024 ? 8 : 4;
  if (points % c.n_vertical != 0) {
    throw std::invalid_argument("point count must be a multiple of the vertical resolution");
  }
  c.n_horizontal   = points / c.n_vertical;
  c.horizontal_fov = 2.0 * M_PI;
  c.vertical_fov   = 0.5;
  c.max_range      = 100.0;
  return c;
}

LidarScene standardLidarScene() {
  TerrainParams p;
  p.seed             = 7;
  p.grid_resolution  = 76;
  p.amplitude        = 10.0;
  p.forest_density   = 0.002;
  p.visibility_range = 100.0;  // 3 x 3 cells around the centre of cell (1, 1)

  LidarScene s;
  s.world = std::make_unique<World>(p);
  const Eigen::Vector3d centre(150.0, 150.0, 0.0);
  s.world->update_cells(std::span(&centre, 1));

  s.pose.origin   = Eigen::Vector3d(150.0, 150.0, terrain_height(150.0, 150.0, p) + 2.0);
  s.pose.rotation = Eigen::Matrix3d::Identity();
  return s;
}

SessionConfig swarmConfig(int n_uavs, RunMode mode) {
  SessionConfig c;
  c.world.amplitude      = 0.0;
  c.world.forest_density = 0.0;
  c.mode                 = mode;
  const int side         = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n_uavs))));
  for (int i = 0; i < n_uavs; i++) {
    UavConfig u;
    u.position = Eigen::Vector3d(4.0 * (i % side), 4.0 * (i / side), 20.0);
    c.uavs.push_back(u);
  }
  return c;
}

namespace
{

void holdAll(Session& s) {
  for (std::size_t i = 0; i < s.uavCount(); i++) {
    s.set_control(i, reference::PositionHeading{s.config().uavs[i].position, 0.0});
  }
}

}  // namespace

DynamicsResult runDynamics(int n_uavs, double min_seconds) {
  Session s(swarmConfig(n_uavs));
  holdAll(s);
  s.step(25);  // warm-up

  const std::uint64_t batch = std::max<std::uint64_t>(1, 2500 / static_cast<std::uint64_t>(n_uavs));
  std::uint64_t       steps = 0;
  const auto          t0    = Clock::now();
  double              wall  = 0.0;
  do {
    s.step(batch);
    steps += batch;
    wall = since(t0);
  } while (wall < min_seconds);

  const double rate = static_cast<double>(steps) / wall;
  return DynamicsResult{n_uavs, rate, rate * n_uavs};
}

SwarmResult runSwarm(int n_uavs, double min_seconds) {
  const DynamicsResult d = runDynamics(n_uavs, min_seconds);
  return SwarmResult{n_uavs, d.steps_per_second * (1.0 / 250.0)};
}

LidarResult runLidar(const LidarScene& scene, int points, double min_seconds) {
  const LidarConfig c = lidarConfigFor(points);
  std::size_t       hits  = lidar_scan(*scene.world, scene.pose, c, 0, 0.0).points.size();
  std::uint64_t     scans = 0;
  const auto        t0    = Clock::now();
  double            wall  = 0.0;
  do {
    hits = lidar_scan(*scene.world, scene.pose, c, scans, 0.0).points.size();
    scans++;
    wall = since(t0);
  } while (wall < min_seconds);
  return LidarResult{points, c.n_horizontal, c.n_vertical, static_cast<double>(scans) / wall, hits};
}

double pacedRatio(int n_uavs, double wall_seconds, double factor) {
  SessionConfig c   = swarmConfig(n_uavs, RunMode::Realtime);
  c.realtime_factor = factor;
  Session    s(c);
  std::mutex m;
  holdAll(s);
  RealtimeRunner runner(s, m);
  runner.start();
  std::this_thread::sleep_for(std::chrono::duration<double>(wall_seconds));
  double sim  = 0.0;
  double wall = 0.0;
  {
    std::scoped_lock lock(m);
    sim  = s.time();
    wall = runner.wallTime();
  }
  runner.stop();
  if (const auto err = runner.error()) {
    throw SessionError("diverged", *err);
  }
  return sim / (wall * factor);
}

}  // namespace hoversim::bench
