#include <hoversim/sensors.h>

#include <cmath>
#include <random>
#include <sstream>

#include <Eigen/Geometry>
#include <gtest/gtest.h>

using namespace hoversim;

namespace
{

TerrainParams flatParams() {
  TerrainParams p;
  p.amplitude      = 0.0;
  p.forest_density = 0.0;
  return p;
}

World makeWorld(const TerrainParams& p, const Eigen::Vector3d& observer) {
  World                        w(p);
  std::vector<Eigen::Vector3d> obs{observer};
  w.update_cells(obs);
  return w;
}

// body x onto world -z
Eigen::Matrix3d lookDown() {
  return Eigen::AngleAxisd(M_PI / 2.0, Eigen::Vector3d::UnitY()).toRotationMatrix();
}

Eigen::Matrix3d lookUp() {
  return Eigen::AngleAxisd(-M_PI / 2.0, Eigen::Vector3d::UnitY()).toRotationMatrix();
}

double stddev(const std::vector<double>& v) {
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

UavState stateAt(const Eigen::Vector3d& r, const Eigen::Matrix3d& R = Eigen::Matrix3d::Identity()) {
  return UavState::atRest(UavModel::defaultQuadX(), r, R);
}

World forestWorld() {
  TerrainParams p;
  p.seed            = 12;
  p.grid_resolution = 33;
  p.forest_density  = 0.01;
  return makeWorld(p, {50.0, 50.0, 20.0});
}

}  // namespace

/* noise //{ */

TEST(Noise, Deterministic) {
  const NoiseSpec n = NoiseSpec::uniform(0.7, 3, 42);
  for (std::uint64_t k = 0; k < 100; k++) {
    EXPECT_EQ(n.sample(k, 1), n.sample(k, 1));
  }
  EXPECT_NE(n.sample(0, 0), n.sample(0, 1));
  EXPECT_NE(n.sample(0, 0), n.sample(1, 0));
  EXPECT_NE(n.sample(0, 0), NoiseSpec::uniform(0.7, 3, 43).sample(0, 0));
}

TEST(Noise, BiasAndMissingChannels) {
  NoiseSpec n;
  n.bias = {0.25};
  EXPECT_EQ(n.sample(5, 0), 0.25);
  EXPECT_EQ(n.sample(5, 2), 0.0);
  EXPECT_FALSE(n.zero());
  EXPECT_TRUE(NoiseSpec{}.zero());

  n.sigma = {-1.0};
  EXPECT_THROW(n.validate(), SensorError);
}

TEST(Noise, GaussianMoments) {
  const NoiseSpec     n = NoiseSpec::uniform(1.0, 1, 9);
  std::vector<double> v;
  double              mean = 0.0;
  for (std::uint64_t k = 0; k < 100000; k++) {
    v.push_back(n.sample(k, 0));
    mean += v.back();
  }
  mean /= v.size();
  EXPECT_NEAR(mean, 0.0, 0.02);
  EXPECT_NEAR(stddev(v), 1.0, 0.02);

  // tails of a normal distribution
  int beyond2 = 0;
  for (double x : v) {
    beyond2 += std::abs(x) > 2.0;
  }
  EXPECT_NEAR(beyond2 / 100000.0, 0.0455, 0.004);
}

//}

/* IMU and navigation //{ */

TEST(Imu, HoverSpecificForce) {
  const UavState  s = stateAt({0.0, 0.0, 5.0});
  const ImuSample m = imu_sample(s, Eigen::Vector3d::Zero(), {0.0, 0.0, -9.81}, {}, 0);
  EXPECT_NEAR((m.accel - Eigen::Vector3d(0.0, 0.0, 9.81)).norm(), 0.0, 1e-15);
  EXPECT_EQ(m.gyro, Eigen::Vector3d::Zero());
}

TEST(Imu, FreeFallWeightless) {
  const UavState  s = stateAt({0.0, 0.0, 5.0}, Eigen::AngleAxisd(0.4, Eigen::Vector3d(1, 2, 3).normalized()).toRotationMatrix());
  const ImuSample m = imu_sample(s, {0.0, 0.0, -9.81}, {0.0, 0.0, -9.81}, {}, 0);
  EXPECT_EQ(m.accel, Eigen::Vector3d::Zero());
}

TEST(Imu, BodyFrameRotation) {
  // rolled 90 degrees: gravity reaction appears on body y
  UavState s         = stateAt({0.0, 0.0, 0.0}, Eigen::AngleAxisd(M_PI / 2.0, Eigen::Vector3d::UnitX()).toRotationMatrix());
  s.angular_velocity = Eigen::Vector3d(0.1, -0.2, 0.3);
  const ImuSample m  = imu_sample(s, Eigen::Vector3d::Zero(), {0.0, 0.0, -9.81}, {}, 0);
  EXPECT_NEAR((m.accel - Eigen::Vector3d(0.0, 9.81, 0.0)).norm(), 0.0, 1e-12);
  EXPECT_EQ(m.gyro, s.angular_velocity);
}

TEST(Imu, NoiseStatistics) {
  const UavState      s = stateAt({0.0, 0.0, 0.0});
  NoiseSpec           n = NoiseSpec::uniform(0.05, 6, 3);
  n.sigma[4]            = 0.01;
  std::vector<double> ax, gy;
  for (std::uint64_t k = 0; k < 100000; k++) {
    const ImuSample m = imu_sample(s, Eigen::Vector3d::Zero(), {0.0, 0.0, -9.81}, n, k);
    ax.push_back(m.accel.x());
    gy.push_back(m.gyro.y());
  }
  EXPECT_NEAR(stddev(ax) / 0.05, 1.0, 0.05);
  EXPECT_NEAR(stddev(gy) / 0.01, 1.0, 0.05);
}

TEST(Nav, PassThrough) {
  const UavState   s = stateAt({12.5, -3.0, 40.0});
  const NavConfig  c;
  const NavSamples n = nav_samples(s, c, 0, 1.5);
  EXPECT_EQ(n.gnss.position, s.position);
  EXPECT_EQ(n.baro.altitude, 40.0);
  EXPECT_EQ(n.mag.field, Eigen::Vector3d(1.0, 0.0, 0.0));
  EXPECT_EQ(n.gnss.time, 1.5);
  EXPECT_EQ(n.gnss.altitude, c.origin_altitude + 40.0);
}

TEST(Nav, GeodeticFlatEarth) {
  NavConfig c;
  c.origin_latitude  = 0.0;
  c.origin_longitude = 10.0;
  // 1 degree of latitude on the equatorial sphere
  const double   deg = 6378137.0 * M_PI / 180.0;
  const UavState s   = stateAt({deg, 0.0, 0.0});
  EXPECT_NEAR(nav_samples(s, c, 0).gnss.latitude, 1.0, 1e-12);
  EXPECT_NEAR(nav_samples(s, c, 0).gnss.longitude, 10.0, 1e-12);

  // x north, z up: east is -y
  const UavState e = stateAt({0.0, -deg, 0.0});
  EXPECT_NEAR(nav_samples(e, c, 0).gnss.longitude, 11.0, 1e-12);
}

TEST(Nav, MagnetometerHeading) {
  const UavState s = stateAt({0.0, 0.0, 0.0}, rotationZ(M_PI / 2.0));
  // nose east of north by 90 degrees: north appears on body -y
  EXPECT_NEAR((nav_samples(s, NavConfig{}, 0).mag.field - Eigen::Vector3d(0.0, -1.0, 0.0)).norm(), 0.0, 1e-15);
}

TEST(Nav, GnssNoiseStatistics) {
  NavConfig c;
  c.gnss = NoiseSpec::uniform(1.5, 3, 21);
  c.baro = NoiseSpec::uniform(0.3, 1, 22);
  const UavState      s = stateAt({1.0, 2.0, 3.0});
  std::vector<double> x, z, b;
  for (std::uint64_t k = 0; k < 100000; k++) {
    const NavSamples n = nav_samples(s, c, k);
    x.push_back(n.gnss.position.x());
    z.push_back(n.gnss.position.z());
    b.push_back(n.baro.altitude);
  }
  EXPECT_NEAR(stddev(x) / 1.5, 1.0, 0.05);
  EXPECT_NEAR(stddev(z) / 1.5, 1.0, 0.05);
  EXPECT_NEAR(stddev(b) / 0.3, 1.0, 0.05);
}

TEST(Nav, Validation) {
  NavConfig c;
  c.north = Eigen::Vector3d(1.0, 0.0, 1.0).normalized();
  EXPECT_THROW(c.validate(), SensorError);
}

//}

/* LiDAR //{ */

TEST(Lidar, RayGrid) {
  LidarConfig c;
  c.n_horizontal   = 4;
  c.n_vertical     = 3;
  c.horizontal_fov = 2.0 * M_PI;
  c.vertical_fov   = M_PI / 2.0;
  EXPECT_NEAR((c.direction(0, 1) - Eigen::Vector3d(-1.0, 0.0, 0.0)).norm(), 0.0, 1e-15);
  EXPECT_NEAR((c.direction(2, 1) - Eigen::Vector3d(1.0, 0.0, 0.0)).norm(), 0.0, 1e-15);
  EXPECT_NEAR((c.direction(3, 1) - Eigen::Vector3d(0.0, 1.0, 0.0)).norm(), 0.0, 1e-15);
  EXPECT_NEAR(c.direction(2, 0).z(), -std::sqrt(0.5), 1e-15);
  EXPECT_NEAR(c.direction(2, 2).z(), std::sqrt(0.5), 1e-15);

  c.horizontal_fov = 1.0;
  EXPECT_NEAR(std::atan2(c.direction(0, 1).y(), c.direction(0, 1).x()), -0.5, 1e-15);
  EXPECT_NEAR(std::atan2(c.direction(3, 1).y(), c.direction(3, 1).x()), 0.5, 1e-15);
}

TEST(Lidar, VerticalDrop) {
  const World w = makeWorld(flatParams(), {0.0, 0.0, 10.0});
  LidarConfig c;
  c.n_horizontal    = 1;
  c.n_vertical      = 1;
  c.horizontal_fov  = 0.1;
  c.mount.rotation  = lookDown();
  const PointCloud pc = lidar_scan(w, sensor_pose({0.0, 0.0, 10.0}, Eigen::Matrix3d::Identity(), c.mount), c);
  ASSERT_EQ(pc.points.size(), 1u);
  EXPECT_NEAR(pc.points[0].range, 10.0, 1e-12);
  EXPECT_EQ(pc.points[0].label, SceneMaterials{}.terrain_label);
  EXPECT_FLOAT_EQ(pc.points[0].intensity, 0.35f);
}

TEST(Lidar, EmptySky) {
  const World w = makeWorld(TerrainParams{}, {0.0, 0.0, 50.0});
  LidarConfig c;
  c.n_horizontal   = 64;
  c.n_vertical     = 8;
  c.horizontal_fov = 0.8;
  c.vertical_fov   = 0.8;
  c.mount.rotation = lookUp();
  EXPECT_TRUE(lidar_scan(w, sensor_pose({0.0, 0.0, 50.0}, Eigen::Matrix3d::Identity(), c.mount), c).points.empty());
}

TEST(Lidar, PerRayOracle) {
  const World w = forestWorld();

  LidarConfig c;
  c.n_horizontal      = 256;
  c.n_vertical        = 16;
  c.vertical_fov      = 1.2;
  c.max_range         = 120.0;
  c.mount.translation = Eigen::Vector3d(0.1, 0.0, -0.05);
  c.mount.rotation    = Eigen::AngleAxisd(0.4, Eigen::Vector3d::UnitY()).toRotationMatrix();

  const Eigen::Matrix3d R    = Eigen::AngleAxisd(0.3, Eigen::Vector3d(0.2, -0.4, 1.0).normalized()).toRotationMatrix();
  const Eigen::Vector3d r(40.0, 60.0, terrain_height(40.0, 60.0, w.params()) + 3.0);
  const SensorPose      pose = sensor_pose(r, R, c.mount);
  const PointCloud      pc   = lidar_scan(w, pose, c, 0, 0.5);

  EXPECT_EQ(pc.time, 0.5);
  ASSERT_GT(pc.points.size(), 500u);
  ASSERT_LE(pc.points.size(), c.rayCount());

  std::size_t k     = 0;
  int         trees = 0;
  for (std::size_t ray = 0; ray < c.rayCount(); ray++) {
    const int             i   = static_cast<int>(ray % c.n_horizontal);
    const int             j   = static_cast<int>(ray / c.n_horizontal);
    const Eigen::Vector3d ds  = c.direction(i, j);
    const auto            hit = w.raycast(pose.origin, pose.rotation * ds, c.max_range);

    if (!hit) {
      ASSERT_TRUE(k == pc.points.size() || pc.points[k].ray != ray);
      continue;
    }
    ASSERT_LT(k, pc.points.size());
    const LidarPoint& p = pc.points[k++];
    ASSERT_EQ(p.ray, ray);
    EXPECT_EQ(p.range, hit->distance);
    EXPECT_EQ(p.label, hit->semantic_label);
    EXPECT_EQ(p.intensity, static_cast<float>(hit->material_intensity));
    EXPECT_LE(p.range, c.max_range);
    // the point in the world frame is the raycast hit
    EXPECT_LT((pose.origin + pose.rotation * p.xyz - hit->point).norm(), 1e-9);
    EXPECT_LT((p.xyz - ds * p.range).norm(), 1e-12);
    trees += p.label == SceneMaterials{}.tree_label;
  }
  EXPECT_EQ(k, pc.points.size());
  EXPECT_GT(trees, 0);
}

TEST(Lidar, RangeNoiseAlongRay) {
  const World w = makeWorld(flatParams(), {0.0, 0.0, 10.0});
  LidarConfig c;
  c.n_horizontal   = 100;
  c.n_vertical     = 10;
  c.horizontal_fov = 0.2;
  c.vertical_fov   = 0.2;
  c.mount.rotation = lookDown();
  c.noise          = NoiseSpec::uniform(0.05, 1, 77);
  const SensorPose pose = sensor_pose({0.0, 0.0, 10.0}, Eigen::Matrix3d::Identity(), c.mount);

  LidarConfig clean = c;
  clean.noise       = {};
  const PointCloud ref = lidar_scan(w, pose, clean);

  std::vector<double> err;
  for (std::uint64_t f = 0; f < 100; f++) {
    const PointCloud pc = lidar_scan(w, pose, c, f);
    ASSERT_EQ(pc.points.size(), ref.points.size());
    for (std::size_t k = 0; k < pc.points.size(); k++) {
      err.push_back(pc.points[k].range - ref.points[k].range);
      // direction unchanged
      ASSERT_LT((pc.points[k].xyz.normalized() - ref.points[k].xyz.normalized()).norm(), 1e-12);
    }
  }
  EXPECT_EQ(err.size(), 100000u);
  EXPECT_NEAR(stddev(err) / 0.05, 1.0, 0.05);

  // frame index drives the stream
  const PointCloud a = lidar_scan(w, pose, c, 3);
  const PointCloud b = lidar_scan(w, pose, c, 3);
  for (std::size_t k = 0; k < a.points.size(); k++) {
    ASSERT_EQ(a.points[k].range, b.points[k].range);
  }
}

TEST(Lidar, ChannelFlags) {
  const World w = makeWorld(flatParams(), {0.0, 0.0, 10.0});
  LidarConfig c;
  c.n_horizontal   = 8;
  c.n_vertical     = 2;
  c.mount.rotation = lookDown();
  c.intensity      = false;
  c.label          = false;
  const PointCloud pc = lidar_scan(w, sensor_pose({0.0, 0.0, 10.0}, Eigen::Matrix3d::Identity(), c.mount), c);
  ASSERT_FALSE(pc.points.empty());
  EXPECT_FALSE(pc.has_intensity);
  for (const auto& p : pc.points) {
    EXPECT_EQ(p.intensity, 0.0f);
    EXPECT_EQ(p.label, 255);
  }
}

TEST(Lidar, Validation) {
  LidarConfig c;
  c.n_vertical = 0;
  EXPECT_THROW(c.validate(), SensorError);
  c              = {};
  c.vertical_fov = 7.0;
  EXPECT_THROW(c.validate(), SensorError);
  c           = {};
  c.max_range = 0.0;
  EXPECT_THROW(c.validate(), SensorError);
}

//}

/* cameras //{ */

TEST(Camera, PrincipalAxisDown) {
  const World  w = makeWorld(flatParams(), {0.0, 0.0, 10.0});
  CameraConfig c;
  c.width          = 9;
  c.height         = 7;
  c.mount.rotation = lookDown();
  const DepthImage d = depth_image(w, sensor_pose({0.0, 0.0, 10.0}, Eigen::Matrix3d::Identity(), c.mount), c);
  EXPECT_NEAR(d.at(4, 3), 10.0, 1e-12);
  // off-axis pixels see longer ranges
  EXPECT_GT(d.at(0, 0), 10.0);

  const LabelImage l = label_image(w, sensor_pose({0.0, 0.0, 10.0}, Eigen::Matrix3d::Identity(), c.mount), c);
  for (auto v : l.label) {
    EXPECT_EQ(v, SceneMaterials{}.terrain_label);
  }
}

TEST(Camera, SkyIsMiss) {
  const World  w = makeWorld(TerrainParams{}, {0.0, 0.0, 50.0});
  CameraConfig c;
  c.mount.rotation = lookUp();
  const auto [d, l] = camera_images(w, sensor_pose({0.0, 0.0, 50.0}, Eigen::Matrix3d::Identity(), c.mount), c);
  for (double v : d.range) {
    EXPECT_TRUE(std::isinf(v));
  }
  for (auto v : l.label) {
    EXPECT_EQ(v, 255);
  }
}

TEST(Camera, PixelOrientation) {
  CameraConfig c;
  c.width  = 4;
  c.height = 2;
  // left column looks left (+y), top row looks up (+z)
  EXPECT_GT(c.direction(0, 0).y(), 0.0);
  EXPECT_GT(c.direction(0, 0).z(), 0.0);
  EXPECT_LT(c.direction(3, 1).y(), 0.0);
  EXPECT_LT(c.direction(3, 1).z(), 0.0);
  // edge of the horizontal field of view
  c.width = 1000;
  EXPECT_NEAR(std::atan2(c.direction(999, 0).y(), c.direction(999, 0).x()), -std::atan(499.5 / 500.0), 1e-12);
}

TEST(Camera, PerPixelOracle) {
  const World  w = forestWorld();
  CameraConfig c;
  c.width          = 8;
  c.height         = 8;
  c.horizontal_fov = 1.2;
  c.mount.rotation = Eigen::AngleAxisd(0.5, Eigen::Vector3d::UnitY()).toRotationMatrix();

  for (int trial = 0; trial < 20; trial++) {
    const Eigen::Matrix3d R    = rotationZ(0.3 * trial);
    const Eigen::Vector3d r(30.0 + 2.0 * trial, 40.0, terrain_height(30.0 + 2.0 * trial, 40.0, w.params()) + 4.0);
    const SensorPose      pose = sensor_pose(r, R, c.mount);
    const DepthImage      d    = depth_image(w, pose, c);
    const LabelImage      l    = label_image(w, pose, c);

    for (int v = 0; v < 8; v++) {
      for (int u = 0; u < 8; u++) {
        const auto hit = w.raycast(pose.origin, pose.rotation * c.direction(u, v), c.max_range);
        if (hit) {
          ASSERT_EQ(d.at(u, v), hit->distance);
          ASSERT_EQ(l.at(u, v), hit->semantic_label);
        } else {
          ASSERT_TRUE(std::isinf(d.at(u, v)));
          ASSERT_EQ(l.at(u, v), 255);
        }
      }
    }
  }
}

TEST(Camera, Validation) {
  CameraConfig c;
  c.horizontal_fov = M_PI;
  EXPECT_THROW(c.validate(), SensorError);
  c       = {};
  c.width = 0;
  EXPECT_THROW(c.validate(), SensorError);
}

//}

/* schedule //{ */

TEST(Schedule, FrameCountOnGrid) {
  const double dt = 1.0 / 250.0;
  for (double rate : {10.0, 30.0, 7.0, 250.0, 1000.0, 0.5}) {
    SensorSchedule              s(rate);
    std::vector<std::uint64_t>  frames;
    const int                   steps = 1234;
    for (int n = 1; n <= steps; n++) {
      for (auto k : s.due(n * dt)) {
        frames.push_back(k);
      }
    }
    const double T = steps * dt;
    EXPECT_GE(frames.size(), std::floor(T * rate)) << rate;
    EXPECT_LE(frames.size(), std::ceil(T * rate)) << rate;
    for (std::size_t i = 0; i < frames.size(); i++) {
      EXPECT_EQ(frames[i], i + 1);
      EXPECT_EQ(s.timestamp(frames[i]), static_cast<double>(i + 1) / rate);
    }
  }
}

TEST(Schedule, AccumulatedTimeHitsGrid) {
  SensorSchedule s(10.0);
  double         t = 0.0;
  int            n = 0;
  for (int i = 0; i < 25; i++) {
    t += 0.004;
    n += static_cast<int>(s.due(t).size());
  }
  EXPECT_EQ(n, 1);  // t = 0.1 reached by summation
  EXPECT_THROW(SensorSchedule(0.0), SensorError);
}

//}

/* export //{ */

TEST(Export, PointCloudBinaryLayout) {
  PointCloud pc;
  LidarPoint p;
  p.xyz       = Eigen::Vector3d(1.0, -2.0, 0.5);
  p.range     = 2.5;
  p.intensity = 0.25f;
  p.label     = 7;
  pc.points.push_back(p);
  pc.points.push_back(p);

  std::ostringstream os;
  write_point_cloud(os, pc);
  const std::string b = os.str();
  ASSERT_EQ(b.size(), 4u + 2 * 21);
  EXPECT_EQ(static_cast<unsigned char>(b[0]), 2);
  EXPECT_EQ(b[1], 0);
  // x = 1.0f little-endian: 00 00 80 3f
  EXPECT_EQ(static_cast<unsigned char>(b[4 + 2]), 0x80);
  EXPECT_EQ(static_cast<unsigned char>(b[4 + 3]), 0x3f);
  EXPECT_EQ(static_cast<unsigned char>(b[4 + 20]), 7);

  std::istringstream is(b);
  const PointCloud   back = read_point_cloud(is);
  ASSERT_EQ(back.points.size(), 2u);
  EXPECT_EQ(back.points[1].xyz, p.xyz);
  EXPECT_EQ(back.points[1].range, 2.5);
  EXPECT_EQ(back.points[1].intensity, 0.25f);
  EXPECT_EQ(back.points[1].label, 7);

  std::istringstream truncated(b.substr(0, 30));
  EXPECT_THROW(read_point_cloud(truncated), SensorError);
}

TEST(Export, AsciiAndImages) {
  PointCloud pc;
  pc.points.resize(3);
  std::ostringstream a;
  write_point_cloud_ascii(a, pc);
  const std::string text = a.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);

  DepthImage d;
  d.width  = 3;
  d.height = 2;
  d.range  = {1.0, 2.0, 3.0, 4.0, 5.0, std::numeric_limits<double>::infinity()};
  std::ostringstream pfm;
  write_pfm(pfm, d);
  const std::string header = "Pf\n3 2\n-1.0\n";
  ASSERT_EQ(pfm.str().size(), header.size() + 6 * 4);
  EXPECT_EQ(pfm.str().substr(0, header.size()), header);
  float first = 0.0f;
  std::memcpy(&first, pfm.str().data() + header.size(), 4);
  EXPECT_EQ(first, 4.0f);  // bottom row first

  LabelImage l;
  l.width  = 2;
  l.height = 2;
  l.label  = {1, 2, 3, 255};
  std::ostringstream pgm;
  write_pgm(pgm, l);
  EXPECT_EQ(pgm.str(), std::string("P5\n2 2\n255\n\x01\x02\x03\xff", 15));
}

//}
