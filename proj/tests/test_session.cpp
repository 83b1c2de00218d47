#include <gtest/gtest.h>

#include <cstring>
#include <thread>

#include <hoversim/session.h>

using namespace hoversim;

namespace
{

TerrainParams flatWorld() {
  TerrainParams p;
  p.amplitude      = 0.0;
  p.forest_density = 0.0;
  return p;
}

SessionConfig minimal(int n_uavs = 1) {
  SessionConfig c;
  c.world = flatWorld();
  for (int i = 0; i < n_uavs; i++) {
    UavConfig u;
    u.position = Eigen::Vector3d(50.0 + 2.0 * i, 50.0, 20.0);
    c.uavs.push_back(u);
  }
  return c;
}

LidarConfig downLidar() {
  LidarConfig l;
  l.n_horizontal   = 3;
  l.n_vertical     = 3;
  l.horizontal_fov = 0.2;
  l.vertical_fov   = 0.2;
  l.rate           = 10.0;
  l.mount.rotation = Eigen::AngleAxisd(M_PI / 2.0, Eigen::Vector3d::UnitY()).toRotationMatrix();
  return l;
}

std::string errorCode(const std::function<void()>& fn) {
  try {
    fn();
  }
  catch (const SessionError& e) {
    return e.code();
  }
  return "";
}

bool bitEqual(const UavState& a, const UavState& b) {
  auto same = [](const auto& x, const auto& y) {
    return x.size() == y.size() && std::memcmp(x.data(), y.data(), sizeof(double) * x.size()) == 0;
  };
  return same(a.position, b.position) && same(a.velocity, b.velocity) && same(a.orientation, b.orientation) &&
         same(a.angular_velocity, b.angular_velocity) && same(a.motor_speeds, b.motor_speeds);
}

}  // namespace

/* creation //{ */

TEST(Session, MinimalConfigActivatesNineCells) {
  SessionConfig c;
  c.uavs.emplace_back();
  Session s(c);
  EXPECT_EQ(s.world().activeCells().size(), 9u);
  EXPECT_EQ(s.status().active_cells, 9u);
  EXPECT_EQ(s.state(0).position, Eigen::Vector3d::Zero());
  EXPECT_EQ(s.state(0).velocity, Eigen::Vector3d::Zero());
}

TEST(Session, RejectsZeroUavs) {
  SessionConfig c;
  EXPECT_EQ(errorCode([&] { Session s(c); }), "invalid-config");
}

TEST(Session, RejectsBadConfigListingFields) {
  SessionConfig c = minimal(2);
  c.dt            = 0.0;
  c.uavs[1].model.body.mass = -1.0;
  try {
    Session s(c);
    FAIL();
  }
  catch (const SessionError& e) {
    EXPECT_EQ(e.code(), "invalid-config");
    const std::string msg = e.what();
    EXPECT_NE(msg.find("dt"), std::string::npos);
    EXPECT_NE(msg.find("uavs[1].model"), std::string::npos);
  }
}

TEST(Session, RejectsZeroRealtimeFactor) {
  SessionConfig c   = minimal();
  c.mode            = RunMode::Realtime;
  c.realtime_factor = 0.0;
  EXPECT_EQ(errorCode([&] { Session s(c); }), "invalid-config");
}

TEST(Session, AcceptsFourHundredUavs) {
  SessionConfig c;
  c.world = flatWorld();
  for (int i = 0; i < 400; i++) {
    UavConfig u;
    u.position = Eigen::Vector3d(5.0 * (i % 20), 5.0 * (i / 20), 30.0);
    c.uavs.push_back(u);
  }
  Session s(c);
  const double hover = c.uavs[0].model.hoverMotorSpeed() / c.uavs[0].model.propellers.max_angular_velocity;
  for (std::size_t i = 0; i < s.uavCount(); i++) {
    s.set_control(i, reference::ActuatorThrottles{MotorVector::Constant(4, hover)});
  }
  const StepResult r = s.step(25);
  ASSERT_EQ(r.states.size(), 400u);
  EXPECT_EQ(r.steps, 25u);
  for (const auto& st : r.states) {
    EXPECT_TRUE(st.position.allFinite());
  }
}

//}

/* set_control //{ */

TEST(Session, HitlUavRejectsControl) {
  SessionConfig c = minimal(2);
  c.uavs[1].hitl  = true;
  Session s(c);
  EXPECT_EQ(errorCode([&] { s.set_control(1, reference::PositionHeading{Eigen::Vector3d(0, 0, 5), 0.0}); }), "hitl-immutable");
  EXPECT_EQ(errorCode([&] { s.set_control(0, reference::PositionHeading{Eigen::Vector3d(0, 0, 5), 0.0}); }), "");
}

TEST(Session, UnknownUav) {
  Session s(minimal());
  EXPECT_EQ(errorCode([&] { s.set_control(3, reference::ControlGroups{}); }), "unknown-uav");
  EXPECT_EQ(errorCode([&] { s.state(3); }), "unknown-uav");
}

TEST(Session, NanCommandRejectedPreviousRetained) {
  Session                           s(minimal());
  const reference::PositionHeading good{Eigen::Vector3d(50, 50, 25), 0.3};
  s.set_control(0, good);
  EXPECT_EQ(errorCode([&] { s.set_control(0, reference::PositionHeading{Eigen::Vector3d(NAN, 0, 0), 0.0}); }), "invalid-command");
  const auto* held = std::get_if<reference::PositionHeading>(&s.command(0));
  ASSERT_NE(held, nullptr);
  EXPECT_EQ(held->position, good.position);
  EXPECT_EQ(held->heading, good.heading);
}

TEST(Session, UnreachableAccelerationRejected) {
  Session s(minimal());
  // a = g needs zero thrust with an undefined body axis
  EXPECT_EQ(errorCode([&] { s.set_control(0, reference::AccelHeading{Eigen::Vector3d(0, 0, -9.81), 0.0}); }), "invalid-command");
}

TEST(Session, PositionCommandAppliedNextStep) {
  Session s(minimal());
  s.set_control(0, reference::PositionHeading{Eigen::Vector3d(50, 50, 20), 0.0});
  const StepResult r = s.step(1);
  EXPECT_GT(r.states[0].motor_speeds.minCoeff(), 0.0);
}

//}

/* step //{ */

TEST(Session, OneSecondTenLidarFrames) {
  SessionConfig c = minimal();
  c.uavs[0].lidars.push_back(downLidar());
  Session          s(c);
  const StepResult r = s.step(250);
  EXPECT_NEAR(r.time, 1.0, 1e-12);
  EXPECT_EQ(r.steps, 250u);
  int lidar = 0;
  for (const auto& f : r.frames) {
    lidar += f.kind == SensorKind::Lidar;
  }
  EXPECT_EQ(lidar, 10);
  EXPECT_NEAR(r.frames.back().time(), 1.0, 1e-12);
}

TEST(Session, SensorRatesOverTwoSeconds) {
  SessionConfig c = minimal();
  c.uavs[0].imu   = ImuConfig{};
  c.uavs[0].nav   = NavSensorConfig{};
  CameraConfig cam;
  cam.width  = 8;
  cam.height = 6;
  cam.rate   = 5.0;
  c.uavs[0].cameras.push_back(cam);
  Session          s(c);
  const StepResult r = s.step(500);
  std::map<SensorKind, int> count;
  for (const auto& f : r.frames) {
    count[f.kind]++;
  }
  EXPECT_EQ(count[SensorKind::Imu], 500);
  EXPECT_EQ(count[SensorKind::Gnss], 20);
  EXPECT_EQ(count[SensorKind::Baro], 20);
  EXPECT_EQ(count[SensorKind::Mag], 20);
  EXPECT_EQ(count[SensorKind::Depth], 10);
  EXPECT_EQ(count[SensorKind::Label], 10);
}

TEST(Session, DefaultCommandFallsBallistically) {
  Session         s(minimal());
  const double    z0 = s.state(0).position.z();
  const StepResult r = s.step(250);
  const double     g = 9.81;
  EXPECT_NEAR(r.states[0].position.z(), z0 - 0.5 * g, 1e-9);
  EXPECT_NEAR(r.states[0].velocity.z(), -g, 1e-9);
  EXPECT_NEAR(r.states[0].position.x(), 50.0, 1e-12);
  EXPECT_EQ(r.states[0].motor_speeds.norm(), 0.0);
}

TEST(Session, ReplayIsBitIdentical) {
  SessionConfig c = minimal(3);
  c.uavs[0].lidars.push_back(downLidar());
  c.uavs[1].imu = ImuConfig{};
  c.uavs[1].imu->noise = NoiseSpec::uniform(0.1, 6, 9);
  c.world.forest_density = 0.003;
  c.world.amplitude      = 8.0;

  auto run = [&] {
    Session                    s(c);
    std::vector<StepResult>    out;
    s.set_control(0, reference::PositionHeading{Eigen::Vector3d(60, 55, 25), 0.5});
    s.set_control(1, reference::VelocityHeading{Eigen::Vector3d(3, 0, 0.5), 0.0});
    s.set_control(2, reference::AttitudeThrottle{rotationZ(0.4), 0.6});
    for (int k = 0; k < 20; k++) {
      out.push_back(s.step(25));
      if (k == 8) {
        s.set_control(0, reference::VelocityHeadingRate{Eigen::Vector3d(-2, 1, 0), 0.2});
      }
    }
    return std::make_pair(out, s.world().activeCells());
  };

  const auto [a, cells_a] = run();
  const auto [b, cells_b] = run();
  EXPECT_EQ(cells_a, cells_b);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); k++) {
    ASSERT_EQ(a[k].states.size(), b[k].states.size());
    for (std::size_t i = 0; i < a[k].states.size(); i++) {
      EXPECT_TRUE(bitEqual(a[k].states[i], b[k].states[i]));
    }
    ASSERT_EQ(a[k].frames.size(), b[k].frames.size());
    for (std::size_t f = 0; f < a[k].frames.size(); f++) {
      const auto& fa = a[k].frames[f];
      const auto& fb = b[k].frames[f];
      EXPECT_EQ(fa.kind, fb.kind);
      EXPECT_EQ(fa.index, fb.index);
      if (const auto* pa = std::get_if<PointCloud>(&fa.frame)) {
        const auto& pb = std::get<PointCloud>(fb.frame);
        ASSERT_EQ(pa->points.size(), pb.points.size());
        for (std::size_t p = 0; p < pa->points.size(); p++) {
          EXPECT_EQ(pa->points[p].range, pb.points[p].range);
        }
      }
      if (const auto* ia = std::get_if<ImuSample>(&fa.frame)) {
        const auto& ib = std::get<ImuSample>(fb.frame);
        EXPECT_EQ(ia->accel, ib.accel);
        EXPECT_EQ(ia->gyro, ib.gyro);
      }
    }
  }
}

TEST(Session, CommandsDoNotLeakAcrossUavs) {
  SessionConfig c = minimal(2);

  auto trace = [&](bool disturb) {
    Session               s(c);
    std::vector<UavState> out;
    s.set_control(0, reference::PositionHeading{Eigen::Vector3d(50, 50, 20), 0.0});
    s.set_control(1, reference::PositionHeading{Eigen::Vector3d(52, 50, 20), 0.0});
    for (int k = 0; k < 100; k++) {
      if (disturb && k == 10) {
        s.set_control(1, reference::VelocityHeading{Eigen::Vector3d(5, -3, 2), 1.0});
      }
      out.push_back(s.step(1).states[0]);
    }
    return out;
  };

  const auto a = trace(false);
  const auto b = trace(true);
  for (std::size_t k = 0; k < a.size(); k++) {
    EXPECT_TRUE(bitEqual(a[k], b[k]));
  }
}

TEST(Session, DivergenceReported) {
  SessionConfig c                 = minimal();
  c.uavs[0].model.body.mass       = 1e-300;
  c.uavs[0].model.body.inertia    = Eigen::Matrix3d::Identity() * 1e-300;
  Session s(c);
  s.set_control(0, reference::ActuatorThrottles{MotorVector::Constant(4, 1.0)});
  EXPECT_EQ(errorCode([&] { s.step(250); }), "diverged");
}

TEST(Session, SteppingRejectedInRealtimeMode) {
  SessionConfig c = minimal();
  c.mode          = RunMode::Realtime;
  Session s(c);
  EXPECT_EQ(errorCode([&] { s.step(1); }), "realtime-mode");
}

//}

/* HITL //{ */

TEST(Hitl, NadirRangeOverFlatWorld) {
  SessionConfig c = minimal();
  c.uavs[0].hitl  = true;
  c.uavs[0].lidars.push_back(downLidar());
  Session s(c);
  s.set_hitl_pose(0, Eigen::Vector3d(40, 40, 10), Eigen::Matrix3d::Identity(), 12.5);

  const auto frames = s.request_sensor(0, SensorKind::Lidar, 0);
  ASSERT_EQ(frames.size(), 1u);
  EXPECT_EQ(frames[0].time(), 12.5);
  const auto& pc = std::get<PointCloud>(frames[0].frame);
  bool        found = false;
  for (const auto& p : pc.points) {
    if (p.ray == 4) {  // centre of the 3x3 grid
      EXPECT_NEAR(p.range, 10.0, 1e-9);
      found = true;
    }
  }
  EXPECT_TRUE(found);
}

TEST(Hitl, PoseAdoptedVerbatim) {
  SessionConfig c = minimal();
  c.uavs[0].hitl  = true;
  Session               s(c);
  const Eigen::Matrix3d R = Eigen::AngleAxisd(0.7, Eigen::Vector3d(1, 2, 3).normalized()).toRotationMatrix();
  const Eigen::Vector3d r(12.25, -3.5, 7.125);
  s.set_hitl_pose(0, r, R, 1.0);
  s.step(100);
  EXPECT_TRUE(s.state(0).position == r);
  EXPECT_TRUE(s.state(0).orientation == R);
  EXPECT_EQ(s.state(0).velocity, Eigen::Vector3d::Zero());
}

TEST(Hitl, PoseErrors) {
  SessionConfig c = minimal(2);
  c.uavs[0].hitl  = true;
  Session s(c);
  EXPECT_EQ(errorCode([&] { s.set_hitl_pose(1, Eigen::Vector3d::Zero(), Eigen::Matrix3d::Identity(), 0.0); }), "not-hitl");
  Eigen::Matrix3d skew = Eigen::Matrix3d::Identity();
  skew(0, 1)           = 0.1;
  EXPECT_EQ(errorCode([&] { s.set_hitl_pose(0, Eigen::Vector3d::Zero(), skew, 0.0); }), "invalid-pose");
  EXPECT_EQ(errorCode([&] { s.set_hitl_pose(0, Eigen::Vector3d::Zero(), -Eigen::Matrix3d::Identity(), 0.0); }), "invalid-pose");
  EXPECT_EQ(errorCode([&] { s.set_hitl_pose(0, Eigen::Vector3d(NAN, 0, 0), Eigen::Matrix3d::Identity(), 0.0); }), "invalid-pose");
}

TEST(Hitl, CellsFollowPoseAcrossBorder) {
  SessionConfig c         = minimal();
  c.uavs[0].hitl          = true;
  c.world.visibility_range = 60.0;
  Session s(c);

  // at (50, 50) only the four edge neighbours are within 60 m: plus shape
  s.set_hitl_pose(0, Eigen::Vector3d(50, 50, 5), Eigen::Matrix3d::Identity(), 0.0);
  std::vector<CellIndex> expect{{-1, 0}, {0, -1}, {0, 0}, {0, 1}, {1, 0}};
  EXPECT_EQ(s.world().activeCells(), expect);

  // cross into cell (1, 0)
  s.set_hitl_pose(0, Eigen::Vector3d(150, 50, 5), Eigen::Matrix3d::Identity(), 0.1);
  expect = {{0, 0}, {1, -1}, {1, 0}, {1, 1}, {2, 0}};
  EXPECT_EQ(s.world().activeCells(), expect);
}

TEST(Hitl, ImuIsStaticSpecificForce) {
  SessionConfig c = minimal();
  c.uavs[0].hitl  = true;
  c.uavs[0].imu   = ImuConfig{};
  Session s(c);

  s.set_hitl_pose(0, Eigen::Vector3d(0, 0, 3), Eigen::Matrix3d::Identity(), 2.0);
  auto imu = std::get<ImuSample>(s.request_sensor(0, SensorKind::Imu, 0)[0].frame);
  EXPECT_EQ(imu.gyro, Eigen::Vector3d::Zero());
  EXPECT_NEAR((imu.accel - Eigen::Vector3d(0, 0, 9.81)).norm(), 0.0, 1e-12);

  const Eigen::Matrix3d R = Eigen::AngleAxisd(0.5, Eigen::Vector3d::UnitX()).toRotationMatrix();
  s.set_hitl_pose(0, Eigen::Vector3d(0, 0, 3), R, 2.1);
  imu = std::get<ImuSample>(s.request_sensor(0, SensorKind::Imu, 0)[0].frame);
  EXPECT_EQ(imu.gyro, Eigen::Vector3d::Zero());
  EXPECT_NEAR((imu.accel - R.transpose() * Eigen::Vector3d(0, 0, 9.81)).norm(), 0.0, 1e-12);
}

TEST(Session, UnknownSensorRequest) {
  Session s(minimal());
  EXPECT_EQ(errorCode([&] { s.request_sensor(0, SensorKind::Lidar, 0); }), "unknown-sensor");
  EXPECT_EQ(errorCode([&] { s.request_sensor(0, SensorKind::Imu, 0); }), "unknown-sensor");
}

//}

/* realtime //{ */

namespace
{

double pacedRatio(double factor, double seconds) {
  SessionConfig c   = minimal();
  c.mode            = RunMode::Realtime;
  c.realtime_factor = factor;
  Session        s(c);
  std::mutex     m;
  RealtimeRunner runner(s, m);
  runner.start();
  std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
  double sim = 0.0;
  double wall = 0.0;
  {
    std::scoped_lock lock(m);
    sim  = s.time();
    wall = runner.wallTime();
  }
  runner.stop();
  return sim / (wall * factor);
}

}  // namespace

TEST(Realtime, FactorOneTracksWallClock) {
  EXPECT_NEAR(pacedRatio(1.0, 2.0), 1.0, 0.02);
}

TEST(Realtime, FactorTwoRunsTwiceAsFast) {
  EXPECT_NEAR(pacedRatio(2.0, 2.0), 1.0, 0.02);
}

TEST(Realtime, RunnerRejectsSteppedSession) {
  Session        s(minimal());
  std::mutex     m;
  RealtimeRunner runner(s, m);
  EXPECT_EQ(errorCode([&] { runner.start(); }), "stepped-mode");
}

TEST(Realtime, CommandsAndFramesWhileRunning) {
  SessionConfig c = minimal();
  c.mode          = RunMode::Realtime;
  c.uavs[0].lidars.push_back(downLidar());
  Session        s(c);
  std::mutex     m;
  RealtimeRunner runner(s, m);
  runner.start();
  {
    std::scoped_lock lock(m);
    s.set_control(0, reference::PositionHeading{Eigen::Vector3d(50, 50, 20), 0.0});
  }
  std::this_thread::sleep_for(std::chrono::milliseconds(550));
  const auto frames = runner.poll();
  runner.stop();
  EXPECT_GE(frames.size(), 4u);
  EXPECT_LE(frames.size(), 6u);
  EXPECT_FALSE(runner.error());
  EXPECT_LT(std::abs(runner.lag()), 0.6);
  std::scoped_lock lock(m);
  EXPECT_NEAR(s.state(0).position.z(), 20.0, 0.5);
}

//}
