#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <hoversim/control.h>
#include <hoversim/dynamics.h>
#include <hoversim/sensors.h>
#include <hoversim/worldgen.h>

namespace hoversim
{

/// Error carrying a short machine-readable code ("hitl-immutable", "invalid-config", ...).
class SessionError : public std::runtime_error {
public:
  SessionError(std::string code, const std::string& message) : std::runtime_error(message), code_(std::move(code)) {
  }

  const std::string& code() const {
    return code_;
  }

private:
  std::string code_;
};

/* configuration //{ */

struct ImuConfig
{
  double    rate = 250.0;  // [Hz]
  NoiseSpec noise;         // channels 0-2 accel, 3-5 gyro
};

struct NavSensorConfig
{
  double    rate = 10.0;  // [Hz]
  NavConfig nav;
};

struct UavConfig
{
  std::string     name;
  UavModel        model       = UavModel::defaultQuadX();
  Eigen::Vector3d position    = Eigen::Vector3d::Zero();
  Eigen::Matrix3d orientation = Eigen::Matrix3d::Identity();
  bool            hitl        = false;
  CascadeGains    gains;

  std::optional<ImuConfig>       imu;
  std::optional<NavSensorConfig> nav;
  std::vector<LidarConfig>       lidars;
  std::vector<CameraConfig>      cameras;
};

enum class RunMode : std::uint8_t
{
  Stepped  = 0,
  Realtime = 1,
};

struct SessionConfig
{
  TerrainParams                  world;
  SceneMaterials                 materials;
  std::vector<UavConfig>         uavs;
  std::optional<Eigen::Vector3d> spectator;
  RunMode                        mode            = RunMode::Stepped;
  double                         realtime_factor = 1.0;
  double                         dt              = 1.0 / 250.0;  // [s]

  /// Throws SessionError("invalid-config") listing every offending field.
  void validate() const;
};

//}

/* frames and results //{ */

/// Numbering follows the SensorFrame alternatives.
enum class SensorKind : std::uint8_t
{
  Imu   = 0,
  Gnss  = 1,
  Baro  = 2,
  Mag   = 3,
  Lidar = 4,
  Depth = 5,
  Label = 6,
};

struct TaggedFrame
{
  std::uint32_t uav    = 0;
  SensorKind    kind   = SensorKind::Imu;
  std::uint32_t sensor = 0;  // index within the kind (lidar / camera number)
  std::uint64_t index  = 0;  // frame counter of the stream
  SensorFrame   frame;

  double time() const;
};

struct StepResult
{
  double                   time  = 0.0;
  std::uint64_t            steps = 0;
  std::vector<UavState>    states;
  std::vector<TaggedFrame> frames;
};

struct SessionStatus
{
  double        sim_time     = 0.0;
  double        wall_time    = 0.0;  // since session creation [s]
  double        lag          = 0.0;  // realtime only: wall * factor - sim [s]
  std::uint64_t steps        = 0;
  std::uint32_t active_cells = 0;
  RunMode       mode         = RunMode::Stepped;
  bool          running      = false;
};

//}

/* Session //{ */

/**
 * @brief One world plus its UAVs, advanced in lock-step.
 *
 * Not internally synchronized: callers serialize access (the realtime runner
 * and the server share one mutex per session). Commands are latched and held
 * until replaced; the initial command is zero actuator throttle.
 */
class Session {
public:
  explicit Session(SessionConfig cfg);
  ~Session();

  Session(const Session&)            = delete;
  Session& operator=(const Session&) = delete;

  const SessionConfig& config() const {
    return cfg_;
  }

  std::size_t uavCount() const;

  const UavState& state(std::size_t uav) const;

  const ControlInput& command(std::size_t uav) const;

  bool isHitl(std::size_t uav) const;

  double time() const {
    return static_cast<double>(steps_) * cfg_.dt;
  }

  std::uint64_t steps() const {
    return steps_;
  }

  const World& world() const {
    return world_;
  }

  /// Errors: "unknown-uav", "hitl-immutable", "invalid-command" (previous command retained).
  void set_control(std::size_t uav, const ControlInput& input);

  /// Stepped mode only ("realtime-mode" otherwise). Errors: "diverged".
  StepResult step(std::uint64_t n_steps);

  /// Errors: "unknown-uav", "not-hitl", "invalid-pose".
  void set_hitl_pose(std::size_t uav, const Eigen::Vector3d& position, const Eigen::Matrix3d& orientation, double timestamp);

  double hitlTimestamp(std::size_t uav) const;

  /// Immediate frame at the current state. A camera request yields depth and labels.
  std::vector<TaggedFrame> request_sensor(std::size_t uav, SensorKind kind, std::uint32_t sensor);

  SessionStatus status() const;

private:
  friend class RealtimeRunner;

  struct Slot;

  void advance(std::uint64_t n_steps, StepResult& out);

  void updateCells();

  void sampleScheduled(std::size_t uav, std::vector<TaggedFrame>& out);

  TaggedFrame imuFrame(std::size_t uav, std::uint64_t index) const;

  std::vector<TaggedFrame> navFrames(std::size_t uav, std::uint64_t index) const;

  TaggedFrame lidarFrame(std::size_t uav, std::uint32_t sensor, std::uint64_t index) const;

  std::vector<TaggedFrame> cameraFrames(std::size_t uav, std::uint32_t sensor, std::uint64_t index) const;

  Slot& slot(std::size_t uav);

  const Slot& slot(std::size_t uav) const;

  SessionConfig                         cfg_;
  World                                 world_;
  std::vector<Slot>                     uavs_;
  std::uint64_t                         steps_ = 0;
  std::uint64_t                         on_demand_ = 0;
  std::chrono::steady_clock::time_point created_;
};

//}

/* RealtimeRunner //{ */

/**
 * @brief Paces a realtime-mode session against the wall clock.
 *
 * Physics advances at dt / factor per step. When compute falls behind, the
 * simulated time lags and the lag is reported; steps are never skipped.
 * Frames produced while running are queued (bounded) until polled.
 */
class RealtimeRunner {
public:
  RealtimeRunner(Session& session, std::mutex& mutex, std::size_t max_queued_frames = 1024);
  ~RealtimeRunner();

  RealtimeRunner(const RealtimeRunner&)            = delete;
  RealtimeRunner& operator=(const RealtimeRunner&) = delete;

  void start();
  void stop();

  bool running() const {
    return running_.load();
  }

  /// Wall seconds since start() times the factor, minus simulated seconds since start().
  double lag() const;

  double wallTime() const;

  /// Frames produced since the last poll; the oldest are dropped beyond the bound.
  std::vector<TaggedFrame> poll();

  std::uint64_t droppedFrames() const {
    return dropped_.load();
  }

  /// Set when stepping failed (for example on divergence); the runner stops.
  std::optional<std::string> error() const;

private:
  void loop(std::stop_token token);

  Session&                              session_;
  std::mutex&                           mutex_;
  std::size_t                           max_queued_;
  std::atomic<bool>                     running_{false};
  std::atomic<std::uint64_t>            dropped_{0};
  std::atomic<std::uint64_t>            advanced_{0};  // steps since start()
  double                                dt_     = 0.0;
  double                                factor_ = 1.0;
  std::chrono::steady_clock::time_point start_wall_;
  mutable std::mutex                    queue_mutex_;
  std::deque<TaggedFrame>               queue_;
  std::optional<std::string>            error_;
  std::jthread                          thread_;
};

//}

}  // namespace hoversim
