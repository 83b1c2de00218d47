#include <hoversim/session.h>

#include <cmath>
#include <sstream>

#include <hoversim/parallel.h>

namespace hoversim
{

namespace
{

constexpr std::uint64_t kOnDemandBase = 1ULL << 62;  // noise stream offset for requested frames

bool isRotation(const Eigen::Matrix3d& R) {
  return R.allFinite() && orthogonalityError(R) <= 1e-6 && R.determinant() > 0.0;
}

template <class Fn>
void collect(std::vector<std::string>& problems, const std::string& path, Fn&& fn) {
  try {
    fn();
  }
  catch (const std::exception& e) {
    problems.push_back(path + ": " + e.what());
  }
}

}  // namespace

/* SessionConfig //{ */

void SessionConfig::validate() const {

  std::vector<std::string> problems;

  collect(problems, "world", [&] { world.validate(); });
  collect(problems, "materials", [&] { materials.validate(); });

  if (uavs.empty()) {
    problems.emplace_back("uavs: at least one UAV is required");
  }
  if (!(dt > 0.0) || !std::isfinite(dt)) {
    problems.emplace_back("dt: must be > 0");
  }
  if (!(realtime_factor > 0.0) || !std::isfinite(realtime_factor)) {
    problems.emplace_back("realtime_factor: must be > 0");
  }
  if (spectator && !spectator->allFinite()) {
    problems.emplace_back("spectator: must be finite");
  }

  for (std::size_t i = 0; i < uavs.size(); i++) {
    const UavConfig&  u    = uavs[i];
    const std::string path = "uavs[" + std::to_string(i) + "]";

    collect(problems, path + ".model", [&] { u.model.validate(); });
    collect(problems, path + ".gains", [&] { u.gains.validate(); });
    if (!u.position.allFinite()) {
      problems.push_back(path + ".position: must be finite");
    }
    if (!isRotation(u.orientation)) {
      problems.push_back(path + ".orientation: not a rotation");
    }
    if (u.imu) {
      if (!(u.imu->rate > 0.0)) {
        problems.push_back(path + ".sensors.imu.rate: must be > 0");
      }
      collect(problems, path + ".sensors.imu.noise", [&] { u.imu->noise.validate(); });
    }
    if (u.nav) {
      if (!(u.nav->rate > 0.0)) {
        problems.push_back(path + ".sensors.nav.rate: must be > 0");
      }
      collect(problems, path + ".sensors.nav", [&] { u.nav->nav.validate(); });
    }
    for (std::size_t k = 0; k < u.lidars.size(); k++) {
      collect(problems, path + ".sensors.lidars[" + std::to_string(k) + "]", [&] { u.lidars[k].validate(); });
    }
    for (std::size_t k = 0; k < u.cameras.size(); k++) {
      collect(problems, path + ".sensors.cameras[" + std::to_string(k) + "]", [&] { u.cameras[k].validate(); });
    }
  }

  if (!problems.empty()) {
    std::ostringstream os;
    for (std::size_t i = 0; i < problems.size(); i++) {
      os << (i ? "; " : "") << problems[i];
    }
    throw SessionError("invalid-config", os.str());
  }
}

//}

double TaggedFrame::time() const {
  return std::visit([](const auto& f) { return f.time; }, frame);
}

/* Session //{ */

struct Session::Slot
{
  UavState        state;
  ControllerState cs;
  ControlInput    command;
  MotorVector     desired;
  double          hitl_timestamp = 0.0;

  std::optional<SensorSchedule> imu;
  std::optional<SensorSchedule> nav;
  std::vector<SensorSchedule>   lidars;
  std::vector<SensorSchedule>   cameras;

  std::string error;
};

Session::Session(SessionConfig cfg) : cfg_((cfg.validate(), std::move(cfg))), world_(cfg_.world, cfg_.materials), created_(std::chrono::steady_clock::now()) {

  uavs_.resize(cfg_.uavs.size());

  for (std::size_t i = 0; i < uavs_.size(); i++) {
    const UavConfig& u = cfg_.uavs[i];
    Slot&            s = uavs_[i];

    s.state   = UavState::atRest(u.model, u.position, u.orientation);
    s.desired = MotorVector::Zero(u.model.motorCount());
    s.command = reference::ActuatorThrottles{MotorVector::Zero(u.model.motorCount())};

    if (u.imu) {
      s.imu.emplace(u.imu->rate);
    }
    if (u.nav) {
      s.nav.emplace(u.nav->rate);
    }
    for (const auto& l : u.lidars) {
      s.lidars.emplace_back(l.rate);
    }
    for (const auto& c : u.cameras) {
      s.cameras.emplace_back(c.rate);
    }
  }

  updateCells();
}

Session::~Session() = default;

std::size_t Session::uavCount() const {
  return uavs_.size();
}

Session::Slot& Session::slot(std::size_t uav) {
  if (uav >= uavs_.size()) {
    throw SessionError("unknown-uav", "no UAV with id " + std::to_string(uav));
  }
  return uavs_[uav];
}

const Session::Slot& Session::slot(std::size_t uav) const {
  if (uav >= uavs_.size()) {
    throw SessionError("unknown-uav", "no UAV with id " + std::to_string(uav));
  }
  return uavs_[uav];
}

const UavState& Session::state(std::size_t uav) const {
  return slot(uav).state;
}

const ControlInput& Session::command(std::size_t uav) const {
  return slot(uav).command;
}

bool Session::isHitl(std::size_t uav) const {
  slot(uav);
  return cfg_.uavs[uav].hitl;
}

double Session::hitlTimestamp(std::size_t uav) const {
  return slot(uav).hitl_timestamp;
}

void Session::set_control(std::size_t uav, const ControlInput& input) {

  Slot& s = slot(uav);
  if (cfg_.uavs[uav].hitl) {
    throw SessionError("hitl-immutable", "UAV " + std::to_string(uav) + " is driven by external poses");
  }

  const UavModel& model = cfg_.uavs[uav].model;
  try {
    validate(input, model);
    // an acceleration equal to gravity leaves the thrust direction undefined
    if (const auto* a = std::get_if<reference::AccelHeading>(&input)) {
      accel_to_attitude(a->acceleration, a->heading, model);
    } else if (const auto* b = std::get_if<reference::AccelHeadingRate>(&input)) {
      accel_to_attitude(b->acceleration, 0.0, model);
    }
  }
  catch (const std::exception& e) {
    throw SessionError("invalid-command", e.what());
  }

  s.command = input;
}

void Session::set_hitl_pose(std::size_t uav, const Eigen::Vector3d& position, const Eigen::Matrix3d& orientation, double timestamp) {

  Slot& s = slot(uav);
  if (!cfg_.uavs[uav].hitl) {
    throw SessionError("not-hitl", "UAV " + std::to_string(uav) + " is simulated; external poses are rejected");
  }
  if (!position.allFinite() || !std::isfinite(timestamp)) {
    throw SessionError("invalid-pose", "position and timestamp must be finite");
  }
  if (!isRotation(orientation)) {
    throw SessionError("invalid-pose", "orientation is not a rotation matrix");
  }

  s.state.position         = position;
  s.state.orientation      = orientation;
  s.state.velocity         = Eigen::Vector3d::Zero();
  s.state.angular_velocity = Eigen::Vector3d::Zero();
  s.hitl_timestamp         = timestamp;

  updateCells();
}

StepResult Session::step(std::uint64_t n_steps) {
  if (cfg_.mode != RunMode::Stepped) {
    throw SessionError("realtime-mode", "session is paced by the realtime runner");
  }
  StepResult out;
  advance(n_steps, out);
  return out;
}

void Session::advance(std::uint64_t n_steps, StepResult& out) {

  for (std::uint64_t k = 0; k < n_steps; k++) {

    parallel_for(
        uavs_.size(),
        [&](std::size_t i) {
          const UavConfig& u = cfg_.uavs[i];
          Slot&            s = uavs_[i];
          if (u.hitl) {
            return;
          }
          try {
            const ControlOutput c = resolve(s.command, s.state, u.model, u.gains, s.cs, cfg_.dt);
            s.desired             = c.motor_speeds;
            s.state               = rk4_step(u.model, s.state, s.desired, cfg_.dt);
          }
          catch (const std::exception& e) {
            s.error = e.what();
          }
        },
        8);

    for (std::size_t i = 0; i < uavs_.size(); i++) {
      if (!uavs_[i].error.empty()) {
        const std::string msg = "UAV " + std::to_string(i) + " diverged at t=" + std::to_string(time()) + ": " + uavs_[i].error;
        uavs_[i].error.clear();
        throw SessionError("diverged", msg);
      }
    }

    steps_++;
    updateCells();

    for (std::size_t i = 0; i < uavs_.size(); i++) {
      sampleScheduled(i, out.frames);
    }
  }

  out.time  = time();
  out.steps = steps_;
  out.states.clear();
  for (const Slot& s : uavs_) {
    out.states.push_back(s.state);
  }
}

void Session::updateCells() {
  std::vector<Eigen::Vector3d> observers;
  observers.reserve(uavs_.size());
  for (const Slot& s : uavs_) {
    observers.push_back(s.state.position);
  }
  world_.update_cells(observers, cfg_.spectator);
}

/* sensors //{ */

void Session::sampleScheduled(std::size_t uav, std::vector<TaggedFrame>& out) {

  Slot&        s = uavs_[uav];
  const double t = time();

  if (s.imu) {
    for (auto k : s.imu->due(t)) {
      out.push_back(imuFrame(uav, k));
      std::get<ImuSample>(out.back().frame).time = s.imu->timestamp(k);
    }
  }
  if (s.nav) {
    for (auto k : s.nav->due(t)) {
      for (TaggedFrame& f : navFrames(uav, k)) {
        std::visit([&](auto& v) { v.time = s.nav->timestamp(k); }, f.frame);
        out.push_back(std::move(f));
      }
    }
  }
  for (std::uint32_t l = 0; l < s.lidars.size(); l++) {
    for (auto k : s.lidars[l].due(t)) {
      out.push_back(lidarFrame(uav, l, k));
      std::get<PointCloud>(out.back().frame).time = s.lidars[l].timestamp(k);
    }
  }
  for (std::uint32_t c = 0; c < s.cameras.size(); c++) {
    for (auto k : s.cameras[c].due(t)) {
      for (TaggedFrame& f : cameraFrames(uav, c, k)) {
        std::visit([&](auto& v) { v.time = s.cameras[c].timestamp(k); }, f.frame);
        out.push_back(std::move(f));
      }
    }
  }
}

TaggedFrame Session::imuFrame(std::size_t uav, std::uint64_t index) const {

  const Slot&      s = uavs_[uav];
  const UavConfig& u = cfg_.uavs[uav];

  ImuSample sample;
  if (u.hitl) {
    // no dynamics behind an external pose: static specific force, zero rates
    UavState still         = s.state;
    still.angular_velocity = Eigen::Vector3d::Zero();
    sample                 = imu_sample(still, Eigen::Vector3d::Zero(), u.model.body.gravity, u.imu->noise, index, time());
  } else {
    const Eigen::Vector3d a = state_derivative(u.model, s.state, s.desired).acceleration;
    sample                  = imu_sample(s.state, a, u.model.body.gravity, u.imu->noise, index, time());
  }

  return TaggedFrame{static_cast<std::uint32_t>(uav), SensorKind::Imu, 0, index, sample};
}

std::vector<TaggedFrame> Session::navFrames(std::size_t uav, std::uint64_t index) const {
  const NavSamples n  = nav_samples(uavs_[uav].state, cfg_.uavs[uav].nav->nav, index, time());
  const auto       id = static_cast<std::uint32_t>(uav);
  return {TaggedFrame{id, SensorKind::Gnss, 0, index, n.gnss}, TaggedFrame{id, SensorKind::Baro, 0, index, n.baro},
          TaggedFrame{id, SensorKind::Mag, 0, index, n.mag}};
}

TaggedFrame Session::lidarFrame(std::size_t uav, std::uint32_t sensor, std::uint64_t index) const {
  const UavState&    st = uavs_[uav].state;
  const LidarConfig& c  = cfg_.uavs[uav].lidars[sensor];
  return TaggedFrame{static_cast<std::uint32_t>(uav), SensorKind::Lidar, sensor, index,
                     lidar_scan(world_, sensor_pose(st.position, st.orientation, c.mount), c, index, time())};
}

std::vector<TaggedFrame> Session::cameraFrames(std::size_t uav, std::uint32_t sensor, std::uint64_t index) const {
  const UavState&     st  = uavs_[uav].state;
  const CameraConfig& c   = cfg_.uavs[uav].cameras[sensor];
  auto [depth, labels]    = camera_images(world_, sensor_pose(st.position, st.orientation, c.mount), c, time());
  const auto id           = static_cast<std::uint32_t>(uav);
  return {TaggedFrame{id, SensorKind::Depth, sensor, index, std::move(depth)}, TaggedFrame{id, SensorKind::Label, sensor, index, std::move(labels)}};
}

std::vector<TaggedFrame> Session::request_sensor(std::size_t uav, SensorKind kind, std::uint32_t sensor) {

  slot(uav);
  const UavConfig&    u     = cfg_.uavs[uav];
  const std::uint64_t index = kOnDemandBase + on_demand_++;
  const double        t     = u.hitl ? uavs_[uav].hitl_timestamp : time();

  auto missing = [&](const char* what) { return SessionError("unknown-sensor", "UAV " + std::to_string(uav) + " has no " + what + " " + std::to_string(sensor)); };

  std::vector<TaggedFrame> out;
  switch (kind) {
    case SensorKind::Imu:
      if (!u.imu || sensor != 0) {
        throw missing("imu");
      }
      out.push_back(imuFrame(uav, index));
      break;
    case SensorKind::Gnss:
    case SensorKind::Baro:
    case SensorKind::Mag:
      if (!u.nav || sensor != 0) {
        throw missing("navigation sensor");
      }
      out = navFrames(uav, index);
      break;
    case SensorKind::Lidar:
      if (sensor >= u.lidars.size()) {
        throw missing("lidar");
      }
      out.push_back(lidarFrame(uav, sensor, index));
      break;
    case SensorKind::Depth:
    case SensorKind::Label:
      if (sensor >= u.cameras.size()) {
        throw missing("camera");
      }
      out = cameraFrames(uav, sensor, index);
      break;
    default:
      throw SessionError("unknown-sensor", "unknown sensor kind " + std::to_string(static_cast<int>(kind)));
  }

  for (TaggedFrame& f : out) {
    std::visit([&](auto& v) { v.time = t; }, f.frame);
  }
  return out;
}

//}

SessionStatus Session::status() const {
  SessionStatus s;
  s.sim_time     = time();
  s.wall_time    = std::chrono::duration<double>(std::chrono::steady_clock::now() - created_).count();
  s.steps        = steps_;
  s.active_cells = static_cast<std::uint32_t>(world_.activeCells().size());
  s.mode         = cfg_.mode;
  return s;
}

//}

/* RealtimeRunner //{ */

RealtimeRunner::RealtimeRunner(Session& session, std::mutex& mutex, std::size_t max_queued_frames)
    : session_(session), mutex_(mutex), max_queued_(max_queued_frames) {
}

RealtimeRunner::~RealtimeRunner() {
  stop();
}

void RealtimeRunner::start() {
  if (session_.config().mode != RunMode::Realtime) {
    throw SessionError("stepped-mode", "session is not configured for realtime pacing");
  }
  if (running_) {
    return;
  }
  dt_         = session_.config().dt;
  factor_     = session_.config().realtime_factor;
  advanced_   = 0;
  start_wall_ = std::chrono::steady_clock::now();
  running_    = true;
  thread_     = std::jthread([this](std::stop_token token) { loop(token); });
}

void RealtimeRunner::stop() {
  if (thread_.joinable()) {
    thread_.request_stop();
    thread_.join();
  }
  running_ = false;
}

double RealtimeRunner::wallTime() const {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_wall_).count();
}

double RealtimeRunner::lag() const {
  return wallTime() * factor_ - static_cast<double>(advanced_.load()) * dt_;
}

std::vector<TaggedFrame> RealtimeRunner::poll() {
  std::lock_guard lock(queue_mutex_);
  std::vector<TaggedFrame> out(std::make_move_iterator(queue_.begin()), std::make_move_iterator(queue_.end()));
  queue_.clear();
  return out;
}

std::optional<std::string> RealtimeRunner::error() const {
  std::lock_guard lock(queue_mutex_);
  return error_;
}

void RealtimeRunner::loop(std::stop_token token) {

  using clock = std::chrono::steady_clock;

  const auto period = std::chrono::duration<double>(dt_ / factor_);

  while (!token.stop_requested()) {

    const std::uint64_t done = advanced_.load();
    const auto          due  = start_wall_ + std::chrono::duration_cast<clock::duration>(period * static_cast<double>(done + 1));

    if (clock::now() < due) {
      // short naps keep stop requests responsive
      std::this_thread::sleep_until(std::min(due, clock::now() + std::chrono::milliseconds(5)));
      continue;
    }

    StepResult r;
    try {
      std::lock_guard lock(mutex_);
      session_.advance(1, r);
    }
    catch (const std::exception& e) {
      std::lock_guard lock(queue_mutex_);
      error_   = e.what();
      running_ = false;
      return;
    }
    advanced_++;

    if (!r.frames.empty()) {
      std::lock_guard lock(queue_mutex_);
      for (auto& f : r.frames) {
        queue_.push_back(std::move(f));
      }
      while (queue_.size() > max_queued_) {
        queue_.pop_front();
        dropped_++;
      }
    }
  }
}

//}

}  // namespace hoversim
