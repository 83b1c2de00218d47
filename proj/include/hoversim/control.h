#pragma once

#include <optional>
#include <string_view>
#include <variant>

#include <hoversim/dynamics.h>

namespace hoversim
{

/* control inputs //{ */

namespace reference
{

/// (a) per-motor throttle in [0, 1]
struct ActuatorThrottles
{
  MotorVector throttles;
};

/// (b) roll, pitch, yaw in [-1, 1], collective throttle in [0, 1]
struct ControlGroups
{
  double roll     = 0.0;
  double pitch    = 0.0;
  double yaw      = 0.0;
  double throttle = 0.0;
};

/// (c)
struct RateThrottle
{
  Eigen::Vector3d rate = Eigen::Vector3d::Zero();  // body [rad/s]
  double          throttle = 0.0;
};

/// (d)
struct AttitudeThrottle
{
  Eigen::Matrix3d orientation = Eigen::Matrix3d::Identity();
  double          throttle    = 0.0;
};

/// (e)
struct AccelHeading
{
  Eigen::Vector3d acceleration = Eigen::Vector3d::Zero();  // world [m/s^2]
  double          heading      = 0.0;
};

/// (f)
struct AccelHeadingRate
{
  Eigen::Vector3d acceleration = Eigen::Vector3d::Zero();
  double          heading_rate = 0.0;
};

/// (g)
struct VelocityHeading
{
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();  // world [m/s]
  double          heading  = 0.0;
};

/// (h)
struct VelocityHeadingRate
{
  Eigen::Vector3d velocity     = Eigen::Vector3d::Zero();
  double          heading_rate = 0.0;
};

/// (i)
struct PositionHeading
{
  Eigen::Vector3d position = Eigen::Vector3d::Zero();  // world [m]
  double          heading  = 0.0;
};

}  // namespace reference

using ControlInput = std::variant<reference::ActuatorThrottles, reference::ControlGroups, reference::RateThrottle, reference::AttitudeThrottle,
                                  reference::AccelHeading, reference::AccelHeadingRate, reference::VelocityHeading, reference::VelocityHeadingRate,
                                  reference::PositionHeading>;

/// Modality tags in the order (a)..(i); the numeric value is the variant index.
enum class Modality : std::uint8_t
{
  ActuatorThrottles   = 0,
  ControlGroups       = 1,
  RateThrottle        = 2,
  AttitudeThrottle    = 3,
  AccelHeading        = 4,
  AccelHeadingRate    = 5,
  VelocityHeading     = 6,
  VelocityHeadingRate = 7,
  PositionHeading     = 8,
};

inline Modality modalityOf(const ControlInput& input) {
  return static_cast<Modality>(input.index());
}

std::string_view modalityName(Modality m);
std::optional<Modality> modalityFromName(std::string_view name);

class ControlError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Rejects non-finite values, a non-SO(3) attitude reference and a wrong motor count.
void validate(const ControlInput& input, const UavModel& model);

//}

/* gains and controller state //{ */

struct PidGains
{
  double kp           = 0.0;
  double ki           = 0.0;
  double kd           = 0.0;
  double output_limit = 1.0;  // symmetric, per axis
};

struct CascadeGains
{
  double   position_p   = 1.0;                  // [1/s]
  double   max_velocity = 8.0;                  // [m/s]
  PidGains velocity{3.0, 0.1, 0.3, 8.0};        // -> [m/s^2]
  double   max_tilt     = 1.0;                  // [rad], tilt of the desired thrust direction
  double   attitude_p   = 6.0;                  // [1/s]
  double   max_rate_roll_pitch = 6.0;           // [rad/s]
  double   max_rate_yaw        = 3.0;           // [rad/s]
  PidGains rate{4.0, 0.2, 0.05, 60.0};          // -> [rad/s^2]

  void validate() const;
};

struct PidState
{
  Eigen::Vector3d integral   = Eigen::Vector3d::Zero();
  Eigen::Vector3d prev_error = Eigen::Vector3d::Zero();
  bool            has_prev   = false;

  void reset() {
    *this = PidState{};
  }
};

struct ControllerState
{
  PidState velocity;
  PidState rate;

  // heading reference for the heading-rate modalities; not wrapped
  double heading_reference    = 0.0;
  bool   heading_initialized  = false;
  int    last_modality        = -1;

  void reset() {
    *this = ControllerState{};
  }
};

//}

/* cascade stages //{ */

struct SpeedCommand
{
  double speed   = 0.0;
  bool   clamped = false;
};

SpeedCommand throttle_to_speed(const PropellerParams& p, double throttle);

/// Per-motor throttles from normalized control groups, clamped to [0, 1].
MotorVector mix_control_groups(const AllocationModel& a, const reference::ControlGroups& groups);

/// Rotation vector of R^T R_d.
Eigen::Vector3d attitude_error(const Eigen::Matrix3d& R, const Eigen::Matrix3d& R_d);

struct AttitudeThrust
{
  Eigen::Matrix3d orientation = Eigen::Matrix3d::Identity();
  double          thrust      = 0.0;  // [N]
  bool            saturated   = false;
};

/// Desired orientation and collective thrust realising a world acceleration with a given heading.
AttitudeThrust accel_to_attitude(const Eigen::Vector3d& acceleration, double heading, const UavModel& model);

/// Collective thrust when every motor spins at throttle * w_max.
double throttle_to_thrust(const UavModel& model, double throttle);

struct ControlOutput
{
  MotorVector motor_speeds;  // desired, [rad/s]
  Wrench      commanded;     // wrench requested from the allocation (cascade modalities only)
  bool        saturated = false;
};

/**
 * @brief Resolves any control modality down to desired motor speeds.
 *
 * position -> velocity -> acceleration -> attitude -> body rate -> torque,
 * then (F_t, tau) through the allocation pseudo-inverse. Modalities (a) and
 * (b) produce throttles directly.
 */
ControlOutput resolve(const ControlInput& input, const UavState& s, const UavModel& model, const CascadeGains& gains, ControllerState& cs, double dt);

/// Desired motor speeds realising a wrench; negative force demands are clamped to zero.
MotorVector wrench_to_speeds(const UavModel& model, const Wrench& wrench, bool* saturated = nullptr);

//}

}  // namespace hoversim
