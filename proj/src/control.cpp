#include <hoversim/control.h>

#include <algorithm>
#include <array>
#include <cmath>

namespace hoversim
{

namespace
{

constexpr std::array<std::string_view, 9> kModalityNames = {
    "actuator_throttles", "control_groups",   "rate_throttle",         "attitude_throttle", "accel_heading",
    "accel_heading_rate", "velocity_heading", "velocity_heading_rate", "position_heading",
};

Eigen::Vector3d clampNorm(const Eigen::Vector3d& v, double limit) {
  const double n = v.norm();
  return n > limit ? Eigen::Vector3d(v * (limit / n)) : v;
}

Eigen::Vector3d clampEach(const Eigen::Vector3d& v, double limit) {
  return v.cwiseMax(-limit).cwiseMin(limit);
}

/* pidUpdate() //{ */

Eigen::Vector3d pidUpdate(const PidGains& g, PidState& st, const Eigen::Vector3d& error, double dt) {

  Eigen::Vector3d derivative = Eigen::Vector3d::Zero();
  if (st.has_prev) {
    derivative = (error - st.prev_error) / dt;
  }
  st.prev_error = error;
  st.has_prev   = true;

  const Eigen::Vector3d unsaturated = g.kp * error + g.ki * st.integral + g.kd * derivative;

  // anti-windup: no accumulation on an axis whose output is saturated in the direction of the error,
  // and the integral contribution itself never exceeds the output limit
  for (int i = 0; i < 3; i++) {
    const bool pushing_limit = std::abs(unsaturated(i)) >= g.output_limit && unsaturated(i) * error(i) > 0.0;
    if (!pushing_limit) {
      st.integral(i) += error(i) * dt;
    }
  }
  if (g.ki > 0.0) {
    st.integral = clampEach(st.integral, g.output_limit / g.ki);
  }

  return clampEach(g.kp * error + g.ki * st.integral + g.kd * derivative, g.output_limit);
}

//}

bool usesHeadingRate(Modality m) {
  return m == Modality::AccelHeadingRate || m == Modality::VelocityHeadingRate;
}

double currentHeadingOr(const Eigen::Matrix3d& R, double fallback) {
  try {
    return heading(R);
  }
  catch (const ModelError&) {
    return fallback;
  }
}

/// Limits the thrust direction implied by a desired acceleration to the tilt cone.
Eigen::Vector3d limitTilt(const Eigen::Vector3d& acceleration, const Eigen::Vector3d& gravity, double max_tilt) {

  Eigen::Vector3d thrust_dir = acceleration - gravity;

  const double min_vertical = 0.1 * gravity.norm();
  thrust_dir.z()            = std::max(thrust_dir.z(), min_vertical);

  const double max_horizontal = thrust_dir.z() * std::tan(max_tilt);
  const double horizontal     = thrust_dir.head<2>().norm();
  if (horizontal > max_horizontal) {
    thrust_dir.head<2>() *= max_horizontal / horizontal;
  }

  return thrust_dir + gravity;
}

struct CascadeContext
{
  const UavState&     s;
  const UavModel&     model;
  const CascadeGains& gains;
  ControllerState&    cs;
  double              dt;
};

/* cascade stages //{ */

ControlOutput rateStage(const CascadeContext& ctx, const Eigen::Vector3d& rate_d, double thrust) {

  const Eigen::Matrix3d& J     = ctx.model.body.inertia;
  const Eigen::Vector3d& omega = ctx.s.angular_velocity;

  const Eigen::Vector3d angular_accel = pidUpdate(ctx.gains.rate, ctx.cs.rate, rate_d - omega, ctx.dt);

  ControlOutput out;
  out.commanded.thrust = thrust;
  out.commanded.torque = J * angular_accel + omega.cross(J * omega);
  out.motor_speeds     = wrench_to_speeds(ctx.model, out.commanded, &out.saturated);
  return out;
}

ControlOutput attitudeStage(const CascadeContext& ctx, const Eigen::Matrix3d& R_d, double thrust) {

  Eigen::Vector3d rate_d = ctx.gains.attitude_p * attitude_error(ctx.s.orientation, R_d);

  const double roll_pitch = rate_d.head<2>().norm();
  if (roll_pitch > ctx.gains.max_rate_roll_pitch) {
    rate_d.head<2>() *= ctx.gains.max_rate_roll_pitch / roll_pitch;
  }
  rate_d.z()       = std::clamp(rate_d.z(), -ctx.gains.max_rate_yaw, ctx.gains.max_rate_yaw);

  return rateStage(ctx, rate_d, thrust);
}

ControlOutput accelerationStage(const CascadeContext& ctx, const Eigen::Vector3d& acceleration, double heading_d) {

  const Eigen::Vector3d limited = limitTilt(acceleration, ctx.model.body.gravity, ctx.gains.max_tilt);
  const AttitudeThrust  at      = accel_to_attitude(limited, heading_d, ctx.model);

  ControlOutput out = attitudeStage(ctx, at.orientation, at.thrust);
  out.saturated     = out.saturated || at.saturated;
  return out;
}

ControlOutput velocityStage(const CascadeContext& ctx, const Eigen::Vector3d& velocity_d, double heading_d) {

  const Eigen::Vector3d acceleration = pidUpdate(ctx.gains.velocity, ctx.cs.velocity, velocity_d - ctx.s.velocity, ctx.dt);

  return accelerationStage(ctx, acceleration, heading_d);
}

ControlOutput positionStage(const CascadeContext& ctx, const Eigen::Vector3d& position_d, double heading_d) {

  const Eigen::Vector3d velocity_d = clampNorm(ctx.gains.position_p * (position_d - ctx.s.position), ctx.gains.max_velocity);

  return velocityStage(ctx, velocity_d, heading_d);
}

//}

ControlOutput fromThrottles(const UavModel& model, const MotorVector& throttles) {

  ControlOutput out;
  out.motor_speeds = MotorVector::Zero(model.motorCount());

  for (int i = 0; i < model.motorCount(); i++) {
    const SpeedCommand cmd = throttle_to_speed(model.propellers, throttles(i));
    out.motor_speeds(i)    = cmd.speed;
    out.saturated          = out.saturated || cmd.clamped;
  }

  return out;
}

}  // namespace

std::string_view modalityName(Modality m) {
  return kModalityNames.at(static_cast<std::size_t>(m));
}

std::optional<Modality> modalityFromName(std::string_view name) {
  for (std::size_t i = 0; i < kModalityNames.size(); i++) {
    if (kModalityNames[i] == name) {
      return static_cast<Modality>(i);
    }
  }
  return std::nullopt;
}

/* validate() //{ */

void validate(const ControlInput& input, const UavModel& model) {

  auto finite = [](double v) { return std::isfinite(v); };

  const bool ok = std::visit(
      [&](const auto& ref) -> bool {
        using T = std::decay_t<decltype(ref)>;
        if constexpr (std::is_same_v<T, reference::ActuatorThrottles>) {
          if (ref.throttles.size() != model.motorCount()) {
            throw ControlError("actuator throttle count does not match the motor count");
          }
          return ref.throttles.allFinite();
        } else if constexpr (std::is_same_v<T, reference::ControlGroups>) {
          return finite(ref.roll) && finite(ref.pitch) && finite(ref.yaw) && finite(ref.throttle);
        } else if constexpr (std::is_same_v<T, reference::RateThrottle>) {
          return ref.rate.allFinite() && finite(ref.throttle);
        } else if constexpr (std::is_same_v<T, reference::AttitudeThrottle>) {
          if (!ref.orientation.allFinite() || !finite(ref.throttle)) {
            return false;
          }
          if (orthogonalityError(ref.orientation) > 1e-6 || std::abs(ref.orientation.determinant() - 1.0) > 1e-6) {
            throw ControlError("attitude reference is not a rotation matrix");
          }
          return true;
        } else if constexpr (std::is_same_v<T, reference::AccelHeading>) {
          return ref.acceleration.allFinite() && finite(ref.heading);
        } else if constexpr (std::is_same_v<T, reference::AccelHeadingRate>) {
          return ref.acceleration.allFinite() && finite(ref.heading_rate);
        } else if constexpr (std::is_same_v<T, reference::VelocityHeading>) {
          return ref.velocity.allFinite() && finite(ref.heading);
        } else if constexpr (std::is_same_v<T, reference::VelocityHeadingRate>) {
          return ref.velocity.allFinite() && finite(ref.heading_rate);
        } else {
          return ref.position.allFinite() && finite(ref.heading);
        }
      },
      input);

  if (!ok) {
    throw ControlError(std::string("non-finite value in ") + std::string(modalityName(modalityOf(input))) + " command");
  }
}

//}

void CascadeGains::validate() const {

  const double non_negative[] = {position_p, velocity.kp, velocity.ki, velocity.kd, attitude_p, rate.kp, rate.ki, rate.kd};
  for (double g : non_negative) {
    if (!(g >= 0.0) || !std::isfinite(g)) {
      throw ControlError("controller gains must be finite and non-negative");
    }
  }

  const double positive[] = {max_velocity, velocity.output_limit, max_tilt, max_rate_roll_pitch, max_rate_yaw, rate.output_limit};
  for (double s : positive) {
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw ControlError("controller saturation limits must be positive");
    }
  }
  if (max_tilt >= M_PI / 2.0) {
    throw ControlError("max_tilt must be below pi/2");
  }
}

SpeedCommand throttle_to_speed(const PropellerParams& p, double throttle) {
  const double clamped = std::clamp(throttle, 0.0, 1.0);
  return SpeedCommand{clamped * p.max_angular_velocity, clamped != throttle};
}

/* mix_control_groups() //{ */

MotorVector mix_control_groups(const AllocationModel& a, const reference::ControlGroups& groups) {

  const AllocationMatrix& gamma = a.matrix();
  const Eigen::Vector3d   g(groups.roll, groups.pitch, groups.yaw);

  MotorVector throttles = MotorVector::Constant(a.motorCount(), groups.throttle);

  // torque rows scaled so the strongest motor in each row has unit gain
  for (int row = 1; row < 4; row++) {
    const double scale = gamma.row(row).cwiseAbs().maxCoeff();
    if (scale <= 0.0) {
      continue;
    }
    throttles += (g(row - 1) / scale) * gamma.row(row).transpose();
  }

  return throttles.cwiseMax(0.0).cwiseMin(1.0);
}

//}

/* attitude_error() //{ */

Eigen::Vector3d attitude_error(const Eigen::Matrix3d& R, const Eigen::Matrix3d& R_d) {

  Eigen::Quaterniond q(R.transpose() * R_d);
  if (q.w() < 0.0) {
    q.coeffs() *= -1.0;
  }

  const Eigen::Vector3d v     = q.vec();
  const double          v_len = v.norm();

  if (v_len < 1e-12) {
    return 2.0 * v / q.w();
  }

  // w >= 0, so the angle lies in [0, pi]; at pi the axis comes from the quaternion's vector part
  return (2.0 * std::atan2(v_len, q.w()) / v_len) * v;
}

//}

/* accel_to_attitude() //{ */

AttitudeThrust accel_to_attitude(const Eigen::Vector3d& acceleration, double heading_d, const UavModel& model) {

  const Eigen::Vector3d thrust_vec = acceleration - model.body.gravity;
  const double          norm       = thrust_vec.norm();

  if (!(norm > 1e-6)) {
    throw ControlError("desired thrust direction is undefined (acceleration equals gravity)");
  }

  const Eigen::Vector3d b3 = thrust_vec / norm;

  if (std::abs(b3.z()) < 1e-9) {
    throw ControlError("heading is undefined for a horizontal thrust direction");
  }

  // b1 lies in the vertical plane through the heading vector and is orthogonal to b3
  const Eigen::Vector3d h(std::cos(heading_d), std::sin(heading_d), 0.0);
  const double          sign = b3.z() > 0.0 ? 1.0 : -1.0;
  const Eigen::Vector3d b1   = (sign * (b3.z() * h - h.dot(b3) * Eigen::Vector3d::UnitZ())).normalized();
  const Eigen::Vector3d b2   = b3.cross(b1);

  AttitudeThrust out;
  out.orientation.col(0) = b1;
  out.orientation.col(1) = b2;
  out.orientation.col(2) = b3;
  out.thrust             = model.body.mass * norm;

  const double max_thrust = model.maxThrust();
  if (out.thrust > max_thrust) {
    out.thrust    = max_thrust;
    out.saturated = true;
  }

  return out;
}

//}

double throttle_to_thrust(const UavModel& model, double throttle) {
  const double w = throttle_to_speed(model.propellers, throttle).speed;
  return model.motorCount() * thrust_from_speed(model.propellers, w);
}

MotorVector wrench_to_speeds(const UavModel& model, const Wrench& wrench, bool* saturated) {

  Eigen::Vector4d w;
  w << wrench.thrust, wrench.torque;

  const MotorVector forces = model.allocation.pseudoInverse() * w;
  const double      k      = model.propellers.thrust_coefficient;
  const double      w_max  = model.propellers.max_angular_velocity;

  MotorVector speeds(forces.size());
  bool        sat = false;

  for (int i = 0; i < forces.size(); i++) {
    double f = forces(i);
    if (f < 0.0) {
      f   = 0.0;
      sat = true;
    }
    double speed = std::sqrt(f / k);
    if (speed > w_max) {
      speed = w_max;
      sat   = true;
    }
    speeds(i) = speed;
  }

  if (saturated) {
    *saturated = sat;
  }

  return speeds;
}

/* resolve() //{ */

ControlOutput resolve(const ControlInput& input, const UavState& s, const UavModel& model, const CascadeGains& gains, ControllerState& cs, double dt) {

  if (!(dt > 0.0) || !std::isfinite(dt)) {
    throw ControlError("controller time step must be positive");
  }

  validate(input, model);

  const Modality modality = modalityOf(input);

  if (usesHeadingRate(modality) && (!cs.heading_initialized || !usesHeadingRate(static_cast<Modality>(cs.last_modality)))) {
    cs.heading_reference   = currentHeadingOr(s.orientation, 0.0);
    cs.heading_initialized = true;
  }
  cs.last_modality = static_cast<int>(modality);

  const CascadeContext ctx{s, model, gains, cs, dt};

  return std::visit(
      [&](const auto& ref) -> ControlOutput {
        using T = std::decay_t<decltype(ref)>;

        if constexpr (std::is_same_v<T, reference::ActuatorThrottles>) {
          return fromThrottles(model, ref.throttles);
        } else if constexpr (std::is_same_v<T, reference::ControlGroups>) {
          ControlOutput out = fromThrottles(model, mix_control_groups(model.allocation, ref));
          out.saturated     = out.saturated || ref.throttle < 0.0 || ref.throttle > 1.0;
          return out;
        } else if constexpr (std::is_same_v<T, reference::RateThrottle>) {
          return rateStage(ctx, ref.rate, throttle_to_thrust(model, ref.throttle));
        } else if constexpr (std::is_same_v<T, reference::AttitudeThrottle>) {
          return attitudeStage(ctx, orthonormalize(ref.orientation), throttle_to_thrust(model, ref.throttle));
        } else if constexpr (std::is_same_v<T, reference::AccelHeading>) {
          return accelerationStage(ctx, ref.acceleration, ref.heading);
        } else if constexpr (std::is_same_v<T, reference::AccelHeadingRate>) {
          cs.heading_reference += ref.heading_rate * dt;
          return accelerationStage(ctx, ref.acceleration, cs.heading_reference);
        } else if constexpr (std::is_same_v<T, reference::VelocityHeading>) {
          return velocityStage(ctx, ref.velocity, ref.heading);
        } else if constexpr (std::is_same_v<T, reference::VelocityHeadingRate>) {
          cs.heading_reference += ref.heading_rate * dt;
          return velocityStage(ctx, ref.velocity, cs.heading_reference);
        } else {
          return positionStage(ctx, ref.position, ref.heading);
        }
      },
      input);
}

//}

}  // namespace hoversim
