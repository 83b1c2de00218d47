#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace hoversim
{

/// Upper bound on the number of propellers; keeps per-motor vectors on the stack.
inline constexpr int kMaxMotors = 16;

using MotorVector      = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxMotors, 1>;
using AllocationMatrix = Eigen::Matrix<double, 4, Eigen::Dynamic, 0, 4, kMaxMotors>;
using AllocationInverse = Eigen::Matrix<double, Eigen::Dynamic, 4, 0, kMaxMotors, 4>;

/// Raised when a model or state violates its invariants.
class ModelError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Raised by the integrator when the successor state is not finite.
class IntegrationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct PropellerParams
{
  double thrust_coefficient   = 2.2e-5;  // [N s^2 / rad^2]
  double motor_time_constant  = 0.03;    // [s]
  double max_angular_velocity = 1100.0;  // [rad/s]
  double torque_constant      = 0.016;   // [m], torque per unit thrust

  void validate() const;
};

/* AllocationModel //{ */

/**
 * @brief Linear map from per-motor thrust forces to (collective thrust, body torques).
 *
 * Row 0 is the collective thrust, rows 1..3 the torques about b1, b2, b3. The
 * right pseudo-inverse is computed once at construction, which also checks
 * that the matrix has full row rank.
 */
class AllocationModel {
public:
  AllocationModel(const AllocationMatrix& matrix, double arm_diagonal);

  /// Quadrotor in X configuration, motor order and signs as in the standard
  /// force-torque allocation matrix.
  static AllocationModel quadX(double arm_diagonal, double torque_constant);

  int motorCount() const {
    return static_cast<int>(matrix_.cols());
  }

  const AllocationMatrix& matrix() const {
    return matrix_;
  }

  const AllocationInverse& pseudoInverse() const {
    return pseudo_inverse_;
  }

  double armDiagonal() const {
    return arm_diagonal_;
  }

private:
  AllocationMatrix  matrix_;
  AllocationInverse pseudo_inverse_;
  double            arm_diagonal_;
};

//}

struct RigidBodyModel
{
  double          mass    = 2.0;
  Eigen::Matrix3d inertia = Eigen::Vector3d(0.02, 0.02, 0.04).asDiagonal();
  Eigen::Vector3d gravity = Eigen::Vector3d(0.0, 0.0, -9.81);

  void validate() const;
};

struct UavModel
{
  PropellerParams propellers;
  AllocationModel allocation = AllocationModel::quadX(0.4, 0.016);
  RigidBodyModel  body;

  /// m=2 kg, J=diag(0.02, 0.02, 0.04), d=0.4, k=2.2e-5, c_tf=0.016, w_max=1100.
  static UavModel defaultQuadX();

  void validate() const;

  int motorCount() const {
    return allocation.motorCount();
  }

  /// Largest collective thrust the propulsion can produce.
  double maxThrust() const;

  /// Motor speed at which the collective thrust balances gravity.
  double hoverMotorSpeed() const;
};

struct UavState
{
  Eigen::Vector3d position         = Eigen::Vector3d::Zero();  // world [m]
  Eigen::Vector3d velocity         = Eigen::Vector3d::Zero();  // world [m/s]
  Eigen::Matrix3d orientation      = Eigen::Matrix3d::Identity();  // world <- body
  Eigen::Vector3d angular_velocity = Eigen::Vector3d::Zero();  // body [rad/s]
  MotorVector     motor_speeds;                                // [rad/s]

  /// State at rest with motors stopped.
  static UavState atRest(const UavModel& model, const Eigen::Vector3d& position = Eigen::Vector3d::Zero(),
                         const Eigen::Matrix3d& orientation = Eigen::Matrix3d::Identity());

  /// Throws ModelError when R is not a rotation or motor speeds are out of range.
  void validate(const UavModel& model) const;
};

struct StateDerivative
{
  Eigen::Vector3d velocity;
  Eigen::Vector3d acceleration;
  Eigen::Matrix3d orientation_rate;
  Eigen::Vector3d angular_acceleration;
  MotorVector     motor_acceleration;
};

struct Wrench
{
  double          thrust = 0.0;
  Eigen::Vector3d torque = Eigen::Vector3d::Zero();
};

double thrust_from_speed(const PropellerParams& p, double angular_velocity);

double motor_derivative(const PropellerParams& p, double angular_velocity, double desired_angular_velocity);

/// Throws ModelError on a length mismatch.
Wrench allocate(const AllocationModel& a, const MotorVector& forces);

StateDerivative state_derivative(const UavModel& model, const UavState& s, const MotorVector& desired_speeds);

/**
 * @brief One classic Runge-Kutta 4 step over the full state.
 *
 * The commanded speeds are clamped to [0, w_max] and held over the step. The
 * orientation is re-orthonormalized (Gram-Schmidt) and the motor speeds
 * clamped after the step. Throws IntegrationError if the result is not finite.
 */
UavState rk4_step(const UavModel& model, const UavState& s, const MotorVector& desired_speeds, double dt);

/// Advances by `duration` using steps of `dt` and one shorter final step for the remainder.
UavState integrate(const UavModel& model, UavState s, const MotorVector& desired_speeds, double duration, double dt);

/// Heading angle of the body x axis projected to the horizontal plane, in (-pi, pi].
double heading(const Eigen::Matrix3d& R);

/// Gram-Schmidt on the columns; the third column is rebuilt as b1 x b2.
Eigen::Matrix3d orthonormalize(const Eigen::Matrix3d& R);

/// Skew-symmetric matrix such that skew(w) * v = w x v.
Eigen::Matrix3d skew(const Eigen::Vector3d& w);

/// Largest absolute entry of R^T R - I.
double orthogonalityError(const Eigen::Matrix3d& R);

Eigen::Matrix3d rotationZ(double angle);

/// Unit quaternion (w, x, y, z) of a rotation matrix, sign fixed so that w >= 0.
Eigen::Vector4d quaternionWxyz(const Eigen::Matrix3d& R);

Eigen::Matrix3d rotationFromWxyz(const Eigen::Vector4d& q);

}  // namespace hoversim
