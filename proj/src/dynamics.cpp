#include <hoversim/dynamics.h>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace hoversim
{

namespace
{

constexpr double kRotationTolerance = 1e-9;

MotorVector clampSpeeds(const MotorVector& speeds, double max_speed) {
  return speeds.cwiseMax(0.0).cwiseMin(max_speed);
}

UavState advance(const UavState& s, const StateDerivative& d, double h) {
  UavState out;
  out.position         = s.position + h * d.velocity;
  out.velocity         = s.velocity + h * d.acceleration;
  out.orientation      = s.orientation + h * d.orientation_rate;
  out.angular_velocity = s.angular_velocity + h * d.angular_acceleration;
  out.motor_speeds     = s.motor_speeds + h * d.motor_acceleration;
  return out;
}

bool isFinite(const UavState& s) {
  return s.position.allFinite() && s.velocity.allFinite() && s.orientation.allFinite() && s.angular_velocity.allFinite() &&
         s.motor_speeds.allFinite();
}

}  // namespace

/* PropellerParams //{ */

void PropellerParams::validate() const {
  std::ostringstream err;
  if (!(thrust_coefficient > 0.0)) {
    err << "thrust_coefficient must be > 0; ";
  }
  if (!(motor_time_constant > 0.0)) {
    err << "motor_time_constant must be > 0; ";
  }
  if (!(max_angular_velocity > 0.0)) {
    err << "max_angular_velocity must be > 0; ";
  }
  if (!(torque_constant >= 0.0)) {
    err << "torque_constant must be >= 0; ";
  }
  if (!err.str().empty()) {
    throw ModelError(err.str());
  }
}

//}

/* AllocationModel //{ */

AllocationModel::AllocationModel(const AllocationMatrix& matrix, double arm_diagonal) : matrix_(matrix), arm_diagonal_(arm_diagonal) {

  if (matrix.cols() < 3 || matrix.cols() > kMaxMotors) {
    throw ModelError("allocation matrix must have between 3 and " + std::to_string(kMaxMotors) + " columns");
  }
  if (!matrix.allFinite()) {
    throw ModelError("allocation matrix has non-finite entries");
  }

  const Eigen::Matrix4d gram = matrix_ * matrix_.transpose();
  Eigen::FullPivLU<Eigen::Matrix4d> lu(gram);
  lu.setThreshold(1e-12);
  if (lu.rank() < 4) {
    throw ModelError("allocation matrix does not have full row rank");
  }

  pseudo_inverse_ = matrix_.transpose() * gram.inverse();
}

AllocationModel AllocationModel::quadX(double arm_diagonal, double torque_constant) {

  const double a = arm_diagonal / std::sqrt(2.0);
  const double c = torque_constant;

  AllocationMatrix m(4, 4);
  // clang-format off
  m <<  1.0, 1.0,  1.0,  1.0,
         -a,   a,    a,   -a,
         -a,   a,   -a,    a,
         -c,  -c,    c,    c;
  // clang-format on

  return AllocationModel(m, arm_diagonal);
}

//}

/* RigidBodyModel //{ */

void RigidBodyModel::validate() const {
  std::ostringstream err;
  if (!(mass > 0.0) || !std::isfinite(mass)) {
    err << "mass must be > 0; ";
  }
  if (!inertia.allFinite() || (inertia - inertia.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
    err << "inertia must be symmetric; ";
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(inertia, Eigen::EigenvaluesOnly);
    if (!(eig.eigenvalues().minCoeff() > 0.0)) {
      err << "inertia must be positive definite; ";
    }
  }
  if (!gravity.allFinite()) {
    err << "gravity must be finite; ";
  }
  if (!err.str().empty()) {
    throw ModelError(err.str());
  }
}

//}

/* UavModel //{ */

UavModel UavModel::defaultQuadX() {
  UavModel model;
  model.propellers = PropellerParams{2.2e-5, 0.03, 1100.0, 0.016};
  model.allocation = AllocationModel::quadX(0.4, 0.016);
  model.body       = RigidBodyModel{};
  return model;
}

void UavModel::validate() const {
  propellers.validate();
  body.validate();
}

double UavModel::maxThrust() const {
  const double w = propellers.max_angular_velocity;
  return motorCount() * propellers.thrust_coefficient * w * w;
}

double UavModel::hoverMotorSpeed() const {
  const double per_motor = body.mass * body.gravity.norm() / motorCount();
  return std::sqrt(per_motor / propellers.thrust_coefficient);
}

//}

/* UavState //{ */

UavState UavState::atRest(const UavModel& model, const Eigen::Vector3d& position, const Eigen::Matrix3d& orientation) {
  UavState s;
  s.position     = position;
  s.orientation  = orientation;
  s.motor_speeds = MotorVector::Zero(model.motorCount());
  return s;
}

void UavState::validate(const UavModel& model) const {

  if (!isFinite(*this)) {
    throw ModelError("state has non-finite entries");
  }
  if (orthogonalityError(orientation) > kRotationTolerance || std::abs(orientation.determinant() - 1.0) > kRotationTolerance) {
    throw ModelError("orientation is not in SO(3)");
  }
  if (motor_speeds.size() != model.motorCount()) {
    throw ModelError("motor speed count does not match the allocation model");
  }
  if (motor_speeds.minCoeff() < 0.0 || motor_speeds.maxCoeff() > model.propellers.max_angular_velocity) {
    throw ModelError("motor speed outside [0, max_angular_velocity]");
  }
}

//}

double thrust_from_speed(const PropellerParams& p, double angular_velocity) {
  if (angular_velocity < 0.0) {
    throw ModelError("propeller angular velocity must be non-negative");
  }
  return p.thrust_coefficient * angular_velocity * angular_velocity;
}

double motor_derivative(const PropellerParams& p, double angular_velocity, double desired_angular_velocity) {
  return -(angular_velocity - desired_angular_velocity) / p.motor_time_constant;
}

Wrench allocate(const AllocationModel& a, const MotorVector& forces) {

  if (forces.size() != a.motorCount()) {
    throw ModelError("force vector has " + std::to_string(forces.size()) + " entries, expected " + std::to_string(a.motorCount()));
  }

  // scalar accumulation (no fused multiply-add) so equal forces cancel exactly in the torque rows
  const AllocationMatrix& gamma = a.matrix();
  double                  out[4] = {0.0, 0.0, 0.0, 0.0};
  for (int i = 0; i < forces.size(); i++) {
    for (int r = 0; r < 4; r++) {
      out[r] += gamma(r, i) * forces(i);
    }
  }

  return Wrench{out[0], Eigen::Vector3d(out[1], out[2], out[3])};
}

/* state_derivative() //{ */

StateDerivative state_derivative(const UavModel& model, const UavState& s, const MotorVector& desired_speeds) {

  const PropellerParams& prop = model.propellers;
  const MotorVector      cmd  = clampSpeeds(desired_speeds, prop.max_angular_velocity);

  StateDerivative d;

  d.motor_acceleration = (cmd - s.motor_speeds) / prop.motor_time_constant;

  // the quadratic model is even in w; intermediate RK stages may dip below zero
  const MotorVector forces = prop.thrust_coefficient * s.motor_speeds.array().square().matrix();
  const Wrench      w      = allocate(model.allocation, forces);

  const Eigen::Matrix3d& J     = model.body.inertia;
  const Eigen::Vector3d& omega = s.angular_velocity;

  d.velocity             = s.velocity;
  d.acceleration         = s.orientation.col(2) * (w.thrust / model.body.mass) + model.body.gravity;
  d.orientation_rate     = s.orientation * skew(omega);
  d.angular_acceleration = J.inverse() * (w.torque - omega.cross(J * omega));

  return d;
}

//}

/* rk4_step() //{ */

UavState rk4_step(const UavModel& model, const UavState& s, const MotorVector& desired_speeds, double dt) {

  if (!(dt > 0.0) || !std::isfinite(dt)) {
    throw IntegrationError("time step must be positive and finite");
  }
  if (desired_speeds.size() != model.motorCount()) {
    throw IntegrationError("commanded motor speed count does not match the model");
  }

  const MotorVector cmd = clampSpeeds(desired_speeds, model.propellers.max_angular_velocity);

  const StateDerivative k1 = state_derivative(model, s, cmd);
  const StateDerivative k2 = state_derivative(model, advance(s, k1, dt / 2.0), cmd);
  const StateDerivative k3 = state_derivative(model, advance(s, k2, dt / 2.0), cmd);
  const StateDerivative k4 = state_derivative(model, advance(s, k3, dt), cmd);

  const double w = dt / 6.0;

  UavState out;
  out.position         = s.position + w * (k1.velocity + 2.0 * k2.velocity + 2.0 * k3.velocity + k4.velocity);
  out.velocity         = s.velocity + w * (k1.acceleration + 2.0 * k2.acceleration + 2.0 * k3.acceleration + k4.acceleration);
  out.orientation      = s.orientation + w * (k1.orientation_rate + 2.0 * k2.orientation_rate + 2.0 * k3.orientation_rate + k4.orientation_rate);
  out.angular_velocity = s.angular_velocity +
                         w * (k1.angular_acceleration + 2.0 * k2.angular_acceleration + 2.0 * k3.angular_acceleration + k4.angular_acceleration);
  out.motor_speeds =
      s.motor_speeds + w * (k1.motor_acceleration + 2.0 * k2.motor_acceleration + 2.0 * k3.motor_acceleration + k4.motor_acceleration);

  if (!isFinite(out)) {
    std::ostringstream msg;
    msg << "integration produced a non-finite state (dt=" << dt << ", position=" << s.position.transpose()
        << ", angular velocity=" << s.angular_velocity.transpose() << ")";
    throw IntegrationError(msg.str());
  }

  out.orientation  = orthonormalize(out.orientation);
  out.motor_speeds = clampSpeeds(out.motor_speeds, model.propellers.max_angular_velocity);

  return out;
}

//}

UavState integrate(const UavModel& model, UavState s, const MotorVector& desired_speeds, double duration, double dt) {

  const auto full = static_cast<long>(std::floor(duration / dt + 1e-9));
  for (long i = 0; i < full; i++) {
    s = rk4_step(model, s, desired_speeds, dt);
  }

  const double rest = duration - static_cast<double>(full) * dt;
  if (rest > 1e-12 * dt) {
    s = rk4_step(model, s, desired_speeds, rest);
  }

  return s;
}

double heading(const Eigen::Matrix3d& R) {

  const Eigen::Vector2d h = R.col(0).head<2>();

  if (h.norm() < 1e-9) {
    throw ModelError("heading undefined: body x axis is vertical");
  }

  const double eta = std::atan2(h(1), h(0));
  return eta == -M_PI ? M_PI : eta;
}

Eigen::Matrix3d orthonormalize(const Eigen::Matrix3d& R) {

  Eigen::Matrix3d out;

  out.col(0) = R.col(0).normalized();
  out.col(1) = (R.col(1) - out.col(0).dot(R.col(1)) * out.col(0)).normalized();
  out.col(2) = out.col(0).cross(out.col(1));

  return out;
}

Eigen::Matrix3d skew(const Eigen::Vector3d& w) {
  Eigen::Matrix3d m;
  // clang-format off
  m <<   0.0, -w(2),  w(1),
        w(2),   0.0, -w(0),
       -w(1),  w(0),   0.0;
  // clang-format on
  return m;
}

double orthogonalityError(const Eigen::Matrix3d& R) {
  return (R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
}

Eigen::Matrix3d rotationZ(double angle) {
  return Eigen::AngleAxisd(angle, Eigen::Vector3d::UnitZ()).toRotationMatrix();
}

Eigen::Vector4d quaternionWxyz(const Eigen::Matrix3d& R) {
  Eigen::Quaterniond q(R);
  q.normalize();
  if (q.w() < 0.0) {
    q.coeffs() = -q.coeffs();
  }
  return Eigen::Vector4d(q.w(), q.x(), q.y(), q.z());
}

Eigen::Matrix3d rotationFromWxyz(const Eigen::Vector4d& q) {
  if (!q.allFinite() || q.norm() < 1e-9) {
    throw ModelError("quaternion must be finite and non-zero");
  }
  return Eigen::Quaterniond(q(0), q(1), q(2), q(3)).normalized().toRotationMatrix();
}

}  // namespace hoversim
