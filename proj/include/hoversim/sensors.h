#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include <hoversim/dynamics.h>
#include <hoversim/worldgen.h>

namespace hoversim
{

class SensorError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/* configuration //{ */

/**
 * @brief Additive Gaussian noise with a constant bias, per channel.
 *
 * Sample k of channel c is bias[c] + sigma[c] * N(0,1), where the normal
 * variate is a pure function of (seed, k, c). Missing channels are noise-free.
 */
struct NoiseSpec
{
  std::vector<double> sigma;
  std::vector<double> bias;
  std::uint64_t       seed = 0;

  double sample(std::uint64_t index, std::size_t channel) const;

  bool zero() const;

  void validate() const;

  static NoiseSpec uniform(double sigma, std::size_t channels, std::uint64_t seed = 0);
};

/// Sensor placement on the body. Sensor axes: x forward (optical axis), y left, z up.
struct SensorMount
{
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();      // body [m]
  Eigen::Matrix3d rotation    = Eigen::Matrix3d::Identity();  // body <- sensor

  void validate() const;
};

struct SensorPose
{
  Eigen::Vector3d origin;    // world [m]
  Eigen::Matrix3d rotation;  // world <- sensor
};

SensorPose sensor_pose(const Eigen::Vector3d& position, const Eigen::Matrix3d& orientation, const SensorMount& mount);

struct LidarConfig
{
  int         n_horizontal    = 1024;
  int         n_vertical      = 32;
  double      horizontal_fov  = 2.0 * M_PI;  // [rad]
  double      vertical_fov    = 0.5;         // [rad], centred on the horizon
  double      max_range       = 100.0;       // [m]
  double      rate            = 10.0;        // [Hz]
  NoiseSpec   noise;                         // channel 0: range [m]
  bool        intensity       = true;
  bool        label           = true;
  SensorMount mount;

  void validate() const;

  std::size_t rayCount() const {
    return static_cast<std::size_t>(n_horizontal) * static_cast<std::size_t>(n_vertical);
  }

  /// Unit direction of ray (i, j) in the sensor frame; ray index = j * n_horizontal + i.
  Eigen::Vector3d direction(int i, int j) const;
};

struct CameraConfig
{
  int         width          = 64;
  int         height         = 48;
  double      horizontal_fov = M_PI / 2.0;  // [rad]
  double      rate           = 10.0;        // [Hz]
  double      max_range      = 1000.0;      // [m]
  SensorMount mount;

  void validate() const;

  /// Unit pinhole ray through the centre of pixel (u, v) in the sensor frame; v grows downwards.
  Eigen::Vector3d direction(int u, int v) const;
};

/// Geodetic origin of the local frame; horizontal positions map to latitude/longitude on a flat earth.
struct NavConfig
{
  double          origin_latitude  = 50.0769;  // [deg]
  double          origin_longitude = 14.4178;  // [deg]
  double          origin_altitude  = 200.0;    // [m]
  Eigen::Vector3d north            = Eigen::Vector3d::UnitX();  // unit, horizontal
  NoiseSpec       gnss;                                         // channels: x, y, z [m]
  NoiseSpec       baro;                                         // channel 0 [m]
  NoiseSpec       mag;                                          // channels: x, y, z

  void validate() const;
};

//}

/* samples //{ */

struct ImuSample
{
  double          time = 0.0;
  Eigen::Vector3d accel;  // specific force, body [m/s^2]
  Eigen::Vector3d gyro;   // body [rad/s]
};

struct GnssSample
{
  double          time = 0.0;
  Eigen::Vector3d position;  // local world frame [m]
  double          latitude  = 0.0;  // [deg]
  double          longitude = 0.0;  // [deg]
  double          altitude  = 0.0;  // [m]
};

struct BaroSample
{
  double time     = 0.0;
  double altitude = 0.0;  // [m], local z
};

struct MagSample
{
  double          time = 0.0;
  Eigen::Vector3d field;  // body, unit reference field plus noise
};

struct LidarPoint
{
  std::uint32_t   ray = 0;
  Eigen::Vector3d xyz;  // sensor frame [m]
  double          range     = 0.0;
  float           intensity = 0.0f;
  std::uint8_t    label     = SceneMaterials::kMissLabel;
};

struct PointCloud
{
  double                  time = 0.0;
  std::vector<LidarPoint> points;
  bool                    has_intensity = true;
  bool                    has_label     = true;
};

struct DepthImage
{
  double              time   = 0.0;
  int                 width  = 0;
  int                 height = 0;
  std::vector<double> range;  // row-major, +inf on a miss

  double at(int u, int v) const {
    return range[static_cast<std::size_t>(v) * width + u];
  }
};

struct LabelImage
{
  double                    time   = 0.0;
  int                       width  = 0;
  int                       height = 0;
  std::vector<std::uint8_t> label;  // row-major, 255 on a miss

  std::uint8_t at(int u, int v) const {
    return label[static_cast<std::size_t>(v) * width + u];
  }
};

struct NavSamples
{
  GnssSample gnss;
  BaroSample baro;
  MagSample  mag;
};

using SensorFrame = std::variant<ImuSample, GnssSample, BaroSample, MagSample, PointCloud, DepthImage, LabelImage>;

//}

/* samplers //{ */

/// accel = R^T (a - g) + noise, gyro = omega + noise; noise channels 0-2 accel, 3-5 gyro.
ImuSample imu_sample(const UavState& s, const Eigen::Vector3d& acceleration, const Eigen::Vector3d& gravity, const NoiseSpec& noise,
                     std::uint64_t sample_index, double time = 0.0);

NavSamples nav_samples(const UavState& s, const NavConfig& c, std::uint64_t sample_index, double time = 0.0);

/// Ray-cast scan; misses are omitted, range noise is applied along the ray and clamped to [0, max_range].
PointCloud lidar_scan(const World& w, const SensorPose& pose, const LidarConfig& c, std::uint64_t frame_index = 0, double time = 0.0);

DepthImage depth_image(const World& w, const SensorPose& pose, const CameraConfig& c, double time = 0.0);

LabelImage label_image(const World& w, const SensorPose& pose, const CameraConfig& c, double time = 0.0);

/// Depth and labels from one shared set of rays.
std::pair<DepthImage, LabelImage> camera_images(const World& w, const SensorPose& pose, const CameraConfig& c, double time = 0.0);

//}

/* SensorSchedule //{ */

/**
 * @brief Frame timing on the sensor's own period grid.
 *
 * Frame k is due once simulated time reaches k / rate (k >= 1), so over a span
 * T the sensor emits floor(T * rate) or ceil(T * rate) frames.
 */
class SensorSchedule {
public:
  explicit SensorSchedule(double rate);

  /// Indices of frames that became due up to `time`, in order.
  std::vector<std::uint64_t> due(double time);

  double timestamp(std::uint64_t k) const {
    return static_cast<double>(k) / rate_;
  }

  double rate() const {
    return rate_;
  }

  std::uint64_t emitted() const {
    return next_ - 1;
  }

private:
  double        rate_;
  std::uint64_t next_ = 1;
};

//}

/* export //{ */

/// Little-endian: u32 count, then per point f32 x, y, z, range, intensity and u8 label (21 bytes).
void write_point_cloud(std::ostream& os, const PointCloud& cloud);

PointCloud read_point_cloud(std::istream& is);

/// One "x y z range intensity label" line per point.
void write_point_cloud_ascii(std::ostream& os, const PointCloud& cloud);

/// Portable float map, little-endian, bottom row first as the format requires.
void write_pfm(std::ostream& os, const DepthImage& img);

/// Binary portable graymap (P5).
void write_pgm(std::ostream& os, const LabelImage& img);

//}

}  // namespace hoversim
