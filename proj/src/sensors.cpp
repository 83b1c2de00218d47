#include <hoversim/sensors.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include <hoversim/parallel.h>
#include <hoversim/random.h>

namespace hoversim
{

namespace
{

constexpr double kEarthRadius = 6378137.0;  // [m], WGS-84 equatorial
constexpr double kDeg         = M_PI / 180.0;

void checkFinite(const Eigen::Vector3d& v, const char* what) {
  if (!v.allFinite()) {
    throw SensorError(std::string(what) + " is not finite");
  }
}

void checkRotation(const Eigen::Matrix3d& R, const char* what) {
  if (!R.allFinite() || orthogonalityError(R) > 1e-6 || R.determinant() < 0.0) {
    throw SensorError(std::string(what) + " is not a rotation");
  }
}

/* little-endian io //{ */

template <class T>
void putLe(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes, bytes + sizeof(T));
  }
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T getLe(std::istream& is) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw SensorError("truncated point cloud");
  }
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes, bytes + sizeof(T));
  }
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

//}

}  // namespace

/* NoiseSpec //{ */

double NoiseSpec::sample(std::uint64_t index, std::size_t channel) const {
  const double b = channel < bias.size() ? bias[channel] : 0.0;
  const double s = channel < sigma.size() ? sigma[channel] : 0.0;
  if (s == 0.0) {
    return b;
  }
  return b + s * gaussianAt(seed, index, channel);
}

bool NoiseSpec::zero() const {
  for (double s : sigma) {
    if (s != 0.0) {
      return false;
    }
  }
  for (double b : bias) {
    if (b != 0.0) {
      return false;
    }
  }
  return true;
}

void NoiseSpec::validate() const {
  for (double s : sigma) {
    if (!(s >= 0.0) || !std::isfinite(s)) {
      throw SensorError("noise sigma must be finite and >= 0");
    }
  }
  for (double b : bias) {
    if (!std::isfinite(b)) {
      throw SensorError("noise bias must be finite");
    }
  }
}

NoiseSpec NoiseSpec::uniform(double sigma, std::size_t channels, std::uint64_t seed) {
  NoiseSpec n;
  n.sigma.assign(channels, sigma);
  n.seed = seed;
  return n;
}

//}

/* configs //{ */

void SensorMount::validate() const {
  checkFinite(translation, "mount translation");
  checkRotation(rotation, "mount rotation");
}

SensorPose sensor_pose(const Eigen::Vector3d& position, const Eigen::Matrix3d& orientation, const SensorMount& mount) {
  return SensorPose{position + orientation * mount.translation, orientation * mount.rotation};
}

void LidarConfig::validate() const {
  if (n_horizontal < 1 || n_vertical < 1) {
    throw SensorError("lidar needs at least one ray in each direction");
  }
  if (!(horizontal_fov > 0.0 && horizontal_fov <= 2.0 * M_PI) || !(vertical_fov > 0.0 && vertical_fov <= 2.0 * M_PI)) {
    throw SensorError("lidar fields of view must lie in (0, 2 pi]");
  }
  if (!(max_range > 0.0) || !std::isfinite(max_range)) {
    throw SensorError("lidar max_range must be > 0");
  }
  if (!(rate > 0.0) || !std::isfinite(rate)) {
    throw SensorError("lidar rate must be > 0");
  }
  noise.validate();
  mount.validate();
}

Eigen::Vector3d LidarConfig::direction(int i, int j) const {

  double azimuth = 0.0;
  if (horizontal_fov >= 2.0 * M_PI) {
    // full circle: no duplicated seam ray
    azimuth = -M_PI + 2.0 * M_PI * i / n_horizontal;
  } else if (n_horizontal > 1) {
    azimuth = -0.5 * horizontal_fov + horizontal_fov * i / (n_horizontal - 1);
  }

  double elevation = 0.0;
  if (n_vertical > 1) {
    elevation = -0.5 * vertical_fov + vertical_fov * j / (n_vertical - 1);
  }

  const double ce = std::cos(elevation);
  return Eigen::Vector3d(ce * std::cos(azimuth), ce * std::sin(azimuth), std::sin(elevation));
}

void CameraConfig::validate() const {
  if (width < 1 || height < 1) {
    throw SensorError("camera resolution must be at least 1x1");
  }
  if (!(horizontal_fov > 0.0 && horizontal_fov < M_PI)) {
    throw SensorError("camera field of view must lie in (0, pi)");
  }
  if (!(rate > 0.0) || !std::isfinite(rate)) {
    throw SensorError("camera rate must be > 0");
  }
  if (!(max_range > 0.0)) {
    throw SensorError("camera max_range must be > 0");
  }
  mount.validate();
}

Eigen::Vector3d CameraConfig::direction(int u, int v) const {
  const double f = 0.5 * width / std::tan(0.5 * horizontal_fov);
  return Eigen::Vector3d(f, 0.5 * width - (u + 0.5), 0.5 * height - (v + 0.5)).normalized();
}

void NavConfig::validate() const {
  if (!(std::abs(origin_latitude) < 90.0) || !std::isfinite(origin_longitude) || !std::isfinite(origin_altitude)) {
    throw SensorError("invalid geodetic origin");
  }
  if (!north.allFinite() || std::abs(north.norm() - 1.0) > 1e-9 || std::abs(north.z()) > 1e-9) {
    throw SensorError("north reference must be a horizontal unit vector");
  }
  gnss.validate();
  baro.validate();
  mag.validate();
}

//}

/* samplers //{ */

ImuSample imu_sample(const UavState& s, const Eigen::Vector3d& acceleration, const Eigen::Vector3d& gravity, const NoiseSpec& noise,
                     std::uint64_t sample_index, double time) {

  ImuSample out;
  out.time  = time;
  out.accel = s.orientation.transpose() * (acceleration - gravity);
  out.gyro  = s.angular_velocity;

  for (int k = 0; k < 3; k++) {
    out.accel(k) += noise.sample(sample_index, k);
    out.gyro(k) += noise.sample(sample_index, 3 + k);
  }

  return out;
}

NavSamples nav_samples(const UavState& s, const NavConfig& c, std::uint64_t sample_index, double time) {

  NavSamples out;

  GnssSample& g = out.gnss;
  g.time        = time;
  g.position    = s.position;
  for (int k = 0; k < 3; k++) {
    g.position(k) += c.gnss.sample(sample_index, k);
  }

  // local tangent plane; east = north x up
  const Eigen::Vector3d east  = c.north.cross(Eigen::Vector3d::UnitZ());
  const double          dn    = g.position.dot(c.north);
  const double          de    = g.position.dot(east);
  const double          lat0  = c.origin_latitude * kDeg;
  g.latitude                  = c.origin_latitude + dn / kEarthRadius / kDeg;
  g.longitude                 = c.origin_longitude + de / (kEarthRadius * std::cos(lat0)) / kDeg;
  g.altitude                  = c.origin_altitude + g.position.z();

  out.baro.time     = time;
  out.baro.altitude = s.position.z() + c.baro.sample(sample_index, 0);

  out.mag.time  = time;
  out.mag.field = s.orientation.transpose() * c.north;
  for (int k = 0; k < 3; k++) {
    out.mag.field(k) += c.mag.sample(sample_index, k);
  }

  return out;
}

PointCloud lidar_scan(const World& w, const SensorPose& pose, const LidarConfig& c, std::uint64_t frame_index, double time) {

  c.validate();

  const std::size_t n = c.rayCount();

  std::vector<LidarPoint> slots(n);
  std::vector<char>       hit(n, 0);

  parallel_for(
      n,
      [&](std::size_t r) {
        const int             i  = static_cast<int>(r % c.n_horizontal);
        const int             j  = static_cast<int>(r / c.n_horizontal);
        const Eigen::Vector3d ds = c.direction(i, j);

        const auto h = w.raycast(pose.origin, pose.rotation * ds, c.max_range);
        if (!h) {
          return;
        }

        LidarPoint& p = slots[r];
        p.ray         = static_cast<std::uint32_t>(r);
        p.range       = h->distance;
        if (!c.noise.zero()) {
          p.range = std::clamp(p.range + c.noise.sample(frame_index * n + r, 0), 0.0, c.max_range);
        }
        p.xyz       = p.range * ds;
        p.intensity = c.intensity ? static_cast<float>(h->material_intensity) : 0.0f;
        p.label     = c.label ? h->semantic_label : SceneMaterials::kMissLabel;
        hit[r]      = 1;
      },
      256);

  PointCloud cloud;
  cloud.time          = time;
  cloud.has_intensity = c.intensity;
  cloud.has_label     = c.label;
  cloud.points.reserve(n);
  for (std::size_t r = 0; r < n; r++) {
    if (hit[r]) {
      cloud.points.push_back(slots[r]);
    }
  }

  return cloud;
}

std::pair<DepthImage, LabelImage> camera_images(const World& w, const SensorPose& pose, const CameraConfig& c, double time) {

  c.validate();

  DepthImage depth;
  depth.time   = time;
  depth.width  = c.width;
  depth.height = c.height;
  depth.range.assign(static_cast<std::size_t>(c.width) * c.height, std::numeric_limits<double>::infinity());

  LabelImage labels;
  labels.time   = time;
  labels.width  = c.width;
  labels.height = c.height;
  labels.label.assign(depth.range.size(), SceneMaterials::kMissLabel);

  parallel_for(
      depth.range.size(),
      [&](std::size_t k) {
        const int  u = static_cast<int>(k % c.width);
        const int  v = static_cast<int>(k / c.width);
        const auto h = w.raycast(pose.origin, pose.rotation * c.direction(u, v), c.max_range);
        if (h) {
          depth.range[k]  = h->distance;
          labels.label[k] = h->semantic_label;
        }
      },
      64);

  return {std::move(depth), std::move(labels)};
}

DepthImage depth_image(const World& w, const SensorPose& pose, const CameraConfig& c, double time) {
  return camera_images(w, pose, c, time).first;
}

LabelImage label_image(const World& w, const SensorPose& pose, const CameraConfig& c, double time) {
  return camera_images(w, pose, c, time).second;
}

//}

/* SensorSchedule //{ */

SensorSchedule::SensorSchedule(double rate) : rate_(rate) {
  if (!(rate > 0.0) || !std::isfinite(rate)) {
    throw SensorError("sensor rate must be > 0");
  }
}

std::vector<std::uint64_t> SensorSchedule::due(double time) {
  std::vector<std::uint64_t> out;
  // small tolerance so that accumulated step times land on the grid
  const double last = std::floor(time * rate_ + 1e-9);
  while (static_cast<double>(next_) <= last) {
    out.push_back(next_++);
  }
  return out;
}

//}

/* export //{ */

void write_point_cloud(std::ostream& os, const PointCloud& cloud) {
  putLe<std::uint32_t>(os, static_cast<std::uint32_t>(cloud.points.size()));
  for (const LidarPoint& p : cloud.points) {
    putLe<float>(os, static_cast<float>(p.xyz.x()));
    putLe<float>(os, static_cast<float>(p.xyz.y()));
    putLe<float>(os, static_cast<float>(p.xyz.z()));
    putLe<float>(os, static_cast<float>(p.range));
    putLe<float>(os, p.intensity);
    putLe<std::uint8_t>(os, p.label);
  }
}

PointCloud read_point_cloud(std::istream& is) {
  PointCloud      cloud;
  const auto      n = getLe<std::uint32_t>(is);
  cloud.points.resize(n);
  for (std::uint32_t i = 0; i < n; i++) {
    LidarPoint& p = cloud.points[i];
    p.ray         = i;
    const float x = getLe<float>(is);
    const float y = getLe<float>(is);
    const float z = getLe<float>(is);
    p.xyz         = Eigen::Vector3d(x, y, z);
    p.range       = getLe<float>(is);
    p.intensity   = getLe<float>(is);
    p.label       = getLe<std::uint8_t>(is);
  }
  return cloud;
}

void write_point_cloud_ascii(std::ostream& os, const PointCloud& cloud) {
  os << "# x y z range intensity label, " << cloud.points.size() << " points, t=" << cloud.time << "\n";
  for (const LidarPoint& p : cloud.points) {
    os << p.xyz.x() << " " << p.xyz.y() << " " << p.xyz.z() << " " << p.range << " " << p.intensity << " " << static_cast<int>(p.label) << "\n";
  }
}

void write_pfm(std::ostream& os, const DepthImage& img) {
  os << "Pf\n" << img.width << " " << img.height << "\n-1.0\n";
  for (int v = img.height - 1; v >= 0; v--) {
    for (int u = 0; u < img.width; u++) {
      putLe<float>(os, static_cast<float>(img.at(u, v)));
    }
  }
}

void write_pgm(std::ostream& os, const LabelImage& img) {
  os << "P5\n" << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.label.data()), static_cast<std::streamsize>(img.label.size()));
}

//}

}  // namespace hoversim
