#include <hoversim/protocol.h>

#include <algorithm>
#include <bit>
#include <cstring>

namespace hoversim::wire
{

namespace
{

template <class T>
void put(std::string& buf, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(b, b + sizeof(T));
  }
  buf.append(b, sizeof(T));
}

template <class T>
T get(std::string_view data, std::size_t& pos) {
  if (data.size() - pos < sizeof(T)) {
    throw PayloadError("payload too short");
  }
  char b[sizeof(T)];
  std::memcpy(b, data.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(b, b + sizeof(T));
  }
  pos += sizeof(T);
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

constexpr std::uint32_t kMaxMotors = 16;
constexpr std::uint32_t kMaxPixels = 1u << 24;

}  // namespace

/* Writer / Reader //{ */

void Writer::u8(std::uint8_t v) {
  put(buf_, v);
}
void Writer::u16(std::uint16_t v) {
  put(buf_, v);
}
void Writer::u32(std::uint32_t v) {
  put(buf_, v);
}
void Writer::u64(std::uint64_t v) {
  put(buf_, v);
}
void Writer::f32(float v) {
  put(buf_, v);
}
void Writer::f64(double v) {
  put(buf_, v);
}

void Writer::vec3(const Eigen::Vector3d& v) {
  f64(v.x());
  f64(v.y());
  f64(v.z());
}

void Writer::bytes(std::string_view b) {
  buf_.append(b);
}

void Writer::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes(s);
}

std::uint8_t Reader::u8() {
  return get<std::uint8_t>(data_, pos_);
}
std::uint16_t Reader::u16() {
  return get<std::uint16_t>(data_, pos_);
}
std::uint32_t Reader::u32() {
  return get<std::uint32_t>(data_, pos_);
}
std::uint64_t Reader::u64() {
  return get<std::uint64_t>(data_, pos_);
}
float Reader::f32() {
  return get<float>(data_, pos_);
}
double Reader::f64() {
  return get<double>(data_, pos_);
}

Eigen::Vector3d Reader::vec3() {
  const double x = f64();
  const double y = f64();
  const double z = f64();
  return {x, y, z};
}

std::string_view Reader::bytes(std::size_t n) {
  if (remaining() < n) {
    throw PayloadError("payload too short");
  }
  const std::string_view out = data_.substr(pos_, n);
  pos_ += n;
  return out;
}

std::string Reader::str() {
  const std::uint32_t n = u32();
  return std::string(bytes(n));
}

void Reader::end() const {
  if (remaining() != 0) {
    throw PayloadError(std::to_string(remaining()) + " trailing payload bytes");
  }
}

//}

/* framing //{ */

std::string encode(const Message& m) {
  if (m.payload.size() > kMaxPayload) {
    throw FrameError("payload exceeds the frame size limit");
  }
  std::string out;
  out.reserve(kHeaderSize + m.payload.size());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.payload.size()));
  put<std::uint16_t>(out, kVersion);
  put<std::uint16_t>(out, static_cast<std::uint16_t>(m.type));
  put<std::uint32_t>(out, m.session);
  out += m.payload;
  return out;
}

Header decodeHeader(std::string_view bytes) {
  if (bytes.size() != kHeaderSize) {
    throw FrameError("truncated header");
  }
  std::size_t pos = 0;
  Header      h;
  h.payload_len = get<std::uint32_t>(bytes, pos);
  h.version     = get<std::uint16_t>(bytes, pos);
  h.type        = get<std::uint16_t>(bytes, pos);
  h.session     = get<std::uint32_t>(bytes, pos);
  if (h.version != kVersion) {
    throw FrameError("unsupported protocol version " + std::to_string(h.version));
  }
  if (h.payload_len > kMaxPayload) {
    throw FrameError("declared payload of " + std::to_string(h.payload_len) + " bytes exceeds the limit");
  }
  return h;
}

//}

/* control //{ */

void writeControl(Writer& w, std::uint32_t uav, const ControlInput& input) {

  using namespace reference;

  w.u32(uav);
  w.u8(static_cast<std::uint8_t>(input.index()));

  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, ActuatorThrottles>) {
          w.u32(static_cast<std::uint32_t>(v.throttles.size()));
          for (Eigen::Index i = 0; i < v.throttles.size(); i++) {
            w.f64(v.throttles(i));
          }
        } else if constexpr (std::is_same_v<T, ControlGroups>) {
          w.f64(v.roll);
          w.f64(v.pitch);
          w.f64(v.yaw);
          w.f64(v.throttle);
        } else if constexpr (std::is_same_v<T, RateThrottle>) {
          w.vec3(v.rate);
          w.f64(v.throttle);
        } else if constexpr (std::is_same_v<T, AttitudeThrottle>) {
          for (int r = 0; r < 3; r++) {
            for (int c = 0; c < 3; c++) {
              w.f64(v.orientation(r, c));
            }
          }
          w.f64(v.throttle);
        } else if constexpr (std::is_same_v<T, AccelHeading>) {
          w.vec3(v.acceleration);
          w.f64(v.heading);
        } else if constexpr (std::is_same_v<T, AccelHeadingRate>) {
          w.vec3(v.acceleration);
          w.f64(v.heading_rate);
        } else if constexpr (std::is_same_v<T, VelocityHeading>) {
          w.vec3(v.velocity);
          w.f64(v.heading);
        } else if constexpr (std::is_same_v<T, VelocityHeadingRate>) {
          w.vec3(v.velocity);
          w.f64(v.heading_rate);
        } else {
          w.vec3(v.position);
          w.f64(v.heading);
        }
      },
      input);
}

std::pair<std::uint32_t, ControlInput> readControl(Reader& r) {

  using namespace reference;

  const std::uint32_t uav      = r.u32();
  const std::uint8_t  modality = r.u8();

  switch (modality) {
    case 0: {
      const std::uint32_t n = r.u32();
      if (n > kMaxMotors) {
        throw PayloadError("too many throttles");
      }
      ActuatorThrottles a{MotorVector(n)};
      for (std::uint32_t i = 0; i < n; i++) {
        a.throttles(i) = r.f64();
      }
      return {uav, a};
    }
    case 1: {
      ControlGroups g;
      g.roll     = r.f64();
      g.pitch    = r.f64();
      g.yaw      = r.f64();
      g.throttle = r.f64();
      return {uav, g};
    }
    case 2: {
      RateThrottle c;
      c.rate     = r.vec3();
      c.throttle = r.f64();
      return {uav, c};
    }
    case 3: {
      AttitudeThrottle c;
      for (int i = 0; i < 3; i++) {
        for (int j = 0; j < 3; j++) {
          c.orientation(i, j) = r.f64();
        }
      }
      c.throttle = r.f64();
      return {uav, c};
    }
    case 4: {
      AccelHeading c;
      c.acceleration = r.vec3();
      c.heading      = r.f64();
      return {uav, c};
    }
    case 5: {
      AccelHeadingRate c;
      c.acceleration = r.vec3();
      c.heading_rate = r.f64();
      return {uav, c};
    }
    case 6: {
      VelocityHeading c;
      c.velocity = r.vec3();
      c.heading  = r.f64();
      return {uav, c};
    }
    case 7: {
      VelocityHeadingRate c;
      c.velocity     = r.vec3();
      c.heading_rate = r.f64();
      return {uav, c};
    }
    case 8: {
      PositionHeading c;
      c.position = r.vec3();
      c.heading  = r.f64();
      return {uav, c};
    }
    default:
      throw PayloadError("unknown control modality " + std::to_string(modality));
  }
}

//}

/* state and frames //{ */

void writeState(Writer& w, const UavState& s) {
  w.vec3(s.position);
  w.vec3(s.velocity);
  const Eigen::Vector4d q = quaternionWxyz(s.orientation);
  for (int i = 0; i < 4; i++) {
    w.f64(q(i));
  }
  w.vec3(s.angular_velocity);
  w.u32(static_cast<std::uint32_t>(s.motor_speeds.size()));
  for (Eigen::Index i = 0; i < s.motor_speeds.size(); i++) {
    w.f64(s.motor_speeds(i));
  }
}

UavState readState(Reader& r) {
  UavState s;
  s.position = r.vec3();
  s.velocity = r.vec3();
  Eigen::Vector4d q;
  for (int i = 0; i < 4; i++) {
    q(i) = r.f64();
  }
  s.orientation      = rotationFromWxyz(q);
  s.angular_velocity = r.vec3();
  const std::uint32_t n = r.u32();
  if (n > kMaxMotors) {
    throw PayloadError("too many motors");
  }
  s.motor_speeds.resize(n);
  for (std::uint32_t i = 0; i < n; i++) {
    s.motor_speeds(i) = r.f64();
  }
  return s;
}

void writeFrame(Writer& w, const TaggedFrame& f) {

  w.u8(static_cast<std::uint8_t>(f.kind));
  w.u32(f.uav);
  w.u32(f.sensor);
  w.u64(f.index);
  w.f64(f.time());

  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, ImuSample>) {
          w.vec3(v.accel);
          w.vec3(v.gyro);
        } else if constexpr (std::is_same_v<T, GnssSample>) {
          w.vec3(v.position);
          w.f64(v.latitude);
          w.f64(v.longitude);
          w.f64(v.altitude);
        } else if constexpr (std::is_same_v<T, BaroSample>) {
          w.f64(v.altitude);
        } else if constexpr (std::is_same_v<T, MagSample>) {
          w.vec3(v.field);
        } else if constexpr (std::is_same_v<T, PointCloud>) {
          // same layout as the point-cloud export
          w.u32(static_cast<std::uint32_t>(v.points.size()));
          for (const LidarPoint& p : v.points) {
            w.f32(static_cast<float>(p.xyz.x()));
            w.f32(static_cast<float>(p.xyz.y()));
            w.f32(static_cast<float>(p.xyz.z()));
            w.f32(static_cast<float>(p.range));
            w.f32(p.intensity);
            w.u8(p.label);
          }
          // ray indices follow, since misses are not listed
          for (const LidarPoint& p : v.points) {
            w.u32(p.ray);
          }
        } else if constexpr (std::is_same_v<T, DepthImage>) {
          w.u32(static_cast<std::uint32_t>(v.width));
          w.u32(static_cast<std::uint32_t>(v.height));
          for (double d : v.range) {
            w.f32(static_cast<float>(d));
          }
        } else {
          w.u32(static_cast<std::uint32_t>(v.width));
          w.u32(static_cast<std::uint32_t>(v.height));
          w.bytes(std::string_view(reinterpret_cast<const char*>(v.label.data()), v.label.size()));
        }
      },
      f.frame);
}

TaggedFrame readFrame(Reader& r) {

  TaggedFrame f;
  const std::uint8_t kind = r.u8();
  f.uav                   = r.u32();
  f.sensor                = r.u32();
  f.index                 = r.u64();
  const double t          = r.f64();

  auto imageSize = [&](int& w, int& h) {
    const std::uint32_t uw = r.u32();
    const std::uint32_t uh = r.u32();
    if (uw == 0 || uh == 0 || static_cast<std::uint64_t>(uw) * uh > kMaxPixels) {
      throw PayloadError("bad image size");
    }
    w = static_cast<int>(uw);
    h = static_cast<int>(uh);
  };

  switch (kind) {
    case 0: {
      ImuSample s;
      s.accel = r.vec3();
      s.gyro  = r.vec3();
      s.time  = t;
      f.frame = s;
      break;
    }
    case 1: {
      GnssSample s;
      s.position  = r.vec3();
      s.latitude  = r.f64();
      s.longitude = r.f64();
      s.altitude  = r.f64();
      s.time      = t;
      f.frame     = s;
      break;
    }
    case 2:
      f.frame = BaroSample{t, r.f64()};
      break;
    case 3: {
      MagSample s;
      s.field = r.vec3();
      s.time  = t;
      f.frame = s;
      break;
    }
    case 4: {
      PointCloud          pc;
      const std::uint32_t n = r.u32();
      if (static_cast<std::uint64_t>(n) * 25 > r.remaining()) {
        throw PayloadError("point count exceeds payload");
      }
      pc.points.resize(n);
      for (std::uint32_t i = 0; i < n; i++) {
        LidarPoint& p   = pc.points[i];
        const double x  = r.f32();
        const double y  = r.f32();
        const double z  = r.f32();
        p.xyz           = Eigen::Vector3d(x, y, z);
        p.range         = r.f32();
        p.intensity     = r.f32();
        p.label         = r.u8();
      }
      for (LidarPoint& p : pc.points) {
        p.ray = r.u32();
      }
      pc.time = t;
      f.frame = std::move(pc);
      break;
    }
    case 5: {
      DepthImage d;
      imageSize(d.width, d.height);
      d.range.resize(static_cast<std::size_t>(d.width) * d.height);
      for (double& v : d.range) {
        v = r.f32();
      }
      d.time  = t;
      f.frame = std::move(d);
      break;
    }
    case 6: {
      LabelImage l;
      imageSize(l.width, l.height);
      const std::string_view b = r.bytes(static_cast<std::size_t>(l.width) * l.height);
      l.label.assign(b.begin(), b.end());
      l.time  = t;
      f.frame = std::move(l);
      break;
    }
    default:
      throw PayloadError("unknown sensor kind " + std::to_string(kind));
  }
  f.kind = static_cast<SensorKind>(kind);
  return f;
}

void writeStepResult(Writer& w, const StepResult& s) {
  w.f64(s.time);
  w.u64(s.steps);
  w.u32(static_cast<std::uint32_t>(s.states.size()));
  for (const UavState& st : s.states) {
    writeState(w, st);
  }
  w.u32(static_cast<std::uint32_t>(s.frames.size()));
  for (const TaggedFrame& f : s.frames) {
    writeFrame(w, f);
  }
}

StepResult readStepResult(Reader& r) {
  StepResult s;
  s.time               = r.f64();
  s.steps              = r.u64();
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; i++) {
    s.states.push_back(readState(r));
  }
  const std::uint32_t m = r.u32();
  for (std::uint32_t i = 0; i < m; i++) {
    s.frames.push_back(readFrame(r));
  }
  return s;
}

//}

/* status and errors //{ */

void writeStatus(Writer& w, const SessionStatus& s) {
  w.f64(s.sim_time);
  w.f64(s.wall_time);
  w.f64(s.lag);
  w.u64(s.steps);
  w.u32(s.active_cells);
  w.u8(static_cast<std::uint8_t>(s.mode));
  w.u8(s.running ? 1 : 0);
}

SessionStatus readStatus(Reader& r) {
  SessionStatus s;
  s.sim_time     = r.f64();
  s.wall_time    = r.f64();
  s.lag          = r.f64();
  s.steps        = r.u64();
  s.active_cells = r.u32();
  s.mode         = static_cast<RunMode>(r.u8());
  s.running      = r.u8() != 0;
  return s;
}

std::string errorPayload(std::string_view code, std::string_view message) {
  Writer w;
  w.str(code);
  w.str(message);
  return w.take();
}

ErrorReply readError(Reader& r) {
  ErrorReply e;
  e.code    = r.str();
  e.message = r.str();
  return e;
}

//}

}  // namespace hoversim::wire
