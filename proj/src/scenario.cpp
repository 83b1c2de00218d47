#include <hoversim/scenario.h>

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <map>

#include <hoversim/protocol.h>

namespace hoversim
{

using nlohmann::json;

namespace
{

/* field readers //{ */

enum class Check
{
  Any,
  Positive,
  NonNegative,
};

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

std::string at(const std::string& path, std::size_t i) {
  return path + "[" + std::to_string(i) + "]";
}

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
  throw ConfigError(path + ": " + msg);
}

void requireObject(const json& j, const std::string& path) {
  if (!j.is_object()) {
    fail(path.empty() ? "<root>" : path, "expected an object");
  }
}

void allowKeys(const json& j, const std::string& path, std::initializer_list<const char*> keys) {
  requireObject(j, path);
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* allowed : keys) {
      known = known || k == allowed;
    }
    if (!known) {
      fail(join(path, k), "unknown field");
    }
  }
}

double number(const json& j, const std::string& path, const char* key, double def, Check check = Check::Any) {
  const std::string p = join(path, key);
  double            v = def;
  if (j.contains(key)) {
    if (!j[key].is_number()) {
      fail(p, "expected a number");
    }
    v = j[key].get<double>();
  }
  if (!std::isfinite(v)) {
    fail(p, "must be finite");
  }
  if (check == Check::Positive && !(v > 0.0)) {
    fail(p, "must be > 0");
  }
  if (check == Check::NonNegative && !(v >= 0.0)) {
    fail(p, "must be >= 0");
  }
  return v;
}

std::int64_t integer(const json& j, const std::string& path, const char* key, std::int64_t def) {
  if (!j.contains(key)) {
    return def;
  }
  if (!j[key].is_number_integer()) {
    fail(join(path, key), "expected an integer");
  }
  return j[key].get<std::int64_t>();
}

std::uint64_t unsignedInteger(const json& j, const std::string& path, const char* key, std::uint64_t def) {
  if (!j.contains(key)) {
    return def;
  }
  if (!j[key].is_number_unsigned()) {
    fail(join(path, key), "expected a non-negative integer");
  }
  return j[key].get<std::uint64_t>();
}

bool boolean(const json& j, const std::string& path, const char* key, bool def) {
  if (!j.contains(key)) {
    return def;
  }
  if (!j[key].is_boolean()) {
    fail(join(path, key), "expected true or false");
  }
  return j[key].get<bool>();
}

std::string text(const json& j, const std::string& path, const char* key, const std::string& def) {
  if (!j.contains(key) || j[key].is_null()) {
    return def;
  }
  if (!j[key].is_string()) {
    fail(join(path, key), "expected a string");
  }
  return j[key].get<std::string>();
}

std::vector<double> numbers(const json& v, const std::string& p) {
  if (!v.is_array()) {
    fail(p, "expected an array of numbers");
  }
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); i++) {
    if (!v[i].is_number()) {
      fail(at(p, i), "expected a number");
    }
    out.push_back(v[i].get<double>());
    if (!std::isfinite(out.back())) {
      fail(at(p, i), "must be finite");
    }
  }
  return out;
}

Eigen::Vector3d vec3(const json& j, const std::string& path, const char* key, const Eigen::Vector3d& def) {
  if (!j.contains(key)) {
    return def;
  }
  const std::string         p = join(path, key);
  const std::vector<double> v = numbers(j[key], p);
  if (v.size() != 3) {
    fail(p, "expected 3 numbers");
  }
  return {v[0], v[1], v[2]};
}

Eigen::Matrix3d matrix3(const json& v, const std::string& p) {
  if (!v.is_array() || v.size() != 3) {
    fail(p, "expected 3 rows");
  }
  Eigen::Matrix3d m;
  for (int r = 0; r < 3; r++) {
    const std::vector<double> row = numbers(v[r], at(p, r));
    if (row.size() != 3) {
      fail(at(p, r), "expected 3 numbers");
    }
    for (int c = 0; c < 3; c++) {
      m(r, c) = row[c];
    }
  }
  return m;
}

/// Rotation given as a 3x3 matrix or as a quaternion [w, x, y, z].
Eigen::Matrix3d rotation(const json& j, const std::string& path, const char* key, const Eigen::Matrix3d& def) {
  if (!j.contains(key)) {
    return def;
  }
  const std::string p = join(path, key);
  const json&       v = j[key];
  Eigen::Matrix3d   R;
  if (v.is_array() && v.size() == 4) {
    const std::vector<double> q = numbers(v, p);
    try {
      R = rotationFromWxyz(Eigen::Vector4d(q[0], q[1], q[2], q[3]));
    }
    catch (const std::exception& e) {
      fail(p, e.what());
    }
  } else {
    R = matrix3(v, p);
    if (orthogonalityError(R) > 1e-6 || R.determinant() < 0.0) {
      fail(p, "not a rotation matrix");
    }
  }
  return R;
}

json toJson(const Eigen::Vector3d& v) {
  return json::array({v.x(), v.y(), v.z()});
}

json toJson(const Eigen::Matrix3d& m) {
  json out = json::array();
  for (int r = 0; r < 3; r++) {
    out.push_back(json::array({m(r, 0), m(r, 1), m(r, 2)}));
  }
  return out;
}

//}

/* components //{ */

NoiseSpec parseNoise(const json& j, const std::string& p, std::size_t channels) {
  allowKeys(j, p, {"sigma", "bias", "seed"});
  NoiseSpec n;
  if (j.contains("sigma")) {
    if (j["sigma"].is_number()) {
      n.sigma.assign(channels, number(j, p, "sigma", 0.0, Check::NonNegative));
    } else {
      n.sigma = numbers(j["sigma"], join(p, "sigma"));
    }
  }
  if (j.contains("bias")) {
    if (j["bias"].is_number()) {
      n.bias.assign(channels, number(j, p, "bias", 0.0));
    } else {
      n.bias = numbers(j["bias"], join(p, "bias"));
    }
  }
  if (n.sigma.size() > channels || n.bias.size() > channels) {
    fail(p, "at most " + std::to_string(channels) + " channels");
  }
  for (std::size_t i = 0; i < n.sigma.size(); i++) {
    if (n.sigma[i] < 0.0) {
      fail(at(join(p, "sigma"), i), "must be >= 0");
    }
  }
  n.seed = unsignedInteger(j, p, "seed", 0);
  return n;
}

json noiseJson(const NoiseSpec& n) {
  return json{{"sigma", n.sigma}, {"bias", n.bias}, {"seed", n.seed}};
}

SensorMount parseMount(const json& j, const std::string& p) {
  allowKeys(j, p, {"translation", "rotation"});
  SensorMount m;
  m.translation = vec3(j, p, "translation", m.translation);
  m.rotation    = rotation(j, p, "rotation", m.rotation);
  return m;
}

json mountJson(const SensorMount& m) {
  return json{{"translation", toJson(m.translation)}, {"rotation", toJson(m.rotation)}};
}

UavModel parseModel(const json& j, const std::string& p) {

  allowKeys(j, p, {"mass", "inertia", "gravity", "arm_diagonal", "thrust_coefficient", "torque_constant", "motor_time_constant", "max_motor_speed",
                   "allocation"});

  UavModel m = UavModel::defaultQuadX();

  m.body.mass = number(j, p, "mass", m.body.mass, Check::Positive);
  if (j.contains("inertia")) {
    const json& v = j["inertia"];
    if (v.is_array() && v.size() == 3 && v[0].is_number()) {
      const std::vector<double> d = numbers(v, join(p, "inertia"));
      m.body.inertia              = Eigen::Vector3d(d[0], d[1], d[2]).asDiagonal();
    } else {
      m.body.inertia = matrix3(v, join(p, "inertia"));
    }
  }
  m.body.gravity = vec3(j, p, "gravity", m.body.gravity);

  m.propellers.thrust_coefficient   = number(j, p, "thrust_coefficient", m.propellers.thrust_coefficient, Check::Positive);
  m.propellers.torque_constant      = number(j, p, "torque_constant", m.propellers.torque_constant, Check::NonNegative);
  m.propellers.motor_time_constant  = number(j, p, "motor_time_constant", m.propellers.motor_time_constant, Check::Positive);
  m.propellers.max_angular_velocity = number(j, p, "max_motor_speed", m.propellers.max_angular_velocity, Check::Positive);

  const double d = number(j, p, "arm_diagonal", m.allocation.armDiagonal(), Check::Positive);

  try {
    if (j.contains("allocation")) {
      const std::string ap = join(p, "allocation");
      const json&       a  = j["allocation"];
      if (!a.is_array() || a.size() != 4) {
        fail(ap, "expected 4 rows");
      }
      const std::vector<double> row0 = numbers(a[0], at(ap, 0));
      AllocationMatrix          gamma(4, static_cast<Eigen::Index>(row0.size()));
      for (int r = 0; r < 4; r++) {
        const std::vector<double> row = numbers(a[r], at(ap, r));
        if (row.size() != row0.size()) {
          fail(at(ap, r), "rows must have equal length");
        }
        for (std::size_t c = 0; c < row.size(); c++) {
          gamma(r, static_cast<Eigen::Index>(c)) = row[c];
        }
      }
      m.allocation = AllocationModel(gamma, d);
    } else {
      m.allocation = AllocationModel::quadX(d, m.propellers.torque_constant);
    }
  }
  catch (const ModelError& e) {
    fail(join(p, "allocation"), e.what());
  }

  try {
    m.validate();
  }
  catch (const std::exception& e) {
    fail(p, e.what());
  }
  return m;
}

json modelJson(const UavModel& m) {
  json alloc = json::array();
  for (int r = 0; r < 4; r++) {
    json row = json::array();
    for (int c = 0; c < m.motorCount(); c++) {
      row.push_back(m.allocation.matrix()(r, c));
    }
    alloc.push_back(row);
  }
  return json{{"mass", m.body.mass},
              {"inertia", toJson(m.body.inertia)},
              {"gravity", toJson(m.body.gravity)},
              {"arm_diagonal", m.allocation.armDiagonal()},
              {"thrust_coefficient", m.propellers.thrust_coefficient},
              {"torque_constant", m.propellers.torque_constant},
              {"motor_time_constant", m.propellers.motor_time_constant},
              {"max_motor_speed", m.propellers.max_angular_velocity},
              {"allocation", alloc}};
}

PidGains parsePid(const json& j, const std::string& p, PidGains g) {
  allowKeys(j, p, {"kp", "ki", "kd", "output_limit"});
  g.kp           = number(j, p, "kp", g.kp, Check::NonNegative);
  g.ki           = number(j, p, "ki", g.ki, Check::NonNegative);
  g.kd           = number(j, p, "kd", g.kd, Check::NonNegative);
  g.output_limit = number(j, p, "output_limit", g.output_limit, Check::Positive);
  return g;
}

json pidJson(const PidGains& g) {
  return json{{"kp", g.kp}, {"ki", g.ki}, {"kd", g.kd}, {"output_limit", g.output_limit}};
}

CascadeGains parseGains(const json& j, const std::string& p) {
  allowKeys(j, p, {"position_p", "max_velocity", "velocity", "max_tilt", "attitude_p", "max_rate_roll_pitch", "max_rate_yaw", "rate"});
  CascadeGains g;
  g.position_p   = number(j, p, "position_p", g.position_p, Check::NonNegative);
  g.max_velocity = number(j, p, "max_velocity", g.max_velocity, Check::Positive);
  if (j.contains("velocity")) {
    g.velocity = parsePid(j["velocity"], join(p, "velocity"), g.velocity);
  }
  g.max_tilt            = number(j, p, "max_tilt", g.max_tilt, Check::Positive);
  g.attitude_p          = number(j, p, "attitude_p", g.attitude_p, Check::NonNegative);
  g.max_rate_roll_pitch = number(j, p, "max_rate_roll_pitch", g.max_rate_roll_pitch, Check::Positive);
  g.max_rate_yaw        = number(j, p, "max_rate_yaw", g.max_rate_yaw, Check::Positive);
  if (j.contains("rate")) {
    g.rate = parsePid(j["rate"], join(p, "rate"), g.rate);
  }
  try {
    g.validate();
  }
  catch (const std::exception& e) {
    fail(p, e.what());
  }
  return g;
}

json gainsJson(const CascadeGains& g) {
  return json{{"position_p", g.position_p},   {"max_velocity", g.max_velocity},       {"velocity", pidJson(g.velocity)},
              {"max_tilt", g.max_tilt},       {"attitude_p", g.attitude_p},           {"max_rate_roll_pitch", g.max_rate_roll_pitch},
              {"max_rate_yaw", g.max_rate_yaw}, {"rate", pidJson(g.rate)}};
}

LidarConfig parseLidar(const json& j, const std::string& p) {
  allowKeys(j, p, {"n_horizontal", "n_vertical", "horizontal_fov", "vertical_fov", "max_range", "rate", "noise", "intensity", "label", "mount"});
  LidarConfig c;
  c.n_horizontal   = static_cast<int>(integer(j, p, "n_horizontal", c.n_horizontal));
  c.n_vertical     = static_cast<int>(integer(j, p, "n_vertical", c.n_vertical));
  c.horizontal_fov = number(j, p, "horizontal_fov", c.horizontal_fov, Check::Positive);
  c.vertical_fov   = number(j, p, "vertical_fov", c.vertical_fov, Check::Positive);
  c.max_range      = number(j, p, "max_range", c.max_range, Check::Positive);
  c.rate           = number(j, p, "rate", c.rate, Check::Positive);
  if (j.contains("noise")) {
    c.noise = parseNoise(j["noise"], join(p, "noise"), 1);
  }
  c.intensity = boolean(j, p, "intensity", c.intensity);
  c.label     = boolean(j, p, "label", c.label);
  if (j.contains("mount")) {
    c.mount = parseMount(j["mount"], join(p, "mount"));
  }
  try {
    c.validate();
  }
  catch (const std::exception& e) {
    fail(p, e.what());
  }
  return c;
}

json lidarJson(const LidarConfig& c) {
  return json{{"n_horizontal", c.n_horizontal}, {"n_vertical", c.n_vertical}, {"horizontal_fov", c.horizontal_fov}, {"vertical_fov", c.vertical_fov},
              {"max_range", c.max_range},       {"rate", c.rate},             {"noise", noiseJson(c.noise)},       {"intensity", c.intensity},
              {"label", c.label},               {"mount", mountJson(c.mount)}};
}

CameraConfig parseCamera(const json& j, const std::string& p) {
  allowKeys(j, p, {"width", "height", "horizontal_fov", "rate", "max_range", "mount"});
  CameraConfig c;
  c.width          = static_cast<int>(integer(j, p, "width", c.width));
  c.height         = static_cast<int>(integer(j, p, "height", c.height));
  c.horizontal_fov = number(j, p, "horizontal_fov", c.horizontal_fov, Check::Positive);
  c.rate           = number(j, p, "rate", c.rate, Check::Positive);
  c.max_range      = number(j, p, "max_range", c.max_range, Check::Positive);
  if (j.contains("mount")) {
    c.mount = parseMount(j["mount"], join(p, "mount"));
  }
  try {
    c.validate();
  }
  catch (const std::exception& e) {
    fail(p, e.what());
  }
  return c;
}

json cameraJson(const CameraConfig& c) {
  return json{{"width", c.width}, {"height", c.height}, {"horizontal_fov", c.horizontal_fov}, {"rate", c.rate}, {"max_range", c.max_range},
              {"mount", mountJson(c.mount)}};
}

UavConfig parseUav(const json& j, const std::string& p) {

  allowKeys(j, p, {"name", "position", "heading", "orientation", "hitl", "model", "gains", "sensors"});

  UavConfig u;
  u.name     = text(j, p, "name", "");
  u.position = vec3(j, p, "position", u.position);
  if (j.contains("heading") && j.contains("orientation")) {
    fail(join(p, "heading"), "give either heading or orientation, not both");
  }
  if (j.contains("heading")) {
    u.orientation = rotationZ(number(j, p, "heading", 0.0));
  }
  u.orientation = rotation(j, p, "orientation", u.orientation);
  u.hitl        = boolean(j, p, "hitl", false);

  if (j.contains("model")) {
    u.model = parseModel(j["model"], join(p, "model"));
  }
  if (j.contains("gains")) {
    u.gains = parseGains(j["gains"], join(p, "gains"));
  }

  if (j.contains("sensors")) {
    const std::string sp = join(p, "sensors");
    const json&       s  = j["sensors"];
    allowKeys(s, sp, {"imu", "nav", "lidars", "cameras"});

    if (s.contains("imu") && !s["imu"].is_null()) {
      const std::string ip = join(sp, "imu");
      allowKeys(s["imu"], ip, {"rate", "noise"});
      ImuConfig imu;
      imu.rate = number(s["imu"], ip, "rate", imu.rate, Check::Positive);
      if (s["imu"].contains("noise")) {
        imu.noise = parseNoise(s["imu"]["noise"], join(ip, "noise"), 6);
      }
      u.imu = imu;
    }

    if (s.contains("nav") && !s["nav"].is_null()) {
      const std::string np = join(sp, "nav");
      const json&       n  = s["nav"];
      allowKeys(n, np, {"rate", "origin", "north", "gnss_noise", "baro_noise", "mag_noise"});
      NavSensorConfig nav;
      nav.rate = number(n, np, "rate", nav.rate, Check::Positive);
      if (n.contains("origin")) {
        const std::string op = join(np, "origin");
        allowKeys(n["origin"], op, {"latitude", "longitude", "altitude"});
        nav.nav.origin_latitude  = number(n["origin"], op, "latitude", nav.nav.origin_latitude);
        nav.nav.origin_longitude = number(n["origin"], op, "longitude", nav.nav.origin_longitude);
        nav.nav.origin_altitude  = number(n["origin"], op, "altitude", nav.nav.origin_altitude);
      }
      nav.nav.north = vec3(n, np, "north", nav.nav.north);
      if (n.contains("gnss_noise")) {
        nav.nav.gnss = parseNoise(n["gnss_noise"], join(np, "gnss_noise"), 3);
      }
      if (n.contains("baro_noise")) {
        nav.nav.baro = parseNoise(n["baro_noise"], join(np, "baro_noise"), 1);
      }
      if (n.contains("mag_noise")) {
        nav.nav.mag = parseNoise(n["mag_noise"], join(np, "mag_noise"), 3);
      }
      try {
        nav.nav.validate();
      }
      catch (const std::exception& e) {
        fail(np, e.what());
      }
      u.nav = nav;
    }

    if (s.contains("lidars")) {
      if (!s["lidars"].is_array()) {
        fail(join(sp, "lidars"), "expected an array");
      }
      for (std::size_t i = 0; i < s["lidars"].size(); i++) {
        u.lidars.push_back(parseLidar(s["lidars"][i], at(join(sp, "lidars"), i)));
      }
    }
    if (s.contains("cameras")) {
      if (!s["cameras"].is_array()) {
        fail(join(sp, "cameras"), "expected an array");
      }
      for (std::size_t i = 0; i < s["cameras"].size(); i++) {
        u.cameras.push_back(parseCamera(s["cameras"][i], at(join(sp, "cameras"), i)));
      }
    }
  }

  return u;
}

json uavJson(const UavConfig& u) {
  json sensors = json::object();
  sensors["imu"] = u.imu ? json{{"rate", u.imu->rate}, {"noise", noiseJson(u.imu->noise)}} : json(nullptr);
  if (u.nav) {
    const NavConfig& n = u.nav->nav;
    sensors["nav"]     = json{{"rate", u.nav->rate},
                          {"origin", {{"latitude", n.origin_latitude}, {"longitude", n.origin_longitude}, {"altitude", n.origin_altitude}}},
                          {"north", toJson(n.north)},
                          {"gnss_noise", noiseJson(n.gnss)},
                          {"baro_noise", noiseJson(n.baro)},
                          {"mag_noise", noiseJson(n.mag)}};
  } else {
    sensors["nav"] = nullptr;
  }
  sensors["lidars"]  = json::array();
  sensors["cameras"] = json::array();
  for (const auto& l : u.lidars) {
    sensors["lidars"].push_back(lidarJson(l));
  }
  for (const auto& c : u.cameras) {
    sensors["cameras"].push_back(cameraJson(c));
  }

  return json{{"name", u.name},
              {"position", toJson(u.position)},
              {"orientation", toJson(u.orientation)},
              {"hitl", u.hitl},
              {"model", modelJson(u.model)},
              {"gains", gainsJson(u.gains)},
              {"sensors", sensors}};
}

TerrainParams parseWorld(const json& j, const std::string& p) {
  allowKeys(j, p, {"seed", "cell_size", "grid_resolution", "roughness", "amplitude", "base_frequency", "octaves", "forest_density", "visibility_range"});
  TerrainParams t;
  t.seed             = unsignedInteger(j, p, "seed", t.seed);
  t.cell_size        = number(j, p, "cell_size", t.cell_size, Check::Positive);
  t.grid_resolution  = static_cast<int>(integer(j, p, "grid_resolution", t.grid_resolution));
  t.roughness        = number(j, p, "roughness", t.roughness, Check::NonNegative);
  t.amplitude        = number(j, p, "amplitude", t.amplitude);
  t.base_frequency   = number(j, p, "base_frequency", t.base_frequency, Check::Positive);
  t.octaves          = static_cast<int>(integer(j, p, "octaves", t.octaves));
  t.forest_density   = number(j, p, "forest_density", t.forest_density, Check::NonNegative);
  t.visibility_range = number(j, p, "visibility_range", t.visibility_range, Check::Positive);
  if (t.grid_resolution < 2) {
    fail(join(p, "grid_resolution"), "must be >= 2");
  }
  if (t.octaves < 1) {
    fail(join(p, "octaves"), "must be >= 1");
  }
  return t;
}

json worldJson(const TerrainParams& t) {
  return json{{"seed", t.seed},
              {"cell_size", t.cell_size},
              {"grid_resolution", t.grid_resolution},
              {"roughness", t.roughness},
              {"amplitude", t.amplitude},
              {"base_frequency", t.base_frequency},
              {"octaves", t.octaves},
              {"forest_density", t.forest_density},
              {"visibility_range", t.visibility_range}};
}

SceneMaterials parseMaterials(const json& j, const std::string& p) {
  allowKeys(j, p, {"terrain_label", "tree_label", "grass_label", "intensity"});
  SceneMaterials m;
  auto label = [&](const char* key, std::uint8_t def) {
    const std::int64_t v = integer(j, p, key, def);
    if (v < 0 || v > 254) {
      fail(join(p, key), "must lie in [0, 254]");
    }
    return static_cast<std::uint8_t>(v);
  };
  m.terrain_label = label("terrain_label", m.terrain_label);
  m.tree_label    = label("tree_label", m.tree_label);
  m.grass_label   = label("grass_label", m.grass_label);
  if (j.contains("intensity")) {
    const std::string ip = join(p, "intensity");
    requireObject(j["intensity"], ip);
    m.intensity.fill(0.0f);
    for (const auto& [k, v] : j["intensity"].items()) {
      int cls = -1;
      try {
        std::size_t used = 0;
        cls              = std::stoi(k, &used);
        if (used != k.size()) {
          cls = -1;
        }
      }
      catch (const std::exception&) {
      }
      if (cls < 0 || cls > 255) {
        fail(join(ip, k), "keys are class numbers 0-255");
      }
      if (!v.is_number() || !(v.get<double>() >= 0.0 && v.get<double>() <= 1.0)) {
        fail(join(ip, k), "intensity must lie in [0, 1]");
      }
      m.intensity[cls] = v.get<float>();
    }
  }
  return m;
}

json materialsJson(const SceneMaterials& m) {
  json intensity = json::object();
  for (int c = 0; c < 256; c++) {
    if (m.intensity[c] != 0.0f) {
      intensity[std::to_string(c)] = m.intensity[c];
    }
  }
  return json{{"terrain_label", m.terrain_label}, {"tree_label", m.tree_label}, {"grass_label", m.grass_label}, {"intensity", intensity}};
}

//}

}  // namespace

/* control inputs //{ */

ControlInput parse_control(const json& j, const std::string& p) {

  using namespace reference;

  requireObject(j, p);
  const std::string name = text(j, p, "modality", "");
  const auto        m    = modalityFromName(name);
  if (!m) {
    fail(join(p, "modality"), "unknown modality '" + name + "'");
  }

  auto only = [&](std::initializer_list<const char*> keys) {
    std::vector<const char*> all{"modality", "t", "uav"};
    for (const auto& [k, v] : j.items()) {
      bool known = std::find_if(all.begin(), all.end(), [&](const char* a) { return k == a; }) != all.end();
      for (const char* key : keys) {
        known = known || k == key;
      }
      if (!known) {
        fail(join(p, k), "unknown field for modality " + name);
      }
    }
  };

  switch (*m) {
    case Modality::ActuatorThrottles: {
      only({"throttles"});
      if (!j.contains("throttles")) {
        fail(join(p, "throttles"), "required");
      }
      const std::vector<double> t = numbers(j["throttles"], join(p, "throttles"));
      if (t.empty() || t.size() > static_cast<std::size_t>(kMaxMotors)) {
        fail(join(p, "throttles"), "expected 1 to 16 throttles");
      }
      return ActuatorThrottles{Eigen::Map<const Eigen::VectorXd>(t.data(), static_cast<Eigen::Index>(t.size()))};
    }
    case Modality::ControlGroups:
      only({"roll", "pitch", "yaw", "throttle"});
      return ControlGroups{number(j, p, "roll", 0.0), number(j, p, "pitch", 0.0), number(j, p, "yaw", 0.0), number(j, p, "throttle", 0.0)};
    case Modality::RateThrottle:
      only({"rate", "throttle"});
      return RateThrottle{vec3(j, p, "rate", Eigen::Vector3d::Zero()), number(j, p, "throttle", 0.0)};
    case Modality::AttitudeThrottle:
      only({"orientation", "throttle"});
      return AttitudeThrottle{rotation(j, p, "orientation", Eigen::Matrix3d::Identity()), number(j, p, "throttle", 0.0)};
    case Modality::AccelHeading:
      only({"acceleration", "heading"});
      return AccelHeading{vec3(j, p, "acceleration", Eigen::Vector3d::Zero()), number(j, p, "heading", 0.0)};
    case Modality::AccelHeadingRate:
      only({"acceleration", "heading_rate"});
      return AccelHeadingRate{vec3(j, p, "acceleration", Eigen::Vector3d::Zero()), number(j, p, "heading_rate", 0.0)};
    case Modality::VelocityHeading:
      only({"velocity", "heading"});
      return VelocityHeading{vec3(j, p, "velocity", Eigen::Vector3d::Zero()), number(j, p, "heading", 0.0)};
    case Modality::VelocityHeadingRate:
      only({"velocity", "heading_rate"});
      return VelocityHeadingRate{vec3(j, p, "velocity", Eigen::Vector3d::Zero()), number(j, p, "heading_rate", 0.0)};
    case Modality::PositionHeading:
      only({"position", "heading"});
      return PositionHeading{vec3(j, p, "position", Eigen::Vector3d::Zero()), number(j, p, "heading", 0.0)};
  }
  fail(p, "unreachable");
}

json to_json(const ControlInput& input) {

  using namespace reference;

  json j{{"modality", std::string(modalityName(modalityOf(input)))}};

  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, ActuatorThrottles>) {
          j["throttles"] = std::vector<double>(v.throttles.data(), v.throttles.data() + v.throttles.size());
        } else if constexpr (std::is_same_v<T, ControlGroups>) {
          j["roll"]     = v.roll;
          j["pitch"]    = v.pitch;
          j["yaw"]      = v.yaw;
          j["throttle"] = v.throttle;
        } else if constexpr (std::is_same_v<T, RateThrottle>) {
          j["rate"]     = toJson(v.rate);
          j["throttle"] = v.throttle;
        } else if constexpr (std::is_same_v<T, AttitudeThrottle>) {
          j["orientation"] = toJson(v.orientation);
          j["throttle"]    = v.throttle;
        } else if constexpr (std::is_same_v<T, AccelHeading>) {
          j["acceleration"] = toJson(v.acceleration);
          j["heading"]      = v.heading;
        } else if constexpr (std::is_same_v<T, AccelHeadingRate>) {
          j["acceleration"] = toJson(v.acceleration);
          j["heading_rate"] = v.heading_rate;
        } else if constexpr (std::is_same_v<T, VelocityHeading>) {
          j["velocity"] = toJson(v.velocity);
          j["heading"]  = v.heading;
        } else if constexpr (std::is_same_v<T, VelocityHeadingRate>) {
          j["velocity"]     = toJson(v.velocity);
          j["heading_rate"] = v.heading_rate;
        } else {
          j["position"] = toJson(v.position);
          j["heading"]  = v.heading;
        }
      },
      input);

  return j;
}

//}

/* Scenario //{ */

Scenario parse_scenario(const json& root) {

  allowKeys(root, "", {"defaults", "world", "materials", "mode", "realtime_factor", "dt", "spectator", "uavs", "commands", "duration", "outputs"});

  Scenario       s;
  SessionConfig& c = s.session;

  if (root.contains("world")) {
    c.world = parseWorld(root["world"], "world");
  }
  if (root.contains("materials")) {
    c.materials = parseMaterials(root["materials"], "materials");
  }

  const std::string mode = text(root, "", "mode", "stepped");
  if (mode == "stepped") {
    c.mode = RunMode::Stepped;
  } else if (mode == "realtime") {
    c.mode = RunMode::Realtime;
  } else {
    fail("mode", "expected 'stepped' or 'realtime'");
  }
  c.realtime_factor = number(root, "", "realtime_factor", c.realtime_factor, Check::Positive);
  c.dt              = number(root, "", "dt", c.dt, Check::Positive);
  if (root.contains("spectator") && !root["spectator"].is_null()) {
    c.spectator = vec3(root, "", "spectator", Eigen::Vector3d::Zero());
  }

  json uav_defaults = json::object();
  if (root.contains("defaults")) {
    allowKeys(root["defaults"], "defaults", {"uav"});
    if (root["defaults"].contains("uav")) {
      uav_defaults = root["defaults"]["uav"];
      requireObject(uav_defaults, "defaults.uav");
    }
  }

  if (!root.contains("uavs") || !root["uavs"].is_array() || root["uavs"].empty()) {
    fail("uavs", "at least one UAV is required");
  }
  for (std::size_t i = 0; i < root["uavs"].size(); i++) {
    json merged = uav_defaults;
    requireObject(root["uavs"][i], at("uavs", i));
    merged.merge_patch(root["uavs"][i]);
    c.uavs.push_back(parseUav(merged, at("uavs", i)));
  }

  s.duration = number(root, "", "duration", s.duration, Check::Positive);

  if (root.contains("commands")) {
    if (!root["commands"].is_array()) {
      fail("commands", "expected an array");
    }
    double last = 0.0;
    for (std::size_t i = 0; i < root["commands"].size(); i++) {
      const std::string p = at("commands", i);
      const json&       j = root["commands"][i];
      TimedCommand      cmd;
      cmd.time = number(j, p, "t", 0.0, Check::NonNegative);
      if (cmd.time < last) {
        fail(join(p, "t"), "command times must be non-decreasing");
      }
      last                  = cmd.time;
      const std::int64_t id = integer(j, p, "uav", 0);
      if (id < 0 || static_cast<std::size_t>(id) >= c.uavs.size()) {
        fail(join(p, "uav"), "no such UAV");
      }
      cmd.uav   = static_cast<std::uint32_t>(id);
      cmd.input = parse_control(j, p);
      try {
        validate(cmd.input, c.uavs[cmd.uav].model);
      }
      catch (const std::exception& e) {
        fail(p, e.what());
      }
      if (c.uavs[cmd.uav].hitl) {
        fail(p, "commands cannot target a HITL UAV");
      }
      s.commands.push_back(std::move(cmd));
    }
  }

  if (root.contains("outputs")) {
    const json& o = root["outputs"];
    allowKeys(o, "outputs", {"trace", "sensors", "trace_every"});
    s.outputs.trace       = text(o, "outputs", "trace", "");
    s.outputs.sensors     = text(o, "outputs", "sensors", "");
    s.outputs.trace_every = static_cast<int>(integer(o, "outputs", "trace_every", 1));
    if (s.outputs.trace_every < 1) {
      fail("outputs.trace_every", "must be >= 1");
    }
  }

  try {
    c.validate();
  }
  catch (const SessionError& e) {
    throw ConfigError(e.what());
  }

  return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError(path.string() + ": cannot open");
  }
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  }
  catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_scenario(j);
}

json to_json(const Scenario& s) {

  const SessionConfig& c = s.session;

  json root;
  root["world"]           = worldJson(c.world);
  root["materials"]       = materialsJson(c.materials);
  root["mode"]            = c.mode == RunMode::Stepped ? "stepped" : "realtime";
  root["realtime_factor"] = c.realtime_factor;
  root["dt"]              = c.dt;
  root["spectator"]       = c.spectator ? toJson(*c.spectator) : json(nullptr);
  root["duration"]        = s.duration;

  root["uavs"] = json::array();
  for (const auto& u : c.uavs) {
    root["uavs"].push_back(uavJson(u));
  }

  root["commands"] = json::array();
  for (const auto& cmd : s.commands) {
    json j   = to_json(cmd.input);
    j["t"]   = cmd.time;
    j["uav"] = cmd.uav;
    root["commands"].push_back(j);
  }

  root["outputs"] = json{{"trace", s.outputs.trace}, {"sensors", s.outputs.sensors}, {"trace_every", s.outputs.trace_every}};

  return root;
}

//}

/* trace //{ */

std::string trace_header(int motor_columns) {
  std::string h = "time,uav,px,py,pz,vx,vy,vz,qw,qx,qy,qz,wx,wy,wz";
  for (int i = 0; i < motor_columns; i++) {
    h += ",m" + std::to_string(i);
  }
  return h;
}

std::string trace_row(double time, std::uint32_t uav, const UavState& s, int motor_columns) {

  std::string row;
  char        buf[48];

  auto field = [&](double v) {
    std::snprintf(buf, sizeof(buf), ",%.9g", v);
    row += buf;
  };

  std::snprintf(buf, sizeof(buf), "%.6f,%" PRIu32, time, uav);
  row += buf;

  for (int i = 0; i < 3; i++) {
    field(s.position(i));
  }
  for (int i = 0; i < 3; i++) {
    field(s.velocity(i));
  }
  const Eigen::Vector4d q = quaternionWxyz(s.orientation);
  for (int i = 0; i < 4; i++) {
    field(q(i));
  }
  for (int i = 0; i < 3; i++) {
    field(s.angular_velocity(i));
  }
  for (int i = 0; i < motor_columns; i++) {
    if (i < s.motor_speeds.size()) {
      field(s.motor_speeds(i));
    } else {
      row += ",";
    }
  }
  return row;
}

//}

/* runner //{ */

void write_sensor_dump_header(std::ostream& os) {
  wire::Writer w;
  w.bytes("HSNS");
  w.u16(1);
  os << w.data();
}

void write_sensor_record(std::ostream& os, const TaggedFrame& f) {
  wire::Writer body;
  wire::writeFrame(body, f);
  wire::Writer head;
  head.u32(static_cast<std::uint32_t>(body.data().size()));
  os << head.data() << body.data();
}

RunSummary run_scenario(const Scenario& s, std::ostream* trace, std::ostream* sensors) {

  SessionConfig cfg = s.session;
  cfg.mode          = RunMode::Stepped;
  Session session(cfg);

  int motor_columns = 0;
  for (const auto& u : cfg.uavs) {
    motor_columns = std::max(motor_columns, u.model.motorCount());
  }

  auto writeRows = [&](double t) {
    for (std::uint32_t i = 0; i < session.uavCount(); i++) {
      *trace << trace_row(t, i, session.state(i), motor_columns) << "\n";
    }
  };

  if (trace) {
    *trace << trace_header(motor_columns) << "\n";
    writeRows(0.0);
  }
  if (sensors) {
    write_sensor_dump_header(*sensors);
  }

  const auto total = static_cast<std::uint64_t>(std::llround(s.duration / cfg.dt));

  RunSummary  summary;
  std::size_t next_cmd = 0;

  for (std::uint64_t k = 0; k < total; k++) {

    // commands due at the start of this step
    const double t = session.time();
    while (next_cmd < s.commands.size() && s.commands[next_cmd].time <= t + 1e-9) {
      session.set_control(s.commands[next_cmd].uav, s.commands[next_cmd].input);
      next_cmd++;
    }

    const StepResult r = session.step(1);
    summary.frames += r.frames.size();

    if (trace && (k + 1) % static_cast<std::uint64_t>(s.outputs.trace_every) == 0) {
      writeRows(r.time);
    }
    if (sensors) {
      for (const TaggedFrame& f : r.frames) {
        write_sensor_record(*sensors, f);
      }
    }
  }

  summary.final_time = session.time();
  for (std::uint32_t i = 0; i < session.uavCount(); i++) {
    summary.final_states.push_back(session.state(i));
  }
  return summary;
}

//}

}  // namespace hoversim
