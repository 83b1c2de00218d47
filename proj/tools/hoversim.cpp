#include <atomic>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include <hoversim/bench.h>
#include <hoversim/scenario.h>
#include <hoversim/server.h>

using namespace hoversim;
using nlohmann::json;

namespace
{

constexpr int kExitOk        = 0;
constexpr int kExitIo        = 1;
constexpr int kExitConfig    = 2;
constexpr int kExitDiverged  = 3;

std::atomic<bool> g_stop{false};

void onSignal(int) {
  g_stop = true;
}

/* run //{ */

struct RunOptions
{
  std::string                  scenario;
  std::optional<std::uint64_t> seed;
  std::optional<double>        dt;
  std::optional<double>        duration;
  std::string                  output_dir = ".";
};

int run(const RunOptions& o) {

  std::error_code ec;
  if (!std::filesystem::is_regular_file(o.scenario, ec)) {
    std::cerr << "i/o error: cannot read " << o.scenario << "\n";
    return kExitIo;
  }

  Scenario s;
  try {
    s = load_scenario(o.scenario);
    if (o.seed) {
      s.session.world.seed = *o.seed;
    }
    if (o.dt) {
      if (!(*o.dt > 0.0)) {
        throw ConfigError("dt: must be > 0");
      }
      s.session.dt = *o.dt;
    }
    if (o.duration) {
      if (!(*o.duration > 0.0)) {
        throw ConfigError("duration: must be > 0");
      }
      s.duration = *o.duration;
    }
  }
  catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  const std::filesystem::path dir(o.output_dir);
  std::ofstream               trace;
  std::ofstream               sensors;
  try {
    std::filesystem::create_directories(dir);
    if (!s.outputs.trace.empty()) {
      trace.open(dir / s.outputs.trace, std::ios::binary);
      if (!trace) {
        throw std::runtime_error("cannot write " + (dir / s.outputs.trace).string());
      }
    }
    if (!s.outputs.sensors.empty()) {
      sensors.open(dir / s.outputs.sensors, std::ios::binary);
      if (!sensors) {
        throw std::runtime_error("cannot write " + (dir / s.outputs.sensors).string());
      }
    }
  }
  catch (const std::exception& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  }

  try {
    const RunSummary r = run_scenario(s, trace.is_open() ? &trace : nullptr, sensors.is_open() ? &sensors : nullptr);
    bool failed = false;
    for (std::ofstream* f : {&trace, &sensors}) {
      if (f->is_open()) {
        f->close();
        failed = failed || f->fail();
      }
    }
    if (failed) {
      std::cerr << "i/o error: failed writing outputs\n";
      return kExitIo;
    }
    std::printf("simulated %.3f s, %zu UAV(s), %zu sensor frame(s)\n", r.final_time, r.final_states.size(), r.frames);
    for (std::size_t i = 0; i < r.final_states.size(); i++) {
      const auto& p = r.final_states[i].position;
      std::printf("  uav %zu final position: %.4f %.4f %.4f\n", i, p.x(), p.y(), p.z());
    }
    if (!s.outputs.trace.empty()) {
      std::printf("trace: %s\n", (dir / s.outputs.trace).string().c_str());
    }
    if (!s.outputs.sensors.empty()) {
      std::printf("sensors: %s\n", (dir / s.outputs.sensors).string().c_str());
    }
  }
  catch (const SessionError& e) {
    if (e.code() == "diverged") {
      std::cerr << "diverged: " << e.what() << "\n";
      return kExitDiverged;
    }
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitOk;
}

//}

/* bench //{ */

struct BenchOptions
{
  std::string      suite;
  std::vector<int> uavs{1, 10, 100, 400};
  double           seconds = 1.0;
  std::string      json_path;
};

int runBench(const BenchOptions& o) {

  json out;
  out["suite"] = o.suite;
  out["rows"]  = json::array();

  if (o.suite == "dynamics") {
    std::printf("%8s  %14s  %16s\n", "uavs", "steps/s", "uav-steps/s");
    for (int n : o.uavs) {
      const auto r = bench::runDynamics(n, o.seconds);
      std::printf("%8d  %14.1f  %16.1f\n", r.uavs, r.steps_per_second, r.uav_steps_per_second);
      out["rows"].push_back({{"uavs", r.uavs}, {"steps_per_second", r.steps_per_second}, {"uav_steps_per_second", r.uav_steps_per_second}});
    }
  } else if (o.suite == "swarm") {
    std::printf("%8s  %18s\n", "uavs", "real-time factor");
    for (int n : o.uavs) {
      const auto r = bench::runSwarm(n, o.seconds);
      std::printf("%8d  %18.2f\n", r.uavs, r.realtime_factor);
      out["rows"].push_back({{"uavs", r.uavs}, {"realtime_factor", r.realtime_factor}});
    }
  } else if (o.suite == "lidar") {
    const auto scene = bench::standardLidarScene();
    std::printf("scene: %zu triangles in %zu cells\n", scene.world->triangleCount(), scene.world->activeCells().size());
    std::printf("%8s  %10s  %10s  %10s\n", "points", "grid", "scans/s", "hits");
    out["triangles"] = scene.world->triangleCount();
    for (int points : bench::lidarPointCounts()) {
      const auto        r    = bench::runLidar(scene, points, o.seconds);
      const std::string grid = std::to_string(r.n_horizontal) + "x" + std::to_string(r.n_vertical);
      std::printf("%8d  %10s  %10.1f  %10zu\n", r.points, grid.c_str(), r.scans_per_second, r.hits);
      out["rows"].push_back({{"points", r.points}, {"n_horizontal", r.n_horizontal}, {"n_vertical", r.n_vertical}, {"scans_per_second", r.scans_per_second},
                             {"hits", r.hits}});
    }
  } else {
    std::cerr << "unknown suite '" << o.suite << "'\n";
    return kExitConfig;
  }

  const std::string text = out.dump(2);
  if (o.json_path.empty()) {
    std::printf("%s\n", text.c_str());
  } else {
    std::ofstream f(o.json_path);
    f << text << "\n";
    if (!f) {
      std::cerr << "i/o error: cannot write " << o.json_path << "\n";
      return kExitIo;
    }
  }
  return kExitOk;
}

//}

/* serve //{ */

int serve(std::uint16_t port, const std::string& bind) {
  std::signal(SIGINT, onSignal);
  std::signal(SIGTERM, onSignal);
  try {
    SimServer server;
    TcpServer tcp(server, port, bind);
    tcp.start();
    std::printf("listening on %s:%u\n", bind.c_str(), static_cast<unsigned>(tcp.port()));
    std::fflush(stdout);
    while (!g_stop) {
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    tcp.stop();
  }
  catch (const std::exception& e) {
    std::cerr << "server error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitOk;
}

//}

/* dump-world //{ */

struct DumpOptions
{
  std::string                  scenario;
  std::optional<std::uint64_t> seed;
  double                       x = 0.0;
  double                       y = 0.0;
  std::string                  output = "world.obj";
};

int dumpWorld(const DumpOptions& o) {
  TerrainParams                params;
  SceneMaterials               materials;
  std::vector<Eigen::Vector3d> observers{Eigen::Vector3d(o.x, o.y, 0.0)};
  try {
    if (!o.scenario.empty()) {
      const Scenario s = load_scenario(o.scenario);
      params           = s.session.world;
      materials        = s.session.materials;
      observers.clear();
      for (const auto& u : s.session.uavs) {
        observers.push_back(u.position);
      }
    }
    if (o.seed) {
      params.seed = *o.seed;
    }
    params.validate();
  }
  catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  World world(params, materials);
  world.update_cells(observers);
  std::ofstream f(o.output);
  world.writeObj(f);
  f.close();
  if (f.fail()) {
    std::cerr << "i/o error: cannot write " << o.output << "\n";
    return kExitIo;
  }
  std::printf("%zu cells, %zu triangles -> %s\n", world.activeCells().size(), world.triangleCount(), o.output.c_str());
  return kExitOk;
}

//}

}  // namespace

int main(int argc, char** argv) {

  CLI::App app{"Headless multirotor simulator"};
  app.require_subcommand(1);

  RunOptions run_opts;
  auto*      run_cmd = app.add_subcommand("run", "Run a scenario file in stepped mode");
  run_cmd->add_option("scenario", run_opts.scenario, "Scenario JSON file")->required();
  run_cmd->add_option("--seed", run_opts.seed, "Override the world seed");
  run_cmd->add_option("--dt", run_opts.dt, "Override the physics step [s]");
  run_cmd->add_option("--duration", run_opts.duration, "Override the duration [s]");
  run_cmd->add_option("-o,--output-dir", run_opts.output_dir, "Directory for trace and sensor outputs");

  BenchOptions bench_opts;
  auto*        bench_cmd = app.add_subcommand("bench", "Performance suites");
  bench_cmd->add_option("suite", bench_opts.suite, "dynamics | swarm | lidar")->required()->check(CLI::IsMember({"dynamics", "swarm", "lidar"}));
  bench_cmd->add_option("--uavs", bench_opts.uavs, "UAV counts for the dynamics and swarm suites");
  bench_cmd->add_option("--seconds", bench_opts.seconds, "Minimum wall time per measurement");
  bench_cmd->add_option("--json", bench_opts.json_path, "Write the machine-readable report here instead of stdout");

  std::uint16_t port = default_port();
  std::string   bind = "127.0.0.1";
  auto*         serve_cmd = app.add_subcommand("serve", "Start the simulation server");
  serve_cmd->add_option("-p,--port", port, "TCP port (default: HOVERSIM_PORT or " + std::to_string(kDefaultPort) + ")");
  serve_cmd->add_option("--bind", bind, "Bind address");

  DumpOptions dump_opts;
  auto*       dump_cmd = app.add_subcommand("dump-world", "Write the generated terrain as Wavefront OBJ");
  dump_cmd->add_option("scenario", dump_opts.scenario, "Scenario JSON file (world parameters and observers)");
  dump_cmd->add_option("--seed", dump_opts.seed, "Override the world seed");
  dump_cmd->add_option("-x", dump_opts.x, "Observer x without a scenario [m]");
  dump_cmd->add_option("-y", dump_opts.y, "Observer y without a scenario [m]");
  dump_cmd->add_option("-o,--output", dump_opts.output, "Output OBJ path");

  try {
    app.parse(argc, argv);
  }
  catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (run_cmd->parsed()) {
    return run(run_opts);
  }
  if (bench_cmd->parsed()) {
    return runBench(bench_opts);
  }
  if (serve_cmd->parsed()) {
    return serve(port, bind);
  }
  return dumpWorld(dump_opts);
}
