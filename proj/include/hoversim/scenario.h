#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include <hoversim/session.h>

namespace hoversim
{

/// Schema or value problem; the message starts with the path of the offending field.
class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

struct TimedCommand
{
  double        time = 0.0;  // [s]
  std::uint32_t uav  = 0;
  ControlInput  input;
};

struct ScenarioOutputs
{
  std::string trace;    // CSV state trace, empty = none
  std::string sensors;  // binary sensor dump, empty = none
  int         trace_every = 1;
};

struct Scenario
{
  SessionConfig             session;
  std::vector<TimedCommand> commands;
  ScenarioOutputs           outputs;
  double                    duration = 10.0;  // [s]
};

/**
 * @brief Builds a scenario from its JSON form.
 *
 * "defaults.uav" is merged under every entry of "uavs" (RFC 7386 merge patch,
 * the entry wins). Unknown keys are rejected. Throws ConfigError.
 */
Scenario parse_scenario(const nlohmann::json& j);

Scenario load_scenario(const std::filesystem::path& path);

/// Fully explicit JSON (every default spelled out); parse_scenario(to_json(s)) reproduces s.
nlohmann::json to_json(const Scenario& s);

nlohmann::json to_json(const ControlInput& input);

/// Parses {"modality": name, ...fields}.
ControlInput parse_control(const nlohmann::json& j, const std::string& path = "command");

/* state trace //{ */

/// Column header of the CSV state trace for a given motor count.
std::string trace_header(int motor_columns);

/// One CSV row: time, uav, position, velocity, quaternion (w >= 0), angular velocity, motor speeds.
std::string trace_row(double time, std::uint32_t uav, const UavState& s, int motor_columns);

//}

/* scenario runner //{ */

struct RunSummary
{
  double                   final_time = 0.0;
  std::vector<UavState>    final_states;
  std::size_t              frames     = 0;
};

/// Executes a scenario in stepped mode, writing the trace and sensor dump to the given streams (either may be null).
RunSummary run_scenario(const Scenario& s, std::ostream* trace, std::ostream* sensors);

/// Sensor dump header: the 4 bytes "HSNS" followed by u16 version.
void write_sensor_dump_header(std::ostream& os);

/// One record: u32 length followed by the frame in the wire layout.
void write_sensor_record(std::ostream& os, const TaggedFrame& f);

//}

}  // namespace hoversim
