#pragma once

// Synthetic driving scenes in the ego frame at t = 0: the ego starts at the
// origin heading along +x, +y is to the left. Agents follow their route
// polylines at constant speed and never react to the ego.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "gensel/geometry.hpp"

namespace gensel {

enum class Command { left, straight, right };
enum class Family { straight_road, intersection, dense_traffic };

std::string to_string(Command c);
std::string to_string(Family f);
Command command_from_string(const std::string& s);
Family family_from_string(const std::string& s);

inline constexpr double kMaxSpeed = 30.0;  // m/s, bound on consecutive displacement

/// Poses at t = (i + 1) * dt for i = 0..T-1; the start pose at t = 0 is
/// implied by the scenario.
struct Trajectory {
  std::vector<Pose> poses;
  double dt = 0.5;

  std::size_t horizon() const { return poses.size(); }
  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

/// Throws ContractError when T < 2, dt <= 0, a value is non-finite, or a step
/// exceeds kMaxSpeed * dt.
void validate_trajectory(const Trajectory& traj);

struct EgoStatus {
  double velocity = 0.0;
  double acceleration = 0.0;
  Command command = Command::straight;
};

struct Lane {
  Polyline centerline;  // points along the direction of travel
  double width = 3.5;
};

struct Box {
  double xmin = 0, ymin = 0, xmax = 0, ymax = 0;
  bool contains(Vec2 p) const { return p.x >= xmin && p.x <= xmax && p.y >= ymin && p.y <= ymax; }
};

struct SignalPhase {
  double start = 0.0;  // seconds; phases are sorted and the first starts at 0
  bool red = false;
};

struct Signal {
  Vec2 stop_a, stop_b;   // stop-line segment
  Vec2 direction;        // unit travel direction across the line
  std::vector<SignalPhase> schedule;

  bool red_at(double t) const;
};

struct MapGeometry {
  std::vector<Lane> lanes;
  Polygon drivable;
  std::vector<Box> intersection_zones;
  std::optional<Signal> signal;

  bool in_intersection(Vec2 p) const;
};

struct Agent {
  double length = 4.5;
  double width = 1.9;
  Pose initial;
  double speed = 0.0;
  Polyline route;  // starts at the initial position
};

struct ScenarioRecord {
  std::uint64_t seed = 0;
  Family family = Family::straight_road;
  MapGeometry map;
  std::vector<Agent> agents;
  EgoStatus ego;
  Pose ego_pose;
  double ego_length = 4.5;
  double ego_width = 2.0;
  Polyline route;  // ego route centerline, starts at the ego pose
  Trajectory expert;
  bool expert_flagged = false;  // no feasible profile; expert is an emergency stop
};

Pose agent_pose_at(const Agent& agent, double t);
std::vector<Pose> step_agents(const ScenarioRecord& scenario, double t);
OrientedRect agent_rect(const Agent& agent, const Pose& pose);
OrientedRect ego_rect(const ScenarioRecord& scenario, const Pose& pose);

struct WorldConfig {
  Family family = Family::straight_road;
  std::size_t agents = 0;
  std::size_t horizon = 8;
  double dt = 0.5;
  double ttc_threshold = 1.0;
  std::size_t max_attempts = 40;
};

ScenarioRecord generate_scenario(std::uint64_t seed, const WorldConfig& config);

/// Follows the route centerline exactly and picks, among a fixed family of
/// speed profiles, the one with the most progress that avoids collisions,
/// keeps time-to-collision above the threshold and stops for red lights.
/// Falls back to the hardest stop, flagged.
struct ExpertResult {
  Trajectory trajectory;
  bool flagged = false;
};
ExpertResult expert_policy(const ScenarioRecord& scenario, const WorldConfig& config);

// Scenario files: one JSON object per line, each carrying "schema_version".
inline constexpr int kScenarioSchemaVersion = 1;
std::string scenario_to_json(const ScenarioRecord& s);
ScenarioRecord scenario_from_json(const std::string& line, std::size_t line_no = 1);
void save_scenarios(std::ostream& os, const std::vector<ScenarioRecord>& scenarios);
std::vector<ScenarioRecord> load_scenarios(std::istream& is);
void save_scenarios_file(const std::string& path, const std::vector<ScenarioRecord>& scenarios);
std::vector<ScenarioRecord> load_scenarios_file(const std::string& path);

}  // namespace gensel
