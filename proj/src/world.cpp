#include "gensel/world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "gensel/errors.hpp"
#include "gensel/metrics.hpp"
#include "gensel/rng.hpp"

namespace gensel {

using nlohmann::json;

std::string to_string(Command c) {
  switch (c) {
    case Command::left: return "left";
    case Command::straight: return "straight";
    case Command::right: return "right";
  }
  return "straight";
}

std::string to_string(Family f) {
  switch (f) {
    case Family::straight_road: return "straight-road";
    case Family::intersection: return "intersection";
    case Family::dense_traffic: return "dense-traffic";
  }
  return "straight-road";
}

Command command_from_string(const std::string& s) {
  if (s == "left") return Command::left;
  if (s == "straight") return Command::straight;
  if (s == "right") return Command::right;
  throw ConfigError("unknown command '" + s + "'");
}

Family family_from_string(const std::string& s) {
  if (s == "straight-road") return Family::straight_road;
  if (s == "intersection") return Family::intersection;
  if (s == "dense-traffic") return Family::dense_traffic;
  throw ConfigError("unknown scenario family '" + s + "'");
}

void validate_trajectory(const Trajectory& traj) {
  if (traj.poses.size() < 2) throw ContractError("trajectory needs at least 2 poses, got " + std::to_string(traj.poses.size()));
  if (!(traj.dt > 0.0) || !std::isfinite(traj.dt)) throw ContractError("trajectory dt must be positive");
  for (std::size_t i = 0; i < traj.poses.size(); ++i) {
    const Pose& p = traj.poses[i];
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.heading))
      throw ContractError("trajectory pose " + std::to_string(i) + " is not finite");
    if (i > 0 && norm(p.position() - traj.poses[i - 1].position()) > kMaxSpeed * traj.dt + 1e-9)
      throw ContractError("trajectory step " + std::to_string(i) + " exceeds the speed bound");
  }
}

bool Signal::red_at(double t) const {
  bool red = schedule.empty() ? false : schedule.front().red;
  for (const auto& ph : schedule) {
    if (ph.start <= t) red = ph.red;
  }
  return red;
}

bool MapGeometry::in_intersection(Vec2 p) const {
  return std::any_of(intersection_zones.begin(), intersection_zones.end(), [&](const Box& b) { return b.contains(p); });
}

Pose agent_pose_at(const Agent& agent, double t) {
  const double s = agent.speed * t;
  if (s == 0.0) return agent.initial;
  return agent.route.pose_at(s);
}

std::vector<Pose> step_agents(const ScenarioRecord& scenario, double t) {
  if (t < 0.0) throw ContractError("step_agents needs t >= 0");
  std::vector<Pose> out;
  out.reserve(scenario.agents.size());
  for (const auto& a : scenario.agents) out.push_back(agent_pose_at(a, t));
  return out;
}

OrientedRect agent_rect(const Agent& agent, const Pose& pose) { return {pose, agent.length, agent.width}; }
OrientedRect ego_rect(const ScenarioRecord& scenario, const Pose& pose) {
  return {pose, scenario.ego_length, scenario.ego_width};
}

namespace {

constexpr double kLaneWidth = 3.5;
constexpr double kRoadStart = -40.0;
constexpr double kRoadEnd = 200.0;
constexpr double kCrossExtent = 80.0;
constexpr double kChamfer = 3.0;

Polyline straight_line(Vec2 a, Vec2 b) { return Polyline({a, b}); }

// Quarter arc from `start` (heading +x) turning left (sign +1) or right (-1).
void append_arc(std::vector<Vec2>& pts, Vec2 start, double radius, double sign) {
  constexpr int kPieces = 24;
  for (int i = 1; i <= kPieces; ++i) {
    const double phi = 0.5 * std::numbers::pi * i / kPieces;
    pts.push_back({start.x + radius * std::sin(phi), start.y + sign * (radius - radius * std::cos(phi))});
  }
}

struct Layout {
  MapGeometry map;
  Polyline route;
  double cruise_speed = 0.0;  // cap for the expert's speed profiles
  double intersection_x = 0.0;
};

Layout straight_layout() {
  Layout l;
  for (double y : {-kLaneWidth, 0.0, kLaneWidth}) {
    l.map.lanes.push_back({straight_line({kRoadStart, y}, {kRoadEnd, y}), kLaneWidth});
  }
  const double half = 1.5 * kLaneWidth;
  l.map.drivable = {{kRoadStart, -half}, {kRoadEnd, -half}, {kRoadEnd, half}, {kRoadStart, half}};
  l.route = straight_line({0.0, 0.0}, {kRoadEnd, 0.0});
  return l;
}

// Two-lane ego road (ego lane y = 0 heading +x, oncoming lane y = 3.5)
// crossed by a two-lane road centered at x = xc. Concave corners are chamfered.
Layout intersection_layout(double xc, Command cmd, Rng& rng) {
  Layout l;
  l.intersection_x = xc;
  const double lo = -0.5 * kLaneWidth, hi = 1.5 * kLaneWidth;
  const double xl = xc - kLaneWidth, xr = xc + kLaneWidth;
  const double c = kChamfer;
  l.map.lanes.push_back({straight_line({kRoadStart, 0.0}, {kRoadEnd, 0.0}), kLaneWidth});
  l.map.lanes.push_back({straight_line({kRoadEnd, kLaneWidth}, {kRoadStart, kLaneWidth}), kLaneWidth});
  l.map.lanes.push_back({straight_line({xc + 0.5 * kLaneWidth, -kCrossExtent}, {xc + 0.5 * kLaneWidth, kCrossExtent}), kLaneWidth});
  l.map.lanes.push_back({straight_line({xc - 0.5 * kLaneWidth, kCrossExtent}, {xc - 0.5 * kLaneWidth, -kCrossExtent}), kLaneWidth});
  l.map.drivable = {{kRoadStart, lo}, {xl - c, lo},          {xl, lo - c},          {xl, -kCrossExtent},
                    {xr, -kCrossExtent}, {xr, lo - c},        {xr + c, lo},          {kRoadEnd, lo},
                    {kRoadEnd, hi},      {xr + c, hi},        {xr, hi + c},          {xr, kCrossExtent},
                    {xl, kCrossExtent},  {xl, hi + c},        {xl - c, hi},          {kRoadStart, hi}};
  l.map.intersection_zones.push_back({xl - c, lo - c, xr + c, hi + c});

  std::vector<Vec2> pts{{0.0, 0.0}};
  switch (cmd) {
    case Command::straight:
      pts.push_back({kRoadEnd, 0.0});
      break;
    case Command::left: {
      const double radius = 8.0;
      const Vec2 start{xc + 0.5 * kLaneWidth - radius, 0.0};
      pts.push_back(start);
      append_arc(pts, start, radius, 1.0);
      pts.push_back({xc + 0.5 * kLaneWidth, kCrossExtent});
      break;
    }
    case Command::right: {
      const double radius = 5.0;
      const Vec2 start{xc - 0.5 * kLaneWidth - radius, 0.0};
      pts.push_back(start);
      append_arc(pts, start, radius, -1.0);
      pts.push_back({xc - 0.5 * kLaneWidth, -kCrossExtent});
      break;
    }
  }
  l.route = Polyline(std::move(pts));

  if (rng.bernoulli(0.7)) {
    Signal sig;
    const double xs = xl - c - 0.5;
    sig.stop_a = {xs, lo};
    sig.stop_b = {xs, lo + kLaneWidth};
    sig.direction = {1.0, 0.0};
    const bool red_first = rng.bernoulli(0.5);
    const double switch_time = red_first ? rng.uniform(1.0, 6.0) : rng.uniform(0.5, 4.0);
    sig.schedule = {{0.0, red_first}, {switch_time, !red_first}};
    l.map.signal = sig;
  }
  return l;
}

struct AgentSlot {
  std::size_t lane;
  double lo, hi;  // admissible arc-length window along the lane centerline
};

// Rejection-samples one agent; nullopt when no admissible placement was found.
std::optional<Agent> place_agent(const ScenarioRecord& sc, const std::vector<AgentSlot>& slots, double vmax,
                                 double horizon_s, Rng& rng) {
  for (int attempt = 0; attempt < 60; ++attempt) {
    const AgentSlot& slot = slots[rng.index(slots.size())];
    const Lane& lane = sc.map.lanes[slot.lane];
    const double s = rng.uniform(slot.lo, slot.hi);
    Agent a;
    a.length = rng.uniform(4.0, 5.0);
    a.width = rng.uniform(1.8, 2.0);
    a.speed = rng.bernoulli(0.15) ? 0.0 : rng.uniform(0.0, vmax);
    const Vec2 p = lane.centerline.point_at(s);
    const Vec2 end = lane.centerline.points().back();
    if (norm(end - p) < 1.0) continue;
    a.route = straight_line(p, end);
    a.initial = a.route.pose_at(0.0);
    OrientedRect ego = ego_rect(sc, sc.ego_pose);
    ego.length += 1.0;
    ego.width += 1.0;
    if (rects_intersect(ego, agent_rect(a, a.initial))) continue;
    bool clash = false;
    for (const auto& other : sc.agents) {
      for (double t = 0.0; t <= horizon_s + 1e-9 && !clash; t += 0.25) {
        OrientedRect ra = agent_rect(a, agent_pose_at(a, t));
        ra.length += 1.0;
        clash = rects_intersect(ra, agent_rect(other, agent_pose_at(other, t)));
      }
      if (clash) break;
    }
    if (!clash) return a;
  }
  return std::nullopt;
}

// Distance travelled at time t when the speed ramps from v0 toward `target`
// at rate `accel` and then holds.
double ramp_distance(double v0, double target, double accel, double t) {
  const double dv = target - v0;
  const double ramp = std::fabs(dv) / accel;
  const double sign = dv >= 0.0 ? 1.0 : -1.0;
  if (t <= ramp) return v0 * t + 0.5 * sign * accel * t * t;
  return v0 * ramp + 0.5 * sign * accel * ramp * ramp + target * (t - ramp);
}

double stop_distance(double v0, double decel, double t) {
  const double ts = v0 / decel;
  const double tt = std::min(t, ts);
  return v0 * tt - 0.5 * decel * tt * tt;
}

Trajectory trajectory_from_profile(const Polyline& route, const std::vector<double>& s, double dt) {
  Trajectory traj;
  traj.dt = dt;
  for (double si : s) traj.poses.push_back(route.pose_at(si));
  return traj;
}

}  // namespace

ExpertResult expert_policy(const ScenarioRecord& sc, const WorldConfig& config) {
  if (config.horizon < 2) throw ContractError("horizon must be at least 2 steps");
  if (!(config.dt > 0.0)) throw ContractError("dt must be positive");
  const std::size_t T = config.horizon;
  const double dt = config.dt;
  const double v0 = sc.ego.velocity;
  double cap = v0;
  if (sc.ego.command == Command::left) cap = std::min(cap, 5.0);
  if (sc.ego.command == Command::right) cap = std::min(cap, 4.0);

  struct Profile {
    std::vector<double> s;
  };
  std::vector<Profile> profiles;
  auto sample = [&](auto&& dist) {
    Profile p;
    for (std::size_t i = 1; i <= T; ++i) p.s.push_back(dist(static_cast<double>(i) * dt));
    profiles.push_back(std::move(p));
  };
  constexpr int kTargets = 13;
  for (int k = kTargets - 1; k >= 0; --k) {
    const double target = cap * k / (kTargets - 1);
    for (double accel : {1.0, 2.0, 3.0}) {
      if (target == v0 && accel != 1.0) continue;
      sample([&](double t) { return ramp_distance(v0, target, accel, t); });
    }
  }
  std::vector<double> stops;
  for (double d = 0.5; d <= 60.0; d += 0.5) stops.push_back(d);
  if (sc.map.signal) {
    const double along = dot(sc.map.signal->stop_a - sc.ego_pose.position(), sc.map.signal->direction);
    const double d = along - 0.5 * sc.ego_length - 0.5;
    if (d > 0.0) stops.push_back(d);
  }
  for (double d : stops) {
    if (v0 <= 0.0) break;
    const double decel = v0 * v0 / (2.0 * d);
    if (decel > 6.0) continue;
    sample([&](double t) { return stop_distance(v0, decel, t); });
  }

  std::vector<std::size_t> order(profiles.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return profiles[a].s.back() > profiles[b].s.back(); });

  MetricConfig mc;
  mc.ttc_threshold = config.ttc_threshold;
  for (std::size_t idx : order) {
    Trajectory traj = trajectory_from_profile(sc.route, profiles[idx].s, dt);
    if (no_at_fault_collision(traj, sc, mc) && time_to_collision(traj, sc, mc) && traffic_light_compliance(traj, sc, mc))
      return {std::move(traj), false};
  }
  std::vector<double> hard;
  for (std::size_t i = 1; i <= T; ++i) hard.push_back(v0 > 0.0 ? stop_distance(v0, 8.0, static_cast<double>(i) * dt) : 0.0);
  return {trajectory_from_profile(sc.route, hard, dt), true};
}

ScenarioRecord generate_scenario(std::uint64_t seed, const WorldConfig& config) {
  if (config.horizon < 2) throw ContractError("horizon must be at least 2 steps");
  const double horizon_s = static_cast<double>(config.horizon) * config.dt;
  for (std::size_t attempt = 0; attempt < config.max_attempts; ++attempt) {
    Rng rng(mix_seed(seed, attempt));
    ScenarioRecord sc;
    sc.seed = seed;
    sc.family = config.family;
    sc.ego_pose = {0.0, 0.0, 0.0};
    std::vector<AgentSlot> slots;
    double vmax = 10.0;
    Layout layout;
    if (config.family == Family::intersection) {
      const double xc = rng.uniform(22.0, 34.0);
      const auto cmd = static_cast<Command>(rng.index(3));
      sc.ego.command = cmd;
      sc.ego.velocity = rng.uniform(3.0, 8.0);
      layout = intersection_layout(xc, cmd, rng);
      // Lane 0 runs from x = -40, so arc length s sits at x = s - 40.
      slots = {{0, 48.0, 110.0}, {1, 110.0, 230.0}, {2, 35.0, 90.0}, {3, 70.0, 125.0}};
    } else {
      sc.ego.command = Command::straight;
      sc.ego.velocity = rng.uniform(3.0, 9.0);
      layout = straight_layout();
      slots = {{0, 15.0, 110.0}, {1, 48.0, 110.0}, {2, 15.0, 110.0}};
      if (config.family == Family::dense_traffic) vmax = 7.0;
    }
    sc.ego.acceleration = 0.0;
    sc.map = std::move(layout.map);
    sc.route = std::move(layout.route);

    bool placed = true;
    for (std::size_t i = 0; i < config.agents && placed; ++i) {
      auto a = place_agent(sc, slots, vmax, horizon_s + config.ttc_threshold, rng);
      if (a) sc.agents.push_back(std::move(*a));
      else placed = false;
    }
    if (!placed) continue;

    auto expert = expert_policy(sc, config);
    sc.expert = std::move(expert.trajectory);
    sc.expert_flagged = expert.flagged;
    MetricConfig mc;
    mc.ttc_threshold = config.ttc_threshold;
    if (no_at_fault_collision(sc.expert, sc, mc) && drivable_area_compliance(sc.expert, sc, mc)) return sc;
  }
  throw GenerationError("scenario seed " + std::to_string(seed) + " (" + to_string(config.family) + ", " +
                        std::to_string(config.agents) + " agents): no valid layout after " +
                        std::to_string(config.max_attempts) + " attempts");
}

// ---------------------------------------------------------------- serialization

namespace {

json points_json(const std::vector<Vec2>& pts) {
  json a = json::array();
  for (const auto& p : pts) a.push_back({p.x, p.y});
  return a;
}

json pose_json(const Pose& p) { return {p.x, p.y, p.heading}; }

std::vector<Vec2> points_from(const json& j) {
  std::vector<Vec2> pts;
  for (const auto& p : j) {
    if (p.size() != 2) throw std::invalid_argument("point needs 2 coordinates");
    pts.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  }
  return pts;
}

Pose pose_from(const json& j) {
  if (j.size() != 3) throw std::invalid_argument("pose needs 3 values");
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

}  // namespace

std::string scenario_to_json(const ScenarioRecord& s) {
  json lanes = json::array();
  for (const auto& l : s.map.lanes) lanes.push_back({{"points", points_json(l.centerline.points())}, {"width", l.width}});
  json zones = json::array();
  for (const auto& z : s.map.intersection_zones) zones.push_back({z.xmin, z.ymin, z.xmax, z.ymax});
  json signal = nullptr;
  if (s.map.signal) {
    json sched = json::array();
    for (const auto& ph : s.map.signal->schedule) sched.push_back({{"start", ph.start}, {"red", ph.red}});
    signal = {{"stop_line", points_json({s.map.signal->stop_a, s.map.signal->stop_b})},
              {"direction", {s.map.signal->direction.x, s.map.signal->direction.y}},
              {"schedule", sched}};
  }
  json agents = json::array();
  for (const auto& a : s.agents) {
    agents.push_back({{"length", a.length},
                      {"width", a.width},
                      {"pose", pose_json(a.initial)},
                      {"speed", a.speed},
                      {"route", points_json(a.route.points())}});
  }
  json expert_poses = json::array();
  for (const auto& p : s.expert.poses) expert_poses.push_back(pose_json(p));
  json j = {{"schema_version", kScenarioSchemaVersion},
            {"seed", s.seed},
            {"family", to_string(s.family)},
            {"map", {{"lanes", lanes}, {"drivable", points_json(s.map.drivable)}, {"zones", zones}, {"signal", signal}}},
            {"agents", agents},
            {"ego",
             {{"pose", pose_json(s.ego_pose)},
              {"velocity", s.ego.velocity},
              {"acceleration", s.ego.acceleration},
              {"command", to_string(s.ego.command)},
              {"length", s.ego_length},
              {"width", s.ego_width}}},
            {"route", points_json(s.route.points())},
            {"expert", {{"dt", s.expert.dt}, {"poses", expert_poses}, {"flagged", s.expert_flagged}}}};
  return j.dump();
}

ScenarioRecord scenario_from_json(const std::string& line, std::size_t line_no) {
  try {
    const json j = json::parse(line);
    if (j.at("schema_version").get<int>() != kScenarioSchemaVersion)
      throw std::invalid_argument("unsupported schema_version " + j.at("schema_version").dump());
    ScenarioRecord s;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.family = family_from_string(j.at("family").get<std::string>());
    const json& m = j.at("map");
    for (const auto& l : m.at("lanes")) s.map.lanes.push_back({Polyline(points_from(l.at("points"))), l.at("width").get<double>()});
    s.map.drivable = points_from(m.at("drivable"));
    for (const auto& z : m.at("zones")) {
      if (z.size() != 4) throw std::invalid_argument("zone needs 4 values");
      s.map.intersection_zones.push_back({z.at(0).get<double>(), z.at(1).get<double>(), z.at(2).get<double>(), z.at(3).get<double>()});
    }
    if (!m.at("signal").is_null()) {
      const json& sj = m.at("signal");
      Signal sig;
      const auto line_pts = points_from(sj.at("stop_line"));
      if (line_pts.size() != 2) throw std::invalid_argument("stop_line needs 2 points");
      sig.stop_a = line_pts[0];
      sig.stop_b = line_pts[1];
      sig.direction = {sj.at("direction").at(0).get<double>(), sj.at("direction").at(1).get<double>()};
      for (const auto& ph : sj.at("schedule")) sig.schedule.push_back({ph.at("start").get<double>(), ph.at("red").get<bool>()});
      s.map.signal = sig;
    }
    for (const auto& a : j.at("agents")) {
      Agent ag;
      ag.length = a.at("length").get<double>();
      ag.width = a.at("width").get<double>();
      ag.initial = pose_from(a.at("pose"));
      ag.speed = a.at("speed").get<double>();
      ag.route = Polyline(points_from(a.at("route")));
      s.agents.push_back(std::move(ag));
    }
    const json& e = j.at("ego");
    s.ego_pose = pose_from(e.at("pose"));
    s.ego.velocity = e.at("velocity").get<double>();
    s.ego.acceleration = e.at("acceleration").get<double>();
    s.ego.command = command_from_string(e.at("command").get<std::string>());
    s.ego_length = e.at("length").get<double>();
    s.ego_width = e.at("width").get<double>();
    s.route = Polyline(points_from(j.at("route")));
    const json& x = j.at("expert");
    s.expert.dt = x.at("dt").get<double>();
    for (const auto& p : x.at("poses")) s.expert.poses.push_back(pose_from(p));
    s.expert_flagged = x.at("flagged").get<bool>();
    return s;
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& ex) {
    throw ParseError(line_no, std::string("malformed scenario record: ") + ex.what());
  }
}

void save_scenarios(std::ostream& os, const std::vector<ScenarioRecord>& scenarios) {
  for (const auto& s : scenarios) os << scenario_to_json(s) << '\n';
}

std::vector<ScenarioRecord> load_scenarios(std::istream& is) {
  std::vector<ScenarioRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(scenario_from_json(line, line_no));
  }
  return out;
}

void save_scenarios_file(const std::string& path, const std::vector<ScenarioRecord>& scenarios) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write scenario file '" + path + "'");
  save_scenarios(os, scenarios);
  if (!os) throw IoError("failed writing scenario file '" + path + "'");
}

std::vector<ScenarioRecord> load_scenarios_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read scenario file '" + path + "'");
  return load_scenarios(is);
}

}  // namespace gensel
