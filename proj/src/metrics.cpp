#include "gensel/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gensel {

namespace {

constexpr double kSlack = 1e-9;

Pose start_pose(const ScenarioRecord& sc) { return sc.ego_pose; }

// Nearest lane by centerline distance; ties go to the lowest index.
struct LaneHit {
  std::size_t lane = 0;
  PolylineProjection proj;
};

std::optional<LaneHit> nearest_lane(const MapGeometry& map, Vec2 p) {
  std::optional<LaneHit> best;
  for (std::size_t i = 0; i < map.lanes.size(); ++i) {
    const auto proj = map.lanes[i].centerline.project(p);
    if (!best || proj.distance < best->proj.distance) best = LaneHit{i, proj};
  }
  return best;
}

}  // namespace

std::vector<EgoSample> sample_ego(const Trajectory& traj, const Pose& start, int factor) {
  std::vector<EgoSample> out;
  const std::size_t n = traj.poses.size();
  out.reserve(n * factor + 1);
  Pose prev = start;
  for (std::size_t i = 0; i < n; ++i) {
    const Pose& next = traj.poses[i];
    const Vec2 vel = (1.0 / traj.dt) * (next.position() - prev.position());
    for (int j = 0; j < factor; ++j) {
      const double f = static_cast<double>(j) / factor;
      out.push_back({(static_cast<double>(i) + f) * traj.dt, lerp(prev, next, f), vel});
    }
    if (i + 1 == n) out.push_back({static_cast<double>(n) * traj.dt, next, vel});
    prev = next;
  }
  return out;
}

int no_at_fault_collision(const Trajectory& traj, const ScenarioRecord& sc, const MetricConfig& cfg) {
  for (const auto& s : sample_ego(traj, start_pose(sc), cfg.supersample)) {
    const OrientedRect ego = ego_rect(sc, s.pose);
    for (const auto& a : sc.agents) {
      if (rects_intersect(ego, agent_rect(a, agent_pose_at(a, s.t)))) return 0;
    }
  }
  return 1;
}

int drivable_area_compliance(const Trajectory& traj, const ScenarioRecord& sc, const MetricConfig& cfg) {
  for (const auto& s : sample_ego(traj, start_pose(sc), cfg.supersample)) {
    for (const Vec2& c : ego_rect(sc, s.pose).corners()) {
      if (!point_in_polygon(c, sc.map.drivable)) return 0;
    }
  }
  return 1;
}

int time_to_collision(const Trajectory& traj, const ScenarioRecord& sc, const MetricConfig& cfg) {
  for (const auto& s : sample_ego(traj, start_pose(sc), cfg.supersample)) {
    const OrientedRect ego = ego_rect(sc, s.pose);
    for (const auto& a : sc.agents) {
      const Pose ap = agent_pose_at(a, s.t);
      const Vec2 av = a.speed * unit_from_angle(ap.heading);
      if (rects_collide_within(ego, s.velocity, agent_rect(a, ap), av, 0.0, cfg.ttc_threshold)) return 0;
    }
  }
  return 1;
}

double route_progress(const Trajectory& traj, const ScenarioRecord& sc) {
  const double s0 = sc.route.project(start_pose(sc).position()).s;
  const double s1 = sc.route.project(traj.poses.back().position()).s;
  return std::max(0.0, s1 - s0);
}

double ego_progress(const Trajectory& traj, const ScenarioRecord& sc, const MetricConfig& cfg) {
  const double expert = route_progress(sc.expert, sc);
  if (expert < cfg.min_expert_progress) return 1.0;
  return std::clamp(route_progress(traj, sc) / expert, 0.0, 1.0);
}

int comfort(const Trajectory& traj, const Pose& start, const MetricConfig& cfg) {
  std::vector<Pose> p{start};
  p.insert(p.end(), traj.poses.begin(), traj.poses.end());
  const double dt = traj.dt;
  std::vector<double> speed, yaw_rate;
  for (std::size_t i = 0; i + 1 < p.size(); ++i) {
    speed.push_back(norm(p[i + 1].position() - p[i].position()) / dt);
    yaw_rate.push_back(wrap_angle(p[i + 1].heading - p[i].heading) / dt);
  }
  for (std::size_t i = 0; i < speed.size(); ++i) {
    if (std::fabs(yaw_rate[i]) > cfg.max_yaw_rate + kSlack) return 0;
    if (std::fabs(speed[i] * yaw_rate[i]) > cfg.max_lat_accel + kSlack) return 0;
  }
  std::vector<double> accel;
  for (std::size_t i = 0; i + 1 < speed.size(); ++i) accel.push_back((speed[i + 1] - speed[i]) / dt);
  for (double a : accel) {
    if (std::fabs(a) > cfg.max_lon_accel + kSlack) return 0;
  }
  for (std::size_t i = 0; i + 1 < accel.size(); ++i) {
    if (std::fabs((accel[i + 1] - accel[i]) / dt) > cfg.max_jerk + kSlack) return 0;
  }
  return 1;
}

int driving_direction_compliance(const Trajectory& traj, const ScenarioRecord& sc, const MetricConfig& cfg) {
  for (const auto& s : sample_ego(traj, start_pose(sc), cfg.supersample)) {
    const Vec2 p = s.pose.position();
    if (sc.map.in_intersection(p)) continue;
    const double speed = norm(s.velocity);
    if (speed <= cfg.min_moving_speed) continue;
    const auto hit = nearest_lane(sc.map, p);
    if (!hit) continue;
    const Lane& lane = sc.map.lanes[hit->lane];
    if (hit->proj.distance > 0.5 * lane.width + kSlack) continue;
    if (dot(s.velocity, lane.centerline.segment_direction(hit->proj.segment)) < 0.0) return 0;
  }
  return 1;
}

int lane_keeping(const Trajectory& traj, const ScenarioRecord& sc, const MetricConfig& cfg) {
  for (const auto& s : sample_ego(traj, start_pose(sc), cfg.supersample)) {
    const Vec2 p = s.pose.position();
    if (sc.map.in_intersection(p)) continue;
    const auto hit = nearest_lane(sc.map, p);
    if (!hit) continue;
    if (hit->proj.distance > 0.5 * sc.map.lanes[hit->lane].width + kSlack) return 0;
  }
  return 1;
}

int traffic_light_compliance(const Trajectory& traj, const ScenarioRecord& sc, const MetricConfig& cfg) {
  if (!sc.map.signal) return 1;
  const Signal& sig = *sc.map.signal;
  const Vec2 along = sig.stop_b - sig.stop_a;
  const double seg_len2 = dot(along, along);
  const auto samples = sample_ego(traj, start_pose(sc), cfg.supersample);
  auto front = [&](const Pose& p) { return p.position() + (0.5 * sc.ego_length) * unit_from_angle(p.heading); };
  for (std::size_t i = 0; i + 1 < samples.size(); ++i) {
    const Vec2 fa = front(samples[i].pose), fb = front(samples[i + 1].pose);
    const double da = dot(fa - sig.stop_a, sig.direction);
    const double db = dot(fb - sig.stop_a, sig.direction);
    if (!(da < 0.0 && db >= 0.0)) continue;
    const double f = -da / (db - da);
    const Vec2 cross_pt = fa + f * (fb - fa);
    const double u = dot(cross_pt - sig.stop_a, along) / seg_len2;
    if (u < 0.0 || u > 1.0) continue;
    const double tc = samples[i].t + f * (samples[i + 1].t - samples[i].t);
    if (sig.red_at(tc)) return 0;
  }
  return 1;
}

double pdms_aggregate(const MetricReport& r, const MetricConfig& cfg) {
  double hard = static_cast<double>(r.nc * r.dac);
  if (cfg.extended) hard *= static_cast<double>(r.ddc * r.lk * r.tlc);
  const PdmsWeights& w = cfg.weights;
  return hard * (w.progress * r.ep + w.ttc * r.ttc + w.comfort * r.comf) / (w.progress + w.ttc + w.comfort);
}

MetricReport evaluate_trajectory(const Trajectory& traj, const ScenarioRecord& sc, const MetricConfig& cfg) {
  MetricReport r;
  r.nc = no_at_fault_collision(traj, sc, cfg);
  r.dac = drivable_area_compliance(traj, sc, cfg);
  r.ttc = time_to_collision(traj, sc, cfg);
  r.comf = comfort(traj, sc.ego_pose, cfg);
  r.ep = ego_progress(traj, sc, cfg);
  r.ddc = driving_direction_compliance(traj, sc, cfg);
  r.lk = lane_keeping(traj, sc, cfg);
  r.tlc = traffic_light_compliance(traj, sc, cfg);
  r.pdms = pdms_aggregate(r, cfg);
  return r;
}

ObjectiveScores objectives_from_report(const MetricReport& r) {
  return {static_cast<double>(std::min(r.nc, r.ttc)), static_cast<double>(r.comf), r.ep,
          static_cast<double>(r.dac * r.ddc * r.lk * r.tlc)};
}

double objective_aggregate(const ObjectiveScores& s, const MetricConfig& cfg) {
  const PdmsWeights& w = cfg.weights;
  return s.safety * s.compliance * (w.progress * s.efficiency + w.ttc * s.safety + w.comfort * s.comfort) /
         (w.progress + w.ttc + w.comfort);
}

}  // namespace gensel
