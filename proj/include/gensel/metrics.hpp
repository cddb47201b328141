#pragma once

// Rule-based trajectory scoring. Every check samples the trajectory with the
// scenario's start pose prepended, linearly interpolating `supersample`
// instants per waypoint interval. All sub-metrics are pass/fail except
// progress.

#include <vector>

#include "gensel/world.hpp"

namespace gensel {

struct PdmsWeights {
  double progress = 5.0;
  double ttc = 5.0;
  double comfort = 2.0;
};

struct MetricConfig {
  int supersample = 10;
  double ttc_threshold = 1.0;  // seconds, propagated exactly (no time stepping)
  double max_lon_accel = 4.0;  // m/s^2
  double max_lat_accel = 4.0;  // m/s^2
  double max_jerk = 8.0;       // m/s^3
  double max_yaw_rate = 1.0;   // rad/s
  double min_moving_speed = 0.5;     // below this, direction checks are skipped
  double min_expert_progress = 0.5;  // below this, progress is scored 1
  PdmsWeights weights;
  bool extended = true;  // multiply direction, lane and light compliance into the hard prefix
};

struct MetricReport {
  int nc = 1;
  int dac = 1;
  int ttc = 1;
  int comf = 1;
  double ep = 1.0;
  int ddc = 1;
  int lk = 1;
  int tlc = 1;
  double pdms = 1.0;
};

/// One instant of the sampled ego motion.
struct EgoSample {
  double t = 0.0;
  Pose pose;
  Vec2 velocity;  // displacement rate of the enclosing waypoint interval
};

/// Start pose plus T waypoints, `factor` samples per interval, final waypoint
/// included: T * factor + 1 samples.
std::vector<EgoSample> sample_ego(const Trajectory& traj, const Pose& start, int factor);

int no_at_fault_collision(const Trajectory& traj, const ScenarioRecord& sc, const MetricConfig& cfg = {});
int drivable_area_compliance(const Trajectory& traj, const ScenarioRecord& sc, const MetricConfig& cfg = {});
int time_to_collision(const Trajectory& traj, const ScenarioRecord& sc, const MetricConfig& cfg = {});
double ego_progress(const Trajectory& traj, const ScenarioRecord& sc, const MetricConfig& cfg = {});
int comfort(const Trajectory& traj, const Pose& start, const MetricConfig& cfg = {});
int driving_direction_compliance(const Trajectory& traj, const ScenarioRecord& sc, const MetricConfig& cfg = {});
int lane_keeping(const Trajectory& traj, const ScenarioRecord& sc, const MetricConfig& cfg = {});
int traffic_light_compliance(const Trajectory& traj, const ScenarioRecord& sc, const MetricConfig& cfg = {});

/// Route arc length reached by the final pose, measured from the start pose.
double route_progress(const Trajectory& traj, const ScenarioRecord& sc);

/// NC * DAC [* DDC * LK * TLC] * (w_ep EP + w_ttc TTC + w_c Comf) / (w_ep + w_ttc + w_c)
double pdms_aggregate(const MetricReport& r, const MetricConfig& cfg = {});

MetricReport evaluate_trajectory(const Trajectory& traj, const ScenarioRecord& sc, const MetricConfig& cfg = {});

/// The four objectives the evaluator learns to predict, each in [0, 1]:
/// safety = min(NC, TTC), comfort, efficiency = EP, compliance = DAC*DDC*LK*TLC.
struct ObjectiveScores {
  double safety = 0.0;
  double comfort = 0.0;
  double efficiency = 0.0;
  double compliance = 0.0;
};
ObjectiveScores objectives_from_report(const MetricReport& r);
/// The PDMS composition evaluated on objective scores.
double objective_aggregate(const ObjectiveScores& s, const MetricConfig& cfg = {});

}  // namespace gensel
