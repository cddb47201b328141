// Acceptance run: one PASS/FAIL line per criterion.
//
// Usage: acceptance --config configs/desk.json [--out acceptance.txt] [--known-failure 9]
// Exit status is 0 when every criterion passes or fails only where listed
// with --known-failure; a listed criterion that starts passing is reported.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gensel/nn.hpp"
#include "gensel/pipeline.hpp"
#include "support/gradcheck.hpp"
#include "support/metric_oracles.hpp"
#include "support/op_gradients.hpp"
#include "support/random_tensor.hpp"
#include "support/scenes.hpp"

using namespace gensel;
using namespace gensel::testkit;

namespace {

// Collects failed sub-checks of one criterion plus a short measurement line.
struct Check {
  std::vector<std::string> failures;
  std::ostringstream detail;

  void expect(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
  bool passed() const { return failures.empty(); }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

bool identical(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

Trajectory line(double vx, double vy, std::size_t T) {
  Trajectory t;
  for (std::size_t i = 1; i <= T; ++i) t.poses.push_back({vx * 0.5 * i, vy * 0.5 * i, std::atan2(vy, vx)});
  return t;
}

FatgConfig toy_fatg() {
  FatgConfig cfg;
  cfg.grid = {8, 8, 16.0, 16.0, 4};
  cfg.horizon = 4;
  cfg.heads = 2;
  return cfg;
}

AnchorVocabulary toy_vocab() {
  AnchorVocabulary v;
  v.anchors = {line(3.0, -0.8, 4), line(5.0, 0.6, 4)};
  return v;
}

EgoStatus toy_ego(double v) {
  EgoStatus e;
  e.velocity = v;
  e.command = Command::straight;
  return e;
}

// ---- 1 ----

void gradients(Check& c) {
  double worst_op = 0, worst_fatg = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    check_all_ops(seed, [&](const std::string& name, const GradCheckResult& r) {
      worst_op = std::max(worst_op, r.max_rel_error);
      c.expect(r.max_rel_error < 1e-4, name + " seed " + std::to_string(seed));
    });
    ParamStore store(seed);
    Fatg fatg(store, toy_fatg());
    Rng rng(100 + seed);
    const Tensor grid = random_tensor({8, 8, 4}, rng, -1, 1, true);
    const auto vocab = toy_vocab();
    const EgoStatus e = toy_ego(rng.uniform(2, 9));
    auto loss = [&] {
      const auto set = fatg.generate_candidates(grid, vocab, e);
      Tensor total = Tensor::scalar(0.0);
      for (std::size_t n = 0; n < set.candidates.size(); ++n) {
        total = add(total, weighted_sum(set.candidates[n].offsets, seed * 10 + n));
        total = add(total, weighted_sum(set.future.variants[n], seed * 10 + n + 5));
      }
      return total;
    };
    std::vector<Tensor> leaves{grid};
    for (const auto& [path, t] : store.params()) leaves.push_back(t);
    const auto r = gradcheck(loss, leaves, 1e-5, 4);
    worst_fatg = std::max(worst_fatg, r.max_rel_error);
    c.expect(r.max_rel_error < 1e-4, "composed generator seed " + std::to_string(seed));
  }
  c.detail << "max rel err ops " << fmt("%.2e", worst_op) << ", composed " << fmt("%.2e", worst_fatg) << " (< 1e-4, 20 seeds)";
}

// ---- 2 ----

void injection(Check& c) {
  Rng rng(2);
  double worst_sum = 0, worst_mass = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto fp = bilinear_footprint(rng.uniform(-5, 70), rng.uniform(-5, 70));
    double s = 0;
    for (double w : fp.weight) s += w;
    worst_sum = std::max(worst_sum, std::fabs(s - 1.0));
  }
  c.expect(worst_sum <= 1e-12, "bilinear weights sum");
  const GridSpec g = toy_fatg().grid;
  bool zero_identity = true;
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor grid = random_tensor({8, 8, 4}, rng, -1, 1, false);
    Trajectory t;
    const std::size_t T = 1 + rng.index(8);
    for (std::size_t i = 0; i < T; ++i) t.poses.push_back({rng.uniform(0, 13.9), rng.uniform(-7.9, 5.9), 0});
    zero_identity = zero_identity && identical(inject_action(grid, Tensor::zeros({4}), t, g), grid);
    const Tensor token = random_tensor({4}, rng, -2, 2, false);
    const Tensor out = inject_action(grid, token, t, g);
    for (std::size_t ch = 0; ch < 4; ++ch) {
      double mass = 0;
      for (std::size_t i = 0; i < 64; ++i) mass += out.data()[i * 4 + ch] - grid.data()[i * 4 + ch];
      worst_mass = std::max(worst_mass, std::fabs(mass - static_cast<double>(T) * token[ch]));
    }
  }
  c.expect(zero_identity, "zero token identity");
  c.expect(worst_mass <= 1e-12, "injected mass");
  c.detail << "weight-sum err " << fmt("%.1e", worst_sum) << ", mass err " << fmt("%.1e", worst_mass)
           << " (<= 1e-12), zero token identity " << (zero_identity ? "exact" : "broken");
}

// ---- 3 ----

void projection(Check& c) {
  const GridSpec g;
  const auto a = project_to_bev(0, 0, g), b = project_to_bev(32, 0, g), d = project_to_bev(16, -16, g);
  c.expect(a.h == 0.0 && a.w == 32.0, "(0,0) -> (0,32)");
  c.expect(b.h == 32.0 && b.w == 32.0, "(32,0) -> (32,32)");
  c.expect(d.h == 16.0 && d.w == 16.0, "(16,-16) -> (16,16)");
  const GridSpec odd{48, 40, 60.0, 37.0, 8};
  Rng rng(1);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const double h = rng.uniform(0, 47), w = rng.uniform(0, 39);
    const Vec2 m = bev_to_metric(h, w, odd);
    const auto back = project_to_bev(m.x, m.y, odd);
    worst = std::max({worst, std::fabs(back.h - h), std::fabs(back.w - w)});
  }
  c.expect(worst < 1e-12, "round trip");
  c.detail << "3 worked examples exact, round-trip err " << fmt("%.1e", worst) << " (< 1e-12)";
}

// ---- 4 ----

void wam_structure(Check& c) {
  ParamStore store(2);
  Fatg fatg(store, toy_fatg());
  Rng rng(8);
  const Tensor grid = random_tensor({8, 8, 4}, rng, -1, 1, false);
  const auto s0 = fatg.build_scene_variants(grid, toy_vocab(), toy_ego(5.0));
  const auto roll = fatg.wam_rollout(s0);
  c.expect(roll.size() == 2 && roll[0].t == 2.0 && roll[1].t == 4.0, "rollout times");
  for (std::size_t n = 0; n < s0.variants.size() && roll.size() == 2; ++n) {
    c.expect(identical(roll[0].variants[n], fatg.wam_step(s0.variants[n])), "first step");
    c.expect(identical(roll[1].variants[n], fatg.wam_step(fatg.wam_step(s0.variants[n]))), "second step");
  }
  fatg.zero_mamba_outputs(store);
  for (int i = 0; i < 5; ++i) {
    const Tensor z = random_tensor({64, 4}, rng, -3, 3, false);
    c.expect(identical(fatg.temporal_stage(z), z), "zeroed temporal stage identity");
  }
  c.detail << "zeroed temporal stage identity and 2-step rollout composition " << (c.passed() ? "bit-exact" : "broken");
}

// ---- 5 ----

void selective_scan_checks(Check& c) {
  Rng rng(11);
  const std::size_t L = 12, E = 3, N = 2;
  const double dl = 0.3, dd = 0.7, bv = 0.9, cv = -1.3;
  const Tensor x = random_tensor({L, E}, rng, -1, 1, false);
  const Tensor a = random_tensor({E, N}, rng, -2, -0.1, false);
  const Tensor y = selective_scan(x, Tensor::full({L, E}, dl), a, Tensor::full({L, N}, bv), Tensor::full({L, N}, cv),
                                  Tensor::full({E}, dd));
  double worst = 0;
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t e = 0; e < E; ++e) {
      double expected = dd * x.data()[l * E + e];
      for (std::size_t n = 0; n < N; ++n) {
        const double decay = std::exp(dl * a.data()[e * N + n]);
        for (std::size_t i = 0; i <= l; ++i)
          expected += cv * dl * bv * std::pow(decay, static_cast<double>(l - i)) * x.data()[i * E + e];
      }
      worst = std::max(worst, std::fabs(y.data()[l * E + e] - expected));
    }
  c.expect(worst <= 1e-10, "closed form");

  // Suffix perturbation, for the raw scan and for a full block.
  const Tensor delta = random_tensor({L, E}, rng, 0.05, 0.8, false), b = random_tensor({L, N}, rng, -1, 1, false);
  const Tensor cc = random_tensor({L, N}, rng, -1, 1, false), d = random_tensor({E}, rng, -1, 1, false);
  const Tensor base = selective_scan(x, delta, a, b, cc, d);
  bool causal = true;
  for (std::size_t j = 0; j < L; ++j) {
    Tensor xp = x.detach();
    for (std::size_t l = j; l < L; ++l) xp.data_mut()[l * E + l % E] += 0.5;
    const Tensor yp = selective_scan(xp, delta, a, b, cc, d);
    for (std::size_t i = 0; i < j * E; ++i) causal = causal && yp.data()[i] == base.data()[i];
    bool moved = false;
    for (std::size_t i = j * E; i < L * E; ++i) moved = moved || yp.data()[i] != base.data()[i];
    causal = causal && moved;
  }
  ParamStore store(5);
  nn::MambaConfig mc;
  mc.d_model = 6;
  mc.d_state = 4;
  const nn::MambaBlock block(store, "m", mc);
  const Tensor bx = random_tensor({10, 6}, rng, -1, 1, false);
  const Tensor bbase = block(bx);
  for (std::size_t j = 0; j < 10; ++j) {
    Tensor xp = bx.detach();
    for (std::size_t l = j; l < 10; ++l) xp.data_mut()[l * 6 + l % 6] += 0.3;
    const Tensor yp = block(xp);
    for (std::size_t i = 0; i < j * 6; ++i) causal = causal && yp.data()[i] == bbase.data()[i];
  }
  c.expect(causal, "suffix causality");
  c.detail << "closed-form err " << fmt("%.1e", worst) << " (<= 1e-10), suffix causality " << (causal ? "exact" : "broken");
}

// ---- 6 ----

void sentinels(Check& c) {
  VloeConfig cfg;
  cfg.C = 6;
  cfg.grid_h = cfg.grid_w = 16;
  cfg.horizon = 4;
  cfg.heads = 2;
  cfg.d_lm = 16;
  ParamStore store(4);
  Vloe vloe(store, cfg);
  c.expect(vloe.scene_token_count() == 16, "N_s = 16");
  Rng rng(7);
  const Tensor scene = random_tensor({16, 6}, rng, -1, 1, false), traj = random_tensor({4, 6}, rng, -1, 1, false);
  std::size_t checked_positions = 0;
  for (Command cmd : {Command::straight, Command::left, Command::right}) {
    const auto ids = vloe.prompt_ids(cmd);
    std::size_t text = 0;
    for (int id : ids) text += id != kSceneSentinel && id != kTrajSentinel;
    const auto seq = vloe.assemble(cmd, scene, traj);
    c.expect(seq.length() == text + 16 + 4 + 1, "length arithmetic");
    std::size_t n_scene = 0, n_traj = 0;
    for (const auto& it : seq.items) {
      n_scene += it.kind == SequenceItem::kScene;
      n_traj += it.kind == SequenceItem::kTraj;
      if (it.kind == SequenceItem::kText) c.expect(it.index <= 64, "reserved id in sequence");
    }
    c.expect(n_scene == 16 && n_traj == 4, "slot counts");
    c.expect(seq.score_position == seq.length() - 1, "score token last");

    const Tensor base = vloe.critic_hidden(seq);
    const std::size_t L = seq.length(), D = cfg.d_lm;
    for (std::size_t i = 0; i + 1 < L; ++i) {
      ReasoningSequence changed = seq;
      for (std::size_t j = i + 1; j < L; ++j) changed.items[j] = {SequenceItem::kText, (j * 7 + i) % 64};
      const Tensor h = vloe.critic_hidden(changed);
      bool same = true;
      for (std::size_t k = 0; k < (i + 1) * D; ++k) same = same && h.data()[k] == base.data()[k];
      c.expect(same, "causal mask at position " + std::to_string(i));
      ++checked_positions;
    }
  }
  c.detail << "no reserved ids, length = text + 16 + 4 + 1, causal perturbation exact at " << checked_positions
           << " positions";
}

// ---- 7 ----

void metric_oracles(Check& c) {
  int disagreements = 0;
  double worst_ep = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    WorldConfig cfg;
    cfg.family = static_cast<Family>(seed % 3);
    cfg.agents = cfg.family == Family::straight_road ? 2 : (cfg.family == Family::intersection ? 4 : 8);
    const auto sc = generate_scenario(seed, cfg);
    const Trajectory t = perturbed_trajectory(sc, seed);
    const MetricReport r = evaluate_trajectory(t, sc);
    const int binaries[7][2] = {{r.nc, oracle::nc(t, sc)},       {r.dac, oracle::dac(t, sc)},
                                {r.ttc, oracle::ttc(t, sc)},     {r.comf, oracle::comf(t, sc.ego_pose)},
                                {r.ddc, oracle::ddc(t, sc)},     {r.lk, oracle::lk(t, sc)},
                                {r.tlc, oracle::tlc(t, sc)}};
    for (const auto& p : binaries) disagreements += p[0] != p[1];
    const double ep_err = std::fabs(r.ep - oracle::ep(t, sc));
    worst_ep = std::max(worst_ep, ep_err);
    disagreements += ep_err > 1e-6;
  }
  c.expect(disagreements == 0, std::to_string(disagreements) + " oracle disagreements");
  MetricReport zero_nc;
  zero_nc.nc = 0;
  MetricReport ep08;
  ep08.ep = 0.8;
  const double w1 = pdms_aggregate(zero_nc), w2 = pdms_aggregate(ep08), w3 = pdms_aggregate(MetricReport{});
  const double worst_pdms = std::max({std::fabs(w1), std::fabs(w2 - 11.0 / 12.0), std::fabs(w3 - 1.0)});
  c.expect(worst_pdms <= 1e-12, "pdms worked examples");
  c.detail << disagreements << " disagreements over 200 pairs x 8 metrics (max EP err " << fmt("%.1e", worst_ep)
           << "), pdms examples err " << fmt("%.1e", worst_pdms);
}

// ---- 8 ----

void monotone_selection(Check& c) {
  Rng rng(10);
  int mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> agg(1 + rng.index(20));
    for (auto& a : agg) a = std::round(rng.uniform() * 10) / 10;
    const double p = rng.uniform(0.2, 5.0), s = rng.uniform(0.1, 10), o = rng.uniform(-5, 5);
    std::vector<double> mapped;
    for (double a : agg) mapped.push_back(s * std::pow(a + 1.0, p) + o + std::atan(a));
    mismatches += select_candidate(agg) != select_candidate(mapped);
  }
  c.expect(mismatches == 0, "monotone maps");
  c.detail << mismatches << "/100 monotone-map index mismatches";
}

// ---- 9, 10: trained desk-scale pipeline ----

struct Trained {
  double seconds = 0;
  double loss_ratio = 0, loss_before = 0, loss_after = 0;
  double mse_untrained = 0, mse_trained = 0;
  Summary vloe, random, oracle, bypass;
  double oracle_max_regret = 0;
};

Trained train_and_evaluate(const RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  Trained r;
  const auto all = generate_dataset(cfg, 100, cfg.data_seed, cfg.threads);
  const auto train = training_split(all), held = heldout_split(all);
  const auto vocab = fit_anchor_vocabulary(cfg, train, cfg.anchors);
  Model m(cfg);
  const std::vector<ScenarioRecord> probe(train.begin(), train.begin() + std::min<std::size_t>(10, train.size()));
  const LossTerms p0 = probe_loss(m, probe, vocab);
  train_model(m, train, vocab);
  const LossTerms p1 = probe_loss(m, probe, vocab);
  r.loss_before = p0.total(cfg.training);
  r.loss_after = p1.total(cfg.training);
  r.loss_ratio = r.loss_after / r.loss_before;

  // Untrained head: the trained generator with the evaluator at initialization.
  Model untrained(cfg);
  for (const auto& [path, t] : m.store.params())
    if (path.rfind("fatg.", 0) == 0) untrained.store.assign(path, std::vector<double>(t.data().begin(), t.data().end()));
  r.mse_untrained = probe_loss(untrained, held, vocab).score;
  r.mse_trained = probe_loss(m, held, vocab).score;

  auto run = [&](Selector s, bool bypass) { return evaluate_episodes(m, held, vocab, {s, bypass}, cfg.threads); };
  r.vloe = summarize(run(Selector::vloe, false)).at(0);
  r.random = summarize(run(Selector::random, false)).at(0);
  r.bypass = summarize(run(Selector::vloe, true)).at(0);
  const auto oracle_eps = run(Selector::oracle, false);
  r.oracle = summarize(oracle_eps).at(0);
  for (const auto& e : oracle_eps) r.oracle_max_regret = std::max(r.oracle_max_regret, std::fabs(e.regret));
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

void learning_signal(Check& c, const Trained& t) {
  const double mse_ratio = t.mse_trained > 0 ? t.mse_untrained / t.mse_trained : INFINITY;
  c.expect(t.loss_ratio <= 0.5, "total loss reduction below 50%");
  c.expect(mse_ratio >= 10.0, "held-out score MSE ratio below 10x");
  c.expect(t.vloe.regret < t.random.regret, "VLoE regret not below random");
  c.detail << "loss " << fmt("%.4f", t.loss_before) << " -> " << fmt("%.4f", t.loss_after) << " ("
           << fmt("%.1f", 100 * (1 - t.loss_ratio)) << "% reduction, need >= 50); score MSE " << fmt("%.4f", t.mse_untrained)
           << " -> " << fmt("%.4f", t.mse_trained) << " (" << fmt("%.2f", mse_ratio) << "x, need >= 10); regret vloe "
           << fmt("%.2f", 100 * t.vloe.regret) << " vs random " << fmt("%.2f", 100 * t.random.regret);
}

void ablation(Check& c, const Trained& t) {
  c.expect(t.vloe.pdms >= t.bypass.pdms, "future branch disabled scores higher");
  c.expect(t.vloe.pdms >= t.random.pdms, "random selection scores higher");
  c.detail << "pdms full " << fmt("%.3f", 100 * t.vloe.pdms) << ", no future branch " << fmt("%.3f", 100 * t.bypass.pdms)
           << ", random " << fmt("%.3f", 100 * t.random.pdms) << " (oracle " << fmt("%.3f", 100 * t.oracle.pdms) << ")";
}

// ---- 11 ----

const char* kSmallRun = R"({
  "grid": {"H": 8, "W": 8, "L_x": 48, "L_y": 32, "C": 6},
  "horizon": {"T": 4, "dt": 0.5},
  "anchors": {"N": 3},
  "model": {"heads": 2, "ffn_mult": 2, "d_lm": 8, "lm_heads": 2, "metric_queries": 2},
  "training": {"generator_steps": 6, "evaluator_steps": 4, "evaluator_batch": 2}
})";

struct RunFiles {
  std::string scenarios, anchors, checkpoint, log, results, report;
};

RunFiles end_to_end(std::size_t threads) {
  RunConfig cfg = parse_run_config(kSmallRun);
  cfg.threads = threads;
  RunFiles f;
  const auto all = generate_dataset(cfg, 12, cfg.data_seed, threads);
  std::ostringstream os;
  save_scenarios(os, all);
  f.scenarios = os.str();
  const auto vocab = fit_anchor_vocabulary(cfg, training_split(all), cfg.anchors);
  os.str("");
  save_anchors(os, vocab);
  f.anchors = os.str();
  Model m(cfg);
  std::ostringstream log;
  train_model(m, training_split(all), vocab, &log);
  f.log = log.str();
  os.str("");
  m.store.save(os);
  f.checkpoint = os.str();
  const auto eps = evaluate_episodes(m, heldout_split(all), vocab, {Selector::vloe, false}, threads);
  os.str("");
  write_results(os, eps);
  f.results = os.str();
  f.report = format_report(summarize(eps));
  return f;
}

void determinism(Check& c) {
  const RunFiles a = end_to_end(1), b = end_to_end(3), again = end_to_end(1);
  auto same = [&](const std::string& name, const std::string& x, const std::string& y, const std::string& z) {
    c.expect(!x.empty() && x == y && x == z, name + " differs");
  };
  same("scenarios", a.scenarios, b.scenarios, again.scenarios);
  same("anchors", a.anchors, b.anchors, again.anchors);
  same("checkpoint", a.checkpoint, b.checkpoint, again.checkpoint);
  same("loss log", a.log, b.log, again.log);
  same("results", a.results, b.results, again.results);
  same("report", a.report, b.report, again.report);
  c.detail << "scenario, anchor, checkpoint, loss-log, results and report bytes "
           << (c.passed() ? "identical" : "differ") << " across runs at 1, 3 and 1 threads";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string config_path, out_path;
  std::vector<int> known;
  app.add_option("--config", config_path, "run configuration for the trained-pipeline criteria")->required()->check(CLI::ExistingFile);
  app.add_option("--out", out_path, "also write the criterion lines here");
  app.add_option("--known-failure", known, "criteria whose failure does not fail the run");
  CLI11_PARSE(app, argc, argv);
  const std::set<int> allowed(known.begin(), known.end());

  const RunConfig cfg = load_run_config(config_path);
  std::optional<Trained> trained;
  auto pipeline = [&]() -> const Trained& {
    if (!trained) trained = train_and_evaluate(cfg);
    return *trained;
  };

  struct Criterion {
    int id;
    const char* name;
    std::function<void(Check&)> run;
  };
  const std::vector<Criterion> criteria{
      {1, "gradient correctness", gradients},
      {2, "injection algebra", injection},
      {3, "grid projection", projection},
      {4, "world-model structure", wam_structure},
      {5, "selective scan", selective_scan_checks},
      {6, "sentinel mechanics", sentinels},
      {7, "metric oracles", metric_oracles},
      {8, "selection contract",
       [&](Check& c) {
         monotone_selection(c);
         const Trained& t = pipeline();
         c.expect(t.oracle_max_regret == 0.0, "oracle regret nonzero");
         c.detail << ", oracle max regret " << fmt("%.3g", t.oracle_max_regret) << " over "
                  << t.oracle.episodes << " episodes";
       }},
      {9, "learning signal", [&](Check& c) { learning_signal(c, pipeline()); }},
      {10, "ablation direction", [&](Check& c) { ablation(c, pipeline()); }},
      {11, "determinism", determinism},
  };

  std::ostringstream lines;
  int unexpected = 0;
  for (const auto& cr : criteria) {
    Check c;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      cr.run(c);
    } catch (const std::exception& e) {
      c.failures.push_back(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ostringstream line;
    line << (c.passed() ? "PASS" : "FAIL") << " [" << cr.id << "] " << cr.name << ": " << c.detail.str();
    if (!c.passed()) {
      line << " | failed:";
      for (std::size_t i = 0; i < c.failures.size() && i < 5; ++i) line << " " << c.failures[i] << ";";
      if (c.failures.size() > 5) line << " ... (" << c.failures.size() << " total)";
      if (allowed.count(cr.id)) line << " [known failure]";
      else ++unexpected;
    } else if (allowed.count(cr.id)) {
      line << " [listed as known failure but passed]";
    }
    line << " (" << fmt("%.1f", secs) << " s)";
    std::cout << line.str() << std::endl;
    lines << line.str() << "\n";
  }
  if (trained) std::cout << "trained pipeline took " << fmt("%.1f", trained->seconds) << " s" << std::endl;
  if (!out_path.empty()) {
    std::ofstream f(out_path);
    f << lines.str();
  }
  return unexpected == 0 ? 0 : 1;
}
