#include "gensel/pipeline.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "gensel/bev.hpp"
#include "gensel/errors.hpp"
#include "gensel/rng.hpp"

namespace gensel {

using nlohmann::json;

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& body) {
  if (n == 0) return;
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, n));
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto run = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        body(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    run();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---- data ----

Family family_for_seed(std::uint64_t seed) { return static_cast<Family>(seed % 3); }

std::vector<ScenarioRecord> generate_dataset(const RunConfig& cfg, std::size_t count, std::uint64_t seed, std::size_t threads) {
  std::vector<ScenarioRecord> out(count);
  parallel_for(count, threads, [&](std::size_t i) {
    const std::uint64_t s = seed + i;
    out[i] = generate_scenario(s, cfg.world(family_for_seed(s)));
  });
  return out;
}

bool is_training_seed(std::uint64_t seed) { return seed % 2 == 0; }

std::vector<ScenarioRecord> training_split(const std::vector<ScenarioRecord>& all) {
  std::vector<ScenarioRecord> out;
  for (const auto& s : all)
    if (is_training_seed(s.seed)) out.push_back(s);
  return out;
}

std::vector<ScenarioRecord> heldout_split(const std::vector<ScenarioRecord>& all) {
  std::vector<ScenarioRecord> out;
  for (const auto& s : all)
    if (!is_training_seed(s.seed)) out.push_back(s);
  return out;
}

AnchorVocabulary fit_anchor_vocabulary(const RunConfig& cfg, const std::vector<ScenarioRecord>& scenarios, std::size_t n) {
  if (n > scenarios.size())
    throw ConfigError("cannot fit " + std::to_string(n) + " anchors to " + std::to_string(scenarios.size()) + " scenarios");
  std::vector<Trajectory> experts;
  for (const auto& s : scenarios) experts.push_back(s.expert);
  return fit_anchors(experts, n, cfg.kmeans_iters, cfg.data_seed);
}

Tensor scene_features(const ScenarioRecord& sc, double t, const GridSpec& g) {
  return encode_bev_features(render_semantic_bev(sc, t, g), g.C).features;
}

// ---- model ----

Model::Model(const RunConfig& c) : cfg(c), store(c.model_seed), fatg(store, c.fatg()), vloe(store, c.vloe()) {}

CandidateSet generate_candidate_set(const Model& m, const Tensor& grid, const AnchorVocabulary& vocab, const EgoStatus& ego,
                                    bool bypass_wam) {
  if (!bypass_wam) return m.fatg.generate_candidates(grid, vocab, ego);
  if (vocab.size() == 0) throw ContractError("anchor vocabulary is empty");
  CandidateSet out;
  out.future.t = m.cfg.rollout_steps.back();
  for (std::size_t n = 0; n < vocab.size(); ++n) {
    const Tensor token = m.fatg.encode_action_token(vocab.anchors[n], ego);
    const Tensor variant = inject_action(grid, token, vocab.anchors[n], m.cfg.grid);
    out.candidates.push_back(m.fatg.decode_trajectory(token, variant, variant, vocab.anchors[n], n));
    out.current.variants.push_back(variant);
    out.current.anchor_ids.push_back(n);
    out.future.variants.push_back(variant);
    out.future.anchor_ids.push_back(n);
  }
  return out;
}

// ---- training ----

namespace {

struct GeneratorSample {
  Tensor grid;
  std::vector<Tensor> futures;  // scene features at each rollout time
  std::size_t anchor = 0;
  Tensor target_offsets;  // expert minus anchor, [T, 3]
};

GeneratorSample make_generator_sample(const RunConfig& cfg, const ScenarioRecord& sc, const AnchorVocabulary& vocab) {
  GeneratorSample s;
  s.grid = scene_features(sc, 0.0, cfg.grid);
  for (double t : cfg.rollout_steps) s.futures.push_back(scene_features(sc, t, cfg.grid));
  s.anchor = assign_anchor(sc.expert, vocab);
  const Trajectory& a = vocab.anchors[s.anchor];
  std::vector<double> off;
  for (std::size_t i = 0; i < a.poses.size(); ++i) {
    const Pose& e = sc.expert.poses[i];
    off.push_back(e.x - a.poses[i].x);
    off.push_back(e.y - a.poses[i].y);
    off.push_back(wrap_angle(e.heading - a.poses[i].heading));
  }
  s.target_offsets = Tensor({a.poses.size(), 3}, std::move(off));
  return s;
}

// Returns (weighted total, per-term values).
std::pair<Tensor, LossTerms> generator_loss(const Model& m, const GeneratorSample& s, const ScenarioRecord& sc,
                                            const AnchorVocabulary& vocab) {
  const auto one = m.fatg.generate_one(s.grid, vocab.anchors[s.anchor], s.anchor, sc.ego);
  Tensor wam;
  for (std::size_t k = 0; k < one.rollout.size(); ++k) {
    const Tensor term = mse(one.rollout[k], s.futures[k]);
    wam = k == 0 ? term : add(wam, term);
  }
  wam = scale(wam, 1.0 / static_cast<double>(one.rollout.size()));
  const Tensor imit = l1(one.candidate.offsets, s.target_offsets);
  const auto& t = m.cfg.training;
  const Tensor total = add(scale(wam, t.w_wam), scale(imit, t.w_imit));
  return {total, LossTerms{wam.item(), imit.item(), 0.0}};
}

struct EvaluatorSample {
  Tensor mean_t, mean_tk;
  std::vector<Tensor> descriptors;
  std::vector<Tensor> targets;  // oracle objectives, [4] each
  Command command = Command::straight;
};

EvaluatorSample make_evaluator_sample(const Model& m, const ScenarioRecord& sc, const AnchorVocabulary& vocab) {
  NoGradGuard guard;
  const CandidateSet set = m.fatg.generate_candidates(scene_features(sc, 0.0, m.cfg.grid), vocab, sc.ego);
  EvaluatorSample s;
  s.command = sc.ego.command;
  s.mean_t = variant_mean(set.current);
  s.mean_tk = variant_mean(set.future);
  for (std::size_t n = 0; n < set.candidates.size(); ++n) {
    const auto& c = set.candidates[n];
    s.descriptors.push_back(candidate_descriptor(c.refined, set.current.variants[n], set.future.variants[n], m.cfg.grid));
    const ObjectiveScores o = objectives_from_report(evaluate_trajectory(c.refined, sc, m.cfg.metrics));
    s.targets.push_back(Tensor::vector({o.safety, o.comfort, o.efficiency, o.compliance}));
  }
  return s;
}

Tensor evaluator_loss(const Model& m, const EvaluatorSample& s) {
  const Tensor scene = m.vloe.encode_scene_tokens(s.mean_t, s.mean_tk);
  Tensor total;
  for (std::size_t n = 0; n < s.descriptors.size(); ++n) {
    const Tensor traj = m.vloe.encode_traj_tokens({s.descriptors[n]});
    const Tensor pred = m.vloe.score_head(m.vloe.critic_infer(m.vloe.assemble(s.command, scene, traj)));
    const Tensor term = mse(pred, s.targets[n]);
    total = n == 0 ? term : add(total, term);
  }
  return scale(total, 1.0 / static_cast<double>(s.descriptors.size()));
}

void check_finite(double loss, const std::string& phase, std::size_t step, std::uint64_t scenario) {
  if (!std::isfinite(loss))
    throw DivergenceError(phase + " loss became non-finite at step " + std::to_string(step) + " (scenario " +
                          std::to_string(scenario) + ")");
}

}  // namespace

Optimizer::Optimizer(std::vector<Tensor> params, const TrainingConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
  if (cfg_.optimizer == "adam") {
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }
}

double Optimizer::step() {
  double sq = 0.0;
  for (const auto& p : params_)
    for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw DivergenceError("gradient norm became non-finite");
  const double clip = norm > cfg_.clip_norm ? cfg_.clip_norm / norm : 1.0;
  ++t_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    const auto g = p.grad();
    if (g.empty()) continue;
    auto d = p.data_mut();
    if (cfg_.optimizer == "adam") {
      constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_)), c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
      for (std::size_t j = 0; j < d.size(); ++j) {
        const double gj = g[j] * clip;
        m_[i][j] = b1 * m_[i][j] + (1 - b1) * gj;
        v_[i][j] = b2 * v_[i][j] + (1 - b2) * gj * gj;
        d[j] -= cfg_.learning_rate * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + eps);
      }
    } else {
      for (std::size_t j = 0; j < d.size(); ++j) d[j] -= cfg_.learning_rate * clip * g[j];
    }
    p.zero_grad();
  }
  return norm;
}

LossTerms probe_loss(const Model& m, const std::vector<ScenarioRecord>& scenarios, const AnchorVocabulary& vocab) {
  NoGradGuard guard;
  LossTerms sum;
  for (const auto& sc : scenarios) {
    const auto [_, g] = generator_loss(m, make_generator_sample(m.cfg, sc, vocab), sc, vocab);
    sum.wam += g.wam;
    sum.imit += g.imit;
    sum.score += evaluator_loss(m, make_evaluator_sample(m, sc, vocab)).item();
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, scenarios.size()));
  return {sum.wam / n, sum.imit / n, sum.score / n};
}

std::string train_log_line(const TrainLogEntry& e) {
  json j = {{"phase", e.phase},   {"step", e.step},         {"scenario", e.scenario},
            {"l_wam", e.loss.wam}, {"l_imit", e.loss.imit}, {"l_score", e.loss.score},
            {"grad_norm", e.grad_norm}};
  return j.dump();
}

std::vector<TrainLogEntry> train_model(Model& m, const std::vector<ScenarioRecord>& scenarios, const AnchorVocabulary& vocab,
                                       std::ostream* log) {
  const auto& tc = m.cfg.training;
  std::vector<TrainLogEntry> out;
  if (tc.generator_steps + tc.evaluator_steps == 0) return out;
  if (scenarios.empty()) throw ContractError("training needs at least one scenario");
  auto emit = [&](TrainLogEntry e) {
    if (log) *log << train_log_line(e) << '\n';
    out.push_back(std::move(e));
  };

  if (tc.generator_steps > 0) {
    std::vector<GeneratorSample> samples;
    for (const auto& sc : scenarios) samples.push_back(make_generator_sample(m.cfg, sc, vocab));
    Optimizer opt(m.store.with_prefix("fatg."), tc);
    Rng rng(mix_seed(m.cfg.model_seed, 1));
    for (std::size_t step = 0; step < tc.generator_steps; ++step) {
      const std::size_t i = rng.index(scenarios.size());
      const auto [loss, terms] = generator_loss(m, samples[i], scenarios[i], vocab);
      check_finite(loss.item(), "generator", step, scenarios[i].seed);
      loss.backward();
      emit({"generator", step, scenarios[i].seed, terms, opt.step()});
    }
  }

  if (tc.evaluator_steps > 0) {
    std::vector<EvaluatorSample> samples(scenarios.size());
    parallel_for(scenarios.size(), m.cfg.threads, [&](std::size_t i) { samples[i] = make_evaluator_sample(m, scenarios[i], vocab); });
    m.store.zero_grad();
    Optimizer opt(m.store.with_prefix("vloe."), tc);
    Rng rng(mix_seed(m.cfg.model_seed, 2));
    for (std::size_t step = 0; step < tc.evaluator_steps; ++step) {
      Tensor loss;
      std::uint64_t first = 0;
      for (std::size_t b = 0; b < tc.evaluator_batch; ++b) {
        const std::size_t i = rng.index(scenarios.size());
        if (b == 0) first = scenarios[i].seed;
        const Tensor term = evaluator_loss(m, samples[i]);
        loss = b == 0 ? term : add(loss, term);
      }
      loss = scale(loss, tc.w_score / static_cast<double>(tc.evaluator_batch));
      check_finite(loss.item(), "evaluator", step, first);
      loss.backward();
      LossTerms terms;
      terms.score = loss.item() / (tc.w_score == 0.0 ? 1.0 : tc.w_score);
      emit({"evaluator", step, first, terms, opt.step()});
    }
  }
  m.store.zero_grad();
  return out;
}

// ---- evaluation ----

std::string to_string(Selector s) {
  switch (s) {
    case Selector::vloe: return "vloe";
    case Selector::oracle: return "oracle";
    case Selector::random: return "random";
    case Selector::first: return "first";
  }
  return "?";
}

Selector selector_from_string(const std::string& s) {
  for (Selector sel : {Selector::vloe, Selector::oracle, Selector::random, Selector::first})
    if (to_string(sel) == s) return sel;
  throw ConfigError("unknown selector '" + s + "' (expected vloe, oracle, random or first)");
}

EpisodeResult evaluate_episode(const Model& m, const ScenarioRecord& sc, const AnchorVocabulary& vocab, const EvalOptions& opts) {
  NoGradGuard guard;
  const Tensor grid = scene_features(sc, 0.0, m.cfg.grid);
  const CandidateSet set = generate_candidate_set(m, grid, vocab, sc.ego, opts.bypass_wam);
  EpisodeResult r;
  r.scenario = sc.seed;
  r.selector = opts.selector;
  std::vector<double> pdms;
  for (std::size_t n = 0; n < set.candidates.size(); ++n) {
    CandidateRecord c;
    c.id = n;
    c.anchor = set.candidates[n].anchor;
    c.report = evaluate_trajectory(set.candidates[n].refined, sc, m.cfg.metrics);
    pdms.push_back(c.report.pdms);
    r.candidates.push_back(c);
  }
  r.oracle_best = select_candidate(pdms);
  switch (opts.selector) {
    case Selector::vloe: {
      std::vector<double> agg;
      for (const auto& s : m.vloe.score_candidates(set, sc.ego.command, m.cfg.grid)) agg.push_back(make_score(s, m.cfg.metrics).aggregate);
      for (std::size_t n = 0; n < agg.size(); ++n) r.candidates[n].predicted = agg[n];
      r.chosen = select_candidate(agg);
      break;
    }
    case Selector::oracle: r.chosen = r.oracle_best; break;
    case Selector::random: r.chosen = Rng(mix_seed(m.cfg.model_seed, sc.seed)).index(pdms.size()); break;
    case Selector::first: r.chosen = 0; break;
  }
  r.chosen_report = r.candidates[r.chosen].report;
  r.regret = pdms[r.oracle_best] - pdms[r.chosen];
  return r;
}

std::vector<EpisodeResult> evaluate_episodes(const Model& m, const std::vector<ScenarioRecord>& scenarios,
                                             const AnchorVocabulary& vocab, const EvalOptions& opts, std::size_t threads) {
  std::vector<EpisodeResult> out(scenarios.size());
  parallel_for(scenarios.size(), threads, [&](std::size_t i) { out[i] = evaluate_episode(m, scenarios[i], vocab, opts); });
  return out;
}

// ---- reporting ----

std::vector<Summary> summarize(const std::vector<EpisodeResult>& episodes) {
  std::vector<Summary> out;
  std::map<std::string, std::size_t> index;
  for (const auto& e : episodes) {
    const std::string name = to_string(e.selector);
    if (!index.count(name)) {
      index[name] = out.size();
      out.push_back(Summary{name});
    }
    Summary& s = out[index[name]];
    const MetricReport& r = e.chosen_report;
    ++s.episodes;
    s.nc += r.nc;
    s.dac += r.dac;
    s.ttc += r.ttc;
    s.comf += r.comf;
    s.ep += r.ep;
    s.ddc += r.ddc;
    s.lk += r.lk;
    s.tlc += r.tlc;
    s.pdms += r.pdms;
    s.regret += e.regret;
  }
  for (auto& s : out) {
    const double n = static_cast<double>(s.episodes);
    for (double* v : {&s.nc, &s.dac, &s.ttc, &s.comf, &s.ep, &s.ddc, &s.lk, &s.tlc, &s.pdms, &s.regret}) *v /= n;
  }
  return out;
}

namespace {

json report_fields(const MetricReport& r) {
  return {{"nc", r.nc},   {"dac", r.dac}, {"ttc", r.ttc}, {"comf", r.comf}, {"ep", r.ep},
          {"ddc", r.ddc}, {"lk", r.lk},   {"tlc", r.tlc}, {"pdms", r.pdms}};
}

json summary_json(const Summary& s) {
  return {{"selector", s.selector}, {"episodes", s.episodes}, {"nc", s.nc},     {"dac", s.dac},
          {"ttc", s.ttc},           {"comf", s.comf},         {"ep", s.ep},     {"ddc", s.ddc},
          {"lk", s.lk},             {"tlc", s.tlc},           {"pdms", s.pdms}, {"regret", s.regret}};
}

}  // namespace

void write_results(std::ostream& os, const std::vector<EpisodeResult>& episodes) {
  for (const auto& e : episodes) {
    for (const auto& c : e.candidates) {
      json j = {{"type", "candidate"}, {"scenario", e.scenario}, {"candidate", c.id}, {"anchor", c.anchor}};
      j.update(report_fields(c.report));
      j["predicted"] = std::isnan(c.predicted) ? json(nullptr) : json(c.predicted);
      os << j.dump() << '\n';
    }
    json j = {{"type", "episode"},       {"scenario", e.scenario},       {"selector", to_string(e.selector)},
              {"chosen", e.chosen},      {"oracle_best", e.oracle_best}, {"regret", e.regret}};
    j.update(report_fields(e.chosen_report));
    os << j.dump() << '\n';
  }
  for (const auto& s : summarize(episodes)) {
    json j = summary_json(s);
    j["type"] = "summary";
    os << j.dump() << '\n';
  }
}

void write_results_file(const std::string& path, const std::vector<EpisodeResult>& episodes) {
  std::ostringstream os;
  write_results(os, episodes);
  write_text_file(path, os.str());
}

std::vector<EpisodeResult> read_results(std::istream& is) {
  std::vector<EpisodeResult> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      const std::string type = j.at("type").get<std::string>();
      if (type != "episode") {
        if (type != "candidate" && type != "summary") throw ParseError(line_no, "unknown record type '" + type + "'");
        continue;
      }
      EpisodeResult e;
      e.scenario = j.at("scenario").get<std::uint64_t>();
      e.selector = selector_from_string(j.at("selector").get<std::string>());
      e.chosen = j.at("chosen").get<std::size_t>();
      e.oracle_best = j.at("oracle_best").get<std::size_t>();
      e.regret = j.at("regret").get<double>();
      auto& r = e.chosen_report;
      r.nc = j.at("nc").get<int>();
      r.dac = j.at("dac").get<int>();
      r.ttc = j.at("ttc").get<int>();
      r.comf = j.at("comf").get<int>();
      r.ep = j.at("ep").get<double>();
      r.ddc = j.at("ddc").get<int>();
      r.lk = j.at("lk").get<int>();
      r.tlc = j.at("tlc").get<int>();
      r.pdms = j.at("pdms").get<double>();
      out.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw ParseError(line_no, std::string("bad results record: ") + ex.what());
    } catch (const ConfigError& ex) {
      throw ParseError(line_no, ex.what());
    }
  }
  return out;
}

std::vector<EpisodeResult> read_results_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open results file '" + path + "'");
  return read_results(in);
}

std::string format_report(const std::vector<Summary>& summaries) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-8s %8s %6s %6s %6s %6s %6s %6s %6s %6s %6s %7s\n", "selector", "episodes", "NC", "DAC", "TTC",
                "Comf", "EP", "DDC", "LK", "TLC", "PDMS", "regret");
  out += buf;
  for (const auto& s : summaries) {
    std::snprintf(buf, sizeof buf, "%-8s %8zu %6.1f %6.1f %6.1f %6.1f %6.1f %6.1f %6.1f %6.1f %6.1f %7.1f\n", s.selector.c_str(),
                  s.episodes, 100 * s.nc, 100 * s.dac, 100 * s.ttc, 100 * s.comf, 100 * s.ep, 100 * s.ddc, 100 * s.lk,
                  100 * s.tlc, 100 * s.pdms, 100 * s.regret);
    out += buf;
  }
  return out;
}

std::string report_json(const std::vector<Summary>& summaries) {
  json j = json::array();
  for (const auto& s : summaries) j.push_back(summary_json(s));
  return j.dump(2) + "\n";
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  if (!out) throw IoError("write to '" + path + "' failed");
}

}  // namespace gensel
