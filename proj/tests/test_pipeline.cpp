#include <chrono>
#include <cmath>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "gensel/pipeline.hpp"

using namespace gensel;

namespace {

const char* kTinyConfig = R"({
  "grid": {"H": 8, "W": 8, "L_x": 48, "L_y": 32, "C": 6},
  "horizon": {"T": 4, "dt": 0.5},
  "anchors": {"N": 3},
  "model": {"heads": 2, "ffn_mult": 2, "d_lm": 8, "lm_heads": 2, "metric_queries": 2},
  "training": {"generator_steps": 4, "evaluator_steps": 3, "evaluator_batch": 2}
})";

RunConfig tiny() { return parse_run_config(kTinyConfig); }

struct TinyWorld {
  RunConfig cfg = tiny();
  std::vector<ScenarioRecord> all = generate_dataset(cfg, 12, 0);
  std::vector<ScenarioRecord> train = training_split(all);
  std::vector<ScenarioRecord> held = heldout_split(all);
  AnchorVocabulary vocab = fit_anchor_vocabulary(cfg, train, cfg.anchors);
};

std::string checkpoint_text(const ParamStore& s) {
  std::ostringstream os;
  s.save(os);
  return os.str();
}

std::string results_text(const std::vector<EpisodeResult>& e) {
  std::ostringstream os;
  write_results(os, e);
  return os.str();
}

}  // namespace

TEST(Config, EmptyObjectGivesModuleDefaults) {
  const RunConfig c = parse_run_config("{}");
  EXPECT_EQ(c.grid.H, 64u);
  EXPECT_EQ(c.grid.C, 16u);
  EXPECT_EQ(c.anchors, 32u);
  EXPECT_EQ(c.model.d_lm, 64u);
  EXPECT_EQ(c.model.heads, 4u);
  EXPECT_EQ(c.model.ffn_mult, 4u);
  EXPECT_EQ(c.rollout_steps, (std::vector<double>{2.0, 4.0}));
  EXPECT_EQ(c.metrics.ttc_threshold, 1.0);
  EXPECT_EQ(c.metrics.weights.progress, 5.0);
  EXPECT_EQ(c.training.clip_norm, 1.0);
  EXPECT_EQ(c.training.w_wam, 1.0);
}

TEST(Config, UnknownKeysRejectedWithPath) {
  try {
    parse_run_config(R"({"grid": {"H": 8, "depth": 3}})");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("grid.depth"), std::string::npos);
  }
  EXPECT_THROW(parse_run_config(R"({"seed": 1})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"metrics": {"weights": {"lk": 1}}})"), ConfigError);
}

TEST(Config, BadTypesAndValues) {
  EXPECT_THROW(parse_run_config(R"({"grid": {"H": "eight"}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"grid": 3})"), ConfigError);
  EXPECT_THROW(parse_run_config("{not json"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"grid": {"C": 5}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"grid": {"C": 6}})"), ConfigError);  // 4 heads do not divide 6
  EXPECT_THROW(parse_run_config(R"({"rollout_steps": [4, 2]})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"training": {"optimizer": "sgd"}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"threads": 0})"), ConfigError);
  EXPECT_THROW(load_run_config("/nonexistent/config.json"), IoError);
}

TEST(Config, JsonRoundTrip) {
  RunConfig c = tiny();
  c.training.optimizer = "gd";
  c.paths.results = "out/r.jsonl";
  c.agents = {1, 2, 3};
  const std::string text = run_config_to_json(c);
  EXPECT_EQ(run_config_to_json(parse_run_config(text)), text);
}

TEST(ParallelFor, EveryIndexOnceAndLowestErrorWins) {
  std::vector<int> hits(100, 0);
  parallel_for(100, 4, [&](std::size_t i) { ++hits[i]; });
  for (int h : hits) EXPECT_EQ(h, 1);
  parallel_for(0, 4, [](std::size_t) { FAIL(); });
  try {
    parallel_for(50, 3, [](std::size_t i) {
      if (i == 7 || i == 31) throw std::runtime_error(std::to_string(i));
    });
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_STREQ(e.what(), "7");
  }
}

TEST(GenData, ZeroCountIsEmptyValidFile) {
  std::stringstream ss;
  save_scenarios(ss, generate_dataset(tiny(), 0, 5));
  EXPECT_TRUE(load_scenarios(ss).empty());
}

TEST(GenData, DeterministicAcrossRunsAndThreads) {
  const RunConfig c = tiny();
  std::ostringstream a, b, d;
  save_scenarios(a, generate_dataset(c, 15, 40, 1));
  save_scenarios(b, generate_dataset(c, 15, 40, 1));
  save_scenarios(d, generate_dataset(c, 15, 40, 3));
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(a.str(), d.str());
  const auto all = generate_dataset(c, 6, 40);
  for (std::size_t i = 0; i < all.size(); ++i) {
    EXPECT_EQ(all[i].seed, 40 + i);
    EXPECT_EQ(all[i].family, family_for_seed(40 + i));
  }
}

TEST(GenData, HundredScenariosUnderTenSeconds) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto all = generate_dataset(RunConfig{}, 100, 0);
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_EQ(all.size(), 100u);
  EXPECT_LT(s, 10.0);
}

TEST(GenData, ParitySplit) {
  const auto all = generate_dataset(tiny(), 9, 3);
  const auto tr = training_split(all), ho = heldout_split(all);
  EXPECT_EQ(tr.size() + ho.size(), 9u);
  for (const auto& s : tr) EXPECT_EQ(s.seed % 2, 0u);
  for (const auto& s : ho) EXPECT_EQ(s.seed % 2, 1u);
}

TEST(FitAnchors, SingleAnchorAndTooMany) {
  const RunConfig c = tiny();
  const auto all = generate_dataset(c, 6, 0);
  const auto one = fit_anchor_vocabulary(c, all, 1);
  ASSERT_EQ(one.size(), 1u);
  double mean_x = 0.0;
  for (const auto& s : all) mean_x += s.expert.poses.back().x / 6.0;
  EXPECT_NEAR(one.anchors[0].poses.back().x, mean_x, 1e-9);
  EXPECT_THROW(fit_anchor_vocabulary(c, all, 7), ConfigError);
}

TEST(Train, ZeroStepsLeavesInitialization) {
  TinyWorld w;
  w.cfg.training.generator_steps = 0;
  w.cfg.training.evaluator_steps = 0;
  Model m(w.cfg);
  const std::string before = checkpoint_text(m.store);
  EXPECT_TRUE(train_model(m, w.train, w.vocab).empty());
  EXPECT_EQ(checkpoint_text(m.store), before);
  EXPECT_EQ(before, checkpoint_text(Model(w.cfg).store));
}

TEST(Train, LogsOneLinePerStepAndIsDeterministic) {
  TinyWorld w;
  Model a(w.cfg), b(w.cfg);
  std::ostringstream la, lb;
  const auto entries = train_model(a, w.train, w.vocab, &la);
  train_model(b, w.train, w.vocab, &lb);
  ASSERT_EQ(entries.size(), 7u);
  EXPECT_EQ(la.str(), lb.str());
  EXPECT_EQ(checkpoint_text(a.store), checkpoint_text(b.store));
  EXPECT_NE(checkpoint_text(a.store), checkpoint_text(Model(w.cfg).store));
  std::istringstream in(la.str());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("phase").get<std::string>(), n < 4 ? "generator" : "evaluator");
    EXPECT_TRUE(std::isfinite(j.at("grad_norm").get<double>()));
    ++n;
  }
  EXPECT_EQ(n, 7u);
}

TEST(Train, GeneratorPhaseOnlyTouchesGenerator) {
  TinyWorld w;
  w.cfg.training.evaluator_steps = 0;
  Model m(w.cfg);
  const Model fresh(w.cfg);
  train_model(m, w.train, w.vocab);
  for (const auto& [path, t] : m.store.params()) {
    const auto& init = fresh.store.get(path);
    const bool same = std::equal(t.data().begin(), t.data().end(), init.data().begin());
    if (path.rfind("vloe.", 0) == 0) EXPECT_TRUE(same) << path;
  }
}

TEST(Train, DivergenceIsReported) {
  TinyWorld w;
  w.cfg.training.optimizer = "gd";
  w.cfg.training.learning_rate = 1e300;
  w.cfg.training.evaluator_steps = 0;
  w.cfg.training.generator_steps = 5;
  Model m(w.cfg);
  EXPECT_THROW(train_model(m, w.train, w.vocab), DivergenceError);
}

TEST(Train, WamMemorizesOneScenario) {
  TinyWorld w;
  w.cfg.training.w_imit = 0.0;
  w.cfg.training.generator_steps = 1000;
  w.cfg.training.evaluator_steps = 0;
  Model m(w.cfg);
  const std::vector<ScenarioRecord> one{w.train.front()};
  const double before = probe_loss(m, one, w.vocab).wam;
  train_model(m, one, w.vocab);
  const double after = probe_loss(m, one, w.vocab).wam;
  EXPECT_LT(after, 0.01 * before);
  EXPECT_LT(after, 1e-3);
}

TEST(Evaluate, SelectorsAndRegret) {
  TinyWorld w;
  Model m(w.cfg);
  std::vector<std::vector<EpisodeResult>> by_sel;
  for (Selector s : {Selector::vloe, Selector::oracle, Selector::random, Selector::first})
    by_sel.push_back(evaluate_episodes(m, w.all, w.vocab, {s, false}, 2));
  for (const auto& eps : by_sel)
    for (const auto& e : eps) {
      EXPECT_GE(e.regret, 0.0);
      EXPECT_EQ(e.candidates.size(), 3u);
      EXPECT_EQ(e.chosen_report.pdms, e.candidates[e.chosen].report.pdms);
    }
  for (const auto& e : by_sel[1]) {
    EXPECT_EQ(e.regret, 0.0);
    EXPECT_EQ(e.chosen, e.oracle_best);
  }
  for (const auto& e : by_sel[3]) EXPECT_EQ(e.chosen, 0u);
  for (const auto& e : by_sel[0])
    for (const auto& c : e.candidates) EXPECT_FALSE(std::isnan(c.predicted));
  EXPECT_LE(summarize(by_sel[2])[0].pdms, summarize(by_sel[1])[0].pdms);
}

TEST(Evaluate, ThreadCountDoesNotChangeResults) {
  TinyWorld w;
  Model m(w.cfg);
  const auto a = evaluate_episodes(m, w.all, w.vocab, {Selector::vloe, false}, 1);
  const auto b = evaluate_episodes(m, w.all, w.vocab, {Selector::vloe, false}, 3);
  EXPECT_EQ(results_text(a), results_text(b));
}

TEST(Evaluate, BypassUsesCurrentFeaturesAsFuture) {
  TinyWorld w;
  Model m(w.cfg);
  NoGradGuard guard;
  const auto& sc = w.all.front();
  const Tensor grid = scene_features(sc, 0.0, w.cfg.grid);
  const auto set = generate_candidate_set(m, grid, w.vocab, sc.ego, true);
  const auto full = generate_candidate_set(m, grid, w.vocab, sc.ego, false);
  ASSERT_EQ(set.candidates.size(), 3u);
  for (std::size_t n = 0; n < 3; ++n) {
    EXPECT_TRUE(std::equal(set.future.variants[n].data().begin(), set.future.variants[n].data().end(),
                           set.current.variants[n].data().begin()));
    EXPECT_TRUE(std::equal(set.current.variants[n].data().begin(), set.current.variants[n].data().end(),
                           full.current.variants[n].data().begin()));
  }
}

TEST(Report, EmptyIsHeaderOnly) {
  const std::string text = format_report(summarize({}));
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1);
  EXPECT_EQ(text.rfind("selector", 0), 0u);
}

TEST(Report, SingleEpisodeShowsItsOwnValues) {
  EpisodeResult e;
  e.selector = Selector::random;
  e.chosen_report.ep = 0.25;
  e.chosen_report.ttc = 0;
  e.chosen_report.pdms = 0.6875;
  e.regret = 0.125;
  const auto s = summarize({e});
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].ep, 0.25);
  EXPECT_EQ(s[0].pdms, 0.6875);
  const std::string text = format_report(s);
  EXPECT_NE(text.find("random"), std::string::npos);
  EXPECT_NE(text.find("  25.0 "), std::string::npos);
  EXPECT_NE(text.find("  68.8 "), std::string::npos);
  EXPECT_NE(text.find("   12.5"), std::string::npos);
}

TEST(Report, ReaggregationFromRecordsMatches) {
  TinyWorld w;
  Model m(w.cfg);
  auto eps = evaluate_episodes(m, w.all, w.vocab, {Selector::random, false}, 1);
  const auto more = evaluate_episodes(m, w.all, w.vocab, {Selector::first, false}, 1);
  eps.insert(eps.end(), more.begin(), more.end());
  std::stringstream ss;
  write_results(ss, eps);
  const auto back = read_results(ss);
  ASSERT_EQ(back.size(), eps.size());
  const auto s1 = summarize(eps), s2 = summarize(back);
  ASSERT_EQ(s1.size(), 2u);
  ASSERT_EQ(s2.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(s1[i].selector, s2[i].selector);
    EXPECT_NEAR(s1[i].pdms, s2[i].pdms, 1e-9);
    EXPECT_NEAR(s1[i].ep, s2[i].ep, 1e-9);
    EXPECT_NEAR(s1[i].regret, s2[i].regret, 1e-9);
  }
  EXPECT_EQ(format_report(s1), format_report(s2));
}

TEST(Report, MalformedResultsReportLine) {
  std::istringstream in("{\"type\":\"summary\"}\nnot json\n");
  try {
    read_results(in);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(selector_from_string("best"), ConfigError);
  EXPECT_THROW(read_results_file("/nonexistent/results.jsonl"), IoError);
}
