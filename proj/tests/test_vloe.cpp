#include <cmath>

#include <gtest/gtest.h>

#include "gensel/vloe.hpp"
#include "support/random_tensor.hpp"

using namespace gensel;
using namespace gensel::testkit;

namespace {

VloeConfig small_config() {
  VloeConfig cfg;
  cfg.C = 6;
  cfg.grid_h = 16;
  cfg.grid_w = 16;
  cfg.horizon = 4;
  cfg.heads = 2;
  cfg.d_lm = 16;
  return cfg;
}

bool identical(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

Trajectory line(double vx, double vy, std::size_t T) {
  Trajectory t;
  for (std::size_t i = 1; i <= T; ++i) t.poses.push_back({vx * 0.5 * i, vy * 0.5 * i, std::atan2(vy, vx)});
  return t;
}

}  // namespace

TEST(Vocabulary, SixtyFourWordsPlusScoreToken) {
  PromptVocabulary v;
  EXPECT_EQ(v.size(), 64u);
  EXPECT_EQ(v.score_token(), 64);
  EXPECT_EQ(v.word(v.score_token()), "<score_feature>");
  EXPECT_EQ(v.id("<unk>"), 0);
  EXPECT_EQ(v.id("zebra"), v.unknown());
  EXPECT_EQ(v.word(v.id("trajectory")), "trajectory");
}

TEST(Vocabulary, SentinelsExpandToSlotCounts) {
  PromptVocabulary v;
  const auto ids = v.tokenize("Scene <scene> then <traj> .", 3, 2);
  ASSERT_EQ(ids.size(), 8u);
  EXPECT_EQ(ids[0], v.id("scene"));
  EXPECT_EQ(std::count(ids.begin(), ids.end(), kSceneSentinel), 3);
  EXPECT_EQ(std::count(ids.begin(), ids.end(), kTrajSentinel), 2);
  EXPECT_EQ(ids[5], kTrajSentinel);
}

TEST(Prompt, CommandIsFilledIn) {
  EXPECT_EQ(render_prompt("command : {command} .", Command::left), "command : turn left .");
  EXPECT_EQ(render_prompt("{command} {command}", Command::straight), "go straight go straight");
  PromptVocabulary v;
  for (int id : v.tokenize(render_prompt(kDefaultPromptTemplate, Command::right), 0, 0)) EXPECT_NE(id, v.unknown());
}

TEST(Assemble, TextOnlyPromptGetsScoreToken) {
  PromptVocabulary v;
  const auto ids = v.tokenize("evaluate the plan", 0, 0);
  const auto seq = assemble_reasoning_sequence(ids, Tensor(), Tensor(), v);
  ASSERT_EQ(seq.length(), 4u);
  EXPECT_EQ(seq.score_position, 3u);
  EXPECT_EQ(seq.items.back().index, 64u);
  for (const auto& it : seq.items) EXPECT_EQ(it.kind, SequenceItem::kText);
}

TEST(Assemble, LengthArithmeticAndNoReservedIds) {
  PromptVocabulary v;
  Rng rng(1);
  const Tensor scene = random_tensor({16, 6}, rng), traj = random_tensor({4, 6}, rng);
  const auto bare = assemble_reasoning_sequence(v.tokenize("<scene> <traj>", 16, 4), scene, traj, v);
  EXPECT_EQ(bare.length(), 16u + 4u + 1u);
  const auto ids = v.tokenize("scene : <scene> trajectory : <traj> .", 16, 4);
  const auto seq = assemble_reasoning_sequence(ids, scene, traj, v);
  EXPECT_EQ(seq.length(), 16u + 4u + 1u + 5u);
  std::size_t n_scene = 0, n_traj = 0, next_scene = 0, next_traj = 0;
  for (const auto& it : seq.items) {
    if (it.kind == SequenceItem::kScene) {
      EXPECT_EQ(it.index, next_scene++);
      ++n_scene;
    } else if (it.kind == SequenceItem::kTraj) {
      EXPECT_EQ(it.index, next_traj++);
      ++n_traj;
    } else {
      EXPECT_LE(it.index, 64u);
    }
  }
  EXPECT_EQ(n_scene, 16u);
  EXPECT_EQ(n_traj, 4u);
  EXPECT_EQ(seq.score_position, seq.length() - 1);
  std::size_t score_tokens = 0;
  for (const auto& it : seq.items) score_tokens += it.kind == SequenceItem::kText && it.index == 64u;
  EXPECT_EQ(score_tokens, 1u);
}

TEST(Assemble, CountMismatchNamesCounts) {
  PromptVocabulary v;
  Rng rng(2);
  try {
    assemble_reasoning_sequence(v.tokenize("<scene> <traj>", 15, 4), random_tensor({16, 6}, rng), random_tensor({4, 6}, rng), v);
    FAIL();
  } catch (const ContractError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("15"), std::string::npos);
    EXPECT_NE(msg.find("16"), std::string::npos);
  }
}

TEST(SceneTokens, SixtyFourGridGivesSixteenTokens) {
  VloeConfig cfg = small_config();
  cfg.grid_h = cfg.grid_w = 64;
  ParamStore store(0);
  Vloe vloe(store, cfg);
  EXPECT_EQ(vloe.scene_token_count(), 16u);
  Rng rng(3);
  const Tensor s = random_tensor({64, 64, 6}, rng, -1, 1, false);
  EXPECT_EQ(vloe.encode_scene_tokens(s, s).shape(), (Shape{16, 6}));
}

TEST(SceneTokens, DeterministicAndSensitive) {
  ParamStore store(1);
  Vloe vloe(store, small_config());
  EXPECT_EQ(vloe.scene_token_count(), 16u);
  Rng rng(4);
  const Tensor a = random_tensor({16, 16, 6}, rng, -1, 1, false);
  const Tensor b = random_tensor({16, 16, 6}, rng, -1, 1, false);
  const Tensor x = vloe.encode_scene_tokens(a, b);
  EXPECT_TRUE(identical(x, vloe.encode_scene_tokens(a, b)));
  Tensor b2 = b.detach();
  b2.data_mut()[(5 * 16 + 7) * 6 + 2] += 0.5;
  EXPECT_FALSE(identical(x, vloe.encode_scene_tokens(a, b2)));
  EXPECT_THROW(vloe.encode_scene_tokens(a, random_tensor({16, 16, 5}, rng)), DimensionError);
}

TEST(TrajTokens, SingleCandidateGivesValueRow) {
  ParamStore store(2);
  Vloe vloe(store, small_config());
  Rng rng(5);
  const Tensor d = random_tensor({3 * 4 + 2 * 6 * 4}, rng, -1, 1, false);
  const Tensor out = vloe.encode_traj_tokens({d});
  ASSERT_EQ(out.shape(), (Shape{4, 6}));
  auto get = [&](const std::string& p) { return store.get("vloe." + p); };
  const Tensor proj = layer_norm(relu(linear(reshape(d, {1, d.numel()}), get("traj.proj.w"), get("traj.proj.b"))),
                                 get("traj.norm.gain"), get("traj.norm.bias"));
  const Tensor value = linear(linear(proj, get("traj.attn.v.w"), get("traj.attn.v.b")), get("traj.attn.o.w"), get("traj.attn.o.b"));
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t c = 0; c < 6; ++c) EXPECT_NEAR(out.data()[k * 6 + c], value[c], 1e-14);
}

TEST(TrajTokens, DuplicateCandidatesAndOrder) {
  ParamStore store(3);
  Vloe vloe(store, small_config());
  Rng rng(6);
  const Tensor a = random_tensor({60}, rng, -1, 1, false), b = random_tensor({60}, rng, -1, 1, false);
  EXPECT_TRUE(identical(vloe.encode_traj_tokens({a, a}), vloe.encode_traj_tokens({a})));
  const Tensor ab = vloe.encode_traj_tokens({a, b}), ba = vloe.encode_traj_tokens({b, a});
  for (std::size_t i = 0; i < ab.numel(); ++i) EXPECT_NEAR(ab[i], ba[i], 1e-14);
  EXPECT_THROW(vloe.encode_traj_tokens({}), ContractError);
}

namespace {

struct CriticFixture {
  ParamStore store{4};
  Vloe vloe{store, small_config()};
  Rng rng{7};
  Tensor scene = random_tensor({16, 6}, rng, -1, 1, false);
  Tensor traj = random_tensor({4, 6}, rng, -1, 1, false);
  ReasoningSequence seq = vloe.assemble(Command::straight, scene, traj);
};

}  // namespace

TEST(Critic, CausalMaskAtEveryPosition) {
  CriticFixture f;
  const Tensor base = f.vloe.critic_hidden(f.seq);
  const std::size_t L = f.seq.length(), D = 16;
  for (std::size_t i = 0; i + 1 < L; ++i) {
    ReasoningSequence changed = f.seq;
    for (std::size_t j = i + 1; j < L; ++j) changed.items[j] = {SequenceItem::kText, (j * 7 + i) % 64};
    const Tensor h = f.vloe.critic_hidden(changed);
    for (std::size_t r = 0; r <= i; ++r)
      for (std::size_t c = 0; c < D; ++c) ASSERT_EQ(h.data()[r * D + c], base.data()[r * D + c]) << "position " << i;
  }
}

TEST(Critic, EveryEarlierItemReachesScoreToken) {
  CriticFixture f;
  const Tensor base = f.vloe.critic_infer(f.seq);
  for (std::size_t i = 0; i < f.seq.score_position; ++i) {
    ReasoningSequence changed = f.seq;
    const auto& it = f.seq.items[i];
    if (it.kind == SequenceItem::kText) {
      changed.items[i].index = (it.index + 1) % 64;
    } else {
      Tensor& src = it.kind == SequenceItem::kScene ? changed.scene : changed.traj;
      src = src.detach();
      src.data_mut()[it.index * 6] += 0.25;
    }
    EXPECT_FALSE(identical(f.vloe.critic_infer(changed), base)) << "position " << i;
  }
  EXPECT_TRUE(identical(f.vloe.critic_infer(f.seq), base));
}

TEST(Critic, TooLongSequenceRejected) {
  VloeConfig cfg = small_config();
  cfg.max_length = 20;
  ParamStore store(0);
  Vloe vloe(store, cfg);
  Rng rng(8);
  const auto seq = vloe.assemble(Command::left, random_tensor({16, 6}, rng), random_tensor({4, 6}, rng));
  EXPECT_THROW(vloe.critic_infer(seq), ContractError);
}

TEST(ScoreHead, ZeroHeadGivesHalf) {
  CriticFixture f;
  f.vloe.zero_head(f.store);
  const Tensor s = f.vloe.score_head(f.vloe.critic_infer(f.seq));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(s[i], 0.5);
}

TEST(ScoreHead, RangeForLargeInputs) {
  CriticFixture f;
  Rng rng(9);
  for (int i = 0; i < 50; ++i) {
    const Tensor s = f.vloe.score_head(random_tensor({16}, rng, -1e3, 1e3, false));
    for (std::size_t k = 0; k < 4; ++k) {
      EXPECT_GE(s[k], 0.0);
      EXPECT_LE(s[k], 1.0);
    }
  }
}

TEST(Score, AggregateUsesObjectiveComposition) {
  const ScoreVector s = make_score(Tensor::vector({0.9, 0.5, 0.7, 0.8}));
  EXPECT_NEAR(s.aggregate, 0.9 * 0.8 * (5 * 0.7 + 5 * 0.9 + 2 * 0.5) / 12.0, 1e-15);
  EXPECT_THROW(make_score(Tensor::vector({1, 2, 3})), DimensionError);
}

TEST(Select, TiesAndSingleton) {
  EXPECT_EQ(select_candidate(std::vector<double>{0.3}), 0u);
  EXPECT_EQ(select_candidate(std::vector<double>{0.2, 0.9, 0.9}), 1u);
  EXPECT_THROW(select_candidate(std::vector<double>{}), ContractError);
}

TEST(Select, InvariantUnderMonotoneMaps) {
  Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> agg(1 + rng.index(20));
    for (auto& a : agg) a = std::round(rng.uniform() * 10) / 10;  // coarse values force ties
    const double p = rng.uniform(0.2, 5.0), s = rng.uniform(0.1, 10), o = rng.uniform(-5, 5);
    std::vector<double> mapped;
    for (double a : agg) mapped.push_back(s * std::pow(a + 1.0, p) + o + std::atan(a));
    EXPECT_EQ(select_candidate(agg), select_candidate(mapped));
  }
}

TEST(EndToEnd, ScoresPerCandidateInRange) {
  FatgConfig fc;
  fc.grid = {16, 16, 32.0, 32.0, 6};
  fc.horizon = 4;
  fc.heads = 2;
  ParamStore store(11);
  Fatg fatg(store, fc);
  Vloe vloe(store, small_config());
  AnchorVocabulary vocab;
  vocab.anchors = {line(2, 0, 4), line(6, 1, 4), line(8, -1, 4)};
  Rng rng(12);
  const Tensor grid = random_tensor({16, 16, 6}, rng, -1, 1, false);
  EgoStatus ego;
  ego.velocity = 5;
  NoGradGuard guard;
  const auto set = fatg.generate_candidates(grid, vocab, ego);
  const auto scores = vloe.score_candidates(set, Command::straight, fc.grid);
  ASSERT_EQ(scores.size(), 3u);
  for (const auto& s : scores)
    for (std::size_t k = 0; k < 4; ++k) {
      EXPECT_GT(s[k], 0.0);
      EXPECT_LT(s[k], 1.0);
    }
  // The critic sees the rollout: zeroing the future changes some aggregate.
  CandidateSet frozen = set;
  for (auto& v : frozen.future.variants) v = Tensor::zeros(v.shape());
  const auto zeroed = vloe.score_candidates(frozen, Command::straight, fc.grid);
  bool changed = false;
  for (std::size_t n = 0; n < 3; ++n) changed |= make_score(zeroed[n]).aggregate != make_score(scores[n]).aggregate;
  EXPECT_TRUE(changed);
}
