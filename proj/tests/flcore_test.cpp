#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "fedspa/flcore.hpp"

using namespace fedspa;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.dataset.blobs.per_class = 40;
  c.dataset.blobs.input_dim = 12;
  c.partition.clients = 6;
  c.network.hidden = {16};
  c.schedule.rounds = 8;
  c.schedule.clients_per_round = 3;
  c.schedule.eval_cadence = 2;
  c.master_seed = 4;
  return c;
}

AttackerEntry attacker(int id, AttackKind kind, int start, int end) {
  AttackerEntry e;
  e.client_id = id;
  e.attack.kind = kind;
  e.attack.enhance_steps = 5;
  e.attack.attack_epochs = 1;
  if (kind != AttackKind::spa) {
    e.attack.trigger.mode = TriggerMode::patch;
    e.attack.trigger.init = TriggerInit::patch;
  }
  e.window_start = start;
  e.window_end = end;
  e.burst_start = start;
  return e;
}

std::string csv_of(const ExperimentReport& rep) {
  std::string s = rounds_csv_header();
  for (const auto& r : rep.rounds) s += to_csv_line(r);
  return s;
}

}  // namespace

TEST(SelectClients, Contract) {
  auto all = select_clients(7, 7, 3, 1);
  EXPECT_EQ(all, (std::vector<int>{0, 1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(select_clients(20, 5, 11, 9), select_clients(20, 5, 11, 9));
  auto s = select_clients(20, 5, 12, 9);
  EXPECT_EQ(s.size(), 5u);
  EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
  EXPECT_EQ(std::set<int>(s.begin(), s.end()).size(), 5u);
  EXPECT_THROW(select_clients(3, 4, 0, 0), ArgumentError);
  EXPECT_THROW(select_clients(3, 0, 0, 0), ArgumentError);
}

TEST(SelectClients, CoversEveryClientOverDefaultHorizon) {
  std::set<int> seen;
  for (int t = 0; t < 200; ++t)
    for (int id : select_clients(100, 10, t, 0)) seen.insert(id);
  EXPECT_EQ(seen.size(), 100u);
}

TEST(Aggregate, Examples) {
  std::vector<ClientUpdate> two{{0, {0, 0}, 1}, {1, {2, 2}, 1}};
  EXPECT_EQ(aggregate(two, AggregationMode::uniform), (ParamVector{1, 1}));
  std::vector<ClientUpdate> weighted{{0, {0}, 1}, {1, {4}, 3}};
  EXPECT_EQ(aggregate(weighted, AggregationMode::sample_weighted), ParamVector{3});
  EXPECT_THROW(aggregate({}, AggregationMode::uniform), EmptyAggregationError);
  std::vector<ClientUpdate> bad{{0, {0}, 1}, {1, {1, 2}, 1}};
  EXPECT_THROW(aggregate(bad, AggregationMode::uniform), ArgumentError);
}

TEST(Aggregate, IdempotentOnCopies) {
  Rng rng(1);
  ParamVector u(50);
  for (auto& v : u) v = float(standard_normal(rng));
  for (std::size_t n : {1u, 3u, 7u, 10u}) {
    std::vector<ClientUpdate> copies;
    for (std::size_t i = 0; i < n; ++i) copies.push_back({int(i), u, 1 + 13 * i});
    EXPECT_EQ(aggregate(copies, AggregationMode::sample_weighted), u);
    EXPECT_EQ(aggregate(copies, AggregationMode::uniform), u);
  }
}

TEST(Aggregate, OrderIndependent) {
  std::vector<ClientUpdate> a{{2, {0.1f, 0.7f}, 3}, {0, {0.3f, -0.2f}, 5}, {1, {1.1f, 0.05f}, 2}};
  auto b = a;
  std::swap(b[0], b[2]);
  EXPECT_EQ(aggregate(a, AggregationMode::sample_weighted), aggregate(b, AggregationMode::sample_weighted));
}

TEST(LocalTrain, TrivialCasesAndSeparableFit) {
  BlobParams p;
  p.classes = 2;
  p.per_class = 100;
  p.input_dim = 8;
  p.separation = 6.0;
  auto tt = gen_blobs(p, 1);
  NetworkSpec spec{8, {8}, 2, -1};
  auto g = init_params(spec, 2);
  EXPECT_EQ(local_train(spec, g, tt.train, 2, 0.0f, 16, 1).params, g);
  EXPECT_EQ(local_train(spec, g, tt.train, 0, 0.1f, 16, 1).params, g);
  auto u = local_train(spec, g, tt.train, 5, 0.1f, 16, 1, 4);
  EXPECT_EQ(u.client_id, 4);
  EXPECT_EQ(u.sample_count, tt.train.size());
  EXPECT_GE(accuracy(spec, u.params, tt.train).acc, 0.95);
}

TEST(Experiment, ZeroRoundsReportsInitialModelOnly) {
  auto c = tiny_config();
  c.schedule.rounds = 0;
  auto rep = run_experiment(c);
  EXPECT_TRUE(rep.rounds.empty());
  EXPECT_EQ(rep.final.acc, rep.initial.acc);
  EXPECT_EQ(rep.final_params, init_params(Experiment(c).spec(), derive_seed(4, Stream::init)));
}

TEST(Experiment, DeterministicAcrossWorkerCounts) {
  auto c = tiny_config();
  c.attackers = {attacker(1, AttackKind::spa, 2, 5)};
  c.defense.kind = DefenseKind::foolsgold;
  auto a = run_experiment(c);
  c.schedule.workers = 3;
  auto b = run_experiment(c);
  EXPECT_EQ(csv_of(a), csv_of(b));
  auto jb = to_json(b);
  jb["config"]["schedule"]["workers"] = 1;
  EXPECT_EQ(to_json(a).dump(), jb.dump());
  EXPECT_EQ(a.final_params, b.final_params);
  EXPECT_EQ(a.attackers[0].trigger, b.attackers[0].trigger);
}

TEST(Experiment, ForcingAndWindowContainment) {
  auto c = tiny_config();
  c.attackers = {attacker(5, AttackKind::vanilla, 3, 5)};
  auto rep = run_experiment(c);
  for (const auto& r : rep.rounds) {
    bool in_window = r.round >= 3 && r.round <= 5;
    bool listed = std::count(r.selected_ids.begin(), r.selected_ids.end(), 5) > 0;
    EXPECT_TRUE(listed || !in_window) << "round " << r.round;
    EXPECT_EQ(!r.attacking_ids.empty(), in_window) << "round " << r.round;
    EXPECT_EQ(r.attack, in_window ? "vanilla" : "none");
  }
  EXPECT_EQ(rep.attackers[0].participations, 3);
}

TEST(Experiment, BurstAndRandomParticipation) {
  auto c = tiny_config();
  c.attackers = {attacker(5, AttackKind::vanilla, 1, 6)};
  c.attackers[0].participation = Participation::forced_burst;
  c.attackers[0].burst_start = 2;
  c.attackers[0].burst_length = 2;
  auto rep = run_experiment(c);
  for (const auto& r : rep.rounds) EXPECT_EQ(!r.attacking_ids.empty(), r.round == 2 || r.round == 3);

  c.attackers[0].participation = Participation::random;
  Experiment ex(c);
  for (int t = 0; t < 8; ++t) EXPECT_EQ(ex.participants(t), select_clients(6, 3, t, c.master_seed));
}

TEST(Experiment, MultikrumReportsExcludedOutlier) {
  auto c = tiny_config();
  c.partition.clients = 8;
  c.schedule.clients_per_round = 5;
  c.schedule.rounds = 3;
  auto a = attacker(0, AttackKind::vanilla, 1, 2);
  a.attack.boost = 50.0;
  c.attackers = {a};
  c.defense.kind = DefenseKind::multikrum;
  auto rep = run_experiment(c);
  const auto& r = rep.rounds[1];
  EXPECT_EQ(std::count(r.excluded_ids.begin(), r.excluded_ids.end(), 0), 1);
  EXPECT_EQ(r.defense, "multikrum");
}

TEST(Experiment, EvaluationCadenceAndCsv) {
  auto c = tiny_config();
  auto rep = run_experiment(c);
  ASSERT_EQ(rep.rounds.size(), 8u);
  for (const auto& r : rep.rounds) EXPECT_EQ(r.acc.has_value(), r.round % 2 == 0 || r.round == 7);
  auto line = to_csv_line(rep.rounds[1]);
  EXPECT_EQ(line.substr(0, 4), "1,,,");
  EXPECT_EQ(std::count(line.begin(), line.end(), ','), 7);
  EXPECT_NE(to_csv_line(rep.rounds[0]).find('|'), std::string::npos);
}

TEST(Experiment, CheckpointsAtConfiguredRounds) {
  auto c = tiny_config();
  c.schedule.checkpoint_rounds = {1, 4};
  auto rep = run_experiment(c);
  EXPECT_EQ(rep.checkpoints.size(), 2u);
  EXPECT_TRUE(rep.checkpoints.count(4));
}

TEST(Experiment, ErrorsCarryRoundNumber) {
  auto c = tiny_config();
  c.schedule.lr = 1e30;
  try {
    run_experiment(c);
    FAIL();
  } catch (const NumericError& e) {
    FAIL() << "expected a tagged Error, got untagged: " << e.what();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ExitCode::numeric);
    EXPECT_EQ(std::string(e.what()).rfind("round ", 0), 0u) << e.what();
  }
}
