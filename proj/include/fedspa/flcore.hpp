#pragma once

// FedAvg orchestration: selection, local training, attacks, defenses, aggregation.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fedspa/attacks.hpp"
#include "fedspa/client.hpp"
#include "fedspa/config.hpp"
#include "fedspa/data.hpp"
#include "fedspa/defenses.hpp"
#include "fedspa/diffnet.hpp"
#include "fedspa/eval.hpp"
#include "fedspa/rng.hpp"

namespace fedspa {

/// Uniform sample of `m` of `n` client ids without replacement, sorted ascending.
inline std::vector<int> select_clients(std::size_t n, std::size_t m, int round, std::uint64_t selection_seed) {
  if (m == 0 || m > n) throw ArgumentError("select_clients: need 0 < m <= N");
  Rng rng(derive_seed(selection_seed, Stream::selection, {static_cast<std::uint64_t>(round)}));
  auto ids = iota_indices(n);
  // partial Fisher-Yates
  for (std::size_t i = 0; i < m; ++i) std::swap(ids[i], ids[i + uniform_index(rng, n - i)]);
  std::vector<int> out(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(m));
  std::sort(out.begin(), out.end());
  return out;
}

/// Thrown when every update was filtered; callers keep the previous global model.
class EmptyAggregationError : public Error {
 public:
  EmptyAggregationError() : Error(ExitCode::numeric, "aggregate: no updates to aggregate") {}
};

/// Weighted mean of update params, accumulated in double in ascending client-id order.
/// `weights`, if given, is parallel to `updates` and overrides `mode`.
inline ParamVector aggregate(std::span<const ClientUpdate> updates, AggregationMode mode,
                             std::span<const double> weights = {}) {
  if (updates.empty()) throw EmptyAggregationError();
  const std::size_t p = updates.front().params.size();
  for (const auto& u : updates)
    if (u.params.size() != p) throw ArgumentError("aggregate: parameter layouts differ");
  if (!weights.empty() && weights.size() != updates.size()) throw ArgumentError("aggregate: weight count mismatch");

  auto order = iota_indices(updates.size());
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return updates[a].client_id < updates[b].client_id; });
  std::vector<double> lam(updates.size());
  if (!weights.empty()) {
    double s = 0.0;
    for (double w : weights) s += w;
    if (!(s > 0.0)) throw ArgumentError("aggregate: weights sum to zero");
    for (std::size_t i = 0; i < lam.size(); ++i) lam[i] = weights[i] / s;
  } else if (mode == AggregationMode::uniform) {
    std::fill(lam.begin(), lam.end(), 1.0 / static_cast<double>(updates.size()));
  } else {
    double total = 0.0;
    for (const auto& u : updates) total += static_cast<double>(u.sample_count);
    if (total <= 0.0) throw ArgumentError("aggregate: total sample count is zero");
    for (std::size_t i = 0; i < lam.size(); ++i) lam[i] = static_cast<double>(updates[i].sample_count) / total;
  }
  std::vector<double> acc(p, 0.0);
  for (std::size_t i : order) {
    const auto& w = updates[i].params;
    for (std::size_t k = 0; k < p; ++k) acc[k] += lam[i] * static_cast<double>(w[k]);
  }
  ParamVector out(p);
  for (std::size_t k = 0; k < p; ++k) out[k] = static_cast<float>(acc[k]);
  return out;
}

struct RoundRecord {
  int round = 0;
  std::optional<double> acc;
  std::optional<double> asr;          // mean over attackers
  std::vector<double> attacker_asr;   // parallel to config attackers; empty when not evaluated
  std::vector<int> selected_ids;
  std::vector<int> attacking_ids;
  std::vector<int> excluded_ids;
  double global_norm = 0.0;
  std::string defense;
  std::string attack;
  bool carried_over = false;
  std::string notes;
};

struct AttackerSummary {
  int client_id = -1;
  int target = 0;
  std::string kind;
  int participations = 0;
  double final_asr = 0.0;
  std::optional<double> alignment;  // cluster_alignment_score on the final model
  TriggerSpec trigger;
};

struct ExperimentReport {
  ExperimentConfig config;
  MetricsSnapshot initial;
  MetricsSnapshot final;
  std::vector<RoundRecord> rounds;
  std::vector<AttackerSummary> attackers;
  std::map<int, ParamVector> checkpoints;
  ParamVector final_params;
  std::string projection_csv;  // empty unless requested
};

struct FlState {
  int round = 0;
  ParamVector global;
  std::map<int, std::vector<float>> histories;  // Foolsgold cumulative deltas
  std::vector<AttackerState> attackers;         // parallel to config attackers
};

namespace detail {

[[noreturn]] inline void rethrow_tagged(int round) {
  try {
    throw;
  } catch (const EmptyAggregationError&) {
    throw;
  } catch (const Error& e) {
    throw Error(e.code(), "round " + std::to_string(round) + ": " + e.what());
  }
}

inline std::string join_ids(const std::vector<int>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? "|" : "") + std::to_string(ids[i]);
  return s;
}

inline std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace detail

/// A running experiment: owns data, partition, network and the server state.
class Experiment {
 public:
  explicit Experiment(ExperimentConfig cfg) : cfg_(std::move(cfg)) {
    validate(cfg_);
    load_data();
    spec_.input_dim = train_.inputs.cols();
    spec_.hidden_dims = cfg_.network.hidden;
    spec_.num_classes = cfg_.class_count();
    spec_.embedding_layer = cfg_.network.embedding_layer;
    spec_.validate();

    auto pseed = cfg_.partition.seed ? *cfg_.partition.seed : derive_seed(cfg_.master_seed, Stream::partition);
    plan_ = dirichlet_partition(train_.labels, cfg_.partition.clients, cfg_.partition.alpha, pseed);
    std::vector<std::size_t> attacker_ids;
    for (const auto& a : cfg_.attackers) attacker_ids.push_back(static_cast<std::size_t>(a.client_id));
    for (const auto& a : cfg_.attackers) {
      if (a.attack.kind != AttackKind::spa) continue;
      std::vector<std::size_t> others;
      for (auto id : attacker_ids)
        if (id != static_cast<std::size_t>(a.client_id)) others.push_back(id);
      ensure_class_samples(plan_, train_.labels, static_cast<std::size_t>(a.client_id), a.attack.target_label,
                           cfg_.partition.attacker_min_target, others);
    }
    for (const auto& idx : plan_.assignments) shards_.push_back(train_.subset(idx));

    state_.global = init_params(spec_, derive_seed(cfg_.master_seed, Stream::init));
    for (const auto& a : cfg_.attackers) {
      AttackerState s;
      s.trigger = initial_trigger(a.attack.trigger, spec_.input_dim,
                                  derive_seed(cfg_.master_seed, Stream::trigger_init,
                                              {static_cast<std::uint64_t>(a.client_id)}),
                                  cfg_.dataset.image_rows, cfg_.dataset.image_cols);
      state_.attackers.push_back(std::move(s));
    }
  }

  const ExperimentConfig& config() const { return cfg_; }
  const NetworkSpec& spec() const { return spec_; }
  const FlState& state() const { return state_; }
  const Dataset& train_set() const { return train_; }
  const Dataset& test_set() const { return test_; }
  const PartitionPlan& partition() const { return plan_; }
  const Dataset& shard(int client) const { return shards_.at(static_cast<std::size_t>(client)); }

  /// Selected ids for `round` after attacker forcing.
  std::vector<int> participants(int round) const {
    auto sel = select_clients(cfg_.partition.clients, cfg_.schedule.clients_per_round, round,
                              cfg_.master_seed);
    std::vector<int> forced;
    for (const auto& a : cfg_.attackers)
      if (a.forced_in(round)) forced.push_back(a.client_id);
    std::sort(forced.begin(), forced.end());
    for (int id : forced) {
      if (std::find(sel.begin(), sel.end(), id) != sel.end()) continue;
      // Replace the lowest-index selected slot not already held by a forced attacker.
      auto slot = std::find_if(sel.begin(), sel.end(), [&](int s) {
        return std::find(forced.begin(), forced.end(), s) == forced.end();
      });
      if (slot == sel.end()) break;
      *slot = id;
      std::sort(sel.begin(), sel.end());
    }
    return sel;
  }

  /// Index into config attackers for a client active at `round`, or -1.
  int active_attacker(int client, int round) const {
    for (std::size_t i = 0; i < cfg_.attackers.size(); ++i)
      if (cfg_.attackers[i].client_id == client && cfg_.attackers[i].active_in(round)) return static_cast<int>(i);
    return -1;
  }

  MetricsSnapshot evaluate(int round) const {
    auto m = accuracy(spec_, state_.global, test_);
    m.round = round;
    if (!cfg_.attackers.empty()) m.asr = mean_asr(attacker_asrs());
    return m;
  }

  std::vector<double> attacker_asrs() const {
    std::vector<double> out;
    for (std::size_t i = 0; i < cfg_.attackers.size(); ++i)
      out.push_back(asr(spec_, state_.global, test_, state_.attackers[i].trigger, cfg_.attackers[i].attack.target_label));
    return out;
  }

  RoundRecord step() {
    const int t = state_.round;
    try {
      return step_impl(t);
    } catch (...) {
      detail::rethrow_tagged(t);
    }
  }

  std::vector<AttackerSummary> attacker_summaries() const {
    std::vector<AttackerSummary> out;
    auto by_class = inputs_by_class(test_);
    bool all_classes = std::all_of(by_class.begin(), by_class.end(), [](auto& m) { return m.rows() > 0; });
    for (std::size_t i = 0; i < cfg_.attackers.size(); ++i) {
      const auto& a = cfg_.attackers[i];
      AttackerSummary s;
      s.client_id = a.client_id;
      s.target = a.attack.target_label;
      s.kind = enum_name(a.attack.kind);
      s.participations = state_.attackers[i].participations;
      s.final_asr = asr(spec_, state_.global, test_, state_.attackers[i].trigger, s.target);
      s.trigger = state_.attackers[i].trigger;
      if (all_classes) {
        auto poisoned = triggered_non_target(i);
        if (poisoned.rows() > 0)
          s.alignment = cluster_alignment_score(spec_, state_.global, poisoned, by_class, s.target);
      }
      out.push_back(std::move(s));
    }
    return out;
  }

  /// Test samples of every non-target class with attacker `i`'s trigger applied.
  Matrix<float> triggered_non_target(std::size_t i) const {
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k < test_.size(); ++k)
      if (test_.labels[k] != cfg_.attackers[i].attack.target_label) idx.push_back(k);
    return apply_trigger(test_.inputs.select_rows(idx), state_.attackers[i].trigger);
  }

  /// PCA export of clean test embeddings plus the first attacker's triggered samples.
  std::string projection_csv() const {
    std::vector<int> labels(test_.labels.begin(), test_.labels.end());
    std::vector<bool> poisoned(test_.size(), false);
    Matrix<float> all = test_.inputs;
    if (!cfg_.attackers.empty()) {
      auto trig = triggered_non_target(0);
      Matrix<float> both(all.rows() + trig.rows(), all.cols());
      for (std::size_t r = 0; r < all.rows(); ++r)
        for (std::size_t c = 0; c < all.cols(); ++c) both(r, c) = all(r, c);
      for (std::size_t r = 0; r < trig.rows(); ++r)
        for (std::size_t c = 0; c < all.cols(); ++c) both(all.rows() + r, c) = trig(r, c);
      for (std::size_t k = 0; k < test_.size(); ++k)
        if (test_.labels[k] != cfg_.attackers[0].attack.target_label) {
          labels.push_back(test_.labels[k]);
          poisoned.push_back(true);
        }
      all = std::move(both);
    }
    auto proj = feature_projection(spec_, state_.global, all);
    std::ostringstream os;
    write_projection_csv(os, proj, labels, poisoned);
    return os.str();
  }

 private:
  static double mean_asr(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  }

  void load_data() {
    const auto& d = cfg_.dataset;
    if (d.kind == "blobs") {
      auto seed = d.seed ? *d.seed : derive_seed(cfg_.master_seed, Stream::data);
      auto tt = gen_blobs(d.blobs, seed);
      train_ = std::move(tt.train);
      test_ = std::move(tt.test);
    } else {
      train_ = load_idx(d.train_images, d.train_labels, d.blobs.classes);
      test_ = load_idx(d.test_images, d.test_labels, d.blobs.classes);
      if (train_.inputs.cols() != test_.inputs.cols())
        throw FormatError("idx train and test images have different sizes");
    }
    if (train_.size() < cfg_.partition.clients)
      throw ConfigError("fewer training samples than clients", "partition.N");
    if (test_.size() == 0) throw ConfigError("empty test set", "dataset");
  }

  struct Slot {
    ClientUpdate update;
    std::optional<AttackerState> attacker;
    std::exception_ptr error;
  };

  Slot run_client(int client, int round) const {
    Slot s;
    const auto& sh = shards_[static_cast<std::size_t>(client)];
    const auto& sc = cfg_.schedule;
    int ai = active_attacker(client, round);
    if (ai < 0) {
      s.update = local_train(spec_, state_.global, sh, sc.local_epochs, static_cast<float>(sc.lr), sc.batch_size,
                             derive_seed(cfg_.master_seed, Stream::client,
                                         {static_cast<std::uint64_t>(round), static_cast<std::uint64_t>(client)}),
                             client);
      return s;
    }
    const auto& a = cfg_.attackers[static_cast<std::size_t>(ai)];
    auto st = state_.attackers[static_cast<std::size_t>(ai)];
    auto seed = derive_seed(cfg_.master_seed, Stream::attacker,
                            {static_cast<std::uint64_t>(round), static_cast<std::uint64_t>(client)});
    switch (a.attack.kind) {
      case AttackKind::vanilla:
        s.update = vanilla_attack(spec_, state_.global, sh, a.attack, st.trigger, seed, client);
        ++st.participations;
        break;
      case AttackKind::pgd:
        s.update = pgd_attack(spec_, state_.global, sh, a.attack, st.trigger, a.attack.pgd_radius, seed, client);
        ++st.participations;
        break;
      case AttackKind::spa:
        s.update = spa_attack(spec_, state_.global, sh, a.attack, st, seed, client);
        break;
    }
    s.attacker = std::move(st);
    return s;
  }

  RoundRecord step_impl(int t) {
    RoundRecord rec;
    rec.round = t;
    rec.defense = enum_name(cfg_.defense.kind);
    rec.selected_ids = participants(t);
    for (int id : rec.selected_ids)
      if (active_attacker(id, t) >= 0) rec.attacking_ids.push_back(id);
    {
      std::vector<std::string> kinds;
      for (int id : rec.attacking_ids)
        kinds.push_back(enum_name(cfg_.attackers[static_cast<std::size_t>(active_attacker(id, t))].attack.kind));
      std::sort(kinds.begin(), kinds.end());
      kinds.erase(std::unique(kinds.begin(), kinds.end()), kinds.end());
      for (std::size_t i = 0; i < kinds.size(); ++i) rec.attack += (i ? "|" : "") + kinds[i];
      if (rec.attack.empty()) rec.attack = "none";
    }

    const auto& ids = rec.selected_ids;
    std::vector<Slot> slots(ids.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t k; (k = next.fetch_add(1)) < ids.size();) {
        try {
          slots[k] = run_client(ids[k], t);
        } catch (...) {
          slots[k].error = std::current_exception();
        }
      }
    };
    const auto nthreads = std::min<std::size_t>(static_cast<std::size_t>(cfg_.schedule.workers), ids.size());
    if (nthreads <= 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < nthreads; ++w) pool.emplace_back(worker);
      for (auto& th : pool) th.join();
    }
    for (auto& s : slots)
      if (s.error) std::rethrow_exception(s.error);

    std::vector<ClientUpdate> updates;
    for (std::size_t k = 0; k < slots.size(); ++k) {
      if (!all_finite<float>(slots[k].update.params))
        throw NumericError("client " + std::to_string(ids[k]) + " uploaded non-finite parameters");
      updates.push_back(std::move(slots[k].update));
      if (slots[k].attacker) {
        int ai = active_attacker(ids[k], t);
        state_.attackers[static_cast<std::size_t>(ai)] = std::move(*slots[k].attacker);
      }
    }

    std::optional<ParamVector> next_global;
    apply_defense(t, updates, rec, next_global);
    if (next_global) {
      state_.global = std::move(*next_global);
    } else {
      rec.carried_over = true;
      rec.notes += std::string(rec.notes.empty() ? "" : "; ") + "all updates excluded; global model carried over";
    }
    rec.global_norm = l2_norm<float>(state_.global);

    const auto& sc = cfg_.schedule;
    if (t % sc.eval_cadence == 0 || t == sc.rounds - 1) {
      rec.acc = accuracy(spec_, state_.global, test_).acc;
      if (!cfg_.attackers.empty()) {
        rec.attacker_asr = attacker_asrs();
        rec.asr = mean_asr(rec.attacker_asr);
      }
    }
    ++state_.round;
    return rec;
  }

  void apply_defense(int t, std::vector<ClientUpdate>& updates, RoundRecord& rec,
                     std::optional<ParamVector>& out) {
    const auto& df = cfg_.defense;
    auto keep_subset = [&](const DefenseDecision& d) {
      std::vector<ClientUpdate> kept;
      for (auto& u : updates)
        if (std::binary_search(d.kept_ids.begin(), d.kept_ids.end(), u.client_id)) kept.push_back(u);
      return kept;
    };
    switch (df.kind) {
      case DefenseKind::none:
        out = aggregate(updates, cfg_.aggregation);
        return;
      case DefenseKind::clip: {
        auto clipped = clip_updates(updates, state_.global, df.clip_bound);
        out = aggregate(clipped, cfg_.aggregation);
        return;
      }
      case DefenseKind::multikrum:
      case DefenseKind::rflbat: {
        auto d = df.kind == DefenseKind::multikrum
                     ? multikrum(updates, df.f)
                     : rflbat_lite(updates, state_.global, df.k_clusters,
                                   derive_seed(cfg_.master_seed, Stream::defense_noise, {static_cast<std::uint64_t>(t)}));
        rec.excluded_ids = d.excluded_ids;
        rec.notes = d.notes;
        auto kept = keep_subset(d);
        if (!kept.empty()) out = aggregate(kept, cfg_.aggregation);
        return;
      }
      case DefenseKind::foolsgold: {
        std::vector<ClientHistory> hist;
        for (auto& u : updates) {
          auto& h = state_.histories[u.client_id];
          if (h.empty()) h.assign(u.params.size(), 0.0f);
          for (std::size_t k = 0; k < h.size(); ++k) h[k] += u.params[k] - state_.global[k];
          hist.push_back({u.client_id, h});
        }
        auto d = foolsgold(hist);
        rec.excluded_ids = d.excluded_ids;
        rec.notes = d.notes;
        auto kept = keep_subset(d);
        if (!kept.empty()) out = aggregate(kept, cfg_.aggregation, d.weights);
        return;
      }
      case DefenseKind::flame: {
        auto rng = make_rng(cfg_.master_seed, Stream::defense_noise, {static_cast<std::uint64_t>(t)});
        auto r = flame_lite(updates, state_.global, df.noise_lambda, rng);
        rec.excluded_ids = r.decision.excluded_ids;
        rec.notes = r.decision.notes;
        out = std::move(r.aggregated);
        return;
      }
    }
  }

  ExperimentConfig cfg_;
  NetworkSpec spec_;
  Dataset train_, test_;
  PartitionPlan plan_;
  std::vector<Dataset> shards_;
  FlState state_;
};

using RoundCallback = std::function<void(const RoundRecord&)>;

/// Runs all rounds. `on_round` sees each record as soon as it exists, so callers can
/// flush partial results if a later round fails.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg, const RoundCallback& on_round = {}) {
  Experiment ex(cfg);
  ExperimentReport rep;
  rep.config = cfg;
  rep.initial = ex.evaluate(-1);
  std::vector<int> ckpt = cfg.schedule.checkpoint_rounds;
  std::sort(ckpt.begin(), ckpt.end());
  for (int t = 0; t < cfg.schedule.rounds; ++t) {
    auto rec = ex.step();
    if (on_round) on_round(rec);
    if (std::binary_search(ckpt.begin(), ckpt.end(), t)) rep.checkpoints[t] = ex.state().global;
    rep.rounds.push_back(std::move(rec));
  }
  rep.final = ex.evaluate(cfg.schedule.rounds - 1);
  rep.attackers = ex.attacker_summaries();
  rep.final_params = ex.state().global;
  if (cfg.output.projection) rep.projection_csv = ex.projection_csv();
  return rep;
}

// ---------------------------------------------------------------------------
// Artifacts

inline const char* rounds_csv_header() { return "round,acc,asr,selected_ids,excluded_ids,global_norm,defense,attack\n"; }

inline std::string to_csv_line(const RoundRecord& r) {
  std::string s = std::to_string(r.round) + ",";
  if (r.acc) s += detail::fmt_g(*r.acc);
  s += ",";
  if (r.asr) s += detail::fmt_g(*r.asr);
  s += "," + detail::join_ids(r.selected_ids) + "," + detail::join_ids(r.excluded_ids) + "," +
       detail::fmt_g(r.global_norm) + "," + r.defense + "," + r.attack + "\n";
  return s;
}

inline json to_json(const MetricsSnapshot& m) {
  json j{{"round", m.round}, {"acc", m.acc}, {"per_class_recall", m.per_class_recall}, {"confusion", m.confusion}};
  j["asr"] = std::isnan(m.asr) ? json(nullptr) : json(m.asr);
  return j;
}

inline json to_json(const RoundRecord& r) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return {{"round", r.round},
          {"acc", opt(r.acc)},
          {"asr", opt(r.asr)},
          {"attacker_asr", r.attacker_asr},
          {"selected_ids", r.selected_ids},
          {"attacking_ids", r.attacking_ids},
          {"excluded_ids", r.excluded_ids},
          {"global_norm", r.global_norm},
          {"defense", r.defense},
          {"attack", r.attack},
          {"carried_over", r.carried_over},
          {"notes", r.notes}};
}

inline json to_json(const ExperimentReport& rep) {
  json attackers = json::array();
  for (const auto& a : rep.attackers)
    attackers.push_back({{"client_id", a.client_id},
                         {"target", a.target},
                         {"kind", a.kind},
                         {"participations", a.participations},
                         {"final_asr", a.final_asr},
                         {"cluster_alignment", a.alignment ? json(*a.alignment) : json(nullptr)}});
  json rounds = json::array();
  for (const auto& r : rep.rounds) rounds.push_back(to_json(r));
  return {{"config", to_json(rep.config)},
          {"initial", to_json(rep.initial)},
          {"final", to_json(rep.final)},
          {"attackers", attackers},
          {"rounds", rounds}};
}

}  // namespace fedspa
