#pragma once

// Declarative experiment description and its strict JSON binding.
//
// Parsing rejects unknown keys, duplicate keys and type mismatches, naming the
// offending key path (e.g. `attackers[0].client_id`). Serialization always emits
// every field, so an echoed config fully describes a run.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedspa/attacks.hpp"
#include "fedspa/data.hpp"
#include "fedspa/error.hpp"

namespace fedspa {

using json = nlohmann::json;

enum class Participation { random, forced_window, forced_burst };
enum class DefenseKind { none, multikrum, foolsgold, flame, rflbat, clip };
enum class AggregationMode { sample_weighted, uniform };

struct DatasetConfig {
  std::string kind = "blobs";  // blobs | idx
  BlobParams blobs;
  std::optional<std::uint64_t> seed;  // unset: derived from master_seed
  std::string train_images, train_labels, test_images, test_labels;
  std::size_t image_rows = 0, image_cols = 0;  // for patch placement on image inputs
  bool operator==(const DatasetConfig& o) const {
    return kind == o.kind && blobs.classes == o.blobs.classes && blobs.per_class == o.blobs.per_class &&
           blobs.input_dim == o.blobs.input_dim && blobs.separation == o.blobs.separation &&
           blobs.noise_sigma == o.blobs.noise_sigma && seed == o.seed && train_images == o.train_images &&
           train_labels == o.train_labels && test_images == o.test_images && test_labels == o.test_labels &&
           image_rows == o.image_rows && image_cols == o.image_cols;
  }
};

struct PartitionConfig {
  std::size_t clients = 20;
  double alpha = 1.0;
  std::optional<std::uint64_t> seed;
  // Feature-alignment attackers need target-class samples; they are topped up to this count.
  std::size_t attacker_min_target = 8;
  bool operator==(const PartitionConfig&) const = default;
};

struct NetworkConfig {
  std::vector<std::size_t> hidden{64, 64, 32};
  int embedding_layer = -1;
  bool operator==(const NetworkConfig&) const = default;
};

struct ScheduleConfig {
  int rounds = 200;
  std::size_t clients_per_round = 5;
  int local_epochs = 2;
  double lr = 0.05;
  std::size_t batch_size = 32;
  int eval_cadence = 5;
  int workers = 1;
  std::vector<int> checkpoint_rounds;
  bool operator==(const ScheduleConfig&) const = default;
};

struct AttackerEntry {
  int client_id = 0;
  AttackConfig attack;
  Participation participation = Participation::forced_window;
  int window_start = 100;
  int window_end = 130;
  int burst_start = 100;
  int burst_length = 5;

  bool active_in(int round) const {
    if (round < window_start || round > window_end) return false;
    if (participation == Participation::forced_burst) return round >= burst_start && round < burst_start + burst_length;
    return true;
  }
  bool forced_in(int round) const { return participation != Participation::random && active_in(round); }
  bool operator==(const AttackerEntry&) const = default;
};

struct DefenseConfig {
  DefenseKind kind = DefenseKind::none;
  int f = 1;
  double noise_lambda = 0.001;
  std::size_t k_clusters = 2;
  double clip_bound = std::numeric_limits<double>::infinity();
  bool operator==(const DefenseConfig&) const = default;
};

struct OutputConfig {
  std::string dir = "out";
  std::string rounds_csv = "rounds.csv";
  std::string report_json = "report.json";
  bool projection = false;
  bool save_triggers = true;
  bool operator==(const OutputConfig&) const = default;
};

struct ExperimentConfig {
  std::string name = "experiment";
  DatasetConfig dataset;
  PartitionConfig partition;
  NetworkConfig network;
  ScheduleConfig schedule;
  std::vector<AttackerEntry> attackers;
  DefenseConfig defense;
  AggregationMode aggregation = AggregationMode::sample_weighted;
  std::uint64_t master_seed = 0;
  OutputConfig output;
  bool operator==(const ExperimentConfig&) const = default;

  int class_count() const { return dataset.blobs.classes; }
};

// ---------------------------------------------------------------------------
// Enum names

namespace detail {

template <class E>
struct EnumNames;

#define FEDSPA_ENUM_NAMES(E, ...)                                            \
  template <>                                                                \
  struct EnumNames<E> {                                                      \
    static const std::vector<std::pair<E, const char*>>& all() {             \
      static const std::vector<std::pair<E, const char*>> v{__VA_ARGS__};    \
      return v;                                                              \
    }                                                                        \
  };

FEDSPA_ENUM_NAMES(Participation, {Participation::random, "random"}, {Participation::forced_window, "forced_window"},
                  {Participation::forced_burst, "forced_burst"})
FEDSPA_ENUM_NAMES(DefenseKind, {DefenseKind::none, "none"}, {DefenseKind::multikrum, "multikrum"},
                  {DefenseKind::foolsgold, "foolsgold"}, {DefenseKind::flame, "flame"},
                  {DefenseKind::rflbat, "rflbat"}, {DefenseKind::clip, "clip"})
FEDSPA_ENUM_NAMES(AggregationMode, {AggregationMode::sample_weighted, "sample_weighted"},
                  {AggregationMode::uniform, "uniform"})
FEDSPA_ENUM_NAMES(AttackKind, {AttackKind::vanilla, "vanilla"}, {AttackKind::pgd, "pgd"}, {AttackKind::spa, "spa"})
FEDSPA_ENUM_NAMES(ConstraintMode, {ConstraintMode::feature_consistency, "feature_consistency"},
                  {ConstraintMode::linf, "linf"})
FEDSPA_ENUM_NAMES(AlignMetric, {AlignMetric::swd, "swd"}, {AlignMetric::l2, "l2"}, {AlignMetric::cosine, "cosine"},
                  {AlignMetric::kl, "kl"})
FEDSPA_ENUM_NAMES(TriggerUpdate, {TriggerUpdate::sign, "sign"}, {TriggerUpdate::gradient, "gradient"})
FEDSPA_ENUM_NAMES(TriggerInit, {TriggerInit::uniform, "uniform"}, {TriggerInit::patch, "patch"},
                  {TriggerInit::zeros, "zeros"}, {TriggerInit::file, "file"})
FEDSPA_ENUM_NAMES(TriggerMode, {TriggerMode::patch, "patch"}, {TriggerMode::blend, "blend"},
                  {TriggerMode::additive, "additive"})

#undef FEDSPA_ENUM_NAMES

}  // namespace detail

template <class E>
const char* enum_name(E e) {
  for (auto& [v, n] : detail::EnumNames<E>::all())
    if (v == e) return n;
  return "?";
}

template <class E>
E enum_from_name(const std::string& s, const std::string& key) {
  std::string allowed;
  for (auto& [v, n] : detail::EnumNames<E>::all()) {
    if (s == n) return v;
    allowed += (allowed.empty() ? "" : "|") + std::string(n);
  }
  throw ConfigError("unknown value '" + s + "' (expected " + allowed + ")", key);
}

// ---------------------------------------------------------------------------
// Strict reader

namespace detail {

class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("expected an object", path_.empty() ? "<root>" : path_);
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  template <class T>
  void read(const std::string& key, T& out) {
    const json* v = find(key);
    if (!v) return;
    convert(*v, out, key_path(key));
  }

  // Unknown keys are an error.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown key", key_path(it.key()));
  }

  static void convert(const json& v, bool& out, const std::string& path) {
    if (!v.is_boolean()) throw ConfigError("expected a boolean", path);
    out = v.get<bool>();
  }
  static void convert(const json& v, std::string& out, const std::string& path) {
    if (!v.is_string()) throw ConfigError("expected a string", path);
    out = v.get<std::string>();
  }
  static void convert(const json& v, int& out, const std::string& path) {
    if (!v.is_number_integer()) throw ConfigError("expected an integer", path);
    auto x = v.get<long long>();
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max())
      throw ConfigError("integer out of range", path);
    out = static_cast<int>(x);
  }
  static void convert(const json& v, std::size_t& out, const std::string& path) {
    if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError("expected a non-negative integer", path);
    out = v.get<std::size_t>();
  }
  static void convert(const json& v, double& out, const std::string& path) {
    if (v.is_string() && (v.get<std::string>() == "inf" || v.get<std::string>() == "infinity")) {
      out = std::numeric_limits<double>::infinity();
      return;
    }
    if (!v.is_number()) throw ConfigError("expected a number", path);
    out = v.get<double>();
    if (!std::isfinite(out)) throw ConfigError("expected a finite number", path);
  }
  static void convert(const json& v, float& out, const std::string& path) {
    double d = 0.0;
    convert(v, d, path);
    out = static_cast<float>(d);
  }
  template <class T>
  static void convert(const json& v, std::optional<T>& out, const std::string& path) {
    if (v.is_null()) {
      out.reset();
      return;
    }
    T t{};
    convert(v, t, path);
    out = t;
  }
  template <class T>
  static void convert(const json& v, std::vector<T>& out, const std::string& path) {
    if (!v.is_array()) throw ConfigError("expected an array", path);
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      T t{};
      convert(v[i], t, path + "[" + std::to_string(i) + "]");
      out.push_back(t);
    }
  }
  template <class E>
    requires std::is_enum_v<E>
  static void convert(const json& v, E& out, const std::string& path) {
    if (!v.is_string()) throw ConfigError("expected a string", path);
    out = enum_from_name<E>(v.get<std::string>(), path);
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline json number_or_inf(double v) { return std::isinf(v) ? json("inf") : json(v); }

template <class T>
json optional_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

// SAX pass that only checks for repeated keys within one object.
class DuplicateKeyChecker : public nlohmann::json_sax<json> {
 public:
  bool null() override { return value(); }
  bool boolean(bool) override { return value(); }
  bool number_integer(number_integer_t) override { return value(); }
  bool number_unsigned(number_unsigned_t) override { return value(); }
  bool number_float(number_float_t, const string_t&) override { return value(); }
  bool string(string_t&) override { return value(); }
  bool binary(binary_t&) override { return value(); }
  bool start_object(std::size_t) override {
    frames_.push_back(Frame{true, {}, pending_path(), {}, 0});
    return true;
  }
  bool key(string_t& k) override {
    auto& f = frames_.back();
    if (!f.keys.insert(k).second) {
      duplicate_ = f.path.empty() ? k : f.path + "." + k;
      return false;
    }
    f.current_key = k;
    return true;
  }
  bool end_object() override {
    frames_.pop_back();
    return value();
  }
  bool start_array(std::size_t) override {
    frames_.push_back(Frame{false, {}, pending_path(), {}, 0});
    return true;
  }
  bool end_array() override {
    frames_.pop_back();
    return value();
  }
  bool parse_error(std::size_t position, const std::string&, const nlohmann::detail::exception& ex) override {
    error_ = "parse error at byte " + std::to_string(position) + ": " + ex.what();
    return false;
  }

  const std::string& duplicate() const { return duplicate_; }
  const std::string& error() const { return error_; }

 private:
  struct Frame {
    bool object = true;
    std::set<std::string> keys;
    std::string path;
    std::string current_key;
    std::size_t index = 0;
  };
  std::string pending_path() const {
    if (frames_.empty()) return {};
    const auto& f = frames_.back();
    if (f.object) return f.path.empty() ? f.current_key : f.path + "." + f.current_key;
    return f.path + "[" + std::to_string(f.index) + "]";
  }
  bool value() {
    if (!frames_.empty() && !frames_.back().object) ++frames_.back().index;
    return true;
  }
  std::vector<Frame> frames_;
  std::string duplicate_;
  std::string error_;
};

}  // namespace detail

inline json parse_json_strict(const std::string& text) {
  detail::DuplicateKeyChecker checker;
  bool ok = json::sax_parse(text, &checker);
  if (!checker.duplicate().empty()) throw ConfigError("duplicate key", checker.duplicate());
  if (!ok) throw ConfigError(checker.error().empty() ? "malformed JSON" : checker.error());
  return json::parse(text);
}

// ---------------------------------------------------------------------------
// to_json

inline json to_json(const TriggerConfig& t) {
  return {{"mode", enum_name(t.mode)},   {"beta", t.beta},           {"init", enum_name(t.init)},
          {"patch_size", t.patch_size}, {"patch_value", t.patch_value}, {"path", t.path}};
}

inline json to_json(const AttackConfig& a) {
  return {{"kind", enum_name(a.kind)},
          {"target_label", a.target_label},
          {"poison_ratio", a.poison_ratio},
          {"lambda", a.lambda},
          {"enhance_steps", a.enhance_steps},
          {"trigger_lr", a.trigger_lr},
          {"trigger_update", enum_name(a.trigger_update)},
          {"attack_epochs", a.attack_epochs},
          {"attack_lr", a.attack_lr},
          {"grad_clip", detail::number_or_inf(a.grad_clip)},
          {"batch_size", a.batch_size},
          {"constraint", enum_name(a.constraint)},
          {"epsilon", a.epsilon},
          {"align_metric", enum_name(a.align_metric)},
          {"toggles", {{"utility", a.toggles.utility}, {"enhance", a.toggles.enhance}, {"consist", a.toggles.consist}}},
          {"slices", a.slices},
          {"resample_slices", a.resample_slices},
          {"boost", a.boost},
          {"pgd_radius", detail::number_or_inf(a.pgd_radius)},
          {"trigger", to_json(a.trigger)}};
}

inline json to_json(const ExperimentConfig& c) {
  json attackers = json::array();
  for (const auto& a : c.attackers)
    attackers.push_back({{"client_id", a.client_id},
                         {"attack", to_json(a.attack)},
                         {"participation", enum_name(a.participation)},
                         {"window_start", a.window_start},
                         {"window_end", a.window_end},
                         {"burst_start", a.burst_start},
                         {"burst_length", a.burst_length}});
  const auto& d = c.dataset;
  return {
      {"name", c.name},
      {"dataset",
       {{"kind", d.kind},
        {"classes", d.blobs.classes},
        {"per_class", d.blobs.per_class},
        {"input_dim", d.blobs.input_dim},
        {"separation", d.blobs.separation},
        {"noise_sigma", d.blobs.noise_sigma},
        {"seed", detail::optional_json(d.seed)},
        {"train_images", d.train_images},
        {"train_labels", d.train_labels},
        {"test_images", d.test_images},
        {"test_labels", d.test_labels},
        {"image_rows", d.image_rows},
        {"image_cols", d.image_cols}}},
      {"partition",
       {{"N", c.partition.clients},
        {"alpha", c.partition.alpha},
        {"seed", detail::optional_json(c.partition.seed)},
        {"attacker_min_target", c.partition.attacker_min_target}}},
      {"network", {{"hidden", c.network.hidden}, {"embedding_layer", c.network.embedding_layer}}},
      {"schedule",
       {{"T", c.schedule.rounds},
        {"m", c.schedule.clients_per_round},
        {"E", c.schedule.local_epochs},
        {"lr", c.schedule.lr},
        {"b", c.schedule.batch_size},
        {"eval_cadence", c.schedule.eval_cadence},
        {"workers", c.schedule.workers},
        {"checkpoint_rounds", c.schedule.checkpoint_rounds}}},
      {"attackers", attackers},
      {"defense",
       {{"kind", enum_name(c.defense.kind)},
        {"f", c.defense.f},
        {"noise_lambda", c.defense.noise_lambda},
        {"k_clusters", c.defense.k_clusters},
        {"clip_bound", detail::number_or_inf(c.defense.clip_bound)}}},
      {"aggregation", enum_name(c.aggregation)},
      {"master_seed", c.master_seed},
      {"output",
       {{"dir", c.output.dir},
        {"rounds_csv", c.output.rounds_csv},
        {"report_json", c.output.report_json},
        {"projection", c.output.projection},
        {"save_triggers", c.output.save_triggers}}},
  };
}

// ---------------------------------------------------------------------------
// from_json

namespace detail {

inline void read_trigger_config(const json& j, const std::string& path, TriggerConfig& t) {
  ObjectReader r(j, path);
  r.read("mode", t.mode);
  r.read("beta", t.beta);
  r.read("init", t.init);
  r.read("patch_size", t.patch_size);
  r.read("patch_value", t.patch_value);
  r.read("path", t.path);
  r.finish();
}

inline void read_attack(const json& j, const std::string& path, AttackConfig& a) {
  ObjectReader r(j, path);
  r.read("kind", a.kind);
  // Baseline attacks default to a fixed corner patch; the feature-alignment attack to an optimized blend.
  if (a.kind != AttackKind::spa) {
    a.trigger.mode = TriggerMode::patch;
    a.trigger.init = TriggerInit::patch;
  }
  r.read("target_label", a.target_label);
  r.read("poison_ratio", a.poison_ratio);
  r.read("lambda", a.lambda);
  r.read("enhance_steps", a.enhance_steps);
  r.read("trigger_lr", a.trigger_lr);
  r.read("trigger_update", a.trigger_update);
  r.read("attack_epochs", a.attack_epochs);
  r.read("attack_lr", a.attack_lr);
  r.read("grad_clip", a.grad_clip);
  r.read("batch_size", a.batch_size);
  r.read("constraint", a.constraint);
  r.read("epsilon", a.epsilon);
  r.read("align_metric", a.align_metric);
  if (const json* t = r.find("toggles")) {
    ObjectReader tr(*t, r.key_path("toggles"));
    tr.read("utility", a.toggles.utility);
    tr.read("enhance", a.toggles.enhance);
    tr.read("consist", a.toggles.consist);
    tr.finish();
  }
  r.read("slices", a.slices);
  r.read("resample_slices", a.resample_slices);
  r.read("boost", a.boost);
  r.read("pgd_radius", a.pgd_radius);
  if (const json* t = r.find("trigger")) read_trigger_config(*t, r.key_path("trigger"), a.trigger);
  r.finish();
}

}  // namespace detail

/// Checks cross-field invariants; throws ConfigError naming the key.
inline void validate(const ExperimentConfig& c) {
  const auto& d = c.dataset;
  if (d.kind != "blobs" && d.kind != "idx") throw ConfigError("expected blobs|idx", "dataset.kind");
  if (d.blobs.classes < 2) throw ConfigError("must be >= 2", "dataset.classes");
  if (d.kind == "blobs") {
    if (d.blobs.per_class < 2) throw ConfigError("must be >= 2", "dataset.per_class");
    if (d.blobs.input_dim == 0) throw ConfigError("must be positive", "dataset.input_dim");
    if (!(d.blobs.noise_sigma > 0.0)) throw ConfigError("must be positive", "dataset.noise_sigma");
    if (d.blobs.separation < 0.0) throw ConfigError("must be non-negative", "dataset.separation");
  } else {
    for (auto [key, val] : {std::pair{"train_images", &d.train_images}, {"train_labels", &d.train_labels},
                            {"test_images", &d.test_images}, {"test_labels", &d.test_labels}})
      if (val->empty()) throw ConfigError("required for idx datasets", std::string("dataset.") + key);
  }
  const auto& p = c.partition;
  if (p.clients < 2) throw ConfigError("must be >= 2", "partition.N");
  if (!(p.alpha > 0.0)) throw ConfigError("must be positive", "partition.alpha");
  if (c.network.hidden.empty()) throw ConfigError("at least one hidden layer", "network.hidden");
  for (std::size_t i = 0; i < c.network.hidden.size(); ++i)
    if (c.network.hidden[i] == 0) throw ConfigError("must be positive", "network.hidden[" + std::to_string(i) + "]");
  if (c.network.embedding_layer < -1 || c.network.embedding_layer >= static_cast<int>(c.network.hidden.size()))
    throw ConfigError("must index a hidden layer or be -1", "network.embedding_layer");
  const auto& s = c.schedule;
  if (s.rounds < 0) throw ConfigError("must be >= 0", "schedule.T");
  if (s.clients_per_round == 0 || s.clients_per_round > p.clients) throw ConfigError("must be in [1, N]", "schedule.m");
  if (s.local_epochs < 0) throw ConfigError("must be >= 0", "schedule.E");
  if (!(s.lr >= 0.0)) throw ConfigError("must be >= 0", "schedule.lr");
  if (s.batch_size == 0) throw ConfigError("must be positive", "schedule.b");
  if (s.eval_cadence < 1) throw ConfigError("must be >= 1", "schedule.eval_cadence");
  if (s.workers < 1) throw ConfigError("must be >= 1", "schedule.workers");

  std::set<int> ids;
  for (std::size_t i = 0; i < c.attackers.size(); ++i) {
    const auto& a = c.attackers[i];
    const std::string at = "attackers[" + std::to_string(i) + "]";
    if (a.client_id < 0 || static_cast<std::size_t>(a.client_id) >= p.clients)
      throw ConfigError("must be in [0, N)", at + ".client_id");
    if (!ids.insert(a.client_id).second) throw ConfigError("duplicate attacker id", at + ".client_id");
    if (a.window_start < 0) throw ConfigError("must be >= 0", at + ".window_start");
    if (a.window_end < a.window_start) throw ConfigError("must be >= window_start", at + ".window_end");
    if (a.participation == Participation::forced_burst) {
      if (a.burst_length < 1) throw ConfigError("must be >= 1", at + ".burst_length");
      if (a.burst_start < a.window_start || a.burst_start + a.burst_length - 1 > a.window_end)
        throw ConfigError("burst must lie inside the attack window", at + ".burst_start");
    }
    const auto& k = a.attack;
    const std::string ak = at + ".attack";
    if (k.target_label < 0 || k.target_label >= c.class_count()) throw ConfigError("must be in [0, C)", ak + ".target_label");
    if (k.kind != AttackKind::spa && !(k.poison_ratio > 0.0 && k.poison_ratio <= 1.0))
      throw ConfigError("must be in (0, 1]", ak + ".poison_ratio");
    if (k.lambda < 0.0) throw ConfigError("must be >= 0", ak + ".lambda");
    if (k.enhance_steps < 0) throw ConfigError("must be >= 0", ak + ".enhance_steps");
    if (k.trigger_lr < 0.0) throw ConfigError("must be >= 0", ak + ".trigger_lr");
    if (k.attack_epochs < 0) throw ConfigError("must be >= 0", ak + ".attack_epochs");
    if (k.attack_lr < 0.0) throw ConfigError("must be >= 0", ak + ".attack_lr");
    if (!(k.grad_clip > 0.0)) throw ConfigError("must be positive", ak + ".grad_clip");
    if (k.batch_size == 0) throw ConfigError("must be positive", ak + ".batch_size");
    if (!(k.epsilon > 0.0)) throw ConfigError("must be positive", ak + ".epsilon");
    if (k.slices == 0) throw ConfigError("must be positive", ak + ".slices");
    if (!(k.pgd_radius >= 0.0)) throw ConfigError("must be >= 0", ak + ".pgd_radius");
    if (k.trigger.mode == TriggerMode::blend && !(k.trigger.beta > 0.0f && k.trigger.beta <= 1.0f))
      throw ConfigError("must be in (0, 1]", ak + ".trigger.beta");
    if (k.trigger.init == TriggerInit::file && k.trigger.path.empty())
      throw ConfigError("required when init is file", ak + ".trigger.path");
  }
  const auto& df = c.defense;
  if (df.kind == DefenseKind::multikrum && s.clients_per_round < static_cast<std::size_t>(std::max(df.f, 0)) + 3)
    throw ConfigError("multikrum needs m >= f + 3", "defense.f");
  if (df.f < 0) throw ConfigError("must be >= 0", "defense.f");
  if (df.noise_lambda < 0.0) throw ConfigError("must be >= 0", "defense.noise_lambda");
  if (df.kind == DefenseKind::rflbat && (df.k_clusters == 0 || df.k_clusters > s.clients_per_round))
    throw ConfigError("must be in [1, m]", "defense.k_clusters");
  if (!(df.clip_bound > 0.0)) throw ConfigError("must be positive", "defense.clip_bound");
  if (c.output.rounds_csv.empty()) throw ConfigError("must not be empty", "output.rounds_csv");
  if (c.output.report_json.empty()) throw ConfigError("must not be empty", "output.report_json");
}

inline ExperimentConfig config_from_json(const json& j) {
  using detail::ObjectReader;
  ExperimentConfig c;
  ObjectReader r(j, "");
  r.read("name", c.name);
  if (const json* d = r.find("dataset")) {
    ObjectReader dr(*d, "dataset");
    dr.read("kind", c.dataset.kind);
    dr.read("classes", c.dataset.blobs.classes);
    dr.read("per_class", c.dataset.blobs.per_class);
    dr.read("input_dim", c.dataset.blobs.input_dim);
    dr.read("separation", c.dataset.blobs.separation);
    dr.read("noise_sigma", c.dataset.blobs.noise_sigma);
    dr.read("seed", c.dataset.seed);
    dr.read("train_images", c.dataset.train_images);
    dr.read("train_labels", c.dataset.train_labels);
    dr.read("test_images", c.dataset.test_images);
    dr.read("test_labels", c.dataset.test_labels);
    dr.read("image_rows", c.dataset.image_rows);
    dr.read("image_cols", c.dataset.image_cols);
    dr.finish();
  }
  if (const json* p = r.find("partition")) {
    ObjectReader pr(*p, "partition");
    pr.read("N", c.partition.clients);
    pr.read("alpha", c.partition.alpha);
    pr.read("seed", c.partition.seed);
    pr.read("attacker_min_target", c.partition.attacker_min_target);
    pr.finish();
  }
  if (const json* n = r.find("network")) {
    ObjectReader nr(*n, "network");
    nr.read("hidden", c.network.hidden);
    nr.read("embedding_layer", c.network.embedding_layer);
    nr.finish();
  }
  if (const json* s = r.find("schedule")) {
    ObjectReader sr(*s, "schedule");
    sr.read("T", c.schedule.rounds);
    sr.read("m", c.schedule.clients_per_round);
    sr.read("E", c.schedule.local_epochs);
    sr.read("lr", c.schedule.lr);
    sr.read("b", c.schedule.batch_size);
    sr.read("eval_cadence", c.schedule.eval_cadence);
    sr.read("workers", c.schedule.workers);
    sr.read("checkpoint_rounds", c.schedule.checkpoint_rounds);
    sr.finish();
  }
  if (const json* a = r.find("attackers")) {
    if (!a->is_array()) throw ConfigError("expected an array", "attackers");
    for (std::size_t i = 0; i < a->size(); ++i) {
      const std::string path = "attackers[" + std::to_string(i) + "]";
      ObjectReader ar((*a)[i], path);
      AttackerEntry e;
      ar.read("client_id", e.client_id);
      if (const json* atk = ar.find("attack")) detail::read_attack(*atk, path + ".attack", e.attack);
      ar.read("participation", e.participation);
      ar.read("window_start", e.window_start);
      ar.read("window_end", e.window_end);
      e.burst_start = e.window_start;
      ar.read("burst_start", e.burst_start);
      ar.read("burst_length", e.burst_length);
      ar.finish();
      c.attackers.push_back(std::move(e));
    }
  }
  if (const json* d = r.find("defense")) {
    ObjectReader dr(*d, "defense");
    dr.read("kind", c.defense.kind);
    dr.read("f", c.defense.f);
    dr.read("noise_lambda", c.defense.noise_lambda);
    dr.read("k_clusters", c.defense.k_clusters);
    dr.read("clip_bound", c.defense.clip_bound);
    dr.finish();
  }
  r.read("aggregation", c.aggregation);
  r.read("master_seed", c.master_seed);
  if (const json* o = r.find("output")) {
    ObjectReader orr(*o, "output");
    orr.read("dir", c.output.dir);
    orr.read("rounds_csv", c.output.rounds_csv);
    orr.read("report_json", c.output.report_json);
    orr.read("projection", c.output.projection);
    orr.read("save_triggers", c.output.save_triggers);
    orr.finish();
  }
  r.finish();
  validate(c);
  return c;
}

// ---------------------------------------------------------------------------
// Dotted-path overrides: "schedule.T=0", "attackers[0].attack.lambda=6",
// "attackers.0.attack.kind=vanilla". Values parse as JSON when possible, else as strings.

inline void apply_override(json& root, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: '" + assignment + "'");
  std::string path = assignment.substr(0, eq);
  std::string raw = assignment.substr(eq + 1);
  std::vector<std::string> parts;
  std::string cur;
  for (char ch : path) {
    if (ch == '.' || ch == '[') {
      if (!cur.empty()) parts.push_back(cur);
      cur.clear();
    } else if (ch != ']') {
      cur += ch;
    }
  }
  if (!cur.empty()) parts.push_back(cur);
  if (parts.empty()) throw ConfigError("empty override path");
  json value;
  detail::DuplicateKeyChecker checker;
  if (json::sax_parse(raw, &checker)) {
    value = json::parse(raw);
  } else {
    if (!checker.duplicate().empty()) throw ConfigError("duplicate key in override value", path + "." + checker.duplicate());
    value = raw;
  }
  json* node = &root;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto& p = parts[i];
    const bool last = i + 1 == parts.size();
    bool numeric = !p.empty() && std::all_of(p.begin(), p.end(), [](char ch) { return ch >= '0' && ch <= '9'; });
    if (node->is_array()) {
      if (!numeric) throw ConfigError("expected an array index", path);
      std::size_t idx = std::stoul(p);
      if (idx >= node->size()) throw ConfigError("array index out of range", path);
      node = &(*node)[idx];
    } else {
      if (node->is_null()) *node = json::object();
      if (!node->is_object()) throw ConfigError("cannot descend into a scalar", path);
      node = &(*node)[p];
    }
    if (last) *node = value;
  }
}

inline ExperimentConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides = {}) {
  json j = parse_json_strict(text);
  for (const auto& o : overrides) apply_override(j, o);
  return config_from_json(j);
}

inline ExperimentConfig parse_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str(), overrides);
}

}  // namespace fedspa
