#pragma once

#include <string>
#include <vector>

#include "fedspa/config.hpp"

namespace fedspa {

/// Desk-scale experiment families. Every config uses master_seed 0; sweep seeds with
/// `--set master_seed=N`.
inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"table1_point",  "alpha_sweep",        "persistence",
                                              "multi_label",   "lambda_sweep",       "norm_ablation",
                                              "component_ablation", "trigger_constraint"};
  return names;
}

namespace detail {

inline AttackConfig desk_attack(AttackKind kind, int target = 0) {
  AttackConfig a;
  a.kind = kind;
  a.target_label = target;
  if (kind == AttackKind::spa) {
    a.trigger.beta = 0.5f;
  } else {
    a.trigger.mode = TriggerMode::patch;
    a.trigger.init = TriggerInit::patch;
  }
  return a;
}

inline ExperimentConfig desk_config(const std::string& name, AttackKind kind) {
  ExperimentConfig c;
  c.name = name;
  AttackerEntry e;
  e.client_id = 0;
  e.attack = desk_attack(kind);
  c.attackers.push_back(e);
  return c;
}

inline std::string fmt_num(double v) {
  std::string s = std::to_string(v);
  s.erase(s.find_last_not_of('0') + 1);
  if (!s.empty() && s.back() == '.') s.pop_back();
  return s;
}

}  // namespace detail

inline std::vector<ExperimentConfig> preset(const std::string& name) {
  using detail::desk_config;
  std::vector<ExperimentConfig> out;
  if (name == "table1_point") {
    for (auto d : {DefenseKind::none, DefenseKind::multikrum, DefenseKind::foolsgold, DefenseKind::flame,
                   DefenseKind::rflbat})
      for (auto k : {AttackKind::vanilla, AttackKind::spa}) {
        auto c = desk_config(std::string("table1_") + enum_name(d) + "_" + enum_name(k), k);
        c.defense.kind = d;
        out.push_back(c);
      }
  } else if (name == "alpha_sweep") {
    for (double a : {0.5, 1.0, 5.0, 10.0, 1000.0}) {
      auto c = desk_config("alpha_" + detail::fmt_num(a), AttackKind::spa);
      c.partition.alpha = a;
      out.push_back(c);
    }
  } else if (name == "persistence") {
    for (auto k : {AttackKind::vanilla, AttackKind::spa}) {
      auto c = desk_config(std::string("persistence_") + enum_name(k), k);
      c.schedule.rounds = c.attackers[0].window_end + 101;
      c.schedule.eval_cadence = 1;
      out.push_back(c);
    }
  } else if (name == "multi_label") {
    for (auto k : {AttackKind::vanilla, AttackKind::spa}) {
      auto c = desk_config(std::string("multi_label_") + enum_name(k), k);
      c.attackers.clear();
      for (int i = 0; i < 3; ++i) {
        AttackerEntry e;
        e.client_id = i;
        e.attack = detail::desk_attack(k, i);
        c.attackers.push_back(e);
      }
      out.push_back(c);
    }
  } else if (name == "lambda_sweep") {
    for (double l : {0.0, 0.3, 0.6, 1.0, 6.0, 10.0}) {
      auto c = desk_config("lambda_" + detail::fmt_num(l), AttackKind::spa);
      c.attackers[0].attack.lambda = l;
      out.push_back(c);
    }
  } else if (name == "norm_ablation") {
    for (auto m : {AlignMetric::swd, AlignMetric::l2, AlignMetric::cosine, AlignMetric::kl}) {
      auto c = desk_config(std::string("norm_") + enum_name(m), AttackKind::spa);
      c.attackers[0].attack.align_metric = m;
      out.push_back(c);
    }
  } else if (name == "component_ablation") {
    struct Row {
      const char* name;
      SpaToggles t;
    };
    for (const auto& row : {Row{"full", {true, true, true}}, Row{"no_consist", {true, true, false}},
                            Row{"no_utility", {false, true, true}}, Row{"no_enhance", {true, false, false}},
                            Row{"align_only", {false, false, false}}}) {
      auto c = desk_config(std::string("ablation_") + row.name, AttackKind::spa);
      c.attackers[0].attack.toggles = row.t;
      out.push_back(c);
    }
  } else if (name == "trigger_constraint") {
    for (auto m : {ConstraintMode::feature_consistency, ConstraintMode::linf}) {
      auto c = desk_config(std::string("constraint_") + enum_name(m), AttackKind::spa);
      c.attackers[0].attack.constraint = m;
      out.push_back(c);
    }
  } else {
    throw ArgumentError("unknown preset '" + name + "'");
  }
  for (auto& c : out) c.output.dir = c.name;
  return out;
}

}  // namespace fedspa
