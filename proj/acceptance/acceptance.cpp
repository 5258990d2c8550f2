// Acceptance criteria 1-9. One PASS/FAIL line per criterion; medians over seeds 0-2.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedspa/defenses.hpp"
#include "fedspa/diffnet.hpp"
#include "fedspa/distances.hpp"
#include "fedspa/flcore.hpp"
#include "fedspa/presets.hpp"

using namespace fedspa;

namespace {

constexpr int kSeeds = 3;

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

ExperimentConfig find(const std::string& family, const std::string& name) {
  for (auto& c : preset(family))
    if (c.name == name) return c;
  throw ArgumentError("no preset config " + name);
}

ExperimentConfig seeded(ExperimentConfig c, int seed) {
  c.master_seed = static_cast<std::uint64_t>(seed);
  return c;
}

ExperimentReport run(const ExperimentConfig& c, int seed) { return run_experiment(seeded(c, seed)); }

ExperimentConfig clean_twin(ExperimentConfig c) {
  c.attackers.clear();
  return c;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1e", v);
  return buf;
}

struct Outcome {
  bool pass;
  std::string detail;
};

// ---- 1: oracles -----------------------------------------------------------

double central_diff(std::vector<double>& x, std::size_t i, const std::function<double()>& f, double h = 1e-4) {
  const double keep = x[i];
  x[i] = keep + h;
  double up = f();
  x[i] = keep - h;
  double down = f();
  x[i] = keep;
  return (up - down) / (2 * h);
}

double rel_err(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}); }

Outcome oracles() {
  Rng rng(314);
  double worst_fd = 0.0;
  for (std::vector<std::size_t> hidden : {std::vector<std::size_t>{8}, {6, 5}, {8, 7, 4}}) {
    NetworkSpec spec;
    spec.input_dim = 5;
    spec.hidden_dims = hidden;
    spec.num_classes = 4;
    std::vector<double> p(spec.param_count());
    for (auto& v : p) v = 0.8 * standard_normal(rng);
    BasicBatch<double> b;
    b.inputs = Matrix<double>(6, spec.input_dim);
    for (auto& v : b.inputs.values()) v = uniform01(rng);
    for (int i = 0; i < 6; ++i) b.labels.push_back(int(uniform_index(rng, spec.num_classes)));
    auto g = evaluate_loss<double>(spec, p, b, CrossEntropy{}, true, true);
    auto f = [&] { return evaluate_loss<double>(spec, p, b, CrossEntropy{}, false, false).loss; };
    for (std::size_t i = 0; i < p.size(); ++i) worst_fd = std::max(worst_fd, rel_err(g.param_grad[i], central_diff(p, i, f)));
    auto& x = b.inputs.values();
    for (std::size_t i = 0; i < x.size(); ++i)
      worst_fd = std::max(worst_fd, rel_err(g.input_grad.values()[i], central_diff(x, i, f)));
  }

  for (auto [n, m] : {std::pair<std::size_t, std::size_t>{6, 6}, {5, 8}}) {
    Matrix<double> a(n, 3), b(m, 3);
    for (auto& v : a.values()) v = standard_normal(rng);
    for (auto& v : b.values()) v = standard_normal(rng) + 0.5;
    auto basis = sample_slices<double>(3, 16, rng);
    auto r = sliced_wasserstein<double>(a, b, basis, true);
    auto f = [&] { return sliced_wasserstein<double>(a, b, basis).value; };
    for (std::size_t i = 0; i < a.size(); ++i)
      worst_fd = std::max(worst_fd, rel_err(r.grad_a.values()[i], central_diff(a.values(), i, f, 1e-6)));
    for (std::size_t i = 0; i < b.size(); ++i)
      worst_fd = std::max(worst_fd, rel_err(r.grad_b.values()[i], central_diff(b.values(), i, f, 1e-6)));
  }
  for (int k = 0; k < 20; ++k) {
    std::vector<double> a(6), b(6);
    for (auto& v : a) v = standard_normal(rng);
    for (auto& v : b) v = standard_normal(rng);
    auto r = proj_distance<double>(a, b, true);
    auto f = [&] { return proj_distance<double>(a, b).value; };
    for (std::size_t i = 0; i < 6; ++i) {
      worst_fd = std::max(worst_fd, rel_err(r.grad_a[i], central_diff(a, i, f)));
      worst_fd = std::max(worst_fd, rel_err(r.grad_b[i], central_diff(b, i, f)));
    }
  }

  double worst_sw = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::size_t n = 1 + uniform_index(rng, 20), m = 1 + uniform_index(rng, 20);
    std::vector<double> a(n), c(m);
    for (auto& v : a) v = standard_normal(rng);
    for (auto& v : c) v = 1.5 * standard_normal(rng) + 0.3;
    auto basis = sample_slices<double>(1, 1 + uniform_index(rng, 8), rng);
    double sw = sliced_wasserstein<double>(Matrix<double>(n, 1, a), Matrix<double>(m, 1, c), basis).value;
    worst_sw = std::max(worst_sw, std::abs(sw * sw - exact_w1_1d(a, c)));
  }

  int krum_bad = 0, krum_cases = 0;
  for (std::size_t n = 3; n <= 8; ++n)
    for (int f = 0; std::size_t(f) + 3 <= n; ++f)
      for (int trial = 0; trial < 10; ++trial, ++krum_cases) {
        std::vector<ClientUpdate> u;
        for (std::size_t i = 0; i < n; ++i) {
          ParamVector q(3);
          for (auto& v : q) v = float(int(uniform_index(rng, 4)) - 1);
          u.push_back({int(i), q, 10});
        }
        auto sq = [&](std::size_t i, std::size_t j) {
          double s = 0.0;
          for (std::size_t k = 0; k < 3; ++k) s += double(u[i].params[k] - u[j].params[k]) * (u[i].params[k] - u[j].params[k]);
          return s;
        };
        const std::size_t keep = n - std::size_t(f) - 2;
        std::vector<double> score(n, std::numeric_limits<double>::infinity());
        for (std::size_t i = 0; i < n; ++i)
          for (unsigned mask = 0; mask < (1u << n); ++mask) {
            if ((mask >> i) & 1u || std::size_t(__builtin_popcount(mask)) != keep) continue;
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j)
              if ((mask >> j) & 1u) s += sq(i, j);
            score[i] = std::min(score[i], s);
          }
        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int c) { return score[a] < score[c]; });
        std::vector<int> want(order.begin(), order.begin() + long(keep));
        std::sort(want.begin(), want.end());
        if (multikrum(u, f).kept_ids != want) ++krum_bad;
      }

  bool ok = worst_fd < 1e-3 && worst_sw < 1e-6 && krum_bad == 0;
  return {ok, "fd_rel=" + sci(worst_fd) + " sw_abs=" + sci(worst_sw) + " krum_mismatch=" +
                  std::to_string(krum_bad) + "/" + std::to_string(krum_cases)};
}

// ---- 2: determinism -------------------------------------------------------

std::string transcript(const ExperimentReport& r) {
  std::string s = rounds_csv_header();
  for (auto& rec : r.rounds) s += to_csv_line(rec);
  auto j = to_json(r);
  j["config"]["schedule"]["workers"] = 0;
  return s + j.dump();
}

Outcome determinism() {
  int differ = 0, total = 0;
  for (const auto& name : {"table1_multikrum_spa", "table1_foolsgold_vanilla", "table1_flame_spa"}) {
    auto c = find("table1_point", name);
    c.schedule.rounds = 130;
    c.schedule.workers = 1;
    auto a = transcript(run(c, 1));
    c.schedule.workers = 4;
    auto b = transcript(run(c, 1));
    auto again = transcript(run(c, 1));
    differ += (a != b) + (b != again);
    total += 2;
  }
  return {differ == 0, std::to_string(total - differ) + "/" + std::to_string(total) + " transcripts identical"};
}

// ---- 3, 4, 6: ASR grids ---------------------------------------------------

Outcome headline() {
  auto c = find("table1_point", "table1_none_spa");
  std::vector<double> asr, drop;
  for (int s = 0; s < kSeeds; ++s) {
    auto r = run(c, s);
    asr.push_back(r.final.asr);
    drop.push_back(run(clean_twin(c), s).final.acc - r.final.acc);
  }
  double a = median(asr), d = median(drop);
  return {a >= 0.90 && d <= 0.02, "asr=" + fmt(a) + " acc_drop=" + fmt(d)};
}

Outcome multikrum_bypass() {
  std::vector<double> van, spa;
  for (int s = 0; s < kSeeds; ++s) {
    van.push_back(run(find("table1_point", "table1_multikrum_vanilla"), s).final.asr);
    spa.push_back(run(find("table1_point", "table1_multikrum_spa"), s).final.asr);
  }
  double v = median(van), p = median(spa);
  return {v <= 0.15 && p >= 0.80, "vanilla=" + fmt(v) + " spa=" + fmt(p)};
}

Outcome alpha_sweep() {
  bool ok = true;
  std::string detail;
  for (auto& c : preset("alpha_sweep")) {
    std::vector<double> asr;
    for (int s = 0; s < kSeeds; ++s) asr.push_back(run(c, s).final.asr);
    double m = median(asr);
    ok = ok && m >= 0.85;
    detail += (detail.empty() ? "" : " ") + c.name + "=" + fmt(m);
  }
  return {ok, detail};
}

// ---- 5: persistence -------------------------------------------------------

Outcome persistence() {
  std::vector<double> hl_van, hl_spa, ratio;
  for (int s = 0; s < kSeeds; ++s)
    for (auto& c : preset("persistence")) {
      auto r = run(c, s);
      const int end = c.attackers[0].window_end;
      std::map<int, double> by_round;
      for (auto& rec : r.rounds)
        if (rec.asr) by_round[rec.round] = *rec.asr;
      auto curve = persistence_curve(by_round, end);
      if (c.attackers[0].attack.kind == AttackKind::spa) {
        hl_spa.push_back(curve.half_life);
        ratio.push_back(curve.peak > 0 ? by_round.at(end + 100) / curve.peak : 0.0);
      } else {
        hl_van.push_back(curve.half_life);
      }
    }
  double v = median(hl_van), p = median(hl_spa), q = median(ratio);
  return {p >= 3 * v && q >= 0.7, "half_life vanilla=" + fmt(v) + " spa=" + fmt(p) + " spa_retained=" + fmt(q)};
}

// ---- 7: component ablation ------------------------------------------------

Outcome ablation() {
  std::map<std::string, double> m;
  for (auto& c : preset("component_ablation")) {
    std::vector<double> asr;
    for (int s = 0; s < kSeeds; ++s) asr.push_back(run(c, s).final.asr);
    m[c.name.substr(std::string("ablation_").size())] = median(asr);
  }
  bool ok = m["full"] >= m["no_consist"] && m["no_consist"] >= m["no_utility"] && m["full"] - m["align_only"] >= 0.3;
  std::string detail;
  for (auto& [k, v] : m) detail += (detail.empty() ? "" : " ") + k + "=" + fmt(v);
  return {ok, detail};
}

// ---- 8: embedding alignment -----------------------------------------------

Outcome alignment() {
  std::vector<double> al_spa, al_van, target_shift;
  for (int s = 0; s < kSeeds; ++s) {
    auto spa = run(find("table1_point", "table1_none_spa"), s);
    auto van = run(find("table1_point", "table1_none_vanilla"), s);
    auto twin = run(clean_twin(find("table1_point", "table1_none_spa")), s);
    const auto t = static_cast<std::size_t>(spa.attackers[0].target);
    al_spa.push_back(spa.attackers[0].alignment.value_or(NAN));
    al_van.push_back(van.attackers[0].alignment.value_or(NAN));
    double base = double(twin.final.confusion[t][t]);
    target_shift.push_back(std::abs(double(spa.final.confusion[t][t]) - base) / std::max(base, 1.0));
  }
  double a = median(al_spa), b = median(al_van), d = median(target_shift);
  return {a < 1.0 && b > 1.0 && d <= 0.05,
          "alignment spa=" + fmt(a) + " vanilla=" + fmt(b) + " target_correct_shift=" + fmt(d)};
}

// ---- 9: multi-label -------------------------------------------------------

Outcome multi_label() {
  std::vector<std::vector<double>> spa(3), van(3);
  for (int s = 0; s < kSeeds; ++s)
    for (auto& c : preset("multi_label")) {
      auto r = run(c, s);
      auto& dst = c.attackers[0].attack.kind == AttackKind::spa ? spa : van;
      for (std::size_t i = 0; i < 3; ++i) dst[i].push_back(r.attackers[i].final_asr);
    }
  bool every_spa = true, some_van = false;
  std::string detail = "spa=";
  for (auto& v : spa) {
    every_spa = every_spa && median(v) >= 0.8;
    detail += fmt(median(v)) + ",";
  }
  detail.back() = ' ';
  detail += "vanilla=";
  for (auto& v : van) {
    some_van = some_van || median(v) <= 0.3;
    detail += fmt(median(v)) + ",";
  }
  detail.pop_back();
  return {every_spa && some_van, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<int> known_gaps, only;
  app.add_option("--known-gap", known_gaps, "criteria whose FAIL does not affect the exit status");
  app.add_option("--only", only, "run a subset of criteria");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<const char*, Outcome (*)()>> criteria{
      {"gradient, SWD and multikrum oracles", oracles},
      {"determinism across worker counts", determinism},
      {"SPA ASR >= 0.90 with ACC drop <= 0.02", headline},
      {"multikrum f=1: vanilla <= 0.15, SPA >= 0.80", multikrum_bypass},
      {"persistence: half-life >= 3x vanilla, retention >= 0.7", persistence},
      {"SPA ASR >= 0.85 for every alpha", alpha_sweep},
      {"ablation order full >= no_consist >= no_utility, full - align_only >= 0.3", ablation},
      {"embedding alignment and target-class accuracy", alignment},
      {"multi-label: every SPA >= 0.8, some vanilla <= 0.3", multi_label},
  };
  int blocking = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = int(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    auto [desc, fn] = criteria[i];
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    bool gap = std::find(known_gaps.begin(), known_gaps.end(), id) != known_gaps.end();
    std::printf("criterion %d: %s  %s  [%s]%s\n", id, o.pass ? "PASS" : "FAIL", desc, o.detail.c_str(),
                !o.pass && gap ? " (known gap)" : "");
    std::fflush(stdout);
    if (!o.pass && !gap) ++blocking;
  }
  return blocking == 0 ? 0 : 1;
}
