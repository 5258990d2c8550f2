// fedspa: run federated backdoor experiments from JSON configs.
#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "fedspa/flcore.hpp"
#include "fedspa/presets.hpp"

namespace fs = std::filesystem;
using namespace fedspa;

namespace {

fs::path output_dir(const ExperimentConfig& cfg) {
  fs::path dir = cfg.output.dir;
  if (dir.is_relative())
    if (const char* root = std::getenv("FEDSPA_OUTPUT_ROOT"); root && *root) dir = fs::path(root) / dir;
  return dir;
}

std::ofstream open_out(const fs::path& p, std::ios::openmode mode = std::ios::out) {
  std::ofstream os(p, mode);
  if (!os) throw IoError("cannot open " + p.string() + " for writing");
  return os;
}

void write_text(const fs::path& p, const std::string& text) {
  auto os = open_out(p, std::ios::out | std::ios::binary);
  os << text;
  if (!os) throw IoError("write failed for " + p.string());
}

int cmd_run(const std::string& path, const std::vector<std::string>& sets, bool dry_run) {
  auto cfg = parse_config(path, sets);
  if (dry_run) {
    std::cout << to_json(cfg).dump(2) << "\n";
    return 0;
  }
  fs::path dir = output_dir(cfg);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  // Rounds are streamed so a failing round still leaves the earlier ones on disk.
  std::ofstream csv;
  if (cfg.schedule.rounds > 0) {
    csv = open_out(dir / cfg.output.rounds_csv, std::ios::out | std::ios::binary);
    csv << rounds_csv_header() << std::flush;
  }
  auto rep = run_experiment(cfg, [&](const RoundRecord& r) {
    csv << to_csv_line(r) << std::flush;
    if (r.acc)
      std::cerr << "round " << r.round << " acc " << *r.acc << (r.asr ? " asr " + std::to_string(*r.asr) : "")
                << "\n";
  });
  if (csv.is_open() && !csv) throw IoError("write failed for rounds csv");

  write_text(dir / cfg.output.report_json, to_json(rep).dump(2) + "\n");
  if (cfg.schedule.rounds == 0) return 0;
  if (!rep.projection_csv.empty()) write_text(dir / "projection.csv", rep.projection_csv);
  for (const auto& [round, params] : rep.checkpoints)
    save_params((dir / ("checkpoint_" + std::to_string(round) + ".bin")).string(), params);
  if (cfg.output.save_triggers)
    for (const auto& a : rep.attackers)
      save_trigger((dir / ("trigger_" + std::to_string(a.client_id) + ".bin")).string(), a.trigger);
  std::cerr << "final acc " << rep.final.acc;
  if (!rep.attackers.empty()) std::cerr << " asr " << rep.final.asr;
  std::cerr << "\n";
  return 0;
}

int cmd_preset(const std::string& name, const std::string& out) {
  auto configs = preset(name);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out + ": " + ec.message());
  for (const auto& c : configs) {
    fs::path p = fs::path(out) / (c.name + ".json");
    write_text(p, to_json(c).dump(2) + "\n");
    std::cout << p.string() << "\n";
  }
  return 0;
}

// Triggers travel as JSON for editing and as the binary format for `trigger.init = file`.
int cmd_export_trigger(const std::string& in, const std::string& out) {
  auto t = load_trigger(in);
  json j{{"mode", enum_name(t.mode)}, {"beta", t.beta}, {"pattern", t.pattern}};
  if (t.mode == TriggerMode::patch) j["mask"] = t.mask;
  write_text(out, j.dump(2) + "\n");
  return 0;
}

int cmd_import_trigger(const std::string& in, const std::string& out) {
  std::ifstream is(in);
  if (!is) throw IoError("cannot open " + in);
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  json j = parse_json_strict(text);
  TriggerSpec t;
  try {
    t.mode = enum_from_name<TriggerMode>(j.at("mode").get<std::string>(), "mode");
    t.beta = j.at("beta").get<float>();
    t.pattern = j.at("pattern").get<std::vector<float>>();
    if (j.contains("mask")) t.mask = j.at("mask").get<std::vector<float>>();
  } catch (const json::exception& e) {
    throw FormatError(in + ": " + e.what());
  }
  t.validate();
  save_trigger(out, t);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated learning backdoor experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> sets;
  bool dry_run = false;
  auto* run = app.add_subcommand("run", "Run an experiment");
  run->add_option("config", config_path, "Experiment config (JSON)")->required();
  run->add_option("--set", sets, "Override, e.g. schedule.T=0 (repeatable)")->take_all();
  run->add_flag("--dry-run", dry_run, "Validate and echo the config only");

  std::string preset_name, preset_out;
  auto* pre = app.add_subcommand("preset", "Write a family of configs");
  pre->add_option("name", preset_name)->required()->check(CLI::IsMember(preset_names()));
  pre->add_option("--out", preset_out)->required();

  std::string t_in, t_out;
  auto* exp = app.add_subcommand("export-trigger", "Binary trigger -> JSON");
  exp->add_option("trigger", t_in)->required();
  exp->add_option("--out", t_out)->required();
  auto* imp = app.add_subcommand("import-trigger", "JSON trigger -> binary");
  imp->add_option("json", t_in)->required();
  imp->add_option("--out", t_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::validation);
  }

  try {
    if (*run) return cmd_run(config_path, sets, dry_run);
    if (*pre) return cmd_preset(preset_name, preset_out);
    if (*exp) return cmd_export_trigger(t_in, t_out);
    if (*imp) return cmd_import_trigger(t_in, t_out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::io);
  }
  return 0;
}
