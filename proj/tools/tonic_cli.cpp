#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "tonic/harness.hpp"

namespace {

using tonic::RunConfig;

// One string option per config key; unset ones leave the config untouched.
struct ConfigFlags {
  std::string file;
  std::map<std::string, std::string> values;

  void attach(CLI::App& app) {
    app.add_option("--config", file, "key = value config file");
    for (const auto& [key, def] : RunConfig{}.to_map()) {
      auto flag = "--" + key;
      for (auto& ch : flag)
        if (ch == '_') ch = '-';
      app.add_option(flag, values[key], "default: " + def);
    }
  }

  RunConfig resolve() const {
    RunConfig c = file.empty() ? RunConfig{} : tonic::load_config(file);
    for (const auto& [key, v] : values)
      if (!v.empty()) c.set(key, v);
    c.validate();
    return c;
  }
};

void write_text(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text;
}

std::string csv_text(const tonic::RunReport& r) {
  std::ostringstream os;
  tonic::write_csv(os, r.rows);
  return os.str();
}

std::string artifact_path(const std::string& out) {
  if (!out.empty()) return out;
  const char* dir = std::getenv("TONIC_ARTIFACT_DIR");
  const std::filesystem::path base = dir && *dir ? dir : ".";
  std::filesystem::create_directories(base);
  return (base / "artifacts.json").string();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Token-centric semantic communication simulator"};
  app.require_subcommand(1);

  auto* prepare = app.add_subcommand("prepare", "compute offline artifacts (groupings, curves, profiles, thresholds)");
  ConfigFlags prepare_flags;
  prepare_flags.attach(*prepare);
  std::string prepare_out;
  prepare->add_option("--out", prepare_out, "artifact JSON path (default $TONIC_ARTIFACT_DIR/artifacts.json)");

  auto* run = app.add_subcommand("run", "run the Monte Carlo sweep");
  ConfigFlags run_flags;
  run_flags.attach(*run);
  std::string run_csv = "-", run_json;
  run->add_option("--csv", run_csv, "CSV output path, '-' for stdout");
  run->add_option("--json", run_json, "JSON report path");

  auto* dump = app.add_subcommand("config", "print the resolved configuration");
  ConfigFlags dump_flags;
  dump_flags.attach(*dump);

  auto* report = app.add_subcommand("report", "re-emit CSV from a JSON report");
  std::string report_in, report_csv = "-";
  report->add_option("input", report_in, "JSON report")->required();
  report->add_option("--csv", report_csv, "CSV output path, '-' for stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*prepare) {
      const tonic::Experiment e(prepare_flags.resolve());
      const auto path = artifact_path(prepare_out);
      write_text(path, tonic::prepare_artifacts(e).dump(2) + "\n");
      std::cerr << "wrote " << path << "\n";
    } else if (*run) {
      const auto r = tonic::run_sweep(run_flags.resolve());
      write_text(run_csv, csv_text(r));
      if (!run_json.empty()) write_text(run_json, tonic::to_json(r).dump(2) + "\n");
    } else if (*dump) {
      std::ostringstream os;
      tonic::write_config(os, dump_flags.resolve());
      std::cout << os.str();
    } else if (*report) {
      std::ifstream f(report_in);
      if (!f) throw std::runtime_error("cannot open " + report_in);
      write_text(report_csv, csv_text(tonic::report_from_json(nlohmann::json::parse(f))));
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
