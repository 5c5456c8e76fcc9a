#include "needlenav/needlenav.h"

#include "CLI11.hpp"
#include "json.hpp"

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>

namespace {

constexpr int kExitError = 2;
constexpr int kExitCheckFailed = 1;

std::atomic<bool> g_interrupted{false};

struct Failure {
  nn_status status;
  std::string message;
};

void check(nn_status status) {
  if (status != NN_OK) throw Failure{status, nn_last_error()};
}

// Owns a string returned by the library.
std::string take(char* s) {
  std::string out(s ? s : "");
  nn_string_free(s);
  return out;
}

struct ConfigHandle {
  nn_config* ptr = nullptr;
  explicit ConfigHandle(const std::string& path) {
    check(path.empty() ? nn_config_default(&ptr) : nn_config_load(path.c_str(), &ptr));
  }
  ~ConfigHandle() { nn_config_free(ptr); }
};

void print_row(const char* name, const nlohmann::json& row) {
  std::printf("  %-13s", name);
  for (int k = 0; k < 3; ++k)
    std::printf(" %7.3f (%6.3f)", row["mean"][k].get<double>(), row["max"][k].get<double>());
  std::printf("   %7.3f (%6.3f)\n", row["norm_mean"].get<double>(), row["norm_max"].get<double>());
}

int run_experiment(const std::string& config, std::size_t trials, std::uint64_t seed, const std::string& out) {
  ConfigHandle cfg(config);
  nn_report* report = nullptr;
  check(nn_experiment_run(cfg.ptr, trials, seed, &report));
  std::unique_ptr<nn_report, decltype(&nn_report_free)> guard(report, nn_report_free);
  check(nn_report_write(report, out.c_str()));

  char* text = nullptr;
  check(nn_report_json(report, &text));
  const auto j = nlohmann::json::parse(take(text));
  std::printf("trials: %zu (failed %zu), seeds %llu..%llu\n", j["trials"].get<std::size_t>(),
              j["failed"].get<std::size_t>(), static_cast<unsigned long long>(seed),
              static_cast<unsigned long long>(seed + trials - 1));
  std::printf("lesion estimation error, mm: mean (max) per axis, then norm\n");
  print_row("tps", j["table1"]["tps"]);
  print_row("rigid", j["table1"]["rigid"]);
  print_row("displacement", j["table1"]["displacement"]);
  std::printf("targeting error, mm\n");
  print_row("needle frame", j["table2"]["needle"]);
  print_row("camera frame", j["table2"]["camera"]);
  if (j["wilcoxon"].contains("p_two_sided"))
    std::printf("wilcoxon tps vs rigid: W+ %.1f, n %d, p %.4g\n", j["wilcoxon"]["w_plus"].get<double>(),
                j["wilcoxon"]["n_effective"].get<int>(), j["wilcoxon"]["p_two_sided"].get<double>());
  else
    std::printf("wilcoxon: %s\n", j["wilcoxon"]["error"].get<std::string>().c_str());
  if (j["spearman"].contains("r_s"))
    std::printf("spearman error vs displacement: r_s %.3f\n", j["spearman"]["r_s"].get<double>());
  for (const auto& c : j["checks"])
    std::printf("check %-26s %s  %s\n", c["name"].get<std::string>().c_str(), c["passed"].get<bool>() ? "ok" : "FAILED",
                c["detail"].get<std::string>().c_str());
  std::printf("outputs written to %s\n", out.c_str());
  return nn_report_checks_passed(report) ? 0 : kExitCheckFailed;
}

int run_trial(const std::string& config, std::uint64_t seed, const std::string& trace, const std::string& commands) {
  ConfigHandle cfg(config);
  nn_trial_summary s{};
  check(nn_trial_run(cfg.ptr, seed, trace.empty() ? nullptr : trace.c_str(),
                     commands.empty() ? nullptr : commands.c_str(), &s));
  std::printf("seed %llu: %s\n", static_cast<unsigned long long>(seed),
              s.failed ? ("failed: " + std::string(s.failure)).c_str() : (s.reached ? "reached" : "step cap hit"));
  std::printf("frames %zu (valid %zu), insertion steps %zu\n", s.frames, s.valid_frames, s.insertion_steps);
  std::printf("lesion error tps %.3f mm, rigid %.3f mm, displacement %.3f mm\n", s.tps_mean_norm_mm,
              s.rigid_mean_norm_mm, s.displacement_norm_mm);
  std::printf("targeting %.3f mm; needle frame (%.3f, %.3f, %.3f); camera frame (%.3f, %.3f, %.3f)\n",
              s.target_norm_mm, s.target_needle_mm[0], s.target_needle_mm[1], s.target_needle_mm[2],
              s.target_camera_mm[0], s.target_camera_mm[1], s.target_camera_mm[2]);
  return s.failed ? kExitCheckFailed : 0;
}

int render(const std::string& config, std::uint64_t seed, const std::string& out) {
  ConfigHandle cfg(config);
  check(nn_render_debug(cfg.ptr, seed, out.c_str()));
  std::printf("wrote %s/left.pgm and %s/right.pgm\n", out.c_str(), out.c_str());
  return 0;
}

int serve(const std::string& config, const std::string& address, std::uint16_t port, bool debug, std::uint64_t seed,
          const std::string& record) {
  ConfigHandle cfg(config);
  nn_server_options opts{};
  opts.address = address.c_str();
  opts.port = port;
  opts.debug = debug ? 1 : 0;
  opts.seed = seed;
  opts.record_path = record.empty() ? nullptr : record.c_str();
  nn_server* server = nullptr;
  check(nn_server_start(cfg.ptr, &opts, &server));
  std::printf("session service on ws://%s:%u/session%s\n", address.c_str(), nn_server_port(server),
              debug ? " (debug)" : "");
  std::fflush(stdout);
  std::signal(SIGINT, [](int) { g_interrupted = true; });
  std::signal(SIGTERM, [](int) { g_interrupted = true; });
  while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  nn_server_stop(server);
  nn_server_free(server);
  return 0;
}

int replay(const std::string& config, std::uint64_t seed, bool debug, const std::string& log_path,
           std::uint64_t steps) {
  ConfigHandle cfg(config);
  std::ifstream in(log_path);
  if (!in) throw Failure{NN_ERR_IO, "cannot read " + log_path};
  std::stringstream log;
  log << in.rdbuf();
  char* out = nullptr;
  check(nn_session_replay(cfg.ptr, seed, debug ? 1 : 0, log.str().c_str(), steps, &out));
  std::fputs(take(out).c_str(), stdout);
  return 0;
}

int print_config(const std::string& config) {
  ConfigHandle cfg(config);
  char* out = nullptr;
  check(nn_config_to_json(cfg.ptr, &out));
  std::puts(take(out).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stereo-tracked needle guidance simulator"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(nn_version()));

  std::string config, out = "out", trace, command_log, address = "127.0.0.1", record, log_path;
  std::size_t trials = 15;
  std::uint64_t seed = 1, steps = 0;
  std::uint16_t port = 8765;
  bool debug = false;

  auto* experiment = app.add_subcommand("run-experiment", "Monte-Carlo trials with summary tables and checks");
  experiment->add_option("--config", config, "JSON configuration file")->check(CLI::ExistingFile);
  experiment->add_option("--trials", trials, "Number of trials")->check(CLI::Range(2, 100000));
  experiment->add_option("--seed", seed, "First trial seed");
  experiment->add_option("--out", out, "Output directory");

  auto* trial = app.add_subcommand("run-trial", "One closed-loop trial");
  trial->add_option("--config", config, "JSON configuration file")->check(CLI::ExistingFile);
  trial->add_option("--seed", seed, "Trial seed");
  trial->add_option("--trace", trace, "Per-frame ground-truth CSV");
  trial->add_option("--command-log", command_log, "Steering command CSV");

  auto* debug_render = app.add_subcommand("render-debug", "Render the first stereo frame as PGM images");
  debug_render->add_option("--config", config, "JSON configuration file")->check(CLI::ExistingFile);
  debug_render->add_option("--seed", seed, "Trial seed");
  debug_render->add_option("--out", out, "Output directory");

  auto* server = app.add_subcommand("serve", "Interactive session service over WebSocket");
  server->add_option("--config", config, "JSON configuration file")->check(CLI::ExistingFile);
  server->add_option("--address", address, "Listen address");
  server->add_option("--port", port, "Listen port");
  server->add_flag("--debug", debug, "Include the true lesion in snapshots");
  server->add_option("--seed", seed, "Session seed");
  server->add_option("--record", record, "Write applied commands to a replay log");

  auto* replay_cmd = app.add_subcommand("replay", "Re-run a recorded command log and print the snapshots");
  replay_cmd->add_option("--config", config, "JSON configuration file")->check(CLI::ExistingFile);
  replay_cmd->add_option("--seed", seed, "Session seed");
  replay_cmd->add_option("--log", log_path, "Replay log")->required()->check(CLI::ExistingFile);
  replay_cmd->add_option("--steps", steps, "Ticks to simulate")->required();
  replay_cmd->add_flag("--debug", debug, "Include the true lesion in snapshots");

  auto* show = app.add_subcommand("print-config", "Print the effective configuration");
  show->add_option("--config", config, "JSON configuration file")->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*experiment) return run_experiment(config, trials, seed, out);
    if (*trial) return run_trial(config, seed, trace, command_log);
    if (*debug_render) return render(config, seed, out);
    if (*server) return serve(config, address, port, debug, seed, record);
    if (*replay_cmd) return replay(config, seed, debug, log_path, steps);
    if (*show) return print_config(config);
  } catch (const Failure& f) {
    std::fprintf(stderr, "error (%s): %s\n", nn_status_name(f.status), f.message.c_str());
    return kExitError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitError;
  }
  return kExitError;
}
