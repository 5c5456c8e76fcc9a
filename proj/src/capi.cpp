#include "needlenav/needlenav.h"

#include "needlenav/config.hpp"
#include "needlenav/error.hpp"
#include "needlenav/harness.hpp"
#include "needlenav/server.hpp"
#include "needlenav/session.hpp"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <memory>
#include <new>
#include <sstream>
#include <string>

struct nn_config {
  needlenav::SimConfig cfg;
};

struct nn_report {
  needlenav::ExperimentReport report;
};

struct nn_session {
  needlenav::SessionCore core;
};

struct nn_server {
  std::unique_ptr<needlenav::SessionServer> server;
};

namespace {

using namespace needlenav;

thread_local std::string g_last_error;

nn_status to_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return NN_ERR_INVALID_ARGUMENT;
    case ErrorCode::Degenerate: return NN_ERR_DEGENERATE;
    case ErrorCode::Singular: return NN_ERR_SINGULAR;
    case ErrorCode::OutOfRange: return NN_ERR_OUT_OF_RANGE;
    case ErrorCode::InsufficientData: return NN_ERR_INSUFFICIENT_DATA;
    case ErrorCode::Io: return NN_ERR_IO;
    case ErrorCode::Parse: return NN_ERR_PARSE;
    case ErrorCode::PortUnavailable: return NN_ERR_PORT_UNAVAILABLE;
    case ErrorCode::PipelineFailure: return NN_ERR_PIPELINE_FAILURE;
  }
  return NN_ERR_INTERNAL;
}

// Runs `body`, translating exceptions into a status and the thread's last error.
template <typename F>
nn_status guarded(F&& body) {
  try {
    body();
    g_last_error.clear();
    return NN_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
  } catch (const std::exception& e) {
    g_last_error = e.what();
  } catch (...) {
    g_last_error = "unknown error";
  }
  return NN_ERR_INTERNAL;
}

void require(bool ok, const char* what) {
  if (!ok) throw Error(ErrorCode::InvalidArgument, what);
}

char* duplicate(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::ofstream open_output(const char* path) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::Io, std::string("cannot write ") + path);
  return f;
}

}  // namespace

extern "C" {

const char* nn_version(void) { return "0.1.0"; }

const char* nn_status_name(nn_status status) {
  switch (status) {
    case NN_OK: return "ok";
    case NN_ERR_INVALID_ARGUMENT: return "invalid argument";
    case NN_ERR_DEGENERATE: return "degenerate input";
    case NN_ERR_SINGULAR: return "singular system";
    case NN_ERR_OUT_OF_RANGE: return "out of range";
    case NN_ERR_INSUFFICIENT_DATA: return "insufficient data";
    case NN_ERR_IO: return "i/o error";
    case NN_ERR_PARSE: return "parse error";
    case NN_ERR_PORT_UNAVAILABLE: return "port unavailable";
    case NN_ERR_PIPELINE_FAILURE: return "pipeline failure";
    case NN_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* nn_last_error(void) { return g_last_error.c_str(); }

void nn_string_free(char* s) { std::free(s); }

nn_status nn_config_default(nn_config** out) {
  return guarded([&] {
    require(out, "out is null");
    *out = new nn_config{};
  });
}

nn_status nn_config_parse(const char* json, nn_config** out) {
  return guarded([&] {
    require(json && out, "null argument");
    *out = new nn_config{parse_config(json)};
  });
}

nn_status nn_config_load(const char* path, nn_config** out) {
  return guarded([&] {
    require(path && out, "null argument");
    *out = new nn_config{load_config(path)};
  });
}

nn_status nn_config_to_json(const nn_config* cfg, char** out_json) {
  return guarded([&] {
    require(cfg && out_json, "null argument");
    *out_json = duplicate(config_to_json(cfg->cfg));
  });
}

void nn_config_free(nn_config* cfg) { delete cfg; }

nn_status nn_experiment_run(const nn_config* cfg, size_t trials, uint64_t seed, nn_report** out) {
  return guarded([&] {
    require(cfg && out, "null argument");
    *out = new nn_report{run_experiment(cfg->cfg, trials, seed)};
  });
}

nn_status nn_report_write(const nn_report* report, const char* dir) {
  return guarded([&] {
    require(report && dir, "null argument");
    write_outputs(report->report, dir);
  });
}

nn_status nn_report_json(const nn_report* report, char** out_json) {
  return guarded([&] {
    require(report && out_json, "null argument");
    *out_json = duplicate(report_to_json(report->report));
  });
}

nn_status nn_report_trials_csv(const nn_report* report, char** out_csv) {
  return guarded([&] {
    require(report && out_csv, "null argument");
    std::ostringstream s;
    write_trials_csv(report->report, s);
    *out_csv = duplicate(s.str());
  });
}

int nn_report_checks_passed(const nn_report* report) { return report && report->report.checks_passed() ? 1 : 0; }

void nn_report_free(nn_report* report) { delete report; }

nn_status nn_trial_run(const nn_config* cfg, uint64_t seed, const char* trace_path, const char* command_log_path,
                       nn_trial_summary* out) {
  return guarded([&] {
    require(cfg && out, "null argument");
    std::ofstream trace, commands;
    TrialSinks sinks;
    if (trace_path) {
      trace = open_output(trace_path);
      sinks.trace = &trace;
    }
    if (command_log_path) {
      commands = open_output(command_log_path);
      sinks.command_log = &commands;
    }
    const TrialRecord r = run_trial(cfg->cfg, seed, sinks);
    nn_trial_summary s{};
    s.failed = r.failed ? 1 : 0;
    s.reached = r.reached ? 1 : 0;
    s.frames = r.frame_count;
    s.valid_frames = r.valid_frames;
    s.insertion_steps = r.insertion_steps;
    s.tps_mean_norm_mm = r.tps_mean_norm;
    s.rigid_mean_norm_mm = r.rigid_mean_norm;
    s.displacement_norm_mm = r.displacement_norm;
    s.target_norm_mm = r.target_norm;
    for (int k = 0; k < 3; ++k) {
      s.target_needle_mm[k] = r.target_needle[k];
      s.target_camera_mm[k] = r.target_camera[k];
    }
    std::strncpy(s.failure, r.failure.c_str(), sizeof s.failure - 1);
    *out = s;
  });
}

nn_status nn_render_debug(const nn_config* cfg, uint64_t seed, const char* dir) {
  return guarded([&] {
    require(cfg && dir, "null argument");
    render_debug(cfg->cfg, seed, dir);
  });
}

nn_status nn_session_create(const nn_config* cfg, uint64_t seed, int debug, nn_session** out) {
  return guarded([&] {
    require(cfg && out, "null argument");
    *out = new nn_session{SessionCore(cfg->cfg, seed, debug != 0)};
  });
}

nn_status nn_session_submit(nn_session* session, const char* command_json) {
  return guarded([&] {
    require(session && command_json, "null argument");
    session->core.submit(parse_command(command_json));
  });
}

nn_status nn_session_tick(nn_session* session, char** out_ndjson) {
  return guarded([&] {
    require(session && out_ndjson, "null argument");
    const TickResult r = session->core.tick();
    std::string text;
    for (const auto& a : r.acks) text += ack_to_json(a) + '\n';
    for (const auto& e : r.events) text += event_to_json(e) + '\n';
    text += snapshot_to_json(r.snapshot) + '\n';
    *out_ndjson = duplicate(text);
  });
}

nn_status nn_session_snapshot(const nn_session* session, char** out_json) {
  return guarded([&] {
    require(session && out_json, "null argument");
    *out_json = duplicate(snapshot_to_json(session->core.snapshot()));
  });
}

nn_status nn_session_log(const nn_session* session, char** out_ndjson) {
  return guarded([&] {
    require(session && out_ndjson, "null argument");
    std::string text;
    for (const auto& rc : session->core.command_log()) text += recorded_to_json(rc) + '\n';
    *out_ndjson = duplicate(text);
  });
}

nn_status nn_session_replay(const nn_config* cfg, uint64_t seed, int debug, const char* log_ndjson, uint64_t steps,
                            char** out_ndjson) {
  return guarded([&] {
    require(cfg && log_ndjson && out_ndjson, "null argument");
    std::vector<RecordedCommand> log;
    std::istringstream in(log_ndjson);
    for (std::string line; std::getline(in, line);)
      if (line.find_first_not_of(" \t\r") != std::string::npos) log.push_back(parse_recorded(line));
    std::string text;
    for (const auto& s : replay(cfg->cfg, seed, debug != 0, log, steps)) text += snapshot_to_json(s) + '\n';
    *out_ndjson = duplicate(text);
  });
}

void nn_session_free(nn_session* session) { delete session; }

nn_status nn_server_start(const nn_config* cfg, const nn_server_options* options, nn_server** out) {
  return guarded([&] {
    require(cfg && options && out, "null argument");
    ServerOptions o;
    if (options->address) o.address = options->address;
    o.port = options->port;
    o.debug = options->debug != 0;
    o.seed = options->seed;
    if (options->queue_capacity) o.queue_capacity = options->queue_capacity;
    if (options->record_path) o.record_path = options->record_path;
    *out = new nn_server{std::make_unique<SessionServer>(cfg->cfg, o)};
  });
}

uint16_t nn_server_port(const nn_server* server) { return server ? server->server->port() : 0; }

void nn_server_stop(nn_server* server) {
  if (server) server->server->stop();
}

void nn_server_free(nn_server* server) { delete server; }

}  // extern "C"
