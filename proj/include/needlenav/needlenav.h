#ifndef NEEDLENAV_NEEDLENAV_H
#define NEEDLENAV_NEEDLENAV_H

/*
 * C interface of the needlenav library: simulation experiments, single
 * trials, debug rendering and the interactive session service.
 *
 * Every fallible call returns an nn_status. On failure a description is
 * available from nn_last_error() on the same thread until the next call.
 * Strings returned through char** out-parameters are owned by the caller and
 * released with nn_string_free(). Handles are released with their *_free
 * function; passing NULL to any *_free function is a no-op.
 */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define NN_API __declspec(dllexport)
#else
#define NN_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum nn_status {
  NN_OK = 0,
  NN_ERR_INVALID_ARGUMENT = 1,
  NN_ERR_DEGENERATE = 2,
  NN_ERR_SINGULAR = 3,
  NN_ERR_OUT_OF_RANGE = 4,
  NN_ERR_INSUFFICIENT_DATA = 5,
  NN_ERR_IO = 6,
  NN_ERR_PARSE = 7,
  NN_ERR_PORT_UNAVAILABLE = 8,
  NN_ERR_PIPELINE_FAILURE = 9,
  NN_ERR_INTERNAL = 99
} nn_status;

typedef struct nn_config nn_config;
typedef struct nn_report nn_report;
typedef struct nn_session nn_session;
typedef struct nn_server nn_server;

NN_API const char* nn_version(void);
NN_API const char* nn_status_name(nn_status status);
NN_API const char* nn_last_error(void);
NN_API void nn_string_free(char* s);

/* Configuration. Missing keys keep their defaults, unknown keys are errors. */
NN_API nn_status nn_config_default(nn_config** out);
NN_API nn_status nn_config_parse(const char* json, nn_config** out);
NN_API nn_status nn_config_load(const char* path, nn_config** out);
NN_API nn_status nn_config_to_json(const nn_config* cfg, char** out_json);
NN_API void nn_config_free(nn_config* cfg);

/* Monte-Carlo experiment over seeds seed .. seed + trials - 1. */
NN_API nn_status nn_experiment_run(const nn_config* cfg, size_t trials, uint64_t seed, nn_report** out);
/* Writes table1.csv, table2.csv, trials.csv and report.json into dir. */
NN_API nn_status nn_report_write(const nn_report* report, const char* dir);
NN_API nn_status nn_report_json(const nn_report* report, char** out_json);
NN_API nn_status nn_report_trials_csv(const nn_report* report, char** out_csv);
/* 1 when every configured check passed (or none was configured). */
NN_API int nn_report_checks_passed(const nn_report* report);
NN_API void nn_report_free(nn_report* report);

typedef struct nn_trial_summary {
  int failed;
  int reached;
  size_t frames;
  size_t valid_frames;
  size_t insertion_steps;
  double tps_mean_norm_mm;
  double rigid_mean_norm_mm;
  double displacement_norm_mm;
  double target_norm_mm;
  double target_needle_mm[3];
  double target_camera_mm[3];
  char failure[256];
} nn_trial_summary;

/* One closed-loop trial. trace_path and command_log_path may be NULL. */
NN_API nn_status nn_trial_run(const nn_config* cfg, uint64_t seed, const char* trace_path,
                              const char* command_log_path, nn_trial_summary* out);

/* Renders the first frame of a trial as left.pgm and right.pgm in dir. */
NN_API nn_status nn_render_debug(const nn_config* cfg, uint64_t seed, const char* dir);

/*
 * In-process session. Commands use the wire format of the session service
 * and are applied on the next tick. nn_session_tick returns the tick's
 * acknowledgements, events and snapshot as newline-delimited JSON.
 */
NN_API nn_status nn_session_create(const nn_config* cfg, uint64_t seed, int debug, nn_session** out);
NN_API nn_status nn_session_submit(nn_session* session, const char* command_json);
NN_API nn_status nn_session_tick(nn_session* session, char** out_ndjson);
NN_API nn_status nn_session_snapshot(const nn_session* session, char** out_json);
/* The applied commands so far as replay log lines. */
NN_API nn_status nn_session_log(const nn_session* session, char** out_ndjson);
/* Re-runs a replay log and returns the snapshots of steps 1..steps. */
NN_API nn_status nn_session_replay(const nn_config* cfg, uint64_t seed, int debug, const char* log_ndjson,
                                   uint64_t steps, char** out_ndjson);
NN_API void nn_session_free(nn_session* session);

typedef struct nn_server_options {
  const char* address;     /* NULL: 127.0.0.1 */
  uint16_t port;           /* 0 picks a free port */
  int debug;               /* include the true lesion in snapshots */
  uint64_t seed;
  size_t queue_capacity;   /* 0: default */
  const char* record_path; /* NULL: no replay log */
} nn_server_options;

/* WebSocket session service at ws://address:port/session. Returns
 * NN_ERR_PORT_UNAVAILABLE when the port cannot be bound. */
NN_API nn_status nn_server_start(const nn_config* cfg, const nn_server_options* options, nn_server** out);
NN_API uint16_t nn_server_port(const nn_server* server);
NN_API void nn_server_stop(nn_server* server);
NN_API void nn_server_free(nn_server* server);

#ifdef __cplusplus
}
#endif

#endif
