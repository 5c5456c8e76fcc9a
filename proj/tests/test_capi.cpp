#include "needlenav/needlenav.h"

#include "json.hpp"

#include <gtest/gtest.h>

#include <sstream>
#include <string>
#include <vector>

namespace {

std::string take(char* s) {
  std::string out(s ? s : "");
  nn_string_free(s);
  return out;
}

std::vector<nlohmann::json> lines(const std::string& ndjson) {
  std::vector<nlohmann::json> out;
  std::istringstream in(ndjson);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  return out;
}

struct Config {
  nn_config* ptr = nullptr;
  Config() { EXPECT_EQ(nn_config_default(&ptr), NN_OK); }
  ~Config() { nn_config_free(ptr); }
};

}  // namespace

TEST(CApi, VersionAndStatusNames) {
  EXPECT_STREQ(nn_version(), "0.1.0");
  EXPECT_STREQ(nn_status_name(NN_OK), "ok");
  EXPECT_STREQ(nn_status_name(NN_ERR_PORT_UNAVAILABLE), "port unavailable");
  EXPECT_STREQ(nn_status_name(static_cast<nn_status>(1234)), "unknown status");
  nn_config_free(nullptr);
  nn_report_free(nullptr);
  nn_session_free(nullptr);
  nn_server_free(nullptr);
}

TEST(CApi, ErrorsCarryStatusAndMessage) {
  nn_config* cfg = nullptr;
  EXPECT_EQ(nn_config_parse(R"({"bogus": 1})", &cfg), NN_ERR_PARSE);
  EXPECT_EQ(cfg, nullptr);
  EXPECT_NE(std::string(nn_last_error()).find("bogus"), std::string::npos);
  EXPECT_EQ(nn_config_parse(R"({"guidance": {"smoothing_alpha": 2}})", &cfg), NN_ERR_INVALID_ARGUMENT);
  EXPECT_EQ(nn_config_load("/nonexistent.json", &cfg), NN_ERR_IO);
  EXPECT_EQ(nn_config_default(nullptr), NN_ERR_INVALID_ARGUMENT);

  ASSERT_EQ(nn_config_parse("{}", &cfg), NN_OK);
  EXPECT_STREQ(nn_last_error(), "");
  nn_report* report = nullptr;
  EXPECT_EQ(nn_experiment_run(cfg, 1, 1, &report), NN_ERR_INVALID_ARGUMENT);
  nn_config_free(cfg);
}

TEST(CApi, ConfigJsonRoundTrip) {
  Config cfg;
  char* text = nullptr;
  ASSERT_EQ(nn_config_to_json(cfg.ptr, &text), NN_OK);
  const std::string json = take(text);
  nn_config* again = nullptr;
  ASSERT_EQ(nn_config_parse(json.c_str(), &again), NN_OK);
  ASSERT_EQ(nn_config_to_json(again, &text), NN_OK);
  EXPECT_EQ(take(text), json);
  nn_config_free(again);
}

TEST(CApi, TrialAndExperiment) {
  Config cfg;
  nn_trial_summary s{};
  ASSERT_EQ(nn_trial_run(cfg.ptr, 2, nullptr, nullptr, &s), NN_OK);
  EXPECT_EQ(s.failed, 0);
  EXPECT_GT(s.frames, 0u);
  EXPECT_GT(s.target_norm_mm, 0.0);

  nn_report* report = nullptr;
  ASSERT_EQ(nn_experiment_run(cfg.ptr, 3, 1, &report), NN_OK);
  char* json = nullptr;
  ASSERT_EQ(nn_report_json(report, &json), NN_OK);
  const auto j = nlohmann::json::parse(take(json));
  EXPECT_EQ(j["trials"], 3);
  char* csv = nullptr;
  ASSERT_EQ(nn_report_trials_csv(report, &csv), NN_OK);
  EXPECT_EQ(take(csv).rfind("seed,status", 0), 0u);
  EXPECT_EQ(nn_report_checks_passed(report), 1);
  nn_report_free(report);
}

TEST(CApi, SessionTickAndReplay) {
  Config cfg;
  nn_session* session = nullptr;
  ASSERT_EQ(nn_session_create(cfg.ptr, 4, 1, &session), NN_OK);
  EXPECT_EQ(nn_session_submit(session, R"({"v":1,"type":"command","id":7,"command":"align_hold","hold":true})"),
            NN_OK);
  EXPECT_EQ(nn_session_submit(session, R"({"v":1,"type":"command","id":8,"command":"warp"})"), NN_ERR_PARSE);

  std::vector<nlohmann::json> first;
  for (int k = 0; k < 20; ++k) {
    char* out = nullptr;
    ASSERT_EQ(nn_session_tick(session, &out), NN_OK);
    const auto msgs = lines(take(out));
    ASSERT_FALSE(msgs.empty());
    EXPECT_EQ(msgs.back()["type"], "snapshot");
    for (const auto& m : msgs) EXPECT_EQ(m["v"], 1);
    if (k == 0) first = msgs;
  }
  ASSERT_EQ(first.size(), 2u);
  EXPECT_EQ(first[0]["type"], "ack");
  EXPECT_EQ(first[0]["id"], 7);
  EXPECT_TRUE(first[0]["accepted"].get<bool>());

  char* snap = nullptr;
  ASSERT_EQ(nn_session_snapshot(session, &snap), NN_OK);
  const auto last = nlohmann::json::parse(take(snap));
  EXPECT_EQ(last["tick"], 20);
  EXPECT_TRUE(last.contains("lesion_true"));

  char* log = nullptr;
  ASSERT_EQ(nn_session_log(session, &log), NN_OK);
  const std::string replay_log = take(log);
  char* replayed = nullptr;
  ASSERT_EQ(nn_session_replay(cfg.ptr, 4, 1, replay_log.c_str(), 20, &replayed), NN_OK);
  const auto snaps = lines(take(replayed));
  ASSERT_EQ(snaps.size(), 20u);
  EXPECT_EQ(snaps.back(), last);
  nn_session_free(session);
}

TEST(CApi, ServerPortConflict) {
  Config cfg;
  nn_server_options opts{};
  opts.address = "127.0.0.1";
  nn_server* a = nullptr;
  ASSERT_EQ(nn_server_start(cfg.ptr, &opts, &a), NN_OK);
  const uint16_t port = nn_server_port(a);
  EXPECT_GT(port, 0);
  opts.port = port;
  nn_server* b = nullptr;
  EXPECT_EQ(nn_server_start(cfg.ptr, &opts, &b), NN_ERR_PORT_UNAVAILABLE);
  EXPECT_EQ(b, nullptr);
  nn_server_stop(a);
  nn_server_free(a);
}
