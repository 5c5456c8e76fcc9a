#include "needlenav/config.hpp"
#include "needlenav/error.hpp"
#include "needlenav/harness.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace needlenav;

namespace {

std::string first_line(const std::string& text) { return text.substr(0, text.find('\n')); }

std::string trials_csv(const ExperimentReport& r) {
  std::ostringstream out;
  write_trials_csv(r, out);
  return out.str();
}

void expect_row_consistent(const ErrorRow& row) {
  for (int k = 0; k < 3; ++k) EXPECT_LE(row.mean[k], row.max[k] + 1e-12);
  EXPECT_LE(row.norm_mean, row.norm_max + 1e-12);
}

}  // namespace

TEST(Trial, NoiselessRunHitsTheLesion) {
  const SimConfig cfg = noiseless_config();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const TrialRecord r = run_trial(cfg, seed);
    ASSERT_FALSE(r.failed) << r.failure;
    EXPECT_TRUE(r.reached);
    EXPECT_LT(r.target_norm, 0.1) << seed;
    EXPECT_LT(r.tps_mean_norm, 1e-6);
    EXPECT_LT(r.rigid_mean_norm, 1e-6);
  }
}

TEST(Trial, SameSeedSameRecord) {
  const SimConfig cfg;
  const TrialRecord a = run_trial(cfg, 8);
  const TrialRecord b = run_trial(cfg, 8);
  EXPECT_EQ(a.failed, b.failed);
  EXPECT_EQ(a.frame_count, b.frame_count);
  EXPECT_EQ(a.insertion_steps, b.insertion_steps);
  ASSERT_EQ(a.frames.size(), b.frames.size());
  for (std::size_t i = 0; i < a.frames.size(); ++i) {
    EXPECT_EQ(a.frames[i].tps, b.frames[i].tps);
    EXPECT_EQ(a.frames[i].rigid, b.frames[i].rigid);
  }
  EXPECT_EQ(a.target_needle, b.target_needle);
  EXPECT_EQ(a.target_camera, b.target_camera);
}

TEST(Trial, RecordInvariantsUnderDefaultNoise) {
  const SimConfig cfg;
  int tps_better = 0, ok = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const TrialRecord r = run_trial(cfg, seed);
    if (r.failed) continue;
    ++ok;
    EXPECT_GT(r.tps_mean_norm, 0.0);
    EXPECT_GT(r.rigid_mean_norm, 0.0);
    EXPECT_NEAR(r.target_norm, r.target_needle.norm(), 1e-9);
    EXPECT_NEAR(r.target_norm, r.target_camera.norm(), 1e-9);
    EXPECT_NEAR(r.displacement_norm, r.displacement.norm(), 1e-9);
    for (const auto& f : r.frames) {
      EXPECT_NEAR(f.tps_norm, f.tps.norm(), 1e-9);
      EXPECT_NEAR(f.rigid_norm, f.rigid.norm(), 1e-9);
    }
    EXPECT_EQ(r.valid_frames, r.frames.size());
    tps_better += r.tps_mean_norm < r.rigid_mean_norm;
  }
  EXPECT_GE(ok, 9);
  EXPECT_GT(tps_better, ok / 2);
}

TEST(Trial, SinksWriteHeaders) {
  std::ostringstream trace, commands;
  TrialSinks sinks{&trace, &commands};
  const TrialRecord r = run_trial(SimConfig{}, 3, sinks);
  EXPECT_EQ(first_line(commands.str()), CommandLog::kHeader);
  EXPECT_EQ(first_line(trace.str()).rfind("t,lesion_x,lesion_y,lesion_z,m1_x", 0), 0u);
  std::size_t rows = 0;
  for (char c : trace.str()) rows += c == '\n';
  EXPECT_EQ(rows, r.frame_count + 1);
}

TEST(Trial, UnobservableSceneFailsInsteadOfThrowing) {
  SimConfig cfg;
  cfg.noise.dropout_probability = 1.0;
  const TrialRecord r = run_trial(cfg, 1);
  EXPECT_TRUE(r.failed);
  EXPECT_FALSE(r.failure.empty());
}

TEST(Experiment, SchemaAndAggregation) {
  SimConfig cfg;
  cfg.worker_threads = 2;
  const ExperimentReport r = run_experiment(cfg, 6, 20);
  EXPECT_EQ(r.trials, 6u);
  EXPECT_EQ(r.records.size(), 6u);
  for (const ErrorRow* row : {&r.tps, &r.rigid, &r.displacement, &r.targeting, &r.targeting_camera})
    expect_row_consistent(*row);
  EXPECT_TRUE(r.wilcoxon.has_value());
  EXPECT_TRUE(r.spearman_rs.has_value());

  std::ostringstream t1, t2;
  write_table1_csv(r, t1);
  write_table2_csv(r, t2);
  EXPECT_EQ(t1.str().substr(0, t1.str().find('\n')),
            "method,e_x_mean,e_x_max,e_y_mean,e_y_max,e_z_mean,e_z_max,norm_mean,norm_max");
  EXPECT_NE(t1.str().find("\ntps,"), std::string::npos);
  EXPECT_NE(t1.str().find("\nrigid,"), std::string::npos);
  EXPECT_NE(t1.str().find("\ndisplacement,"), std::string::npos);
  EXPECT_EQ(first_line(t2.str()), "frame,d_x_mean,d_x_max,d_y_mean,d_y_max,d_z_mean,d_z_max,norm_mean,norm_max");
  EXPECT_NE(t2.str().find("\nneedle,"), std::string::npos);

  // Row means are means of the per-trial values.
  double tps_norm = 0.0;
  for (const auto& rec : r.records) tps_norm += rec.tps_mean_norm;
  EXPECT_NEAR(r.tps.norm_mean, tps_norm / 6.0, 1e-12);

  const std::string json = report_to_json(r);
  EXPECT_NE(json.find("\"aggregation\""), std::string::npos);
  EXPECT_NE(json.find("\"table1\""), std::string::npos);
}

TEST(Experiment, TrialsCsvIsReproducibleAcrossThreadCounts) {
  SimConfig one;
  one.worker_threads = 1;
  SimConfig three = one;
  three.worker_threads = 3;
  const std::string a = trials_csv(run_experiment(one, 5, 100));
  const std::string b = trials_csv(run_experiment(one, 5, 100));
  const std::string c = trials_csv(run_experiment(three, 5, 100));
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
}

TEST(Experiment, InputErrors) {
  EXPECT_THROW(run_experiment(SimConfig{}, 1, 1), Error);
  SimConfig blind;
  blind.noise.dropout_probability = 1.0;
  try {
    run_experiment(blind, 3, 1);
    ADD_FAILURE() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::PipelineFailure);
  }
}

TEST(Experiment, OutputsAreWritten) {
  const auto dir = std::filesystem::temp_directory_path() / "needlenav_harness_outputs";
  std::filesystem::remove_all(dir);
  write_outputs(run_experiment(SimConfig{}, 3, 1), dir);
  for (const char* f : {"table1.csv", "table2.csv", "trials.csv", "report.json"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  std::filesystem::remove_all(dir);
}

TEST(Checks, ConfiguredChecksAreEvaluated) {
  SimConfig cfg;
  cfg.checks.targeting_norm_max_mm = 1e-6;
  cfg.checks.displacement_mean_min_mm = 0.0;
  const ExperimentReport r = run_experiment(cfg, 3, 1);
  ASSERT_EQ(r.checks.size(), 2u);
  EXPECT_FALSE(r.checks_passed());

  SimConfig none;
  EXPECT_TRUE(run_experiment(none, 3, 1).checks_passed());
}

TEST(RenderDebug, WritesBothViews) {
  const auto dir = std::filesystem::temp_directory_path() / "needlenav_render_debug";
  std::filesystem::remove_all(dir);
  render_debug(SimConfig{}, 1, dir);
  const GrayImage left = read_pgm(dir / "left.pgm");
  EXPECT_EQ(left.width, SimConfig{}.rig.width);
  EXPECT_TRUE(std::filesystem::exists(dir / "right.pgm"));
  std::filesystem::remove_all(dir);
}
