#include "needlenav/error.hpp"
#include "needlenav/guidance.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace needlenav;

namespace {

DeviceState device_at(const RigidTransform& pose = {}, Phase phase = Phase::Positioning) {
  DeviceState s;
  s.pose = pose;
  s.phase = phase;
  return s;
}

// Lesion at the given device-frame angles, 100 mm from the pivot.
Point3 lesion_at(double az, double el, const RigidTransform& pose = {}) {
  return pose.apply(100.0 * direction_from_angles(az, el));
}

}  // namespace

TEST(Steering, LesionOnAxisGivesZeroCommand) {
  const CommandResult r = compute_command(device_at(), Point3(0, 0, 80), AngleLimits{}, std::nullopt, 0.3);
  ASSERT_TRUE(r.command);
  EXPECT_NEAR(r.command->azimuth_deg, 0.0, 1e-12);
  EXPECT_NEAR(r.command->elevation_deg, 0.0, 1e-12);
  EXPECT_FALSE(r.command->clamped);
  EXPECT_FALSE(r.reached);
}

TEST(Steering, AzimuthBeyondRangeIsClamped) {
  const CommandResult r = compute_command(device_at(), lesion_at(120.0, 0.0), AngleLimits{}, std::nullopt, 0.3);
  ASSERT_TRUE(r.command);
  EXPECT_NEAR(r.raw.azimuth_deg, 120.0, 1e-9);
  EXPECT_DOUBLE_EQ(r.command->azimuth_deg, 90.0);
  EXPECT_TRUE(r.command->clamped);
}

TEST(Steering, InsertionDeltaCap) {
  const SteeringCommand prev{0.0, 0.0, false, 0.0};
  const CommandResult r = compute_command(device_at({}, Phase::Inserting), lesion_at(10.0, 0.0), AngleLimits{}, prev, 1.0);
  ASSERT_TRUE(r.command);
  EXPECT_NEAR(r.command->azimuth_deg, 2.0, 1e-12);
  EXPECT_NEAR(r.command->elevation_deg, 0.0, 1e-9);
}

TEST(Steering, LesionAtPivotSignalsReached) {
  const CommandResult r = compute_command(device_at(), Point3::Zero(), AngleLimits{}, std::nullopt, 0.3);
  EXPECT_TRUE(r.reached);
  EXPECT_FALSE(r.command);
}

TEST(Steering, InvalidAlphaThrows) {
  EXPECT_THROW(compute_command(device_at(), Point3(0, 0, 10), AngleLimits{}, std::nullopt, 0.0), Error);
  EXPECT_THROW(compute_command(device_at(), Point3(0, 0, 10), AngleLimits{}, std::nullopt, 1.5), Error);
}

TEST(Steering, CommandsStayInRangeAndFlagClamping) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> az(-179.0, 179.0), el(-89.0, 89.0), unit(0.0, 1.0);
  const AngleLimits limits;
  int clamped = 0;
  for (int i = 0; i < 10000; ++i) {
    const double a = az(rng), e = el(rng);
    const RigidTransform pose(oracle::random_rotation(rng), Vec3(50.0, -20.0, 10.0));
    std::optional<SteeringCommand> prev;
    double expect_a = a, expect_e = e;
    const double alpha = 0.3;
    if (i % 2) {
      prev = SteeringCommand{-90.0 + 180.0 * unit(rng), -40.0 + 85.0 * unit(rng), false, 0.0};
      expect_a = alpha * a + (1.0 - alpha) * prev->azimuth_deg;
      expect_e = alpha * e + (1.0 - alpha) * prev->elevation_deg;
    }
    const Phase phase = i % 3 == 0 ? Phase::Inserting : Phase::Positioning;
    const CommandResult r = compute_command(device_at(pose, phase), lesion_at(a, e, pose), limits, prev, alpha);
    ASSERT_TRUE(r.command);
    const auto& c = *r.command;
    EXPECT_GE(c.azimuth_deg, -90.0);
    EXPECT_LE(c.azimuth_deg, 90.0);
    EXPECT_GE(c.elevation_deg, -40.0);
    EXPECT_LE(c.elevation_deg, 45.0);
    const bool outside = expect_a < -90.0 || expect_a > 90.0 || expect_e < -40.0 || expect_e > 45.0;
    EXPECT_EQ(c.clamped, outside) << a << " " << e;
    clamped += c.clamped;
    if (phase == Phase::Inserting && prev) {
      EXPECT_LE(std::abs(c.azimuth_deg - prev->azimuth_deg), limits.insertion_delta_cap_deg + 1e-12);
      EXPECT_LE(std::abs(c.elevation_deg - prev->elevation_deg), limits.insertion_delta_cap_deg + 1e-12);
    }
  }
  EXPECT_GT(clamped, 1000);
  EXPECT_LT(clamped, 9000);
}

TEST(Steering, SmoothingConvergesGeometrically) {
  const Point3 lesion = lesion_at(30.0, -12.0);
  const double alpha = 0.3;
  std::optional<SteeringCommand> prev = SteeringCommand{};
  double prev_err = std::hypot(30.0, 12.0);
  for (int k = 0; k < 40; ++k) {
    prev = compute_command(device_at(), lesion, AngleLimits{}, prev, alpha).command;
    const double err = std::hypot(prev->azimuth_deg - 30.0, prev->elevation_deg + 12.0);
    EXPECT_NEAR(err / prev_err, 1.0 - alpha, 1e-9);
    prev_err = err;
  }
}

TEST(Steering, SettledCommandAimsTipAtLesion) {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> az(-60.0, 60.0), el(-30.0, 35.0);
  const double needle = 80.0;
  for (int i = 0; i < 50; ++i) {
    const RigidTransform pose(oracle::random_rotation(rng), Vec3(0.0, 40.0, -100.0));
    const Point3 lesion = pose.apply(130.0 * direction_from_angles(az(rng), el(rng)));
    std::optional<SteeringCommand> prev = SteeringCommand{};
    for (int k = 0; k < 80; ++k) prev = compute_command(device_at(pose), lesion, AngleLimits{}, prev, 0.3).command;
    const Vec3 axis = pose.apply_vector(direction_from_angles(prev->azimuth_deg, prev->elevation_deg));
    const Point3 tip = pose.translation() + needle * axis;
    EXPECT_LT(angle_between_deg(axis, lesion - tip), 0.5);
  }
}

TEST(Gears, DifferentialBehaviour) {
  const NeedleAngles tilt = gear_forward(10.0, 10.0);
  EXPECT_DOUBLE_EQ(tilt.elevation_deg, 10.0);
  EXPECT_DOUBLE_EQ(tilt.azimuth_deg, 0.0);
  const NeedleAngles pan = gear_forward(10.0, -10.0);
  EXPECT_DOUBLE_EQ(pan.azimuth_deg, 10.0);
  EXPECT_DOUBLE_EQ(pan.elevation_deg, 0.0);
  const NeedleAngles home = gear_forward(0.0, 0.0);
  EXPECT_EQ(home.azimuth_deg, 0.0);
  EXPECT_EQ(home.elevation_deg, 0.0);

  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> g(-200.0, 200.0);
  for (int i = 0; i < 100; ++i) {
    const double x = g(rng);
    EXPECT_EQ(gear_forward(x, x).azimuth_deg, 0.0);
    EXPECT_EQ(gear_forward(x, -x).elevation_deg, 0.0);
  }
}

TEST(Gears, InverseRoundTrip) {
  const GearAngles zero = gear_inverse(0.0, 0.0);
  EXPECT_EQ(zero.gear1_deg, 0.0);
  EXPECT_EQ(zero.gear2_deg, 0.0);

  std::mt19937_64 rng(37);
  std::uniform_real_distribution<double> az(-90.0, 90.0), el(-40.0, 45.0), ratio(0.5, 3.0);
  for (int i = 0; i < 100; ++i) {
    const double a = az(rng), e = el(rng);
    const GearRatios ratios = i % 2 ? GearRatios{} : GearRatios{ratio(rng), ratio(rng)};
    const GearAngles g = gear_inverse(a, e, ratios);
    const NeedleAngles back = gear_forward(g.gear1_deg, g.gear2_deg, ratios);
    EXPECT_NEAR(back.azimuth_deg, a, 1e-12);
    EXPECT_NEAR(back.elevation_deg, e, 1e-12);
  }
  EXPECT_THROW(gear_inverse(120.0, 0.0), Error);
  EXPECT_THROW(gear_inverse(0.0, -41.0), Error);
}

TEST(Feedback, LinearSchedule) {
  const FeedbackConfig cfg;
  EXPECT_DOUBLE_EQ(feedback(cfg.d_max_mm, cfg).frequency_hz, cfg.f_min_hz);
  EXPECT_DOUBLE_EQ(feedback(3.0 * cfg.d_max_mm, cfg).frequency_hz, cfg.f_min_hz);
  const FeedbackState contact = feedback(0.0, cfg);
  EXPECT_DOUBLE_EQ(contact.frequency_hz, cfg.f_max_hz);
  EXPECT_TRUE(contact.reached);
  EXPECT_DOUBLE_EQ(feedback(cfg.d_max_mm / 2.0, cfg).frequency_hz, (cfg.f_min_hz + cfg.f_max_hz) / 2.0);
  EXPECT_FALSE(feedback(cfg.reach_threshold_mm + 0.01, cfg).reached);
  EXPECT_THROW(feedback(-0.1, cfg), Error);

  EXPECT_TRUE(feedback(10.0, cfg, 0.5).aligned);
  EXPECT_FALSE(feedback(10.0, cfg, 1.5).aligned);
  EXPECT_FALSE(feedback(10.0, cfg).aligned);
}

TEST(Feedback, FrequencyNeverIncreasesWithDistance) {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> d(0.0, 120.0);
  const FeedbackConfig cfg;
  for (int i = 0; i < 5000; ++i) {
    const double a = d(rng), b = d(rng);
    const double near = std::min(a, b), far = std::max(a, b);
    EXPECT_GE(feedback(near, cfg).frequency_hz, feedback(far, cfg).frequency_hz);
    const FeedbackState s = feedback(a, cfg);
    if (s.reached) {
      EXPECT_LE(s.distance_mm, cfg.reach_threshold_mm);
    }
  }
}

TEST(CommandLog, HeaderAndRows) {
  std::ostringstream out;
  CommandLog log(out);
  log.append(SteeringCommand{12.5, -3.25, true, 0.5}, feedback(25.0, FeedbackConfig{}), Phase::Inserting);
  std::istringstream in(out.str());
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "timestamp,azimuth_deg,elevation_deg,clamped,distance_mm,freq_hz,phase");
  EXPECT_EQ(row, "0.5000,12.500000,-3.250000,1,25.000000,1200.000,inserting");
}
