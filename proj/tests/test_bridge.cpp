#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <string>

#include "finch/bridge.hpp"

using namespace finch;

TEST(Bridge, FinchDefaultsAndFirstRate) {
  auto h = SchedulerHandle::create({{"eta_base", "2e-5"}});
  const auto& f = std::get<FinchConfig>(h.native().spec());
  EXPECT_EQ(f.eta_max, 5e-5);
  EXPECT_EQ(f.epsilon, 1e-8);
  EXPECT_EQ(f.alpha, 0.9);
  EXPECT_NEAR(h.observe(4.0), 1e-5, 1e-12);
  EXPECT_NEAR(h.observe(4.0), 1e-5, 1e-12);
}

TEST(Bridge, OtherKinds) {
  EXPECT_EQ(SchedulerHandle::create({{"kind", "constant"}, {"lr", "0.1"}}).observe(3.0), 0.1);
  auto w = SchedulerHandle::create({{"kind", "warmup_cosine"}, {"peak_lr", "1e-3"}, {"total_steps", "100"}});
  EXPECT_NEAR(w.observe(1.0), 1e-3 / 5, 1e-18);
}

TEST(Bridge, ConfigurationErrorsNameTheKey) {
  auto message = [](const BridgeConfig& cfg) {
    try {
      SchedulerHandle::create(cfg);
    } catch (const DomainError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_NE(message({}).find("eta_base"), std::string::npos);
  EXPECT_NE(message({{"eta_base", "abc"}}).find("eta_base"), std::string::npos);
  EXPECT_NE(message({{"eta_base", "1e-5"}, {"lr", "1"}}).find("lr"), std::string::npos);
  EXPECT_NE(message({{"kind", "adam"}}).find("kind"), std::string::npos);
  EXPECT_NE(message({{"kind", "warmup_cosine"}, {"peak_lr", "1"}, {"total_steps", "2.5"}}).find("total_steps"),
            std::string::npos);
  EXPECT_FALSE(message({{"eta_base", "-1"}}).empty());
}

TEST(Bridge, LongStreamRenderingsMatchNativeState) {
  auto h = SchedulerHandle::create({{"eta_base", "3e-5"}});
  ScheduleState native(FinchConfig{3e-5, 5e-5, 1e-8, 0.9});
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 4.0);
  for (int i = 0; i < 10000; ++i) {
    const double loss = u(rng);
    ASSERT_EQ(h.observe(loss), native.observe(loss));
    if (i % 1000 == 0) {
      ASSERT_EQ(h.state(), snapshot(native));
    }
  }
  EXPECT_EQ(h.state(), snapshot(native));
}

TEST(Bridge, RestoreMidStream) {
  auto h = SchedulerHandle::create({{"eta_base", "3e-5"}});
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.0, 4.0);
  for (int i = 0; i < 500; ++i) h.observe(u(rng));
  auto resumed = SchedulerHandle::from_state(h.state());
  for (int i = 0; i < 500; ++i) {
    const double loss = u(rng);
    ASSERT_EQ(h.observe(loss), resumed.observe(loss));
  }
  EXPECT_EQ(h.state(), resumed.state());
}

TEST(Bridge, RejectedLossLeavesStateUntouched) {
  auto h = SchedulerHandle::create({{"eta_base", "3e-5"}});
  h.observe(1.0);
  const auto before = h.state();
  EXPECT_THROW(h.observe(std::nan("")), DomainError);
  EXPECT_EQ(h.state(), before);
}

TEST(Bridge, TruncatedStateIsAParseError) {
  auto h = SchedulerHandle::create({{"eta_base", "3e-5"}});
  h.observe(2.0);
  const auto text = h.state();
  for (std::size_t cut : {std::size_t{0}, std::size_t{10}, text.size() / 2, text.size() - 2})
    EXPECT_THROW(SchedulerHandle::from_state(text.substr(0, cut)), ParseError) << cut;
}
