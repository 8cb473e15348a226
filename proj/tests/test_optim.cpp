#include <catch2/catch_amalgamated.hpp>

#include "hoflow/core/optim.hpp"

using namespace hoflow;

TEST_CASE("zero gradients and zero weight decay leave parameters unchanged") {
  ParamSet ps;
  Tensor w = ps.add("w", {3}, {1.0f, -2.0f, 0.5f});
  AdamWConfig cfg;
  cfg.weight_decay = 0.0f;
  AdamW opt(cfg);
  opt.step(ps);
  REQUIRE(w.at(0) == 1.0f);
  REQUIRE(w.at(1) == -2.0f);
  REQUIRE(w.at(2) == 0.5f);
}

TEST_CASE("one step on f(w)=w^2 decreases f") {
  ParamSet ps;
  Tensor w = ps.add("w", {}, {1.0f});
  AdamWConfig cfg;
  cfg.weight_decay = 0.0f;
  cfg.schedule = {0.05f, 0.05f, 0, 10};
  AdamW opt(cfg);
  {
    GradTape tape;
    Tensor loss = mul(w, w);
    tape.backward(loss);
  }
  opt.step(ps);
  REQUIRE(w.item() * w.item() < 1.0f);
}

TEST_CASE("lr at step 0 of 100-step warmup is base/100") {
  LrSchedule s{1e-3f, 1e-5f, 100, 1000};
  REQUIRE_THAT(s.at(0), Catch::Matchers::WithinRel(1e-3f / 100.0f, 1e-6f));
}

TEST_CASE("lr schedule is continuous at the warmup/decay boundary") {
  LrSchedule s{2e-4f, 2e-5f, 100, 1000};
  REQUIRE_THAT(s.at(99), Catch::Matchers::WithinRel(2e-4f, 1e-6f));
  REQUIRE_THAT(s.at(100), Catch::Matchers::WithinRel(2e-4f, 1e-6f));
  REQUIRE_THAT(s.at(999), Catch::Matchers::WithinAbs(2e-5f, 1e-6f));
}

TEST_CASE("NaN gradient aborts and names the parameter") {
  ParamSet ps;
  Tensor w = ps.add("net.weight", {2}, {1.0f, 2.0f});
  w.grad()[1] = std::numeric_limits<float>::quiet_NaN();
  AdamW opt;
  REQUIRE_THROWS_WITH(opt.step(ps), Catch::Matchers::ContainsSubstring("net.weight"));
}

TEST_CASE("ema decay rule") {
  ParamSet ps;
  ps.add("w", {1}, {0.0f});
  SECTION("decay=1 leaves shadow unchanged") {
    Ema ema(1.0f);
    ema.update(ps);  // seeds with 0
    ps.find("w")->at(0) = 5.0f;
    ema.update(ps);
    REQUIRE((*ema.shadow("w"))[0] == 0.0f);
  }
  SECTION("decay=0 copies current params") {
    Ema ema(0.0f);
    ema.update(ps);
    ps.find("w")->at(0) = 5.0f;
    ema.update(ps);
    REQUIRE((*ema.shadow("w"))[0] == 5.0f);
  }
  SECTION("decay=0.9999 from shadow 0 with param 1 gives 1e-4") {
    Ema ema(0.9999f);
    ema.update(ps);  // shadow = 0
    ps.find("w")->at(0) = 1.0f;
    ema.update(ps);
    REQUIRE_THAT((*ema.shadow("w"))[0], Catch::Matchers::WithinRel(1e-4f, 1e-3f));
  }
  SECTION("decay outside [0,1] rejected") {
    REQUIRE_THROWS_AS(Ema(1.5f), std::invalid_argument);
    REQUIRE_THROWS_AS(Ema(-0.1f), std::invalid_argument);
  }
}
