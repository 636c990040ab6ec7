#include <doctest.h>

#include <cstdlib>

#include "pflab/config.hpp"
#include "pflab/errors.hpp"

using namespace pflab;

TEST_CASE("defaults") {
  const RunConfig c;
  CHECK(c.ppo.learning_rate == 1e-4);
  CHECK(c.ppo.iterations == 3000);
  CHECK(c.ppo.batch == 80);
  CHECK(c.solver.order == 4);
  CHECK(c.solver.width == 256);
  CHECK(c.data.size == 2000);
  CHECK(c.eval.max_attempts == 10);
  CHECK_NOTHROW(c.validate());
  CHECK(c.make_schedule() == NoiseSchedule::vp_linear());
}

TEST_CASE("serialization materializes every key and round-trips") {
  RunConfig c;
  const std::string text = serialize_config(c);
  for (const auto& key : config_keys()) {
    const auto dot = key.find('.');
    CHECK(text.find("[" + key.substr(0, dot) + "]") != std::string::npos);
    CHECK(text.find("\n" + key.substr(dot + 1) + " = ") != std::string::npos);
  }
  CHECK(parse_config(text) == c);

  set_config_value(c, "schedule.kind", "rectified-flow");
  set_config_value(c, "schedule.t_max", "0.995");
  set_config_value(c, "ppo.learning_rate", "0.000123456789");
  set_config_value(c, "eval.k_list", "4, 6,12");
  set_config_value(c, "eval.tau", "17.25");
  set_config_value(c, "solver.sum_to_one", "true");
  set_config_value(c, "io.policy", "runs/x/policy.json");
  const RunConfig back = parse_config(serialize_config(c));
  CHECK(back == c);
  CHECK(back.eval.k_list == std::vector<int>{4, 6, 12});
  CHECK(back.make_schedule().t_max() == 0.995);
  CHECK(serialize_config(back) == serialize_config(c));
}

TEST_CASE("parser errors") {
  CHECK_THROWS_AS(parse_config("[ppo]\nnope = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[bogus]\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("iterations = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[ppo]\niterations = three\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[ppo]\niterations = 3\niterations = 4\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[grid]\nkind = hexagonal\n"), ConfigError);
  try {
    (void)parse_config("# header\n[ppo]\n\nbatch = x\n", "cfg.ini");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("cfg.ini:4") != std::string::npos);
  }
  const auto c = parse_config("# comment\n[ppo]\nbatch = 32 \n; other comment\n[grid]\nsteps=8\n");
  CHECK(c.ppo.batch == 32);
  CHECK(c.grid.steps == 8);
  CHECK_THROWS_AS(load_config("/nonexistent/config.ini"), IoError);
}

TEST_CASE("validation") {
  RunConfig c;
  c.ppo.clip_eps = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = RunConfig{};
  c.solver.order = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = RunConfig{};
  c.schedule.kind = ScheduleKind::kRectifiedFlow;
  c.schedule.t_max = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = RunConfig{};
  c.eval.metrics = {"psnr", "ssim"};
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("config hash") {
  RunConfig a;
  RunConfig b;
  b.io.threads = 8;
  b.io.out_dir = "elsewhere";
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 16);
  b.io.seed = 1;
  CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("environment overrides io paths only") {
  RunConfig c;
  setenv("PFLAB_DATA", "/tmp/d.ndjson", 1);
  setenv("PFLAB_OUT_DIR", "/tmp/out", 1);
  apply_env_overrides(c);
  unsetenv("PFLAB_DATA");
  unsetenv("PFLAB_OUT_DIR");
  CHECK(c.io.data == "/tmp/d.ndjson");
  CHECK(c.io.out_dir == "/tmp/out");
  CHECK(c.io.seed == 0);
}
