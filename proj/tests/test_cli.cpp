#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "pflab/json.hpp"
#include "pflab/policy.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(PFLAB_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string out;
  std::array<char, 4096> buf{};
  while (fgets(buf.data(), buf.size(), pipe) != nullptr) out += buf.data();
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string last_line(const std::string& s) {
  std::string t = s;
  while (!t.empty() && t.back() == '\n') t.pop_back();
  const auto nl = t.find_last_of('\n');
  return nl == std::string::npos ? t : t.substr(nl + 1);
}

struct Workspace {
  fs::path root;
  Workspace() {
    root = fs::temp_directory_path() / "pflab_cli_test";
    fs::remove_all(root);
    fs::create_directories(root / "runs");
    std::ofstream(root / "small.ini") << "[model]\ncomponents = 3\n"
                                         "[data]\nsize = 60\nnum_conditions = 1\nfirst_condition = 3\nholdout = 20\n"
                                         "[solver]\nwidth = 16\n"
                                         "[ppo]\niterations = 5\nbatch = 8\ncheckpoint_every = 2\n"
                                         "[eval]\nsessions = 10\norder_samples = 2\n";
  }
  ~Workspace() { fs::remove_all(root); }
  std::string flags() const {
    return "--config " + (root / "small.ini").string() + " --out " + (root / "runs").string();
  }
};

}  // namespace

TEST_CASE("help documents every flag and unknown flags fail") {
  const auto help = run("train --help");
  CHECK(help.code == 0);
  for (const char* flag : {"--config", "--set", "--seed", "--threads", "--out", "--data", "--policy",
                           "--coeffs", "--steps", "--resume", "--iterations"}) {
    CHECK(help.out.find(flag) != std::string::npos);
  }
  CHECK(run("train --frobnicate").code == 2);
  CHECK(run("").code == 2);
  CHECK(run("dance").code == 2);
}

TEST_CASE("exit codes") {
  Workspace ws;
  CHECK(run("gen-data --out " + (ws.root / "missing").string()).code == 3);
  CHECK(run("gen-data --config " + (ws.root / "nope.ini").string()).code == 3);
  std::ofstream(ws.root / "bad.ini") << "[ppo]\nlearning_rat = 1\n";
  const auto bad = run("gen-data --config " + (ws.root / "bad.ini").string() + " --out " + ws.root.string());
  CHECK(bad.code == 2);
  CHECK(bad.out.find("learning_rat") != std::string::npos);
  CHECK(run("train " + ws.flags() + " --data " + (ws.root / "none.ndjson").string()).code == 3);
  const auto gen = run("gen-data " + ws.flags());
  REQUIRE(gen.code == 0);
  const std::string data = last_line(gen.out);
  CHECK(run("eval " + ws.flags() + " --data " + data + " --solver heun").code == 5);
  CHECK(run("train " + ws.flags() + " --data " + data + " --set ppo.learning_rate=1e300 --iterations 3").code == 4);
}

TEST_CASE("default gen-data writes 2000 entries") {
  Workspace ws;
  const auto gen = run("gen-data --out " + (ws.root / "runs").string() + " --threads 4");
  REQUIRE(gen.code == 0);
  const fs::path data = last_line(gen.out);
  std::ifstream in(data);
  int lines = 0;
  for (std::string l; std::getline(in, l);) lines += l.empty() ? 0 : 1;
  CHECK(lines == 2000);
  const auto manifest = pflab::Json::parse(slurp(data.string() + ".manifest.json"));
  CHECK(manifest.contains("config_hash"));
  CHECK(fs::exists(data.parent_path() / "config.ini"));
  CHECK(slurp(data.parent_path() / "config.ini").find("size = 2000") != std::string::npos);
}

TEST_CASE("workflow") {
  Workspace ws;
  const auto gen1 = run("gen-data " + ws.flags() + " --seed 3");
  REQUIRE(gen1.code == 0);
  const std::string data = last_line(gen1.out);
  const std::string manifest1 = slurp(data + ".manifest.json");
  CHECK(run("gen-data " + ws.flags() + " --seed 3").code == 0);
  CHECK(slurp(data + ".manifest.json") == manifest1);

  const auto zero = run("train " + ws.flags() + " --data " + data + " --iterations 0");
  REQUIRE(zero.code == 0);
  const auto ckpt = pflab::Json::parse(slurp(last_line(zero.out)));
  CHECK(ckpt["trainer"]["iteration"] == 0);
  const auto schedule = pflab::NoiseSchedule::vp_linear();
  const auto init = pflab::init_to_baseline({4, 16, 3, false}, "ddim", 0, schedule.t_min(), schedule.t_max());
  CHECK(pflab::policy_from_json(ckpt) == init);

  const auto t1 = run("train " + ws.flags() + " --data " + data);
  REQUIRE(t1.code == 0);
  const fs::path dir = fs::path(last_line(t1.out)).parent_path();
  const std::string log1 = slurp(dir / "train_log.csv");
  CHECK(log1.rfind("iter,entry,mean_reward,max_reward,clip_frac,log_std_mean\n", 0) == 0);
  CHECK(fs::exists(dir / "checkpoint_2.json"));
  CHECK(fs::exists(dir / "checkpoint_4.json"));
  CHECK(run("train " + ws.flags() + " --data " + data).code == 0);
  CHECK(slurp(dir / "train_log.csv") == log1);

  const auto resumed = run("train " + ws.flags() + " --data " + data + " --resume " + (dir / "checkpoint_4.json").string());
  REQUIRE(resumed.code == 0);
  CHECK(slurp(last_line(resumed.out)) == slurp(dir / "policy.json"));

  const std::string policy = (dir / "policy.json").string();
  const auto cmp = run("compare " + ws.flags() + " --data " + data + " --policy " + policy +
                       " --solvers ddim,ab4,policy --steps 5,8,10");
  REQUIRE(cmp.code == 0);
  CHECK(cmp.out.find("solver,steps,nfe,psnr_mean") != std::string::npos);
  CHECK(cmp.out.find("policy,10,") != std::string::npos);

  const auto ord = run("order-test " + ws.flags() + " --solver dpm2");
  REQUIRE(ord.code == 0);
  CHECK(ord.out.find("ci95") != std::string::npos);

  const auto prv = run("preview-sim " + ws.flags() + " --data " + data + " --policy " + policy);
  REQUIRE(prv.code == 0);
  CHECK(prv.out.find("high-quality,") != std::string::npos);
  CHECK(prv.out.find("\npreview,") != std::string::npos);

  const auto dst = run("distill " + ws.flags() + " --data " + data);
  REQUIRE(dst.code == 0);
  const auto ev = run("eval " + ws.flags() + " --data " + data + " --solver distill-table --coeffs " + last_line(dst.out));
  CHECK(ev.code == 0);
  const auto ex = run("export-coeffs " + ws.flags() + " --policy " + policy + " --steps 6");
  REQUIRE(ex.code == 0);
  CHECK(pflab::Json::parse(slurp(last_line(ex.out)))["weights"].size() == 6);
  const auto shown = run("show-config " + ws.flags() + " --set grid.kind=log-snr");
  CHECK(shown.out.find("kind = log-snr") != std::string::npos);
}
