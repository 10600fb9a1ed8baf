#include <doctest.h>

#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <fstream>

#include <json.hpp>

#include "dpfuse/io.hpp"
#include "helpers.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using dpfuse::read_file;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

// Runs the CLI from the source root so the fixture config's relative paths
// resolve; stdout and stderr are captured through files. Commands without -o
// write into the scratch directory instead of the source tree.
Result run_cli(const std::string& args, const fs::path& scratch) {
  const fs::path out = scratch / "stdout.txt", err = scratch / "stderr.txt";
  const std::string cmd = std::string("cd '") + DPFUSE_SOURCE_DIR + "' && DPFUSE_OUT_DIR='" +
                          (scratch / "default-out").string() + "' '" + DPFUSE_CLI + "' " +
                          args + " > '" + out.string() + "' 2> '" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(out);
  r.err = read_file(err);
  return r;
}

const std::string kConfig = "--config data/fixtures/pipeline.conf";

}  // namespace

TEST_CASE("unknown subcommands and missing options are usage errors") {
  const fs::path dir = dpfuse::test::scratch_dir("cli-usage");
  Result r = run_cli("frobnicate", dir);
  CHECK(r.code == 1);
  CHECK(r.err.find("Usage") != std::string::npos);
  CHECK(r.err.find(R"("kind":"usage")") != std::string::npos);

  r = run_cli("sanitize", dir);
  CHECK(r.code == 1);

  r = run_cli("--help", dir);
  CHECK(r.code == 0);
  for (const char* sub : {"sanitize", "embed", "align", "fuse", "eval", "sweep", "tmr", "verify"})
    CHECK(r.out.find(sub) != std::string::npos);
}

TEST_CASE("verify runs the invariant suite") {
  const fs::path dir = dpfuse::test::scratch_dir("cli-verify");
  const Result r = run_cli("verify", dir);
  CHECK(r.code == 0);
  CHECK(r.out.find("FAIL") == std::string::npos);
  CHECK(r.out.find("PASS") != std::string::npos);
}

TEST_CASE("a corrupted embedding file is reported with its line") {
  const fs::path dir = dpfuse::test::scratch_dir("cli-corrupt");
  std::ofstream(dir / "z1.txt") << "2 2\na 0.1 0.2\nb 0.3 oops\n";
  std::ofstream(dir / "z2.txt") << "1 2\nc 0.1 0.2\n";
  const Result r = run_cli("align --z1 " + (dir / "z1.txt").string() + " --z2 " +
                               (dir / "z2.txt").string() + " -o " + (dir / "out").string(),
                           dir);
  CHECK(r.code == 2);
  CHECK(r.err.find("z1.txt:3") != std::string::npos);
  const json err = json::parse(read_file(dir / "out" / "error.json"));
  CHECK(err.at("error").at("kind") == "validation");
  CHECK(err.at("error").at("command") == "align");

  const Result verify =
      run_cli("verify --embeddings " + (dir / "z1.txt").string(), dir);
  CHECK(verify.code != 0);
  CHECK(verify.out.find("z1.txt:3") != std::string::npos);
}

TEST_CASE("configuration errors exit 1 and leave an error record") {
  const fs::path dir = dpfuse::test::scratch_dir("cli-config");
  std::ofstream(dir / "bad.conf") << "eps_a = 5\nnot_a_key = 1\n";
  Result r = run_cli("config --config " + (dir / "bad.conf").string() + " -o " +
                         (dir / "out").string(),
                     dir);
  CHECK(r.code == 1);
  CHECK(r.err.find("bad.conf:2") != std::string::npos);
  CHECK(json::parse(read_file(dir / "out" / "error.json")).at("error").at("exit_code") == 1);

  r = run_cli("config --set eps_g=-1 --set seed=4", dir);
  CHECK(r.code == 0);  // printing does not validate budgets
  CHECK(json::parse(r.out).at("seed") == 4);

  r = run_cli("sanitize -g data/fixtures/network_a.jsonl --set eps_g=0 -o " +
                  (dir / "zero").string(),
              dir);
  CHECK(r.code == 1);
}

TEST_CASE("a malformed graph exits 2") {
  const fs::path dir = dpfuse::test::scratch_dir("cli-graph");
  std::ofstream(dir / "g.jsonl") << R"({"kind":"user","id":"a"})" "\n"
                                 << R"({"kind":"friend","a":"a","b":"ghost"})" "\n";
  const Result r =
      run_cli("sanitize -g " + (dir / "g.jsonl").string() + " -o " + (dir / "out").string(), dir);
  CHECK(r.code == 2);
  CHECK(r.err.find("g.jsonl:2") != std::string::npos);
  CHECK(run_cli("sanitize -g " + (dir / "missing.jsonl").string(), dir).code == 2);
}

TEST_CASE("tmr from given precisions") {
  const fs::path dir = dpfuse::test::scratch_dir("cli-tmr");
  const Result r = run_cli(
      "tmr --task 0.5,0.453,0.463 --gender 0.5,0.508,0.569 --occupation 0.5,0.102,0.149 --total 22.5 "
      "--out " + (dir / "tmr.json").string(),
      dir);
  REQUIRE(r.code == 0);
  const json doc = json::parse(read_file(dir / "tmr.json"));
  CHECK(doc.at("tmr").at("friendship").at("tmr").get<double>() == doctest::Approx(0.743).epsilon(0.002));
  CHECK(doc.at("tmr").at("posts").at("tmr").get<double>() == doctest::Approx(0.645).epsilon(0.002));
  CHECK(doc.contains("provenance"));
  CHECK(run_cli("tmr --task 1,2", dir).code == 1);
}

TEST_CASE("stage-by-stage run over the bundled fixtures") {
  const fs::path dir = dpfuse::test::scratch_dir("cli-stages");
  const std::string common = kConfig + " -o " + (dir / "out").string();
  const auto start = std::chrono::steady_clock::now();

  auto stage = [&](const std::string& args) {
    const Result r = run_cli(args + " " + common, dir);
    INFO(args);
    INFO(r.err);
    REQUIRE(r.code == 0);
    return json::parse(r.out);
  };
  const json sa = stage("sanitize -g data/fixtures/network_a.jsonl --out " + (dir / "a.jsonl").string());
  CHECK(sa.at("stage") == "sanitize");
  stage("sanitize -g data/fixtures/network_b.jsonl --out " + (dir / "b.jsonl").string());
  stage("embed -g " + (dir / "a.jsonl").string() + " --out " + (dir / "za.txt").string());
  stage("embed -g " + (dir / "b.jsonl").string() + " --out " + (dir / "zb.txt").string());
  stage("align --z1 " + (dir / "za.txt").string() + " --z2 " + (dir / "zb.txt").string() +
        " --out " + (dir / "anchors.txt").string());
  stage("fuse --graph-a " + (dir / "a.jsonl").string() + " --graph-b " + (dir / "b.jsonl").string() +
        " --z1 " + (dir / "za.txt").string() + " --z2 " + (dir / "zb.txt").string() + " --anchors " +
        (dir / "anchors.txt").string() + " --out-a " + (dir / "oa.txt").string() + " --out-b " +
        (dir / "ob.txt").string());
  const json ev = stage("eval -g " + (dir / "a.jsonl").string() + " -e " + (dir / "oa.txt").string() +
                        " --out " + (dir / "eval.json").string());
  CHECK(ev.at("outputs").at("report") == (dir / "eval.json").string());

  const json report = json::parse(read_file(dir / "eval.json"));
  CHECK(report.at("provenance").at("seed") == 1);
  CHECK(report.at("reports").size() == 3);
  for (const auto& f : {"a.jsonl", "za.txt", "anchors.txt", "oa.txt", "ob.txt"})
    CHECK(fs::file_size(dir / f) > 0);

  const double minutes =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60;
  CHECK(minutes < 5);
}
