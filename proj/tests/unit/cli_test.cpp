#include "helpers.hpp"

#include <nnslicer/binary_io.hpp>

#include <array>
#include <cstdio>
#include <fstream>

using namespace nnslicer;
using namespace testing_support;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out;
};

Run cli(const std::string& args) {
  std::string cmd = std::string(NNSLICER_CLI) + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  std::array<char, 4096> buf;
  while (auto n = fread(buf.data(), 1, buf.size(), p)) r.out.append(buf.data(), n);
  int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

// Small model and data files shared by the CLI tests.
const fs::path& workspace() {
  static const fs::path dir = [] {
    auto d = temp_dir("cli");
    auto m = random_graph(12, {}, 0);
    save_model(m, d / "m.nnsm");
    save_dataset(random_inputs(m, 6, 1), d / "d.nnst");
    return d;
  }();
  return dir;
}

std::string path(const char* name) { return (workspace() / name).string(); }

}  // namespace

TEST(Cli, OracleCheckReportsExactMatches) {
  auto r = cli("oracle-check --seed 7 --cases 100");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("100/100 exact matches"), std::string::npos) << r.out;
}

TEST(Cli, ProfileTwiceIsByteIdentical) {
  auto a = cli("profile --model " + path("m.nnsm") + " --data " + path("d.nnst") + " --out " + path("p1.nnsp"));
  auto b = cli("--workers 3 profile --model " + path("m.nnsm") + " --data " + path("d.nnst") + " --out " + path("p2.nnsp"));
  ASSERT_EQ(a.code, 0) << a.out;
  ASSERT_EQ(b.code, 0) << b.out;
  EXPECT_EQ(read_file(path("p1.nnsp")), read_file(path("p2.nnsp")));
}

TEST(Cli, SliceWritesOneFilePerSamplePlusAggregate) {
  ASSERT_EQ(cli("profile --model " + path("m.nnsm") + " --data " + path("d.nnst") + " --out " + path("p.nnsp")).code, 0);
  auto out = workspace() / "slices";
  auto r = cli("slice --model " + path("m.nnsm") + " --profile " + path("p.nnsp") + " --data " + path("d.nnst") +
               " --outputs 1 --theta 0.1 --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.out;
  std::size_t per_sample = 0;
  for (const auto& e : fs::directory_iterator(out))
    if (e.path().filename().string().rfind("sample_", 0) == 0) ++per_sample;
  EXPECT_EQ(per_sample, 6u);
  EXPECT_TRUE(fs::exists(out / "aggregate.nnsl"));
  EXPECT_TRUE(fs::exists(out / "report.csv"));
  EXPECT_TRUE(fs::exists(out / "report.json"));
}

TEST(Cli, ConfigFileAndFlagPrecedence) {
  ASSERT_EQ(cli("profile --model " + path("m.nnsm") + " --data " + path("d.nnst") + " --out " + path("p.nnsp")).code, 0);
  {
    std::ofstream f(workspace() / "cfg.json");
    f << R"({"theta": 0.5, "outputs": "0"})";
  }
  auto base = "slice --model " + path("m.nnsm") + " --profile " + path("p.nnsp") + " --data " + path("d.nnst");
  auto a = cli("--config " + path("cfg.json") + " " + base + " --out " + (workspace() / "c1").string());
  auto b = cli(base + " --theta 0.5 --outputs 0 --out " + (workspace() / "c2").string());
  auto c = cli("--config " + path("cfg.json") + " " + base + " --theta 0 --out " + (workspace() / "c3").string());
  ASSERT_EQ(a.code, 0) << a.out;
  ASSERT_EQ(b.code, 0) << b.out;
  ASSERT_EQ(c.code, 0) << c.out;
  EXPECT_EQ(read_file(workspace() / "c1" / "aggregate.nnsl"), read_file(workspace() / "c2" / "aggregate.nnsl"));
  EXPECT_NE(read_file(workspace() / "c1" / "aggregate.nnsl"), read_file(workspace() / "c3" / "aggregate.nnsl"));
}

TEST(Cli, BadInputsExitWithTwo) {
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("slice --model " + path("d.nnst") + " --profile x --data x --outputs 0 --out x").code, 2);
  EXPECT_EQ(cli("eval --model " + path("d.nnst") + " --data " + path("d.nnst")).code, 2);
  EXPECT_EQ(cli("eval --model " + path("m.nnsm") + " --data " + path("d.nnst") + " --outputs 99").code, 2);
  EXPECT_EQ(cli("prune --model " + path("m.nnsm") + " --data " + path("d.nnst") + " --outputs 0 --mode nope --out x").code, 2);
}
