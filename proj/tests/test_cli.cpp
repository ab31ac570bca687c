#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "pma2e/io.hpp"

using namespace pma2e;

namespace {

struct CliRun {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Runs the CLI inside `cwd` with `args`, capturing stdout and stderr.
CliRun cli(const fs::path& cwd, const std::string& args) {
  const auto o = cwd / ".stdout", e = cwd / ".stderr";
  const std::string cmd =
      "cd '" + cwd.string() + "' && '" PMA2E_CLI_PATH "' " + args + " > '" + o.string() + "' 2> '" + e.string() + "'";
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(o);
  r.err = slurp(e);
  fs::remove(o);
  fs::remove(e);
  return r;
}

std::set<std::string> tree(const fs::path& root) {
  std::set<std::string> s;
  for (const auto& e : fs::recursive_directory_iterator(root)) s.insert(fs::relative(e.path(), root).string());
  return s;
}

const char* kTiny =
    "--points 64 --set dim=16 --set heads=2 --set patches=8 --set patch_size=8 --set encoder_depth=2 "
    "--set decoder_depth=1 --set embed_hidden=16 --set fc_hidden=32 --set fold_hidden=16";

/// Builds a small synthetic dataset once per test binary.
const fs::path& dataset() {
  static const fs::path dir = [] {
    auto d = oracle::scratch_dir("cli_data");
    const auto r = cli(d, "synth --out data --per-family 6 --points 96 --seed 1 --test-fraction 0.5");
    EXPECT_EQ(r.code, 0) << r.err;
    return d;
  }();
  return dir;
}

}  // namespace

TEST(Cli, CorruptRandomMaskKeeps410Of1024) {
  const auto dir = oracle::scratch_dir("cli_corrupt");
  Rng rng(7);
  write_cloud((dir / "in.xyz").string(), synth_shape("torus", 1024, 0.0, 0.0, false, rng));
  const auto r = cli(dir, "corrupt --input in.xyz --out o --mask random --alpha 0.6 --seed 1");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_cloud((dir / "o" / "corrupted.xyz").string()).size(), 410u);
  EXPECT_NE(r.out.find("masked=614"), std::string::npos) << r.out;
  for (const char* mask : {"fixed", "view"}) {
    const auto m = cli(dir, std::string("corrupt --input in.xyz --out o_") + mask + " --mask " + mask + " --alpha 0.6");
    ASSERT_EQ(m.code, 0) << m.err;
    EXPECT_EQ(read_cloud((dir / (std::string("o_") + mask) / "corrupted.xyz").string()).size(), 410u) << mask;
  }
  const auto p = cli(dir, "corrupt --input in.xyz --out o_patch --mask patch --alpha 0.6 --format ply");
  ASSERT_EQ(p.code, 0) << p.err;
  EXPECT_EQ(read_cloud((dir / "o_patch" / "corrupted.ply").string()).size(), (16u - 9u) * 16u);
}

TEST(Cli, CorruptIsDeterministicInSeed) {
  const auto dir = oracle::scratch_dir("cli_corrupt_seed");
  Rng rng(8);
  write_cloud((dir / "in.xyz").string(), synth_shape("cube", 300, 0.0, 0.0, false, rng));
  for (const char* out : {"a", "b"})
    ASSERT_EQ(cli(dir, std::string("corrupt --input in.xyz --out ") + out + " --mask random --seed 5").code, 0);
  ASSERT_EQ(cli(dir, "corrupt --input in.xyz --out c --mask random --seed 6").code, 0);
  EXPECT_EQ(slurp(dir / "a" / "corrupted.xyz"), slurp(dir / "b" / "corrupted.xyz"));
  EXPECT_NE(slurp(dir / "a" / "corrupted.xyz"), slurp(dir / "c" / "corrupted.xyz"));
}

TEST(Cli, CorruptZeroMagnitudeSpecWithoutMaskIsIdentity) {
  const auto dir = oracle::scratch_dir("cli_identity");
  Rng rng(9);
  write_cloud((dir / "in.xyz").string(), synth_shape("sphere", 100, 0.0, 0.0, false, rng));
  std::ofstream(dir / "spec.cfg") << "enabled = full\nrotate = 0,0\ntranslate = 0,0\nscale = 1,1\nshear = 0,0\n"
                                     "reflect = 0\n";
  const auto r = cli(dir, "corrupt --input in.xyz --out o --mask none --affine-spec spec.cfg");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir / "o" / "corrupted.xyz"), slurp(dir / "in.xyz"));
}

TEST(Cli, ErrorsHaveDistinctExitCodesAndOneLineMessages) {
  const auto dir = oracle::scratch_dir("cli_errors");
  Rng rng(1);
  write_cloud((dir / "in.xyz").string(), synth_shape("sphere", 64, 0.0, 0.0, false, rng));
  std::ofstream(dir / "bad.xyz") << "1 2\n";
  const CliRun usage = cli(dir, "corrupt --input in.xyz --out o --no-such-flag");
  const CliRun config = cli(dir, "corrupt --input in.xyz --out o --set bogus=1");
  const CliRun io = cli(dir, "corrupt --input missing.xyz --out o");
  const CliRun format = cli(dir, "corrupt --input bad.xyz --out o");
  const CliRun degenerate = cli(dir, "corrupt --input in.xyz --out o --mask patch --alpha 0.01");
  const CliRun version = [&] {
    std::ofstream(dir / "junk.bin") << "not a checkpoint";
    return cli(dir, "reconstruct --checkpoint junk.bin --input in.xyz --out o");
  }();
  std::set<int> codes;
  for (const CliRun* r : {&usage, &config, &io, &format, &degenerate, &version}) {
    EXPECT_NE(r->code, 0) << r->err;
    codes.insert(r->code);
    EXPECT_EQ(r->err.rfind("error kind=", 0), 0u) << r->err;
    EXPECT_EQ(std::count(r->err.begin(), r->err.end(), '\n'), 1) << r->err;
  }
  EXPECT_EQ(codes.size(), 6u);
  EXPECT_NE(config.err.find("bogus"), std::string::npos);
  EXPECT_NE(cli(dir, "frobnicate").code, 0);
  EXPECT_EQ(cli(dir, "corrupt --out o").code, usage.code);
}

TEST(Cli, HelpDocumentsFlags) {
  const auto r = cli(dataset(), "pretrain --help");
  EXPECT_EQ(r.code, 0);
  for (const char* flag : {"--affine-role", "--objective", "--mask", "--affine", "--local-decoder", "--global-decoder",
                           "--decoder", "--seed", "--resume", "--stop-after"})
    EXPECT_NE(r.out.find(flag), std::string::npos) << flag;
}

TEST(Cli, PretrainIsDeterministicAndEchoReproducesRun) {
  const auto& dir = dataset();
  const std::string base = std::string("pretrain --manifest data/manifest.tsv --epochs 2 --seed 4 ") + kTiny;
  const auto a = cli(dir, base + " --out pa");
  const auto b = cli(dir, base + " --out pb");
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(slurp(dir / "pa" / "metrics.csv"), slurp(dir / "pb" / "metrics.csv"));
  EXPECT_EQ(slurp(dir / "pa" / "checkpoint.bin"), slurp(dir / "pb" / "checkpoint.bin"));
  EXPECT_EQ(a.out.rfind("# resolved config\n", 0), 0u);
  const auto echo_end = a.out.find("final ");
  ASSERT_NE(echo_end, std::string::npos);
  std::ofstream(dir / "echo.cfg") << a.out.substr(0, echo_end);
  const auto c = cli(dir, "pretrain --manifest data/manifest.tsv --config echo.cfg --out pc");
  ASSERT_EQ(c.code, 0) << c.err;
  EXPECT_EQ(slurp(dir / "pa" / "metrics.csv"), slurp(dir / "pc" / "metrics.csv"));
  const auto d = cli(dir, "pretrain --manifest data/manifest.tsv --config echo.cfg --seed 5 --out pd");
  ASSERT_EQ(d.code, 0) << d.err;
  EXPECT_NE(slurp(dir / "pa" / "metrics.csv"), slurp(dir / "pd" / "metrics.csv"));
}

TEST(Cli, FlagsOverrideConfigFile) {
  const auto& dir = dataset();
  std::ofstream(dir / "file.cfg") << "epochs = 1\nlambda = 0.25\n";
  const auto r = cli(dir, std::string("pretrain --manifest data/manifest.tsv --config file.cfg --lambda 2 --init-only "
                                      "--out pf ") + kTiny);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("\nlambda = 2\n"), std::string::npos);
  EXPECT_NE(r.out.find("\nepochs = 1\n"), std::string::npos);
}

TEST(Cli, ResumeMatchesUninterruptedRun) {
  const auto& dir = dataset();
  const std::string base = std::string("pretrain --manifest data/manifest.tsv --epochs 3 --seed 2 ") + kTiny;
  ASSERT_EQ(cli(dir, base + " --out full").code, 0);
  ASSERT_EQ(cli(dir, base + " --out half --stop-after 1").code, 0);
  const auto r = cli(dir, base + " --out rest --resume half/checkpoint.bin");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir / "full" / "checkpoint.bin"), slurp(dir / "rest" / "checkpoint.bin"));
  const auto wrong = cli(dir, "pretrain --manifest data/manifest.tsv --epochs 3 --seed 3 --out w --resume "
                              "half/checkpoint.bin " + std::string(kTiny));
  EXPECT_NE(wrong.code, 0);
}

TEST(Cli, EndToEndWritesOnlyUnderOut) {
  const auto& dir = dataset();
  ASSERT_EQ(cli(dir, std::string("pretrain --manifest data/manifest.tsv --epochs 1 --out ck ") + kTiny).code, 0);
  const auto before = tree(dir);
  struct Step {
    std::string args, out;
  };
  const std::vector<Step> steps = {
      {"probe --checkpoint ck/checkpoint.bin --manifest data/manifest.tsv --save-features --out s_probe", "s_probe"},
      {"fewshot --checkpoint ck/checkpoint.bin --manifest data/manifest.tsv --ways 2 --shots 2 --queries 2 "
       "--repetitions 3 --seed 1 --out s_few",
       "s_few"},
      {"reconstruct --checkpoint ck/checkpoint.bin --input data/cube/cube_0000.xyz --out s_rec", "s_rec"},
      {"corrupt --input data/cube/cube_0000.xyz --out s_cor", "s_cor"},
      {std::string("pretrain --manifest data/manifest.tsv --epochs 1 --out s_pre ") + kTiny, "s_pre"},
      {"synth --out s_syn --per-family 1 --points 10", "s_syn"},
  };
  for (const auto& s : steps) {
    const auto r = cli(dir, s.args);
    ASSERT_EQ(r.code, 0) << s.args << "\n" << r.err;
    EXPECT_FALSE(fs::is_empty(dir / s.out)) << s.args;
  }
  std::set<std::string> after;
  for (const auto& p : tree(dir)) {
    bool under_out = false;
    for (const auto& s : steps) under_out = under_out || p == s.out || p.rfind(s.out + "/", 0) == 0;
    if (!under_out) after.insert(p);
  }
  EXPECT_EQ(after, before);
  EXPECT_TRUE(fs::exists(dir / "s_probe" / "probe.txt"));
  EXPECT_TRUE(fs::exists(dir / "s_few" / "fewshot.txt"));
  EXPECT_TRUE(fs::exists(dir / "s_rec" / "reconstruction.xyz"));
}

TEST(Cli, ProbeComparesRandomInitAndTrainedCheckpoints) {
  const auto& dir = dataset();
  ASSERT_EQ(cli(dir, std::string("pretrain --manifest data/manifest.tsv --init-only --out init ") + kTiny).code, 0);
  ASSERT_EQ(cli(dir, std::string("pretrain --manifest data/manifest.tsv --epochs 1 --out trained ") + kTiny).code, 0);
  for (const char* ck : {"init", "trained"}) {
    const auto r = cli(dir, std::string("probe --checkpoint ") + ck + "/checkpoint.bin --manifest data/manifest.tsv "
                                                                       "--out probe_" + ck);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("accuracy"), std::string::npos) << r.out;
  }
}
