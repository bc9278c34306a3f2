#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out;
};

const fs::path& work() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "svmar_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

CliResult ct(const std::string& args, const std::string& env = "") {
  const fs::path log = work() / "last_output.txt";
  const std::string cmd = "cd " + work().string() + " && " + env + " " + CT_MEPNET_BIN + " " + args + " > " +
                          log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream f(log);
  std::stringstream s;
  s << f.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, s.str()};
}

void write(const std::string& name, const std::string& text) { std::ofstream(work() / name) << text; }

std::string bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

std::string tree(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) all += f.lexically_relative(root).string() + '\n' + bytes(f);
  return all;
}

nlohmann::json json_file(const fs::path& p) {
  std::ifstream f(p);
  return nlohmann::json::parse(f);
}

const char* kSmall = R"({"geometry": {"image_size": 32, "n_views": 64},
  "data": {"phantoms": 1, "metal_px": [10, 3]},
  "solver": {"stages": 2, "prox": "learned-standard", "channels": 8, "blocks": 1},
  "train": {"epochs": 1, "max_steps": 2}})";

}  // namespace

TEST(Cli, SimulateMinimalConfig) {
  write("min.json", "{}");
  const CliResult r = ct("simulate --config min.json --out min_ds");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto m = json_file(work() / "min_ds" / "manifest.json");
  EXPECT_EQ(m["records"].size(), 4u);
  EXPECT_FALSE(m["config_hash"].get<std::string>().empty());
  EXPECT_TRUE(fs::exists(work() / "min_ds" / "rec_0003"));
}

TEST(Cli, SimulateRejectsRateNotDividingViews) {
  write("r3.json", R"({"data": {"rate": 3}})");
  const CliResult r = ct("simulate --config r3.json --out r3_ds");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.out.find("rate must divide views"), std::string::npos) << r.out;
}

TEST(Cli, SimulateSeedIsDeterministicAcrossThreadCounts) {
  write("min.json", "{}");
  ASSERT_EQ(ct("simulate --config min.json --out seed_a --seed 7").code, 0);
  ASSERT_EQ(ct("--threads 2 simulate --config min.json --out seed_b --seed 7").code, 0);
  ASSERT_EQ(ct("simulate --config min.json --out seed_c --seed 8").code, 0);
  EXPECT_EQ(tree(work() / "seed_a"), tree(work() / "seed_b"));
  EXPECT_NE(tree(work() / "seed_a"), tree(work() / "seed_c"));
}

TEST(Cli, ReconstructIdentityOnCleanRecordWithStageDump) {
  write("clean.json", R"({"geometry": {"image_size": 32, "n_views": 64},
    "data": {"phantoms": 1, "metal_px": [1], "rate": 1}, "solver": {"stages": 10}})");
  ASSERT_EQ(ct("simulate --config clean.json --out clean_ds").code, 0);
  const CliResult r = ct("reconstruct --input clean_ds/rec_0000 --config clean.json --prox identity --out clean_rc "
                   "--dump-stages --png");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto s = json_file(work() / "clean_rc" / "summary.json");
  EXPECT_GE(s["psnr_xk"].get<double>(), s["psnr_x0"].get<double>());
  EXPECT_FALSE(s["config_hash"].get<std::string>().empty());
  std::size_t ctt = 0;
  for (const auto& e : fs::directory_iterator(work() / "clean_rc" / "stages")) ctt += e.path().extension() == ".ctt";
  EXPECT_EQ(ctt, 20u);
  EXPECT_TRUE(fs::exists(work() / "clean_rc" / "stages" / "stage_10_x.ctt"));
  EXPECT_TRUE(fs::exists(work() / "clean_rc" / "stages" / "stage_10_s.ctt"));
  EXPECT_EQ(bytes(work() / "clean_rc" / "x_k.png").substr(1, 3), "PNG");
}

TEST(Cli, LearnedProxNeedsCheckpoint) {
  write("min.json", "{}");
  ASSERT_EQ(ct("simulate --config min.json --out lp_ds").code, 0);
  EXPECT_NE(ct("reconstruct --input lp_ds --prox learned-standard --out lp_rc").code, 0);
  EXPECT_NE(ct("reconstruct --input lp_ds --checkpoint no_such_dir --out lp_rc").code, 0);
  EXPECT_NE(ct("evaluate --data lp_ds --methods learned-equivariant").code, 0);
}

TEST(Cli, EvaluateGroundTruth) {
  write("min.json", "{}");
  ASSERT_EQ(ct("simulate --config min.json --out gt_ds").code, 0);
  const CliResult r = ct("evaluate --data gt_ds --methods ground-truth,input --report gt_rep");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("99.00"), std::string::npos) << r.out;
  const std::string csv = bytes(work() / "gt_rep" / "ground-truth.csv");
  EXPECT_EQ(csv.rfind("sample,rate,metal_px,psnr,ssim\n", 0), 0u);
}

TEST(Cli, ZeroEpochCheckpointEvaluatesLikeInitialization) {
  write("small.json", kSmall);
  ASSERT_EQ(ct("simulate --config small.json --out z_ds").code, 0);
  ASSERT_EQ(ct("train --config small.json --data z_ds --out z_ck --epochs 0").code, 0);
  const CliResult a = ct("evaluate --data z_ds --methods learned-standard --checkpoint z_ck --report z_rep");
  ASSERT_EQ(a.code, 0) << a.out;
  const CliResult b = ct("evaluate --data z_ds --config small.json --methods identity --report z_rep");
  ASSERT_EQ(b.code, 0) << b.out;
  // Zero-initialised exits make the untrained nets exact identities.
  const auto rows = [](const std::string& csv) {
    std::vector<std::string> out;
    std::stringstream s(csv);
    for (std::string line; std::getline(s, line);) out.push_back(line);
    return out;
  };
  EXPECT_EQ(rows(bytes(work() / "z_rep" / "learned-standard.csv")), rows(bytes(work() / "z_rep" / "identity.csv")));
}

TEST(Cli, TrainIsDeterministicAndEvaluateHonoursThreadsEnv) {
  write("small.json", kSmall);
  ASSERT_EQ(ct("simulate --config small.json --out t_ds").code, 0);
  ASSERT_EQ(ct("train --config small.json --data t_ds --out t_ck1").code, 0);
  ASSERT_EQ(ct("train --config small.json --data t_ds --out t_ck2").code, 0);
  EXPECT_EQ(tree(work() / "t_ck1"), tree(work() / "t_ck2"));
  const CliResult one = ct("evaluate --data t_ds --methods learned-standard --checkpoint t_ck1");
  const CliResult two = ct("evaluate --data t_ds --methods learned-standard --checkpoint t_ck1", "CT_MEPNET_THREADS=2");
  ASSERT_EQ(one.code, 0) << one.out;
  EXPECT_EQ(one.out, two.out);
}

TEST(Cli, EvaluateRefusesMismatchedGeometry) {
  write("small.json", kSmall);
  write("other.json", R"({"geometry": {"image_size": 32, "n_views": 32}, "data": {"phantoms": 1, "metal_px": [3]}})");
  ASSERT_EQ(ct("simulate --config small.json --out g_ds").code, 0);
  ASSERT_EQ(ct("simulate --config other.json --out g_other").code, 0);
  ASSERT_EQ(ct("train --config small.json --data g_ds --out g_ck --max-steps 1").code, 0);
  const CliResult r = ct("evaluate --data g_other --methods learned-standard --checkpoint g_ck");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.out.find("geometry"), std::string::npos) << r.out;
}

TEST(Cli, CheckSuites) {
  const CliResult adj = ct("check --suite adjoint");
  EXPECT_EQ(adj.code, 0) << adj.out;
  EXPECT_NE(adj.out.find("PASS"), std::string::npos);
  const CliResult eq = ct("check --suite equivariance --group 4");
  EXPECT_EQ(eq.code, 0) << eq.out;
  EXPECT_EQ(ct("check --suite nonsense").code == 0, false);
}

TEST(Cli, UsageErrors) {
  EXPECT_NE(ct("").code, 0);
  EXPECT_NE(ct("simulate").code, 0);
  write("bad.json", R"({"solver": {"stagez": 3}})");
  const CliResult r = ct("simulate --config bad.json --out bad_ds");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.out.find("unknown key"), std::string::npos) << r.out;
}
