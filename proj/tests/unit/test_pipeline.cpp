#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "inertia/pipeline.hpp"
#include "inertia/synth.hpp"

using namespace inertia;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("inertia_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }
  std::string str() const { return path_.string(); }

 private:
  fs::path path_;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

// Trunk line with ten 40 kNm3/h offtakes and extra lines appended.
Scenario trunk(std::size_t frames, const std::string& extra, double noise = 0.0) {
  std::string text = "fixture = trunkline50\nframes = " + std::to_string(frames) +
                     "\nstart = 2021-03-01T00:00:00Z\nseed = 7\nnoise = " + io::format_double(noise) +
                     "\npressure.S = 70\n";
  for (int b = 0; b <= 9; ++b) text += "inflow.N" + std::to_string(b) + "4 = -40\n";
  std::istringstream in(text + extra);
  return parse_scenario(in);
}

void write_history(const Scenario& s, const TempDir& dir) {
  std::ofstream topo(dir / "topology.csv");
  serialize_topology(s.network, topo);
  std::ofstream states(dir / "states.csv");
  serialize_states(s.network, simulate(s), states);
}

RunConfig config_for(const TempDir& data, const std::string& out) {
  RunConfig cfg;
  cfg.topology = data / "topology.csv";
  cfg.states = data / "states.csv";
  cfg.out_dir = out;
  return cfg;
}

const std::vector<std::string> output_files{
    "terms.csv",     "scan_summary.txt",          "components.csv", "component_pipes.csv",
    "components_summary.txt", "histogram.csv",    "histogram_realistic.csv", "chains.csv",
    "persistence_summary.txt", "sweep.csv",       "hexbin.csv"};

std::set<std::string> pipes_where(const std::string& terms_path, bool relevant_only) {
  std::set<std::string> out;
  for (const auto& r : read_terms_file(terms_path))
    if (!relevant_only || r.relevant) out.insert(r.pipe_id);
  return out;
}

int run_cli(const std::string& args, const std::string& stdout_path) {
  const std::string cmd = std::string(INERTIA_CLI) + " " + args + " > " + stdout_path + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

class PipelineHistory : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    data_ = new TempDir;
    write_history(trunk(40, "step.B54@8 = 20\nstep.B14@20 = 144\nstep.B24@21 = 144\nstep.EX@30 = 2500\n", 0.0005),
                  *data_);
  }
  static void TearDownTestSuite() {
    delete data_;
    data_ = nullptr;
  }
  static TempDir* data_;
};
TempDir* PipelineHistory::data_ = nullptr;

TEST_F(PipelineHistory, StagesComposeToTheSameFilesAsRunAll) {
  TempDir out;
  const auto staged = config_for(*data_, out / "staged");
  const auto scan = run_scan(staged);
  run_components(staged);
  run_persistence(staged);
  run_report(staged);
  const auto all = run_all(config_for(*data_, out / "all"));
  EXPECT_EQ(all.scan.pairs, scan.pairs);
  for (const auto& f : output_files) {
    const auto a = slurp(out / ("staged/" + f)), b = slurp(out / ("all/" + f));
    EXPECT_FALSE(a.empty()) << f;
    EXPECT_EQ(a, b) << f;
  }
  EXPECT_GT(all.components.by_class[2], 0u);
}

TEST_F(PipelineHistory, ThreadCountAndChunkingDoNotChangeOutput) {
  TempDir out;
  auto one = config_for(*data_, out / "t1");
  run_all(one);
  auto many = config_for(*data_, out / "t8");
  many.threads = 8;
  many.chunk_pairs = 7;
  run_all(many);
  for (const auto& f : output_files) EXPECT_EQ(slurp(out / ("t1/" + f)), slurp(out / ("t8/" + f))) << f;
}

TEST_F(PipelineHistory, CountsAreConserved) {
  TempDir out;
  const auto s = run_all(config_for(*data_, out.str()));
  EXPECT_EQ(s.scan.frames, 40u);
  EXPECT_EQ(s.scan.pairs, 39u);
  EXPECT_EQ(s.scan.records_total, 39u * 50u);
  EXPECT_EQ(s.scan.records_evaluated() + s.scan.records_missing + s.scan.records_excluded, s.scan.records_total);
  EXPECT_EQ(s.scan.horizon_seconds(), 39.0 * 180.0);
  EXPECT_EQ(s.components.by_class[0] + s.components.by_class[1] + s.components.by_class[2], s.components.total);
  EXPECT_EQ(read_terms_file(out / "terms.csv").size(), s.scan.prefilter_passed);
}

TEST(Pipeline, SteadyHistoryHasNothingToReport) {
  TempDir data, out;
  write_history(trunk(15, ""), data);
  const auto s = run_all(config_for(data, out.str()));
  EXPECT_EQ(s.scan.prefilter_passed, 0u);
  EXPECT_EQ(s.scan.relevant, 0u);
  EXPECT_EQ(s.components.total, 0u);
  for (const auto& row : s.sweep) EXPECT_EQ(row.rate.human, "never");
}

TEST(Pipeline, SingleStepTouchesExactlyItsSupplyPath) {
  TempDir data, out;
  write_history(trunk(12, "step.B54@6 = 20\n"), data);
  const auto s = run_all(config_for(data, out.str()));
  const std::set<std::string> path{"TR01", "TR02", "TR03", "TR04", "TR05", "B51", "B52", "B53", "B54"};
  EXPECT_EQ(pipes_where(out / "terms.csv", false), path);
  // 20 kNm3/h stays below the per-length threshold on the 1 m trunk but not on the 0.4 m branch.
  EXPECT_EQ(pipes_where(out / "terms.csv", true), (std::set<std::string>{"B51", "B52", "B53", "B54"}));
  ASSERT_EQ(s.components.total, 1u);
  EXPECT_EQ(s.components.by_class[0], 1u);
}

TEST(Pipeline, ExclusionWindowRemovesTheEvent) {
  TempDir data, out;
  write_history(trunk(12, "step.B54@6 = 20\n"), data);
  std::string excl = "pipe_id,start_iso8601,end_iso8601\n";
  for (int j = 1; j <= 4; ++j) excl += "B5" + std::to_string(j) + ",2021-03-01T00:15:00Z,2021-03-01T00:21:00Z\n";
  write_file(data / "exclusions.csv", excl);
  auto cfg = config_for(data, out.str());
  cfg.exclusions = data / "exclusions.csv";
  const auto s = run_all(cfg);
  EXPECT_EQ(s.scan.relevant, 0u);
  EXPECT_EQ(s.scan.records_excluded, 8u);  // pairs ending at 00:15 and 00:18
  EXPECT_EQ(s.components.total, 0u);
}

TEST(Pipeline, SchemaMismatchNamesTheColumn) {
  TempDir data, out;
  write_history(trunk(3, ""), data);
  write_file(data / "states.csv", "timestamp,entity_id,quantity,value\n");
  try {
    run_scan(config_for(data, out.str()));
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("timestamp_iso8601"), std::string::npos);
  }
}

TEST(Pipeline, ReportStageNeedsAHorizon) {
  TempDir data, out;
  write_history(trunk(5, "step.B54@2 = 20\n"), data);
  auto cfg = config_for(data, out.str());
  run_scan(cfg);
  run_components(cfg);
  fs::remove(out / "scan_summary.txt");
  EXPECT_THROW(run_report(cfg), ParseError);
  cfg.horizon = 3600.0;
  EXPECT_NO_THROW(run_report(cfg));
}

TEST(Config, KeysOverrideDefaults) {
  RunConfig cfg;
  std::istringstream in(
      "# thresholds\nabs_small_bar = 0.2\nabs_high_bar = 0.8\nthreads = 3\ntau_s = 60\n"
      "min_flow_change_kNm3h = 1.5\nsweep_thresholds_bar = 0.2 0.4\nhorizon_s = 86400\n");
  apply_config(cfg, in);
  EXPECT_DOUBLE_EQ(cfg.thresholds.abs_small, 2e4);
  EXPECT_DOUBLE_EQ(cfg.thresholds.abs_high, 8e4);
  EXPECT_EQ(cfg.threads, 3u);
  EXPECT_EQ(cfg.tau, 60.0);
  EXPECT_DOUBLE_EQ(cfg.thresholds.min_flow_change, units::knm3h_to_m3s(1.5));
  EXPECT_EQ(cfg.sweep_thresholds.size(), 2u);
  EXPECT_EQ(*cfg.horizon, 86400.0);

  std::istringstream bad("colour = blue\n");
  EXPECT_THROW(apply_config(cfg, bad), UsageError);
  std::istringstream inverted("abs_small_bar = 0.9\n");
  RunConfig c2;
  apply_config(c2, inverted);
  EXPECT_THROW(c2.validate(), UsageError);
}

TEST(Cli, DeriveThreshold) {
  TempDir out;
  ASSERT_EQ(run_cli("derive-threshold", out / "o.txt"), 0);
  EXPECT_NE(slurp(out / "o.txt").find("min_flow_change_kNm3h=0.636\n"), std::string::npos);
  ASSERT_EQ(run_cli("derive-threshold --Lmax 100km", out / "o.txt"), 0);
  EXPECT_NE(slurp(out / "o.txt").find("min_flow_change_kNm3h=1.272\n"), std::string::npos);
  ASSERT_EQ(run_cli("derive-threshold --tau-min 6min --Dmin 0.15m", out / "o.txt"), 0);
  EXPECT_NE(slurp(out / "o.txt").find("min_flow_change_kNm3h=1.272\n"), std::string::npos);
}

TEST(Cli, ExitCodes) {
  TempDir data, out;
  EXPECT_EQ(run_cli("", out / "o.txt"), 2);
  EXPECT_EQ(run_cli("derive-threshold --Lmax", out / "o.txt"), 2);
  EXPECT_EQ(run_cli("derive-threshold --Lmax 10parsecs", out / "o.txt"), 2);
  EXPECT_EQ(run_cli("scan --states nowhere.csv", out / "o.txt"), 2);  // no topology

  write_history(trunk(3, ""), data);
  write_file(data / "broken.csv", "timestamp_iso8601,entity_id,quantity,value\n2021-03-01T00:00:00Z,ZZ,node.pressure_bar,1\n");
  EXPECT_EQ(run_cli("scan --topology " + (data / "topology.csv") + " --states " + (data / "broken.csv") + " --out " +
                        (out / "x"),
                    out / "o.txt"),
            1);
  EXPECT_NE(slurp(out / "o.txt").find("ZZ"), std::string::npos);
}

TEST(Cli, FlagsBeatConfigWhichBeatsDefaults) {
  TempDir data, out;
  write_history(trunk(6, "step.B54@3 = 20\n"), data);
  write_file(data / "run.cfg", "topology = " + (data / "topology.csv") + "\nstates = " + (data / "states.csv") +
                                   "\nout = " + (out / "from_config") + "\nthreads = 2\n");
  ASSERT_EQ(run_cli("run --config " + (data / "run.cfg"), out / "o.txt"), 0) << slurp(out / "o.txt");
  EXPECT_TRUE(fs::exists(out / "from_config/terms.csv"));
  ASSERT_EQ(run_cli("run --config " + (data / "run.cfg") + " --out " + (out / "from_flag"), out / "o.txt"), 0);
  EXPECT_TRUE(fs::exists(out / "from_flag/terms.csv"));
  EXPECT_EQ(slurp(out / "from_flag/terms.csv"), slurp(out / "from_config/terms.csv"));

  ASSERT_EQ(run_cli("synth --scenario " INERTIA_FIXTURE_DIR "/steady.scenario --frames 3 --out " + (out / "syn"),
                    out / "o.txt"),
            0);
  const auto net = parse_topology_file(out / "syn/topology.csv");
  EXPECT_EQ(parse_states_file(out / "syn/states.csv", net).size(), 3u);
}
