#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include <json.hpp>

#include "lvreg/cli.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using lvreg::run_cli;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

// Small but complete deform settings so a subject takes well under a second.
const char* kQuickConfig = R"({
  "seed": 3,
  "baseline_points": 1500,
  "evaluation_points": 4000,
  "deformation": {"iterations": 25, "n_samples": 800, "plateau_window": 0}
})";

fs::path quick_cohort(const std::string& name) {
  const fs::path dir = testing::temp_dir(name);
  const Run r = cli({"synth", "--out", (dir / "cohort").string(), "--n-normal", "2", "--n-demented", "2", "--level",
                     "3", "--seed", "5"});
  REQUIRE(r.code == lvreg::kExitOk);
  testing::write_file(dir / "quick.json", kQuickConfig);
  return dir;
}

std::vector<std::string> files_under(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), dir).string());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_CASE("synth writes a cohort and reruns byte-identically") {
  const fs::path dir = testing::temp_dir("cli_synth");
  REQUIRE(cli({"synth", "--out", (dir / "a").string(), "--seed", "11"}).code == lvreg::kExitOk);
  REQUIRE(cli({"synth", "--out", (dir / "b").string(), "--seed", "11"}).code == lvreg::kExitOk);
  const std::string manifest = testing::read_file(dir / "a" / "manifest.csv");
  CHECK(std::count(manifest.begin(), manifest.end(), '\n') == 21);
  const auto files = files_under(dir / "a");
  CHECK(files == files_under(dir / "b"));
  CHECK(files.size() == 83);  // 40 volumes as header + raw, manifest, truth, config
  for (const auto& f : files) {
    if (f.ends_with(".raw") || f.ends_with(".json") || f.ends_with(".csv")) {
      CHECK_MESSAGE(testing::read_file(dir / "a" / f) == testing::read_file(dir / "b" / f), f);
    }
  }
  REQUIRE(cli({"synth", "--out", (dir / "c").string(), "--seed", "12"}).code == lvreg::kExitOk);
  CHECK(testing::read_file(dir / "c" / "manifest.csv") != manifest);

  const Run one = cli({"synth", "--out", (dir / "d").string(), "--n-normal", "1"});
  CHECK(one.code == lvreg::kExitValidation);
  CHECK(one.err.find("at least 2") != std::string::npos);
  testing::write_file(dir / "blocker", "x");
  CHECK(cli({"synth", "--out", (dir / "blocker" / "sub").string()}).code == lvreg::kExitRuntime);
  CHECK(cli({"frobnicate"}).code == lvreg::kExitValidation);
  CHECK(cli({}).code == lvreg::kExitValidation);
}

TEST_CASE("deform and analyze end to end") {
  const fs::path dir = quick_cohort("cli_pipeline");
  const std::string manifest = (dir / "cohort" / "manifest.csv").string();
  const std::string config = (dir / "quick.json").string();

  const Run d1 = cli({"deform", "--manifest", manifest, "--config", config, "--out", (dir / "r1").string()});
  REQUIRE_MESSAGE(d1.code == lvreg::kExitOk, d1.err);
  const Run d2 = cli({"deform", "--manifest", manifest, "--config", config, "--out", (dir / "r2").string(), "--jobs",
                      "2"});
  REQUIRE(d2.code == lvreg::kExitOk);
  for (const char* id : {"N01", "N02", "D01", "D02"}) {
    for (const char* f : {"loss_history.csv", "displacement.csv", "deformed.json", "deformed.obj", "labels.csv"}) {
      CHECK_MESSAGE(testing::read_file(dir / "r1" / id / f) == testing::read_file(dir / "r2" / id / f), id, "/", f);
    }
  }
  CHECK(testing::read_file(dir / "r1" / "summary.csv") == testing::read_file(dir / "r2" / "summary.csv"));
  const auto side = nlohmann::json::parse(testing::read_file(dir / "r1" / "N01" / "deformed.json"));
  CHECK(side["k"] == 25);

  const Run only = cli({"deform", "--manifest", manifest, "--config", config, "--out", (dir / "r3").string(),
                        "--subject", "D02"});
  CHECK(only.code == lvreg::kExitOk);
  CHECK(fs::exists(dir / "r3" / "D02" / "loss_history.csv"));
  CHECK_FALSE(fs::exists(dir / "r3" / "N01"));
  CHECK(testing::read_file(dir / "r3" / "D02" / "loss_history.csv") ==
        testing::read_file(dir / "r1" / "D02" / "loss_history.csv"));
  CHECK(cli({"deform", "--manifest", manifest, "--out", (dir / "r4").string(), "--subject", "X9"}).code ==
        lvreg::kExitValidation);

  const Run a1 = cli({"analyze", "--runs", (dir / "r1").string(), "--manifest", manifest, "--out",
                      (dir / "a1").string()});
  REQUIRE_MESSAGE(a1.code == lvreg::kExitOk, a1.err);
  const Run a2 = cli({"analyze", "--runs", (dir / "r2").string(), "--manifest", manifest, "--out",
                      (dir / "a2").string()});
  REQUIRE(a2.code == lvreg::kExitOk);
  for (const char* f : {"cohort.csv", "cohort.svg", "subjects.csv", "cohort.json"}) {
    CHECK(testing::read_file(dir / "a1" / f) == testing::read_file(dir / "a2" / f));
  }
  const std::string csv = testing::read_file(dir / "a1" / "cohort.csv");
  CHECK(csv.rfind("part,group,mean_norm_disp,sd,n,U,p_two_sided\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 13);  // header + (5 parts + whole-LV) x 2 groups
  const std::string svg = testing::read_file(dir / "a1" / "cohort.svg");
  CHECK(svg.rfind("<?xml", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);

  // missing runs
  const Run missing = cli({"analyze", "--runs", (dir / "r3").string(), "--manifest", manifest, "--out",
                           (dir / "a3").string()});
  CHECK(missing.code == lvreg::kExitValidation);
  CHECK(missing.err.find("missing run") != std::string::npos);

  // a manifest with one group only
  const std::string text = testing::read_file(manifest);
  std::istringstream lines(text);
  std::string line, single;
  while (std::getline(lines, line))
    if (line.find(",demented,") == std::string::npos) single += line + "\n";
  testing::write_file(dir / "cohort" / "normals.csv", single);
  const Run one_group = cli({"analyze", "--runs", (dir / "r1").string(), "--manifest",
                             (dir / "cohort" / "normals.csv").string(), "--out", (dir / "a4").string()});
  CHECK(one_group.code == lvreg::kExitValidation);
  CHECK(one_group.err.find("2 subjects per group") != std::string::npos);
}

TEST_CASE("self registration through the CLI stays within the chamfer bound") {
  const fs::path dir = quick_cohort("cli_self");
  const std::string header =
      "id,group,sex,baseline_age,delta_t_years,etiv_mm3,baseline_volume_path,followup_volume_path\n";
  testing::write_file(dir / "cohort" / "self.csv",
                      header + "S1,normal,,70,1,1.4e6,volumes/N01_followup.json,volumes/N01_followup.json\n");
  testing::write_file(dir / "self.json",
                      R"({"baseline_points": 5000, "evaluation_points": 20000,
                          "deformation": {"iterations": 40, "plateau_window": 0}})");
  const Run r = cli({"deform", "--manifest", (dir / "cohort" / "self.csv").string(), "--config",
                     (dir / "self.json").string(), "--out", (dir / "runs").string()});
  REQUIRE_MESSAGE(r.code == lvreg::kExitOk, r.err);
  const auto side = nlohmann::json::parse(testing::read_file(dir / "runs" / "S1" / "deformed.json"));
  const double diag = side["bbox_diagonal"];
  CHECK(side["evaluation_chamfer"].get<double>() < 1e-4 * diag * diag);
}

TEST_CASE("configuration and argument errors") {
  const fs::path dir = quick_cohort("cli_errors");
  const std::string manifest = (dir / "cohort" / "manifest.csv").string();
  testing::write_file(dir / "bad.json", R"({"deformation": {"iterations": 5, "momentum": 0.9}})");
  const Run unknown = cli({"deform", "--manifest", manifest, "--config", (dir / "bad.json").string(), "--out",
                           (dir / "r").string()});
  CHECK(unknown.code == lvreg::kExitValidation);
  CHECK(unknown.err.find("unknown key 'deformation.momentum'") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "r"));

  CHECK(cli({"deform", "--config", (dir / "quick.json").string()}).code == lvreg::kExitValidation);
  CHECK(cli({"deform", "--manifest", manifest, "--out", (dir / "r").string(), "--jobs", "0"}).code ==
        lvreg::kExitValidation);
  CHECK(cli({"analyze", "--runs", (dir / "nowhere").string(), "--manifest", manifest, "--out",
             (dir / "a").string()})
            .code == lvreg::kExitValidation);

  // a subject whose volume lacks the peripheral labels is reported, not fatal to the others
  const std::string text = testing::read_file(manifest);
  testing::write_file(dir / "cohort" / "broken.csv",
                      text + "X1,normal,,70,1,1.4e6,volumes/missing.json,volumes/N01_followup.json\n");
  const Run partial = cli({"deform", "--manifest", (dir / "cohort" / "broken.csv").string(), "--config",
                           (dir / "quick.json").string(), "--out", (dir / "rb").string(), "--subject", "X1"});
  CHECK(partial.code == lvreg::kExitValidation);
  CHECK(testing::read_file(dir / "rb" / "summary.csv").find("X1,invalid") != std::string::npos);
}
