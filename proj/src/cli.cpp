#include "lvreg/cli.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "lvreg/analysis.hpp"
#include "lvreg/config.hpp"
#include "lvreg/error.hpp"
#include "lvreg/pipeline.hpp"
#include "lvreg/synth.hpp"
#include "lvreg/volume.hpp"

namespace lvreg {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

int default_jobs() {
  const char* env = std::getenv("LVREG_JOBS");
  if (env == nullptr || *env == '\0') return 1;
  int jobs = 0;
  const std::string s(env);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), jobs);
  if (ec != std::errc() || ptr != s.data() + s.size() || jobs < 1) {
    throw ValidationError(fmt::format("LVREG_JOBS must be a positive integer, got '{}'", s));
  }
  return jobs;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(fmt::format("cannot write '{}'", path.string()));
  f << text;
  if (!f) throw Error(fmt::format("failed writing '{}'", path.string()));
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError(fmt::format("cannot open '{}'", path.string()));
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw Error(fmt::format("cannot create directory '{}': {}", dir.string(), ec ? ec.message() : "not a directory"));
  }
}

// ---- synth

struct SynthArgs {
  std::string out;
  CohortSpec spec;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  a.spec.validate();
  const fs::path root(a.out);
  make_dirs(root / "volumes");
  const auto cohort = make_cohort(a.spec);

  std::vector<ManifestEntry> manifest;
  std::string truth = "id,group,bump_amplitude_mm\n";
  for (const auto& s : cohort) {
    const std::string base = "volumes/" + s.record.id + "_baseline.json";
    const std::string follow = "volumes/" + s.record.id + "_followup.json";
    write_volume_json(s.baseline, root / base);
    write_volume_json(s.followup, root / follow);
    manifest.push_back({s.record, base, follow});
    truth += fmt::format("{},{},{:.17g}\n", s.record.id, to_string(s.record.group), s.bump_amplitude);
  }
  write_manifest(manifest, root / "manifest.csv");
  write_text(root / "truth.csv", truth);
  RunConfig config = RunConfig::defaults(a.spec.part_count);
  config.seed = a.spec.seed;
  config.deformation.seed = a.spec.seed;
  write_text(root / "config.json", run_config_json(config));
  out << fmt::format("wrote {} subjects ({} normal, {} demented) to {}\n", cohort.size(), a.spec.n_normal,
                     a.spec.n_demented, root.string());
  return kExitOk;
}

// ---- deform

struct DeformArgs {
  std::string manifest;
  std::string config;
  std::string out;
  std::string subject;
  int jobs = 0;
};

struct SubjectStatus {
  std::string id;
  std::string status = "pending";  // ok | invalid | failed
  int iterations = 0;
  double final_total = std::nan("");
  double evaluation_chamfer = std::nan("");
  double bbox_diagonal = std::nan("");
  std::string message;
};

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), ',', ';');
  return s;
}

int cmd_deform(const DeformArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig config = a.config.empty() ? RunConfig::defaults() : load_run_config(a.config);
  const std::string manifest_arg = !a.manifest.empty() ? a.manifest : config.manifest_path.value_or("");
  const std::string out_arg = !a.out.empty() ? a.out : config.out_path.value_or("");
  if (manifest_arg.empty()) throw ValidationError("deform needs --manifest (or paths.manifest in the config)");
  if (out_arg.empty()) throw ValidationError("deform needs --out (or paths.out in the config)");
  const fs::path manifest_path(manifest_arg);
  auto entries = read_manifest(manifest_path);
  if (!a.subject.empty()) {
    std::erase_if(entries, [&](const ManifestEntry& e) { return e.subject.id != a.subject; });
    if (entries.empty()) throw ValidationError(fmt::format("subject '{}' is not in the manifest", a.subject));
  }
  const int jobs = a.jobs > 0 ? a.jobs : default_jobs();
  const fs::path root(out_arg);
  make_dirs(root);
  const fs::path base_dir = manifest_path.parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base_dir / p; };

  std::vector<SubjectStatus> status(entries.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < entries.size(); i = next++) {
      const auto& e = entries[i];
      SubjectStatus& s = status[i];
      s.id = e.subject.id;
      try {
        const LabelVolume baseline = read_volume(resolve(e.baseline_path));
        const LabelVolume followup = read_volume(resolve(e.followup_path));
        const SubjectOutcome o = run_subject(e.subject.id, baseline, followup, config);
        write_subject_outputs(o, config, root / e.subject.id);
        s.status = "ok";
        s.iterations = o.state.iteration;
        s.final_total = o.state.history.back().total;
        s.evaluation_chamfer = o.evaluation_chamfer;
        s.bbox_diagonal = o.bbox_diagonal;
      } catch (const ValidationError& ex) {
        s.status = "invalid";
        s.message = one_line(ex.what());
      } catch (const OptimizationError& ex) {
        s.status = "failed";
        s.iterations = ex.iteration();
        if (ex.last_finite()) s.final_total = ex.last_finite()->total;
        s.message = one_line(ex.what());
      } catch (const std::exception& ex) {
        s.status = "failed";
        s.message = one_line(ex.what());
      }
      std::lock_guard lock(log_mutex);
      err << fmt::format("[{}] {} {}{}\n", s.status, s.id, s.message.empty() ? "" : ": ", s.message);
    }
  };
  std::vector<std::thread> pool;
  const auto n_threads = std::min<std::size_t>(static_cast<std::size_t>(jobs), entries.size());
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::string csv = "id,status,iterations,final_total,evaluation_chamfer,bbox_diagonal,message\n";
  out << fmt::format("{:<16} {:<8} {:>6} {:>14} {:>14}\n", "subject", "status", "iters", "final_total",
                     "eval_chamfer");
  int failed = 0, invalid = 0;
  for (const auto& s : status) {
    csv += fmt::format("{},{},{},{:.17g},{:.17g},{:.17g},{}\n", s.id, s.status, s.iterations, s.final_total,
                       s.evaluation_chamfer, s.bbox_diagonal, s.message);
    out << fmt::format("{:<16} {:<8} {:>6} {:>14.6g} {:>14.6g}\n", s.id, s.status, s.iterations, s.final_total,
                       s.evaluation_chamfer);
    failed += s.status == "failed";
    invalid += s.status == "invalid";
  }
  write_text(root / "summary.csv", csv);
  out << fmt::format("{} ok, {} invalid, {} failed\n", status.size() - static_cast<std::size_t>(failed + invalid),
                     invalid, failed);
  if (failed > 0) return kExitRuntime;
  if (invalid > 0) return kExitValidation;
  return kExitOk;
}

// ---- analyze

struct AnalyzeArgs {
  std::string runs;
  std::string manifest;
  std::string out;
};

struct SubjectRun {
  std::vector<std::string> parts;
  std::vector<int> labels;
  std::vector<double> displacement;
};

SubjectRun load_run(const fs::path& dir, const std::string& id) {
  if (!fs::is_directory(dir)) throw ValidationError(fmt::format("missing run for subject '{}' ({})", id, dir.string()));
  SubjectRun run;
  ordered_json side;
  try {
    side = ordered_json::parse(read_text(dir / "deformed.json"));
    for (const auto& p : side.at("config").at("parts")) run.parts.push_back(p.get<std::string>());
  } catch (const ordered_json::exception& e) {
    throw ValidationError(fmt::format("malformed {}: {}", (dir / "deformed.json").string(), e.what()));
  }
  const PartLabelSet parts(run.parts);
  std::istringstream in(read_text(dir / "displacement.csv"));
  std::string line;
  if (!std::getline(in, line) || line != "vertex_index,label_name,displacement_mm") {
    throw ValidationError(fmt::format("{}: unexpected header", (dir / "displacement.csv").string()));
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) {
      throw ValidationError(fmt::format("{}: malformed row '{}'", (dir / "displacement.csv").string(), line));
    }
    if (std::stoul(line.substr(0, c1)) != run.labels.size()) {
      throw ValidationError(fmt::format("{}: rows out of order", (dir / "displacement.csv").string()));
    }
    run.labels.push_back(parts.index_of(line.substr(c1 + 1, c2 - c1 - 1)));
    const std::string value = line.substr(c2 + 1);
    double d = 0.0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), d);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
      throw ValidationError(fmt::format("{}: bad displacement '{}'", (dir / "displacement.csv").string(), value));
    }
    run.displacement.push_back(d);
  }
  return run;
}

int cmd_analyze(const AnalyzeArgs& a, std::ostream& out) {
  const auto entries = read_manifest(a.manifest);
  const fs::path runs(a.runs);
  if (!fs::is_directory(runs)) throw ValidationError(fmt::format("runs directory '{}' does not exist", a.runs));
  std::vector<DisplacementReport> reports;
  std::optional<std::vector<std::string>> part_names;
  std::string subjects_csv = "id,group,part,n_vertices,mean_disp_mm,mean_norm_disp\n";
  for (const auto& e : entries) {
    const SubjectRun run = load_run(runs / e.subject.id, e.subject.id);
    if (!part_names) {
      part_names = run.parts;
    } else if (*part_names != run.parts) {
      throw ValidationError(fmt::format("subject '{}' was run with a different part list", e.subject.id));
    }
    const auto r = per_part_report(run.displacement, run.labels, static_cast<int>(run.parts.size()), e.subject);
    for (std::size_t p = 0; p < run.parts.size(); ++p) {
      if (!r.part_mean_raw[p]) continue;
      subjects_csv += fmt::format("{},{},{},{},{:.17g},{:.17g}\n", e.subject.id, to_string(e.subject.group),
                                  run.parts[p], r.part_vertex_count[p], *r.part_mean_raw[p],
                                  *r.part_mean_normalized[p]);
    }
    subjects_csv += fmt::format("{},{},{},{},{:.17g},{:.17g}\n", e.subject.id, to_string(e.subject.group),
                                kWholeLvName, run.labels.size(), r.whole_mean_raw, r.whole_mean_normalized);
    reports.push_back(r);
  }
  if (!part_names) throw ValidationError("manifest lists no subjects");
  const CohortTable table = cohort_report(reports, PartLabelSet(*part_names));

  const fs::path root(a.out);
  make_dirs(root);
  write_text(root / "cohort.csv", cohort_csv(table));
  write_text(root / "cohort.svg", cohort_svg(table));
  write_text(root / "subjects.csv", subjects_csv);
  ordered_json meta;
  meta["test"] = "Mann-Whitney U, two-sided";
  meta["u_statistic"] = "U of the normal group";
  meta["p_value"] = "exact enumeration when n_normal + n_demented <= 16, else normal approximation with tie and continuity correction";
  meta["normalization"] = "mean displacement / (delta_t_years * etiv_mm3^(1/3))";
  meta["subjects"] = reports.size();
  write_text(root / "cohort.json", meta.dump(2) + "\n");
  out << cohort_csv(table);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Part-aware longitudinal lateral-ventricle shape registration"};
  app.name("lvreg");
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic two-group cohort");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--n-normal", synth.spec.n_normal, "Normal subjects")->capture_default_str();
  s->add_option("--n-demented", synth.spec.n_demented, "Demented subjects")->capture_default_str();
  s->add_option("--effect", synth.spec.effect, "Demented/normal bump amplitude ratio")->capture_default_str();
  s->add_option("--seed", synth.spec.seed, "Seed")->capture_default_str();
  s->add_option("--spacing", synth.spec.spacing, "Voxel spacing (mm)")->capture_default_str();
  s->add_option("--level", synth.spec.level, "Icosphere subdivision level")->capture_default_str();
  s->add_option("--parts", synth.spec.part_count, "Number of peripheral parts")->capture_default_str();
  s->add_option("--amplitude", synth.spec.bump_amplitude, "Normal-group bump amplitude (mm)")->capture_default_str();
  s->add_option("--width", synth.spec.bump_width, "Bump angular width (rad)")->capture_default_str();
  s->add_option("--jitter", synth.spec.jitter, "Relative amplitude jitter")->capture_default_str();

  DeformArgs deform;
  auto* d = app.add_subcommand("deform", "Register follow-up meshes onto baseline clouds");
  d->add_option("--manifest", deform.manifest, "Subject manifest CSV");
  d->add_option("--config", deform.config, "Run configuration JSON");
  d->add_option("--out", deform.out, "Output directory");
  d->add_option("--subject", deform.subject, "Only run this subject id");
  d->add_option("--jobs", deform.jobs, "Concurrent subjects (default $LVREG_JOBS or 1)")->check(CLI::PositiveNumber);

  AnalyzeArgs analyze;
  auto* an = app.add_subcommand("analyze", "Group statistics of normalized displacement");
  an->add_option("--runs", analyze.runs, "Directory written by deform")->required();
  an->add_option("--manifest", analyze.manifest, "Subject manifest CSV")->required();
  an->add_option("--out", analyze.out, "Output directory")->required();

  std::vector<std::string> argv_store{"lvreg"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& x : argv_store) argv.push_back(x.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*s) return cmd_synth(synth, out);
    if (*d) return cmd_deform(deform, out, err);
    if (*an) return cmd_analyze(analyze, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace lvreg
