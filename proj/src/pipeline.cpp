#include "lvreg/pipeline.hpp"

#include <fstream>

#include <fmt/format.h>
#include <json.hpp>

#include "lvreg/error.hpp"
#include "lvreg/mesh_io.hpp"
#include "lvreg/random.hpp"

namespace lvreg {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::uint64_t subject_seed(std::uint64_t run_seed, const std::string& subject_id) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : subject_id) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return derive_seed(run_seed, h);
}

SubjectOutcome run_subject(const std::string& subject_id, const LabelVolume& baseline, const LabelVolume& followup,
                           const RunConfig& config) {
  config.validate();
  const StructureMap& map = config.structures;
  map.validate(baseline);
  map.validate(followup);

  SubjectOutcome out;
  out.subject_id = subject_id;
  out.seed = subject_seed(config.seed, subject_id);

  const PointCloud cloud =
      surface_point_cloud(baseline, map.lv_value, config.baseline_points, derive_seed(out.seed, 1));
  out.baseline = LabeledPointCloud(cloud, nearest_part_labels(cloud, baseline, map), map.part_count());
  out.followup = label_mesh(extract_surface(followup, map.lv_value), followup, map);

  DeformationConfig dc = config.deformation;
  dc.seed = derive_seed(out.seed, 2);
  out.state = optimize(init_state(out.followup, dc), out.baseline, dc);
  out.displacement = displacement_field(out.state);

  const TriangleMesh deformed = out.followup.mesh.with_vertices(out.state.current);
  out.evaluation_chamfer = evaluation_chamfer(deformed, cloud, config.evaluation_points, derive_seed(out.seed, 3));
  out.bbox_diagonal = bounding_box(cloud.points()).diagonal();
  return out;
}

std::string loss_history_csv(const DeformationState& state) {
  std::string out = loss_csv_header(state.follow_up.part_count) + "\n";
  for (std::size_t k = 0; k < state.history.size(); ++k) {
    out += loss_csv_row(static_cast<int>(k), state.history[k]) + "\n";
  }
  return out;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(fmt::format("cannot write '{}'", path.string()));
  f << text;
  if (!f) throw Error(fmt::format("failed writing '{}'", path.string()));
}

ordered_json breakdown_json(const LossBreakdown& b) {
  return ordered_json{{"cf", b.cf},     {"pm", b.pm},         {"pm_i", b.pm_i}, {"vert", b.vert},
                      {"edge", b.edge}, {"normal", b.normal}, {"lap", b.lap},   {"total", b.total}};
}

}  // namespace

void write_subject_outputs(const SubjectOutcome& o, const RunConfig& config, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(fmt::format("cannot create '{}': {}", dir.string(), ec.message()));

  const TriangleMesh deformed = o.followup.mesh.with_vertices(o.state.current);
  write_obj(deformed, dir / "deformed.obj");
  write_label_csv(o.followup.vertex_labels, config.structures.parts, dir / "labels.csv");
  write_text(dir / "loss_history.csv", loss_history_csv(o.state));

  std::string disp = "vertex_index,label_name,displacement_mm\n";
  for (std::size_t v = 0; v < o.displacement.size(); ++v) {
    disp += fmt::format("{},{},{:.17g}\n", v, config.structures.parts.name(o.followup.vertex_labels[v]),
                        o.displacement[v]);
  }
  write_text(dir / "displacement.csv", disp);

  ordered_json side;
  side["subject"] = o.subject_id;
  side["k"] = o.state.iteration;
  side["seed"] = o.seed;
  side["config"] = ordered_json::parse(run_config_json(config));
  side["final"] = o.state.history.empty() ? ordered_json(nullptr) : breakdown_json(o.state.history.back());
  side["evaluation_chamfer"] = o.evaluation_chamfer;
  side["bbox_diagonal"] = o.bbox_diagonal;
  side["warnings"] = o.state.warnings;
  write_text(dir / "deformed.json", side.dump(2) + "\n");
}

}  // namespace lvreg
