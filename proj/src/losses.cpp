#include "lvreg/losses.hpp"

#include <numeric>

#include <fmt/format.h>

#include "lvreg/error.hpp"
#include "lvreg/random.hpp"

namespace lvreg {

using ad::Tensor;

LossWeights LossWeights::defaults(int part_count) {
  LossWeights w;
  w.pm_i.assign(static_cast<std::size_t>(part_count), 1.0);
  return w;
}

void LossWeights::validate(int part_count) const {
  for (double v : {cf, pm, vert, edge, normal, lap}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("loss weights must be finite and >= 0");
  }
  if (pm_i.size() != static_cast<std::size_t>(part_count)) {
    throw ValidationError(
        fmt::format("lambda_pm_i has {} entries, expected one per part ({})", pm_i.size(), part_count));
  }
  for (double v : pm_i) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("loss weights must be finite and >= 0");
  }
}

double LossBreakdown::weighted_sum(const LossWeights& w) const {
  double t = cf * w.cf;
  t = t + pm * w.pm;
  for (std::size_t i = 0; i < pm_i.size(); ++i) t = t + pm_i[i] * w.pm_i[i];
  t = t + vert * w.vert;
  t = t + edge * w.edge;
  t = t + normal * w.normal;
  t = t + lap * w.lap;
  return t;
}

std::string loss_csv_header(int part_count) {
  std::string out = "iter,cf,pm";
  for (int i = 0; i < part_count; ++i) out += fmt::format(",pm_{}", i);
  out += ",vert,edge,normal,lap,total";
  return out;
}

std::string loss_csv_row(int iteration, const LossBreakdown& b) {
  std::string out = fmt::format("{},{:.17g},{:.17g}", iteration, b.cf, b.pm);
  for (double v : b.pm_i) out += fmt::format(",{:.17g}", v);
  out += fmt::format(",{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}", b.vert, b.edge, b.normal, b.lap, b.total);
  return out;
}

std::uint64_t iteration_seed(std::uint64_t master_seed, std::uint64_t iteration) {
  return derive_seed(master_seed, iteration);
}

Tensor sample_points(const Tensor& vertices, std::span<const Face> faces,
                     std::span<const int> face_indices, std::span<const Vec3> barycentrics) {
  const std::size_t n = face_indices.size();
  if (barycentrics.size() != n) throw ValidationError("sample_points: face/barycentric length mismatch");
  Tensor result;
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<int> corner(n);
    std::vector<double> weight(n * 3);
    for (std::size_t i = 0; i < n; ++i) {
      corner[i] = faces[static_cast<std::size_t>(face_indices[i])][c];
      const double b = barycentrics[i][static_cast<int>(c)];
      weight[3 * i] = weight[3 * i + 1] = weight[3 * i + 2] = b;
    }
    Tensor term = ad::mul(ad::gather_rows(vertices, corner), Tensor::matrix(n, 3, std::move(weight)));
    result = c == 0 ? term : ad::add(result, term);
  }
  return result;
}

namespace {

Tensor mean_squared_rows(const Tensor& diff) { return ad::mean(ad::sum_cols(ad::square(diff))); }

Tensor gathered_constant(std::span<const Vec3> points, std::span<const int> indices) {
  std::vector<double> data(indices.size() * 3);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Vec3& p = points[static_cast<std::size_t>(indices[i])];
    for (int c = 0; c < 3; ++c) data[3 * i + static_cast<std::size_t>(c)] = p[c];
  }
  return Tensor::matrix(indices.size(), 3, std::move(data));
}

}  // namespace

Tensor chamfer_loss(const Tensor& samples, const PointCloud& baseline, const PointGrid* baseline_index) {
  if (samples.size() == 0 || baseline.empty()) throw ValidationError("chamfer_loss: empty cloud");
  const std::vector<Vec3> sample_values = samples.to_points();

  std::unique_ptr<PointGrid> local;
  if (baseline_index == nullptr) {
    local = std::make_unique<PointGrid>(baseline.points());
    baseline_index = local.get();
  }
  std::vector<int> to_baseline(sample_values.size());
  for (std::size_t i = 0; i < sample_values.size(); ++i) to_baseline[i] = baseline_index->nearest(sample_values[i]).first;

  const PointGrid sample_grid(sample_values);
  std::vector<int> to_samples(baseline.size());
  for (std::size_t j = 0; j < baseline.size(); ++j) to_samples[j] = sample_grid.nearest(baseline[j]).first;

  const Tensor forward_term =
      mean_squared_rows(ad::sub(samples, gathered_constant(baseline.points(), to_baseline)));
  const Tensor backward_term =
      mean_squared_rows(ad::sub(ad::gather_rows(samples, to_samples), Tensor::from_points(baseline.points())));
  return ad::add(forward_term, backward_term);
}

Tensor point_mesh_loss(std::span<const Vec3> points, const Tensor& vertices, std::span<const Face> faces,
                       std::optional<std::span<const int>> face_subset, const PointTree* point_index) {
  if (points.empty()) throw ValidationError("point_mesh_loss: empty point set");
  std::vector<int> subset;
  if (face_subset) {
    subset.assign(face_subset->begin(), face_subset->end());
  } else {
    subset.resize(faces.size());
    std::iota(subset.begin(), subset.end(), 0);
  }
  if (subset.empty()) throw ValidationError("point_mesh_loss: empty face subset");

  const std::vector<Vec3> verts = vertices.to_points();
  const TriangleIndex triangles(verts, faces, subset);

  // Points to their nearest face.
  std::vector<int> nearest_face(points.size());
  std::vector<Vec3> point_bary(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const TriangleQuery q = triangles.nearest(points[i]);
    nearest_face[i] = q.face;
    point_bary[i] = q.closest.barycentric;
  }
  const Tensor on_surface = sample_points(vertices, faces, nearest_face, point_bary);
  const Tensor point_term = mean_squared_rows(ad::sub(Tensor::from_points(points), on_surface));

  // Faces to their nearest point.
  std::unique_ptr<PointTree> local;
  if (point_index == nullptr) {
    local = std::make_unique<PointTree>(points);
    point_index = local.get();
  }
  std::sort(subset.begin(), subset.end());
  std::vector<Vec3> face_bary(subset.size());
  std::vector<Vec3> face_target(subset.size());
  for (std::size_t k = 0; k < subset.size(); ++k) {
    const Face& f = faces[static_cast<std::size_t>(subset[k])];
    const auto [pi, cp] = point_index->nearest_to_triangle(verts[static_cast<std::size_t>(f[0])],
                                                           verts[static_cast<std::size_t>(f[1])],
                                                           verts[static_cast<std::size_t>(f[2])]);
    face_target[k] = points[static_cast<std::size_t>(pi)];
    face_bary[k] = cp.barycentric;
  }
  const Tensor face_points = sample_points(vertices, faces, subset, face_bary);
  const Tensor face_term = mean_squared_rows(ad::sub(Tensor::from_points(face_target), face_points));
  return ad::add(point_term, face_term);
}

Tensor point_mesh_loss(const PointCloud& points, const TriangleMesh& mesh,
                       std::optional<std::span<const int>> face_subset) {
  return point_mesh_loss(points.points(), Tensor::from_points(mesh.vertices()), mesh.faces(), face_subset);
}

Tensor part_loss(const LabeledPointCloud& baseline, const Tensor& vertices, std::span<const Face> faces,
                 std::span<const int> face_labels, int part, std::vector<std::string>* warnings) {
  if (part < 0 || part >= baseline.part_count) {
    throw ValidationError(fmt::format("part {} out of range [0, {})", part, baseline.part_count));
  }
  std::vector<Vec3> pts;
  for (std::size_t i = 0; i < baseline.cloud.size(); ++i) {
    if (baseline.labels[i] == part) pts.push_back(baseline.cloud[i]);
  }
  std::vector<int> subset;
  for (std::size_t f = 0; f < face_labels.size(); ++f) {
    if (face_labels[f] == part) subset.push_back(static_cast<int>(f));
  }
  if (pts.empty() || subset.empty()) {
    if (warnings != nullptr) {
      warnings->push_back(fmt::format("part {}: no {} carry this label; term set to 0", part,
                                      pts.empty() ? "baseline points" : "mesh faces"));
    }
    return Tensor::scalar(0.0);
  }
  return point_mesh_loss(pts, vertices, faces, std::span<const int>(subset));
}

Tensor part_loss(const LabeledPointCloud& baseline, const LabeledMesh& mesh, int part,
                 std::vector<std::string>* warnings) {
  return part_loss(baseline, Tensor::from_points(mesh.mesh.vertices()), mesh.mesh.faces(), mesh.face_labels,
                   part, warnings);
}

Tensor vert_loss(const Tensor& v0, const Tensor& vk) {
  if (v0.shape() != vk.shape()) {
    throw ValidationError(fmt::format("vert_loss: shape mismatch ({} vs {} rows)", v0.rows(), vk.rows()));
  }
  return ad::sqrt(mean_squared_rows(ad::sub(vk, v0)));
}

std::vector<double> edge_lengths(std::span<const Vec3> vertices, std::span<const std::array<int, 2>> edges) {
  std::vector<double> out(edges.size());
  for (std::size_t e = 0; e < edges.size(); ++e) {
    out[e] = (vertices[static_cast<std::size_t>(edges[e][1])] - vertices[static_cast<std::size_t>(edges[e][0])]).norm();
  }
  return out;
}

Tensor edge_loss(const Tensor& vertices, std::span<const std::array<int, 2>> edges,
                 std::span<const double> reference_lengths, EdgeMode mode) {
  if (edges.empty()) return Tensor::scalar(0.0);
  std::vector<int> lo(edges.size()), hi(edges.size());
  for (std::size_t e = 0; e < edges.size(); ++e) {
    lo[e] = edges[e][0];
    hi[e] = edges[e][1];
  }
  const Tensor vec = ad::sub(ad::gather_rows(vertices, hi), ad::gather_rows(vertices, lo));
  if (mode == EdgeMode::zero) return ad::mean(ad::sum_cols(ad::square(vec)));
  if (reference_lengths.size() != edges.size()) {
    throw ValidationError("edge_loss: reference lengths missing for initial mode");
  }
  const Tensor len = ad::sqrt(ad::sum_cols(ad::square(vec)));
  const Tensor ref = Tensor::matrix(edges.size(), 1, {reference_lengths.begin(), reference_lengths.end()});
  return ad::mean(ad::square(ad::sub(len, ref)));
}

Tensor normal_consistency_loss(const Tensor& vertices, std::span<const Face> faces, const MeshTopology& topology) {
  std::vector<int> fa, fb;
  for (const auto& adjacent : topology.edge_faces) {
    if (adjacent.size() != 2) continue;
    fa.push_back(adjacent[0]);
    fb.push_back(adjacent[1]);
  }
  if (fa.empty()) return Tensor::scalar(0.0);

  std::vector<int> c0(faces.size()), c1(faces.size()), c2(faces.size());
  for (std::size_t f = 0; f < faces.size(); ++f) {
    c0[f] = faces[f][0];
    c1[f] = faces[f][1];
    c2[f] = faces[f][2];
  }
  const Tensor p0 = ad::gather_rows(vertices, c0);
  const Tensor raw = ad::cross_rows(ad::sub(ad::gather_rows(vertices, c1), p0),
                                    ad::sub(ad::gather_rows(vertices, c2), p0));
  const Tensor len = ad::sqrt(ad::sum_cols(ad::square(raw)));
  const Tensor unit = ad::divide(raw, ad::broadcast_cols(len, 3));
  const Tensor cosine = ad::sum_cols(ad::mul(ad::gather_rows(unit, fa), ad::gather_rows(unit, fb)));
  const Tensor ones = Tensor::matrix(fa.size(), 1, std::vector<double>(fa.size(), 1.0));
  return ad::mean(ad::sub(ones, cosine));
}

ad::SparseRows neighbor_mean_matrix(const MeshTopology& topology) {
  ad::SparseRows s;
  s.cols = topology.vertex_adjacency.size();
  for (std::size_t v = 0; v < topology.vertex_adjacency.size(); ++v) {
    const auto& nbrs = topology.vertex_adjacency[v];
    if (nbrs.empty()) throw ValidationError(fmt::format("isolated vertex {}", v));
    const double w = 1.0 / static_cast<double>(nbrs.size());
    for (int j : nbrs) {
      s.col_index.push_back(j);
      s.value.push_back(w);
    }
    s.row_start.push_back(static_cast<int>(s.col_index.size()));
  }
  return s;
}

Tensor laplacian_loss(const Tensor& vertices, const MeshTopology& topology) {
  const ad::SparseRows s = neighbor_mean_matrix(topology);
  return mean_squared_rows(ad::sub(ad::spmm(s, vertices), vertices));
}

RegistrationObjective::RegistrationObjective(const LabeledMesh& follow_up, LabeledPointCloud baseline,
                                             LossWeights weights, EdgeMode edge_mode)
    : v0_(Tensor::from_points(follow_up.mesh.vertices())),
      faces_(follow_up.mesh.faces()),
      face_labels_(follow_up.face_labels),
      topology_(mesh_topology(follow_up.mesh)),
      baseline_(std::move(baseline)),
      weights_(std::move(weights)),
      edge_mode_(edge_mode),
      part_count_(follow_up.part_count) {
  if (baseline_.part_count != part_count_) {
    throw ValidationError(fmt::format("baseline has {} parts, follow-up mesh {}", baseline_.part_count, part_count_));
  }
  weights_.validate(part_count_);
  neighbor_mean_matrix(topology_);  // rejects isolated vertices up front
  rest_lengths_ = edge_lengths(follow_up.mesh.vertices(), topology_.edges);
  baseline_grid_ = std::make_unique<PointGrid>(baseline_.cloud.points());
  baseline_tree_ = std::make_unique<PointTree>(baseline_.cloud.points());

  part_points_.resize(static_cast<std::size_t>(part_count_));
  part_faces_.resize(static_cast<std::size_t>(part_count_));
  for (std::size_t i = 0; i < baseline_.cloud.size(); ++i) {
    part_points_[static_cast<std::size_t>(baseline_.labels[i])].push_back(baseline_.cloud[i]);
  }
  for (std::size_t f = 0; f < face_labels_.size(); ++f) {
    part_faces_[static_cast<std::size_t>(face_labels_[f])].push_back(static_cast<int>(f));
  }
  for (const auto& pts : part_points_) {
    part_trees_.push_back(pts.empty() ? nullptr : std::make_unique<PointTree>(pts));
  }
}

ObjectiveValue RegistrationObjective::evaluate(const Tensor& vk, std::size_t n_samples,
                                               std::uint64_t sample_seed) const {
  if (vk.shape() != v0_.shape()) throw ValidationError("deformed vertices do not match the follow-up mesh");
  std::vector<int> sample_faces;
  std::vector<Vec3> sample_bary;
  sample_surface_locations(vk.to_points(), faces_, n_samples, sample_seed, sample_faces, sample_bary);
  return evaluate_at(vk, sample_faces, sample_bary);
}

ObjectiveValue RegistrationObjective::evaluate_at(const Tensor& vk, std::span<const int> sample_faces,
                                                  std::span<const Vec3> sample_bary) const {
  if (vk.shape() != v0_.shape()) throw ValidationError("deformed vertices do not match the follow-up mesh");
  ObjectiveValue out;
  LossBreakdown& b = out.breakdown;
  const Tensor cf = chamfer_loss(sample_points(vk, faces_, sample_faces, sample_bary), baseline_.cloud,
                                 baseline_grid_.get());
  const Tensor pm = point_mesh_loss(baseline_.cloud.points(), vk, faces_, std::nullopt, baseline_tree_.get());

  std::vector<Tensor> parts;
  for (int i = 0; i < part_count_; ++i) {
    const auto& pts = part_points_[static_cast<std::size_t>(i)];
    const auto& subset = part_faces_[static_cast<std::size_t>(i)];
    if (pts.empty() || subset.empty()) {
      b.warnings.push_back(fmt::format("part {}: no {} carry this label; term set to 0", i,
                                       pts.empty() ? "baseline points" : "mesh faces"));
      parts.push_back(Tensor::scalar(0.0));
      continue;
    }
    parts.push_back(point_mesh_loss(pts, vk, faces_, std::span<const int>(subset),
                                    part_trees_[static_cast<std::size_t>(i)].get()));
  }
  const Tensor vert = vert_loss(v0_, vk);
  const Tensor edge = edge_loss(vk, topology_.edges, rest_lengths_, edge_mode_);
  const Tensor normal = normal_consistency_loss(vk, faces_, topology_);
  const Tensor lap = laplacian_loss(vk, topology_);

  const LossWeights& w = weights_;
  Tensor total = ad::scale(cf, w.cf);
  total = ad::add(total, ad::scale(pm, w.pm));
  for (std::size_t i = 0; i < parts.size(); ++i) total = ad::add(total, ad::scale(parts[i], w.pm_i[i]));
  total = ad::add(total, ad::scale(vert, w.vert));
  total = ad::add(total, ad::scale(edge, w.edge));
  total = ad::add(total, ad::scale(normal, w.normal));
  total = ad::add(total, ad::scale(lap, w.lap));

  b.cf = cf.item();
  b.pm = pm.item();
  for (const Tensor& p : parts) b.pm_i.push_back(p.item());
  b.vert = vert.item();
  b.edge = edge.item();
  b.normal = normal.item();
  b.lap = lap.item();
  b.total = total.item();
  out.total = total;
  return out;
}

}  // namespace lvreg
