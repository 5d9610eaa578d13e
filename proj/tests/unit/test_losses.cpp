#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "lvreg/error.hpp"
#include "lvreg/losses.hpp"
#include "lvreg/synth.hpp"
#include "objective_check.hpp"
#include "support.hpp"

using namespace lvreg;
using ad::Tensor;
using testing::throws_with;

namespace {

TriangleMesh icosphere(int level, double r = 1.0) {
  SynthSpec s;
  s.radii = Vec3::Constant(r);
  s.level = level;
  return make_ellipsoid(s);
}

std::vector<int> all_faces(std::size_t n) {
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<int>(i);
  return out;
}

// A random closed instance: jittered icosphere and a random cloud around it.
struct RandomInstance {
  TriangleMesh mesh;
  std::vector<Vec3> points;
};

RandomInstance random_instance(std::uint64_t seed, int level, std::size_t n_points) {
  Rng rng(seed);
  const TriangleMesh base = icosphere(level, 2.0);
  std::vector<Vec3> v = base.vertices();
  for (Vec3& p : v) p += 0.1 * testing::random_vec(rng);
  RandomInstance out{base.with_vertices(v), testing::random_points(rng, n_points, -2.5, 2.5)};
  return out;
}

}  // namespace

TEST_CASE("chamfer: hand values and brute-force equality") {
  const std::vector<Vec3> cloud = {Vec3(0, 0, 0), Vec3(1, 2, 3), Vec3(-1, 0, 4)};
  CHECK(chamfer_loss(Tensor::from_points(cloud), PointCloud(cloud)).item() == 0.0);
  CHECK(chamfer_loss(Tensor::from_points(std::vector<Vec3>{Vec3(0, 0, 0)}), PointCloud({Vec3(1, 0, 0)})).item() ==
        2.0);

  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    const auto a = testing::random_points(rng, 50);
    const auto b = testing::random_points(rng, 50);
    const double got = chamfer_loss(Tensor::from_points(a), PointCloud(b)).item();
    CHECK(got == doctest::Approx(testing::brute_chamfer(a, b)).epsilon(1e-14));
  }
  CHECK(throws_with<ValidationError>(
      [] { chamfer_loss(Tensor::zeros({0, 3}), PointCloud({Vec3(0, 0, 0)})); }, "empty"));
}

TEST_CASE("chamfer gradient against finite differences") {
  Rng rng(2);
  for (int t = 0; t < 5; ++t) {
    const auto a = testing::random_points(rng, 30);
    const PointCloud b(testing::random_points(rng, 40));
    const std::vector<Tensor> params = {Tensor::from_points(a)};
    const double err =
        ad::grad_check([&](std::span<const Tensor> p) { return chamfer_loss(p[0], b); }, params);
    CHECK(err < 1e-5);
  }
}

TEST_CASE("point-mesh loss: hand values") {
  const TriangleMesh sq = testing::unit_square();
  const Tensor v = Tensor::from_points(sq.vertices());
  CHECK(point_mesh_loss(sq.vertices(), v, sq.faces()).item() == 0.0);

  const TriangleMesh tri({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)}, {Face{0, 1, 2}});
  const double d = 0.7;
  const std::vector<Vec3> p = {Vec3(0.2, 0.3, d)};
  CHECK(point_mesh_loss(p, Tensor::from_points(tri.vertices()), tri.faces()).item() ==
        doctest::Approx(2 * d * d).epsilon(1e-15));

  const std::vector<int> none;
  CHECK(throws_with<ValidationError>(
      [&] { point_mesh_loss(p, Tensor::from_points(tri.vertices()), tri.faces(), std::span<const int>(none)); },
      "empty face subset"));
}

TEST_CASE("point-mesh loss equals the exhaustive definition") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto inst = random_instance(seed, 1, 150);
    const double got =
        point_mesh_loss(inst.points, Tensor::from_points(inst.mesh.vertices()), inst.mesh.faces()).item();
    const double want = testing::brute_point_mesh(inst.points, inst.mesh.vertices(), inst.mesh.faces(),
                                                  all_faces(inst.mesh.face_count()));
    CHECK(testing::rel_diff(got, want) <= 1e-12);

    std::vector<int> subset;
    for (int f = 0; f < static_cast<int>(inst.mesh.face_count()); f += 4) subset.push_back(f);
    const double gs = point_mesh_loss(inst.points, Tensor::from_points(inst.mesh.vertices()), inst.mesh.faces(),
                                      std::span<const int>(subset))
                          .item();
    CHECK(testing::rel_diff(gs, testing::brute_point_mesh(inst.points, inst.mesh.vertices(), inst.mesh.faces(),
                                                          subset)) <= 1e-12);
  }
}

TEST_CASE("point-mesh gradient against finite differences") {
  const auto inst = random_instance(3, 0, 40);
  const std::vector<Tensor> params = {Tensor::from_points(inst.mesh.vertices())};
  const double err = ad::grad_check(
      [&](std::span<const Tensor> p) { return point_mesh_loss(inst.points, p[0], inst.mesh.faces()); }, params);
  CHECK(err < 1e-5);
}

TEST_CASE("part loss") {
  const auto inst = random_instance(4, 1, 120);
  const int m = 2;
  const LabeledMesh lm(inst.mesh, std::vector<int>(inst.mesh.vertex_count(), 1), m);
  const LabeledPointCloud all_one(PointCloud(inst.points), std::vector<int>(inst.points.size(), 1), m);
  const double global = point_mesh_loss(PointCloud(inst.points), inst.mesh).item();
  CHECK(part_loss(all_one, lm, 1).item() == global);

  std::vector<std::string> warnings;
  CHECK(part_loss(all_one, lm, 0, &warnings).item() == 0.0);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("part 0") != std::string::npos);

  // two slabs split at x = 0
  std::vector<int> vl, pl;
  for (const Vec3& v : inst.mesh.vertices()) vl.push_back(v.x() < 0 ? 0 : 1);
  for (const Vec3& p : inst.points) pl.push_back(p.x() < 0 ? 0 : 1);
  const LabeledMesh slab_mesh(inst.mesh, vl, m);
  const LabeledPointCloud slab_cloud(PointCloud(inst.points), pl, m);
  double total = 0.0;
  for (int part = 0; part < m; ++part) {
    std::vector<Vec3> pts;
    for (std::size_t i = 0; i < pl.size(); ++i)
      if (pl[i] == part) pts.push_back(inst.points[i]);
    std::vector<int> faces;
    for (std::size_t f = 0; f < slab_mesh.face_labels.size(); ++f)
      if (slab_mesh.face_labels[f] == part) faces.push_back(static_cast<int>(f));
    const double got = part_loss(slab_cloud, slab_mesh, part).item();
    CHECK(testing::rel_diff(got, testing::brute_point_mesh(pts, inst.mesh.vertices(), inst.mesh.faces(), faces)) <=
          1e-12);
    total += got;
  }
  CHECK(total >= 0.0);
}

TEST_CASE("vertex displacement loss") {
  const std::vector<Vec3> v0 = {Vec3(1, 2, 3), Vec3(0, 0, 0)};
  CHECK(vert_loss(Tensor::from_points(v0), Tensor::from_points(v0)).item() == 0.0);
  CHECK(vert_loss(Tensor::from_points(std::vector<Vec3>{Vec3(0, 0, 0)}),
                  Tensor::from_points(std::vector<Vec3>{Vec3(3, 4, 0)}))
            .item() == doctest::Approx(5.0).epsilon(1e-15));
  const std::vector<Vec3> vk = {Vec3(2, 2, 3), Vec3(0, 0, 0)};
  CHECK(vert_loss(Tensor::from_points(v0), Tensor::from_points(vk)).item() ==
        doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));

  ad::Tape tape;
  const Tensor p = tape.parameter(Tensor::from_points(v0));
  const Tensor g = tape.backward(vert_loss(Tensor::from_points(v0), p)).of(p);
  for (double x : g.data()) CHECK(x == 0.0);
  CHECK(throws_with<ValidationError>(
      [&] { vert_loss(Tensor::from_points(v0), Tensor::from_points(std::vector<Vec3>{Vec3(0, 0, 0)})); },
      "shape mismatch"));
}

TEST_CASE("edge loss") {
  const TriangleMesh tet = testing::tetrahedron();
  const auto topo = mesh_topology(tet);
  const auto ref = edge_lengths(tet.vertices(), topo.edges);
  CHECK(edge_loss(Tensor::from_points(tet.vertices()), topo.edges, ref, EdgeMode::initial).item() == 0.0);

  // unit edges: the tetrahedron has edge 2 sqrt 2
  std::vector<Vec3> unit;
  for (const Vec3& v : tet.vertices()) unit.push_back(v / (2.0 * std::sqrt(2.0)));
  CHECK(edge_loss(Tensor::from_points(unit), topo.edges, {}, EdgeMode::zero).item() ==
        doctest::Approx(1.0).epsilon(1e-14));
  std::vector<Vec3> grown;
  for (const Vec3& v : unit) grown.push_back(1.1 * v);
  const std::vector<double> ones(topo.edges.size(), 1.0);
  CHECK(edge_loss(Tensor::from_points(grown), topo.edges, ones, EdgeMode::initial).item() ==
        doctest::Approx(0.01).epsilon(1e-12));
  CHECK(throws_with<ValidationError>(
      [&] { edge_loss(Tensor::from_points(unit), topo.edges, {}, EdgeMode::initial); }, "reference lengths"));
}

TEST_CASE("normal consistency loss") {
  const TriangleMesh grid = testing::planar_grid(4);
  CHECK(normal_consistency_loss(Tensor::from_points(grid.vertices()), grid.faces(), mesh_topology(grid)).item() ==
        0.0);

  // two faces folded at a right angle along the x axis
  const TriangleMesh fold({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)},
                          {Face{0, 1, 2}, Face{1, 0, 3}});
  CHECK(normal_consistency_loss(Tensor::from_points(fold.vertices()), fold.faces(), mesh_topology(fold)).item() ==
        doctest::Approx(1.0).epsilon(1e-15));

  const TriangleMesh tet = testing::tetrahedron();
  CHECK(normal_consistency_loss(Tensor::from_points(tet.vertices()), tet.faces(), mesh_topology(tet)).item() ==
        doctest::Approx(4.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("laplacian loss") {
  const TriangleMesh grid = testing::planar_grid(5);
  const auto lap = uniform_laplacian(grid);
  double boundary = 0.0;
  for (int j = 0; j < 5; ++j)
    for (int i = 0; i < 5; ++i) {
      const double c = lap[static_cast<std::size_t>(j * 5 + i)].squaredNorm();
      if (i > 0 && i < 4 && j > 0 && j < 4) CHECK(c == 0.0);
      boundary += c;
    }
  CHECK(laplacian_loss(Tensor::from_points(grid.vertices()), mesh_topology(grid)).item() ==
        doctest::Approx(boundary / 25.0).epsilon(1e-14));

  const TriangleMesh tet = testing::tetrahedron();
  const double r2 = tet.vertices()[0].squaredNorm();
  CHECK(laplacian_loss(Tensor::from_points(tet.vertices()), mesh_topology(tet)).item() ==
        doctest::Approx(16.0 / 9.0 * r2).epsilon(1e-14));

  // one explicit smoothing step on a noisy sphere does not increase the loss
  Rng rng(5);
  const TriangleMesh sphere = icosphere(2, 3.0);
  std::vector<Vec3> v = sphere.vertices();
  for (Vec3& p : v) p += 0.2 * testing::random_vec(rng);
  const TriangleMesh noisy = sphere.with_vertices(v);
  const auto topo = mesh_topology(noisy);
  const auto l = uniform_laplacian(noisy);
  std::vector<Vec3> smooth = v;
  for (std::size_t i = 0; i < v.size(); ++i) smooth[i] += 0.5 * l[i];
  CHECK(laplacian_loss(Tensor::from_points(smooth), topo).item() <=
        laplacian_loss(Tensor::from_points(v), topo).item());
}

TEST_CASE("objective: zero weights, vert-only at rest, breakdown consistency, linearity") {
  const auto fx = testing::dodecahedron_fixture(1);
  LossWeights zero;
  zero.cf = zero.pm = zero.vert = zero.edge = zero.normal = zero.lap = 0.0;
  zero.pm_i.assign(2, 0.0);
  const Tensor rest = Tensor::from_points(fx.mesh.mesh.vertices());
  CHECK(RegistrationObjective(fx.mesh, fx.baseline, zero).evaluate(rest, 100, 1).breakdown.total == 0.0);

  LossWeights vert_only = zero;
  vert_only.vert = 1.0;
  CHECK(RegistrationObjective(fx.mesh, fx.baseline, vert_only).evaluate(rest, 100, 1).breakdown.total == 0.0);

  Rng rng(7);
  std::vector<Vec3> state = fx.mesh.mesh.vertices();
  for (Vec3& p : state) p += 0.1 * testing::random_vec(rng);
  const Tensor moved = Tensor::from_points(state);
  const LossWeights w = LossWeights::defaults(2);
  const auto value = RegistrationObjective(fx.mesh, fx.baseline, w).evaluate(moved, 100, 3);
  const LossBreakdown& b = value.breakdown;
  CHECK(testing::rel_diff(b.total, b.weighted_sum(w)) <= 1e-12);
  CHECK(b.cf >= 0.0);
  CHECK(b.pm >= 0.0);
  for (double x : b.pm_i) CHECK(x >= 0.0);
  CHECK(b.vert >= 0.0);
  CHECK(b.edge >= 0.0);
  CHECK(b.normal >= 0.0);
  CHECK(b.lap >= 0.0);

  // doubling one weight adds exactly one more copy of that term
  auto with = [&](auto mutate) {
    LossWeights w2 = w;
    mutate(w2);
    return RegistrationObjective(fx.mesh, fx.baseline, w2).evaluate(moved, 100, 3).breakdown.total;
  };
  CHECK(testing::rel_diff(with([](LossWeights& x) { x.cf *= 2; }), b.total + w.cf * b.cf) <= 1e-12);
  CHECK(testing::rel_diff(with([](LossWeights& x) { x.pm *= 2; }), b.total + w.pm * b.pm) <= 1e-12);
  CHECK(testing::rel_diff(with([](LossWeights& x) { x.pm_i[1] *= 2; }), b.total + w.pm_i[1] * b.pm_i[1]) <= 1e-12);
  CHECK(testing::rel_diff(with([](LossWeights& x) { x.vert *= 2; }), b.total + w.vert * b.vert) <= 1e-12);
  CHECK(testing::rel_diff(with([](LossWeights& x) { x.edge *= 2; }), b.total + w.edge * b.edge) <= 1e-12);
  CHECK(testing::rel_diff(with([](LossWeights& x) { x.normal *= 2; }), b.total + w.normal * b.normal) <= 1e-12);
  CHECK(testing::rel_diff(with([](LossWeights& x) { x.lap *= 2; }), b.total + w.lap * b.lap) <= 1e-12);
}

TEST_CASE("objective: the same seed gives the same chamfer samples") {
  const auto fx = testing::dodecahedron_fixture(2);
  const RegistrationObjective obj(fx.mesh, fx.baseline, LossWeights::defaults(2));
  const Tensor rest = Tensor::from_points(fx.mesh.mesh.vertices());
  CHECK(obj.evaluate(rest, 200, 5).breakdown.cf == obj.evaluate(rest, 200, 5).breakdown.cf);
  CHECK(iteration_seed(5, 0) != iteration_seed(5, 1));
  CHECK(iteration_seed(5, 3) == iteration_seed(5, 3));
}

TEST_CASE("objective gradient matches finite differences at 5 random states") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto fx = testing::dodecahedron_fixture(10 + s);
    const RegistrationObjective obj(fx.mesh, fx.baseline, LossWeights::defaults(2));
    Rng rng(100 + s);
    std::vector<Vec3> state = fx.mesh.mesh.vertices();
    for (Vec3& p : state) p += 0.1 * testing::random_vec(rng);
    CHECK(testing::objective_gradient_error(obj, state, 200, s) < 1e-4);
  }
}

TEST_CASE("weights validation and CSV rows") {
  LossWeights w = LossWeights::defaults(3);
  CHECK(w.pm_i.size() == 3);
  CHECK_NOTHROW(w.validate(3));
  CHECK(throws_with<ValidationError>([&] { w.validate(2); }, "pm_i"));
  w.edge = -1.0;
  CHECK(throws_with<ValidationError>([&] { w.validate(3); }, ">= 0"));

  CHECK(loss_csv_header(2) == "iter,cf,pm,pm_0,pm_1,vert,edge,normal,lap,total");
  LossBreakdown b;
  b.cf = 0.5;
  b.pm_i = {1, 2};
  b.total = 3.5;
  const std::string row = loss_csv_row(7, b);
  CHECK(row.rfind("7,0.5,0,1,2,0,0,0,0,3.5", 0) == 0);
}
