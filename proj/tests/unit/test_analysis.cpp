#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <fmt/format.h>

#include "lvreg/analysis.hpp"
#include "lvreg/error.hpp"
#include "lvreg/random.hpp"
#include "support.hpp"

using namespace lvreg;
using testing::throws_with;

namespace {

SubjectRecord subject(const std::string& id, Group g, double delta_t = 2.0, double etiv = 1000.0) {
  SubjectRecord s;
  s.id = id;
  s.group = g;
  s.delta_t = delta_t;
  s.etiv = etiv;
  return s;
}

std::vector<double> normals(Rng& rng, int n, double shift) {
  std::vector<double> v;
  for (int i = 0; i < n; ++i) v.push_back(rng.normal() + shift);
  return v;
}

// Minimal well-formedness check: every opened element is closed in order.
bool balanced_xml(const std::string& s) {
  std::vector<std::string> stack;
  std::size_t i = 0;
  while ((i = s.find('<', i)) != std::string::npos) {
    const std::size_t j = s.find('>', i);
    if (j == std::string::npos) return false;
    const std::string tag = s.substr(i + 1, j - i - 1);
    i = j + 1;
    if (tag.empty()) return false;
    if (tag[0] == '?' || tag.back() == '/') continue;
    const std::string name = tag.substr(tag[0] == '/' ? 1 : 0, tag.find_first_of(" \n") - (tag[0] == '/' ? 1 : 0));
    if (tag[0] == '/') {
      if (stack.empty() || stack.back() != name) return false;
      stack.pop_back();
    } else {
      stack.push_back(name);
    }
  }
  return stack.empty();
}

}  // namespace

TEST_CASE("normalize_displacement hand values") {
  CHECK(normalize_displacement(2.0, 2.0, 1000.0) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(normalize_displacement(0.0, 1.5, 1.4e6) == 0.0);
  CHECK(normalize_displacement(3.7, 1.3, 1.0) == 3.7 / 1.3);
  CHECK(normalize_displacement(2.0, 1.0, 8.0) == 1.0);
  // linear in d, decreasing in delta_t and etiv
  CHECK(normalize_displacement(6.0, 1.7, 1.3e6) == doctest::Approx(3.0 * normalize_displacement(2.0, 1.7, 1.3e6)));
  CHECK(normalize_displacement(1.0, 2.0, 1e6) < normalize_displacement(1.0, 1.0, 1e6));
  CHECK(normalize_displacement(1.0, 1.0, 2e6) < normalize_displacement(1.0, 1.0, 1e6));
  CHECK(throws_with<ValidationError>([] { normalize_displacement(1.0, 0.0, 1.0); }, "delta_t"));
  CHECK(throws_with<ValidationError>([] { normalize_displacement(1.0, 1.0, -3.0); }, "etiv"));
}

TEST_CASE("per_part_report against filter-and-average") {
  const SubjectRecord s = subject("s1", Group::normal, 1.5, 1.331e6);
  const std::vector<double> constant(30, 0.7);
  std::vector<int> labels;
  for (int i = 0; i < 30; ++i) labels.push_back(i % 3);
  const auto rc = per_part_report(constant, labels, 4, s);
  for (int p = 0; p < 3; ++p) CHECK(*rc.part_mean_normalized[static_cast<std::size_t>(p)] == doctest::Approx(normalize_displacement(0.7, 1.5, 1.331e6)));
  CHECK_FALSE(rc.part_mean_raw[3].has_value());
  CHECK(rc.part_vertex_count[3] == 0);

  const std::vector<int> single(30, 2);
  const auto rs = per_part_report(constant, single, 3, s);
  CHECK(rs.whole_mean_raw == doctest::Approx(*rs.part_mean_raw[2]));

  Rng rng(17);
  std::vector<double> d;
  std::vector<int> l;
  for (int i = 0; i < 500; ++i) {
    d.push_back(rng.uniform() * 3.0);
    l.push_back(static_cast<int>(rng.next() % 4));
  }
  const auto r = per_part_report(d, l, 5, s);
  double weighted = 0.0;
  for (int p = 0; p < 5; ++p) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (l[i] == p) sum += d[i], ++count;
    CHECK(r.part_vertex_count[static_cast<std::size_t>(p)] == count);
    if (count == 0) {
      CHECK_FALSE(r.part_mean_normalized[static_cast<std::size_t>(p)].has_value());
      continue;
    }
    CHECK(*r.part_mean_raw[static_cast<std::size_t>(p)] == doctest::Approx(sum / count).epsilon(1e-12));
    weighted += *r.part_mean_raw[static_cast<std::size_t>(p)] * count;
  }
  CHECK(std::abs(r.whole_mean_raw - weighted / d.size()) < 1e-9);
  CHECK(r.whole_mean_normalized == doctest::Approx(normalize_displacement(r.whole_mean_raw, 1.5, 1.331e6)));

  CHECK(throws_with<ValidationError>([&] { per_part_report(d, single, 3, s); }, "displacements for"));
  CHECK(throws_with<ValidationError>([&] { per_part_report(d, l, 3, s); }, "outside"));
}

TEST_CASE("Mann-Whitney hand examples") {
  const std::vector<double> a = {1, 2, 3}, b = {10, 20, 30};
  const auto same = group_compare(a, a);
  CHECK(same.exact);
  CHECK(same.p == 1.0);
  const auto sep = group_compare(a, b);
  CHECK(sep.u == 0.0);
  CHECK(sep.p == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(group_compare(b, a).u == 9.0);
  CHECK(group_compare(b, a).p == doctest::Approx(0.1));
  const std::vector<double> flat = {4, 4, 4};
  CHECK(group_compare(flat, flat).p == 1.0);
  CHECK(group_compare(flat, flat, PValueMethod::normal).p == 1.0);
  CHECK(throws_with<ValidationError>([&] { group_compare(std::vector<double>{1.0}, b); }, "at least 2"));
}

TEST_CASE("exact p matches bitmask enumeration for every size up to 12") {
  Rng rng(5);
  for (int n = 4; n <= 12; ++n) {
    for (int na = 2; na <= n - 2; ++na) {
      for (int trial = 0; trial < 3; ++trial) {
        std::vector<double> a, b;
        for (int i = 0; i < n; ++i) {
          // the first trial draws from a tiny range so ties are common
          const double v = trial == 0 ? static_cast<double>(rng.next() % 4) : rng.normal() + (i < na ? 0.8 : 0.0);
          (i < na ? a : b).push_back(v);
        }
        const auto got = group_compare(a, b, PValueMethod::exact);
        CHECK(got.u == testing::pairwise_u(a, b));
        CHECK(std::abs(got.p - testing::enumeration_p(a, b)) < 1e-12);
      }
    }
  }
}

TEST_CASE("exact and normal approximation agree on moderate samples") {
  Rng rng(8);
  for (int size : {8, 10}) {
    for (int trial = 0; trial < 10; ++trial) {
      const auto a = normals(rng, size, 0.0);
      const auto b = normals(rng, size, 0.6);
      const double exact = group_compare(a, b, PValueMethod::exact).p;
      const double approx = group_compare(a, b, PValueMethod::normal).p;
      CHECK(std::abs(exact - approx) < 0.02);
    }
  }
  const auto a = normals(rng, 9, 0.0), b = normals(rng, 9, 0.0);
  CHECK_FALSE(group_compare(a, b).exact);
  CHECK(group_compare(std::span(a).first(8), std::span(b).first(8)).exact);
}

TEST_CASE("Mann-Whitney is invariant under a monotone transform") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = normals(rng, 6, 0.0), b = normals(rng, 7, 0.5);
    const auto before = group_compare(a, b);
    const auto before_normal = group_compare(a, b, PValueMethod::normal);
    for (double& v : a) v = std::exp(v);
    for (double& v : b) v = std::exp(v);
    CHECK(group_compare(a, b).p == before.p);
    CHECK(group_compare(a, b).u == before.u);
    CHECK(group_compare(a, b, PValueMethod::normal).p == before_normal.p);
  }
}

TEST_CASE("cohort report, CSV and SVG") {
  const PartLabelSet parts = PartLabelSet::with_count(2);
  std::vector<DisplacementReport> reports;
  for (int i = 0; i < 6; ++i) {
    const Group g = i < 3 ? Group::normal : Group::demented;
    const std::vector<double> d = {1.0 + i % 3, 2.0 + i % 3, 0.5};
    const std::vector<int> l = {0, 1, 1};
    reports.push_back(per_part_report(d, l, 2, subject(fmt::format("s{}", i), g)));
  }
  // identical groups
  const CohortTable t = cohort_report(reports, parts);
  REQUIRE(t.rows.size() == 6);
  CHECK(t.rows[0].part == parts.name(0));
  CHECK(t.rows[0].group == Group::normal);
  CHECK(t.rows[1].group == Group::demented);
  CHECK(t.rows[4].part == kWholeLvName);
  for (const auto& r : t.rows) {
    CHECK(r.p == 1.0);
    CHECK(r.n == 3);
  }
  CHECK(t.rows[0].mean == doctest::Approx(2.0 / 20.0));
  CHECK(t.rows[0].sd == doctest::Approx(1.0 / 20.0));

  // injected effect
  for (std::size_t i = 3; i < 6; ++i) {
    const std::vector<double> d = {5.0 + static_cast<double>(i), 6.0, 4.0};
    reports[i] = per_part_report(d, std::vector<int>{0, 1, 1}, 2, subject(fmt::format("s{}", i), Group::demented));
  }
  const CohortTable e = cohort_report(reports, parts);
  for (std::size_t k = 0; k < e.rows.size(); k += 2) CHECK(e.rows[k + 1].mean > e.rows[k].mean);

  const std::string csv = cohort_csv(e);
  CHECK(csv.rfind("part,group,mean_norm_disp,sd,n,U,p_two_sided\n", 0) == 0);
  CHECK(parse_cohort_csv(csv) == e);
  CHECK(throws_with<ValidationError>([] { parse_cohort_csv("a,b\n"); }, "header"));

  const std::string svg = cohort_svg(e);
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(balanced_xml(svg));
  CHECK(svg.find(kWholeLvName) != std::string::npos);

  std::vector<DisplacementReport> one_group(reports.begin(), reports.begin() + 3);
  CHECK(throws_with<ValidationError>([&] { cohort_report(one_group, parts); }, "2 subjects per group"));
}

TEST_CASE("manifest round trip and validation") {
  const auto dir = testing::temp_dir("analysis_manifest");
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < 3; ++i) {
    ManifestEntry e;
    e.subject = subject(fmt::format("sub-{}", i), i % 2 ? Group::demented : Group::normal, 1.25 + i, 1.3e6 + i);
    if (i == 1) e.subject.sex = "F";
    e.subject.baseline_age = 70.5 + i;
    e.baseline_path = fmt::format("vol/b{}.json", i);
    e.followup_path = fmt::format("vol/f{}.json", i);
    entries.push_back(e);
  }
  write_manifest(entries, dir / "m.csv");
  const auto back = read_manifest(dir / "m.csv");
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].subject.id == entries[i].subject.id);
    CHECK(back[i].subject.group == entries[i].subject.group);
    CHECK(back[i].subject.sex == entries[i].subject.sex);
    CHECK(back[i].subject.delta_t == entries[i].subject.delta_t);
    CHECK(back[i].subject.etiv == entries[i].subject.etiv);
    CHECK(back[i].subject.baseline_age == entries[i].subject.baseline_age);
    CHECK(back[i].followup_path == entries[i].followup_path);
  }
  const std::string header = "id,group,sex,baseline_age,delta_t_years,etiv_mm3,baseline_volume_path,followup_volume_path\n";
  testing::write_file(dir / "bad.csv", header + "a,normal,,70,0,1e6,x,y\n");
  CHECK(throws_with<ValidationError>([&] { read_manifest(dir / "bad.csv"); }, "delta_t"));
  testing::write_file(dir / "dup.csv", header + "a,normal,,70,1,1e6,x,y\na,demented,,70,1,1e6,x,y\n");
  CHECK(throws_with<ValidationError>([&] { read_manifest(dir / "dup.csv"); }, "duplicate"));
  testing::write_file(dir / "grp.csv", header + "a,sick,,70,1,1e6,x,y\n");
  CHECK(throws_with<ValidationError>([&] { read_manifest(dir / "grp.csv"); }, "unknown group"));
}
