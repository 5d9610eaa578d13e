#include "lvreg/analysis.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "lvreg/error.hpp"

namespace lvreg {

namespace fs = std::filesystem;

std::string to_string(Group g) { return g == Group::normal ? "normal" : "demented"; }

Group parse_group(const std::string& s) {
  if (s == "normal") return Group::normal;
  if (s == "demented") return Group::demented;
  throw ValidationError(fmt::format("unknown group '{}' (expected normal or demented)", s));
}

void SubjectRecord::validate() const {
  if (id.empty()) throw ValidationError("subject id must not be empty");
  if (!(delta_t > 0.0) || !std::isfinite(delta_t)) {
    throw ValidationError(fmt::format("subject {}: delta_t must be > 0", id));
  }
  if (!(etiv > 0.0) || !std::isfinite(etiv)) throw ValidationError(fmt::format("subject {}: etiv must be > 0", id));
}

double normalize_displacement(double d, double delta_t, double etiv) {
  if (!(delta_t > 0.0)) throw ValidationError("delta_t must be > 0");
  if (!(etiv > 0.0)) throw ValidationError("etiv must be > 0");
  return d / (delta_t * std::cbrt(etiv));
}

DisplacementReport per_part_report(std::span<const double> displacements, std::span<const int> labels,
                                   int part_count, const SubjectRecord& subject) {
  subject.validate();
  if (displacements.size() != labels.size()) {
    throw ValidationError(fmt::format("{} displacements for {} labels", displacements.size(), labels.size()));
  }
  if (displacements.empty()) throw ValidationError("no vertices to report");
  const auto m = static_cast<std::size_t>(part_count);
  std::vector<double> sums(m, 0.0);
  DisplacementReport r;
  r.subject_id = subject.id;
  r.group = subject.group;
  r.part_vertex_count.assign(m, 0);
  double total = 0.0;
  for (std::size_t v = 0; v < labels.size(); ++v) {
    const int l = labels[v];
    if (l < 0 || l >= part_count) throw ValidationError(fmt::format("vertex {} has label {} outside [0, {})", v, l, m));
    sums[static_cast<std::size_t>(l)] += displacements[v];
    ++r.part_vertex_count[static_cast<std::size_t>(l)];
    total += displacements[v];
  }
  r.part_mean_raw.resize(m);
  r.part_mean_normalized.resize(m);
  for (std::size_t p = 0; p < m; ++p) {
    if (r.part_vertex_count[p] == 0) continue;
    const double mean = sums[p] / static_cast<double>(r.part_vertex_count[p]);
    r.part_mean_raw[p] = mean;
    r.part_mean_normalized[p] = normalize_displacement(mean, subject.delta_t, subject.etiv);
  }
  r.whole_mean_raw = total / static_cast<double>(labels.size());
  r.whole_mean_normalized = normalize_displacement(r.whole_mean_raw, subject.delta_t, subject.etiv);
  return r;
}

namespace {

std::vector<double> midranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return values[x] < values[y]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double exact_p(const std::vector<double>& ranks, std::size_t na, double u_obs) {
  const std::size_t n = ranks.size();
  const double nb = static_cast<double>(n - na);
  const double mu = static_cast<double>(na) * nb / 2.0;
  const double offset = static_cast<double>(na) * static_cast<double>(na + 1) / 2.0;
  const double threshold = std::abs(u_obs - mu) - 1e-9;
  std::vector<bool> pick(n, false);
  std::fill(pick.begin(), pick.begin() + static_cast<long>(na), true);
  std::uint64_t total = 0, extreme = 0;
  do {
    double r = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (pick[i]) r += ranks[i];
    }
    ++total;
    if (std::abs(r - offset - mu) >= threshold) ++extreme;
  } while (std::prev_permutation(pick.begin(), pick.end()));
  return static_cast<double>(extreme) / static_cast<double>(total);
}

double normal_p(const std::vector<double>& ranks, std::span<const double> pooled, std::size_t na, double u_obs) {
  const double n = static_cast<double>(ranks.size());
  const double a = static_cast<double>(na);
  const double b = n - a;
  std::map<double, double> ties;
  for (double v : pooled) ties[v] += 1.0;
  double tie_sum = 0.0;
  for (const auto& [v, t] : ties) tie_sum += t * t * t - t;
  const double var = a * b / 12.0 * ((n + 1.0) - tie_sum / (n * (n - 1.0)));
  if (!(var > 0.0)) return 1.0;
  const double mu = a * b / 2.0;
  const double z = std::max(0.0, std::abs(u_obs - mu) - 0.5) / std::sqrt(var);
  return std::min(1.0, std::erfc(z / std::sqrt(2.0)));
}

}  // namespace

MannWhitneyResult group_compare(std::span<const double> a, std::span<const double> b, PValueMethod method) {
  if (a.size() < 2 || b.size() < 2) throw ValidationError("each group needs at least 2 values");
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  for (double v : pooled) {
    if (!std::isfinite(v)) throw ValidationError("group values must be finite");
  }
  const auto ranks = midranks(pooled);
  double ra = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ra += ranks[i];
  const double na = static_cast<double>(a.size());
  MannWhitneyResult out;
  out.u = ra - na * (na + 1.0) / 2.0;
  if (std::all_of(pooled.begin(), pooled.end(), [&](double v) { return v == pooled[0]; })) {
    out.p = 1.0;
    out.exact = method != PValueMethod::normal;
    return out;
  }
  const bool use_exact =
      method == PValueMethod::exact || (method == PValueMethod::automatic && pooled.size() <= 16);
  if (use_exact && pooled.size() > 30) throw ValidationError("exact enumeration is limited to 30 values");
  out.exact = use_exact;
  out.p = use_exact ? exact_p(ranks, a.size(), out.u) : normal_p(ranks, pooled, a.size(), out.u);
  return out;
}

namespace {

struct Moments {
  double mean = 0.0;
  double sd = 0.0;
  std::size_t n = 0;
};

Moments moments(const std::vector<double>& v) {
  Moments m;
  m.n = v.size();
  if (v.empty()) return m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return m;
}

void add_rows(CohortTable& table, const std::string& part, const std::vector<double>& normal,
              const std::vector<double>& demented) {
  MannWhitneyResult mw{std::nan(""), std::nan(""), false};
  if (normal.size() >= 2 && demented.size() >= 2) mw = group_compare(normal, demented);
  for (Group g : {Group::normal, Group::demented}) {
    const Moments m = moments(g == Group::normal ? normal : demented);
    table.rows.push_back({part, g, m.mean, m.sd, m.n, mw.u, mw.p});
  }
}

}  // namespace

CohortTable cohort_report(std::span<const DisplacementReport> reports, const PartLabelSet& parts) {
  std::size_t counts[2] = {0, 0};
  for (const auto& r : reports) ++counts[r.group == Group::normal ? 0 : 1];
  if (counts[0] < 2 || counts[1] < 2) {
    throw ValidationError(fmt::format("cohort needs >= 2 subjects per group (normal {}, demented {})", counts[0],
                                      counts[1]));
  }
  CohortTable table;
  for (int p = 0; p < parts.size(); ++p) {
    std::vector<double> values[2];
    for (const auto& r : reports) {
      if (static_cast<int>(r.part_mean_normalized.size()) != parts.size()) {
        throw ValidationError(fmt::format("report for {} has {} parts, expected {}", r.subject_id,
                                          r.part_mean_normalized.size(), parts.size()));
      }
      const auto& v = r.part_mean_normalized[static_cast<std::size_t>(p)];
      if (v) values[r.group == Group::normal ? 0 : 1].push_back(*v);
    }
    add_rows(table, parts.name(p), values[0], values[1]);
  }
  std::vector<double> whole[2];
  for (const auto& r : reports) whole[r.group == Group::normal ? 0 : 1].push_back(r.whole_mean_normalized);
  add_rows(table, kWholeLvName, whole[0], whole[1]);
  return table;
}

std::string cohort_csv(const CohortTable& table) {
  std::string out = "part,group,mean_norm_disp,sd,n,U,p_two_sided\n";
  for (const auto& r : table.rows) {
    out += fmt::format("{},{},{:.17g},{:.17g},{},{:.17g},{:.17g}\n", r.part, to_string(r.group), r.mean, r.sd, r.n,
                       r.u, r.p);
  }
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

template <class T>
T parse_number(const std::string& s, const std::string& what) {
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ValidationError(fmt::format("bad {} value '{}'", what, s));
  }
  return v;
}

}  // namespace

CohortTable parse_cohort_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line) !=
                                     std::vector<std::string>{"part", "group", "mean_norm_disp", "sd", "n", "U",
                                                              "p_two_sided"}) {
    throw ValidationError("cohort CSV header mismatch");
  }
  CohortTable table;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() != 7) throw ValidationError(fmt::format("cohort CSV row has {} fields: '{}'", f.size(), line));
    table.rows.push_back({f[0], parse_group(f[1]), parse_number<double>(f[2], "mean"), parse_number<double>(f[3], "sd"),
                          parse_number<std::size_t>(f[4], "n"), parse_number<double>(f[5], "U"),
                          parse_number<double>(f[6], "p")});
  }
  return table;
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

}  // namespace

std::string cohort_svg(const CohortTable& table) {
  // Parts in first-appearance order; each has a normal and a demented bar.
  std::vector<std::string> parts;
  std::map<std::pair<std::string, Group>, const CohortRow*> cell;
  for (const auto& r : table.rows) {
    if (std::find(parts.begin(), parts.end(), r.part) == parts.end()) parts.push_back(r.part);
    cell[{r.part, r.group}] = &r;
  }
  double top = 0.0;
  for (const auto& r : table.rows) {
    if (std::isfinite(r.mean + r.sd)) top = std::max(top, r.mean + r.sd);
  }
  if (!(top > 0.0)) top = 1.0;
  top *= 1.15;

  const double left = 80, right = 20, plot_top = 40, plot_h = 260, group_w = 110;
  const double width = left + right + group_w * static_cast<double>(parts.size());
  const double height = plot_top + plot_h + 70;
  const char* colors[2] = {"#4c72b0", "#dd8452"};
  auto y_of = [&](double v) { return plot_top + plot_h * (1.0 - v / top); };

  std::string s = fmt::format(
      "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0f}\" height=\"{:.0f}\" viewBox=\"0 0 {:.0f} {:.0f}\" "
      "font-family=\"sans-serif\" font-size=\"11\">\n",
      width, height, width, height);
  s += fmt::format("<rect x=\"0\" y=\"0\" width=\"{:.0f}\" height=\"{:.0f}\" fill=\"white\"/>\n", width, height);
  s += fmt::format("<text x=\"{:.1f}\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">"
                   "Normalized mean vertex displacement</text>\n",
                   width / 2);
  s += fmt::format("<line x1=\"{0:.1f}\" y1=\"{1:.1f}\" x2=\"{0:.1f}\" y2=\"{2:.1f}\" stroke=\"black\"/>\n", left,
                   plot_top, plot_top + plot_h);
  s += fmt::format("<line x1=\"{0:.1f}\" y1=\"{1:.1f}\" x2=\"{2:.1f}\" y2=\"{1:.1f}\" stroke=\"black\"/>\n", left,
                   plot_top + plot_h, width - right);
  for (int t = 0; t <= 4; ++t) {
    const double v = top * t / 4.0;
    s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"end\">{:.3g}</text>\n", left - 6, y_of(v) + 4, v);
  }
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const double x0 = left + group_w * static_cast<double>(i) + 15;
    for (int g = 0; g < 2; ++g) {
      auto it = cell.find({parts[i], g == 0 ? Group::normal : Group::demented});
      if (it == cell.end() || !std::isfinite(it->second->mean)) continue;
      const CohortRow& r = *it->second;
      const double x = x0 + 40.0 * g;
      const double y = y_of(std::max(0.0, r.mean));
      s += fmt::format("<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"36\" height=\"{:.1f}\" fill=\"{}\"/>\n", x, y,
                       plot_top + plot_h - y, colors[g]);
      if (r.sd > 0.0 && std::isfinite(r.sd)) {
        s += fmt::format("<line x1=\"{0:.1f}\" y1=\"{1:.1f}\" x2=\"{0:.1f}\" y2=\"{2:.1f}\" stroke=\"black\"/>\n",
                         x + 18, y_of(r.mean + r.sd), y_of(std::max(0.0, r.mean - r.sd)));
      }
    }
    const CohortRow* any = cell.count({parts[i], Group::normal}) ? cell[{parts[i], Group::normal}] : nullptr;
    s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{}</text>\n", x0 + 38,
                     plot_top + plot_h + 16, xml_escape(parts[i]));
    if (any && std::isfinite(any->p)) {
      s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">p={:.3g}</text>\n", x0 + 38,
                       plot_top + plot_h + 30, any->p);
    }
  }
  const double ly = plot_top + plot_h + 50;
  for (int g = 0; g < 2; ++g) {
    const double lx = left + 140.0 * g;
    s += fmt::format("<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"12\" height=\"12\" fill=\"{}\"/>\n", lx, ly - 10,
                     colors[g]);
    s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\">{}</text>\n", lx + 18, ly, g == 0 ? "normal" : "demented");
  }
  s += "</svg>\n";
  return s;
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(fmt::format("cannot open manifest '{}'", path.string()));
  std::string line;
  const std::vector<std::string> header{"id",           "group",    "sex",
                                        "baseline_age", "delta_t_years", "etiv_mm3",
                                        "baseline_volume_path", "followup_volume_path"};
  if (!std::getline(in, line) || split_csv_line(line) != header) {
    throw ValidationError(fmt::format("manifest '{}' header must be {}", path.string(), fmt::join(header, ",")));
  }
  std::vector<ManifestEntry> entries;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() != 8) throw ValidationError(fmt::format("{}:{}: expected 8 fields", path.string(), line_no));
    ManifestEntry e;
    try {
      e.subject.id = f[0];
      e.subject.group = parse_group(f[1]);
      if (!f[2].empty()) e.subject.sex = f[2];
      e.subject.baseline_age = parse_number<double>(f[3], "baseline_age");
      e.subject.delta_t = parse_number<double>(f[4], "delta_t_years");
      e.subject.etiv = parse_number<double>(f[5], "etiv_mm3");
      e.subject.validate();
    } catch (const ValidationError& err) {
      throw ValidationError(fmt::format("{}:{}: {}", path.string(), line_no, err.what()));
    }
    e.baseline_path = f[6];
    e.followup_path = f[7];
    for (const auto& other : entries) {
      if (other.subject.id == e.subject.id) {
        throw ValidationError(fmt::format("{}:{}: duplicate subject id '{}'", path.string(), line_no, e.subject.id));
      }
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_manifest(std::span<const ManifestEntry> entries, const fs::path& path) {
  std::string out = "id,group,sex,baseline_age,delta_t_years,etiv_mm3,baseline_volume_path,followup_volume_path\n";
  for (const auto& e : entries) {
    const auto& s = e.subject;
    for (const std::string* field : {&s.id, &e.baseline_path, &e.followup_path}) {
      if (field->find(',') != std::string::npos) throw ValidationError(fmt::format("field '{}' contains a comma", *field));
    }
    out += fmt::format("{},{},{},{:.17g},{:.17g},{:.17g},{},{}\n", s.id, to_string(s.group), s.sex.value_or(""),
                       s.baseline_age, s.delta_t, s.etiv, e.baseline_path, e.followup_path);
  }
  std::ofstream file(path);
  if (!file) throw Error(fmt::format("cannot write '{}'", path.string()));
  file << out;
  if (!file) throw Error(fmt::format("failed writing '{}'", path.string()));
}

}  // namespace lvreg
