#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lvreg/geometry.hpp"

namespace lvreg {

enum class Group { normal, demented };

std::string to_string(Group g);
Group parse_group(const std::string& s);

struct SubjectRecord {
  std::string id;
  Group group = Group::normal;
  std::optional<std::string> sex;
  double baseline_age = 0.0;  // years
  double delta_t = 1.0;       // years between scans
  double etiv = 1.0;          // mm^3

  /// Throws ValidationError unless delta_t > 0, etiv > 0 and id is non-empty.
  void validate() const;
};

/// d / (delta_t * etiv^(1/3)).
double normalize_displacement(double d, double delta_t, double etiv);

struct DisplacementReport {
  std::string subject_id;
  Group group = Group::normal;
  /// Empty when no vertex carries the part.
  std::vector<std::optional<double>> part_mean_raw;
  std::vector<std::optional<double>> part_mean_normalized;
  std::vector<std::size_t> part_vertex_count;
  double whole_mean_raw = 0.0;
  double whole_mean_normalized = 0.0;
};

DisplacementReport per_part_report(std::span<const double> displacements, std::span<const int> labels,
                                   int part_count, const SubjectRecord& subject);

enum class PValueMethod { automatic, exact, normal };

struct MannWhitneyResult {
  double u = 0.0;  // U of the first sample
  double p = 1.0;  // two-sided
  bool exact = false;
};

/// Two-sided Mann-Whitney U test on midranks. `automatic` enumerates every
/// split when n_a + n_b <= 16 and otherwise uses the tie-corrected normal
/// approximation with continuity correction.
MannWhitneyResult group_compare(std::span<const double> a, std::span<const double> b,
                                PValueMethod method = PValueMethod::automatic);

inline constexpr const char* kWholeLvName = "whole-LV";

struct CohortRow {
  std::string part;
  Group group = Group::normal;
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation, 0 when n < 2
  std::size_t n = 0;
  double u = 0.0;
  double p = 1.0;

  bool operator==(const CohortRow&) const = default;
};

struct CohortTable {
  std::vector<CohortRow> rows;  // per part then whole-LV; normal row before demented
  bool operator==(const CohortTable&) const = default;
};

/// Group statistics of the normalized displacements, per part and for the
/// whole LV. Needs at least two subjects in each group.
CohortTable cohort_report(std::span<const DisplacementReport> reports, const PartLabelSet& parts);

/// `part,group,mean_norm_disp,sd,n,U,p_two_sided`
std::string cohort_csv(const CohortTable& table);
CohortTable parse_cohort_csv(const std::string& text);
/// Grouped bar chart, one group of two bars per part, with sd whiskers.
std::string cohort_svg(const CohortTable& table);

struct ManifestEntry {
  SubjectRecord subject;
  std::string baseline_path;
  std::string followup_path;
};

/// `id,group,sex,baseline_age,delta_t_years,etiv_mm3,baseline_volume_path,followup_volume_path`
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(std::span<const ManifestEntry> entries, const std::filesystem::path& path);

}  // namespace lvreg
