#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lvreg/config.hpp"
#include "lvreg/deform.hpp"
#include "lvreg/volume.hpp"

namespace lvreg {

struct SubjectOutcome {
  std::string subject_id;
  std::uint64_t seed = 0;  // per-subject stream derived from the run seed
  LabeledMesh followup;
  LabeledPointCloud baseline;
  DeformationState state;
  std::vector<double> displacement;
  double evaluation_chamfer = 0.0;
  double bbox_diagonal = 0.0;  // of the baseline cloud
};

/// Seed for one subject: the run seed mixed with a hash of the id.
std::uint64_t subject_seed(std::uint64_t run_seed, const std::string& subject_id);

/// Extract surfaces, label them by nearest peripheral structure and deform the
/// follow-up mesh onto the baseline cloud.
SubjectOutcome run_subject(const std::string& subject_id, const LabelVolume& baseline, const LabelVolume& followup,
                           const RunConfig& config);

/// Writes deformed.obj, labels.csv, deformed.json, loss_history.csv and
/// displacement.csv into `dir`.
void write_subject_outputs(const SubjectOutcome& outcome, const RunConfig& config, const std::filesystem::path& dir);

std::string loss_history_csv(const DeformationState& state);

}  // namespace lvreg
