#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "lvreg/deform.hpp"
#include "lvreg/volume.hpp"

namespace lvreg {

/// Everything a `deform` run needs besides the manifest. JSON layout:
///
///   {
///     "seed": 0,
///     "baseline_points": 5000,
///     "evaluation_points": 50000,
///     "parts": ["thalamus", ...],
///     "structures": {"lv": 1, "parts": [2, 3, 4, 5, 6]},
///     "deformation": {"mode": "direct", "iterations": 500, "learning_rate": 0.01,
///                     "n_samples": 5000, "plateau_window": 50,
///                     "plateau_tolerance": 1e-5, "edge_mode": "initial"},
///     "weights": {"cf": 1, "pm": 1, "pm_i": [1, 1, 1, 1, 1], "vert": 0.1,
///                 "edge": 1, "normal": 0.01, "lap": 0.1},
///     "paths": {"manifest": "manifest.csv", "out": "runs"}
///   }
///
/// Every key is optional; unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t baseline_points = 5000;
  std::size_t evaluation_points = 50000;
  StructureMap structures;
  DeformationConfig deformation;
  std::optional<std::string> manifest_path;
  std::optional<std::string> out_path;

  /// Defaults for m parts with the sequential label convention.
  static RunConfig defaults(int part_count = 5);
  void validate() const;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Canonical JSON (all keys, fixed order); parse_run_config inverts it.
std::string run_config_json(const RunConfig& config);

}  // namespace lvreg
