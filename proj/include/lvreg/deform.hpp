#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lvreg/autodiff.hpp"
#include "lvreg/error.hpp"
#include "lvreg/geometry.hpp"
#include "lvreg/losses.hpp"

namespace lvreg {

enum class DeformMode { direct, mlp };

std::string to_string(DeformMode mode);
DeformMode parse_deform_mode(const std::string& s);

struct DeformationConfig {
  DeformMode mode = DeformMode::direct;
  int iterations = 500;
  /// Defaults to 1e-2 in direct mode and 1e-3 in MLP mode.
  std::optional<double> learning_rate;
  LossWeights weights;
  std::size_t n_samples = 5000;
  std::uint64_t seed = 0;
  int plateau_window = 50;
  double plateau_tolerance = 1e-5;
  EdgeMode edge_mode = EdgeMode::initial;

  double effective_learning_rate() const;
  void validate(int part_count) const;
};

/// Layer widths of the shared per-point network: encoder 3 -> 64 -> 64 with
/// relu, max-pooled global feature, decoder on [local | global] 128 -> 64 -> 3.
struct MlpSpec {
  static constexpr std::size_t kInput = 3;
  static constexpr std::size_t kHidden = 64;
  static constexpr std::size_t kDecoderHidden = 64;
  static constexpr std::size_t kOutput = 3;
};

struct DeformationState {
  DeformMode mode = DeformMode::direct;
  LabeledMesh follow_up;  // holds V0
  /// direct: {offsets n x 3}; mlp: {W1, b1, W2, b2, W3, b3, W4, b4}
  std::vector<ad::Tensor> parameters;
  /// MLP input: (V0 - centroid) / max radius, fixed at init.
  ad::Tensor normalized_input;
  std::vector<Vec3> current;  // Vk
  int iteration = 0;
  std::vector<LossBreakdown> history;
  ad::AdamState optimizer;
  std::vector<std::string> warnings;  // distinct warnings seen while optimizing

  const std::vector<Vec3>& rest() const { return follow_up.mesh.vertices(); }
  std::size_t parameter_count() const;
};

/// Raised when the objective turns non-finite mid-run.
class OptimizationError : public Error {
 public:
  OptimizationError(const std::string& what, int iteration, std::optional<LossBreakdown> last_finite)
      : Error(what), iteration_(iteration), last_finite_(std::move(last_finite)) {}
  int iteration() const { return iteration_; }
  const std::optional<LossBreakdown>& last_finite() const { return last_finite_; }

 private:
  int iteration_;
  std::optional<LossBreakdown> last_finite_;
};

/// Identity deformation: zero offsets, or an MLP whose output layer is zero.
DeformationState init_state(const LabeledMesh& follow_up, const DeformationConfig& config);

/// Differentiable Vk for the given parameter tensors (which may be tracked).
ad::Tensor forward(const DeformationState& state, std::span<const ad::Tensor> parameters);
/// Vk for the state's own parameters.
std::vector<Vec3> forward(const DeformationState& state);

/// Runs up to config.iterations steps of forward / objective / backward /
/// Adam, stopping early on a loss plateau.
DeformationState optimize(DeformationState state, const LabeledPointCloud& baseline,
                          const DeformationConfig& config);

/// |Vk - V0| per vertex.
std::vector<double> displacement_field(const DeformationState& state);

/// Symmetric chamfer (squared distances, means) between `n_samples` fixed-seed
/// surface samples of `mesh` and the baseline cloud. Used as the reported fit
/// metric: a dense evaluation sampling keeps its floor well below the
/// per-iteration training estimate.
double evaluation_chamfer(const TriangleMesh& mesh, const PointCloud& baseline, std::size_t n_samples,
                          std::uint64_t seed);

}  // namespace lvreg
