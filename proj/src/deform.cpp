#include "lvreg/deform.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "lvreg/random.hpp"
#include "lvreg/spatial_index.hpp"

namespace lvreg {

using ad::Tensor;

std::string to_string(DeformMode mode) { return mode == DeformMode::direct ? "direct" : "mlp"; }

DeformMode parse_deform_mode(const std::string& s) {
  if (s == "direct") return DeformMode::direct;
  if (s == "mlp") return DeformMode::mlp;
  throw ValidationError("unknown deformation mode: " + s);
}

double DeformationConfig::effective_learning_rate() const {
  if (learning_rate) return *learning_rate;
  return mode == DeformMode::direct ? 1e-2 : 1e-3;
}

void DeformationConfig::validate(int part_count) const {
  if (iterations < 1) throw ValidationError("iterations must be >= 1");
  if (n_samples < 1) throw ValidationError("n_samples must be >= 1");
  if (plateau_window < 0) throw ValidationError("plateau window must be >= 0");
  if (!(plateau_tolerance >= 0.0)) throw ValidationError("plateau tolerance must be >= 0");
  const double lr = effective_learning_rate();
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("learning rate must be > 0");
  weights.validate(part_count);
}

std::size_t DeformationState::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor& p : parameters) n += p.size();
  return n;
}

namespace {

Tensor xavier_uniform(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> w(fan_in * fan_out);
  for (double& x : w) x = rng.uniform(-limit, limit);
  return Tensor::matrix(fan_in, fan_out, std::move(w));
}

Tensor row_zeros(std::size_t k) { return Tensor::zeros({1, k}); }

Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
  return ad::add(ad::matmul(x, w), ad::broadcast_rows(b, x.rows()));
}

}  // namespace

DeformationState init_state(const LabeledMesh& follow_up, const DeformationConfig& config) {
  config.validate(follow_up.part_count);
  DeformationState state;
  state.mode = config.mode;
  state.follow_up = follow_up;
  state.current = follow_up.mesh.vertices();
  state.optimizer.options.learning_rate = config.effective_learning_rate();
  const std::size_t n = follow_up.mesh.vertex_count();

  if (config.mode == DeformMode::direct) {
    state.parameters.push_back(Tensor::zeros({n, 3}));
    return state;
  }

  const auto& v0 = follow_up.mesh.vertices();
  // Summing sorted coordinates makes the centroid independent of vertex order,
  // which keeps the network exactly permutation-equivariant.
  Vec3 centroid = Vec3::Zero();
  for (int axis = 0; axis < 3; ++axis) {
    std::vector<double> c(n);
    for (std::size_t i = 0; i < n; ++i) c[i] = v0[i][axis];
    std::sort(c.begin(), c.end());
    for (double x : c) centroid[axis] += x;
  }
  centroid /= static_cast<double>(n);
  double radius = 0.0;
  for (const Vec3& v : v0) radius = std::max(radius, (v - centroid).norm());
  if (!(radius > 0.0)) radius = 1.0;
  std::vector<Vec3> normalized(n);
  for (std::size_t i = 0; i < n; ++i) normalized[i] = (v0[i] - centroid) / radius;
  state.normalized_input = Tensor::from_points(normalized);

  using S = MlpSpec;
  Rng rng(derive_seed(config.seed, 0x6d6c702d696e6974ULL));
  state.parameters = {
      xavier_uniform(rng, S::kInput, S::kHidden),           row_zeros(S::kHidden),
      xavier_uniform(rng, S::kHidden, S::kHidden),          row_zeros(S::kHidden),
      xavier_uniform(rng, 2 * S::kHidden, S::kDecoderHidden), row_zeros(S::kDecoderHidden),
      Tensor::zeros({S::kDecoderHidden, S::kOutput}),       row_zeros(S::kOutput),
  };
  return state;
}

Tensor forward(const DeformationState& state, std::span<const Tensor> p) {
  const Tensor v0 = Tensor::from_points(state.rest());
  if (state.mode == DeformMode::direct) {
    if (p.size() != 1) throw ValidationError("direct mode expects one offset tensor");
    return ad::add(v0, p[0]);
  }
  if (p.size() != 8) throw ValidationError("mlp mode expects 8 parameter tensors");
  const Tensor& x = state.normalized_input;
  const Tensor local = ad::relu(dense(ad::relu(dense(x, p[0], p[1])), p[2], p[3]));
  const Tensor global = ad::max_over_rows(local);
  const Tensor features = ad::concat_cols(local, ad::broadcast_rows(global, x.rows()));
  const Tensor hidden = ad::relu(dense(features, p[4], p[5]));
  const Tensor offsets = dense(hidden, p[6], p[7]);
  return ad::add(v0, offsets);
}

std::vector<Vec3> forward(const DeformationState& state) {
  return forward(state, state.parameters).to_points();
}

DeformationState optimize(DeformationState state, const LabeledPointCloud& baseline,
                          const DeformationConfig& config) {
  config.validate(state.follow_up.part_count);
  if (config.mode != state.mode) throw ValidationError("config mode does not match the initialized state");
  const RegistrationObjective objective(state.follow_up, baseline, config.weights, config.edge_mode);
  state.optimizer.options.learning_rate = config.effective_learning_rate();

  for (int step = 0; step < config.iterations; ++step) {
    try {
      ad::Tape tape;
      std::vector<Tensor> tracked;
      tracked.reserve(state.parameters.size());
      for (const Tensor& p : state.parameters) tracked.push_back(tape.parameter(p));

      const Tensor vk = forward(state, tracked);
      ObjectiveValue value = objective.evaluate(
          vk, config.n_samples, iteration_seed(config.seed, static_cast<std::uint64_t>(state.iteration)));
      const ad::Gradients grads = tape.backward(value.total);
      std::vector<Tensor> g;
      g.reserve(tracked.size());
      for (const Tensor& t : tracked) g.push_back(grads.of(t));
      ad::adam_step(state.parameters, g, state.optimizer);
      state.current = forward(state);

      for (auto& w : value.breakdown.warnings) {
        if (std::find(state.warnings.begin(), state.warnings.end(), w) == state.warnings.end()) {
          state.warnings.push_back(w);
        }
      }
      value.breakdown.warnings.clear();
      state.history.push_back(std::move(value.breakdown));
      ++state.iteration;
    } catch (const OptimizationError&) {
      throw;
    } catch (const ValidationError&) {
      throw;
    } catch (const Error& e) {
      std::optional<LossBreakdown> last;
      if (!state.history.empty()) last = state.history.back();
      throw OptimizationError(fmt::format("optimization failed at iteration {}: {}", state.iteration, e.what()),
                              state.iteration, std::move(last));
    }

    const auto w = static_cast<std::size_t>(config.plateau_window);
    if (w > 0 && state.history.size() > w) {
      const double now = state.history.back().total;
      const double before = state.history[state.history.size() - 1 - w].total;
      const double improvement = (before - now) / std::max(std::abs(before), 1e-300);
      if (improvement < config.plateau_tolerance) break;
    }
  }
  return state;
}

std::vector<double> displacement_field(const DeformationState& state) {
  const auto& v0 = state.rest();
  std::vector<double> d(v0.size());
  for (std::size_t i = 0; i < v0.size(); ++i) d[i] = (state.current[i] - v0[i]).norm();
  return d;
}

double evaluation_chamfer(const TriangleMesh& mesh, const PointCloud& baseline, std::size_t n_samples,
                          std::uint64_t seed) {
  const SurfaceSamples samples = sample_surface(mesh, n_samples, seed);
  const PointGrid baseline_grid(baseline.points());
  const PointGrid sample_grid(samples.points.points());
  double forward = 0.0;
  for (const Vec3& p : samples.points.points()) forward += baseline_grid.nearest(p).second;
  double backward = 0.0;
  for (const Vec3& q : baseline.points()) backward += sample_grid.nearest(q).second;
  return forward / static_cast<double>(samples.points.size()) + backward / static_cast<double>(baseline.size());
}

}  // namespace lvreg
