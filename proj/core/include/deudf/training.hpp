#pragma once

#include "deudf/field_model.hpp"
#include "deudf/types.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace deudf {

using Rng = std::mt19937_64;

/// Uniform double in [0, 1) from the top 53 bits of one draw.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniformly distributed unit vector.
Vec3 random_unit_vector(Rng& rng);

struct PairSample {
  Vec3 q1;      // p + lambda n
  Vec3 q2;      // p - lambda n
  Vec3 normal;  // unit
  double lambda;
};

using PairSamples = std::vector<PairSample>;

/// Picks `count` source points uniformly (with replacement) and displaces
/// them by lambda ~ U(0, max_displacement] along +/- their normal.
PairSamples sample_pairs(const PointCloud& cloud, std::size_t count, Rng& rng,
                         double max_displacement = 0.003);

/// i.i.d. uniform samples of [-1, 1]^3.
std::vector<Vec3> sample_domain(std::size_t count, Rng& rng);

// Loss terms. Every reduction is a mean over its batch.

double loss_dist(std::span<const double> surface_values);
double loss_positive(std::span<const double> domain_values, double sharpness = 100.0);

struct NormalLoss {
  double value;
  std::size_t degenerate;  // gradients with norm below 1e-12 (cosine taken as 0)
};
NormalLoss loss_normal(std::span<const Vec3> grad_q1, std::span<const Vec3> grad_q2,
                       std::span<const Vec3> normals);

/// delta(d) = 1 / (1 + (xi/|d|)^4), with delta(0) = 0.
double eikonal_weight(double d, double xi);
double loss_eikonal(std::span<const double> values, std::span<const Vec3> gradients, double xi,
                    bool adaptive = true);

double xi_schedule(std::size_t step, std::size_t total_steps, double xi_start = 0.01,
                   double xi_end = 0.002);
double lr_schedule(std::size_t step, std::size_t total_steps, double lr0 = 5e-5);

struct LossWeights {
  double dist = 400.0;
  double positive = 50.0;
  double normal = 40.0;
  double eikonal = 10.0;
};

struct LossTerms {
  double dist = 0.0;
  double positive = 0.0;
  double normal = 0.0;
  double eikonal = 0.0;
  double total = 0.0;
  std::size_t degenerate_normals = 0;
};

double total_loss(const LossTerms& terms, const LossWeights& weights);

/// One optimization batch: surface samples (distance term), displaced
/// pairs (normal and Eikonal terms) and domain samples (positivity and
/// Eikonal terms).
struct LossBatch {
  std::vector<Vec3> surface;
  PairSamples pairs;
  std::vector<Vec3> domain;
};

struct ObjectiveSettings {
  LossWeights weights;
  double xi = 0.01;
  double positive_sharpness = 100.0;
  bool adaptive_eikonal = true;
  std::size_t chunk = 2048;
};

struct LossResult {
  LossTerms terms;
  ParamGradient gradient;
};

/// Full objective and its exact parameter gradient. Terms containing grad_x f
/// are differentiated through the Jacobian-carrying forward tape. Throws
/// NonFiniteLoss naming the offending term.
LossResult loss_parameter_gradient(const SirenParams& params, const LossBatch& batch,
                                   const ObjectiveSettings& settings);

/// Objective value only (same arithmetic as the gradient path).
LossTerms evaluate_objective(const SirenParams& params, const LossBatch& batch,
                             const ObjectiveSettings& settings);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  ParamGradient first_moment;
  ParamGradient second_moment;
  std::uint64_t step = 0;

  static AdamState for_params(const SirenParams& params);
};

void adam_step(SirenParams& params, const ParamGradient& grad, AdamState& state, double lr,
               const AdamConfig& config = {});

enum class NormalMode { Estimated, None, Random };
enum class EikonalMode { Adaptive, Uniform, Off };

std::string_view to_string(NormalMode mode) noexcept;
std::string_view to_string(EikonalMode mode) noexcept;
NormalMode parse_normal_mode(std::string_view name);
EikonalMode parse_eikonal_mode(std::string_view name);

struct TrainConfig {
  LossWeights weights;
  double lr0 = 5e-5;
  std::size_t steps = 20000;
  std::size_t surface_batch = 5000;
  std::size_t pair_batch = 5000;
  std::size_t domain_batch = 5000;
  double xi_start = 0.01;
  double xi_end = 0.002;
  double max_displacement = 0.003;
  double omega = 60.0;
  double positive_sharpness = 100.0;
  std::vector<int> layer_dims = default_layer_dims();
  OutputMode output_mode = OutputMode::Identity;
  NormalMode normal_mode = NormalMode::Estimated;
  EikonalMode eikonal_mode = EikonalMode::Adaptive;
  std::uint64_t seed = 0;

  /// Throws Validation on the first violated invariant.
  void validate() const;
};

struct StepRecord {
  std::size_t step;
  double lr;
  double xi;
  LossTerms terms;
};

struct TrainReport {
  std::vector<StepRecord> records;
  std::size_t degenerate_normals = 0;
};

/// CSV with header step,lr,xi,loss_total,loss_dist,loss_positive,loss_normal,loss_eikonal.
void write_report_csv(const TrainReport& report, std::ostream& out);

struct TrainResult {
  SirenParams params;
  TrainReport report;
};

using StepCallback = std::function<void(const StepRecord&)>;

/// Fresh surface/pair/domain batches every step, Adam with cosine-annealed
/// learning rate and xi. The cloud must carry normals unless normal_mode is
/// None or Random.
TrainResult train(const PointCloud& cloud, const TrainConfig& config,
                  const StepCallback& on_step = {});

}  // namespace deudf
