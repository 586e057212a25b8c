#include "deudf/training.hpp"

#include "deudf/error.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>

namespace deudf {

namespace {

constexpr double kDegenerateGradient = 1e-12;

std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)));
}

double sign_of(double v) { return static_cast<double>((v > 0.0) - (v < 0.0)); }

// d delta / d d for delta(d) = d^4 / (d^4 + xi^4); even in d, so valid for d < 0.
double eikonal_weight_derivative(double d, double xi) {
  const double d2 = d * d;
  const double d4 = d2 * d2;
  const double xi4 = xi * xi * xi * xi;
  const double denom = d4 + xi4;
  return 4.0 * d2 * d * xi4 / (denom * denom);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string describe(const LossTerms& t) {
  std::ostringstream os;
  os << "total=" << t.total << " dist=" << t.dist << " positive=" << t.positive
     << " normal=" << t.normal << " eikonal=" << t.eikonal;
  return os.str();
}

LossTerms run_objective(const SirenParams& params, const LossBatch& batch,
                        const ObjectiveSettings& settings, ParamGradient* grad) {
  const LossWeights& w = settings.weights;
  const std::size_t chunk = std::max<std::size_t>(1, settings.chunk);
  const std::size_t ns = batch.surface.size();
  const std::size_t np = batch.pairs.size();
  const std::size_t nd = batch.domain.size();
  const std::size_t ne = 2 * np + nd;

  LossTerms terms;
  double dist_sum = 0.0;
  double positive_sum = 0.0;
  double normal_sum = 0.0;
  double eikonal_sum = 0.0;

  std::vector<double> value_adjoint;
  std::vector<Vec3> gradient_adjoint;

  for (std::size_t begin = 0; begin < ns; begin += chunk) {
    const std::size_t count = std::min(chunk, ns - begin);
    const ForwardTape tape(params, std::span(batch.surface).subspan(begin, count), false);
    value_adjoint.assign(count, 0.0);
    for (std::size_t i = 0; i < count; ++i) {
      const double f = tape.value(i);
      dist_sum += std::abs(f);
      value_adjoint[i] = w.dist * sign_of(f) / static_cast<double>(ns);
    }
    if (grad != nullptr) tape.backward(value_adjoint, {}, *grad);
  }

  // Points carrying input gradients: [q1 of every pair | q2 of every pair | domain].
  std::vector<Vec3> points;
  points.reserve(ne);
  for (const PairSample& s : batch.pairs) points.push_back(s.q1);
  for (const PairSample& s : batch.pairs) points.push_back(s.q2);
  points.insert(points.end(), batch.domain.begin(), batch.domain.end());

  for (std::size_t begin = 0; begin < ne; begin += chunk) {
    const std::size_t count = std::min(chunk, ne - begin);
    const ForwardTape tape(params, std::span(points).subspan(begin, count), true);
    value_adjoint.assign(count, 0.0);
    gradient_adjoint.assign(count, Vec3::Zero());

    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t k = begin + i;
      const double f = tape.value(i);
      const Vec3 g = tape.gradient(i);
      const double gnorm = g.norm();
      double& a = value_adjoint[i];
      Vec3& c = gradient_adjoint[i];

      if (k < 2 * np) {
        // (1 - cos) at q1, (1 + cos) at q2.
        const double side = k < np ? -1.0 : 1.0;
        const Vec3& n = batch.pairs[k % np].normal;
        const double nnorm = n.norm();
        if (gnorm < kDegenerateGradient || nnorm == 0.0) {
          normal_sum += 1.0;
          ++terms.degenerate_normals;
        } else {
          const double cosine = g.dot(n) / (gnorm * nnorm);
          normal_sum += 1.0 + side * cosine;
          const Vec3 dcos = n / (gnorm * nnorm) - (g.dot(n) / (gnorm * gnorm * gnorm * nnorm)) * g;
          c += (w.normal * side / static_cast<double>(np)) * dcos;
        }
      } else {
        const double e = std::exp(-settings.positive_sharpness * f);
        positive_sum += e;
        a += w.positive * (-settings.positive_sharpness * e) / static_cast<double>(nd);
      }

      const double residual = gnorm - 1.0;
      const double delta = settings.adaptive_eikonal ? eikonal_weight(f, settings.xi) : 1.0;
      eikonal_sum += delta * std::abs(residual);
      if (settings.adaptive_eikonal) {
        a += w.eikonal * eikonal_weight_derivative(f, settings.xi) * std::abs(residual) /
             static_cast<double>(ne);
      }
      if (gnorm > 0.0) {
        c += (w.eikonal * delta * sign_of(residual) / (gnorm * static_cast<double>(ne))) * g;
      }
    }
    if (grad != nullptr) tape.backward(value_adjoint, gradient_adjoint, *grad);
  }

  terms.dist = ns > 0 ? dist_sum / static_cast<double>(ns) : 0.0;
  terms.positive = nd > 0 ? positive_sum / static_cast<double>(nd) : 0.0;
  terms.normal = np > 0 ? normal_sum / static_cast<double>(np) : 0.0;
  terms.eikonal = ne > 0 ? eikonal_sum / static_cast<double>(ne) : 0.0;
  terms.total = total_loss(terms, w);

  const bool finite = std::isfinite(terms.total) && std::isfinite(terms.dist) &&
                      std::isfinite(terms.positive) && std::isfinite(terms.normal) &&
                      std::isfinite(terms.eikonal);
  if (!finite) throw Error(ErrorCode::NonFiniteLoss, "non-finite loss: " + describe(terms));
  if (grad != nullptr && !grad->all_finite()) {
    throw Error(ErrorCode::NonFiniteLoss, "non-finite parameter gradient: " + describe(terms));
  }
  return terms;
}

}  // namespace

Vec3 random_unit_vector(Rng& rng) {
  const double z = 2.0 * uniform01(rng) - 1.0;
  const double phi = 2.0 * std::numbers::pi * uniform01(rng);
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  return Vec3(r * std::cos(phi), r * std::sin(phi), z);
}

PairSamples sample_pairs(const PointCloud& cloud, std::size_t count, Rng& rng,
                         double max_displacement) {
  if (!cloud.has_normals()) throw Error(ErrorCode::MissingNormals, "pair sampling needs normals");
  if (cloud.points.empty()) throw Error(ErrorCode::EmptyInput, "point cloud is empty");
  const auto& normals = *cloud.normals;
  PairSamples pairs;
  pairs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t src = uniform_index(rng, cloud.size());
    const double lambda = max_displacement * (1.0 - uniform01(rng));
    const Vec3& p = cloud.points[src];
    const Vec3& n = normals[src];
    pairs.push_back(PairSample{p + lambda * n, p - lambda * n, n, lambda});
  }
  return pairs;
}

std::vector<Vec3> sample_domain(std::size_t count, Rng& rng) {
  std::vector<Vec3> out(count);
  for (Vec3& x : out) {
    for (int c = 0; c < 3; ++c) x[c] = 2.0 * uniform01(rng) - 1.0;
  }
  return out;
}

double loss_dist(std::span<const double> surface_values) {
  if (surface_values.empty()) return 0.0;
  double sum = 0.0;
  for (double f : surface_values) sum += std::abs(f);
  return sum / static_cast<double>(surface_values.size());
}

double loss_positive(std::span<const double> domain_values, double sharpness) {
  if (domain_values.empty()) return 0.0;
  double sum = 0.0;
  for (double f : domain_values) sum += std::exp(-sharpness * f);
  return sum / static_cast<double>(domain_values.size());
}

NormalLoss loss_normal(std::span<const Vec3> grad_q1, std::span<const Vec3> grad_q2,
                       std::span<const Vec3> normals) {
  if (grad_q1.size() != normals.size() || grad_q2.size() != normals.size()) {
    throw Error(ErrorCode::Validation, "loss_normal inputs differ in length");
  }
  NormalLoss out{0.0, 0};
  if (normals.empty()) return out;
  auto cosine = [&](const Vec3& g, const Vec3& n) {
    const double denom = g.norm() * n.norm();
    if (g.norm() < kDegenerateGradient || denom == 0.0) {
      ++out.degenerate;
      return 0.0;
    }
    return g.dot(n) / denom;
  };
  double sum = 0.0;
  for (std::size_t i = 0; i < normals.size(); ++i) {
    sum += (1.0 - cosine(grad_q1[i], normals[i])) + (1.0 + cosine(grad_q2[i], normals[i]));
  }
  out.value = sum / static_cast<double>(normals.size());
  return out;
}

double eikonal_weight(double d, double xi) {
  const double ad = std::abs(d);
  if (ad == 0.0) return 0.0;
  const double r = xi / ad;
  const double r2 = r * r;
  return 1.0 / (1.0 + r2 * r2);
}

double loss_eikonal(std::span<const double> values, std::span<const Vec3> gradients, double xi,
                    bool adaptive) {
  if (values.size() != gradients.size()) {
    throw Error(ErrorCode::Validation, "loss_eikonal inputs differ in length");
  }
  if (values.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double delta = adaptive ? eikonal_weight(values[i], xi) : 1.0;
    sum += delta * std::abs(gradients[i].norm() - 1.0);
  }
  return sum / static_cast<double>(values.size());
}

double xi_schedule(std::size_t step, std::size_t total_steps, double xi_start, double xi_end) {
  const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  return xi_end + (xi_start - xi_end) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

double lr_schedule(std::size_t step, std::size_t total_steps, double lr0) {
  const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

double total_loss(const LossTerms& terms, const LossWeights& weights) {
  return weights.dist * terms.dist + weights.positive * terms.positive +
         weights.normal * terms.normal + weights.eikonal * terms.eikonal;
}

LossResult loss_parameter_gradient(const SirenParams& params, const LossBatch& batch,
                                   const ObjectiveSettings& settings) {
  LossResult result{{}, ParamGradient::zeros_like(params)};
  result.terms = run_objective(params, batch, settings, &result.gradient);
  return result;
}

LossTerms evaluate_objective(const SirenParams& params, const LossBatch& batch,
                             const ObjectiveSettings& settings) {
  return run_objective(params, batch, settings, nullptr);
}

AdamState AdamState::for_params(const SirenParams& params) {
  return AdamState{ParamGradient::zeros_like(params), ParamGradient::zeros_like(params), 0};
}

void adam_step(SirenParams& params, const ParamGradient& grad, AdamState& state, double lr,
               const AdamConfig& config) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);

  auto update = [&](auto& param, const auto& g, auto& m, auto& v) {
    m = config.beta1 * m + (1.0 - config.beta1) * g;
    v = config.beta2 * v.array() + (1.0 - config.beta2) * g.array().square();
    param.array() -=
        lr * (m.array() / correction1) / ((v.array() / correction2).sqrt() + config.epsilon);
  };
  for (std::size_t l = 0; l < params.layer_count(); ++l) {
    update(params.weights[l], grad.weights[l], state.first_moment.weights[l],
           state.second_moment.weights[l]);
    update(params.biases[l], grad.biases[l], state.first_moment.biases[l],
           state.second_moment.biases[l]);
  }
}

std::string_view to_string(NormalMode mode) noexcept {
  switch (mode) {
    case NormalMode::Estimated: return "estimated";
    case NormalMode::None: return "none";
    case NormalMode::Random: return "random";
  }
  return "estimated";
}

std::string_view to_string(EikonalMode mode) noexcept {
  switch (mode) {
    case EikonalMode::Adaptive: return "adaptive";
    case EikonalMode::Uniform: return "uniform";
    case EikonalMode::Off: return "off";
  }
  return "adaptive";
}

NormalMode parse_normal_mode(std::string_view name) {
  if (name == "estimated") return NormalMode::Estimated;
  if (name == "none") return NormalMode::None;
  if (name == "random") return NormalMode::Random;
  throw Error(ErrorCode::Validation, "unknown normal mode '" + std::string(name) + "'");
}

EikonalMode parse_eikonal_mode(std::string_view name) {
  if (name == "adaptive") return EikonalMode::Adaptive;
  if (name == "uniform") return EikonalMode::Uniform;
  if (name == "off") return EikonalMode::Off;
  throw Error(ErrorCode::Validation, "unknown eikonal mode '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::Validation, what); };
  for (double l : {weights.dist, weights.positive, weights.normal, weights.eikonal}) {
    if (!(l >= 0.0) || !std::isfinite(l)) fail("loss weights must be finite and nonnegative");
  }
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) fail("lr0 must be positive");
  if (steps < 1) fail("steps must be >= 1");
  if (surface_batch < 1 || pair_batch < 1 || domain_batch < 1) fail("batch sizes must be >= 1");
  if (!(xi_end > 0.0) || !(xi_start >= xi_end)) fail("need xi_start >= xi_end > 0");
  if (!(max_displacement > 0.0)) fail("max_displacement must be positive");
  if (!(omega > 0.0) || !std::isfinite(omega)) fail("omega must be positive");
  if (!(positive_sharpness > 0.0)) fail("positive_sharpness must be positive");
  if (layer_dims.size() < 2 || layer_dims.front() != 3 || layer_dims.back() != 1) {
    fail("layer dims must start with 3 and end with 1");
  }
}

void write_report_csv(const TrainReport& report, std::ostream& out) {
  out << "step,lr,xi,loss_total,loss_dist,loss_positive,loss_normal,loss_eikonal\n";
  const auto old_precision = out.precision(std::numeric_limits<double>::max_digits10);
  for (const StepRecord& r : report.records) {
    out << r.step << ',' << r.lr << ',' << r.xi << ',' << r.terms.total << ',' << r.terms.dist
        << ',' << r.terms.positive << ',' << r.terms.normal << ',' << r.terms.eikonal << '\n';
  }
  out.precision(old_precision);
}

TrainResult train(const PointCloud& cloud, const TrainConfig& config, const StepCallback& on_step) {
  config.validate();
  if (cloud.points.empty()) throw Error(ErrorCode::EmptyInput, "point cloud is empty");
  if (config.normal_mode == NormalMode::Estimated && !cloud.has_normals()) {
    throw Error(ErrorCode::MissingNormals, "normal mode 'estimated' needs a cloud with normals");
  }

  TrainResult result{init_siren(config.layer_dims, config.omega, config.seed, config.output_mode),
                     {}};
  SirenParams& params = result.params;
  AdamState adam = AdamState::for_params(params);
  Rng rng(splitmix64(config.seed));

  ObjectiveSettings settings;
  settings.weights = config.weights;
  settings.positive_sharpness = config.positive_sharpness;
  settings.adaptive_eikonal = config.eikonal_mode == EikonalMode::Adaptive;
  if (config.normal_mode == NormalMode::None) settings.weights.normal = 0.0;
  if (config.eikonal_mode == EikonalMode::Off) settings.weights.eikonal = 0.0;

  result.report.records.reserve(config.steps);
  LossBatch batch;
  for (std::size_t step = 0; step < config.steps; ++step) {
    const double lr = lr_schedule(step, config.steps, config.lr0);
    settings.xi = xi_schedule(step, config.steps, config.xi_start, config.xi_end);

    batch.surface.resize(config.surface_batch);
    for (Vec3& p : batch.surface) p = cloud.points[uniform_index(rng, cloud.size())];

    if (config.normal_mode == NormalMode::Estimated) {
      batch.pairs = sample_pairs(cloud, config.pair_batch, rng, config.max_displacement);
    } else {
      // No usable normals: displace along a fresh random direction per sample.
      batch.pairs.resize(config.pair_batch);
      for (PairSample& s : batch.pairs) {
        const Vec3& p = cloud.points[uniform_index(rng, cloud.size())];
        const Vec3 n = random_unit_vector(rng);
        const double lambda = config.max_displacement * (1.0 - uniform01(rng));
        s = PairSample{p + lambda * n, p - lambda * n, n, lambda};
      }
    }
    batch.domain = sample_domain(config.domain_batch, rng);

    LossResult step_result;
    try {
      step_result = loss_parameter_gradient(params, batch, settings);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NonFiniteLoss) throw;
      throw Error(ErrorCode::NonFiniteLoss, "step " + std::to_string(step) + ": " + e.what());
    }

    StepRecord record{step, lr, settings.xi, step_result.terms};
    result.report.degenerate_normals += step_result.terms.degenerate_normals;
    result.report.records.push_back(record);
    if (on_step) on_step(record);

    adam_step(params, step_result.gradient, adam, lr);
  }
  return result;
}

}  // namespace deudf
