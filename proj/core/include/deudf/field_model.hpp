#pragma once

#include "deudf/types.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

namespace deudf {

/// How the last affine layer's raw output is mapped to a distance.
enum class OutputMode : std::uint8_t { Identity = 0, Abs = 1, Softplus = 2 };

std::string_view to_string(OutputMode mode) noexcept;
OutputMode parse_output_mode(std::string_view name);

/// Sinusoidal MLP: h_{l+1} = sin(omega * (W_l h_l + b_l)) for every hidden
/// layer, an affine last layer, then the output mode.
struct SirenParams {
  std::vector<int> layer_dims;
  double omega = 60.0;
  OutputMode output_mode = OutputMode::Identity;
  std::vector<Eigen::MatrixXd> weights;  // weights[l] is dims[l+1] x dims[l]
  std::vector<Eigen::VectorXd> biases;

  std::size_t layer_count() const noexcept { return weights.size(); }
  std::size_t parameter_count() const noexcept;
  bool all_finite() const;
};

inline const std::vector<int>& default_layer_dims() {
  static const std::vector<int> dims{3, 256, 256, 256, 256, 256, 1};
  return dims;
}

/// First layer U(-1/fan_in, 1/fan_in); later layers
/// U(-sqrt(6/fan_in)/omega, sqrt(6/fan_in)/omega); zero biases.
SirenParams init_siren(const std::vector<int>& layer_dims, double omega, std::uint64_t seed,
                       OutputMode mode = OutputMode::Identity);

/// Throws BadDims if shapes disagree with layer_dims or omega <= 0.
void validate(const SirenParams& params);

struct FieldEval {
  double value;
  Vec3 gradient;
};

double forward(const SirenParams& params, const Vec3& x);
Vec3 input_gradient(const SirenParams& params, const Vec3& x);
FieldEval evaluate(const SirenParams& params, const Vec3& x);

/// Gradient of a scalar objective with respect to every weight and bias.
/// Shape-congruent with the owning SirenParams; also used for Adam moments.
struct ParamGradient {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  static ParamGradient zeros_like(const SirenParams& params);
  void set_zero();
  ParamGradient& operator+=(const ParamGradient& other);
  bool all_finite() const;
  double squared_norm() const;
};

/// Flat views in a fixed order (layer by layer, weights column-major then biases).
Eigen::VectorXd flatten(const SirenParams& params);
void unflatten(const Eigen::VectorXd& flat, SirenParams& params);
Eigen::VectorXd flatten(const ParamGradient& grad);

/// Batched forward pass that keeps what the reverse pass needs. When
/// `with_input_gradient` is set, every activation carries its Jacobian with
/// respect to x alongside it, so the reverse pass can differentiate
/// expressions of grad_x f with respect to the parameters.
class ForwardTape {
 public:
  ForwardTape(const SirenParams& params, std::span<const Vec3> points, bool with_input_gradient);

  std::size_t size() const noexcept { return batch_; }
  bool has_input_gradient() const noexcept { return with_gradient_; }
  double value(std::size_t i) const { return values_[static_cast<Eigen::Index>(i)]; }
  /// Requires has_input_gradient().
  Vec3 gradient(std::size_t i) const { return gradients_.col(static_cast<Eigen::Index>(i)); }
  const Eigen::VectorXd& values() const noexcept { return values_; }
  const Eigen::Matrix3Xd& gradients() const noexcept { return gradients_; }

  /// Adds sum_i [ value_adjoint[i] * d f(x_i)/d theta
  ///            + gradient_adjoint[i] . d grad_x f(x_i)/d theta ] into `out`.
  /// `gradient_adjoint` must be empty for a value-only tape.
  void backward(std::span<const double> value_adjoint, std::span<const Vec3> gradient_adjoint,
                ParamGradient& out) const;

 private:
  const SirenParams* params_;
  std::size_t batch_;
  bool with_gradient_;
  int blocks_;  // 4 with input gradient ([h | dh/dx | dh/dy | dh/dz]), else 1
  std::vector<Eigen::MatrixXd> layer_inputs_;  // stacked input of each layer
  std::vector<Eigen::MatrixXd> pre_tangents_;  // W * tangent blocks, hidden layers
  std::vector<Eigen::ArrayXXd> sines_;         // sin(omega z), hidden layers
  std::vector<Eigen::ArrayXXd> cosines_;       // cos(omega z), hidden layers
  Eigen::VectorXd raw_;
  Eigen::Matrix3Xd raw_gradients_;
  Eigen::VectorXd values_;
  Eigen::Matrix3Xd gradients_;
};

/// Scalar field sampled in batches; implemented by the trained network and
/// by analytic fields used to test extraction and metrics.
class Field {
 public:
  virtual ~Field() = default;
  virtual void values(std::span<const Vec3> points, std::span<double> out) const = 0;
  virtual void values_and_gradients(std::span<const Vec3> points, std::span<double> values,
                                    std::span<Vec3> gradients) const = 0;
};

class SirenField final : public Field {
 public:
  explicit SirenField(const SirenParams& params, std::size_t chunk = 4096)
      : params_(&params), chunk_(chunk) {}
  /// Holds a pointer; the parameters must outlive the field.
  SirenField(SirenParams&&, std::size_t = 4096) = delete;

  void values(std::span<const Vec3> points, std::span<double> out) const override;
  void values_and_gradients(std::span<const Vec3> points, std::span<double> values,
                            std::span<Vec3> gradients) const override;

 private:
  const SirenParams* params_;
  std::size_t chunk_;
};

/// Checkpoint: "DEUDF01\0", u32 layer_count, u32 dims[layer_count + 1],
/// f64 omega, u8 output_mode, then per layer row-major f64 weights and f64
/// biases. Little-endian throughout.
void save_checkpoint(const SirenParams& params, const std::filesystem::path& path);
SirenParams load_checkpoint(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_checkpoint(const SirenParams& params);
SirenParams decode_checkpoint(std::span<const std::uint8_t> bytes);

}  // namespace deudf
