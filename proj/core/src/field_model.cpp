#include "deudf/field_model.hpp"

#include "deudf/error.hpp"
#include "deudf/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <string>

namespace deudf {

namespace {

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double softplus(double r) { return std::max(r, 0.0) + std::log1p(std::exp(-std::abs(r))); }
double sigmoid(double r) {
  if (r >= 0.0) return 1.0 / (1.0 + std::exp(-r));
  const double e = std::exp(r);
  return e / (1.0 + e);
}

double apply_mode(OutputMode mode, double raw) {
  switch (mode) {
    case OutputMode::Identity: return raw;
    case OutputMode::Abs: return std::abs(raw);
    case OutputMode::Softplus: return softplus(raw);
  }
  return raw;
}

// First derivative of the output mode. |.| uses +1 at raw == 0.
double mode_slope(OutputMode mode, double raw) {
  switch (mode) {
    case OutputMode::Identity: return 1.0;
    case OutputMode::Abs: return raw < 0.0 ? -1.0 : 1.0;
    case OutputMode::Softplus: return sigmoid(raw);
  }
  return 1.0;
}

double mode_curvature(OutputMode mode, double raw) {
  if (mode != OutputMode::Softplus) return 0.0;
  const double s = sigmoid(raw);
  return s * (1.0 - s);
}

void sincos_inplace(const Eigen::ArrayXXd& arg, Eigen::ArrayXXd& s, Eigen::ArrayXXd& c) {
  s.resize(arg.rows(), arg.cols());
  c.resize(arg.rows(), arg.cols());
  const double* a = arg.data();
  double* sp = s.data();
  double* cp = c.data();
  const Eigen::Index n = arg.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    sp[i] = std::sin(a[i]);
    cp[i] = std::cos(a[i]);
  }
}

}  // namespace

std::string_view to_string(OutputMode mode) noexcept {
  switch (mode) {
    case OutputMode::Identity: return "identity";
    case OutputMode::Abs: return "abs";
    case OutputMode::Softplus: return "softplus";
  }
  return "identity";
}

OutputMode parse_output_mode(std::string_view name) {
  if (name == "identity") return OutputMode::Identity;
  if (name == "abs") return OutputMode::Abs;
  if (name == "softplus") return OutputMode::Softplus;
  throw Error(ErrorCode::Validation, "unknown output mode '" + std::string(name) + "'");
}

std::size_t SirenParams::parameter_count() const noexcept {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
  }
  return n;
}

bool SirenParams::all_finite() const {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
  }
  return std::isfinite(omega);
}

void validate(const SirenParams& params) {
  const auto& dims = params.layer_dims;
  if (dims.size() < 2 || dims.front() != 3 || dims.back() != 1) {
    throw Error(ErrorCode::BadDims, "layer dims must start with 3 and end with 1");
  }
  for (int d : dims) {
    if (d < 1) throw Error(ErrorCode::BadDims, "layer widths must be positive");
  }
  if (!(params.omega > 0.0) || !std::isfinite(params.omega)) {
    throw Error(ErrorCode::BadDims, "omega must be a positive finite number");
  }
  if (params.weights.size() != dims.size() - 1 || params.biases.size() != dims.size() - 1) {
    throw Error(ErrorCode::BadDims, "parameter list length disagrees with layer dims");
  }
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    if (params.weights[l].rows() != dims[l + 1] || params.weights[l].cols() != dims[l] ||
        params.biases[l].size() != dims[l + 1]) {
      throw Error(ErrorCode::BadDims, "layer " + std::to_string(l) + " shape mismatch");
    }
  }
}

SirenParams init_siren(const std::vector<int>& layer_dims, double omega, std::uint64_t seed,
                       OutputMode mode) {
  SirenParams params;
  params.layer_dims = layer_dims;
  params.omega = omega;
  params.output_mode = mode;
  if (layer_dims.size() < 2 || layer_dims.front() != 3 || layer_dims.back() != 1) {
    throw Error(ErrorCode::BadDims, "layer dims must start with 3 and end with 1");
  }
  if (!(omega > 0.0)) throw Error(ErrorCode::BadDims, "omega must be positive");

  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    const int fan_in = layer_dims[l];
    const int fan_out = layer_dims[l + 1];
    if (fan_in < 1 || fan_out < 1) throw Error(ErrorCode::BadDims, "layer widths must be positive");
    const double bound = l == 0 ? 1.0 / fan_in : std::sqrt(6.0 / fan_in) / omega;
    Eigen::MatrixXd w(fan_out, fan_in);
    // Row-major fill so the draw order matches the checkpoint layout.
    for (int r = 0; r < fan_out; ++r) {
      for (int c = 0; c < fan_in; ++c) w(r, c) = bound * (2.0 * uniform01(rng) - 1.0);
    }
    params.weights.push_back(std::move(w));
    params.biases.push_back(Eigen::VectorXd::Zero(fan_out));
  }
  return params;
}

FieldEval evaluate(const SirenParams& params, const Vec3& x) {
  const std::size_t layers = params.layer_count();
  Eigen::VectorXd h = x;
  Eigen::MatrixXd jac = Eigen::Matrix3d::Identity();
  for (std::size_t l = 0; l + 1 < layers; ++l) {
    const Eigen::VectorXd z = params.weights[l] * h + params.biases[l];
    const Eigen::MatrixXd jz = params.weights[l] * jac;
    Eigen::VectorXd next(z.size());
    Eigen::MatrixXd next_jac(jz.rows(), 3);
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      const double arg = params.omega * z[i];
      next[i] = std::sin(arg);
      next_jac.row(i) = params.omega * std::cos(arg) * jz.row(i);
    }
    h = std::move(next);
    jac = std::move(next_jac);
  }
  const double raw = params.weights.back().row(0).dot(h) + params.biases.back()[0];
  const Vec3 raw_grad = (params.weights.back() * jac).transpose();
  return FieldEval{apply_mode(params.output_mode, raw),
                   mode_slope(params.output_mode, raw) * raw_grad};
}

double forward(const SirenParams& params, const Vec3& x) {
  Eigen::VectorXd h = x;
  const std::size_t layers = params.layer_count();
  for (std::size_t l = 0; l + 1 < layers; ++l) {
    h = (params.omega * (params.weights[l] * h + params.biases[l]).array()).sin().matrix();
  }
  const double raw = params.weights.back().row(0).dot(h) + params.biases.back()[0];
  return apply_mode(params.output_mode, raw);
}

Vec3 input_gradient(const SirenParams& params, const Vec3& x) { return evaluate(params, x).gradient; }

ParamGradient ParamGradient::zeros_like(const SirenParams& params) {
  ParamGradient g;
  for (std::size_t l = 0; l < params.layer_count(); ++l) {
    g.weights.push_back(Eigen::MatrixXd::Zero(params.weights[l].rows(), params.weights[l].cols()));
    g.biases.push_back(Eigen::VectorXd::Zero(params.biases[l].size()));
  }
  return g;
}

void ParamGradient::set_zero() {
  for (auto& w : weights) w.setZero();
  for (auto& b : biases) b.setZero();
}

ParamGradient& ParamGradient::operator+=(const ParamGradient& other) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l] += other.weights[l];
    biases[l] += other.biases[l];
  }
  return *this;
}

bool ParamGradient::all_finite() const {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
  }
  return true;
}

double ParamGradient::squared_norm() const {
  double s = 0.0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    s += weights[l].squaredNorm() + biases[l].squaredNorm();
  }
  return s;
}

Eigen::VectorXd flatten(const SirenParams& params) {
  Eigen::VectorXd flat(static_cast<Eigen::Index>(params.parameter_count()));
  Eigen::Index at = 0;
  for (std::size_t l = 0; l < params.layer_count(); ++l) {
    const auto& w = params.weights[l];
    flat.segment(at, w.size()) = w.reshaped();
    at += w.size();
    flat.segment(at, params.biases[l].size()) = params.biases[l];
    at += params.biases[l].size();
  }
  return flat;
}

void unflatten(const Eigen::VectorXd& flat, SirenParams& params) {
  Eigen::Index at = 0;
  for (std::size_t l = 0; l < params.layer_count(); ++l) {
    auto& w = params.weights[l];
    w.reshaped() = flat.segment(at, w.size());
    at += w.size();
    params.biases[l] = flat.segment(at, params.biases[l].size());
    at += params.biases[l].size();
  }
}

Eigen::VectorXd flatten(const ParamGradient& grad) {
  Eigen::Index total = 0;
  for (std::size_t l = 0; l < grad.weights.size(); ++l) {
    total += grad.weights[l].size() + grad.biases[l].size();
  }
  Eigen::VectorXd flat(total);
  Eigen::Index at = 0;
  for (std::size_t l = 0; l < grad.weights.size(); ++l) {
    flat.segment(at, grad.weights[l].size()) = grad.weights[l].reshaped();
    at += grad.weights[l].size();
    flat.segment(at, grad.biases[l].size()) = grad.biases[l];
    at += grad.biases[l].size();
  }
  return flat;
}

ForwardTape::ForwardTape(const SirenParams& params, std::span<const Vec3> points,
                         bool with_input_gradient)
    : params_(&params),
      batch_(points.size()),
      with_gradient_(with_input_gradient),
      blocks_(with_input_gradient ? 4 : 1) {
  const auto n = static_cast<Eigen::Index>(batch_);
  const std::size_t layers = params.layer_count();
  const double omega = params.omega;

  Eigen::MatrixXd input = Eigen::MatrixXd::Zero(3, blocks_ * n);
  for (Eigen::Index i = 0; i < n; ++i) input.col(i) = points[static_cast<std::size_t>(i)];
  if (with_gradient_) {
    for (int j = 0; j < 3; ++j) input.row(j).segment((j + 1) * n, n).setOnes();
  }
  layer_inputs_.reserve(layers);
  layer_inputs_.push_back(std::move(input));

  for (std::size_t l = 0; l + 1 < layers; ++l) {
    Eigen::MatrixXd z = params.weights[l] * layer_inputs_.back();
    z.leftCols(n).colwise() += params.biases[l];
    Eigen::ArrayXXd s;
    Eigen::ArrayXXd c;
    sincos_inplace(omega * z.leftCols(n).array(), s, c);

    Eigen::MatrixXd next(z.rows(), blocks_ * n);
    next.leftCols(n) = s.matrix();
    if (with_gradient_) {
      for (int j = 1; j <= 3; ++j) {
        next.middleCols(j * n, n) = (omega * c * z.middleCols(j * n, n).array()).matrix();
      }
      pre_tangents_.push_back(z.rightCols(3 * n));
    }
    sines_.push_back(std::move(s));
    cosines_.push_back(std::move(c));
    layer_inputs_.push_back(std::move(next));
  }

  const Eigen::RowVectorXd out = params.weights.back() * layer_inputs_.back();
  raw_ = out.head(n).transpose().array() + params.biases.back()[0];
  values_.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) values_[i] = apply_mode(params.output_mode, raw_[i]);
  if (with_gradient_) {
    raw_gradients_.resize(3, n);
    for (int j = 0; j < 3; ++j) raw_gradients_.row(j) = out.segment((j + 1) * n, n);
    gradients_.resize(3, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      gradients_.col(i) = mode_slope(params.output_mode, raw_[i]) * raw_gradients_.col(i);
    }
  }
}

void ForwardTape::backward(std::span<const double> value_adjoint,
                           std::span<const Vec3> gradient_adjoint, ParamGradient& out) const {
  const SirenParams& params = *params_;
  const auto n = static_cast<Eigen::Index>(batch_);
  const std::size_t layers = params.layer_count();
  const double omega = params.omega;
  if (value_adjoint.size() != batch_) {
    throw Error(ErrorCode::Validation, "value adjoint size does not match the tape");
  }
  const bool use_grad = with_gradient_ && !gradient_adjoint.empty();
  if (!gradient_adjoint.empty() && (!with_gradient_ || gradient_adjoint.size() != batch_)) {
    throw Error(ErrorCode::Validation, "gradient adjoint requires a matching gradient tape");
  }

  // Adjoint of the stacked last-layer output [raw | d raw/dx | d raw/dy | d raw/dz].
  Eigen::RowVectorXd out_bar = Eigen::RowVectorXd::Zero(blocks_ * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double r = raw_[i];
    const double slope = mode_slope(params.output_mode, r);
    double raw_bar = value_adjoint[static_cast<std::size_t>(i)] * slope;
    if (use_grad) {
      const Vec3& cbar = gradient_adjoint[static_cast<std::size_t>(i)];
      raw_bar += mode_curvature(params.output_mode, r) * cbar.dot(raw_gradients_.col(i));
      for (int j = 0; j < 3; ++j) out_bar[(j + 1) * n + i] = slope * cbar[j];
    }
    out_bar[i] = raw_bar;
  }

  const std::size_t last = layers - 1;
  out.weights[last].noalias() += out_bar * layer_inputs_[last].transpose();
  out.biases[last][0] += out_bar.head(n).sum();
  if (layers == 1) return;
  Eigen::MatrixXd act_bar = params.weights[last].transpose() * out_bar;

  for (std::size_t l = last; l-- > 0;) {
    const Eigen::ArrayXXd& s = sines_[l];
    const Eigen::ArrayXXd& c = cosines_[l];
    Eigen::MatrixXd pre_bar(act_bar.rows(), blocks_ * n);
    Eigen::ArrayXXd z_bar = omega * c * act_bar.leftCols(n).array();
    if (with_gradient_) {
      Eigen::ArrayXXd coupling = Eigen::ArrayXXd::Zero(act_bar.rows(), n);
      for (int j = 1; j <= 3; ++j) {
        const auto tangent_bar = act_bar.middleCols(j * n, n).array();
        coupling += tangent_bar * pre_tangents_[l].middleCols((j - 1) * n, n).array();
        pre_bar.middleCols(j * n, n) = (omega * c * tangent_bar).matrix();
      }
      z_bar -= (omega * omega) * s * coupling;
    }
    pre_bar.leftCols(n) = z_bar.matrix();

    out.weights[l].noalias() += pre_bar * layer_inputs_[l].transpose();
    out.biases[l] += z_bar.rowwise().sum().matrix();
    if (l > 0) act_bar = params.weights[l].transpose() * pre_bar;
  }
}

void SirenField::values(std::span<const Vec3> points, std::span<double> out) const {
  const SirenParams& params = *params_;
  const std::size_t layers = params.layer_count();
  for (std::size_t begin = 0; begin < points.size(); begin += chunk_) {
    const std::size_t count = std::min(chunk_, points.size() - begin);
    const auto n = static_cast<Eigen::Index>(count);
    Eigen::MatrixXd h(3, n);
    for (Eigen::Index i = 0; i < n; ++i) h.col(i) = points[begin + static_cast<std::size_t>(i)];
    for (std::size_t l = 0; l + 1 < layers; ++l) {
      Eigen::MatrixXd z = params.weights[l] * h;
      z.colwise() += params.biases[l];
      h = (params.omega * z.array()).sin().matrix();
    }
    const Eigen::RowVectorXd raw = params.weights.back() * h;
    for (Eigen::Index i = 0; i < n; ++i) {
      out[begin + static_cast<std::size_t>(i)] =
          apply_mode(params.output_mode, raw[i] + params.biases.back()[0]);
    }
  }
}

void SirenField::values_and_gradients(std::span<const Vec3> points, std::span<double> values,
                                      std::span<Vec3> gradients) const {
  for (std::size_t begin = 0; begin < points.size(); begin += chunk_) {
    const std::size_t count = std::min(chunk_, points.size() - begin);
    const ForwardTape tape(*params_, points.subspan(begin, count), true);
    for (std::size_t i = 0; i < count; ++i) {
      values[begin + i] = tape.value(i);
      gradients[begin + i] = tape.gradient(i);
    }
  }
}

namespace {

constexpr char kMagic[8] = {'D', 'E', 'U', 'D', 'F', '0', '1', '\0'};

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.insert(out.end(), bytes, bytes + sizeof(T));
}

template <typename T>
T get(std::span<const std::uint8_t> in, std::size_t& at) {
  if (at + sizeof(T) > in.size()) throw Error(ErrorCode::IoError, "checkpoint is truncated");
  std::uint8_t bytes[sizeof(T)];
  std::memcpy(bytes, in.data() + at, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  at += sizeof(T);
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const SirenParams& params) {
  validate(params);
  std::vector<std::uint8_t> out(kMagic, kMagic + sizeof(kMagic));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.layer_count()));
  for (int d : params.layer_dims) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  put<double>(out, params.omega);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(params.output_mode));
  for (std::size_t l = 0; l < params.layer_count(); ++l) {
    const auto& w = params.weights[l];
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) put<double>(out, w(r, c));
    }
    for (Eigen::Index r = 0; r < params.biases[l].size(); ++r) put<double>(out, params.biases[l][r]);
  }
  return out;
}

SirenParams decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorCode::IoError, "not a DEUDF01 checkpoint (bad magic)");
  }
  std::size_t at = sizeof(kMagic);
  const auto layer_count = get<std::uint32_t>(bytes, at);
  if (layer_count == 0 || layer_count > 1024) {
    throw Error(ErrorCode::IoError, "implausible layer count in checkpoint");
  }
  SirenParams params;
  std::size_t expected_doubles = 0;
  for (std::uint32_t i = 0; i <= layer_count; ++i) {
    const auto d = get<std::uint32_t>(bytes, at);
    if (d == 0 || d > (1u << 20)) throw Error(ErrorCode::IoError, "implausible layer width");
    params.layer_dims.push_back(static_cast<int>(d));
  }
  for (std::uint32_t l = 0; l < layer_count; ++l) {
    expected_doubles += static_cast<std::size_t>(params.layer_dims[l] + 1) *
                        static_cast<std::size_t>(params.layer_dims[l + 1]);
  }
  const std::size_t expected_size = sizeof(kMagic) + 4 + 4 * (layer_count + 1) + 8 + 1 +
                                    8 * expected_doubles;
  if (bytes.size() != expected_size) {
    throw Error(ErrorCode::IoError, "checkpoint length " + std::to_string(bytes.size()) +
                                        " does not match header (expected " +
                                        std::to_string(expected_size) + ")");
  }
  params.omega = get<double>(bytes, at);
  const auto mode = get<std::uint8_t>(bytes, at);
  if (mode > 2) throw Error(ErrorCode::IoError, "unknown output mode in checkpoint");
  params.output_mode = static_cast<OutputMode>(mode);
  for (std::uint32_t l = 0; l < layer_count; ++l) {
    Eigen::MatrixXd w(params.layer_dims[l + 1], params.layer_dims[l]);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = get<double>(bytes, at);
    }
    Eigen::VectorXd b(params.layer_dims[l + 1]);
    for (Eigen::Index r = 0; r < b.size(); ++r) b[r] = get<double>(bytes, at);
    params.weights.push_back(std::move(w));
    params.biases.push_back(std::move(b));
  }
  try {
    validate(params);
  } catch (const Error& e) {
    throw Error(ErrorCode::IoError, std::string("invalid checkpoint: ") + e.what());
  }
  return params;
}

void save_checkpoint(const SirenParams& params, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(params);
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

SirenParams load_checkpoint(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  return decode_checkpoint(
      std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(data.data()), data.size()));
}

}  // namespace deudf
