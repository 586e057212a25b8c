#include <gtest/gtest.h>

#include "deudf/error.hpp"
#include "deudf/training.hpp"
#include "support/fixtures.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

using deudf::ErrorCode;
using deudf::LossBatch;
using deudf::ObjectiveSettings;
using deudf::ParamGradient;
using deudf::Rng;
using deudf::SirenParams;
using deudf::Vec3;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const deudf::Error& e) {
    return e.code();
  }
  return ErrorCode::Validation;
}

LossBatch make_batch(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  const auto cloud = deudf::testing::sphere_cloud(200, 0.5, seed + 1);
  LossBatch batch;
  for (std::size_t i = 0; i < n; ++i) batch.surface.push_back(cloud.points[i]);
  // Wider displacement than training so the pair gradients are well away from kinks.
  batch.pairs = deudf::sample_pairs(cloud, n, rng, 0.05);
  batch.domain = deudf::sample_domain(n, rng);
  return batch;
}

// Plain reverse-mode backprop of sum_i a_i f(x_i), one point at a time.
ParamGradient reference_value_gradient(const SirenParams& p, const std::vector<Vec3>& xs,
                                       const std::vector<double>& a) {
  ParamGradient g = ParamGradient::zeros_like(p);
  const std::size_t layers = p.layer_count();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    std::vector<Eigen::VectorXd> acts{xs[i]};
    std::vector<Eigen::VectorXd> pre;
    for (std::size_t l = 0; l + 1 < layers; ++l) {
      pre.push_back(p.weights[l] * acts.back() + p.biases[l]);
      acts.push_back((p.omega * pre.back().array()).sin().matrix());
    }
    Eigen::VectorXd up = Eigen::VectorXd::Constant(1, a[i]);
    g.weights[layers - 1] += up * acts[layers - 1].transpose();
    g.biases[layers - 1] += up;
    Eigen::VectorXd down = p.weights[layers - 1].transpose() * up;
    for (std::size_t l = layers - 1; l-- > 0;) {
      const Eigen::VectorXd dz =
          (down.array() * p.omega * (p.omega * pre[l].array()).cos()).matrix();
      g.weights[l] += dz * acts[l].transpose();
      g.biases[l] += dz;
      down = p.weights[l].transpose() * dz;
    }
  }
  return g;
}

}  // namespace

TEST(sample_pairs, construction_identities) {
  Rng rng(3);
  const auto cloud = deudf::testing::sphere_cloud(100, 0.5, 1);
  const auto pairs = deudf::sample_pairs(cloud, 5000, rng);
  for (const auto& s : pairs) {
    EXPECT_GT(s.lambda, 0.0);
    EXPECT_LE(s.lambda, 0.003);
    EXPECT_NEAR((s.q1 - s.q2).norm(), 2.0 * s.lambda, 1e-12);
    const Vec3 mid = 0.5 * (s.q1 + s.q2);
    EXPECT_NEAR(mid.norm(), 0.5, 1e-12);
    EXPECT_NEAR(s.normal.norm(), 1.0, 1e-12);
  }
}

TEST(sample_pairs, lambda_mean) {
  Rng rng(11);
  const auto cloud = deudf::testing::sphere_cloud(10, 0.5, 1);
  const auto pairs = deudf::sample_pairs(cloud, 100000, rng);
  double mean = 0.0;
  for (const auto& s : pairs) mean += s.lambda;
  mean /= static_cast<double>(pairs.size());
  EXPECT_NEAR(mean, 0.0015, 0.05 * 0.0015);
}

TEST(sample_pairs, needs_normals) {
  Rng rng(1);
  deudf::PointCloud cloud;
  cloud.points = {Vec3::Zero()};
  EXPECT_EQ(code_of([&] { deudf::sample_pairs(cloud, 3, rng); }), ErrorCode::MissingNormals);
}

TEST(sample_domain, inside_cube_and_centered) {
  Rng rng(5);
  const auto pts = deudf::sample_domain(1000000, rng);
  Vec3 mean = Vec3::Zero();
  for (const auto& p : pts) {
    ASSERT_LE(p.cwiseAbs().maxCoeff(), 1.0);
    mean += p;
  }
  mean /= static_cast<double>(pts.size());
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(mean[c], 0.0, 0.005);
}

TEST(sample_domain, deterministic) {
  Rng a(9), b(9);
  EXPECT_EQ(deudf::sample_domain(100, a), deudf::sample_domain(100, b));
}

TEST(random_unit_vector, unit_and_isotropic) {
  Rng rng(2);
  Vec3 mean = Vec3::Zero();
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const Vec3 u = deudf::random_unit_vector(rng);
    ASSERT_NEAR(u.norm(), 1.0, 1e-12);
    mean += u;
  }
  EXPECT_LT((mean / n).norm(), 0.01);
}

TEST(loss_dist, closed_forms) {
  EXPECT_EQ(deudf::loss_dist(std::vector<double>{0.0, 0.0}), 0.0);
  EXPECT_NEAR(deudf::loss_dist(std::vector<double>{0.1, -0.3}), 0.2, 1e-15);
}

TEST(loss_positive, closed_forms) {
  EXPECT_EQ(deudf::loss_positive(std::vector<double>{0.0, 0.0, 0.0}), 1.0);
  EXPECT_NEAR(deudf::loss_positive(std::vector<double>{0.05}), std::exp(-5.0), 1e-15);
  EXPECT_NEAR(deudf::loss_positive(std::vector<double>{-0.01}), std::numbers::e, 1e-15);
}

TEST(loss_normal, alignment_extremes) {
  const std::vector<Vec3> n{Vec3::UnitZ(), Vec3::UnitX()};
  const std::vector<Vec3> out{Vec3::UnitZ(), 2.0 * Vec3::UnitX()};
  const std::vector<Vec3> in{-Vec3::UnitZ(), -0.5 * Vec3::UnitX()};
  EXPECT_NEAR(deudf::loss_normal(out, in, n).value, 0.0, 1e-15);
  EXPECT_NEAR(deudf::loss_normal(in, out, n).value, 4.0, 1e-15);
}

TEST(loss_normal, degenerate_gradient_counts_as_zero_cosine) {
  const std::vector<Vec3> n{Vec3::UnitZ()};
  const std::vector<Vec3> zero{Vec3::Zero()};
  const std::vector<Vec3> in{-Vec3::UnitZ()};
  const auto loss = deudf::loss_normal(zero, in, n);
  EXPECT_NEAR(loss.value, 1.0, 1e-15);
  EXPECT_EQ(loss.degenerate, 1u);
}

TEST(eikonal_weight, closed_forms) {
  const double xi = 0.01;
  EXPECT_NEAR(deudf::eikonal_weight(xi, xi), 0.5, 1e-12);
  EXPECT_NEAR(deudf::eikonal_weight(2 * xi, xi), 16.0 / 17.0, 1e-12);
  EXPECT_EQ(deudf::eikonal_weight(0.0, xi), 0.0);
  EXPECT_EQ(deudf::eikonal_weight(-0.3, xi), deudf::eikonal_weight(0.3, xi));
  EXPECT_GT(deudf::eikonal_weight(1.0, xi), 1.0 - 1e-7);
}

TEST(eikonal_weight, monotone_in_magnitude) {
  double prev = 0.0;
  for (double d = 1e-5; d < 0.1; d *= 1.3) {
    const double w = deudf::eikonal_weight(d, 0.002);
    EXPECT_GE(w, prev);
    EXPECT_LE(w, 1.0);
    prev = w;
  }
}

TEST(loss_eikonal, uniform_and_adaptive) {
  const std::vector<double> f{0.01, 0.0};
  const std::vector<Vec3> g{Vec3(2, 0, 0), Vec3(0, 0, 3)};
  EXPECT_NEAR(deudf::loss_eikonal(f, g, 0.01, false), 1.5, 1e-15);
  EXPECT_NEAR(deudf::loss_eikonal(f, g, 0.01, true), 0.25, 1e-15);
}

TEST(schedules, endpoints_and_monotone) {
  EXPECT_EQ(deudf::xi_schedule(0, 100), 0.01);
  EXPECT_EQ(deudf::xi_schedule(100, 100), 0.002);
  EXPECT_EQ(deudf::lr_schedule(0, 100), 5e-5);
  EXPECT_EQ(deudf::lr_schedule(100, 100), 0.0);
  EXPECT_NEAR(deudf::xi_schedule(50, 100), 0.006, 1e-15);
  EXPECT_NEAR(deudf::lr_schedule(50, 100), 2.5e-5, 1e-18);
  for (std::size_t s = 1; s <= 100; ++s) {
    EXPECT_LE(deudf::xi_schedule(s, 100), deudf::xi_schedule(s - 1, 100));
    EXPECT_LE(deudf::lr_schedule(s, 100), deudf::lr_schedule(s - 1, 100));
  }
}

TEST(total_loss, weighted_sum) {
  deudf::LossTerms t;
  t.dist = 1;
  t.positive = 2;
  t.normal = 3;
  t.eikonal = 4;
  EXPECT_EQ(deudf::total_loss(t, {}), 400 + 100 + 120 + 40);
}

TEST(objective, terms_match_standalone_losses) {
  const auto p = deudf::init_siren({3, 16, 16, 1}, 30.0, 4);
  const auto batch = make_batch(20, 2);
  ObjectiveSettings settings;
  settings.xi = 0.005;
  const auto terms = deudf::evaluate_objective(p, batch, settings);

  std::vector<double> fs, fd, fe;
  std::vector<Vec3> g1, g2, n, ge;
  for (const auto& x : batch.surface) fs.push_back(deudf::forward(p, x));
  for (const auto& s : batch.pairs) {
    g1.push_back(deudf::input_gradient(p, s.q1));
    g2.push_back(deudf::input_gradient(p, s.q2));
    n.push_back(s.normal);
  }
  for (const auto& s : batch.pairs) {
    fe.push_back(deudf::forward(p, s.q1));
    ge.push_back(g1[fe.size() - 1]);
  }
  for (std::size_t i = 0; i < batch.pairs.size(); ++i) {
    fe.push_back(deudf::forward(p, batch.pairs[i].q2));
    ge.push_back(g2[i]);
  }
  for (const auto& x : batch.domain) {
    fd.push_back(deudf::forward(p, x));
    fe.push_back(fd.back());
    ge.push_back(deudf::input_gradient(p, x));
  }
  EXPECT_NEAR(terms.dist, deudf::loss_dist(fs), 1e-13);
  EXPECT_NEAR(terms.positive, deudf::loss_positive(fd), 1e-12);
  EXPECT_NEAR(terms.normal, deudf::loss_normal(g1, g2, n).value, 1e-12);
  EXPECT_NEAR(terms.eikonal, deudf::loss_eikonal(fe, ge, 0.005), 1e-12);
  EXPECT_NEAR(terms.total, deudf::total_loss(terms, settings.weights), 1e-9);
}

TEST(objective, chunking_does_not_change_result) {
  const auto p = deudf::init_siren({3, 16, 16, 1}, 30.0, 4);
  const auto batch = make_batch(25, 7);
  ObjectiveSettings a, b;
  b.chunk = 6;
  const auto ra = deudf::loss_parameter_gradient(p, batch, a);
  const auto rb = deudf::loss_parameter_gradient(p, batch, b);
  EXPECT_NEAR(ra.terms.total, rb.terms.total, 1e-10);
  EXPECT_LT((deudf::flatten(ra.gradient) - deudf::flatten(rb.gradient)).norm(),
            1e-10 * deudf::flatten(ra.gradient).norm());
}

TEST(objective, parameter_gradient_matches_finite_differences) {
  for (bool adaptive : {true, false}) {
    auto p = deudf::init_siren({3, 16, 16, 1}, 30.0, 12);
    const auto batch = make_batch(32, 4);
    ObjectiveSettings settings;
    settings.xi = 0.01;
    settings.adaptive_eikonal = adaptive;
    const auto result = deudf::loss_parameter_gradient(p, batch, settings);
    const Eigen::VectorXd analytic = deudf::flatten(result.gradient);

    const Eigen::VectorXd theta = deudf::flatten(p);
    Eigen::VectorXd fd(theta.size());
    const double h = 1e-7;
    SirenParams q = p;
    for (Eigen::Index k = 0; k < theta.size(); ++k) {
      Eigen::VectorXd t = theta;
      t[k] += h;
      deudf::unflatten(t, q);
      const double up = deudf::evaluate_objective(q, batch, settings).total;
      t[k] -= 2 * h;
      deudf::unflatten(t, q);
      fd[k] = (up - deudf::evaluate_objective(q, batch, settings).total) / (2 * h);
    }
    EXPECT_LT((analytic - fd).norm() / fd.norm(), 1e-3) << "adaptive " << adaptive;
  }
}

TEST(objective, first_order_terms_match_plain_backprop) {
  const auto p = deudf::init_siren({3, 12, 12, 1}, 30.0, 5);
  const auto batch = make_batch(15, 9);
  ObjectiveSettings settings;
  settings.weights.normal = 0.0;
  settings.weights.eikonal = 0.0;
  const auto result = deudf::loss_parameter_gradient(p, batch, settings);

  std::vector<Vec3> xs;
  std::vector<double> a;
  for (const auto& x : batch.surface) {
    xs.push_back(x);
    const double f = deudf::forward(p, x);
    a.push_back(400.0 * (f > 0 ? 1.0 : -1.0) / 15.0);
  }
  for (const auto& x : batch.domain) {
    xs.push_back(x);
    a.push_back(50.0 * -100.0 * std::exp(-100.0 * deudf::forward(p, x)) / 15.0);
  }
  const auto reference = reference_value_gradient(p, xs, a);
  const Eigen::VectorXd expected = deudf::flatten(reference);
  EXPECT_LT((deudf::flatten(result.gradient) - expected).norm(), 1e-10 * expected.norm());
}

TEST(objective, zero_weights_give_zero) {
  const auto p = deudf::init_siren({3, 8, 1}, 30.0, 1);
  ObjectiveSettings settings;
  settings.weights = {0, 0, 0, 0};
  const auto r = deudf::loss_parameter_gradient(p, make_batch(10, 1), settings);
  EXPECT_EQ(r.terms.total, 0.0);
  EXPECT_EQ(r.gradient.squared_norm(), 0.0);
}

TEST(objective, non_finite_reports_terms) {
  auto p = deudf::init_siren({3, 8, 1}, 30.0, 1);
  p.biases[1](0) = std::numeric_limits<double>::quiet_NaN();
  try {
    deudf::loss_parameter_gradient(p, make_batch(4, 1), {});
    FAIL() << "expected NonFiniteLoss";
  } catch (const deudf::Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteLoss);
    EXPECT_NE(std::string(e.what()).find("dist="), std::string::npos);
  }
}

TEST(adam, constant_gradient_moves_by_lr) {
  auto p = deudf::init_siren({3, 2, 1}, 30.0, 1);
  const Eigen::VectorXd before = deudf::flatten(p);
  auto g = ParamGradient::zeros_like(p);
  for (auto& w : g.weights) w.setConstant(0.3);
  for (auto& b : g.biases) b.setConstant(-2.0);
  auto state = deudf::AdamState::for_params(p);
  for (int t = 0; t < 5; ++t) deudf::adam_step(p, g, state, 1e-3);
  const Eigen::VectorXd step = deudf::flatten(p) - before;
  const Eigen::VectorXd gf = deudf::flatten(g);
  for (Eigen::Index k = 0; k < step.size(); ++k) {
    EXPECT_NEAR(step[k], -5e-3 * gf[k] / (std::abs(gf[k]) + 1e-8), 1e-15);
  }
}

TEST(adam, matches_scalar_reference_trace) {
  auto p = deudf::init_siren({3, 1}, 30.0, 1);
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double theta = p.biases[0](0), m = 0, v = 0;
  auto state = deudf::AdamState::for_params(p);
  for (int t = 1; t <= 20; ++t) {
    const double grad = std::sin(0.7 * t) + 0.2;
    auto g = ParamGradient::zeros_like(p);
    g.biases[0](0) = grad;
    deudf::adam_step(p, g, state, lr);
    m = b1 * m + (1 - b1) * grad;
    v = b2 * v + (1 - b2) * grad * grad;
    theta -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
    EXPECT_NEAR(p.biases[0](0), theta, 1e-14);
  }
  EXPECT_EQ(state.step, 20u);
}

TEST(modes, parse_round_trip) {
  for (auto m : {deudf::NormalMode::Estimated, deudf::NormalMode::None, deudf::NormalMode::Random})
    EXPECT_EQ(deudf::parse_normal_mode(deudf::to_string(m)), m);
  for (auto m : {deudf::EikonalMode::Adaptive, deudf::EikonalMode::Uniform, deudf::EikonalMode::Off})
    EXPECT_EQ(deudf::parse_eikonal_mode(deudf::to_string(m)), m);
  for (auto m : {deudf::OutputMode::Identity, deudf::OutputMode::Abs, deudf::OutputMode::Softplus})
    EXPECT_EQ(deudf::parse_output_mode(deudf::to_string(m)), m);
  EXPECT_EQ(code_of([] { deudf::parse_normal_mode("pca"); }), ErrorCode::Validation);
  EXPECT_EQ(code_of([] { deudf::parse_eikonal_mode("x"); }), ErrorCode::Validation);
  EXPECT_EQ(code_of([] { deudf::parse_output_mode("relu"); }), ErrorCode::Validation);
}

TEST(train_config, validation) {
  deudf::TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  auto bad = [](auto mutate) {
    deudf::TrainConfig c;
    mutate(c);
    return code_of([&] { c.validate(); });
  };
  EXPECT_EQ(bad([](auto& c) { c.steps = 0; }), ErrorCode::Validation);
  EXPECT_EQ(bad([](auto& c) { c.pair_batch = 0; }), ErrorCode::Validation);
  EXPECT_EQ(bad([](auto& c) { c.xi_start = 0.001; }), ErrorCode::Validation);
  EXPECT_EQ(bad([](auto& c) { c.xi_end = 0.0; c.xi_start = 0.0; }), ErrorCode::Validation);
  EXPECT_EQ(bad([](auto& c) { c.weights.normal = -1; }), ErrorCode::Validation);
  EXPECT_EQ(bad([](auto& c) { c.omega = 0; }), ErrorCode::Validation);
}

namespace {

deudf::TrainConfig tiny_config() {
  deudf::TrainConfig c;
  c.layer_dims = {3, 16, 16, 1};
  c.steps = 30;
  c.surface_batch = c.pair_batch = c.domain_batch = 64;
  c.lr0 = 1e-3;
  c.seed = 17;
  return c;
}

}  // namespace

TEST(train, records_every_step) {
  const auto cloud = deudf::testing::sphere_cloud(500, 0.5, 1);
  auto c = tiny_config();
  std::size_t calls = 0;
  const auto r = deudf::train(cloud, c, [&](const deudf::StepRecord&) { ++calls; });
  ASSERT_EQ(r.report.records.size(), c.steps);
  EXPECT_EQ(calls, c.steps);
  for (std::size_t s = 0; s < c.steps; ++s) {
    const auto& rec = r.report.records[s];
    EXPECT_EQ(rec.step, s);
    EXPECT_EQ(rec.lr, deudf::lr_schedule(s, c.steps, c.lr0));
    EXPECT_EQ(rec.xi, deudf::xi_schedule(s, c.steps));
    EXPECT_TRUE(std::isfinite(rec.terms.total));
  }
  EXPECT_TRUE(r.params.all_finite());
}

TEST(train, deterministic_per_seed) {
  const auto cloud = deudf::testing::sphere_cloud(500, 0.5, 1);
  auto c = tiny_config();
  const auto a = deudf::train(cloud, c);
  const auto b = deudf::train(cloud, c);
  EXPECT_EQ(deudf::encode_checkpoint(a.params), deudf::encode_checkpoint(b.params));
  c.seed = 18;
  const auto d = deudf::train(cloud, c);
  EXPECT_NE(deudf::encode_checkpoint(a.params), deudf::encode_checkpoint(d.params));
}

TEST(train, loss_decreases) {
  const auto cloud = deudf::testing::sphere_cloud(2000, 0.5, 1);
  auto c = tiny_config();
  c.steps = 150;
  const auto r = deudf::train(cloud, c);
  auto window = [&](std::size_t from) {
    double s = 0;
    for (std::size_t i = from; i < from + 10; ++i) s += r.report.records[i].terms.total;
    return s / 10;
  };
  EXPECT_LT(window(c.steps - 10), 0.9 * window(0));
}

TEST(train, normal_modes) {
  auto cloud = deudf::testing::sphere_cloud(300, 0.5, 1);
  auto c = tiny_config();
  c.steps = 3;
  cloud.normals.reset();
  EXPECT_EQ(code_of([&] { deudf::train(cloud, c); }), ErrorCode::MissingNormals);
  c.normal_mode = deudf::NormalMode::None;
  const auto r = deudf::train(cloud, c);
  for (const auto& rec : r.report.records) EXPECT_EQ(rec.terms.total, deudf::total_loss(rec.terms, {400, 50, 0, 10}));
  c.normal_mode = deudf::NormalMode::Random;
  EXPECT_NO_THROW(deudf::train(cloud, c));
}

TEST(train, eikonal_off_drops_term) {
  const auto cloud = deudf::testing::sphere_cloud(300, 0.5, 1);
  auto c = tiny_config();
  c.steps = 3;
  c.eikonal_mode = deudf::EikonalMode::Off;
  const auto r = deudf::train(cloud, c);
  for (const auto& rec : r.report.records) EXPECT_EQ(rec.terms.total, deudf::total_loss(rec.terms, {400, 50, 40, 0}));
}

TEST(train, empty_cloud) {
  deudf::PointCloud cloud;
  cloud.normals = std::vector<Vec3>{};
  EXPECT_EQ(code_of([&] { deudf::train(cloud, tiny_config()); }), ErrorCode::EmptyInput);
}

TEST(report_csv, header_and_rows) {
  const auto cloud = deudf::testing::sphere_cloud(300, 0.5, 1);
  auto c = tiny_config();
  c.steps = 4;
  const auto r = deudf::train(cloud, c);
  std::ostringstream os;
  deudf::write_report_csv(r.report, os);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "step,lr,xi,loss_total,loss_dist,loss_positive,loss_normal,loss_eikonal");
  int rows = 0;
  while (std::getline(is, line)) {
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 7);
    ++rows;
  }
  EXPECT_EQ(rows, 4);
}
