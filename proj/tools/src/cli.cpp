#include "cli.hpp"

#include "deudf/error.hpp"
#include "deudf/field_model.hpp"
#include "deudf/io.hpp"
#include "deudf/metrics.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <tuple>

namespace deudf::cli {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void invalid(const std::string& what) { throw Error(ErrorCode::Validation, what); }

std::vector<double> parse_list(const std::string& text, std::size_t expected, const char* name) {
  std::vector<double> out;
  std::size_t begin = 0;
  while (begin <= text.size()) {
    const std::size_t end = std::min(text.find(',', begin), text.size());
    std::string token = text.substr(begin, end - begin);
    token.erase(0, token.find_first_not_of(" \t"));
    token.erase(token.find_last_not_of(" \t") + 1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (token.empty() || ec != std::errc() || ptr != token.data() + token.size() || !std::isfinite(v)) {
      invalid(std::string(name) + ": cannot parse '" + text + "'");
    }
    out.push_back(v);
    begin = end + 1;
  }
  if (expected != 0 && out.size() != expected) {
    invalid(std::string(name) + " needs " + std::to_string(expected) + " comma-separated values");
  }
  return out;
}

Vec3 to_vec3(const std::vector<double>& v) { return Vec3(v[0], v[1], v[2]); }

std::vector<int> parse_dims(const std::string& text) {
  std::vector<int> dims;
  for (double d : parse_list(text, 0, "--dims")) {
    if (d != std::floor(d) || d < 1 || d > 1e6) invalid("--dims entries must be positive integers");
    dims.push_back(static_cast<int>(d));
  }
  return dims;
}

void require_parent_dir(const fs::path& out) {
  const fs::path parent = out.has_parent_path() ? out.parent_path() : fs::path(".");
  std::error_code ec;
  if (!fs::is_directory(parent, ec)) {
    throw Error(ErrorCode::IoError, "output directory '" + parent.string() + "' does not exist");
  }
}

void require_file(const fs::path& in) {
  std::error_code ec;
  if (!fs::is_regular_file(in, ec)) {
    throw Error(ErrorCode::IoError, "cannot open '" + in.string() + "'");
  }
}

// `key = value` lines become `--key value` tokens placed ahead of the
// command-line arguments, so explicit flags win.
std::vector<std::string> config_tokens(const fs::path& path) {
  const std::string text = read_file(path);
  std::vector<std::string> tokens;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line.erase(0, line.find_first_not_of(" \t\r"));
    line.erase(line.find_last_not_of(" \t\r") + 1);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError(ErrorCode::ParseError, line_no, "config line needs 'key = value'");
    }
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    key.erase(key.find_last_not_of(" \t") + 1);
    value.erase(0, value.find_first_not_of(" \t"));
    if (key.empty() || value.empty()) {
      throw ParseError(ErrorCode::ParseError, line_no, "config line needs 'key = value'");
    }
    std::replace(key.begin(), key.end(), '_', '-');
    if (key == "config") throw ParseError(ErrorCode::ParseError, line_no, "config files cannot nest");
    tokens.push_back("--" + key + "=" + value);
  }
  return tokens;
}

struct FitArgs {
  std::string points;
  std::string out;
  std::string report;
  std::string dims;
  std::string normal_mode = "estimated";
  std::string output_mode = "identity";
  std::string eikonal = "adaptive";
  std::size_t k = 16;
  TrainConfig train;
};

struct ExtractArgs {
  std::string ckpt;
  std::string out;
  int res = 256;
  double iso = 0.005;
  ShrinkConfig shrink;
  bool denormalize = false;
  bool no_trim = false;
};

struct EvalArgs {
  std::string mesh;
  std::string gt;
  std::string ckpt;
  std::size_t samples = 100000;
  std::uint64_t seed = 0;
};

struct ProfileArgs {
  std::string ckpt;
  std::string origin = "0,0,0";
  std::string dir = "0,0,1";
  std::string range = "-0.05,0.05";
  std::size_t n = 1001;
};

struct NormalsArgs {
  std::string points;
  std::string out;
  std::size_t k = 16;
};

int cmd_fit(const FitArgs& a, unsigned threads, std::ostream& err) {
  FitSettings s;
  s.train = a.train;
  s.train.normal_mode = parse_normal_mode(a.normal_mode);
  s.train.output_mode = parse_output_mode(a.output_mode);
  s.train.eikonal_mode = parse_eikonal_mode(a.eikonal);
  if (!a.dims.empty()) s.train.layer_dims = parse_dims(a.dims);
  s.train.validate();
  s.normal_k = a.k;
  if (s.normal_k < 3) invalid("--k must be at least 3");
  s.threads = threads;
  s.log = &err;
  require_file(a.points);
  require_parent_dir(a.out);
  if (!a.report.empty()) require_parent_dir(a.report);

  const PointCloud cloud = load_points(a.points);
  const FitOutput fit = fit_cloud(cloud, s);

  save_checkpoint(fit.params, a.out);
  save_transform(fit.transform, transform_sidecar_path(a.out));
  if (!a.report.empty()) {
    std::ostringstream csv;
    write_report_csv(fit.report, csv);
    write_file_atomic(a.report, csv.str());
  }
  err << "wrote " << a.out << " (" << fit.params.parameter_count() << " parameters)\n";
  if (fit.rank_deficient_normals > 0) {
    err << "warning: " << fit.rank_deficient_normals << " rank-deficient normal neighborhoods\n";
  }
  if (fit.report.degenerate_normals > 0) {
    err << "warning: " << fit.report.degenerate_normals << " degenerate gradients in the normal term\n";
  }
  return 0;
}

int cmd_extract(const ExtractArgs& a, unsigned threads, std::ostream& err) {
  if (a.res < kMinGridResolution) {
    invalid("--res must be at least " + std::to_string(kMinGridResolution));
  }
  if (!std::isfinite(a.iso)) invalid("--iso must be finite");
  if (a.shrink.iterations < 0) invalid("--shrink-iters must be nonnegative");
  require_parent_dir(a.out);
  const SirenParams params = load_checkpoint(a.ckpt);
  NormalizeTransform transform;
  if (a.denormalize) transform = load_transform(transform_sidecar_path(a.ckpt));

  ExtractConfig config;
  config.resolution = a.res;
  config.iso = a.iso;
  config.shrink = a.shrink;
  config.trim.enabled = !a.no_trim;
  config.threads = threads;
  const SirenField field(params);
  ShrinkReport report;
  TriangleMesh mesh = extract_surface(field, config, &report);
  if (a.denormalize) {
    for (Vec3& v : mesh.vertices) v = transform.inverse(v);
  }
  save_mesh_obj(mesh, a.out);
  err << "wrote " << a.out << ": " << mesh.vertices.size() << " vertices, "
      << mesh.triangles.size() << " triangles; mean |f| " << report.mean_abs_before << " -> "
      << report.mean_abs_after << " after " << report.iterations_run << " shrink iterations\n";
  return 0;
}

int cmd_eval(const EvalArgs& a, unsigned threads, std::ostream& out) {
  if (a.samples < 1) invalid("--samples must be positive");
  require_file(a.mesh);
  require_file(a.gt);
  if (!a.ckpt.empty()) require_file(a.ckpt);

  const TriangleMesh mesh = load_mesh_obj(a.mesh);
  Rng rng(a.seed);
  const std::vector<Vec3> predicted = sample_mesh_surface(mesh, a.samples, rng);
  std::vector<Vec3> reference;
  std::string ext = fs::path(a.gt).extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".obj") {
    reference = sample_mesh_surface(load_mesh_obj(a.gt), a.samples, rng);
  } else {
    reference = load_points(a.gt).points;
  }
  MetricsRecord record = evaluate_reconstruction(predicted, reference, threads);
  record.zero_dev = std::numeric_limits<double>::quiet_NaN();
  if (!a.ckpt.empty()) {
    const SirenParams params = load_checkpoint(a.ckpt);
    record.zero_dev = zero_deviation(mesh, SirenField(params));
  }
  write_metrics_csv(record, out);
  return 0;
}

int cmd_profile(const ProfileArgs& a, std::ostream& out) {
  const Vec3 origin = to_vec3(parse_list(a.origin, 3, "--origin"));
  const Vec3 dir = to_vec3(parse_list(a.dir, 3, "--dir"));
  const auto range = parse_list(a.range, 2, "--range");
  if (!(dir.norm() > 0.0)) invalid("--dir must be a nonzero vector");
  if (!(range[0] < range[1])) invalid("--range needs lo < hi");
  if (a.n < 2) invalid("--n must be at least 2");
  const SirenParams params = load_checkpoint(a.ckpt);

  const Vec3 unit = dir.normalized();
  std::vector<double> ts(a.n);
  std::vector<Vec3> pts(a.n);
  for (std::size_t i = 0; i < a.n; ++i) {
    ts[i] = range[0] + (range[1] - range[0]) * static_cast<double>(i) / static_cast<double>(a.n - 1);
    pts[i] = origin + ts[i] * unit;
  }
  std::vector<double> values(a.n);
  std::vector<Vec3> grads(a.n);
  SirenField(params).values_and_gradients(pts, values, grads);

  std::ostringstream csv;
  csv << std::setprecision(std::numeric_limits<double>::max_digits10);
  csv << "t,f,grad_norm\n";
  for (std::size_t i = 0; i < a.n; ++i) csv << ts[i] << ',' << values[i] << ',' << grads[i].norm() << '\n';
  out << csv.str();
  return 0;
}

int cmd_normals(const NormalsArgs& a, unsigned threads, std::ostream& err) {
  if (a.k < 3) invalid("--k must be at least 3");
  require_file(a.points);
  require_parent_dir(a.out);
  PointCloud cloud = load_points(a.points);
  if (cloud.points.empty()) throw Error(ErrorCode::EmptyInput, "point cloud is empty");
  if (a.k > cloud.size()) {
    throw Error(ErrorCode::KTooLarge, "--k " + std::to_string(a.k) + " exceeds the " +
                                          std::to_string(cloud.size()) + " input points");
  }
  cloud.normals.reset();
  NormalEstimationStats stats;
  const PointCloud with_normals = estimate_normals_pca(cloud, a.k, &stats, threads);
  save_points_xyz(with_normals, a.out);
  err << "wrote " << a.out << " (" << with_normals.size() << " points)\n";
  if (stats.rank_deficient > 0) {
    err << "warning: " << stats.rank_deficient << " rank-deficient neighborhoods\n";
  }
  return 0;
}

}  // namespace

FitOutput fit_cloud(const PointCloud& cloud, const FitSettings& settings) {
  settings.train.validate();
  if (cloud.points.empty()) throw Error(ErrorCode::EmptyInput, "point cloud is empty");
  FitOutput result;
  PointCloud normalized;
  if (settings.normalize) {
    std::tie(normalized, result.transform) = normalize_to_cube(cloud);
  } else {
    for (const Vec3& p : cloud.points) {
      if (!p.allFinite() || p.cwiseAbs().maxCoeff() > 1.0) invalid("points must lie in [-1, 1]^3");
    }
    normalized = cloud;
  }
  if (settings.train.normal_mode == NormalMode::Estimated) {
    if (settings.normal_k > normalized.size()) {
      throw Error(ErrorCode::KTooLarge, "normal estimation needs at least k = " +
                                            std::to_string(settings.normal_k) + " points");
    }
    normalized.normals.reset();
    NormalEstimationStats stats;
    normalized = estimate_normals_pca(normalized, settings.normal_k, &stats, settings.threads);
    result.rank_deficient_normals = stats.rank_deficient;
  }

  const std::size_t every = std::max<std::size_t>(1, settings.train.steps / 10);
  StepCallback progress;
  if (settings.log != nullptr) {
    progress = [&](const StepRecord& r) {
      if (r.step % every == 0 || r.step + 1 == settings.train.steps) {
        *settings.log << "step " << r.step << '/' << settings.train.steps << " loss "
                      << r.terms.total << " (dist " << r.terms.dist << ", positive "
                      << r.terms.positive << ", normal " << r.terms.normal << ", eikonal "
                      << r.terms.eikonal << ")\n";
      }
    };
  }
  TrainResult trained = train(normalized, settings.train, progress);
  result.params = std::move(trained.params);
  result.report = std::move(trained.report);
  return result;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app("Unsigned distance field reconstruction from point clouds", "deudf");
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  unsigned threads = 1;
  std::string config_path;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--threads", threads, "Worker threads (1 is bitwise reproducible)")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    sub->add_option("--config", config_path, "File of 'key = value' lines using flag names");
  };

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "Train a field on a point cloud");
  fit_cmd->add_option("points", fit.points, "Input .xyz or .ply")->required();
  fit_cmd->add_option("--out", fit.out, "Checkpoint path")->required();
  fit_cmd->add_option("--omega", fit.train.omega, "Sine frequency (30 for noisy inputs)")->capture_default_str();
  fit_cmd->add_option("--steps", fit.train.steps)->capture_default_str();
  fit_cmd->add_option("--normal-mode", fit.normal_mode)
      ->check(CLI::IsMember({"estimated", "none", "random"}))
      ->capture_default_str();
  fit_cmd->add_option("--output-mode", fit.output_mode)
      ->check(CLI::IsMember({"identity", "abs", "softplus"}))
      ->capture_default_str();
  fit_cmd->add_option("--eikonal", fit.eikonal)
      ->check(CLI::IsMember({"adaptive", "uniform", "off"}))
      ->capture_default_str();
  fit_cmd->add_option("--seed", fit.train.seed)->capture_default_str();
  fit_cmd->add_option("--report", fit.report, "Per-step loss CSV");
  fit_cmd->add_option("--lr", fit.train.lr0, "Initial learning rate")->capture_default_str();
  fit_cmd->add_option("--dims", fit.dims, "Layer sizes, e.g. 3,256,256,256,256,256,1");
  fit_cmd->add_option("--surface-batch", fit.train.surface_batch)->capture_default_str();
  fit_cmd->add_option("--pair-batch", fit.train.pair_batch)->capture_default_str();
  fit_cmd->add_option("--domain-batch", fit.train.domain_batch)->capture_default_str();
  fit_cmd->add_option("--xi-start", fit.train.xi_start)->capture_default_str();
  fit_cmd->add_option("--xi-end", fit.train.xi_end)->capture_default_str();
  fit_cmd->add_option("--max-displacement", fit.train.max_displacement)->capture_default_str();
  fit_cmd->add_option("--w-dist", fit.train.weights.dist)->capture_default_str();
  fit_cmd->add_option("--w-positive", fit.train.weights.positive)->capture_default_str();
  fit_cmd->add_option("--w-normal", fit.train.weights.normal)->capture_default_str();
  fit_cmd->add_option("--w-eikonal", fit.train.weights.eikonal)->capture_default_str();
  fit_cmd->add_option("--k", fit.k, "Neighbors for PCA normals")->capture_default_str();
  add_common(fit_cmd);

  ExtractArgs ex;
  auto* ex_cmd = app.add_subcommand("extract", "Extract a triangle mesh from a checkpoint");
  ex_cmd->add_option("ckpt", ex.ckpt)->required();
  ex_cmd->add_option("--out", ex.out, "OBJ path")->required();
  ex_cmd->add_option("--res", ex.res, "Grid resolution per axis")->capture_default_str();
  ex_cmd->add_option("--iso", ex.iso, "Double-cover iso value")->capture_default_str();
  ex_cmd->add_option("--shrink-iters", ex.shrink.iterations)->capture_default_str();
  ex_cmd->add_option("--shrink-step", ex.shrink.step_size)->capture_default_str();
  ex_cmd->add_option("--shrink-alpha", ex.shrink.alpha_smooth)->capture_default_str();
  ex_cmd->add_flag("--denormalize", ex.denormalize, "Map back to input coordinates");
  ex_cmd->add_flag("--no-trim", ex.no_trim, "Keep folded faces around open rims");
  add_common(ex_cmd);

  EvalArgs ev;
  auto* ev_cmd = app.add_subcommand("eval", "Chamfer-L1 / F-score / zero deviation as CSV");
  ev_cmd->add_option("mesh", ev.mesh)->required();
  ev_cmd->add_option("gt", ev.gt, "Reference .obj (sampled) or points")->required();
  ev_cmd->add_option("--samples", ev.samples)->capture_default_str();
  ev_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint for the zero-deviation column");
  ev_cmd->add_option("--seed", ev.seed)->capture_default_str();
  add_common(ev_cmd);

  ProfileArgs pr;
  auto* pr_cmd = app.add_subcommand("profile", "Sample f and |grad f| along a line as CSV");
  pr_cmd->add_option("ckpt", pr.ckpt)->required();
  pr_cmd->add_option("--origin", pr.origin)->capture_default_str();
  pr_cmd->add_option("--dir", pr.dir)->capture_default_str();
  pr_cmd->add_option("--range", pr.range)->capture_default_str();
  pr_cmd->add_option("--n", pr.n)->capture_default_str();
  add_common(pr_cmd);

  NormalsArgs no;
  auto* no_cmd = app.add_subcommand("normals", "Estimate PCA normals and write x y z nx ny nz");
  no_cmd->add_option("points", no.points)->required();
  no_cmd->add_option("--out", no.out)->required();
  no_cmd->add_option("--k", no.k)->capture_default_str();
  add_common(no_cmd);

  try {
    std::vector<std::string> tokens;
    std::string config_file;
    for (std::size_t i = 0; i < args.size(); ++i) {
      if (args[i] == "--config" && i + 1 < args.size()) {
        config_file = args[++i];
      } else if (args[i].rfind("--config=", 0) == 0) {
        config_file = args[i].substr(9);
      } else {
        tokens.push_back(args[i]);
      }
    }
    if (!config_file.empty()) {
      if (tokens.empty()) invalid("--config needs a subcommand");
      const auto extra = config_tokens(config_file);
      tokens.insert(tokens.begin() + 1, extra.begin(), extra.end());
    }
    std::reverse(tokens.begin(), tokens.end());
    app.parse(tokens);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  }

  try {
    if (fit_cmd->parsed()) return cmd_fit(fit, threads, err);
    if (ex_cmd->parsed()) return cmd_extract(ex, threads, err);
    if (ev_cmd->parsed()) return cmd_eval(ev, threads, out);
    if (pr_cmd->parsed()) return cmd_profile(pr, out);
    if (no_cmd->parsed()) return cmd_normals(no, threads, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    if (e.code() == ErrorCode::EmptyLevelSet) err << "hint: raise --iso or train longer\n";
    return exit_code_for(e.code());
  } catch (const std::bad_alloc&) {
    err << "error: out of memory\n";
    return 3;
  }
  return 2;
}

}  // namespace deudf::cli
