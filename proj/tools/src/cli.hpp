#pragma once

#include "deudf/extraction.hpp"
#include "deudf/geometry.hpp"
#include "deudf/training.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace deudf::cli {

/// Everything `fit` needs besides paths.
struct FitSettings {
  TrainConfig train;
  std::size_t normal_k = 16;
  unsigned threads = 1;
  /// Off: the cloud is taken as already in cube coordinates (identity transform).
  bool normalize = true;
  /// Progress lines on this stream every tenth of the run (null to silence).
  std::ostream* log = nullptr;
};

struct FitOutput {
  SirenParams params;
  NormalizeTransform transform;
  TrainReport report;
  std::size_t rank_deficient_normals = 0;
};

/// normalize -> normals (per mode) -> train. Works on an in-memory cloud.
FitOutput fit_cloud(const PointCloud& cloud, const FitSettings& settings);

/// Parses `args` (without the program name) and runs one subcommand.
/// Returns the process exit code: 0 ok, 2 validation, 3 numeric, 4 I/O.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace deudf::cli
