#pragma once

// Datasets and file formats: synthetic generators, IDX and CSV readers, and
// binary PGM grids. Matrices hold one sample per row.

#include <Eigen/Core>

#include <string>
#include <vector>

#include "fvnce/rng.hpp"

namespace fvnce::data {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

struct DatasetSpec {
  /// "gaussian-mixture", "binary-patterns" or "idx".
  std::string generator = "gaussian-mixture";
  Index dim = 64;
  Index clusters = 4;
  Index train = 5000;
  Index validation = 1000;
  Index test = 1000;
  /// gaussian-mixture: cluster centers uniform in [center_min, center_max]
  /// per coordinate.
  double center_min = 0.1;
  double center_max = 0.9;
  /// gaussian-mixture: rank of the per-cluster variation and its scale.
  Index factors = 3;
  double factor_scale = 0.15;
  /// Isotropic noise added to every sample.
  double noise = 0.02;
  /// binary-patterns: probability of flipping each pixel.
  double flip = 0.05;
  /// idx: image file and optional label file (all splits cut from it).
  std::string idx_images;
  std::string idx_labels;
};

struct Dataset {
  Matrix train;
  Matrix validation;
  Matrix test;
  std::vector<int> train_labels;
  std::vector<int> validation_labels;
  std::vector<int> test_labels;

  [[nodiscard]] Index dim() const noexcept { return train.cols(); }
};

[[nodiscard]] Dataset synth_dataset(const DatasetSpec& spec, Rng& rng);

/// Rows of `m` whose label equals `label` (all rows when label < 0).
[[nodiscard]] Matrix select_label(const Matrix& m, const std::vector<int>& labels, int label);

/// IDX image file (magic 0x00000803), bytes scaled to [0, 1], one image per row.
[[nodiscard]] Matrix load_idx(const std::string& path);
/// IDX label file (magic 0x00000801).
[[nodiscard]] std::vector<int> load_idx_labels(const std::string& path);

/// Comma-separated numeric matrix; blank lines and lines starting with '#' are skipped.
[[nodiscard]] Matrix load_csv_matrix(const std::string& path);

struct GridLayout {
  Index patch_rows = 8;
  Index patch_cols = 8;
  Index grid_cols = 8;
};

/// Patch shape for a flat dimension: square when possible, else one row.
[[nodiscard]] GridLayout default_layout(Index dim, Index grid_cols = 8);

/// Renders each row of `images` (values in [0, 1]) as a patch of a binary
/// P5 grayscale image. Values are clamped to [0, 255] after scaling.
void write_pgm(const std::string& path, const Matrix& images, const GridLayout& layout);

}  // namespace fvnce::data
