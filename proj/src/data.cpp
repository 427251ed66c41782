#include "fvnce/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fvnce::data {

namespace {

std::uint32_t read_be32(std::istream& is, const std::string& path) {
  std::array<unsigned char, 4> b{};
  is.read(reinterpret_cast<char*>(b.data()), 4);
  if (!is) throw std::runtime_error("idx: truncated header in " + path);
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}

std::vector<unsigned char> read_payload(std::istream& is, std::size_t n, const std::string& path) {
  std::vector<unsigned char> buf(n);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw std::runtime_error("idx: truncated payload in " + path);
  }
  return buf;
}

void split_rows(const Matrix& all, const std::vector<int>& labels, const DatasetSpec& spec,
                Dataset& out) {
  const Index need = spec.train + spec.validation + spec.test;
  if (all.rows() < need) {
    throw std::invalid_argument("dataset has " + std::to_string(all.rows()) + " rows, splits need " +
                                std::to_string(need));
  }
  out.train = all.topRows(spec.train);
  out.validation = all.middleRows(spec.train, spec.validation);
  out.test = all.middleRows(spec.train + spec.validation, spec.test);
  auto cut = [&](Index from, Index n) {
    if (labels.empty()) return std::vector<int>(static_cast<std::size_t>(n), 0);
    return std::vector<int>(labels.begin() + from, labels.begin() + from + n);
  };
  out.train_labels = cut(0, spec.train);
  out.validation_labels = cut(spec.train, spec.validation);
  out.test_labels = cut(spec.train + spec.validation, spec.test);
}

}  // namespace

Dataset synth_dataset(const DatasetSpec& spec, Rng& rng) {
  if (spec.train < 1 || spec.validation < 0 || spec.test < 0) {
    throw std::invalid_argument("dataset split sizes must be positive");
  }
  Dataset out;
  if (spec.generator == "idx") {
    if (spec.idx_images.empty()) throw std::invalid_argument("idx generator needs idx_images");
    const Matrix all = load_idx(spec.idx_images);
    std::vector<int> labels;
    if (!spec.idx_labels.empty()) labels = load_idx_labels(spec.idx_labels);
    if (!labels.empty() && static_cast<Index>(labels.size()) != all.rows()) {
      throw std::invalid_argument("idx label count differs from image count");
    }
    split_rows(all, labels, spec, out);
    return out;
  }

  if (spec.dim < 1 || spec.clusters < 1) {
    throw std::invalid_argument("dataset dim and clusters must be positive");
  }
  if (spec.factors < 0 || spec.center_max < spec.center_min) {
    throw std::invalid_argument("dataset factors or center range invalid");
  }
  const Index n = spec.train + spec.validation + spec.test;
  const Index d = spec.dim;
  const Index k = spec.clusters;
  Rng proto_rng = rng.split(1);
  Rng sample_rng = rng.split(2);
  Matrix all(n, d);
  std::vector<int> labels(static_cast<std::size_t>(n));

  if (spec.generator == "gaussian-mixture") {
    // Each cluster is a low-rank Gaussian sheet around a random center.
    Matrix centers(k, d);
    std::vector<Matrix> bases;
    for (Index c = 0; c < k; ++c) {
      for (Index j = 0; j < d; ++j) centers(c, j) = spec.center_min + (spec.center_max - spec.center_min) * proto_rng.uniform();
      Matrix a(d, spec.factors);
      for (Index f = 0; f < spec.factors; ++f) {
        for (Index j = 0; j < d; ++j) a(j, f) = proto_rng.normal();
        a.col(f).normalize();
      }
      bases.push_back(std::move(a));
    }
    for (Index i = 0; i < n; ++i) {
      const auto c = static_cast<Index>(sample_rng.index(static_cast<std::uint64_t>(k)));
      labels[static_cast<std::size_t>(i)] = static_cast<int>(c);
      Vector u(spec.factors);
      for (Index f = 0; f < spec.factors; ++f) u(f) = spec.factor_scale * sample_rng.normal();
      Vector x = centers.row(c).transpose() + bases[static_cast<std::size_t>(c)] * u;
      for (Index j = 0; j < d; ++j) x(j) += spec.noise * sample_rng.normal();
      all.row(i) = x.transpose();
    }
  } else if (spec.generator == "binary-patterns") {
    Matrix protos(k, d);
    for (Index c = 0; c < k; ++c) {
      for (Index j = 0; j < d; ++j) protos(c, j) = proto_rng.uniform() < 0.5 ? 0.0 : 1.0;
    }
    for (Index i = 0; i < n; ++i) {
      const auto c = static_cast<Index>(sample_rng.index(static_cast<std::uint64_t>(k)));
      labels[static_cast<std::size_t>(i)] = static_cast<int>(c);
      for (Index j = 0; j < d; ++j) {
        double v = protos(c, j);
        if (sample_rng.uniform() < spec.flip) v = 1.0 - v;
        all(i, j) = v + spec.noise * sample_rng.normal();
      }
    }
  } else {
    throw std::invalid_argument("unknown dataset generator: " + spec.generator);
  }
  split_rows(all, labels, spec, out);
  return out;
}

Matrix select_label(const Matrix& m, const std::vector<int>& labels, int label) {
  if (static_cast<Index>(labels.size()) != m.rows()) {
    throw std::invalid_argument("select_label: label count differs from row count");
  }
  if (label < 0) return m;
  std::vector<Index> keep;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) keep.push_back(static_cast<Index>(i));
  }
  Matrix out(static_cast<Index>(keep.size()), m.cols());
  for (std::size_t i = 0; i < keep.size(); ++i) out.row(static_cast<Index>(i)) = m.row(keep[i]);
  return out;
}

Matrix load_idx(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("idx: cannot open " + path);
  const std::uint32_t magic = read_be32(is, path);
  if (magic != 0x00000803U) {
    std::ostringstream os;
    os << "idx: bad magic 0x" << std::hex << magic << " in " << path << " (expected 0x803)";
    throw std::runtime_error(os.str());
  }
  const std::uint32_t count = read_be32(is, path);
  const std::uint32_t rows = read_be32(is, path);
  const std::uint32_t cols = read_be32(is, path);
  const std::size_t dim = std::size_t{rows} * cols;
  if (count == 0 || dim == 0) throw std::runtime_error("idx: empty image set in " + path);
  const auto bytes = read_payload(is, std::size_t{count} * dim, path);
  Matrix out(count, static_cast<Index>(dim));
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t j = 0; j < dim; ++j) {
      out(static_cast<Index>(i), static_cast<Index>(j)) = bytes[i * dim + j] / 255.0;
    }
  }
  return out;
}

std::vector<int> load_idx_labels(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("idx: cannot open " + path);
  const std::uint32_t magic = read_be32(is, path);
  if (magic != 0x00000801U) throw std::runtime_error("idx: bad label magic in " + path);
  const std::uint32_t count = read_be32(is, path);
  const auto bytes = read_payload(is, count, path);
  return {bytes.begin(), bytes.end()};
}

Matrix load_csv_matrix(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("csv: cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        throw std::runtime_error("csv: non-numeric cell '" + cell + "' in " + path);
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw std::runtime_error("csv: ragged rows in " + path);
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("csv: no data in " + path);
  Matrix out(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      out(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
    }
  }
  return out;
}

GridLayout default_layout(Index dim, Index grid_cols) {
  const auto side = static_cast<Index>(std::lround(std::sqrt(static_cast<double>(dim))));
  if (side * side == dim) return {side, side, grid_cols};
  return {1, dim, grid_cols};
}

void write_pgm(const std::string& path, const Matrix& images, const GridLayout& layout) {
  if (layout.patch_rows * layout.patch_cols != images.cols()) {
    throw std::invalid_argument("write_pgm: patch shape does not match image width");
  }
  if (images.rows() == 0 || layout.grid_cols < 1) throw std::invalid_argument("write_pgm: no images");
  const Index grid_rows = (images.rows() + layout.grid_cols - 1) / layout.grid_cols;
  const Index width = layout.grid_cols * layout.patch_cols;
  const Index height = grid_rows * layout.patch_rows;
  std::vector<unsigned char> pixels(static_cast<std::size_t>(width * height), 0);
  for (Index i = 0; i < images.rows(); ++i) {
    const Index gy = i / layout.grid_cols;
    const Index gx = i % layout.grid_cols;
    for (Index r = 0; r < layout.patch_rows; ++r) {
      for (Index c = 0; c < layout.patch_cols; ++c) {
        double v = images(i, r * layout.patch_cols + c) * 255.0;
        v = std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 255.0);
        const Index y = gy * layout.patch_rows + r;
        const Index x = gx * layout.patch_cols + c;
        pixels[static_cast<std::size_t>(y * width + x)] = static_cast<unsigned char>(std::lround(v));
      }
    }
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_pgm: cannot open " + path);
  os << "P5\n" << width << " " << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!os) throw std::runtime_error("write_pgm: write failed for " + path);
}

}  // namespace fvnce::data
