#include "eediff/dataset.hpp"

#include <cmath>
#include <numbers>

namespace eediff {

DatasetKind parse_dataset_kind(const std::string& name) {
  if (name == "gmm" || name == "gaussian-mixture") return DatasetKind::GaussianMixture;
  if (name == "swissroll" || name == "swiss-roll") return DatasetKind::SwissRoll;
  if (name == "checkerboard") return DatasetKind::Checkerboard;
  if (name == "tinyimage" || name == "tiny-image") return DatasetKind::TinyImage;
  throw ConfigError("unknown dataset kind '" + name +
                    "' (expected gmm|swissroll|checkerboard|tinyimage)");
}

std::string to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::GaussianMixture: return "gmm";
    case DatasetKind::SwissRoll: return "swissroll";
    case DatasetKind::Checkerboard: return "checkerboard";
    case DatasetKind::TinyImage: return "tinyimage";
  }
  return "gmm";
}

Matrix standard_normal(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

namespace {

void standardize(Matrix& data) {
  for (Index c = 0; c < data.cols(); ++c) {
    const double mean = data.col(c).mean();
    data.col(c).array() -= mean;
    const double sd = std::sqrt(data.col(c).squaredNorm() / static_cast<double>(data.rows()));
    if (sd > 0.0) data.col(c) /= sd;
  }
}

// Bright axis-aligned rectangle on a dark background, mild pixel noise.
void draw_tiny_image(Eigen::Ref<RowVector> row, int size, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pos(0, size - 2);
  std::normal_distribution<double> jitter(0.0, 0.05);
  const int x0 = pos(rng), y0 = pos(rng);
  std::uniform_int_distribution<int> wdist(2, size - x0);
  std::uniform_int_distribution<int> hdist(2, size - y0);
  const int w = wdist(rng), h = hdist(rng);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const bool inside = x >= x0 && x < x0 + w && y >= y0 && y < y0 + h;
      row(y * size + x) = (inside ? 1.0 : -1.0) + jitter(rng);
    }
  }
}

}  // namespace

Dataset make_toy_dataset(DatasetKind kind, Index n, std::uint64_t seed, int image_size) {
  if (n < 1) {
    throw RangeError("dataset size must be >= 1");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset ds;
  ds.kind = kind;
  ds.labels.assign(static_cast<std::size_t>(n), -1);
  switch (kind) {
    case DatasetKind::GaussianMixture: {
      constexpr double kRadius = 2.0;
      constexpr double kSpread = 0.15;
      std::uniform_int_distribution<int> mode(0, kMixtureModes - 1);
      ds.shape = {2};
      ds.data.resize(n, 2);
      for (Index i = 0; i < n; ++i) {
        const int k = mode(rng);
        const double angle = 2.0 * std::numbers::pi * k / kMixtureModes;
        ds.data(i, 0) = kRadius * std::cos(angle) + kSpread * normal(rng);
        ds.data(i, 1) = kRadius * std::sin(angle) + kSpread * normal(rng);
        ds.labels[static_cast<std::size_t>(i)] = k;
      }
      break;
    }
    case DatasetKind::SwissRoll: {
      ds.shape = {2};
      ds.data.resize(n, 2);
      for (Index i = 0; i < n; ++i) {
        const double t = 1.5 * std::numbers::pi * (1.0 + 2.0 * unif(rng));
        ds.data(i, 0) = t * std::cos(t) + 0.25 * normal(rng);
        ds.data(i, 1) = t * std::sin(t) + 0.25 * normal(rng);
      }
      break;
    }
    case DatasetKind::Checkerboard: {
      ds.shape = {2};
      ds.data.resize(n, 2);
      for (Index i = 0; i < n; ++i) {
        // 4 x 4 board on [-2, 2]^2; keep cells whose index parity is even.
        while (true) {
          const double x = 4.0 * unif(rng) - 2.0;
          const double y = 4.0 * unif(rng) - 2.0;
          const int cx = static_cast<int>(std::floor(x + 2.0));
          const int cy = static_cast<int>(std::floor(y + 2.0));
          if ((cx + cy) % 2 == 0) {
            ds.data(i, 0) = x;
            ds.data(i, 1) = y;
            break;
          }
        }
      }
      break;
    }
    case DatasetKind::TinyImage: {
      if (image_size < 2) {
        throw RangeError("tiny images need at least 2 x 2 pixels");
      }
      ds.shape = {image_size, image_size, 1};
      ds.data.resize(n, image_size * image_size);
      for (Index i = 0; i < n; ++i) {
        draw_tiny_image(ds.data.row(i), image_size, rng);
      }
      break;
    }
  }
  standardize(ds.data);
  return ds;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, Index head) {
  if (head < 1 || head >= ds.data.rows()) {
    throw RangeError("split point must leave both parts nonempty");
  }
  const Index tail = ds.data.rows() - head;
  Dataset a = ds, b = ds;
  a.data = ds.data.topRows(head);
  b.data = ds.data.bottomRows(tail);
  a.labels.assign(ds.labels.begin(), ds.labels.begin() + head);
  b.labels.assign(ds.labels.begin() + head, ds.labels.end());
  return {std::move(a), std::move(b)};
}

std::vector<int> sample_timesteps(Index batch, int steps, std::mt19937_64& rng) {
  if (steps < 1) {
    throw RangeError("sample_timesteps requires T >= 1");
  }
  std::uniform_int_distribution<int> dist(1, steps);
  std::vector<int> out(static_cast<std::size_t>(batch));
  for (auto& t : out) t = dist(rng);
  return out;
}

}  // namespace eediff
