#pragma once

#include "eediff/common.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace eediff {

enum class DatasetKind { GaussianMixture, SwissRoll, Checkerboard, TinyImage };

DatasetKind parse_dataset_kind(const std::string& name);
std::string to_string(DatasetKind kind);

struct Dataset {
  DatasetKind kind = DatasetKind::GaussianMixture;
  Matrix data;              // n x D, standardized per dimension
  std::vector<int> labels;  // mixture component (gmm) or -1
  std::vector<int> shape;   // {2} or {H, W, 1}
};

inline constexpr int kMixtureModes = 8;

// Deterministic in (kind, n, seed). Every dimension is shifted and scaled to
// zero mean and unit variance over the drawn set.
Dataset make_toy_dataset(DatasetKind kind, Index n, std::uint64_t seed, int image_size = 8);

// Rows [0, head) and [head, n) as two datasets sharing one standardization;
// used to carve a held-out reference set out of a single draw.
std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, Index head);

// i.i.d. uniform timesteps on [1, T].
std::vector<int> sample_timesteps(Index batch, int steps, std::mt19937_64& rng);

Matrix standard_normal(Index rows, Index cols, std::mt19937_64& rng);

}  // namespace eediff
