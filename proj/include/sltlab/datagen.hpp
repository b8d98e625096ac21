#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "sltlab/dataset.hpp"
#include "sltlab/model.hpp"

namespace sltlab {

/// X_i ~ q i.i.d., Y_i = r0(X_i) + eps_i with eps_i ~ N(0, sigma^2 I). Deterministic in (truth, n, seed).
Dataset generate(const TrueProcess& truth, std::size_t n, std::uint64_t seed);

/// Metadata stored next to a dataset CSV as "<csv>.json".
struct DatasetSidecar {
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::string model;
  double sigma = 0.0;
};

/// CSV columns x_1..x_M, y_1..y_N plus a JSON sidecar {n, seed, model, sigma}.
void save_dataset(const std::filesystem::path& csv, const Dataset& data, const std::string& model_id,
                  double sigma);
Dataset load_dataset(const std::filesystem::path& csv, DatasetSidecar* sidecar = nullptr);

std::filesystem::path sidecar_path(const std::filesystem::path& csv);

}  // namespace sltlab
