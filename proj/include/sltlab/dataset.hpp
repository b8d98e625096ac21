#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace sltlab {

/// n paired samples (X_i, Y_i), stored row-major.
struct Dataset {
  std::size_t n = 0;
  std::size_t m_in = 0;
  std::size_t n_out = 0;
  std::uint64_t seed = 0;
  std::vector<double> xs;  // n * m_in
  std::vector<double> ys;  // n * n_out

  std::span<const double> x(std::size_t i) const { return {xs.data() + i * m_in, m_in}; }
  std::span<const double> y(std::size_t i) const { return {ys.data() + i * n_out, n_out}; }

  bool operator==(const Dataset&) const = default;
};

}  // namespace sltlab
