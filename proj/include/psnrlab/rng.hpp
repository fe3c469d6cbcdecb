#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <string_view>

namespace psnrlab {

/// Named sub-stream of a master seed. Streams with different names are
/// statistically independent, so components (split, init, noise, sbm, ...)
/// stay reproducible in isolation.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string_view name) : eng_(mix(seed, name)) {}

  double normal() { return normal_(eng_); }
  double uniform() { return uniform_(eng_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t next_u64() { return eng_(); }

  // Fisher-Yates index shuffle.
  template <typename Vec>
  void shuffle(Vec& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = eng_() % i;
      std::swap(v[i - 1], v[j]);
    }
  }

  Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols,
                                double mean = 0.0, double stddev = 1.0) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = mean + stddev * normal();
    return m;
  }

  std::mt19937_64& engine() { return eng_; }

 private:
  static std::uint64_t mix(std::uint64_t seed, std::string_view name) {
    // FNV-1a over the name, folded with the seed via splitmix64.
    std::uint64_t h = 1469598103934665603ull;
    for (char c : name) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull + h;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::mt19937_64 eng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace psnrlab
