#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace sgflow {

// SplitMix64 finalizer. Used to derive independent stream seeds from a base
// seed and a stream index so that replicate r always sees the same numbers,
// independent of scheduling.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept {
  return splitmix64(splitmix64(base) ^ splitmix64(stream + 0x632BE59BD9B4E019ull));
}

/// Named sub-streams so that design, coefficients and noise never share draws.
enum class Stream : std::uint64_t {
  design = 1,
  coefficients = 2,
  response = 3,
  replicate = 4,
  eta = 5,
};

constexpr std::uint64_t derive_seed(std::uint64_t base, Stream stream,
                                    std::uint64_t index = 0) noexcept {
  return derive_seed(derive_seed(base, static_cast<std::uint64_t>(stream)), index);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }

  double uniform() { return uniform_(engine_); }

  /// Uniform index in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  void fill_normal(Eigen::Ref<Eigen::VectorXd> out) {
    for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = normal_(engine_);
  }

  Eigen::VectorXd normal_vector(Eigen::Index n) {
    Eigen::VectorXd z(n);
    fill_normal(z);
    return z;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace sgflow
