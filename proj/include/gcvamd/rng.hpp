#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace gcvamd {

using Engine = std::mt19937_64;

/// Independent random streams derived from one root seed. Each subsystem
/// draws from its own stream id so editing one part of a run does not shift
/// the random numbers seen by another.
enum class Stream : std::uint64_t {
  kDataSampling = 1,
  kInit = 2,
  kReparameterization = 3,
  kSynthetic = 4,
  kDownstream = 5,
  kSynthTest = 6,
};

/// splitmix64 finalizer.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream,
                                 std::uint64_t counter = 0) {
  return mix64(mix64(root ^ mix64(stream)) + counter);
}

inline std::uint64_t derive_seed(std::uint64_t root, Stream stream, std::uint64_t counter = 0) {
  return derive_seed(root, static_cast<std::uint64_t>(stream), counter);
}

inline Eigen::MatrixXd standard_normal(Eigen::Index rows, Eigen::Index cols, Engine& engine) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = normal(engine);
  return out;
}

}  // namespace gcvamd
