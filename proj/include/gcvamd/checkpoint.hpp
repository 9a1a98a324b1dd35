#pragma once

// Binary parameter container.
//
//   "GCVD" | u32 version | u32 record count
//   record: u32 name length | name | u8 dtype | u32 rank | u64 dims[rank] | payload
//   footer: u64 seed | u32 phase | u32 epoch | f64 alpha, rho, beta, gamma, h_prev
//
// Integers and payloads are little-endian; payloads are row-major.

#include <cstdint>
#include <string>
#include <vector>

#include "gcvamd/causal_graph.hpp"
#include "gcvamd/nn.hpp"

namespace gcvamd {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { kFloat64 = 1, kUInt8 = 2 };

struct ArrayRecord {
  std::string name;
  DType dtype = DType::kFloat64;
  std::vector<std::uint64_t> dims;
  std::vector<double> values;  // row-major; kUInt8 arrays hold integers 0..255

  std::uint64_t element_count() const;
  /// Rank-2 view as an Eigen matrix (rank 0/1 arrays become one column).
  nn::Matrix to_matrix() const;
  static ArrayRecord from_matrix(std::string name, const nn::Matrix& m, DType dtype = DType::kFloat64);
};

struct CheckpointFooter {
  std::uint64_t seed = 0;
  std::uint32_t phase = 0;
  std::uint32_t epoch = 0;
  AugLagState dual;
};

struct Checkpoint {
  std::vector<ArrayRecord> arrays;
  CheckpointFooter footer;

  const ArrayRecord* find(const std::string& name) const;
  /// Throws CheckpointFormatError when the array is missing.
  const ArrayRecord& require(const std::string& name) const;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& checkpoint);
/// Throws CheckpointFormatError on a bad magic, version, dtype, or truncation.
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Appends one record per parameter array.
void append_params(Checkpoint& checkpoint, const std::vector<nn::ParamView>& params);
/// Copies stored arrays into `params`. Every parameter must be present with a
/// matching shape, and every stored array must be either a parameter or listed
/// in `extra_names`; otherwise CheckpointFormatError.
void restore_params(const Checkpoint& checkpoint, const std::vector<nn::ParamView>& params,
                    const std::vector<std::string>& extra_names);

}  // namespace gcvamd
