#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "disarm/neural.hpp"

namespace disarm {

// Binary layout, all integers and reals little-endian:
//
//   "DISARMCK"                          8-byte magic
//   u32 format version                  (kCheckpointVersion)
//   u64 training step
//   u32 entry count
//   per entry (shape table):
//     u32 name length, name bytes
//     u8  kind                          0 = network, 1 = vector
//     network: u32 layer count, then per layer
//              u64 rows, u64 cols, u8 activation, f64 slope
//     vector:  u64 length
//   payload: every parameter as f64, entries in order; a network stores
//            each layer's weight (column-major) followed by its bias
//   u32 CRC-32 of all preceding bytes
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointEntry {
  std::string name;
  std::variant<DenseNetwork, Eigen::VectorXd> value;
};

struct Checkpoint {
  std::uint64_t step = 0;
  std::vector<CheckpointEntry> entries;

  const DenseNetwork& network(const std::string& name) const;
  const Eigen::VectorXd& vector(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace disarm
