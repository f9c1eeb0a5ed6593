#pragma once

#include "spseg/graph.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace spseg {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint layout, all integers little-endian:
///   "SPSEG1"                      6-byte magic
///   u64 record count
///   per record: u32 name length, name bytes, u32 rank, rank x i64 extents,
///               numel x IEEE-754 binary32 values
using NamedTensor = std::pair<std::string, Tensor<float>>;

void write_tensor_file(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_tensor_file(const std::filesystem::path& path);

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const ParamSet<Scalar>& params);

/// Overwrites values of `params` from the file. Every parameter must be
/// present with a matching shape.
template <typename Scalar>
void load_checkpoint(const std::filesystem::path& path, ParamSet<Scalar>& params);

/// Momentum buffers plus the iteration counter, in the same file format.
template <typename Scalar>
void save_optimizer_state(const std::filesystem::path& path, const ParamSet<Scalar>& params, long iteration);
template <typename Scalar>
long load_optimizer_state(const std::filesystem::path& path, ParamSet<Scalar>& params);

}  // namespace spseg
