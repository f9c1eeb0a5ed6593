#pragma once

#include "spseg/tensor.hpp"

#include <Eigen/Core>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace spseg {

/// Row-major 0/1 mask, indexed (row, col).
using BinaryMask = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

inline Index mask_area(const BinaryMask& m) { return m.template cast<Index>().sum(); }

/// Row-major alternating run lengths, comma separated, starting with the
/// zero-run (which may be 0). An all-zero 2x2 mask is "4", all-one "0,4".
std::string rle_encode(const BinaryMask& mask);

/// Throws ParseError (with the character offset) on malformed input or when
/// the runs do not cover exactly height*width pixels.
BinaryMask rle_decode(std::string_view rle, Index height, Index width);

/// |a∩b| / |a∪b|, 0 when both are empty.
double mask_iou(const BinaryMask& a, const BinaryMask& b);

}  // namespace spseg
