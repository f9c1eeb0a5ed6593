#include "spseg/mask.hpp"

#include <charconv>

namespace spseg {

std::string rle_encode(const BinaryMask& mask) {
  std::string out;
  const std::uint8_t* p = mask.data();
  const Index n = mask.size();
  std::uint8_t current = 0;
  Index run = 0;
  auto flush = [&] {
    if (!out.empty()) out += ',';
    out += std::to_string(run);
  };
  for (Index i = 0; i < n; ++i) {
    const std::uint8_t v = p[i] ? 1 : 0;
    if (v != current) {
      flush();
      current = v;
      run = 0;
    }
    ++run;
  }
  flush();
  return out;
}

BinaryMask rle_decode(std::string_view rle, Index height, Index width) {
  if (height < 0 || width < 0) throw ShapeError("rle_decode: negative extent");
  BinaryMask mask = BinaryMask::Zero(height, width);
  const Index total = height * width;
  std::uint8_t* p = mask.data();
  Index pos = 0;
  std::uint8_t value = 0;
  std::size_t i = 0;
  if (rle.empty()) throw ParseError("rle_decode: empty string", 0);
  while (true) {
    long long run = 0;
    const char* first = rle.data() + i;
    const char* last = rle.data() + rle.size();
    auto [ptr, ec] = std::from_chars(first, last, run);
    if (ec != std::errc() || ptr == first) throw ParseError("rle_decode: expected a run length", i);
    if (run < 0) throw ParseError("rle_decode: negative run", i);
    if (pos + run > total) throw ParseError("rle_decode: runs exceed " + std::to_string(total) + " pixels", i);
    if (value) std::fill(p + pos, p + pos + run, std::uint8_t{1});
    pos += run;
    value ^= 1;
    i = static_cast<std::size_t>(ptr - rle.data());
    if (i == rle.size()) break;
    if (rle[i] != ',') throw ParseError("rle_decode: unexpected character", i);
    ++i;
  }
  if (pos != total)
    throw ParseError("rle_decode: runs cover " + std::to_string(pos) + " of " + std::to_string(total) + " pixels",
                     rle.size());
  return mask;
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("mask_iou: extent mismatch " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  Index inter = 0, uni = 0;
  const Index n = a.size();
  for (Index i = 0; i < n; ++i) {
    const bool x = a.data()[i], y = b.data()[i];
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace spseg
