#include "lidarlabel/model.hpp"

#include <numeric>

namespace lidarlabel {

RleMask rle_encode(std::span<const std::uint8_t> bitmap, std::uint32_t width, std::uint32_t height) {
  if (bitmap.size() != static_cast<std::size_t>(width) * height) {
    throw std::invalid_argument("rle_encode: bitmap size does not match width*height");
  }
  RleMask mask{width, height, {}};
  bool current = false;
  std::uint32_t run = 0;
  for (const auto px : bitmap) {
    const bool on = px != 0;
    if (on != current) {
      mask.runs.push_back(run);
      run = 0;
      current = on;
    }
    ++run;
  }
  mask.runs.push_back(run);
  return mask;
}

std::vector<std::uint8_t> rle_decode(const RleMask& mask) {
  const std::size_t total = static_cast<std::size_t>(mask.width) * mask.height;
  const std::size_t sum =
      std::accumulate(mask.runs.begin(), mask.runs.end(), std::size_t{0});
  if (sum != total) {
    throw std::invalid_argument("rle_decode: run lengths sum to " + std::to_string(sum) +
                                ", expected " + std::to_string(total));
  }
  std::vector<std::uint8_t> bitmap;
  bitmap.reserve(total);
  std::uint8_t value = 0;
  for (const auto run : mask.runs) {
    bitmap.insert(bitmap.end(), run, value);
    value ^= 1U;
  }
  return bitmap;
}

}  // namespace lidarlabel
