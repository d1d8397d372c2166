#pragma once
// Binary Netpbm I/O: P5 (grayscale) and P6 (RGB), 8-bit only. Masks ride in
// P5 files with class ids as pixel values.

#include <cstdint>
#include <string>
#include <vector>

namespace gca {

struct PnmImage {
  int width = 0;
  int height = 0;
  int channels = 1;  // 1 for P5, 3 for P6
  std::vector<std::uint8_t> pixels;  // row-major, interleaved when channels == 3
};

PnmImage load_pnm(const std::string& path);
void save_pnm(const std::string& path, const PnmImage& img);

}  // namespace gca
