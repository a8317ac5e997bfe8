#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "atd/tensor.hpp"

namespace atd {

// Interleaved 8-bit RGB image.
struct ImageU8 {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> rgb;  // height * width * 3
};

// PNG I/O; inputs are converted to 8-bit RGB (palette, gray, and alpha
// variants are expanded / stripped). Failures raise IoError.
ImageU8 load_png(const std::string& path);
void save_png(const std::string& path, const ImageU8& img);

// [3 x H x W] tensor in [0, 1] <-> 8-bit image. tensor_to_image clamps and
// rounds; the round trip through save/load is exact for 8-bit data.
Tensor image_to_tensor(const ImageU8& img);
ImageU8 tensor_to_image(const Tensor& t);

}  // namespace atd
