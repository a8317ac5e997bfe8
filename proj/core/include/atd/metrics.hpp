#pragma once

#include "atd/tensor.hpp"

namespace atd {

// Scoring protocol: luminance-only conversion, border cropping by the
// upscaling factor, and the 0..255 data range used by SR benchmarks.
struct EvalProtocol {
  bool convert_to_y = true;
  int crop_border = 0;
  double data_range = 255.0;
};

// Images are [3 x H x W] or [1 x H x W] tensors with values in [0, 1].

// 10*log10(range^2 / MSE); identical images return the 100 dB cap.
double psnr(const Tensor& a, const Tensor& b, const EvalProtocol& proto);

// Mean local SSIM with an 11x11 Gaussian window (sigma 1.5), stabilizers
// C1=(0.01*range)^2 and C2=(0.03*range)^2, valid-region convolution.
// Requires min side >= 11 after border cropping.
double ssim(const Tensor& a, const Tensor& b, const EvalProtocol& proto);

// Separable bicubic resampling (a = -0.5) with edge clamping. Downscaling
// widens the kernel by the scale factor (antialiasing). Linear: no value
// clamping is applied.
Tensor bicubic_upscale(const Tensor& img, int scale);
Tensor bicubic_downscale(const Tensor& img, int scale);

// BT.601 luminance plane on the 0..255 range: 65.481R + 128.553G + 24.966B + 16,
// inputs in [0, 1]. 1-channel inputs are scaled by 255 instead.
std::vector<double> luminance_255(const Tensor& img);

}  // namespace atd
