#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "assd/tensor.hpp"

namespace assd {

// 8-bit RGB image, interleaved row-major.
struct ImageU8 {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;

    std::uint8_t& at(int y, int x, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    std::uint8_t at(int y, int x, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

// binary PPM (P6, maxval 255)
std::vector<std::uint8_t> encodePpm(const ImageU8& img);
ImageU8 decodePpm(const std::uint8_t* data, std::size_t len);
ImageU8 readPpm(const std::string& path);
void writePpm(const std::string& path, const ImageU8& img); // atomic: temp + rename

// [3,H,W] tensor in [0,1] <-> 8-bit image
Tensor imageToTensor(const ImageU8& img);
ImageU8 tensorToImage(const Tensor& t);

// Attention row over the scale grid, upsampled to the image size, min-max
// normalized, mapped through a fixed blue-to-red ramp and alpha-0.5 blended
// onto the source. A flat row renders as a uniform overlay.
ImageU8 renderAttentionOverlay(const ImageU8& src, const Tensor& rowGrid);

} // namespace assd
