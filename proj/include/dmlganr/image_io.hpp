#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dmlganr/tensor.hpp"

namespace dmlganr {

/// `DMLI` dump: u32 version, u32 N, C, H, W, then f32 pixels (NCHW).
void write_image_dump(const Tensor& images, const std::filesystem::path& path);
Tensor read_image_dump(const std::filesystem::path& path);

struct PpmImage {
  Index width = 0;
  Index height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel
};

/// Binary `P6` export of one CHW image in [-1, 1]; 1-channel images are
/// replicated to gray.
void write_ppm(const Tensor& image, const std::filesystem::path& path);
PpmImage read_ppm(const std::filesystem::path& path);

}  // namespace dmlganr
