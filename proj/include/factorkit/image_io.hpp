#pragma once

#include <string>

#include "factorkit/tensor.hpp"

namespace factorkit::image_io {

// Writes a (C, H, W) image with values in [0,1] as an 8-bit RGB PNG
// (grayscale inputs are replicated across channels). Values are quantized
// with round(v * 255).
void write_png(const std::string& path, const Tensor<float>& image);

// Reads an RGB PNG back as (3, H, W) floats in [0,1] (v / 255).
Tensor<float> read_png(const std::string& path);

}  // namespace factorkit::image_io
