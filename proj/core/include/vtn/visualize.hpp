// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

// Image exports of warping fields, warped features and candidate
// probabilities. PPM (P6) for color, PGM (P5) for gray, CSV for raw fields.

#ifndef VTN_VISUALIZE_HPP_
#define VTN_VISUALIZE_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vtn/checkpoint.hpp"
#include "vtn/warp.hpp"

namespace vtn {

// Color of a target coordinate (row, col) on an h x w canvas: hue follows the
// direction from the canvas centre, saturation the distance from it.
std::array<std::uint8_t, 3> target_color(double row, double col, std::int64_t h, std::int64_t w);

std::string encode_ppm(std::int64_t h, std::int64_t w, std::span<const std::uint8_t> rgb);
std::string encode_pgm(std::int64_t h, std::int64_t w, std::span<const std::uint8_t> gray);

// Each pixel colored by target_color of the location it samples from; a zero
// field gives the identity colormap.
template <typename T>
std::string field_ppm(const WarpField<T>& field);

// Header "row,col,offset_row,offset_col", one line per pixel, 6 decimals.
template <typename T>
std::string field_csv(const WarpField<T>& field);

// Binary 8-bit PGM (P5) to an [H,W,1] image with values in [0, 1].
Tensor<float> decode_pgm(std::string_view bytes);

// Gray image of a [H,W] map, min-max scaled (a constant map is mid-gray).
std::string map_pgm(std::int64_t h, std::int64_t w, std::span<const double> values);

struct VisualizeOptions {
  std::vector<std::pair<std::int64_t, std::int64_t>> pixels;  // (row, col) in feature coordinates
};

// Runs the checkpointed model on one [H,W,1] image and writes, per group c:
// field_c.ppm, field_c.csv, warped_c.pgm (channel mean of the group's warped
// features) and, for a probabilistic model, prob_c_<row>_<col>.pgm for every
// selected pixel, scaled so the most likely candidate is white. Returns the
// written paths.
std::vector<std::filesystem::path> visualize_checkpoint(const Checkpoint& ckpt, const Tensor<float>& image,
                                                        const std::filesystem::path& dir,
                                                        const VisualizeOptions& opt = {});

}  // namespace vtn

#endif  // VTN_VISUALIZE_HPP_
