// Copyright 2026 The VTN Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtn/visualize.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "vtn/binary_io.hpp"
#include "vtn/runner.hpp"

namespace vtn {

std::array<std::uint8_t, 3> target_color(double row, double col, std::int64_t h, std::int64_t w) {
  const double u = h > 1 ? 2.0 * row / static_cast<double>(h - 1) - 1.0 : 0.0;
  const double v = w > 1 ? 2.0 * col / static_cast<double>(w - 1) - 1.0 : 0.0;
  double hue = std::atan2(u, v) / (2 * std::numbers::pi);
  if (hue < 0) hue += 1.0;
  const double sat = std::clamp(std::hypot(u, v) / std::numbers::sqrt2, 0.0, 1.0);
  // HSV with value 1.
  const double h6 = hue * 6.0;
  const int sector = static_cast<int>(h6) % 6;
  const double f = h6 - std::floor(h6);
  const double p = 1 - sat, q = 1 - sat * f, t = 1 - sat * (1 - f);
  double r = 1, g = 1, b = 1;
  switch (sector) {
    case 0: r = 1, g = t, b = p; break;
    case 1: r = q, g = 1, b = p; break;
    case 2: r = p, g = 1, b = t; break;
    case 3: r = p, g = q, b = 1; break;
    case 4: r = t, g = p, b = 1; break;
    default: r = 1, g = p, b = q; break;
  }
  auto byte = [](double x) { return static_cast<std::uint8_t>(std::lround(std::clamp(x, 0.0, 1.0) * 255.0)); };
  return {byte(r), byte(g), byte(b)};
}

std::string encode_ppm(std::int64_t h, std::int64_t w, std::span<const std::uint8_t> rgb) {
  if (static_cast<std::int64_t>(rgb.size()) != h * w * 3) throw DimensionError("encode_ppm: size mismatch");
  std::string s = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  s.append(reinterpret_cast<const char*>(rgb.data()), rgb.size());
  return s;
}

std::string encode_pgm(std::int64_t h, std::int64_t w, std::span<const std::uint8_t> gray) {
  if (static_cast<std::int64_t>(gray.size()) != h * w) throw DimensionError("encode_pgm: size mismatch");
  std::string s = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  s.append(reinterpret_cast<const char*>(gray.data()), gray.size());
  return s;
}

template <typename T>
std::string field_ppm(const WarpField<T>& field) {
  const std::int64_t h = field.height(), w = field.width();
  std::vector<std::uint8_t> rgb;
  rgb.reserve(static_cast<std::size_t>(h * w * 3));
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const auto c = target_color(static_cast<double>(y) + static_cast<double>(field.row(y, x)),
                                  static_cast<double>(x) + static_cast<double>(field.col(y, x)), h, w);
      rgb.insert(rgb.end(), c.begin(), c.end());
    }
  }
  return encode_ppm(h, w, rgb);
}

template <typename T>
std::string field_csv(const WarpField<T>& field) {
  std::string s = "row,col,offset_row,offset_col\n";
  char buf[96];
  for (std::int64_t y = 0; y < field.height(); ++y) {
    for (std::int64_t x = 0; x < field.width(); ++x) {
      std::snprintf(buf, sizeof(buf), "%lld,%lld,%.6f,%.6f\n", static_cast<long long>(y), static_cast<long long>(x),
                    static_cast<double>(field.row(y, x)), static_cast<double>(field.col(y, x)));
      s += buf;
    }
  }
  return s;
}

template std::string field_ppm(const WarpField<float>&);
template std::string field_ppm(const WarpField<double>&);
template std::string field_csv(const WarpField<float>&);
template std::string field_csv(const WarpField<double>&);

std::string map_pgm(std::int64_t h, std::int64_t w, std::span<const double> values) {
  if (static_cast<std::int64_t>(values.size()) != h * w) throw DimensionError("map_pgm: size mismatch");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  std::vector<std::uint8_t> gray(values.size(), 128);
  if (*hi > *lo) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      gray[i] = static_cast<std::uint8_t>(std::lround(255.0 * (values[i] - *lo) / (*hi - *lo)));
    }
  }
  return encode_pgm(h, w, gray);
}

Tensor<float> decode_pgm(std::string_view bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    for (;;) {
      while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw ParseError("pgm: truncated header", start);
    return std::string(bytes.substr(start, pos - start));
  };
  auto number = [&]() {
    const std::size_t at = pos;
    const std::string t = token();
    if (t.find_first_not_of("0123456789") != std::string::npos) throw ParseError("pgm: bad header field", at);
    return std::stoll(t);
  };
  if (token() != "P5") throw ParseError("pgm: expected binary P5 magic", 0);
  const std::int64_t w = number(), h = number(), maxval = number();
  if (w < 1 || h < 1 || maxval < 1 || maxval > 255) throw ParseError("pgm: unsupported geometry or depth", pos);
  ++pos;  // single whitespace before the raster
  if (bytes.size() < pos + static_cast<std::size_t>(w * h)) throw ParseError("pgm: truncated raster", bytes.size());
  Tensor<float> img(Shape{h, w, 1});
  for (std::int64_t i = 0; i < h * w; ++i) {
    img[i] = static_cast<float>(static_cast<unsigned char>(bytes[pos + i])) / static_cast<float>(maxval);
  }
  return img;
}

namespace {

template <typename T>
std::vector<std::filesystem::path> visualize_impl(const Checkpoint& ckpt, const Tensor<float>& image,
                                                  const std::filesystem::path& dir, const VisualizeOptions& opt) {
  Model<T> model = model_from_checkpoint<T>(ckpt);
  if (!model.has_warp()) throw ConfigError("visualize: the base variant has no warping module");
  const VtnConfig& cfg = *model.vtn_config();
  const Shape& is = image.shape();
  Tensor<T> batch = image.cast<T>().reshaped(Shape{1, is[0], is[1], is.size() > 2 ? is[2] : 1});
  Tape<T> tape;
  auto out = model.forward(tape, batch, false);
  const auto& warp = *out.warp;
  const Tensor<T>& field = warp.field.value();
  const Tensor<T>& warped = warp.warped.value();
  const std::int64_t h = warped.dim(1), w = warped.dim(2), k = warped.dim(3), c = cfg.groups, per = k / c;

  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  auto put = [&](const std::string& name, const std::string& bytes) {
    const auto p = dir / name;
    binary::write_file(p.string(), bytes);
    written.push_back(p);
  };

  auto pixels = opt.pixels;
  if (pixels.empty()) pixels.emplace_back(h / 2, w / 2);
  for (auto [py, px] : pixels) {
    if (py < 0 || py >= h || px < 0 || px >= w) {
      throw ConfigError("visualize: pixel (" + std::to_string(py) + "," + std::to_string(px) +
                        ") outside the " + std::to_string(h) + "x" + std::to_string(w) + " feature map");
    }
  }
  const auto fields = split_fields(field, 0);
  const std::int64_t win = cfg.window(), n = cfg.candidates();
  for (std::int64_t g = 0; g < c; ++g) {
    const std::string tag = std::to_string(g);
    put("field_" + tag + ".ppm", field_ppm(fields[g]));
    put("field_" + tag + ".csv", field_csv(fields[g]));
    std::vector<double> mean(static_cast<std::size_t>(h * w));
    for (std::int64_t p = 0; p < h * w; ++p) {
      double s = 0;
      for (std::int64_t j = 0; j < per; ++j) s += static_cast<double>(warped[p * k + g * per + j]);
      mean[p] = s / static_cast<double>(per);
    }
    put("warped_" + tag + ".pgm", map_pgm(h, w, mean));
    if (!cfg.probabilistic) continue;
    const Tensor<T>& probs = warp.probs.value();
    for (auto [py, px] : pixels) {
      std::vector<double> pm(static_cast<std::size_t>(n));
      double mx = 0;
      for (std::int64_t j = 0; j < n; ++j) {
        pm[j] = static_cast<double>(probs[((py * w + px) * n + j) * c + g]);
        mx = std::max(mx, pm[j]);
      }
      std::vector<std::uint8_t> gray(static_cast<std::size_t>(n));
      for (std::int64_t j = 0; j < n; ++j) {
        gray[j] = mx > 0 ? static_cast<std::uint8_t>(std::lround(255.0 * pm[j] / mx)) : 0;
      }
      put("prob_" + tag + "_" + std::to_string(py) + "_" + std::to_string(px) + ".pgm", encode_pgm(win, win, gray));
    }
  }
  return written;
}

}  // namespace

std::vector<std::filesystem::path> visualize_checkpoint(const Checkpoint& ckpt, const Tensor<float>& image,
                                                        const std::filesystem::path& dir,
                                                        const VisualizeOptions& opt) {
  const RunConfig cfg = RunConfig::from_json(ckpt.config);
  if (cfg.precision == Precision::kFloat64) return visualize_impl<double>(ckpt, image, dir, opt);
  return visualize_impl<float>(ckpt, image, dir, opt);
}

}  // namespace vtn
