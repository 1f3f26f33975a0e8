// SPDX-License-Identifier: Apache-2.0
#include "gansearch/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <stdexcept>

#include "gansearch/rng.hpp"

namespace gansearch {
namespace {

using Rgb = std::array<double, 3>;

struct Ellipse {
  double cx, cy, rx, ry, cos_t, sin_t;

  /// Normalized radius: < 1 inside.
  double radius(double px, double py) const {
    const double dx = px - cx, dy = py - cy;
    const double u = (dx * cos_t + dy * sin_t) / rx;
    const double v = (-dx * sin_t + dy * cos_t) / ry;
    return std::sqrt(u * u + v * v);
  }
};

Ellipse random_ellipse(std::mt19937_64& rng, double size) {
  std::uniform_real_distribution<double> centre(0.3 * size, 0.7 * size), radius(0.15 * size, 0.35 * size),
      angle(0.0, M_PI);
  Ellipse e{centre(rng), centre(rng), radius(rng), radius(rng), 0, 0};
  const double t = angle(rng);
  e.cos_t = std::cos(t);
  e.sin_t = std::sin(t);
  return e;
}

constexpr std::array<Rgb, 6> kFills = {{{0.85, 0.2, 0.2}, {0.2, 0.7, 0.25}, {0.2, 0.35, 0.85},
                                         {0.9, 0.75, 0.15}, {0.6, 0.25, 0.75}, {0.15, 0.7, 0.75}}};
constexpr std::array<Rgb, 4> kBackgrounds = {{{0.95, 0.92, 0.85}, {0.8, 0.88, 0.95}, {0.88, 0.95, 0.85},
                                              {0.3, 0.3, 0.35}}};

constexpr double kShadeDepth = 0.3;

const Rgb& pick(std::mt19937_64& rng, const auto& palette) {
  return palette[std::uniform_int_distribution<size_t>(0, palette.size() - 1)(rng)];
}

}  // namespace

TwoStyleDataset::TwoStyleDataset(int64_t image_size, uint64_t seed) : size_(image_size), seed_(seed) {
  if (image_size < 4) throw std::invalid_argument("dataset image size must be >= 4");
}

Tensor<float> TwoStyleDataset::image(Domain domain, uint64_t index) const {
  std::mt19937_64 rng(derive_seed(derive_seed(seed_, domain == Domain::x ? 0 : 1), index));
  const double s = double(size_);
  const Ellipse e = random_ellipse(rng, s);
  const Rgb& fill = pick(rng, kFills);
  const Rgb& bg = pick(rng, kBackgrounds);
  Tensor<float> img({3, size_, size_});
  auto put = [&](int64_t r, int64_t c, const Rgb& rgb) {
    for (int64_t ch = 0; ch < 3; ++ch) img[(ch * size_ + r) * size_ + c] = float(2.0 * rgb[size_t(ch)] - 1.0);
  };
  if (domain == Domain::x) {
    constexpr int kSub = 4;
    for (int64_t r = 0; r < size_; ++r) {
      for (int64_t c = 0; c < size_; ++c) {
        int inside = 0;
        for (int i = 0; i < kSub; ++i) {
          for (int j = 0; j < kSub; ++j) {
            inside += e.radius(c + (j + 0.5) / kSub, r + (i + 0.5) / kSub) < 1.0;
          }
        }
        const double cov = double(inside) / (kSub * kSub);
        const double shade = 1.0 - kShadeDepth * (r + 0.5) / s;
        Rgb px;
        for (size_t k = 0; k < 3; ++k) px[k] = cov * fill[k] + (1 - cov) * shade * bg[k];
        put(r, c, px);
      }
    }
  } else {
    const Rgb outline = {0.05, 0.05, 0.05};
    const double band = 1.0 / std::min(e.rx, e.ry);
    for (int64_t r = 0; r < size_; ++r) {
      for (int64_t c = 0; c < size_; ++c) {
        const double rad = e.radius(c + 0.5, r + 0.5);
        put(r, c, std::abs(rad - 1.0) < band ? outline : rad < 1.0 ? fill : bg);
      }
    }
  }
  return img;
}

Tensor<float> TwoStyleDataset::batch(Domain domain, uint64_t start, int64_t count) const {
  if (count < 1) throw std::invalid_argument("batch size must be >= 1");
  const int64_t per = 3 * size_ * size_;
  Tensor<float> out({count, 3, size_, size_});
  for (int64_t i = 0; i < count; ++i) {
    const Tensor<float> img = image(domain, start + uint64_t(i));
    std::copy(img.data().begin(), img.data().end(), out.ptr() + i * per);
  }
  return out;
}

}  // namespace gansearch
