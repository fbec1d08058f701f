#pragma once

// Grayscale images, pyramids, FAST-9 detection and multi-level patches.
// Pixel (x, y) has its center at integer coordinates (x, y).

#include <vigcal/errors.hpp>
#include <vigcal/geom.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace vigcal {

class Image {
 public:
  Image() = default;
  Image(int width, int height, float fill = 0.0f)
      : width_(width), height_(height), data_(static_cast<size_t>(width) * height, fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }

  float& at(int x, int y) { return data_[static_cast<size_t>(y) * width_ + x]; }
  float at(int x, int y) const { return data_[static_cast<size_t>(y) * width_ + x]; }
  std::span<const float> pixels() const { return data_; }

  bool inside(double u, double v, double margin = 0.0) const {
    return u >= margin && v >= margin && u <= width_ - 1 - margin && v <= height_ - 1 - margin;
  }

  // Bilinear interpolation; exact on lattice points. Caller keeps (u, v) inside.
  float sample(double u, double v) const {
    const int x0 = std::clamp(static_cast<int>(std::floor(u)), 0, width_ - 1);
    const int y0 = std::clamp(static_cast<int>(std::floor(v)), 0, height_ - 1);
    const int x1 = std::min(x0 + 1, width_ - 1);
    const int y1 = std::min(y0 + 1, height_ - 1);
    const double ax = u - x0;
    const double ay = v - y0;
    const double top = (1.0 - ax) * at(x0, y0) + ax * at(x1, y0);
    const double bottom = (1.0 - ax) * at(x0, y1) + ax * at(x1, y1);
    return static_cast<float>((1.0 - ay) * top + ay * bottom);
  }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<float> data_;
};

// 2x2 box downsampling; level l coordinates u_l = (u + 0.5) / 2^l - 0.5.
inline Image half_sample(const Image& in) {
  Image out(in.width() / 2, in.height() / 2);
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      out.at(x, y) = 0.25f * (in.at(2 * x, 2 * y) + in.at(2 * x + 1, 2 * y) +
                              in.at(2 * x, 2 * y + 1) + in.at(2 * x + 1, 2 * y + 1));
    }
  }
  return out;
}

inline std::vector<Image> build_pyramid(const Image& img, int levels) {
  std::vector<Image> pyr;
  pyr.push_back(img);
  for (int l = 1; l < levels; ++l) pyr.push_back(half_sample(pyr.back()));
  return pyr;
}

inline double level_scale(int level) { return std::ldexp(1.0, -level); }

inline Vec2 to_level(const Vec2& uv, int level) {
  const double s = level_scale(level);
  return Vec2((uv.x() + 0.5) * s - 0.5, (uv.y() + 0.5) * s - 0.5);
}

// --- PGM (P5, 8-bit) -------------------------------------------------------

inline void write_pgm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << "P5\n" << img.width() << " " << img.height() << "\n255\n";
  std::vector<unsigned char> bytes(img.pixels().size());
  for (size_t i = 0; i < bytes.size(); ++i) {
    const float v = std::round(img.pixels()[i]);
    bytes[i] = static_cast<unsigned char>(std::clamp(v, 0.0f, 255.0f));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline Image read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  auto next_token = [&in]() {
    std::string tok;
    while (in >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return tok;
    }
    throw DataError("truncated PGM header");
  };
  if (next_token() != "P5") throw DataError(path + ": not a binary PGM (P5)");
  const int w = std::stoi(next_token());
  const int h = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  if (w <= 0 || h <= 0 || maxval != 255) throw DataError(path + ": unsupported PGM layout");
  in.get();
  std::vector<unsigned char> bytes(static_cast<size_t>(w) * h);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw DataError(path + ": truncated PGM data");
  Image img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img.at(x, y) = bytes[static_cast<size_t>(y) * w + x];
  return img;
}

// --- FAST-9/16 ---------------------------------------------------------------

struct Corner {
  int x = 0;
  int y = 0;
  double score = 0.0;
};

namespace detail {
inline constexpr std::array<std::array<int, 2>, 16> kFastCircle = {{
    {0, -3}, {1, -3}, {2, -2}, {3, -1}, {3, 0}, {3, 1}, {2, 2}, {1, 3},
    {0, 3}, {-1, 3}, {-2, 2}, {-3, 1}, {-3, 0}, {-3, -1}, {-2, -2}, {-1, -3}}};

// Score: sum of absolute excess over threshold on the circle, 0 if no arc of 9.
inline double fast_score(const Image& img, int x, int y, double threshold) {
  const double c = img.at(x, y);
  std::array<int, 16> state{};
  for (int i = 0; i < 16; ++i) {
    const double v = img.at(x + kFastCircle[i][0], y + kFastCircle[i][1]);
    state[i] = v > c + threshold ? 1 : (v < c - threshold ? -1 : 0);
  }
  bool corner = false;
  for (int sign : {1, -1}) {
    int run = 0;
    for (int i = 0; i < 32 && !corner; ++i) {
      run = state[i % 16] == sign ? run + 1 : 0;
      if (run >= 9) corner = true;
    }
  }
  if (!corner) return 0.0;
  double score = 0.0;
  for (int i = 0; i < 16; ++i) {
    const double v = img.at(x + kFastCircle[i][0], y + kFastCircle[i][1]);
    score += std::max(0.0, std::abs(v - c) - threshold);
  }
  return score;
}
}  // namespace detail

// FAST-9 corners with 3x3 non-maximum suppression.
inline std::vector<Corner> fast_corners(const Image& img, double threshold) {
  const int w = img.width();
  const int h = img.height();
  std::vector<double> score(static_cast<size_t>(w) * h, 0.0);
  for (int y = 3; y < h - 3; ++y)
    for (int x = 3; x < w - 3; ++x) score[static_cast<size_t>(y) * w + x] = detail::fast_score(img, x, y, threshold);
  std::vector<Corner> out;
  for (int y = 4; y < h - 4; ++y) {
    for (int x = 4; x < w - 4; ++x) {
      const double s = score[static_cast<size_t>(y) * w + x];
      if (s <= 0.0) continue;
      bool is_max = true;
      for (int dy = -1; dy <= 1 && is_max; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const double o = score[static_cast<size_t>(y + dy) * w + (x + dx)];
          // ties broken towards the earlier pixel in raster order
          if (o > s || (o == s && (dy < 0 || (dy == 0 && dx < 0)))) {
            is_max = false;
            break;
          }
        }
      if (is_max) out.push_back({x, y, s});
    }
  }
  return out;
}

struct DetectorConfig {
  double threshold = 10.0;
  double min_distance = 15.0;  // px, between detections and to masked points
  int border = 12;             // px kept free for patch extraction
};

// Parabolic refinement of the intensity extremum around an integer corner.
inline Vec2 refine_subpixel(const Image& img, int x, int y) {
  auto peak = [](double m, double c, double p) {
    const double denom = m - 2.0 * c + p;
    if (std::abs(denom) < 1e-9) return 0.0;
    return std::clamp(0.5 * (m - p) / denom, -0.5, 0.5);
  };
  const double dx = peak(img.at(x - 1, y), img.at(x, y), img.at(x + 1, y));
  const double dy = peak(img.at(x, y - 1), img.at(x, y), img.at(x, y + 1));
  return Vec2(x + dx, y + dy);
}

// Up to n corners, strongest first, at least min_distance from each other and
// from the masked points.
inline std::vector<Vec2> detect_features(const Image& img, int n, std::span<const Vec2> mask,
                                         const DetectorConfig& cfg = {}) {
  std::vector<Vec2> out;
  if (n <= 0) return out;
  std::vector<Corner> corners = fast_corners(img, cfg.threshold);
  std::stable_sort(corners.begin(), corners.end(),
                   [](const Corner& a, const Corner& b) { return a.score > b.score; });
  const double d2 = cfg.min_distance * cfg.min_distance;
  auto far_from = [d2](const Vec2& c, std::span<const Vec2> pts) {
    return std::all_of(pts.begin(), pts.end(), [&](const Vec2& q) { return (c - q).squaredNorm() >= d2; });
  };
  for (const Corner& c : corners) {
    if (c.x < cfg.border || c.y < cfg.border || c.x >= img.width() - cfg.border ||
        c.y >= img.height() - cfg.border)
      continue;
    const Vec2 uv = refine_subpixel(img, c.x, c.y);
    if (!far_from(uv, mask) || !far_from(uv, out)) continue;
    out.push_back(uv);
    if (static_cast<int>(out.size()) >= n) break;
  }
  return out;
}

// --- patches -----------------------------------------------------------------

struct PatchLevel {
  std::vector<float> intensity;
  std::vector<float> grad_u;
  std::vector<float> grad_v;
};

struct PatchSet {
  int size = 8;
  std::vector<PatchLevel> levels;

  int pixel_count() const { return size * size; }
  // Offset of patch pixel k from the patch center, in level pixels.
  Vec2 offset(int k) const {
    const double half = 0.5 * (size - 1);
    return Vec2(k % size - half, k / size - half);
  }
};

inline bool patch_fits(const Image& img, const Vec2& uv_level, int size) {
  const double reach = 0.5 * (size - 1) + 1.0;
  return img.inside(uv_level.x(), uv_level.y(), reach);
}

// Samples patches (plus one-pixel border for central-difference gradients)
// around uv (level-0 coordinates) on each pyramid level.
inline std::optional<PatchSet> extract_patch(std::span<const Image> pyramid, const Vec2& uv,
                                             int levels = 2, int size = 8) {
  PatchSet ps;
  ps.size = size;
  for (int l = 0; l < levels; ++l) {
    if (l >= static_cast<int>(pyramid.size())) return std::nullopt;
    const Image& img = pyramid[l];
    const Vec2 c = to_level(uv, l);
    if (!patch_fits(img, c, size)) return std::nullopt;
    PatchLevel pl;
    pl.intensity.resize(size * size);
    pl.grad_u.resize(size * size);
    pl.grad_v.resize(size * size);
    for (int k = 0; k < size * size; ++k) {
      const Vec2 q = c + ps.offset(k);
      pl.intensity[k] = img.sample(q.x(), q.y());
      pl.grad_u[k] = 0.5f * (img.sample(q.x() + 1.0, q.y()) - img.sample(q.x() - 1.0, q.y()));
      pl.grad_v[k] = 0.5f * (img.sample(q.x(), q.y() + 1.0) - img.sample(q.x(), q.y() - 1.0));
    }
    ps.levels.push_back(std::move(pl));
  }
  return ps;
}

struct IntensityResidual {
  Eigen::VectorXd residual;             // image minus patch
  Eigen::Matrix<double, Eigen::Dynamic, 2> gradient;  // d residual / d [u, v] (level-0 pixels)
};

// Residual of one patch level at level-0 position uv; nullopt when the
// footprint leaves the image.
inline std::optional<IntensityResidual> intensity_residual(const PatchSet& patch, const Image& level_img,
                                                           const Vec2& uv, int level) {
  if (level < 0 || level >= static_cast<int>(patch.levels.size())) return std::nullopt;
  const Vec2 c = to_level(uv, level);
  if (!patch_fits(level_img, c, patch.size)) return std::nullopt;
  const PatchLevel& pl = patch.levels[level];
  const int n = patch.pixel_count();
  const double s = level_scale(level);
  IntensityResidual out;
  out.residual.resize(n);
  out.gradient.resize(n, 2);
  for (int k = 0; k < n; ++k) {
    const Vec2 q = c + patch.offset(k);
    out.residual(k) = level_img.sample(q.x(), q.y()) - pl.intensity[k];
    out.gradient(k, 0) = s * pl.grad_u[k];
    out.gradient(k, 1) = s * pl.grad_v[k];
  }
  return out;
}

// Stacked residual over all patch levels.
inline std::optional<IntensityResidual> intensity_residual(const PatchSet& patch,
                                                           std::span<const Image> pyramid, const Vec2& uv) {
  IntensityResidual all;
  const int n = patch.pixel_count();
  const int levels = static_cast<int>(patch.levels.size());
  all.residual.resize(n * levels);
  all.gradient.resize(n * levels, 2);
  for (int l = 0; l < levels; ++l) {
    if (l >= static_cast<int>(pyramid.size())) return std::nullopt;
    auto r = intensity_residual(patch, pyramid[l], uv, l);
    if (!r) return std::nullopt;
    all.residual.segment(l * n, n) = r->residual;
    all.gradient.middleRows(l * n, n) = r->gradient;
  }
  return all;
}

// Coarse-to-fine Lucas-Kanade alignment of the patch, starting at uv0.
inline std::optional<Vec2> align_patch(const PatchSet& patch, std::span<const Image> pyramid,
                                       const Vec2& uv0, int iterations = 10) {
  Vec2 uv = uv0;
  for (int l = static_cast<int>(patch.levels.size()) - 1; l >= 0; --l) {
    if (l >= static_cast<int>(pyramid.size())) return std::nullopt;
    for (int it = 0; it < iterations; ++it) {
      auto r = intensity_residual(patch, pyramid[l], uv, l);
      if (!r) return std::nullopt;
      const Mat2 h = r->gradient.transpose() * r->gradient;
      if (h.determinant() < 1e-9) return std::nullopt;
      const Vec2 step = -h.ldlt().solve(r->gradient.transpose() * r->residual);
      uv += step;
      if (step.norm() < 1e-3 * std::ldexp(1.0, l)) break;
    }
  }
  return uv;
}

}  // namespace vigcal
