#include "scenemaker/deocc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "json.hpp"

#include "scenemaker/errors.hpp"
#include "scenemaker/rng.hpp"

namespace scenemaker {

namespace {

constexpr int kMaxDraws = 100;
constexpr double kMaskFill = 0.5;

bool within(const MaskPattern& m, const CoverageBounds& b) {
  const double c = m.coverage();
  return c >= b.min && c <= b.max;
}

void check_shape(int height, int width) {
  if (height < 16 || width < 16) throw ConfigError("mask shape must be at least 16x16");
}

double bilinear(const ImageGrid& img, double sy, double sx, int c, int y0, int x0, int y1, int x1) {
  sy = std::clamp(sy, double(y0), double(y1 - 1));
  sx = std::clamp(sx, double(x0), double(x1 - 1));
  const int iy = std::min(static_cast<int>(std::floor(sy)), y1 - 1);
  const int ix = std::min(static_cast<int>(std::floor(sx)), x1 - 1);
  const int jy = std::min(iy + 1, y1 - 1), jx = std::min(ix + 1, x1 - 1);
  const double fy = sy - iy, fx = sx - ix;
  const double top = img.at(iy, ix, c) * (1 - fx) + img.at(iy, jx, c) * fx;
  const double bottom = img.at(jy, ix, c) * (1 - fx) + img.at(jy, jx, c) * fx;
  return top * (1 - fy) + bottom * fy;
}

// Resamples the whole image to out_h x out_w (pixel-centre aligned).
ImageGrid resample(const ImageGrid& img, int out_h, int out_w) {
  ImageGrid out = ImageGrid::filled(out_h, out_w, img.channels, 0.0);
  const double ry = double(img.height) / out_h, rx = double(img.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      const double sy = (y + 0.5) * ry - 0.5, sx = (x + 0.5) * rx - 0.5;
      for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = bilinear(img, sy, sx, c, 0, 0, img.height, img.width);
    }
  }
  return out;
}

void require_same_shape(const ImageGrid& a, const ImageGrid& b) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels) {
    throw ConfigError("image shapes differ: " + std::to_string(a.height) + "x" + std::to_string(a.width) + "x" +
                      std::to_string(a.channels) + " vs " + std::to_string(b.height) + "x" + std::to_string(b.width) +
                      "x" + std::to_string(b.channels));
  }
}

}  // namespace

ImageGrid ImageGrid::filled(int height, int width, int channels, double value) {
  ImageGrid g;
  g.height = height;
  g.width = width;
  g.channels = channels;
  g.data.assign(static_cast<std::size_t>(height) * width * channels, value);
  return g;
}

void ImageGrid::validate() const {
  if (height < 16 || width < 16) throw ConfigError("image must be at least 16x16");
  if (channels != 1 && channels != 3) throw ConfigError("image must have 1 or 3 channels");
  if (data.size() != static_cast<std::size_t>(height) * width * channels) throw ConfigError("image buffer size mismatch");
  for (double v : data) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("image value outside [0, 1]");
  }
}

const char* strategy_name(MaskStrategy s) {
  switch (s) {
    case MaskStrategy::Cutout: return "cutout";
    case MaskStrategy::Border: return "border";
    case MaskStrategy::Brush: return "brush";
  }
  return "?";
}

MaskStrategy strategy_from_name(const std::string& name) {
  for (MaskStrategy s : {MaskStrategy::Cutout, MaskStrategy::Border, MaskStrategy::Brush}) {
    if (name == strategy_name(s)) return s;
  }
  throw ConfigError("unknown mask strategy '" + name + "'");
}

MaskPattern MaskPattern::empty(int height, int width, MaskStrategy strategy) {
  MaskPattern m;
  m.height = height;
  m.width = width;
  m.data.assign(static_cast<std::size_t>(height) * width, 0);
  m.strategy = strategy;
  return m;
}

std::size_t MaskPattern::masked_count() const {
  return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
}

double MaskPattern::coverage() const {
  return data.empty() ? 0.0 : static_cast<double>(masked_count()) / static_cast<double>(data.size());
}

std::vector<Silhouette> default_silhouettes() {
  constexpr int n = 32;
  auto make = [&](auto inside) {
    Silhouette s{n, n, std::vector<std::uint8_t>(n * n, 0)};
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) s.inside[static_cast<std::size_t>(y) * n + x] = inside(y + 0.5, x + 0.5) ? 1 : 0;
    }
    return s;
  };
  const double c = n / 2.0;
  return {
      make([&](double y, double x) { return (y - c) * (y - c) + (x - c) * (x - c) <= (c - 1) * (c - 1); }),
      make([&](double y, double x) { return y >= 2 && y <= n - 2 && x >= 2 && x <= n - 2; }),
      make([&](double y, double x) { return y >= 2 && y <= n - 2 && std::abs(x - c) <= (y - 2) * 0.5; }),
      make([&](double y, double x) { return (x >= 2 && x <= 12 && y >= 2 && y <= n - 2) || (y >= n - 12 && y <= n - 2 && x >= 2 && x <= n - 2); }),
  };
}

void stamp_silhouette(MaskPattern& mask, const Silhouette& s, double cy, double cx, double extent, double angle) {
  const double side = std::max(s.height, s.width);
  const double scale = extent / side;
  const double reach = extent * 0.75;
  const double cs = std::cos(angle), sn = std::sin(angle);
  const int ylo = std::max(0, static_cast<int>(std::floor(cy - reach)));
  const int yhi = std::min(mask.height - 1, static_cast<int>(std::ceil(cy + reach)));
  const int xlo = std::max(0, static_cast<int>(std::floor(cx - reach)));
  const int xhi = std::min(mask.width - 1, static_cast<int>(std::ceil(cx + reach)));
  for (int y = ylo; y <= yhi; ++y) {
    for (int x = xlo; x <= xhi; ++x) {
      const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
      const double u = cs * dx + sn * dy, v = -sn * dx + cs * dy;
      const double sx = u / scale + s.width / 2.0, sy = v / scale + s.height / 2.0;
      if (sx < 0 || sy < 0 || sx >= s.width || sy >= s.height) continue;
      if (s.at(static_cast<int>(sy), static_cast<int>(sx))) mask.set(y, x);
    }
  }
}

MaskPattern cutout_mask(int height, int width, std::span<const Silhouette> silhouettes, std::uint64_t seed,
                        const CoverageBounds& bounds) {
  check_shape(height, width);
  if (silhouettes.empty()) throw ConfigError("cutout mask needs at least one silhouette");
  Rng rng(seed);
  const double dim = std::min(height, width);
  for (int draw = 1; draw <= kMaxDraws; ++draw) {
    MaskPattern m = MaskPattern::empty(height, width, MaskStrategy::Cutout);
    const int count = rng.integer(1, 3);
    for (int k = 0; k < count; ++k) {
      const Silhouette& s = silhouettes[rng.index(silhouettes.size())];
      const double extent = rng.uniform(0.15, 0.6) * dim;
      const double angle = rng.uniform(0.0, 2 * M_PI);
      const double cy = rng.uniform(0.0, height), cx = rng.uniform(0.0, width);
      stamp_silhouette(m, s, cy, cx, extent, angle);
    }
    if (within(m, bounds)) {
      m.seed = seed;
      m.params = {{"silhouettes", count}, {"draws", draw}};
      return m;
    }
  }
  throw MaskCoverageError("cutout mask: coverage outside [" + std::to_string(bounds.min) + ", " +
                          std::to_string(bounds.max) + "] after " + std::to_string(kMaxDraws) + " draws");
}

MaskPattern corner_crop(int height, int width, double width_fraction, double height_fraction, int corner) {
  check_shape(height, width);
  if (corner < 0 || corner > 3) throw ConfigError("corner must be 0..3");
  const int cw = std::clamp(static_cast<int>(std::lround(width_fraction * width)), 0, width);
  const int ch = std::clamp(static_cast<int>(std::lround(height_fraction * height)), 0, height);
  MaskPattern m = MaskPattern::empty(height, width, MaskStrategy::Border);
  const int y0 = corner >= 2 ? height - ch : 0;
  const int x0 = corner % 2 == 1 ? width - cw : 0;
  for (int y = y0; y < y0 + ch; ++y) {
    for (int x = x0; x < x0 + cw; ++x) m.set(y, x);
  }
  m.params = {{"width_fraction", width_fraction}, {"height_fraction", height_fraction}, {"corner", corner}};
  return m;
}

MaskPattern border_crop_mask(int height, int width, std::uint64_t seed, const CoverageBounds& bounds) {
  check_shape(height, width);
  Rng rng(seed);
  for (int draw = 1; draw <= kMaxDraws; ++draw) {
    MaskPattern m;
    if (rng.uniform() < 0.5) {
      m = corner_crop(height, width, rng.uniform(0.15, 0.8), rng.uniform(0.15, 0.8), rng.integer(0, 3));
      m.params["kind"] = 0;
    } else {
      // Full-length strip along one border: side 0..3 = top, bottom, left, right.
      const int side = rng.integer(0, 3);
      const double depth = rng.uniform(0.1, 0.6);
      const bool horizontal = side < 2;
      m = corner_crop(height, width, horizontal ? 1.0 : depth, horizontal ? depth : 1.0, side == 1 ? 2 : (side == 3 ? 1 : 0));
      m.params = {{"kind", 1}, {"side", side}, {"depth", depth}};
    }
    if (within(m, bounds)) {
      m.seed = seed;
      m.params["draws"] = draw;
      return m;
    }
  }
  throw MaskCoverageError("border mask: coverage bounds unattainable after " + std::to_string(kMaxDraws) + " draws");
}

void draw_stroke(MaskPattern& mask, std::span<const std::pair<double, double>> polyline, double stroke_width) {
  const double r = stroke_width / 2;
  const double r2 = r * r;
  auto paint_segment = [&](double ax, double ay, double bx, double by) {
    const int xlo = std::max(0, static_cast<int>(std::floor(std::min(ax, bx) - r)));
    const int xhi = std::min(mask.width - 1, static_cast<int>(std::ceil(std::max(ax, bx) + r)));
    const int ylo = std::max(0, static_cast<int>(std::floor(std::min(ay, by) - r)));
    const int yhi = std::min(mask.height - 1, static_cast<int>(std::ceil(std::max(ay, by) + r)));
    const double dx = bx - ax, dy = by - ay;
    const double len2 = dx * dx + dy * dy;
    for (int y = ylo; y <= yhi; ++y) {
      for (int x = xlo; x <= xhi; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        const double t = len2 > 0 ? std::clamp(((px - ax) * dx + (py - ay) * dy) / len2, 0.0, 1.0) : 0.0;
        const double ex = ax + t * dx - px, ey = ay + t * dy - py;
        if (ex * ex + ey * ey <= r2) mask.set(y, x);
      }
    }
  };
  if (polyline.size() == 1) paint_segment(polyline[0].first, polyline[0].second, polyline[0].first, polyline[0].second);
  for (std::size_t i = 1; i < polyline.size(); ++i) {
    paint_segment(polyline[i - 1].first, polyline[i - 1].second, polyline[i].first, polyline[i].second);
  }
}

MaskPattern brush_mask(int height, int width, std::uint64_t seed, const CoverageBounds& bounds) {
  check_shape(height, width);
  Rng rng(seed);
  const double dim = std::min(height, width);
  for (int draw = 1; draw <= kMaxDraws; ++draw) {
    MaskPattern m = MaskPattern::empty(height, width, MaskStrategy::Brush);
    const int strokes = rng.integer(1, 5);
    for (int s = 0; s < strokes; ++s) {
      const int vertices = rng.integer(2, 6);
      const double stroke_width = rng.uniform(std::max(3.0, 0.02 * dim), std::max(4.0, 0.1 * dim));
      std::vector<std::pair<double, double>> line;
      double x = rng.uniform(0.0, width), y = rng.uniform(0.0, height);
      line.emplace_back(x, y);
      for (int v = 1; v < vertices; ++v) {
        const double angle = rng.uniform(0.0, 2 * M_PI);
        const double step = rng.uniform(0.1, 0.4) * dim;
        x = std::clamp(x + step * std::cos(angle), 0.0, double(width));
        y = std::clamp(y + step * std::sin(angle), 0.0, double(height));
        line.emplace_back(x, y);
      }
      draw_stroke(m, line, stroke_width);
    }
    if (within(m, bounds)) {
      m.seed = seed;
      m.params = {{"strokes", strokes}, {"draws", draw}};
      return m;
    }
  }
  throw MaskCoverageError("brush mask: coverage bounds unattainable after " + std::to_string(kMaxDraws) + " draws");
}

ImageGrid resize_with_factor(const ImageGrid& image, const std::optional<Region>& region, double factor,
                             std::span<const double> background) {
  if (!(factor > 0 && factor <= 1)) throw ConfigError("resize factor must be in (0, 1]");
  if (!region) {
    const int h = std::max(1, static_cast<int>(std::lround(image.height * factor)));
    const int w = std::max(1, static_cast<int>(std::lround(image.width * factor)));
    if (h == image.height && w == image.width) return image;
    return resample(resample(image, h, w), image.height, image.width);
  }
  const Region& r = *region;
  if (r.y0 < 0 || r.x0 < 0 || r.y1 > image.height || r.x1 > image.width || r.y0 >= r.y1 || r.x0 >= r.x1) {
    throw ConfigError("resize region lies outside the image");
  }
  std::vector<double> bg(static_cast<std::size_t>(image.channels));
  for (int c = 0; c < image.channels; ++c) {
    bg[static_cast<std::size_t>(c)] = background.size() == bg.size() ? background[static_cast<std::size_t>(c)] : image.at(0, 0, c);
  }
  ImageGrid out = image;
  const double cy = 0.5 * (r.y0 + r.y1), cx = 0.5 * (r.x0 + r.x1);
  const double hh = 0.5 * (r.y1 - r.y0), hw = 0.5 * (r.x1 - r.x0);
  for (int y = r.y0; y < r.y1; ++y) {
    for (int x = r.x0; x < r.x1; ++x) {
      const double oy = (y + 0.5 - cy) / factor, ox = (x + 0.5 - cx) / factor;
      const bool inside = std::abs(oy) <= hh && std::abs(ox) <= hw;
      for (int c = 0; c < image.channels; ++c) {
        out.at(y, x, c) = inside ? bilinear(image, cy + oy - 0.5, cx + ox - 0.5, c, r.y0, r.x0, r.y1, r.x1)
                                 : bg[static_cast<std::size_t>(c)];
      }
    }
  }
  return out;
}

ImageGrid resize_augment(const ImageGrid& image, const Region& region, std::uint64_t seed,
                         std::span<const double> background, ResizeRecord* record) {
  Rng rng(seed);
  ResizeRecord rec;
  rec.factor = rng.uniform(0.25, 1.0);
  const int mode = rng.integer(0, 2);
  rec.object = mode != 1;
  rec.whole = mode != 0;
  ImageGrid out = image;
  if (rec.object) out = resize_with_factor(out, region, rec.factor, background);
  if (rec.whole) out = resize_with_factor(out, std::nullopt, rec.factor, background);
  if (record) *record = rec;
  return out;
}

double psnr(const ImageGrid& a, const ImageGrid& b) {
  require_same_shape(a, b);
  double sum = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(a.data.size());
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double ssim(const ImageGrid& a, const ImageGrid& b) {
  require_same_shape(a, b);
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  if (a.height < kWin || a.width < kWin) throw ConfigError("ssim needs images of at least 11x11");
  double w[kWin][kWin];
  double wsum = 0;
  for (int i = 0; i < kWin; ++i) {
    for (int j = 0; j < kWin; ++j) {
      const double di = i - kWin / 2, dj = j - kWin / 2;
      w[i][j] = std::exp(-(di * di + dj * dj) / (2 * kSigma * kSigma));
      wsum += w[i][j];
    }
  }
  for (auto& row : w) {
    for (double& v : row) v /= wsum;
  }
  double total = 0;
  std::size_t windows = 0;
  for (int c = 0; c < a.channels; ++c) {
    for (int y = 0; y + kWin <= a.height; ++y) {
      for (int x = 0; x + kWin <= a.width; ++x) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (int i = 0; i < kWin; ++i) {
          for (int j = 0; j < kWin; ++j) {
            const double va = a.at(y + i, x + j, c), vb = b.at(y + i, x + j, c);
            mx += w[i][j] * va;
            my += w[i][j] * vb;
            sxx += w[i][j] * va * va;
            syy += w[i][j] * vb * vb;
            sxy += w[i][j] * va * vb;
          }
        }
        const double vx = sxx - mx * mx, vy = syy - my * my, cov = sxy - mx * my;
        total += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++windows;
      }
    }
  }
  return total / static_cast<double>(windows);
}

SyntheticTarget synthesize_target(std::uint64_t seed, int size) {
  if (size < 16) throw ConfigError("target size must be at least 16");
  Rng rng(seed);
  SyntheticTarget t;
  t.background = {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
  std::vector<double> color(3);
  // Keep the object clearly distinct from the background in at least one
  // channel.
  for (int c = 0; c < 3; ++c) {
    const double b = t.background[static_cast<std::size_t>(c)];
    color[static_cast<std::size_t>(c)] = b > 0.5 ? rng.uniform(0.0, b - 0.35 > 0 ? b - 0.35 : 0.0)
                                                 : rng.uniform(std::min(1.0, b + 0.35), 1.0);
  }
  t.image = ImageGrid::filled(size, size, 3, 0.0);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      for (int c = 0; c < 3; ++c) t.image.at(y, x, c) = t.background[static_cast<std::size_t>(c)];
    }
  }
  static const char* kCategories[] = {"disc", "box", "wedge"};
  const int kind = rng.integer(0, 2);
  t.category = kCategories[kind];
  const double cy = rng.uniform(0.3, 0.7) * size, cx = rng.uniform(0.3, 0.7) * size;
  const double r = rng.uniform(0.15, 0.28) * size;
  // Flat shading: one lit tone for the upper half of the primitive and a
  // slightly darker one below.
  const double shade = 0.8;
  t.object = {size, size, 0, 0};
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
      bool in = false;
      if (kind == 0) in = dx * dx + dy * dy <= r * r;
      if (kind == 1) in = std::abs(dx) <= r && std::abs(dy) <= 0.7 * r;
      if (kind == 2) in = dy >= -r && dy <= r && std::abs(dx) <= (dy + r) * 0.5;
      if (!in) continue;
      for (int c = 0; c < 3; ++c) t.image.at(y, x, c) = color[static_cast<std::size_t>(c)] * (dy < 0 ? 1.0 : shade);
      t.object.y0 = std::min(t.object.y0, y);
      t.object.x0 = std::min(t.object.x0, x);
      t.object.y1 = std::max(t.object.y1, y + 1);
      t.object.x1 = std::max(t.object.x1, x + 1);
    }
  }
  return t;
}

MaskStrategy draw_strategy(Rng& rng, const StrategyMix& mix) {
  if (mix.cutout < 0 || mix.border < 0 || mix.brush < 0) throw ConfigError("strategy mix weights must be non-negative");
  const double total = mix.cutout + mix.border + mix.brush;
  if (!(total > 0)) throw ConfigError("strategy mix weights must not all be zero");
  const double u = rng.uniform() * total;
  if (u < mix.cutout) return MaskStrategy::Cutout;
  if (u < mix.cutout + mix.border) return MaskStrategy::Border;
  return MaskStrategy::Brush;
}

std::string render_prompt(const std::string& prompt_template, const std::string& category) {
  std::string out = prompt_template;
  const std::string key = "{category}";
  for (std::size_t at = out.find(key); at != std::string::npos; at = out.find(key, at + category.size())) {
    out.replace(at, key.size(), category);
  }
  return out;
}

ImageGrid apply_mask(const ImageGrid& target, const MaskPattern& mask) {
  if (mask.height != target.height || mask.width != target.width) throw ConfigError("mask and target shapes differ");
  ImageGrid out = target;
  for (int y = 0; y < target.height; ++y) {
    for (int x = 0; x < target.width; ++x) {
      if (!mask.at(y, x)) continue;
      for (int c = 0; c < target.channels; ++c) out.at(y, x, c) = kMaskFill;
    }
  }
  return out;
}

bool triplet_consistent(const DeoccTriplet& t) {
  const ImageGrid& a = t.masked;
  const ImageGrid& b = t.target;
  if (a.height != b.height || a.width != b.width || a.channels != b.channels) return false;
  if (t.mask.height != a.height || t.mask.width != a.width) return false;
  for (int y = 0; y < a.height; ++y) {
    for (int x = 0; x < a.width; ++x) {
      if (t.mask.at(y, x)) continue;
      for (int c = 0; c < a.channels; ++c) {
        if (a.at(y, x, c) != b.at(y, x, c)) return false;
      }
    }
  }
  return true;
}

std::vector<DeoccTriplet> assemble_triplets(std::span<const SyntheticTarget> targets, const TripletSettings& settings,
                                            std::uint64_t seed) {
  if (targets.empty()) throw ConfigError("triplet assembly needs at least one target");
  const std::vector<Silhouette> silhouettes = default_silhouettes();
  std::vector<DeoccTriplet> out(targets.size());
  std::vector<std::string> errors(targets.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < targets.size(); ++i) {
    try {
      const SyntheticTarget& src = targets[i];
      src.image.validate();
      DeoccTriplet t;
      t.index = static_cast<int>(i);
      t.seed = derive_seed(seed, "triplet/" + std::to_string(i));
      Rng pick(derive_seed(t.seed, "strategy"));
      t.strategy = draw_strategy(pick, settings.mix);
      t.target = settings.resize
                     ? resize_augment(src.image, src.object, derive_seed(t.seed, "resize"), src.background, &t.resize)
                     : src.image;
      const std::uint64_t mseed = derive_seed(t.seed, "mask");
      const int h = t.target.height, w = t.target.width;
      switch (t.strategy) {
        case MaskStrategy::Cutout: t.mask = cutout_mask(h, w, silhouettes, mseed, settings.bounds); break;
        case MaskStrategy::Border: t.mask = border_crop_mask(h, w, mseed, settings.bounds); break;
        case MaskStrategy::Brush: t.mask = brush_mask(h, w, mseed, settings.bounds); break;
      }
      t.masked = apply_mask(t.target, t.mask);
      t.prompt = render_prompt(settings.prompt_template, src.category);
      out[i] = std::move(t);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i].empty()) throw ConfigError("triplet " + std::to_string(i) + ": " + errors[i]);
  }
  return out;
}

ImageGrid mask_image(const MaskPattern& mask) {
  ImageGrid g = ImageGrid::filled(mask.height, mask.width, 1, 0.0);
  for (std::size_t i = 0; i < mask.data.size(); ++i) g.data[i] = mask.data[i] ? 1.0 : 0.0;
  return g;
}

void write_pnm(const std::filesystem::path& path, const ImageGrid& image) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError(FormatError::Kind::Io, "cannot open " + path.string() + " for writing");
  f << (image.channels == 1 ? "P5" : "P6") << "\n" << image.width << " " << image.height << "\n255\n";
  std::string bytes(image.data.size(), '\0');
  for (std::size_t i = 0; i < image.data.size(); ++i) {
    bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(image.data[i], 0.0, 1.0) * 255.0)));
  }
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError(FormatError::Kind::Io, "failed writing " + path.string());
}

ImageGrid read_pnm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError(FormatError::Kind::Io, "cannot open " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  f >> magic;
  if (magic != "P5" && magic != "P6") throw FormatError(FormatError::Kind::BadMagic, path.string() + " is not a binary PGM/PPM");
  if (!(f >> w >> h >> maxval) || w <= 0 || h <= 0 || maxval != 255) {
    throw FormatError(FormatError::Kind::Parse, path.string() + ": bad raster header");
  }
  f.get();
  const int channels = magic == "P5" ? 1 : 3;
  ImageGrid g = ImageGrid::filled(h, w, channels, 0.0);
  std::string bytes(g.data.size(), '\0');
  f.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (f.gcount() != static_cast<std::streamsize>(bytes.size())) throw FormatError(FormatError::Kind::Truncated, path.string());
  for (std::size_t i = 0; i < bytes.size(); ++i) g.data[i] = static_cast<unsigned char>(bytes[i]) / 255.0;
  return g;
}

void write_triplets(const std::filesystem::path& dir, std::span<const DeoccTriplet> triplets) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw FormatError(FormatError::Kind::Io, "cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["triplets"] = nlohmann::json::array();
  for (const DeoccTriplet& t : triplets) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "triplet_%06d", t.index);
    const std::string s = stem;
    write_pnm(dir / (s + "_masked.ppm"), t.masked);
    write_pnm(dir / (s + "_mask.pgm"), mask_image(t.mask));
    write_pnm(dir / (s + "_target.ppm"), t.target);
    nlohmann::json params = nlohmann::json::object();
    for (const auto& [k, v] : t.mask.params) params[k] = v;
    manifest["triplets"].push_back({{"index", t.index},
                                    {"masked", s + "_masked.ppm"},
                                    {"mask", s + "_mask.pgm"},
                                    {"target", s + "_target.ppm"},
                                    {"prompt", t.prompt},
                                    {"strategy", strategy_name(t.strategy)},
                                    {"seed", t.seed},
                                    {"coverage", t.mask.coverage()},
                                    {"mask_params", params},
                                    {"resize", {{"factor", t.resize.factor}, {"object", t.resize.object}, {"whole", t.resize.whole}}}});
  }
  std::ofstream f(dir / "manifest.json");
  if (!f) throw FormatError(FormatError::Kind::Io, "cannot write manifest in " + dir.string());
  f << manifest.dump(2) << "\n";
}

}  // namespace scenemaker
