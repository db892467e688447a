#pragma once

// Occlusion-mask generation and evaluation for building de-occlusion
// training triplets (masked image, prompt, target). Targets are procedural
// flat-shaded primitives; no generative model is involved.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace scenemaker {

class Rng;

// H x W x C, values in [0, 1], interleaved channels.
struct ImageGrid {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;

  static ImageGrid filled(int height, int width, int channels, double value);
  double& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  double at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  // Throws ConfigError unless H, W >= 16, C in {1, 3} and values in [0, 1].
  void validate() const;
};

enum class MaskStrategy { Cutout, Border, Brush };
const char* strategy_name(MaskStrategy s);
MaskStrategy strategy_from_name(const std::string& name);

struct MaskPattern {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;  // 1 = masked
  MaskStrategy strategy = MaskStrategy::Cutout;
  std::map<std::string, double> params;
  std::uint64_t seed = 0;

  static MaskPattern empty(int height, int width, MaskStrategy strategy);
  bool at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int y, int x) { data[static_cast<std::size_t>(y) * width + x] = 1; }
  std::size_t masked_count() const;
  double coverage() const;
};

struct CoverageBounds {
  double min = 0.01;
  double max = 0.95;
};

// Binary occluder shape on its own small grid.
struct Silhouette {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> inside;

  bool at(int y, int x) const { return inside[static_cast<std::size_t>(y) * width + x] != 0; }
};

// Disc, square, triangle and ell occluders.
std::vector<Silhouette> default_silhouettes();

// Paints `s` scaled so its longer side spans `extent` pixels, rotated by
// `angle` radians, centred at (cy, cx).
void stamp_silhouette(MaskPattern& mask, const Silhouette& s, double cy, double cx, double extent, double angle);

// 1-3 transformed silhouettes. Throws MaskCoverageError when 100 draws miss
// the coverage bounds and ConfigError when `silhouettes` is empty.
MaskPattern cutout_mask(int height, int width, std::span<const Silhouette> silhouettes, std::uint64_t seed,
                        const CoverageBounds& bounds = {});

// Rectangle flush with a corner; corner 0..3 = top-left, top-right,
// bottom-left, bottom-right.
MaskPattern corner_crop(int height, int width, double width_fraction, double height_fraction, int corner);

// Right-angle crop flush with one border (strip) or two (corner).
MaskPattern border_crop_mask(int height, int width, std::uint64_t seed, const CoverageBounds& bounds = {});

// Marks pixels whose centre lies within width/2 of the polyline (x, y).
void draw_stroke(MaskPattern& mask, std::span<const std::pair<double, double>> polyline, double stroke_width);

// 1-5 random polyline strokes of random widths.
MaskPattern brush_mask(int height, int width, std::uint64_t seed, const CoverageBounds& bounds = {});

// Half-open pixel rectangle [y0, y1) x [x0, x1).
struct Region {
  int y0 = 0, x0 = 0, y1 = 0, x1 = 0;
};

// With a region: shrinks the region's content by `factor` about its centre
// and fills the freed area with `background`. Without: downsamples the whole
// image by `factor` and scales it back up. Bilinear in both cases. Throws
// ConfigError when the region leaves the image or factor is outside (0, 1].
ImageGrid resize_with_factor(const ImageGrid& image, const std::optional<Region>& region, double factor,
                             std::span<const double> background = {});

struct ResizeRecord {
  double factor = 1.0;
  bool object = false;
  bool whole = false;
};

// Samples factor in [0.25, 1] and whether to shrink the object, the whole
// image or both.
ImageGrid resize_augment(const ImageGrid& image, const Region& region, std::uint64_t seed,
                         std::span<const double> background = {}, ResizeRecord* record = nullptr);

// Peak 1.0; +infinity when the images are identical. Throws ConfigError on
// shape mismatch.
double psnr(const ImageGrid& a, const ImageGrid& b);
// Gaussian-window SSIM (11 wide, sigma 1.5, K1 0.01, K2 0.03) averaged over
// all valid windows and channels.
double ssim(const ImageGrid& a, const ImageGrid& b);

struct SyntheticTarget {
  ImageGrid image;
  Region object;
  std::vector<double> background;
  std::string category;
};

SyntheticTarget synthesize_target(std::uint64_t seed, int size = 64);

struct StrategyMix {
  double cutout = 1.0 / 3;
  double border = 1.0 / 3;
  double brush = 1.0 / 3;
};

MaskStrategy draw_strategy(Rng& rng, const StrategyMix& mix);

inline constexpr const char* kDefaultPromptTemplate =
    "a complete, unoccluded view of the {category} on a plain background";

// Replaces "{category}" in the template.
std::string render_prompt(const std::string& prompt_template, const std::string& category);

struct DeoccTriplet {
  int index = 0;
  ImageGrid masked;
  ImageGrid target;
  MaskPattern mask;
  std::string prompt;
  MaskStrategy strategy = MaskStrategy::Cutout;
  std::uint64_t seed = 0;
  ResizeRecord resize;
};

// Masked pixels are set to mid-grey; all others are copied from the target.
ImageGrid apply_mask(const ImageGrid& target, const MaskPattern& mask);

// Every masked-image pixel outside the mask equals the target bit for bit.
bool triplet_consistent(const DeoccTriplet& t);

struct TripletSettings {
  StrategyMix mix;
  std::string prompt_template = kDefaultPromptTemplate;
  CoverageBounds bounds;
  bool resize = true;
};

std::vector<DeoccTriplet> assemble_triplets(std::span<const SyntheticTarget> targets, const TripletSettings& settings,
                                            std::uint64_t seed);

// PPM/PGM rasters plus manifest.json. Throws FormatError(Io) when the
// directory cannot be written.
void write_triplets(const std::filesystem::path& dir, std::span<const DeoccTriplet> triplets);

// 8-bit portable raster (P5 for one channel, P6 for three).
void write_pnm(const std::filesystem::path& path, const ImageGrid& image);
ImageGrid read_pnm(const std::filesystem::path& path);
ImageGrid mask_image(const MaskPattern& mask);

}  // namespace scenemaker
