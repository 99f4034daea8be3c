#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "uld/tensor.hpp"

namespace uld {

// ---------------------------------------------------------------------------
// core CT types

// 3-D Hounsfield volume, voxels[z][y][x] row-major, int16 semantics
// (typically -1024..3071), with physical voxel spacing in millimetres.
struct HUVolume {
    int nz = 0, ny = 0, nx = 0;
    std::vector<std::int16_t> voxels;
    double spacing_x = 1.0, spacing_y = 1.0, spacing_z = 1.0;

    std::int16_t at(int z, int y, int x) const {
        return voxels[(static_cast<std::size_t>(z) * ny + y) * nx + x];
    }
    void validate() const;  // extents >= 1, spacing > 0, size consistent
};

// A single slice as doubles; used both for raw HU planes and for [0,1]
// window-normalized planes.
struct ImageF {
    int h = 0, w = 0;
    std::vector<double> px;

    double at(int y, int x) const { return px[static_cast<std::size_t>(y) * w + x]; }
    double& at(int y, int x) { return px[static_cast<std::size_t>(y) * w + x]; }
    static ImageF filled(int h, int w, double v) {
        return {h, w, std::vector<double>(static_cast<std::size_t>(h) * w, v)};
    }
};

ImageF slice_of(const HUVolume& vol, int z);

// HU display window. The paper's bracketed pairs are interpreted as
// (level, width) by default; a (min, max) reading is selectable because the
// source notation never names its convention.
enum class WindowConvention { kLevelWidth, kMinMax };

struct WindowSpec {
    double level;
    double width;
    std::string name;

    WindowSpec(double level, double width, std::string name);
    double lo() const { return level - width / 2.0; }
    double hi() const { return level + width / 2.0; }

    static WindowSpec from_pair(double a, double b, WindowConvention conv, std::string name);
};

// The five windows: bone, lung, mediastinum, abdomen (liver/kidney),
// soft-tissue.
std::vector<WindowSpec> default_windows(WindowConvention conv = WindowConvention::kLevelWidth);

// Single full-range window (level 1024, width 4096 == [-1024, 3072]), the
// one-window baseline.
WindowSpec full_range_window(WindowConvention conv = WindowConvention::kLevelWidth);

// Window sets for the 1/3/5-window configurations.
std::vector<WindowSpec> windows_for_count(int count,
                                          WindowConvention conv = WindowConvention::kLevelWidth);

// One [3,H,W] tensor in [0,1] per window; channel c is the windowed c-th
// input slice (inferior, key, superior).
struct MultiIntensityStack {
    std::vector<Tensor> images;
    std::vector<std::string> window_names;
};

// ---------------------------------------------------------------------------
// annotations

enum class Organ { BN, LNG, MDT, LVR, KDY, ABM, PLS, ST };

const char* organ_code(Organ o);
Organ parse_organ(const std::string& code);  // DataError on unknown codes
constexpr int kOrganCount = 8;

struct BoxAnnotation {
    std::string image_id;
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;  // pixels, after resampling
    Organ organ = Organ::ST;
    double size_mm = 0;  // longest lesion diameter

    double area() const { return (x2 - x1) * (y2 - y1); }
};

// ---------------------------------------------------------------------------
// preprocessing operations

// clamp((v - lo) / width, 0, 1); monotone in v.
ImageF hu_window_normalize(const ImageF& slice, const WindowSpec& w);
double hu_window_normalize(double v, const WindowSpec& w);

MultiIntensityStack build_multi_intensity(const std::array<ImageF, 3>& slices,
                                          const std::vector<WindowSpec>& windows);

// Trilinear resample onto the target spacing; new extent per axis is
// round(extent * spacing / target). Identical spacing returns the volume
// bit-for-bit.
HUVolume resample_to_spacing(const HUVolume& vol, double target_x = 0.8, double target_y = 0.8,
                             double target_z = 2.0);

struct CropResult {
    ImageF image;
    int x0 = 0, y0 = 0;  // top-left of the crop in the original slice
    bool all_black = false;
};

// Removes maximal boundary rows/columns that are entirely air
// (<= threshold). A fully black slice degrades to a 1x1 crop with the
// warning flag set.
CropResult clip_black_borders(const ImageF& slice, double air_threshold = -1000.0);

// ---------------------------------------------------------------------------
// augmentation

struct AugmentConfig {
    bool hflip = true;
    bool vflip = true;
    bool resize = true;
    bool translate = true;
    double resize_lo = 0.8, resize_hi = 1.2;
    double translate_frac = 0.1;  // of the image side
    double fill_hu = -1024.0;
};

struct Sample {
    std::string image_id;
    std::array<ImageF, 3> slices;  // inferior, key, superior (HU values)
    std::vector<BoxAnnotation> boxes;
};

// Image and box transforms applied consistently; deterministic in the seed.
// Boxes are clipped to the canvas and dropped when their area falls below
// one pixel.
Sample augment(const Sample& sample, std::uint64_t seed, const AugmentConfig& cfg);

// ---------------------------------------------------------------------------
// file formats

// Volume container: <dir>/meta.json + <dir>/voxels.raw (little-endian int16).
void save_volume(const std::string& dir, const HUVolume& vol);
HUVolume load_volume(const std::string& dir);

// Annotation table: header `image_id,x1,y1,x2,y2,organ,size_mm`.
void save_annotations(const std::string& path, const std::vector<BoxAnnotation>& boxes);
std::vector<BoxAnnotation> load_annotations(const std::string& path);

}  // namespace uld
