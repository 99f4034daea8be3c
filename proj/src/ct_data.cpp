#include "uld/ct_data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "uld/error.hpp"
#include "uld/rng.hpp"

namespace uld {

void HUVolume::validate() const {
    if (nz < 1 || ny < 1 || nx < 1)
        throw DataError("volume extents must all be >= 1");
    if (!(spacing_x > 0.0 && spacing_y > 0.0 && spacing_z > 0.0))
        throw DataError("volume spacing components must be > 0");
    if (voxels.size() != static_cast<std::size_t>(nz) * ny * nx)
        throw DataError("volume voxel count does not match extents");
}

ImageF slice_of(const HUVolume& vol, int z) {
    if (z < 0 || z >= vol.nz) throw DataError("slice index out of range");
    ImageF img;
    img.h = vol.ny;
    img.w = vol.nx;
    img.px.resize(static_cast<std::size_t>(vol.ny) * vol.nx);
    const std::size_t off = static_cast<std::size_t>(z) * vol.ny * vol.nx;
    for (std::size_t i = 0; i < img.px.size(); ++i)
        img.px[i] = static_cast<double>(vol.voxels[off + i]);
    return img;
}

// ---------------------------------------------------------------------------
// windows

WindowSpec::WindowSpec(double level_, double width_, std::string name_)
    : level(level_), width(width_), name(std::move(name_)) {
    if (!(width > 0.0)) throw DataError("window `" + name + "`: width must be > 0");
}

WindowSpec WindowSpec::from_pair(double a, double b, WindowConvention conv, std::string name) {
    if (conv == WindowConvention::kLevelWidth) return WindowSpec(a, b, std::move(name));
    if (!(b > a)) throw DataError("window `" + name + "`: min/max pair needs max > min");
    return WindowSpec((a + b) / 2.0, b - a, std::move(name));
}

std::vector<WindowSpec> default_windows(WindowConvention conv) {
    std::vector<WindowSpec> w;
    w.push_back(WindowSpec::from_pair(400, 2000, conv, "bone"));
    w.push_back(WindowSpec::from_pair(-600, 1500, conv, "lung"));
    w.push_back(WindowSpec::from_pair(50, 350, conv, "mediastinum"));
    w.push_back(WindowSpec::from_pair(30, 150, conv, "abdomen"));
    w.push_back(WindowSpec::from_pair(50, 400, conv, "soft_tissue"));
    return w;
}

WindowSpec full_range_window(WindowConvention conv) {
    return WindowSpec::from_pair(1024, 4096, conv, "full");
}

std::vector<WindowSpec> windows_for_count(int count, WindowConvention conv) {
    const auto all = default_windows(conv);
    switch (count) {
        case 1:
            return {full_range_window(conv)};
        case 3:
            // one window per synthetic tissue family: bone, lung, soft tissue
            return {all[0], all[1], all[4]};
        case 5:
            return all;
        default:
            throw DataError("window count must be 1, 3 or 5, got " + std::to_string(count));
    }
}

// ---------------------------------------------------------------------------
// organs

namespace {
constexpr const char* kOrganCodes[kOrganCount] = {"BN",  "LNG", "MDT", "LVR",
                                                  "KDY", "ABM", "PLS", "ST"};
}

const char* organ_code(Organ o) { return kOrganCodes[static_cast<int>(o)]; }

Organ parse_organ(const std::string& code) {
    for (int i = 0; i < kOrganCount; ++i)
        if (code == kOrganCodes[i]) return static_cast<Organ>(i);
    throw DataError("unknown organ code: `" + code + "`");
}

// ---------------------------------------------------------------------------
// windowing

double hu_window_normalize(double v, const WindowSpec& w) {
    return std::clamp((v - w.lo()) / w.width, 0.0, 1.0);
}

ImageF hu_window_normalize(const ImageF& slice, const WindowSpec& w) {
    ImageF out;
    out.h = slice.h;
    out.w = slice.w;
    out.px.resize(slice.px.size());
    for (std::size_t i = 0; i < slice.px.size(); ++i)
        out.px[i] = hu_window_normalize(slice.px[i], w);
    return out;
}

MultiIntensityStack build_multi_intensity(const std::array<ImageF, 3>& slices,
                                          const std::vector<WindowSpec>& windows) {
    for (int c = 1; c < 3; ++c) {
        if (slices[static_cast<std::size_t>(c)].h != slices[0].h ||
            slices[static_cast<std::size_t>(c)].w != slices[0].w)
            throw ShapeError("build_multi_intensity: the 3 slices must share height/width");
    }
    const int h = slices[0].h, w = slices[0].w;
    MultiIntensityStack stack;
    stack.images.reserve(windows.size());
    for (const WindowSpec& win : windows) {
        std::vector<double> data(static_cast<std::size_t>(3) * h * w);
        for (int c = 0; c < 3; ++c) {
            const ImageF& s = slices[static_cast<std::size_t>(c)];
            double* dst = data.data() + static_cast<std::size_t>(c) * h * w;
            for (std::size_t i = 0; i < s.px.size(); ++i) dst[i] = hu_window_normalize(s.px[i], win);
        }
        stack.images.push_back(Tensor::from_data({3, h, w}, std::move(data)));
        stack.window_names.push_back(win.name);
    }
    return stack;
}

// ---------------------------------------------------------------------------
// resampling

HUVolume resample_to_spacing(const HUVolume& vol, double target_x, double target_y,
                             double target_z) {
    vol.validate();
    if (!(target_x > 0 && target_y > 0 && target_z > 0))
        throw DataError("resample target spacing must be > 0");
    if (vol.spacing_x == target_x && vol.spacing_y == target_y && vol.spacing_z == target_z)
        return vol;  // bitwise identity

    HUVolume out;
    out.nx = std::max(1, static_cast<int>(std::lround(vol.nx * vol.spacing_x / target_x)));
    out.ny = std::max(1, static_cast<int>(std::lround(vol.ny * vol.spacing_y / target_y)));
    out.nz = std::max(1, static_cast<int>(std::lround(vol.nz * vol.spacing_z / target_z)));
    out.spacing_x = target_x;
    out.spacing_y = target_y;
    out.spacing_z = target_z;
    out.voxels.resize(static_cast<std::size_t>(out.nz) * out.ny * out.nx);

    // physical voxel-center mapping: src = ((i + 0.5) * target) / spacing - 0.5
    auto axis_map = [](int n_out, double target, double spacing, int n_in, std::vector<int>& lo,
                       std::vector<int>& hi, std::vector<double>& frac) {
        lo.resize(static_cast<std::size_t>(n_out));
        hi.resize(static_cast<std::size_t>(n_out));
        frac.resize(static_cast<std::size_t>(n_out));
        for (int i = 0; i < n_out; ++i) {
            const double src = ((i + 0.5) * target) / spacing - 0.5;
            if (src <= 0.0) {
                lo[static_cast<std::size_t>(i)] = hi[static_cast<std::size_t>(i)] = 0;
                frac[static_cast<std::size_t>(i)] = 0.0;
            } else if (src >= n_in - 1) {
                lo[static_cast<std::size_t>(i)] = hi[static_cast<std::size_t>(i)] = n_in - 1;
                frac[static_cast<std::size_t>(i)] = 0.0;
            } else {
                const int l = static_cast<int>(src);
                lo[static_cast<std::size_t>(i)] = l;
                hi[static_cast<std::size_t>(i)] = l + 1;
                frac[static_cast<std::size_t>(i)] = src - l;
            }
        }
    };

    std::vector<int> xl, xh, yl, yh, zl, zh;
    std::vector<double> xf, yf, zf;
    axis_map(out.nx, target_x, vol.spacing_x, vol.nx, xl, xh, xf);
    axis_map(out.ny, target_y, vol.spacing_y, vol.ny, yl, yh, yf);
    axis_map(out.nz, target_z, vol.spacing_z, vol.nz, zl, zh, zf);

    std::size_t idx = 0;
    for (int z = 0; z < out.nz; ++z) {
        for (int y = 0; y < out.ny; ++y) {
            for (int x = 0; x < out.nx; ++x, ++idx) {
                const double fz = zf[static_cast<std::size_t>(z)];
                const double fy = yf[static_cast<std::size_t>(y)];
                const double fx = xf[static_cast<std::size_t>(x)];
                double acc = 0.0;
                for (int dz = 0; dz < 2; ++dz) {
                    const int sz = dz ? zh[static_cast<std::size_t>(z)] : zl[static_cast<std::size_t>(z)];
                    const double wz = dz ? fz : 1.0 - fz;
                    if (wz == 0.0) continue;
                    for (int dy = 0; dy < 2; ++dy) {
                        const int sy = dy ? yh[static_cast<std::size_t>(y)] : yl[static_cast<std::size_t>(y)];
                        const double wy = dy ? fy : 1.0 - fy;
                        if (wy == 0.0) continue;
                        for (int dx = 0; dx < 2; ++dx) {
                            const int sx = dx ? xh[static_cast<std::size_t>(x)] : xl[static_cast<std::size_t>(x)];
                            const double wx = dx ? fx : 1.0 - fx;
                            if (wx == 0.0) continue;
                            acc += wz * wy * wx * static_cast<double>(vol.at(sz, sy, sx));
                        }
                    }
                }
                const long r = std::lround(acc);
                out.voxels[idx] = static_cast<std::int16_t>(
                    std::clamp<long>(r, std::numeric_limits<std::int16_t>::min(),
                                     std::numeric_limits<std::int16_t>::max()));
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// border clipping

CropResult clip_black_borders(const ImageF& slice, double air_threshold) {
    const int h = slice.h, w = slice.w;
    auto row_black = [&](int y) {
        for (int x = 0; x < w; ++x)
            if (slice.at(y, x) > air_threshold) return false;
        return true;
    };
    auto col_black = [&](int x, int y0, int y1) {
        for (int y = y0; y <= y1; ++y)
            if (slice.at(y, x) > air_threshold) return false;
        return true;
    };

    int top = 0, bottom = h - 1;
    while (top < h && row_black(top)) ++top;
    if (top == h) {
        // fully black: keep the center pixel and flag it
        CropResult res;
        res.x0 = w / 2;
        res.y0 = h / 2;
        res.all_black = true;
        res.image = ImageF::filled(1, 1, slice.at(res.y0, res.x0));
        return res;
    }
    while (bottom > top && row_black(bottom)) --bottom;
    int left = 0, right = w - 1;
    while (left < w && col_black(left, top, bottom)) ++left;
    while (right > left && col_black(right, top, bottom)) --right;

    CropResult res;
    res.x0 = left;
    res.y0 = top;
    res.image.h = bottom - top + 1;
    res.image.w = right - left + 1;
    res.image.px.resize(static_cast<std::size_t>(res.image.h) * res.image.w);
    for (int y = 0; y < res.image.h; ++y)
        for (int x = 0; x < res.image.w; ++x) res.image.at(y, x) = slice.at(top + y, left + x);
    return res;
}

// ---------------------------------------------------------------------------
// augmentation

namespace {

ImageF hflip_image(const ImageF& img) {
    ImageF out = img;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) out.at(y, x) = img.at(y, img.w - 1 - x);
    return out;
}

ImageF vflip_image(const ImageF& img) {
    ImageF out = img;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) out.at(y, x) = img.at(img.h - 1 - y, x);
    return out;
}

// sample at continuous index coords with bilinear weights; outside -> fill
double sample_bilinear(const ImageF& img, double y, double x, double fill) {
    if (x < 0.0 || y < 0.0 || x > img.w - 1 || y > img.h - 1) return fill;
    const int x0 = static_cast<int>(x), y0 = static_cast<int>(y);
    const int x1 = std::min(x0 + 1, img.w - 1), y1 = std::min(y0 + 1, img.h - 1);
    const double fx = x - x0, fy = y - y0;
    return img.at(y0, x0) * (1 - fy) * (1 - fx) + img.at(y0, x1) * (1 - fy) * fx +
           img.at(y1, x0) * fy * (1 - fx) + img.at(y1, x1) * fy * fx;
}

}  // namespace

Sample augment(const Sample& sample, std::uint64_t seed, const AugmentConfig& cfg) {
    Rng rng(seed);
    Sample out = sample;
    const int h = sample.slices[0].h, w = sample.slices[0].w;

    const bool do_h = cfg.hflip && rng.bernoulli(0.5);
    const bool do_v = cfg.vflip && rng.bernoulli(0.5);
    const double s = cfg.resize ? rng.uniform(cfg.resize_lo, cfg.resize_hi) : 1.0;
    const double tx = cfg.translate ? rng.uniform(-cfg.translate_frac, cfg.translate_frac) * w : 0.0;
    const double ty = cfg.translate ? rng.uniform(-cfg.translate_frac, cfg.translate_frac) * h : 0.0;

    if (do_h) {
        for (auto& img : out.slices) img = hflip_image(img);
        for (auto& b : out.boxes) {
            const double nx1 = w - b.x2, nx2 = w - b.x1;
            b.x1 = nx1;
            b.x2 = nx2;
        }
    }
    if (do_v) {
        for (auto& img : out.slices) img = vflip_image(img);
        for (auto& b : out.boxes) {
            const double ny1 = h - b.y2, ny2 = h - b.y1;
            b.y1 = ny1;
            b.y2 = ny2;
        }
    }

    if (s != 1.0 || tx != 0.0 || ty != 0.0) {
        const double cx = w / 2.0, cy = h / 2.0;
        for (auto& img : out.slices) {
            ImageF res = ImageF::filled(h, w, cfg.fill_hu);
            for (int y = 0; y < h; ++y) {
                // inverse map of q = c + s*(p - c) + t, in edge coordinates
                const double py = cy + ((y + 0.5) - ty - cy) / s - 0.5;
                for (int x = 0; x < w; ++x) {
                    const double px = cx + ((x + 0.5) - tx - cx) / s - 0.5;
                    res.at(y, x) = sample_bilinear(img, py, px, cfg.fill_hu);
                }
            }
            img = std::move(res);
        }
        std::vector<BoxAnnotation> kept;
        for (auto b : out.boxes) {
            b.x1 = std::clamp(cx + s * (b.x1 - cx) + tx, 0.0, static_cast<double>(w));
            b.x2 = std::clamp(cx + s * (b.x2 - cx) + tx, 0.0, static_cast<double>(w));
            b.y1 = std::clamp(cy + s * (b.y1 - cy) + ty, 0.0, static_cast<double>(h));
            b.y2 = std::clamp(cy + s * (b.y2 - cy) + ty, 0.0, static_cast<double>(h));
            if (b.area() >= 1.0) kept.push_back(b);
        }
        out.boxes = std::move(kept);
    } else {
        // flips keep boxes in bounds, but degenerate inputs are still culled
        std::erase_if(out.boxes, [](const BoxAnnotation& b) { return b.area() < 1.0; });
    }
    return out;
}

// ---------------------------------------------------------------------------
// volume container

void save_volume(const std::string& dir, const HUVolume& vol) {
    vol.validate();
    std::filesystem::create_directories(dir);
    nlohmann::json meta;
    meta["shape"] = {vol.nz, vol.ny, vol.nx};
    meta["spacing_mm"] = {vol.spacing_x, vol.spacing_y, vol.spacing_z};
    meta["dtype"] = "int16";
    meta["hu_offset"] = 0;
    std::ofstream mf(dir + "/meta.json");
    if (!mf) throw DataError("cannot write " + dir + "/meta.json");
    mf << meta.dump(2) << "\n";

    std::ofstream vf(dir + "/voxels.raw", std::ios::binary);
    if (!vf) throw DataError("cannot write " + dir + "/voxels.raw");
    static_assert(std::endian::native == std::endian::little);
    vf.write(reinterpret_cast<const char*>(vol.voxels.data()),
             static_cast<std::streamsize>(vol.voxels.size() * sizeof(std::int16_t)));
    if (!vf) throw DataError("short write: " + dir + "/voxels.raw");
}

HUVolume load_volume(const std::string& dir) {
    std::ifstream mf(dir + "/meta.json");
    if (!mf) throw DataError("cannot open " + dir + "/meta.json");
    nlohmann::json meta;
    try {
        mf >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(dir + "/meta.json: " + e.what());
    }
    if (meta.value("dtype", "") != "int16")
        throw DataError(dir + ": unsupported voxel dtype");

    HUVolume vol;
    const auto shape = meta.at("shape");
    const auto spacing = meta.at("spacing_mm");
    if (shape.size() != 3 || spacing.size() != 3)
        throw DataError(dir + ": shape and spacing_mm must have 3 entries");
    vol.nz = shape[0].get<int>();
    vol.ny = shape[1].get<int>();
    vol.nx = shape[2].get<int>();
    vol.spacing_x = spacing[0].get<double>();
    vol.spacing_y = spacing[1].get<double>();
    vol.spacing_z = spacing[2].get<double>();

    std::ifstream vf(dir + "/voxels.raw", std::ios::binary);
    if (!vf) throw DataError("cannot open " + dir + "/voxels.raw");
    const std::size_t n = static_cast<std::size_t>(vol.nz) * vol.ny * vol.nx;
    vol.voxels.resize(n);
    vf.read(reinterpret_cast<char*>(vol.voxels.data()),
            static_cast<std::streamsize>(n * sizeof(std::int16_t)));
    if (static_cast<std::size_t>(vf.gcount()) != n * sizeof(std::int16_t))
        throw DataError(dir + "/voxels.raw: truncated voxel payload");
    vol.validate();
    return vol;
}

// ---------------------------------------------------------------------------
// annotation table

void save_annotations(const std::string& path, const std::vector<BoxAnnotation>& boxes) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << "image_id,x1,y1,x2,y2,organ,size_mm\n";
    out.precision(10);
    for (const auto& b : boxes) {
        out << b.image_id << ',' << b.x1 << ',' << b.y1 << ',' << b.x2 << ',' << b.y2 << ','
            << organ_code(b.organ) << ',' << b.size_mm << "\n";
    }
}

std::vector<BoxAnnotation> load_annotations(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError(path + ": empty annotation table");
    if (line.ends_with("\r")) line.pop_back();
    if (line != "image_id,x1,y1,x2,y2,organ,size_mm")
        throw DataError(path + ": unexpected header `" + line + "`");

    std::vector<BoxAnnotation> boxes;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.ends_with("\r")) line.pop_back();
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() != 7)
            throw DataError(path + ":" + std::to_string(lineno) + ": expected 7 fields");
        BoxAnnotation b;
        b.image_id = fields[0];
        try {
            b.x1 = std::stod(fields[1]);
            b.y1 = std::stod(fields[2]);
            b.x2 = std::stod(fields[3]);
            b.y2 = std::stod(fields[4]);
            b.size_mm = std::stod(fields[6]);
        } catch (const std::exception&) {
            throw DataError(path + ":" + std::to_string(lineno) + ": bad numeric field");
        }
        b.organ = parse_organ(fields[5]);
        if (!(b.x1 < b.x2 && b.y1 < b.y2))
            throw DataError(path + ":" + std::to_string(lineno) + ": box must have x1<x2, y1<y2");
        if (!(b.size_mm > 0))
            throw DataError(path + ":" + std::to_string(lineno) + ": size_mm must be > 0");
        boxes.push_back(std::move(b));
    }
    return boxes;
}

}  // namespace uld
