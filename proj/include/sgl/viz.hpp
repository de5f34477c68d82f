#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "sgl/error.hpp"
#include "sgl/labels.hpp"
#include "sgl/metrics.hpp"
#include "sgl/tensor.hpp"

namespace sgl {

struct Bounds {
    double xmin = 0.0;
    double xmax = 0.0;
    double ymin = 0.0;
    double ymax = 0.0;
};

// Bounding box of 2D points, expanded by `pad` of the extent per side. A
// zero-extent axis is widened by 0.5 per side so the box stays rasterizable.
inline Bounds padded_bounds(const Tensor& points, double pad = 0.1) {
    if (points.rank() != 2 || points.dim(1) != 2 || points.dim(0) == 0)
        throw ValidationError("padded_bounds expects a non-empty [n, 2] tensor, got " +
                              shape_to_string(points.shape));
    Bounds b{points[0], points[0], points[1], points[1]};
    for (int i = 0; i < points.dim(0); ++i) {
        b.xmin = std::min(b.xmin, points[2 * i]);
        b.xmax = std::max(b.xmax, points[2 * i]);
        b.ymin = std::min(b.ymin, points[2 * i + 1]);
        b.ymax = std::max(b.ymax, points[2 * i + 1]);
    }
    const double dx = b.xmax - b.xmin, dy = b.ymax - b.ymin;
    const double px = dx > 0.0 ? pad * dx : 0.5;
    const double py = dy > 0.0 ? pad * dy : 0.5;
    return Bounds{b.xmin - px, b.xmax + px, b.ymin - py, b.ymax + py};
}

// Per-pixel label tuples over a 2D box. Row 0 is the top of the image (the
// ymax edge); pixel (i, j) holds the prediction at its cell center.
struct LabelRaster {
    int width = 0;
    int height = 0;
    Bounds bounds;
    std::vector<LabelTuple> cells; // row-major, height * width entries

    const LabelTuple& at(int row, int col) const {
        return cells[static_cast<std::size_t>(row) * static_cast<std::size_t>(width) +
                     static_cast<std::size_t>(col)];
    }
    double cell_x(int col) const {
        return bounds.xmin + (col + 0.5) * (bounds.xmax - bounds.xmin) / width;
    }
    double cell_y(int row) const {
        return bounds.ymax - (row + 0.5) * (bounds.ymax - bounds.ymin) / height;
    }
};

inline LabelRaster rasterize(const PredictFn& predict, const Bounds& bounds, int width = 200,
                             int height = 200) {
    if (width < 2 || height < 2)
        throw ValidationError("rasterize needs at least 2 cells per axis");
    if (!(bounds.xmax > bounds.xmin) || !(bounds.ymax > bounds.ymin))
        throw ValidationError("rasterize needs non-degenerate bounds");
    LabelRaster r;
    r.width = width;
    r.height = height;
    r.bounds = bounds;
    Tensor centers(Shape{width * height, 2});
    for (int i = 0; i < height; ++i)
        for (int j = 0; j < width; ++j) {
            centers[2 * (i * width + j)] = r.cell_x(j);
            centers[2 * (i * width + j) + 1] = r.cell_y(i);
        }
    r.cells = predict_chunked(predict, centers);
    return r;
}

using Rgb = std::array<unsigned char, 3>;

inline constexpr Rgb kOrange{255, 165, 0};
inline constexpr Rgb kWhite{255, 255, 255};
inline constexpr Rgb kBlue{0, 0, 255};

// Fixed class palette for factor panels; class c renders as entry c % 10.
inline constexpr std::array<Rgb, 10> kFactorPalette{{{230, 25, 75},
                                                     {60, 180, 75},
                                                     {255, 225, 25},
                                                     {0, 130, 200},
                                                     {245, 130, 48},
                                                     {145, 30, 180},
                                                     {70, 240, 240},
                                                     {240, 50, 230},
                                                     {170, 110, 40},
                                                     {128, 128, 128}}};

struct ColorRaster {
    int width = 0;
    int height = 0;
    std::vector<Rgb> pixels; // row-major, row 0 on top

    Rgb& at(int row, int col) {
        return pixels[static_cast<std::size_t>(row) * static_cast<std::size_t>(width) +
                      static_cast<std::size_t>(col)];
    }
    const Rgb& at(int row, int col) const {
        return pixels[static_cast<std::size_t>(row) * static_cast<std::size_t>(width) +
                      static_cast<std::size_t>(col)];
    }
};

inline void check_combo_arity(const LabelRaster& raster, const LabelTuple& combo) {
    if (raster.cells.empty()) throw ValidationError("raster has no cells");
    if (combo.size() != raster.cells.front().size())
        throw ValidationError("combo arity " + std::to_string(combo.size()) +
                              " does not match raster arity " +
                              std::to_string(raster.cells.front().size()));
}

// Match-count coloring: no output position equals the combo -> orange, all
// positions -> blue, anything in between -> white.
inline ColorRaster result_panel(const LabelRaster& raster, const LabelTuple& combo) {
    check_combo_arity(raster, combo);
    ColorRaster out;
    out.width = raster.width;
    out.height = raster.height;
    out.pixels.resize(raster.cells.size());
    for (std::size_t p = 0; p < raster.cells.size(); ++p) {
        int matches = 0;
        for (std::size_t k = 0; k < combo.size(); ++k)
            if (raster.cells[p][k] == combo[k]) ++matches;
        out.pixels[p] = matches == 0                                ? kOrange
                        : matches == static_cast<int>(combo.size()) ? kBlue
                                                                    : kWhite;
    }
    return out;
}

inline double blue_area_fraction(const LabelRaster& raster, const LabelTuple& combo) {
    check_combo_arity(raster, combo);
    std::size_t blue = 0;
    for (const LabelTuple& cell : raster.cells)
        if (cell == combo) ++blue;
    return static_cast<double>(blue) / static_cast<double>(raster.cells.size());
}

inline ColorRaster factor_panel(const LabelRaster& raster, int factor) {
    if (raster.cells.empty()) throw ValidationError("raster has no cells");
    if (factor < 0 || factor >= static_cast<int>(raster.cells.front().size()))
        throw ValidationError("factor index " + std::to_string(factor) + " out of range");
    ColorRaster out;
    out.width = raster.width;
    out.height = raster.height;
    out.pixels.resize(raster.cells.size());
    for (std::size_t p = 0; p < raster.cells.size(); ++p) {
        const int cls = raster.cells[p][static_cast<std::size_t>(factor)];
        out.pixels[p] = kFactorPalette[static_cast<std::size_t>(((cls % 10) + 10) % 10)];
    }
    return out;
}

// Stamps a filled disc at data coordinates (x, y); used to overlay training
// samples on panels. Off-raster points are clipped, not an error.
inline void stamp_dot(ColorRaster& img, const Bounds& bounds, double x, double y, Rgb color,
                      int radius = 2) {
    const int col = static_cast<int>(
        std::floor((x - bounds.xmin) / (bounds.xmax - bounds.xmin) * img.width));
    const int row = static_cast<int>(
        std::floor((bounds.ymax - y) / (bounds.ymax - bounds.ymin) * img.height));
    for (int di = -radius; di <= radius; ++di)
        for (int dj = -radius; dj <= radius; ++dj) {
            if (di * di + dj * dj > radius * radius) continue;
            const int r = row + di, c = col + dj;
            if (r < 0 || r >= img.height || c < 0 || c >= img.width) continue;
            img.at(r, c) = color;
        }
}

inline Rgb darken(Rgb c, double factor = 0.55) {
    return Rgb{static_cast<unsigned char>(c[0] * factor),
               static_cast<unsigned char>(c[1] * factor),
               static_cast<unsigned char>(c[2] * factor)};
}

inline void write_ppm(const ColorRaster& img, const std::string& path) {
    if (img.width <= 0 || img.height <= 0 ||
        img.pixels.size() !=
            static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height))
        throw ValidationError("color raster dimensions do not match pixel count");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open PPM file for writing: " + path);
    out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size() * 3));
    if (!out) throw IoError("failed writing PPM data to " + path);
}

struct PanelPaths {
    std::string out1;
    std::string out2;
    std::string result;
};

inline PanelPaths panel_paths(const std::string& run_dir, const std::string& case_name) {
    const std::string stem = run_dir.empty() ? case_name : run_dir + "/" + case_name;
    return PanelPaths{stem + "_out1.ppm", stem + "_out2.ppm", stem + "_result.ppm"};
}

} // namespace sgl
