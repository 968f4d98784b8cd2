#ifndef GRN_PLOT_HPP
#define GRN_PLOT_HPP

#include "grn/png_io.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace grn::plot {

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

struct ReferenceLine {
    double y = 0.0;
    std::string label;
};

struct LinePlot {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<Series> series;
    std::optional<ReferenceLine> reference;  ///< drawn dotted
    int width = 720;
    int height = 440;
};

/// Rasterises the plot with a built-in 5x7 bitmap font. Lower-case text
/// is drawn in capitals; unsupported characters become blanks.
io::RgbImage render(const LinePlot& plot);
void write_png(const LinePlot& plot, const std::filesystem::path& path);

/// Axis ticks at 1, 2 or 5 times a power of ten covering [lo, hi].
std::vector<double> nice_ticks(double lo, double hi, int target = 6);

}  // namespace grn::plot

#endif  // GRN_PLOT_HPP
