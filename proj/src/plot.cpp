#include "grn/plot.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <stdexcept>

namespace grn::plot {

namespace {

using Glyph = std::array<std::uint8_t, 7>;
using Rgb = std::array<std::uint8_t, 3>;

// Row-major 5x7 bitmaps; bit 4 is the leftmost column.
const std::map<char, Glyph>& font() {
    static const std::map<char, Glyph> glyphs{
        {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}}, {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
        {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}}, {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
        {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}}, {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
        {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}}, {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
        {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}}, {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
        {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}}, {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
        {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}}, {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
        {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}}, {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
        {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}}, {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
        {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}}, {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
        {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}}, {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
        {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}}, {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
        {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
        {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}}, {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
        {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}}, {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
        {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
        {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}}, {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
        {'Y', {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}}, {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
        {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}}, {',', {0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08}},
        {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}}, {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}},
        {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}}, {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}},
        {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}}, {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
        {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}}, {'/', {0x00, 0x01, 0x02, 0x04, 0x08, 0x10, 0x00}},
        {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}},
    };
    return glyphs;
}

const std::vector<Rgb>& series_colours() {
    static const std::vector<Rgb> colours{{31, 119, 180}, {214, 39, 40},  {44, 160, 44},  {255, 127, 14},
                                          {148, 103, 189}, {140, 86, 75},  {227, 119, 194}, {23, 190, 207}};
    return colours;
}

class Canvas {
public:
    Canvas(int w, int h) : img_(h, w, 255) {}

    void set(int x, int y, Rgb c) {
        if (x < 0 || y < 0 || x >= img_.width || y >= img_.height) return;
        std::uint8_t* p = img_.at(y, x);
        std::copy(c.begin(), c.end(), p);
    }

    void dot(int x, int y, Rgb c, int r) {
        for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx) set(x + dx, y + dy, c);
    }

    // Bresenham; `dash` > 0 draws every other run of that many pixels.
    void line(int x0, int y0, int x1, int y1, Rgb c, int thickness = 0, int dash = 0) {
        const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
        const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
        int err = dx + dy;
        for (int step = 0;; ++step) {
            if (dash == 0 || (step / dash) % 2 == 0) dot(x0, y0, c, thickness);
            if (x0 == x1 && y0 == y1) break;
            const int e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                x0 += sx;
            }
            if (e2 <= dx) {
                err += dx;
                y0 += sy;
            }
        }
    }

    void text(int x, int y, const std::string& s, Rgb c, int scale = 1) {
        for (char ch : s) {
            const auto it = font().find(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
            if (it != font().end())
                for (int row = 0; row < 7; ++row)
                    for (int col = 0; col < 5; ++col)
                        if (it->second[row] & (0x10 >> col))
                            for (int a = 0; a < scale; ++a)
                                for (int b = 0; b < scale; ++b) set(x + col * scale + b, y + row * scale + a, c);
            x += 6 * scale;
        }
    }

    io::RgbImage take() { return std::move(img_); }

private:
    io::RgbImage img_;
};

int text_width(const std::string& s, int scale = 1) { return int(s.size()) * 6 * scale; }

std::string tick_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", std::abs(v) < 1e-12 ? 0.0 : v);
    return buf;
}

}  // namespace

std::vector<double> nice_ticks(double lo, double hi, int target) {
    if (!(hi > lo)) return {lo};
    const double raw = (hi - lo) / std::max(1, target);
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0})
        if (m * mag >= raw) {
            step = m * mag;
            break;
        }
    std::vector<double> out;
    for (double t = std::ceil(lo / step - 1e-9) * step; t <= hi + step * 1e-9; t += step) out.push_back(t);
    return out;
}

io::RgbImage render(const LinePlot& plot) {
    if (plot.width < 200 || plot.height < 150) throw std::invalid_argument("plot canvas too small");
    for (const Series& s : plot.series)
        if (s.x.size() != s.y.size()) throw std::invalid_argument("series " + s.name + ": x and y lengths differ");

    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
    for (const Series& s : plot.series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    if (plot.reference) {
        ymin = std::min(ymin, plot.reference->y);
        ymax = std::max(ymax, plot.reference->y);
    }
    if (!std::isfinite(xmin)) xmin = 0, xmax = 1;
    if (!std::isfinite(ymin)) ymin = 0, ymax = 1;
    if (xmax <= xmin) xmin -= 0.5, xmax += 0.5;
    if (ymax <= ymin) ymin -= 1.0, ymax += 1.0;
    const double pad = 0.05 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;

    Canvas cv(plot.width, plot.height);
    const int left = 64, right = plot.width - 170, top = 40, bottom = plot.height - 50;
    const Rgb black{0, 0, 0}, grey{200, 200, 200};
    auto px = [&](double x) { return left + int(std::lround((x - xmin) / (xmax - xmin) * (right - left))); };
    auto py = [&](double y) { return bottom - int(std::lround((y - ymin) / (ymax - ymin) * (bottom - top))); };

    for (double t : nice_ticks(ymin, ymax)) {
        const int y = py(t);
        cv.line(left, y, right, y, grey);
        const std::string label = tick_label(t);
        cv.text(left - 6 - text_width(label), y - 3, label, black);
    }
    for (double t : nice_ticks(xmin, xmax)) {
        const int x = px(t);
        cv.line(x, bottom, x, bottom + 4, black);
        const std::string label = tick_label(t);
        cv.text(x - text_width(label) / 2, bottom + 8, label, black);
    }
    cv.line(left, top, left, bottom, black);
    cv.line(left, bottom, right, bottom, black);

    cv.text((left + right - text_width(plot.title, 2)) / 2, 10, plot.title, black, 2);
    cv.text((left + right - text_width(plot.x_label)) / 2, bottom + 26, plot.x_label, black);
    cv.text(8, top - 14, plot.y_label, black);

    int legend_y = top;
    if (plot.reference) {
        const int y = py(plot.reference->y);
        cv.line(left, y, right, y, black, 0, 3);
        cv.line(right + 12, legend_y + 3, right + 32, legend_y + 3, black, 0, 3);
        cv.text(right + 38, legend_y, plot.reference->label, black);
        legend_y += 14;
    }
    for (std::size_t k = 0; k < plot.series.size(); ++k) {
        const Series& s = plot.series[k];
        const Rgb c = series_colours()[k % series_colours().size()];
        std::vector<std::size_t> order(s.x.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return s.x[a] < s.x[b]; });
        for (std::size_t i = 0; i + 1 < order.size(); ++i)
            cv.line(px(s.x[order[i]]), py(s.y[order[i]]), px(s.x[order[i + 1]]), py(s.y[order[i + 1]]), c, 1);
        for (std::size_t i : order) cv.dot(px(s.x[i]), py(s.y[i]), c, 3);
        cv.line(right + 12, legend_y + 3, right + 32, legend_y + 3, c, 1);
        cv.text(right + 38, legend_y, s.name, black);
        legend_y += 14;
    }
    return cv.take();
}

void write_png(const LinePlot& plot, const std::filesystem::path& path) { io::write_rgb_png(path, render(plot)); }

}  // namespace grn::plot
