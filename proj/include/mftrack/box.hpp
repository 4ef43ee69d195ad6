#ifndef MFTRACK_BOX_HPP
#define MFTRACK_BOX_HPP

#include <algorithm>
#include <cmath>

namespace mft {

// Axis-aligned box, corner form, pixel coordinates.
struct BBox {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    double w() const { return x2 - x1; }
    double h() const { return y2 - y1; }
    double cx() const { return 0.5 * (x1 + x2); }
    double cy() const { return 0.5 * (y1 + y2); }
    double area() const { return std::max(0.0, w()) * std::max(0.0, h()); }

    static BBox from_xywh(double x, double y, double w, double h) {
        return {x, y, x + w, y + h};
    }
};

inline double iou(const BBox& a, const BBox& b) {
    const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    const double inter = std::max(0.0, iw) * std::max(0.0, ih);
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

inline BBox clamp_box(const BBox& b, double width, double height) {
    BBox r;
    r.x1 = std::clamp(std::min(b.x1, b.x2), 0.0, width);
    r.x2 = std::clamp(std::max(b.x1, b.x2), 0.0, width);
    r.y1 = std::clamp(std::min(b.y1, b.y2), 0.0, height);
    r.y2 = std::clamp(std::max(b.y1, b.y2), 0.0, height);
    return r;
}

inline double center_distance(const BBox& a, const BBox& b) {
    const double dx = a.cx() - b.cx();
    const double dy = a.cy() - b.cy();
    return std::sqrt(dx * dx + dy * dy);
}

}  // namespace mft

#endif
