#include "vpt/image.hpp"

namespace vpt {

Image::Image(int w_, int h_, std::array<float, 3> fill) : w(w_), h(h_) {
    if (w <= 0 || h <= 0) throw degenerate_image_error("Image: nonpositive size");
    for (int c = 0; c < 3; ++c) ch[c] = PlaneF::Constant(h, w, fill[c]);
}

void Image::set_pixel(int x, int y, std::array<float, 3> rgb) {
    for (int c = 0; c < 3; ++c) ch[c](y, x) = rgb[c];
}

std::array<float, 3> Image::pixel(int x, int y) const {
    return {ch[0](y, x), ch[1](y, x), ch[2](y, x)};
}

Image crop_image(const Image& x, const PixelBox& b) {
    if (x.empty()) throw degenerate_image_error("crop_image: empty source");
    if (b.empty()) throw degenerate_region_error("crop_image: degenerate box");
    if (b.x_min < 0 || b.y_min < 0 || b.x_max > x.w || b.y_max > x.h)
        throw out_of_range_error("crop_image: box outside image");
    Image out(b.x_max - b.x_min, b.y_max - b.y_min);
    for (int c = 0; c < 3; ++c)
        out.ch[c] = x.ch[c].block(b.y_min, b.x_min, out.h, out.w);
    return out;
}

Image resize_image(const Image& x, int target) {
    if (x.empty()) throw degenerate_image_error("resize_image: empty source");
    if (target <= 0) throw std::invalid_argument("resize_image: nonpositive target");
    if (x.w == target && x.h == target) return x;
    Image out(target, target);
    for (int y = 0; y < target; ++y) {
        const int sy = static_cast<int>(static_cast<long long>(y) * x.h / target);
        for (int xx = 0; xx < target; ++xx) {
            const int sx = static_cast<int>(static_cast<long long>(xx) * x.w / target);
            for (int c = 0; c < 3; ++c) out.ch[c](y, xx) = x.ch[c](sy, sx);
        }
    }
    return out;
}

double image_l1_distance(const Image& a, const Image& b) {
    if (a.w != b.w || a.h != b.h) throw std::invalid_argument("image_l1_distance: size mismatch");
    double d = 0;
    for (int c = 0; c < 3; ++c) d += (a.ch[c] - b.ch[c]).cwiseAbs().sum();
    return d;
}

bool image_equal(const Image& a, const Image& b) {
    if (a.w != b.w || a.h != b.h) return false;
    for (int c = 0; c < 3; ++c)
        if (a.ch[c] != b.ch[c]) return false;
    return true;
}

}  // namespace vpt
