#include "histoscore/stain.hpp"

#include <algorithm>
#include <cmath>

namespace histoscore {

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;
using Vec3 = std::array<double, 3>;

double det3(const Mat3& a) {
    return a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) -
           a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
           a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
}

Mat3 inverse3(const Mat3& a) {
    double d = det3(a);
    if (std::abs(d) < 1e-12) throw std::invalid_argument("stain matrix is not invertible");
    Mat3 inv;
    inv[0][0] = (a[1][1] * a[2][2] - a[1][2] * a[2][1]) / d;
    inv[0][1] = (a[0][2] * a[2][1] - a[0][1] * a[2][2]) / d;
    inv[0][2] = (a[0][1] * a[1][2] - a[0][2] * a[1][1]) / d;
    inv[1][0] = (a[1][2] * a[2][0] - a[1][0] * a[2][2]) / d;
    inv[1][1] = (a[0][0] * a[2][2] - a[0][2] * a[2][0]) / d;
    inv[1][2] = (a[0][2] * a[1][0] - a[0][0] * a[1][2]) / d;
    inv[2][0] = (a[1][0] * a[2][1] - a[1][1] * a[2][0]) / d;
    inv[2][1] = (a[0][1] * a[2][0] - a[0][0] * a[2][1]) / d;
    inv[2][2] = (a[0][0] * a[1][1] - a[0][1] * a[1][0]) / d;
    return inv;
}

Mat3 transpose3(const Mat3& a) {
    Mat3 t;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) t[i][j] = a[j][i];
    return t;
}

double norm3(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

double frobenius(const Mat3& a) {
    double s = 0;
    for (auto& r : a)
        for (double v : r) s += v * v;
    return std::sqrt(s);
}

}  // namespace

StainMatrix StainMatrix::dab_h() {
    return StainMatrix{{{{0.268, 0.570, 0.776}, {0.650, 0.704, 0.286}, {0.0, 0.0, 0.0}}}};
}

double StainMatrix::condition_number() const {
    // Frobenius-norm bound; only reported, never branched on.
    return frobenius(rows) * frobenius(inverse3(rows));
}

StainMatrix complete_stain_matrix(const StainMatrix& m) {
    const Vec3& a = m.rows[0];
    const Vec3& b = m.rows[1];
    for (const Vec3& r : {a, b}) {
        double n = norm3(r);
        if (std::abs(n - 1.0) > 1e-3)
            throw std::invalid_argument("stain vector is not unit-norm");
    }
    Vec3 cross = {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
    double n = norm3(cross);
    if (n < 1e-6) throw std::invalid_argument("stain vectors are parallel; matrix is degenerate");
    StainMatrix out = m;
    out.rows[2] = {cross[0] / n, cross[1] / n, cross[2] / n};
    return out;
}

OdImage to_optical_density(const RgbImage& img, const std::array<double, 3>& i0) {
    for (double v : i0)
        if (!(v > 0)) throw std::invalid_argument("incident intensity must be positive");
    OdImage od(img.width, img.height);
    for (size_t i = 0; i < img.data.size(); ++i) {
        double v = std::clamp(static_cast<double>(img.data[i]), 1.0, i0[i % 3]);
        od.data[i] = static_cast<float>(-std::log(v / i0[i % 3]));
    }
    return od;
}

std::array<double, 3> solve3(const Mat3& a, const Vec3& b) {
    Mat3 inv = inverse3(a);
    Vec3 x{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) x[i] += inv[i][j] * b[j];
    return x;
}

StainChannels colour_deconvolve(const OdImage& od, const StainMatrix& m) {
    // od = sum_i c_i * row_i, i.e. (M^T) c = od; invert M^T once.
    Mat3 inv = inverse3(transpose3(m.rows));
    StainChannels out;
    out.img = Image<float, 3>(od.width, od.height);
    size_t negatives = 0;
    for (size_t p = 0; p < od.pixels(); ++p) {
        const float* src = od.data.data() + 3 * p;
        float* dst = out.img.data.data() + 3 * p;
        for (int i = 0; i < 3; ++i) {
            double c = inv[i][0] * src[0] + inv[i][1] * src[1] + inv[i][2] * src[2];
            if (c < 0) ++negatives;
            dst[i] = static_cast<float>(c);
        }
    }
    out.negative_fraction = static_cast<double>(negatives) / (od.pixels() * 3);
    return out;
}

LuminanceImage luminance(const RgbImage& img) {
    LuminanceImage lum(img.width, img.height);
    for (size_t p = 0; p < img.pixels(); ++p) {
        const uint8_t* px = img.data.data() + 3 * p;
        lum.data[p] = static_cast<float>(0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]);
    }
    return lum;
}

}  // namespace histoscore
