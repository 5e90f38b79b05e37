#include "histoscore/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

#include "histoscore/png_io.hpp"

namespace histoscore::seg {

namespace {

constexpr int dx4[4] = {1, -1, 0, 0};
constexpr int dy4[4] = {0, 0, 1, -1};

std::vector<std::pair<int, int>> disc_offsets(int radius) {
    std::vector<std::pair<int, int>> offs;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
            if (dx * dx + dy * dy <= radius * radius) offs.emplace_back(dx, dy);
    return offs;
}

MaskImage erode(const MaskImage& m, const std::vector<std::pair<int, int>>& offs) {
    MaskImage out(m.width, m.height);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            uint8_t v = 1;
            for (auto [dx, dy] : offs) {
                int nx = x + dx, ny = y + dy;
                if (nx < 0 || ny < 0 || nx >= m.width || ny >= m.height || !*m.at(nx, ny)) {
                    v = 0;
                    break;
                }
            }
            *out.at(x, y) = v;
        }
    return out;
}

MaskImage dilate(const MaskImage& m, const std::vector<std::pair<int, int>>& offs) {
    MaskImage out(m.width, m.height);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            uint8_t v = 0;
            for (auto [dx, dy] : offs) {
                int nx = x + dx, ny = y + dy;
                if (nx >= 0 && ny >= 0 && nx < m.width && ny < m.height && *m.at(nx, ny)) {
                    v = 1;
                    break;
                }
            }
            *out.at(x, y) = v;
        }
    return out;
}

// 4-connected component labels; returns count.
int label_components(const MaskImage& mask, std::vector<int>& labels) {
    const int w = mask.width, h = mask.height;
    labels.assign(static_cast<size_t>(w) * h, 0);
    int next = 0;
    std::vector<int> stack;
    for (int i = 0; i < w * h; ++i) {
        if (!mask.data[i] || labels[i]) continue;
        labels[i] = ++next;
        stack.assign(1, i);
        while (!stack.empty()) {
            int p = stack.back();
            stack.pop_back();
            int px = p % w, py = p / w;
            for (int d = 0; d < 4; ++d) {
                int nx = px + dx4[d], ny = py + dy4[d];
                if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                int q = ny * w + nx;
                if (mask.data[q] && !labels[q]) {
                    labels[q] = next;
                    stack.push_back(q);
                }
            }
        }
    }
    return next;
}

// Grayscale reconstruction by erosion (marker >= mask pointwise); sweeps
// until stable, which is fast at core-image sizes.
void reconstruct_by_erosion(std::vector<double>& marker, const std::vector<double>& mask,
                            int w, int h) {
    bool changed = true;
    while (changed) {
        changed = false;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                size_t i = static_cast<size_t>(y) * w + x;
                double v = marker[i];
                if (x > 0) v = std::min(v, marker[i - 1]);
                if (y > 0) v = std::min(v, marker[i - w]);
                v = std::max(v, mask[i]);
                if (v < marker[i]) { marker[i] = v; changed = true; }
            }
        for (int y = h - 1; y >= 0; --y)
            for (int x = w - 1; x >= 0; --x) {
                size_t i = static_cast<size_t>(y) * w + x;
                double v = marker[i];
                if (x + 1 < w) v = std::min(v, marker[i + 1]);
                if (y + 1 < h) v = std::min(v, marker[i + w]);
                v = std::max(v, mask[i]);
                if (v < marker[i]) { marker[i] = v; changed = true; }
            }
    }
}

// Labels regional minima plateaus of f (restricted to the mask), contiguous
// from 1 in scan order.
int regional_minima(const std::vector<double>& f, const MaskImage& mask,
                    std::vector<int>& seeds) {
    const int w = mask.width, h = mask.height;
    seeds.assign(f.size(), 0);
    std::vector<int> plateau;
    int next = 0;
    for (int i = 0; i < w * h; ++i) {
        if (!mask.data[i] || seeds[i]) continue;
        // flood the equal-value plateau, checking for lower neighbours
        plateau.assign(1, i);
        seeds[i] = -1;
        bool is_min = true;
        for (size_t head = 0; head < plateau.size(); ++head) {
            int p = plateau[head];
            int px = p % w, py = p / w;
            for (int d = 0; d < 4; ++d) {
                int nx = px + dx4[d], ny = py + dy4[d];
                if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                int q = ny * w + nx;
                if (!mask.data[q]) continue;
                if (f[q] < f[p]) is_min = false;
                else if (f[q] == f[p] && seeds[q] == 0) {
                    seeds[q] = -1;
                    plateau.push_back(q);
                }
            }
        }
        int lab = is_min ? ++next : 0;
        for (int p : plateau) seeds[p] = lab;
        if (!is_min)
            for (int p : plateau) seeds[p] = -2;  // visited non-minimum plateau
    }
    for (auto& s : seeds)
        if (s == -2) s = 0;
    return next;
}

}  // namespace

std::vector<float> distance_transform(const MaskImage& mask) {
    const int w = mask.width, h = mask.height;
    const float big = std::numeric_limits<float>::max() / 4;
    std::vector<float> d(static_cast<size_t>(w) * h);
    for (size_t i = 0; i < d.size(); ++i) d[i] = mask.data[i] ? big : 0.0f;
    auto relax = [&](size_t i, size_t j, float cost) { d[i] = std::min(d[i], d[j] + cost); };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            size_t i = static_cast<size_t>(y) * w + x;
            if (!mask.data[i]) continue;
            if (x > 0) relax(i, i - 1, 3);
            if (y > 0) relax(i, i - w, 3);
            if (x > 0 && y > 0) relax(i, i - w - 1, 4);
            if (x + 1 < w && y > 0) relax(i, i - w + 1, 4);
        }
    for (int y = h - 1; y >= 0; --y)
        for (int x = w - 1; x >= 0; --x) {
            size_t i = static_cast<size_t>(y) * w + x;
            if (!mask.data[i]) continue;
            if (x + 1 < w) relax(i, i + 1, 3);
            if (y + 1 < h) relax(i, i + w, 3);
            if (x + 1 < w && y + 1 < h) relax(i, i + w + 1, 4);
            if (x > 0 && y + 1 < h) relax(i, i + w - 1, 4);
        }
    for (auto& v : d) v /= 3.0f;  // chamfer 3-4 scale back to pixel units
    return d;
}

MaskImage threshold_foreground(const IntensityImage& intensity, const WatershedParams& params) {
    if (params.opening_radius < 0 || params.min_area < 1)
        throw std::invalid_argument("invalid watershed params");
    MaskImage mask(intensity.width, intensity.height);
    for (size_t i = 0; i < mask.data.size(); ++i) {
        float v = intensity.data[i];
        mask.data[i] = (v > 0.0f && v < params.fg_threshold) ? 1 : 0;
    }
    if (params.opening_radius > 0) {
        auto offs = disc_offsets(params.opening_radius);
        mask = dilate(erode(mask, offs), offs);
    }
    std::vector<int> labels;
    int n = label_components(mask, labels);
    if (n > 0) {
        std::vector<int> area(n + 1, 0);
        for (int l : labels) ++area[l];
        for (size_t i = 0; i < mask.data.size(); ++i)
            if (mask.data[i] && area[labels[i]] < params.min_area) mask.data[i] = 0;
    }
    return mask;
}

InstanceLabelMap seeded_watershed(const MaskImage& mask, const IntensityImage& intensity,
                                  const WatershedParams& params) {
    require_same_size(intensity, mask.width, mask.height, "seeded_watershed");
    const int w = mask.width, h = mask.height;
    InstanceLabelMap out(w, h);

    bool any = std::any_of(mask.data.begin(), mask.data.end(), [](uint8_t v) { return v != 0; });
    if (!any) return out;

    // Flooding surface: stain intensity minus the normalized distance to the
    // background, so blob cores are basins even under uniform stain.
    auto dist = distance_transform(mask);
    float dmax = *std::max_element(dist.begin(), dist.end());
    if (dmax <= 0) dmax = 1;
    const double outside = 4.0;  // above any in-mask value
    std::vector<double> f(mask.data.size(), outside);
    for (size_t i = 0; i < f.size(); ++i)
        if (mask.data[i]) f[i] = intensity.data[i] - dist[i] / dmax;

    // h-minima: reconstruct (f + h) over f by erosion, then take regional
    // minima of the result as seeds.
    std::vector<double> marker(f.size());
    for (size_t i = 0; i < f.size(); ++i) marker[i] = f[i] + params.h_depth;
    reconstruct_by_erosion(marker, f, w, h);

    std::vector<int> seeds;
    int n_seeds = regional_minima(marker, mask, seeds);
    if (n_seeds == 0) return out;

    // Meyer flooding from the seeds, ordered by surface value with a
    // deterministic FIFO tie-break.
    struct Entry {
        double value;
        uint64_t order;
        int pixel;
        bool operator>(const Entry& o) const {
            return value != o.value ? value > o.value : order > o.order;
        }
    };
    std::priority_queue<Entry, std::vector<Entry>, std::greater<Entry>> pq;
    uint64_t order = 0;
    for (int i = 0; i < w * h; ++i) {
        if (seeds[i]) {
            out.data[i] = seeds[i];
            pq.push({marker[i], order++, i});
        }
    }
    while (!pq.empty()) {
        int p = pq.top().pixel;
        pq.pop();
        int px = p % w, py = p / w;
        for (int d = 0; d < 4; ++d) {
            int nx = px + dx4[d], ny = py + dy4[d];
            if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
            int q = ny * w + nx;
            if (!mask.data[q] || out.data[q]) continue;
            out.data[q] = out.data[p];
            pq.push({marker[q], order++, q});
        }
    }
    return out;
}

int instance_count(const InstanceLabelMap& labels) {
    int32_t mx = 0;
    for (int32_t v : labels.data) mx = std::max(mx, v);
    return mx;
}

MaskImage load_mask(const std::string& path) { return io::read_mask_png(path); }

std::vector<double> instance_mean_intensity(const InstanceLabelMap& labels,
                                            const IntensityImage& intensity) {
    require_same_size(intensity, labels.width, labels.height, "instance_mean_intensity");
    int n = instance_count(labels);
    std::vector<double> sum(n, 0.0);
    std::vector<size_t> cnt(n, 0);
    for (size_t i = 0; i < labels.data.size(); ++i) {
        int32_t l = labels.data[i];
        if (l > 0) {
            sum[l - 1] += intensity.data[i];
            ++cnt[l - 1];
        }
    }
    for (int k = 0; k < n; ++k) sum[k] = cnt[k] ? sum[k] / cnt[k] : 0.0;
    return sum;
}

}  // namespace histoscore::seg
