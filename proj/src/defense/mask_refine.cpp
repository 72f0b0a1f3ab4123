#include "diffender/mask_refine.hpp"

#include "diffender/errors.hpp"
#include "diffender/localization.hpp"

#include <cmath>
#include <vector>

namespace diffender {

namespace {

/// Maps any integer index into [0, n) by half-sample symmetric reflection.
int reflect(int i, int n) {
    const int period = 2 * n;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - 1 - i;
}

}  // namespace

std::vector<double> gaussian_kernel(double sigma) {
    if (!(sigma >= 0.0)) throw ParamError("sigma must be non-negative");
    if (sigma == 0.0) return {1.0};
    const int r = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * r + 1);
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (double& v : k) v /= sum;
    return k;
}

SoftMask gaussian_smooth(const SoftMask& mask, double sigma) {
    const std::vector<double> k = gaussian_kernel(sigma);
    if (k.size() == 1) return mask;
    const int r = static_cast<int>(k.size() / 2);
    const int H = mask.height(), W = mask.width();
    SoftMask tmp(H, W), out(H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double s = 0.0;
            for (int d = -r; d <= r; ++d) s += k[d + r] * mask(y, reflect(x + d, W));
            tmp(y, x) = s;
        }
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double s = 0.0;
            for (int d = -r; d <= r; ++d) s += k[d + r] * tmp(reflect(y + d, H), x);
            out(y, x) = std::clamp(s, 0.0, 1.0);
        }
    return out;
}

BinaryMask dilate(const BinaryMask& mask, int radius) {
    if (radius < 0) throw ParamError("dilation radius must be non-negative");
    if (radius == 0) return mask;
    std::vector<std::pair<int, int>> disk;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
            if (dx * dx + dy * dy <= radius * radius) disk.emplace_back(dy, dx);
    const int H = mask.height(), W = mask.width();
    BinaryMask out(H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (!mask(y, x)) continue;
            for (auto [dy, dx] : disk) {
                const int yy = y + dy, xx = x + dx;
                if (yy >= 0 && yy < H && xx >= 0 && xx < W) out(yy, xx) = 1;
            }
        }
    return out;
}

BinaryMask remove_small_components(const BinaryMask& mask, int min_area) {
    if (min_area < 0) throw ParamError("min_area must be non-negative");
    const int H = mask.height(), W = mask.width();
    BinaryMask out = mask;
    if (min_area <= 1) return out;
    std::vector<char> seen(mask.size(), 0);
    std::vector<int> stack, comp;
    for (int start = 0; start < H * W; ++start) {
        if (!mask[start] || seen[start]) continue;
        comp.clear();
        stack.assign(1, start);
        seen[start] = 1;
        while (!stack.empty()) {
            const int p = stack.back();
            stack.pop_back();
            comp.push_back(p);
            const int y = p / W, x = p % W;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                    const int q = yy * W + xx;
                    if (mask[q] && !seen[q]) {
                        seen[q] = 1;
                        stack.push_back(q);
                    }
                }
        }
        if (static_cast<int>(comp.size()) < min_area)
            for (int p : comp) out[p] = 0;
    }
    return out;
}

RefineResult refine(const SoftMask& raw, const DefenseConfig& cfg) {
    cfg.validate();
    RefineResult r;
    r.initial = binarize(raw, cfg.tau_bin);
    r.smoothed = gaussian_smooth(r.initial.as_soft(), cfg.sigma_smooth);
    r.rebinarized = binarize(r.smoothed, cfg.tau_smooth);
    r.despeckled = remove_small_components(r.rebinarized, cfg.min_area);
    r.mask = dilate(r.despeckled, cfg.dilate_radius);
    r.no_patch = !r.mask.any();
    return r;
}

}  // namespace diffender
