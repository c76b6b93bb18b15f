#include "pcloc/features.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>

#include "pcloc/rng.hpp"

namespace pcloc {

int hamming_distance(const Descriptor& a, const Descriptor& b) {
    int d = 0;
    for (int i = 0; i < 4; ++i) d += std::popcount(a.bits[i] ^ b.bits[i]);
    return d;
}

namespace {

constexpr int kPatternBits = 256;
constexpr int kPatternRadius = 15;
constexpr int kPatchBorder = 24;  // room for rotated sampling offsets
constexpr int kOrientationBins = 32;

struct PatternTables {
    // Per orientation bin, 256 precomputed point pairs (x0,y0,x1,y1).
    std::array<std::array<std::int8_t, 4 * kPatternBits>, kOrientationBins> rotated;

    PatternTables() {
        // Fixed comparison pattern; the seed is part of the descriptor
        // definition and must never change between builds.
        Rng rng(0x5EED5EED5EED5EEDULL);
        std::array<std::int8_t, 4 * kPatternBits> base{};
        for (int i = 0; i < kPatternBits; ++i) {
            int x0, y0, x1, y1;
            do {
                x0 = int(rng.next_below(2 * kPatternRadius + 1)) - kPatternRadius;
                y0 = int(rng.next_below(2 * kPatternRadius + 1)) - kPatternRadius;
                x1 = int(rng.next_below(2 * kPatternRadius + 1)) - kPatternRadius;
                y1 = int(rng.next_below(2 * kPatternRadius + 1)) - kPatternRadius;
            } while (x0 == x1 && y0 == y1);
            base[4 * i + 0] = std::int8_t(x0);
            base[4 * i + 1] = std::int8_t(y0);
            base[4 * i + 2] = std::int8_t(x1);
            base[4 * i + 3] = std::int8_t(y1);
        }
        for (int b = 0; b < kOrientationBins; ++b) {
            const double a = 2.0 * M_PI * b / kOrientationBins;
            const double ca = std::cos(a), sa = std::sin(a);
            for (int i = 0; i < 4 * kPatternBits; i += 2) {
                const double x = base[i], y = base[i + 1];
                rotated[b][i] = std::int8_t(std::lround(ca * x - sa * y));
                rotated[b][i + 1] = std::int8_t(std::lround(sa * x + ca * y));
            }
        }
    }
};

const PatternTables& pattern_tables() {
    static const PatternTables tables;
    return tables;
}

// Circle of radius 3 used by the segment test.
constexpr int kCircle[16][2] = {{0, -3},  {1, -3},  {2, -2},  {3, -1}, {3, 0},  {3, 1},
                                {2, 2},   {1, 3},   {0, 3},   {-1, 3}, {-2, 2}, {-3, 1},
                                {-3, 0},  {-3, -1}, {-2, -2}, {-1, -3}};

// Segment test: a contiguous arc of >= 6 circle pixels all brighter or all
// darker than the center by the threshold. Arc length 6 (not 9) so that
// checkerboard-style saddle corners fire; the Harris score filters edges.
bool segment_test(const ImageGray& img, int x, int y, int t) {
    const int c = img.at(x, y);
    const int hi = c + t, lo = c - t;
    unsigned bright = 0, dark = 0;
    for (int i = 0; i < 16; ++i) {
        const int v = img.at(x + kCircle[i][0], y + kCircle[i][1]);
        if (v > hi) bright |= 1u << i;
        if (v < lo) dark |= 1u << i;
    }
    auto has_arc = [](unsigned m) {
        if (m == 0) return false;
        const unsigned w = m | (m << 16);  // wrap-around
        unsigned run = w & (w >> 1);
        run &= run >> 1;       // 3
        run &= run >> 2;       // 5 -> need up to 6
        run &= w >> 5;         // 6 consecutive
        return run != 0;
    };
    return has_arc(bright) || has_arc(dark);
}

float harris_score(const ImageGray& img, int x, int y) {
    double sxx = 0, syy = 0, sxy = 0;
    for (int dy = -3; dy <= 3; ++dy)
        for (int dx = -3; dx <= 3; ++dx) {
            const int px = x + dx, py = y + dy;
            const double ix = double(img.at(px + 1, py)) - double(img.at(px - 1, py));
            const double iy = double(img.at(px, py + 1)) - double(img.at(px, py - 1));
            sxx += ix * ix;
            syy += iy * iy;
            sxy += ix * iy;
        }
    const double det = sxx * syy - sxy * sxy;
    const double tr = sxx + syy;
    return float((det - 0.04 * tr * tr) * 1e-6);
}

float centroid_orientation(const ImageGray& img, int x, int y) {
    double m10 = 0, m01 = 0;
    for (int dy = -kPatternRadius; dy <= kPatternRadius; ++dy)
        for (int dx = -kPatternRadius; dx <= kPatternRadius; ++dx) {
            if (dx * dx + dy * dy > kPatternRadius * kPatternRadius) continue;
            const double v = img.at(x + dx, y + dy);
            m10 += dx * v;
            m01 += dy * v;
        }
    return float(std::atan2(m01, m10));
}

ImageGray downscale(const ImageGray& src, double factor) {
    ImageGray dst(std::max(1, int(std::lround(src.width / factor))),
                  std::max(1, int(std::lround(src.height / factor))));
    for (int y = 0; y < dst.height; ++y)
        for (int x = 0; x < dst.width; ++x) {
            const double sx = (x + 0.5) * double(src.width) / dst.width - 0.5;
            const double sy = (y + 0.5) * double(src.height) / dst.height - 0.5;
            const int x0 = std::clamp(int(std::floor(sx)), 0, src.width - 1);
            const int y0 = std::clamp(int(std::floor(sy)), 0, src.height - 1);
            const int x1 = std::min(x0 + 1, src.width - 1);
            const int y1 = std::min(y0 + 1, src.height - 1);
            const double ax = std::clamp(sx - x0, 0.0, 1.0);
            const double ay = std::clamp(sy - y0, 0.0, 1.0);
            const double v = (1 - ay) * ((1 - ax) * src.at(x0, y0) + ax * src.at(x1, y0)) +
                             ay * ((1 - ax) * src.at(x0, y1) + ax * src.at(x1, y1));
            dst.at(x, y) = std::uint8_t(std::lround(v));
        }
    return dst;
}

// 5x5 box blur; descriptor comparisons sample the smoothed image.
ImageGray box_blur5(const ImageGray& src) {
    ImageGray dst(src.width, src.height);
    std::vector<std::uint32_t> integral(std::size_t(src.width + 1) * (src.height + 1), 0);
    const int w1 = src.width + 1;
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x)
            integral[std::size_t(y + 1) * w1 + x + 1] = integral[std::size_t(y) * w1 + x + 1] +
                                                        integral[std::size_t(y + 1) * w1 + x] -
                                                        integral[std::size_t(y) * w1 + x] +
                                                        src.at(x, y);
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x) {
            const int x0 = std::max(0, x - 2), y0 = std::max(0, y - 2);
            const int x1 = std::min(src.width, x + 3), y1 = std::min(src.height, y + 3);
            const std::uint32_t s = integral[std::size_t(y1) * w1 + x1] -
                                    integral[std::size_t(y0) * w1 + x1] -
                                    integral[std::size_t(y1) * w1 + x0] +
                                    integral[std::size_t(y0) * w1 + x0];
            const std::uint32_t area = std::uint32_t((x1 - x0) * (y1 - y0));
            dst.at(x, y) = std::uint8_t((s + area / 2) / area);
        }
    return dst;
}

Descriptor describe(const ImageGray& blurred, int x, int y, float orientation) {
    int bin = int(std::lround(orientation / (2.0 * M_PI) * kOrientationBins));
    bin = ((bin % kOrientationBins) + kOrientationBins) % kOrientationBins;
    const auto& pat = pattern_tables().rotated[bin];
    Descriptor d;
    for (int i = 0; i < kPatternBits; ++i) {
        const int x0 = x + pat[4 * i + 0], y0 = y + pat[4 * i + 1];
        const int x1 = x + pat[4 * i + 2], y1 = y + pat[4 * i + 3];
        if (blurred.at(x0, y0) < blurred.at(x1, y1)) d.bits[i / 64] |= 1ULL << (i % 64);
    }
    return d;
}

struct Candidate {
    float x0, y0;  // level-0 coordinates
    int lx, ly;    // level coordinates
    int octave;
    float response;
};

}  // namespace

FeatureSet detect_and_describe(const ImageRgb& image, const FeatureConfig& config,
                               const std::vector<std::uint8_t>* mask) {
    return detect_and_describe(to_gray(image), config, mask);
}

FeatureSet detect_and_describe(const ImageGray& gray, const FeatureConfig& config,
                               const std::vector<std::uint8_t>* mask) {
    if (gray.width < 64 || gray.height < 64)
        throw std::runtime_error("detect_and_describe: image must be at least 64x64");
    if (mask && mask->size() != std::size_t(gray.width) * gray.height)
        throw std::runtime_error("detect_and_describe: mask size mismatch");

    // Chebyshev erosion of the mask: a pixel survives only if no unusable
    // pixel lies within mask_margin of it (separable running min).
    std::vector<std::uint8_t> eroded;
    if (mask) {
        const int r = config.mask_margin;
        std::vector<std::uint8_t> tmp(mask->size());
        for (int y = 0; y < gray.height; ++y)
            for (int x = 0; x < gray.width; ++x) {
                std::uint8_t m = 1;
                for (int dx = -r; dx <= r && m; ++dx) {
                    const int nx = x + dx;
                    if (nx < 0 || nx >= gray.width || !(*mask)[std::size_t(y) * gray.width + nx])
                        m = 0;
                }
                tmp[std::size_t(y) * gray.width + x] = m;
            }
        eroded.resize(mask->size());
        for (int y = 0; y < gray.height; ++y)
            for (int x = 0; x < gray.width; ++x) {
                std::uint8_t m = 1;
                for (int dy = -r; dy <= r && m; ++dy) {
                    const int ny = y + dy;
                    if (ny < 0 || ny >= gray.height || !tmp[std::size_t(ny) * gray.width + x])
                        m = 0;
                }
                eroded[std::size_t(y) * gray.width + x] = m;
            }
    }

    std::vector<ImageGray> levels;
    levels.push_back(gray);
    for (int o = 1; o < config.octaves; ++o) {
        ImageGray next = downscale(levels.back(), config.scale_factor);
        if (next.width < 2 * kPatchBorder + 8 || next.height < 2 * kPatchBorder + 8) break;
        levels.push_back(std::move(next));
    }

    std::vector<Candidate> candidates;
    for (int o = 0; o < int(levels.size()); ++o) {
        const ImageGray& img = levels[o];
        const double scale = double(gray.width) / img.width;
        for (int y = kPatchBorder; y < img.height - kPatchBorder; ++y)
            for (int x = kPatchBorder; x < img.width - kPatchBorder; ++x) {
                if (!segment_test(img, x, y, config.fast_threshold)) continue;
                const float resp = harris_score(img, x, y);
                if (!(resp > 0.f)) continue;
                Candidate c;
                c.lx = x;
                c.ly = y;
                c.octave = o;
                // Pixel centers: array index x covers [x, x+1) in continuous
                // image coordinates, so the keypoint sits at x + 0.5.
                c.x0 = float((x + 0.5) * scale);
                c.y0 = float((y + 0.5) * scale);
                c.response = resp;
                const int mx = std::clamp(int(std::floor(c.x0)), 0, gray.width - 1);
                const int my = std::clamp(int(std::floor(c.y0)), 0, gray.height - 1);
                if (mask && !eroded[std::size_t(my) * gray.width + mx]) continue;
                candidates.push_back(c);
            }
    }

    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        if (a.response != b.response) return a.response > b.response;
        if (a.y0 != b.y0) return a.y0 < b.y0;
        if (a.x0 != b.x0) return a.x0 < b.x0;
        return a.octave < b.octave;
    });

    // Greedy non-max suppression on a coarse grid.
    const double r = config.nms_radius;
    const int cell = std::max(1, config.nms_radius);
    const int gw = gray.width / cell + 1, gh = gray.height / cell + 1;
    std::vector<std::vector<int>> grid(std::size_t(gw) * gh);
    std::vector<Candidate> kept;
    for (const auto& c : candidates) {
        const int gx = int(c.x0) / cell, gy = int(c.y0) / cell;
        bool suppressed = false;
        for (int dy = -1; dy <= 1 && !suppressed; ++dy)
            for (int dx = -1; dx <= 1 && !suppressed; ++dx) {
                const int nx = gx + dx, ny = gy + dy;
                if (nx < 0 || ny < 0 || nx >= gw || ny >= gh) continue;
                for (int ki : grid[std::size_t(ny) * gw + nx]) {
                    const double du = kept[ki].x0 - c.x0, dv = kept[ki].y0 - c.y0;
                    if (du * du + dv * dv < r * r) {
                        suppressed = true;
                        break;
                    }
                }
            }
        if (suppressed) continue;
        grid[std::size_t(gy) * gw + gx].push_back(int(kept.size()));
        kept.push_back(c);
        if (int(kept.size()) >= config.max_features) break;
    }

    std::vector<ImageGray> blurred;
    blurred.reserve(levels.size());
    for (const auto& l : levels) blurred.push_back(box_blur5(l));

    FeatureSet fs;
    fs.keypoints.reserve(kept.size());
    fs.descriptors.reserve(kept.size());
    // Sub-pixel localization: fit a parabola to the Harris response along
    // each axis and take its vertex. Half a pixel of localization error at
    // the detector is the dominant error source of every downstream solve,
    // and at coarse octaves it is multiplied by the octave scale.
    auto subpixel_offset = [](float rm, float r0, float rp) {
        const float denom = rm - 2.f * r0 + rp;
        if (!(denom < 0.f)) return 0.f;  // not a maximum
        const float off = 0.5f * (rm - rp) / denom;
        return std::clamp(off, -0.5f, 0.5f);
    };
    for (const auto& c : kept) {
        const ImageGray& img = levels[c.octave];
        const double scale = double(gray.width) / img.width;
        float ox = 0.f, oy = 0.f;
        if (c.lx > kPatchBorder && c.lx < img.width - kPatchBorder - 1)
            ox = subpixel_offset(harris_score(img, c.lx - 1, c.ly), c.response,
                                 harris_score(img, c.lx + 1, c.ly));
        if (c.ly > kPatchBorder && c.ly < img.height - kPatchBorder - 1)
            oy = subpixel_offset(harris_score(img, c.lx, c.ly - 1), c.response,
                                 harris_score(img, c.lx, c.ly + 1));
        Keypoint kp;
        kp.position = {c.x0 + ox * scale, c.y0 + oy * scale};
        kp.response = c.response;
        kp.octave = c.octave;
        kp.orientation = centroid_orientation(levels[c.octave], c.lx, c.ly);
        fs.keypoints.push_back(kp);
        fs.descriptors.push_back(describe(blurred[c.octave], c.lx, c.ly, kp.orientation));
    }
    return fs;
}

std::vector<Match> match_features(const FeatureSet& a, const FeatureSet& b,
                                  const FeatureConfig& config) {
    return match_descriptors(a.descriptors, b.descriptors, config);
}

std::vector<Match> match_descriptors(const std::vector<Descriptor>& a,
                                     const std::vector<Descriptor>& b,
                                     const FeatureConfig& config) {
    const int na = int(a.size()), nb = int(b.size());
    std::vector<Match> out;
    if (na == 0 || nb == 0) return out;

    std::vector<int> best_b(na, -1), best_b_dist(na, 257), second_b_dist(na, 257);
    std::vector<int> best_a(nb, -1), best_a_dist(nb, 257), second_a_dist(nb, 257);
    for (int i = 0; i < na; ++i)
        for (int j = 0; j < nb; ++j) {
            const int d = hamming_distance(a[i], b[j]);
            if (d < best_b_dist[i]) {
                second_b_dist[i] = best_b_dist[i];
                best_b_dist[i] = d;
                best_b[i] = j;
            } else if (d < second_b_dist[i]) {
                second_b_dist[i] = d;
            }
            if (d < best_a_dist[j]) {
                second_a_dist[j] = best_a_dist[j];
                best_a_dist[j] = d;
                best_a[j] = i;
            } else if (d < second_a_dist[j]) {
                second_a_dist[j] = d;
            }
        }

    for (int i = 0; i < na; ++i) {
        const int j = best_b[i];
        if (j < 0 || best_a[j] != i) continue;
        const int d = best_b_dist[i];
        if (d > config.match_max_distance) continue;
        if (double(d) > config.match_ratio * double(second_b_dist[i])) continue;
        if (double(d) > config.match_ratio * double(second_a_dist[j])) continue;
        out.push_back({i, j, d});
    }
    return out;
}

}  // namespace pcloc
