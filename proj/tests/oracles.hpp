// Independent reference implementations used by the tests. Everything here
// works on dense byte images or plain doubles and shares no code with the
// library beyond the types needed to hand results back.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "llmseg/mask.hpp"
#include "llmseg/proposals.hpp"

namespace oracle {

struct Dense {
    std::size_t h = 0;
    std::size_t w = 0;
    std::vector<std::uint8_t> px;  // row-major

    std::uint8_t at(std::size_t r, std::size_t c) const { return px[r * w + c]; }
};

inline Dense random_dense(std::mt19937_64& gen, std::size_t h, std::size_t w) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double density = u(gen);
    Dense d{h, w, std::vector<std::uint8_t>(h * w)};
    // Mix of blobs and salt noise so runs have varied lengths.
    if (u(gen) < 0.5) {
        for (auto& p : d.px) p = u(gen) < density ? 1 : 0;
    } else {
        const std::size_t r0 = gen() % h, c0 = gen() % w;
        const std::size_t r1 = r0 + gen() % (h - r0) + 1, c1 = c0 + gen() % (w - c0) + 1;
        for (std::size_t r = r0; r < r1; ++r)
            for (std::size_t c = c0; c < c1; ++c) d.px[r * w + c] = 1;
        for (auto& p : d.px)
            if (u(gen) < 0.02) p ^= 1;
    }
    return d;
}

inline llmseg::BinaryMask to_mask(const Dense& d) {
    llmseg::BinaryMask m(d.h, d.w);
    for (std::size_t r = 0; r < d.h; ++r)
        for (std::size_t c = 0; c < d.w; ++c) m.set(r, c, d.at(r, c) != 0);
    return m;
}

inline Dense from_mask(const llmseg::BinaryMask& m) {
    Dense d{m.height(), m.width(), std::vector<std::uint8_t>(m.height() * m.width())};
    for (std::size_t r = 0; r < m.height(); ++r)
        for (std::size_t c = 0; c < m.width(); ++c) d.px[r * d.w + c] = m.get(r, c) ? 1 : 0;
    return d;
}

struct Counts {
    std::uint64_t inter = 0, uni = 0, a = 0, b = 0;
};

inline Counts count(const Dense& a, const Dense& b) {
    Counts c;
    for (std::size_t i = 0; i < a.px.size(); ++i) {
        c.inter += a.px[i] & b.px[i];
        c.uni += a.px[i] | b.px[i];
        c.a += a.px[i];
        c.b += b.px[i];
    }
    return c;
}

// Column-major runs beginning with a (possibly empty) background run.
inline std::vector<std::uint64_t> rle(const Dense& d) {
    std::vector<std::uint64_t> runs;
    std::uint8_t current = 0;
    std::uint64_t length = 0;
    for (std::size_t c = 0; c < d.w; ++c) {
        for (std::size_t r = 0; r < d.h; ++r) {
            if (d.at(r, c) != current) {
                runs.push_back(length);
                length = 0;
                current ^= 1;
            }
            ++length;
        }
    }
    runs.push_back(length);
    return runs;
}

inline Dense resize(const Dense& d, std::size_t oh, std::size_t ow) {
    Dense out{oh, ow, std::vector<std::uint8_t>(oh * ow)};
    for (std::size_t r = 0; r < oh; ++r)
        for (std::size_t c = 0; c < ow; ++c) {
            const auto sr = static_cast<std::size_t>(std::floor(static_cast<double>(r) * d.h / oh));
            const auto sc = static_cast<std::size_t>(std::floor(static_cast<double>(c) * d.w / ow));
            out.px[r * ow + c] = d.at(sr, sc);
        }
    return out;
}

// Fraction of each grid cell covered by foreground, by explicit pixel/cell
// rectangle intersection in continuous coordinates.
inline std::vector<double> coverage(const Dense& d, std::size_t gh, std::size_t gw) {
    std::vector<double> out(gh * gw, 0.0);
    const double ch = static_cast<double>(d.h) / gh, cw = static_cast<double>(d.w) / gw;
    for (std::size_t i = 0; i < gh; ++i)
        for (std::size_t j = 0; j < gw; ++j) {
            const double y0 = i * ch, y1 = (i + 1) * ch, x0 = j * cw, x1 = (j + 1) * cw;
            double covered = 0.0;
            for (std::size_t r = 0; r < d.h; ++r)
                for (std::size_t c = 0; c < d.w; ++c) {
                    if (!d.at(r, c)) continue;
                    const double oy = std::max(0.0, std::min<double>(y1, r + 1) - std::max<double>(y0, r));
                    const double ox = std::max(0.0, std::min<double>(x1, c + 1) - std::max<double>(x0, c));
                    covered += oy * ox;
                }
            out[i * gw + j] = covered / (ch * cw);
        }
    return out;
}

inline double mask_iou(const llmseg::BinaryMask& a, const llmseg::BinaryMask& b) {
    const Counts c = count(from_mask(a), from_mask(b));
    return c.uni == 0 ? 1.0 : static_cast<double>(c.inter) / static_cast<double>(c.uni);
}

// Textbook O(K²) greedy NMS: repeatedly take the best remaining proposal and
// discard everything overlapping it above the threshold.
inline std::vector<std::size_t> greedy_nms(const llmseg::ProposalSet& set, double thr) {
    std::vector<std::size_t> remaining(set.size());
    std::iota(remaining.begin(), remaining.end(), 0);
    std::vector<std::size_t> kept;
    while (!remaining.empty()) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < remaining.size(); ++i) {
            const auto& p = set.proposals[remaining[i]];
            const auto& q = set.proposals[remaining[best]];
            if (p.predicted_iou > q.predicted_iou) best = i;
        }
        const std::size_t chosen = remaining[best];
        kept.push_back(chosen);
        std::vector<std::size_t> next;
        for (std::size_t idx : remaining) {
            if (idx == chosen) continue;
            if (mask_iou(set.proposals[idx].mask, set.proposals[chosen].mask) <= thr) next.push_back(idx);
        }
        remaining = std::move(next);
    }
    return kept;
}

inline double kl(const std::vector<double>& p, const std::vector<double>& q) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i] > 0) s += p[i] * std::log(p[i] / q[i]);
    return s;
}

inline std::vector<double> softmax(const std::vector<double>& x, double tau) {
    double m = *std::max_element(x.begin(), x.end());
    std::vector<double> e(x.size());
    double z = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) z += e[i] = std::exp((x[i] - m) / tau);
    for (double& v : e) v /= z;
    return e;
}

}  // namespace oracle
