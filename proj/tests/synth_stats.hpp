#pragma once

#include <cmath>

#include "spinecycle/priors.hpp"

namespace testing {

/// Samples that the given statistics describe exactly: noiseless linear data, symmetric distance
/// sets with the requested mean and (n-1) standard deviation, and relative errors likewise.
inline spinecycle::StatsSamples exact_samples(const spinecycle::AnatomyStats& s) {
    using namespace spinecycle;
    StatsSamples out;
    constexpr int k = 5;  // symmetric pairs per set
    const double spread = std::sqrt((2.0 * k - 1.0) / (2.0 * k));
    for (auto g : kAllGroups) {
        const auto gi = group_index(g);
        const auto& v = s.volume[gi];
        for (double x : {8000.0, 12000.0, 16000.0, 20000.0}) {
            out.volume_from_previous[gi].push_back({x, v.a * x + v.c1});
            out.volume_from_next[gi].push_back({x, v.b * x + v.c2});
        }
        const auto& ga = s.gaussian[gi];
        for (int i = 0; i < k; ++i) {
            out.gaps[gi].push_back(ga.mu - ga.sigma * spread);
            out.gaps[gi].push_back(ga.mu + ga.sigma * spread);
        }
        const auto& d = s.distance[gi];
        for (auto [p, n] : {std::pair{20.0, 22.0}, {24.0, 21.0}, {22.0, 26.0}, {27.0, 25.0}, {18.0, 30.0}}) {
            out.gap_both[gi].push_back({p, n, d.m1 * p + d.n1 * n + d.k1});
        }
        for (double x : {15.0, 20.0, 25.0, 30.0}) {
            out.gap_previous[gi].push_back({x, d.m2 * x + d.k2});
            out.gap_next[gi].push_back({x, d.n2 * x + d.k3});
        }
        for (auto m : kAllGapModes) {
            const auto& band = s.mre[gi][static_cast<std::size_t>(m)];
            const double predicted = 30.0;
            for (int i = 0; i < k; ++i) {
                for (double e : {band.mu - band.sigma * spread, band.mu + band.sigma * spread}) {
                    out.mre[gi][static_cast<std::size_t>(m)].push_back({predicted * (1.0 + e / 100.0), predicted});
                }
            }
        }
    }
    out.all_volumes = {2.0 * s.fallback_volume_mm3, 4.0 * s.fallback_volume_mm3};
    return out;
}

}  // namespace testing
