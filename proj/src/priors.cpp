#include "spinecycle/priors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace spinecycle {

namespace {

std::string group_error(AnatomicGroup g, const std::string& what, std::size_t have, std::size_t need) {
    return "insufficient samples for " + group_name(g) + " " + what + ": have " +
           std::to_string(have) + ", need at least " + std::to_string(need);
}

double mean_of(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_stddev(const std::vector<double>& v, double mean) {
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

// Consecutive along the spine, including the transitional steps.
bool anatomically_adjacent(VertebraLabel upper, VertebraLabel lower) {
    const int u = upper.code();
    const int l = lower.code();
    if (upper.in_graph_space() && lower.in_graph_space() && l == u + 1) return true;
    if (upper == labels::T12 && lower == labels::T13) return true;
    if (upper == labels::T13 && lower == labels::L1) return true;
    if (upper == labels::T11 && lower == labels::L1) return true;
    if (upper == labels::L5 && lower == labels::L6) return true;
    return false;
}

MreBand band_of(const std::vector<double>& errors) {
    const double mu = mean_of(errors);
    return {mu, sample_stddev(errors, mu)};
}

}  // namespace

std::string gap_mode_name(GapMode m) {
    switch (m) {
    case GapMode::Both: return "both";
    case GapMode::Previous: return "previous";
    case GapMode::Next: return "next";
    }
    return "unknown";
}

GapMode parse_gap_mode(const std::string& name) {
    for (auto m : kAllGapModes) {
        if (gap_mode_name(m) == name) return m;
    }
    throw std::invalid_argument("unknown gap regressor mode '" + name + "'");
}

void AnatomyStats::validate() const {
    for (auto g : kAllGroups) {
        const auto& v = volume_of(g);
        if (!(v.a > 0.0) || !(v.b > 0.0)) {
            throw std::invalid_argument(group_name(g) + " volume regressor slopes must be positive");
        }
        if (!(gaussian_of(g).sigma > 0.0)) {
            throw std::invalid_argument(group_name(g) + " distance Gaussian sigma must be positive");
        }
        const auto& d = distance_of(g);
        if (!(d.m1 + d.n1 > 0.5 && d.m1 + d.n1 < 1.5)) {
            throw std::invalid_argument(group_name(g) + " both-side distance regressor m1+n1 = " +
                                        std::to_string(d.m1 + d.n1) + " outside (0.5, 1.5)");
        }
        for (auto m : kAllGapModes) {
            if (!(mre_of(g, m).sigma > 0.0)) {
                throw std::invalid_argument(group_name(g) + "/" + gap_mode_name(m) +
                                            " MRE sigma must be positive");
            }
        }
    }
    if (!(fallback_volume_mm3 > 0.0) || !(fallback_gap_mm > 0.0)) {
        throw std::invalid_argument("fallback thresholds must be positive");
    }
}

AnatomyStats default_anatomy_stats() {
    AnatomyStats s;
    s.volume = {VolumeRegressor{1.03, 1471.0, 0.92, 497.0},
                VolumeRegressor{1.03, 1354.0, 0.94, -140.0},
                VolumeRegressor{1.05, 981.0, 0.94, -269.0}};
    s.gaussian = {DistanceGaussian{16.77, 2.18}, DistanceGaussian{23.32, 3.55},
                  DistanceGaussian{32.68, 2.84}};
    s.distance = {DistanceRegressor{0.55, 0.45, -0.08, 0.92, 2.40, 0.98, -0.13},
                  DistanceRegressor{0.57, 0.44, -0.24, 0.93, 2.29, 0.97, -0.07},
                  DistanceRegressor{0.56, 0.46, -0.73, 0.95, 1.96, 0.96, 0.23}};
    s.mre = {{{MreBand{9.13, 2.86}, MreBand{10.20, 2.05}, MreBand{12.13, 3.36}},
              {MreBand{2.42, 1.43}, MreBand{3.96, 1.56}, MreBand{4.17, 0.88}},
              {MreBand{2.04, 0.93}, MreBand{4.45, 1.55}, MreBand{5.16, 1.71}}}};
    s.fallback_volume_mm3 = 7820.0 / 2.0;
    s.fallback_gap_mm = 50.0;
    return s;
}

std::pair<double, double> fit_line(const std::vector<XYSample>& samples) {
    if (samples.size() < 2) throw InsufficientSamples("line fit needs at least 2 samples");
    Eigen::MatrixXd A(samples.size(), 2);
    Eigen::VectorXd y(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        A(static_cast<Eigen::Index>(i), 0) = samples[i].x;
        A(static_cast<Eigen::Index>(i), 1) = 1.0;
        y(static_cast<Eigen::Index>(i)) = samples[i].y;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
    if (qr.rank() < 2) throw InsufficientSamples("line fit is degenerate (no spread in x)");
    const Eigen::VectorXd coef = qr.solve(y);
    return {coef(0), coef(1)};
}

std::array<double, 3> fit_plane(const std::vector<BothSideSample>& samples) {
    if (samples.size() < 3) throw InsufficientSamples("plane fit needs at least 3 samples");
    Eigen::MatrixXd A(samples.size(), 3);
    Eigen::VectorXd y(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        A(r, 0) = samples[i].prev;
        A(r, 1) = samples[i].next;
        A(r, 2) = 1.0;
        y(r) = samples[i].y;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
    if (qr.rank() < 3) throw InsufficientSamples("plane fit is degenerate");
    const Eigen::VectorXd coef = qr.solve(y);
    return {coef(0), coef(1), coef(2)};
}

double relative_error_percent(double observed, double predicted) {
    return 100.0 * std::abs(observed - predicted) / predicted;
}

StatsSamples extract_samples(const std::vector<ScanAnnotation>& annotations) {
    StatsSamples s;
    for (const auto& scan : annotations) {
        const std::size_t n = scan.labels.size();
        if (scan.volumes_mm3.size() != n || scan.centroids_mm.size() != n) {
            throw std::invalid_argument("annotation '" + scan.scan_id +
                                        "': labels, volumes and centroids differ in length");
        }
        for (double v : scan.volumes_mm3) s.all_volumes.push_back(v);

        std::vector<bool> adjacent(n > 0 ? n - 1 : 0);
        std::vector<double> gaps(adjacent.size());
        for (std::size_t t = 0; t + 1 < n; ++t) {
            adjacent[t] = anatomically_adjacent(scan.labels[t], scan.labels[t + 1]);
            gaps[t] = distance(scan.centroids_mm[t], scan.centroids_mm[t + 1]);
            if (!adjacent[t]) continue;
            const auto upper_group = group_index(group_of(scan.labels[t]));
            const auto lower_group = group_index(group_of(scan.labels[t + 1]));
            s.volume_from_previous[upper_group].push_back({scan.volumes_mm3[t], scan.volumes_mm3[t + 1]});
            s.volume_from_next[lower_group].push_back({scan.volumes_mm3[t + 1], scan.volumes_mm3[t]});
            s.gaps[lower_group].push_back(gaps[t]);
        }
        for (std::size_t t = 0; t < gaps.size(); ++t) {
            if (!adjacent[t]) continue;
            const auto gi = group_index(group_of(scan.labels[t + 1]));
            const bool prev_ok = t > 0 && adjacent[t - 1];
            const bool next_ok = t + 1 < gaps.size() && adjacent[t + 1];
            if (prev_ok) s.gap_previous[gi].push_back({gaps[t - 1], gaps[t]});
            if (next_ok) s.gap_next[gi].push_back({gaps[t + 1], gaps[t]});
            if (prev_ok && next_ok) s.gap_both[gi].push_back({gaps[t - 1], gaps[t + 1], gaps[t]});
        }
    }
    return s;
}

AnatomyStats fit_stats(const StatsSamples& samples) {
    AnatomyStats stats;
    for (auto g : kAllGroups) {
        const auto gi = group_index(g);
        auto require = [&](std::size_t have, std::size_t need, const std::string& what) {
            if (have < need) throw InsufficientSamples(group_error(g, what, have, need));
        };

        require(samples.volume_from_previous[gi].size(), 2, "volume pairs (previous)");
        require(samples.volume_from_next[gi].size(), 2, "volume pairs (next)");
        require(samples.gaps[gi].size(), 2, "inter-vertebral distances");
        require(samples.gap_both[gi].size(), 3, "both-side distance triples");
        require(samples.gap_previous[gi].size(), 2, "previous-distance pairs");
        require(samples.gap_next[gi].size(), 2, "next-distance pairs");

        try {
            auto& vol = stats.volume[gi];
            std::tie(vol.a, vol.c1) = fit_line(samples.volume_from_previous[gi]);
            std::tie(vol.b, vol.c2) = fit_line(samples.volume_from_next[gi]);

            const double mu = mean_of(samples.gaps[gi]);
            stats.gaussian[gi] = {mu, sample_stddev(samples.gaps[gi], mu)};

            auto& d = stats.distance[gi];
            const auto plane = fit_plane(samples.gap_both[gi]);
            d.m1 = plane[0];
            d.n1 = plane[1];
            d.k1 = plane[2];
            std::tie(d.m2, d.k2) = fit_line(samples.gap_previous[gi]);
            std::tie(d.n2, d.k3) = fit_line(samples.gap_next[gi]);
        } catch (const InsufficientSamples& e) {
            throw InsufficientSamples(group_name(g) + ": " + e.what());
        }

        const auto& d = stats.distance[gi];
        for (auto m : kAllGapModes) {
            const auto mi = static_cast<std::size_t>(m);
            std::vector<double> errors;
            const auto& explicit_samples = samples.mre[gi][mi];
            if (!explicit_samples.empty()) {
                for (const auto& e : explicit_samples) {
                    errors.push_back(relative_error_percent(e.observed, e.predicted));
                }
            } else if (m == GapMode::Both) {
                for (const auto& e : samples.gap_both[gi]) {
                    errors.push_back(relative_error_percent(e.y, d.m1 * e.prev + d.n1 * e.next + d.k1));
                }
            } else if (m == GapMode::Previous) {
                for (const auto& e : samples.gap_previous[gi]) {
                    errors.push_back(relative_error_percent(e.y, d.m2 * e.x + d.k2));
                }
            } else {
                for (const auto& e : samples.gap_next[gi]) {
                    errors.push_back(relative_error_percent(e.y, d.n2 * e.x + d.k3));
                }
            }
            require(errors.size(), 2, gap_mode_name(m) + " relative errors");
            stats.mre[gi][mi] = band_of(errors);
        }
    }
    if (!samples.all_volumes.empty()) {
        stats.fallback_volume_mm3 =
            *std::min_element(samples.all_volumes.begin(), samples.all_volumes.end()) / 2.0;
    }
    stats.fallback_gap_mm = 50.0;
    return stats;
}

AnatomyStats fit_stats(const std::vector<ScanAnnotation>& annotations) {
    return fit_stats(extract_samples(annotations));
}

double predict_volume(const AnatomyStats& stats, AnatomicGroup group, double neighbor_volume_mm3,
                      VolumeDirection direction) {
    const auto& r = stats.volume_of(group);
    return direction == VolumeDirection::FromPrevious ? r.a * neighbor_volume_mm3 + r.c1
                                                      : r.b * neighbor_volume_mm3 + r.c2;
}

ResidualDecision accept_residual(const AnatomyStats& stats, const Vec3& centroid, double volume_mm3,
                                 const std::optional<ResidualNeighbor>& neighbor) {
    ResidualDecision d;
    if (neighbor && neighbor->volume_mm3 > 0.0) {
        d.threshold_mm3 = kResidualVolumeFraction *
                          predict_volume(stats, neighbor->group, neighbor->volume_mm3, neighbor->direction);
    } else {
        d.threshold_mm3 = stats.fallback_volume_mm3;
    }
    d.is_vertebra = volume_mm3 >= d.threshold_mm3;
    if (d.is_vertebra) d.location = centroid;
    return d;
}

GapVerdict check_gap_gaussian(const AnatomyStats& stats, AnatomicGroup group, double gap_mm) {
    const auto& gs = stats.gaussian_of(group);
    const bool normal = gs.mu - 3.0 * gs.sigma < gap_mm && gap_mm < gs.mu + 3.0 * gs.sigma;
    return normal ? GapVerdict::Normal : GapVerdict::Anomalous;
}

double predict_gap(const AnatomyStats& stats, AnatomicGroup group, std::optional<double> prev_gap,
                   std::optional<double> next_gap) {
    const auto& r = stats.distance_of(group);
    if (prev_gap && next_gap) return r.m1 * *prev_gap + r.n1 * *next_gap + r.k1;
    if (prev_gap) return r.m2 * *prev_gap + r.k2;
    if (next_gap) return r.n2 * *next_gap + r.k3;
    throw std::invalid_argument("predict_gap needs at least one neighbouring gap");
}

GapMode gap_mode_for(bool has_prev, bool has_next) {
    if (has_prev && has_next) return GapMode::Both;
    if (has_prev) return GapMode::Previous;
    if (has_next) return GapMode::Next;
    throw std::invalid_argument("gap mode needs at least one neighbouring gap");
}

GapVerdict check_gap_mre(const AnatomyStats& stats, AnatomicGroup group, GapMode mode,
                         double observed_gap, double predicted_gap) {
    if (!(predicted_gap > 0.0)) return GapVerdict::Anomalous;
    const double mre = relative_error_percent(observed_gap, predicted_gap);
    const auto& band = stats.mre_of(group, mode);
    return mre < band.mu + 3.0 * band.sigma ? GapVerdict::Normal : GapVerdict::Anomalous;
}

bool GapAssessment::too_long() const {
    if (fallback_anomalous) return true;
    return (gaussian_anomalous || mre_anomalous) && gap_mm > expected_mm;
}

std::vector<GapAssessment> assess_gaps(const AnatomyStats& stats,
                                       const std::vector<VertebraRecord>& records) {
    std::vector<GapAssessment> out;
    if (records.size() < 2) return out;
    const std::size_t m = records.size() - 1;
    std::vector<double> gaps(m);
    for (std::size_t t = 0; t < m; ++t) gaps[t] = distance(records[t].location, records[t + 1].location);

    // Gaussian verdicts first: only gaps inside their band serve as regressor inputs, so one
    // displaced vertebra does not drag its neighbours' predictions along.
    for (std::size_t t = 0; t < m; ++t) {
        GapAssessment a;
        a.upper = t;
        a.gap_mm = gaps[t];
        if (records[t].label && records[t + 1].label) {
            const auto group = group_of(*records[t + 1].label);
            a.group = group;
            a.gaussian_anomalous = check_gap_gaussian(stats, group, a.gap_mm) == GapVerdict::Anomalous;
            a.expected_mm = stats.gaussian_of(group).mu;
        } else {
            a.fallback_anomalous = a.gap_mm > stats.fallback_gap_mm;
        }
        out.push_back(a);
    }
    auto usable = [&](std::size_t t) { return out[t].group && !out[t].gaussian_anomalous; };
    for (std::size_t t = 0; t < m; ++t) {
        auto& a = out[t];
        if (!a.group) continue;
        const bool has_prev = t > 0 && usable(t - 1);
        const bool has_next = t + 1 < m && usable(t + 1);
        if (!has_prev && !has_next) continue;
        const auto prev = has_prev ? std::optional<double>(gaps[t - 1]) : std::nullopt;
        const auto next = has_next ? std::optional<double>(gaps[t + 1]) : std::nullopt;
        const double predicted = predict_gap(stats, *a.group, prev, next);
        a.mre_anomalous = check_gap_mre(stats, *a.group, gap_mode_for(has_prev, has_next), a.gap_mm,
                                        predicted) == GapVerdict::Anomalous;
        if (predicted > 0.0) a.expected_mm = predicted;
    }

    // Unlabelled gaps: size candidates from the typical normal gap in this spine.
    std::vector<double> normal;
    for (const auto& a : out) {
        if (!a.group && !a.fallback_anomalous) normal.push_back(a.gap_mm);
    }
    double typical = stats.fallback_gap_mm / 2.0;
    if (!normal.empty()) {
        std::nth_element(normal.begin(), normal.begin() + static_cast<std::ptrdiff_t>(normal.size() / 2),
                         normal.end());
        typical = normal[normal.size() / 2];
    }
    for (auto& a : out) {
        if (!a.group) a.expected_mm = typical;
    }
    return out;
}

std::vector<Vec3> gap_candidates(const AnatomyStats& stats, const std::vector<VertebraRecord>& records) {
    std::vector<Vec3> out;
    for (const auto& a : assess_gaps(stats, records)) {
        if (!a.too_long()) continue;
        const long ratio = std::lround(a.gap_mm / a.expected_mm);
        const long n_new = std::max(1L, ratio - 1);
        const Vec3& p = records[a.upper].location;
        const Vec3& q = records[a.upper + 1].location;
        for (long k = 1; k <= n_new; ++k) {
            const double f = static_cast<double>(k) / static_cast<double>(n_new + 1);
            out.push_back(p + (q - p) * f);
        }
    }
    return out;
}

std::vector<Vec3> extreme_candidates(const std::vector<VertebraRecord>& records,
                                     const Box3& field_of_view) {
    std::vector<Vec3> out;
    if (records.size() < 2) return out;
    const auto& top = records[0];
    const auto& second = records[1];
    if (!(top.label && *top.label == labels::C1)) {
        const Vec3 c = top.location + (top.location - second.location);
        if (field_of_view.strictly_contains(c)) out.push_back(c);
    }
    const auto& bottom = records[records.size() - 1];
    const auto& above = records[records.size() - 2];
    if (!(bottom.label && (*bottom.label == labels::L5 || *bottom.label == labels::L6))) {
        const Vec3 c = bottom.location + (bottom.location - above.location);
        if (field_of_view.strictly_contains(c)) out.push_back(c);
    }
    return out;
}

}  // namespace spinecycle
