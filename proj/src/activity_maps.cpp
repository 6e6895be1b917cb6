#include "padkit/activity_maps.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>

namespace padkit {

std::vector<OrganStats> organ_means(const ScalarGrid2D& pet, const LabelGrid2D& labels) {
    require_same_shape(pet.values, labels.labels, "organ_means");
    std::map<std::int32_t, std::pair<double, std::int64_t>> acc;
    for (Eigen::Index i = 0; i < pet.size(); ++i) {
        const std::int32_t l = labels.labels.data()[i];
        if (l == 0) continue;
        auto& [sum, n] = acc[l];
        sum += pet.values.data()[i];
        ++n;
    }
    std::vector<OrganStats> out;
    out.reserve(acc.size());
    for (const auto& [label, sn] : acc) out.push_back({label, sn.first / double(sn.second), sn.second});
    return out;
}

ScalarGrid2D build_uniform_map(const LabelGrid2D& labels, const std::vector<OrganStats>& stats, double background) {
    std::map<std::int32_t, double> lookup;
    for (const auto& s : stats) lookup[s.label] = s.mean_suv;
    ScalarGrid2D out(labels.height(), labels.width(), UnitTag::suv, background);
    for (Eigen::Index i = 0; i < out.size(); ++i) {
        const std::int32_t l = labels.labels.data()[i];
        if (l == 0) continue;
        const auto it = lookup.find(l);
        if (it == lookup.end()) throw MissingOrganError("build_uniform_map: no stats for label " + std::to_string(l));
        out.values.data()[i] = it->second;
    }
    return out;
}

void write_organ_stats_csv(std::ostream& os, const std::vector<OrganStats>& stats) {
    os << "label,mean_suv,voxel_count\n";
    for (const auto& s : stats) {
        std::ostringstream v;
        v.precision(17);
        v << s.mean_suv;
        os << s.label << ',' << v.str() << ',' << s.voxel_count << '\n';
    }
}

namespace {

template <typename T>
bool parse_field(const std::string& text, T& out) {
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, out);
    return ec == std::errc() && ptr == end;
}

} // namespace

std::vector<OrganStats> read_organ_stats_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != "label,mean_suv,voxel_count") {
        throw FormatError("organ stats CSV: expected header 'label,mean_suv,voxel_count'");
    }
    std::vector<OrganStats> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string a, b, c;
        if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c)) {
            throw FormatError("organ stats CSV: malformed row '" + line + "'");
        }
        OrganStats st;
        if (!parse_field(a, st.label) || !parse_field(b, st.mean_suv) || !parse_field(c, st.voxel_count)) {
            throw FormatError("organ stats CSV: non-numeric field in row '" + line + "'");
        }
        out.push_back(st);
    }
    return out;
}

void PhantomConfig::validate() const {
    if (organ_count < 2) throw InvalidParameter("phantom: organ_count must be >= 2");
    if (grid_size < 8) throw InvalidParameter("phantom: grid_size must be >= 8");
    if (suv_ranges.empty()) throw InvalidParameter("phantom: at least one SUV interval required");
    for (const auto& r : suv_ranges) {
        if (r.lo < 0.0 || r.hi < r.lo) throw InvalidParameter("phantom: SUV intervals must be non-negative and ordered");
    }
    if (!(min_radius_fraction > 0.0) || max_radius_fraction < min_radius_fraction) {
        throw InvalidParameter("phantom: invalid radius fractions");
    }
}

namespace {

struct Ellipse {
    double cr, cc, a, b, rot;

    [[nodiscard]] bool contains(double r, double c, double grow = 0.0) const {
        const double dx = c - cc;
        const double dy = r - cr;
        const double u = dx * std::cos(rot) + dy * std::sin(rot);
        const double v = -dx * std::sin(rot) + dy * std::cos(rot);
        const double aa = a + grow;
        const double bb = b + grow;
        return u * u / (aa * aa) + v * v / (bb * bb) <= 1.0;
    }
};

} // namespace

PhantomCase synth_phantom(const PhantomConfig& config) {
    config.validate();
    Rng rng(mix_seed(config.seed, 0x5048414eULL));
    const Eigen::Index n = config.grid_size;
    const double gs = double(n);
    std::uniform_real_distribution<double> radius(config.min_radius_fraction * gs, config.max_radius_fraction * gs);
    std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);

    LabelGrid2D labels(n, n);
    constexpr int kMaxAttempts = 2000;
    constexpr int kMaxLayouts = 20;
    // Greedy placement can paint itself into a corner; start the layout over when it does.
    auto place_all = [&]() {
        labels.labels.setZero();
        for (int organ = 1; organ <= config.organ_count; ++organ) {
            bool ok = false;
            for (int attempt = 0; attempt < kMaxAttempts && !ok; ++attempt) {
                Ellipse e{0, 0, radius(rng), radius(rng), angle(rng)};
                const double reach = std::max(e.a, e.b) + 1.0;
                if (2.0 * reach >= gs) continue;
                std::uniform_real_distribution<double> centre(reach, gs - 1.0 - reach);
                e.cr = centre(rng);
                e.cc = centre(rng);
                // Reject overlap with a one-pixel gap between organs.
                bool clash = false;
                for (Eigen::Index r = 0; r < n && !clash; ++r) {
                    for (Eigen::Index c = 0; c < n && !clash; ++c) {
                        if (labels.labels(r, c) != 0 && e.contains(double(r), double(c), 1.0)) clash = true;
                    }
                }
                if (clash) continue;
                long count = 0;
                for (Eigen::Index r = 0; r < n; ++r) {
                    for (Eigen::Index c = 0; c < n; ++c) {
                        if (e.contains(double(r), double(c))) ++count;
                    }
                }
                if (count < 4) continue;
                for (Eigen::Index r = 0; r < n; ++r) {
                    for (Eigen::Index c = 0; c < n; ++c) {
                        if (e.contains(double(r), double(c))) labels.labels(r, c) = organ;
                    }
                }
                ok = true;
            }
            if (!ok) return false;
        }
        return true;
    };
    bool placed = false;
    for (int layout = 0; layout < kMaxLayouts && !placed; ++layout) placed = place_all();
    if (!placed) {
        throw GenerationError("synth_phantom: could not place " + std::to_string(config.organ_count) + " organs in " +
                              std::to_string(kMaxLayouts) + " layouts of " + std::to_string(kMaxAttempts) +
                              " attempts each");
    }

    std::vector<OrganStats> assigned;
    for (int organ = 1; organ <= config.organ_count; ++organ) {
        const auto& range = config.suv_ranges[std::min<std::size_t>(std::size_t(organ - 1), config.suv_ranges.size() - 1)];
        std::uniform_real_distribution<double> suv(range.lo, range.hi);
        assigned.push_back({organ, suv(rng), 0});
    }
    for (auto& s : assigned) s.voxel_count = (labels.labels.array() == s.label).count();

    ScalarGrid2D uniform = build_uniform_map(labels, assigned, 0.0);
    ScalarGrid2D target = uniform;
    if (config.texture.magnitude > 0.0) {
        const ScalarGrid2D field = gaussian_lumpy(n, n, config.texture, rng);
        for (const auto& s : assigned) {
            double field_sum = 0.0;
            for (Eigen::Index i = 0; i < field.size(); ++i) {
                if (labels.labels.data()[i] == s.label) field_sum += field.values.data()[i];
            }
            const double field_mean = field_sum / double(s.voxel_count);
            // Clip the mean-removed multiplier, then rescale so the organ mean is exact.
            double mult_sum = 0.0;
            for (Eigen::Index i = 0; i < field.size(); ++i) {
                if (labels.labels.data()[i] != s.label) continue;
                const double m = 1.0 + std::max(field.values.data()[i] - field_mean, -0.9);
                target.values.data()[i] = m;
                mult_sum += m;
            }
            const double scale = s.mean_suv * double(s.voxel_count) / mult_sum;
            for (Eigen::Index i = 0; i < field.size(); ++i) {
                if (labels.labels.data()[i] == s.label) target.values.data()[i] *= scale;
            }
        }
    }
    return {std::move(labels), std::move(target), std::move(uniform), std::move(assigned)};
}

} // namespace padkit
