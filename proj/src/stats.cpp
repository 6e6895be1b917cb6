#include "padkit/stats.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "padkit/random.hpp"

namespace padkit::stats {

void PairedSample::validate() const {
    if (x.size() != y.size()) throw ShapeError("paired sample: x and y lengths differ");
    if (x.size() < 2) throw InsufficientData("paired sample: need at least 2 pairs");
    if (!case_ids.empty() && case_ids.size() != x.size()) throw ShapeError("paired sample: case id count mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw InvalidParameter("paired sample: non-finite value");
    }
}

double mean(std::span<const double> v) {
    if (v.empty()) throw InsufficientData("mean of empty sample");
    return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

double variance(std::span<const double> v) {
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / double(v.size());
}

double quantile(std::span<const double> v, double q) {
    if (v.empty()) throw InsufficientData("quantile of empty sample");
    std::vector<double> s(v.begin(), v.end());
    std::sort(s.begin(), s.end());
    const double h = (double(s.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, s.size() - 1);
    return s[lo] + (h - double(lo)) * (s[hi] - s[lo]);
}

namespace {

struct Moments {
    double mx, my, vx, vy, cxy;
};

Moments moments(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw ShapeError("paired statistics: length mismatch");
    if (x.size() < 2) throw InsufficientData("paired statistics: need at least 2 pairs");
    Moments m{mean(x), mean(y), 0, 0, 0};
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - m.mx;
        const double dy = y[i] - m.my;
        m.vx += dx * dx;
        m.vy += dy * dy;
        m.cxy += dx * dy;
    }
    const double n = double(x.size());
    m.vx /= n;
    m.vy /= n;
    m.cxy /= n;
    return m;
}

} // namespace

Maybe pearson_r(std::span<const double> x, std::span<const double> y) {
    const Moments m = moments(x, y);
    if (m.vx <= 0.0 || m.vy <= 0.0) return std::nullopt;
    return m.cxy / std::sqrt(m.vx * m.vy);
}

Maybe lin_ccc(std::span<const double> x, std::span<const double> y) {
    const Moments m = moments(x, y);
    const double denom = m.vx + m.vy + (m.mx - m.my) * (m.mx - m.my);
    if (m.vx <= 0.0 && m.vy <= 0.0) return std::nullopt;
    return 2.0 * m.cxy / denom;
}

std::optional<LinearFit> linreg(std::span<const double> x, std::span<const double> y) {
    const Moments m = moments(x, y);
    if (m.vx <= 0.0) return std::nullopt;
    LinearFit f;
    f.slope = m.cxy / m.vx;
    f.intercept = m.my - f.slope * m.mx;
    f.r = m.vy > 0.0 ? m.cxy / std::sqrt(m.vx * m.vy) : 0.0;
    return f;
}

Maybe cov_metric(std::span<const double> v) {
    const double m = mean(v);
    if (m == 0.0) return std::nullopt;
    return std::sqrt(variance(v)) / m;
}

std::vector<double> fd_edges(std::span<const double> v) {
    if (v.size() < 2) throw InsufficientData("fd_edges: need at least 2 values");
    const auto [mn_it, mx_it] = std::minmax_element(v.begin(), v.end());
    const double mn = *mn_it;
    const double mx = *mx_it;
    const double range = mx - mn;
    if (range == 0.0) return {mn - 0.5, mn + 0.5};
    const double n = double(v.size());
    const double iqr = quantile(v, 0.75) - quantile(v, 0.25);
    double width = iqr > 0.0 ? 2.0 * iqr / std::cbrt(n) : range / std::sqrt(n);
    const auto bins = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(range / width)));
    std::vector<double> edges(bins + 1);
    for (std::size_t i = 0; i <= bins; ++i) edges[i] = mn + double(i) * width;
    if (edges.back() < mx) edges.back() = mx;
    return edges;
}

Histogram histogram(std::span<const double> v, const std::vector<double>& edges) {
    if (edges.size() < 2) throw InvalidParameter("histogram: need at least two edges");
    Histogram h{edges, std::vector<double>(edges.size() - 1, 0.0)};
    for (double x : v) {
        if (x < edges.front() || x > edges.back()) continue;
        auto it = std::upper_bound(edges.begin(), edges.end(), x);
        auto bin = static_cast<std::size_t>(std::distance(edges.begin(), it)) - 1;
        if (bin >= h.counts.size()) bin = h.counts.size() - 1;
        h.counts[bin] += 1.0;
    }
    return h;
}

double js_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw ShapeError("js_divergence: length mismatch");
    double js = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double m = 0.5 * (p[i] + q[i]);
        if (p[i] > 0.0) js += 0.5 * p[i] * std::log2(p[i] / m);
        if (q[i] > 0.0) js += 0.5 * q[i] * std::log2(q[i] / m);
    }
    return std::clamp(js, 0.0, 1.0);
}

double js_distance(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw InsufficientData("js_distance: both samples must be nonempty");
    std::vector<double> pooled(a.begin(), a.end());
    pooled.insert(pooled.end(), b.begin(), b.end());
    const std::vector<double> edges = fd_edges(pooled);
    Histogram ha = histogram(a, edges);
    Histogram hb = histogram(b, edges);
    for (double& c : ha.counts) c /= double(a.size());
    for (double& c : hb.counts) c /= double(b.size());
    return std::sqrt(js_divergence(ha.counts, hb.counts));
}

namespace {

/// Align b to a's case order when both carry ids.
PairedSample align_to(const PairedSample& a, const PairedSample& b) {
    if (a.case_ids.empty() || b.case_ids.empty() || a.case_ids == b.case_ids) {
        if (a.size() != b.size()) throw ShapeError("paired bootstrap: samples differ in length");
        return b;
    }
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < b.case_ids.size(); ++i) index[b.case_ids[i]] = i;
    PairedSample out;
    out.case_ids = a.case_ids;
    for (const auto& id : a.case_ids) {
        const auto it = index.find(id);
        if (it == index.end()) throw InvalidParameter("paired bootstrap: case '" + id + "' missing from second sample");
        out.x.push_back(b.x[it->second]);
        out.y.push_back(b.y[it->second]);
    }
    return out;
}

} // namespace

std::optional<BootstrapResult> paired_bootstrap_ccc_diff(const PairedSample& a_in, const PairedSample& b_in,
                                                         int resamples, std::uint64_t seed) {
    a_in.validate();
    b_in.validate();
    if (resamples < 1) throw InvalidParameter("paired bootstrap: need at least one resample");
    const PairedSample& a = a_in;
    const PairedSample b = align_to(a_in, b_in);
    const Maybe ca = lin_ccc(a);
    const Maybe cb = lin_ccc(b);
    if (!ca || !cb) return std::nullopt;

    const std::size_t n = a.size();
    constexpr int kMaxRedraws = 100;
    std::vector<double> deltas;
    deltas.reserve(std::size_t(resamples));
    std::vector<double> ax(n), ay(n), bx(n), by(n);
    for (int r = 0; r < resamples; ++r) {
        Rng rng(mix_seed(seed, std::uint64_t(r)));
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        bool ok = false;
        for (int attempt = 0; attempt <= kMaxRedraws && !ok; ++attempt) {
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t k = pick(rng);
                ax[i] = a.x[k];
                ay[i] = a.y[k];
                bx[i] = b.x[k];
                by[i] = b.y[k];
            }
            const Maybe ra = lin_ccc(ax, ay);
            const Maybe rb = lin_ccc(bx, by);
            if (ra && rb) {
                deltas.push_back(*ra - *rb);
                ok = true;
            }
        }
        if (!ok) return std::nullopt;
    }
    const double total = double(deltas.size());
    const double le = double(std::count_if(deltas.begin(), deltas.end(), [](double d) { return d <= 0.0; })) / total;
    const double ge = double(std::count_if(deltas.begin(), deltas.end(), [](double d) { return d >= 0.0; })) / total;
    BootstrapResult res;
    res.p_value = std::min(1.0, 2.0 * std::min(le, ge));
    res.observed_diff = *ca - *cb;
    res.ci_lo = quantile(deltas, 0.025);
    res.ci_hi = quantile(deltas, 0.975);
    return res;
}

namespace {

/// Average ranks of |d| (1-based).
std::vector<double> average_ranks(const std::vector<double>& absd) {
    std::vector<std::size_t> order(absd.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return absd[i] < absd[j]; });
    std::vector<double> ranks(absd.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && absd[order[j + 1]] == absd[order[i]]) ++j;
        const double avg = 0.5 * (double(i + 1) + double(j + 1));
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

} // namespace

std::optional<WilcoxonResult> wilcoxon_signed_rank(std::span<const double> diffs, WilcoxonMethod method) {
    std::vector<double> d;
    for (double x : diffs) {
        if (!std::isfinite(x)) throw InvalidParameter("wilcoxon: non-finite difference");
        if (x != 0.0) d.push_back(x);
    }
    if (d.empty()) return std::nullopt;
    std::vector<double> absd(d.size());
    std::transform(d.begin(), d.end(), absd.begin(), [](double x) { return std::abs(x); });
    const std::vector<double> ranks = average_ranks(absd);

    WilcoxonResult r;
    r.n_used = d.size();
    for (std::size_t i = 0; i < d.size(); ++i) (d[i] > 0.0 ? r.w_plus : r.w_minus) += ranks[i];
    r.statistic = std::min(r.w_plus, r.w_minus);

    const bool exact = method == WilcoxonMethod::exact || (method == WilcoxonMethod::automatic && d.size() <= 20);
    r.exact = exact;
    if (exact) {
        if (d.size() > 30) throw InvalidParameter("wilcoxon: exact enumeration limited to n <= 30");
        // Distribution of W+ over all sign assignments; ranks doubled to stay integral.
        std::vector<int> twice(ranks.size());
        int max_sum = 0;
        for (std::size_t i = 0; i < ranks.size(); ++i) {
            twice[i] = static_cast<int>(std::lround(2.0 * ranks[i]));
            max_sum += twice[i];
        }
        std::vector<double> ways(std::size_t(max_sum + 1), 0.0);
        ways[0] = 1.0;
        for (int w : twice) {
            for (int s = max_sum; s >= w; --s) ways[std::size_t(s)] += ways[std::size_t(s - w)];
        }
        const double total = std::ldexp(1.0, int(ranks.size()));
        const auto obs = static_cast<int>(std::lround(2.0 * r.w_plus));
        double le = 0.0;
        double ge = 0.0;
        for (int s = 0; s <= max_sum; ++s) {
            if (s <= obs) le += ways[std::size_t(s)];
            if (s >= obs) ge += ways[std::size_t(s)];
        }
        r.p_value = std::min(1.0, 2.0 * std::min(le, ge) / total);
    } else {
        const double n = double(d.size());
        const double mu = n * (n + 1.0) / 4.0;
        double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0;
        std::map<double, int> ties;
        for (double a : absd) ++ties[a];
        for (const auto& [_, c] : ties) var -= (double(c) * c * c - c) / 48.0;
        if (var <= 0.0) {
            r.p_value = 1.0;
        } else {
            const double z = std::max(0.0, std::abs(r.w_plus - mu) - 0.5) / std::sqrt(var);
            r.p_value = std::min(1.0, 2.0 * normal_sf(z));
        }
    }
    return r;
}

double dice(const LabelGrid2D& a, const LabelGrid2D& b) {
    require_same_shape(a.labels, b.labels, "dice");
    std::int64_t na = 0, nb = 0, both = 0;
    for (Eigen::Index i = 0; i < a.labels.size(); ++i) {
        const bool x = a.labels.data()[i] != 0;
        const bool y = b.labels.data()[i] != 0;
        na += x;
        nb += y;
        both += (x && y);
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * double(both) / double(na + nb);
}

Maybe rvd(const LabelGrid2D& pred, const LabelGrid2D& ref) {
    require_same_shape(pred.labels, ref.labels, "rvd");
    const auto np = (pred.labels.array() != 0).count();
    const auto nr = (ref.labels.array() != 0).count();
    if (nr == 0) return std::nullopt;
    return (double(np) - double(nr)) / double(nr);
}

double bonferroni_threshold(double alpha, int m) {
    if (m < 1) throw InvalidParameter("bonferroni: m must be >= 1");
    return alpha / double(m);
}

std::string format_number(double v) {
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}

void write_report_csv(std::ostream& os, const std::vector<ReportRow>& rows) {
    auto cell = [](const Maybe& m) { return m ? format_number(*m) : std::string("NA"); };
    os << "metric,value,p,ci_lo,ci_hi\n";
    for (const auto& r : rows) {
        os << r.metric << ',' << cell(r.value) << ',' << cell(r.p) << ',' << cell(r.ci_lo) << ',' << cell(r.ci_hi) << '\n';
    }
}

} // namespace padkit::stats
