#include "twinlab/trend_fit.hpp"

#include <algorithm>
#include <cmath>

#include "twinlab/common.hpp"
#include "twinlab/csv.hpp"

namespace twinlab::trend_fit {

/* ---- Student-t via the regularized incomplete beta function --------------------- */

namespace {

double beta_cont_fraction(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kTiny = 1e-300, kEps = 1e-14;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) return h;
    }
    throw std::runtime_error("incomplete beta continued fraction did not converge");
}

double betainc(double a, double b, double x) {
    check(a > 0 && b > 0, "betainc: shape parameters must be positive");
    check(x >= 0 && x <= 1, "betainc: x must lie in [0,1]");
    if (x == 0) return 0;
    if (x == 1) return 1;
    const double bt = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                               a * std::log(x) + b * std::log1p(-x));
    if (x < (a + 1.0) / (a + b + 2.0)) return bt * beta_cont_fraction(a, b, x) / a;
    return 1.0 - bt * beta_cont_fraction(b, a, 1.0 - x) / b;
}

} // namespace

double student_t_cdf(double x, double dof) {
    check(dof > 0, "student_t_cdf: dof must be positive");
    if (!std::isfinite(x)) return x > 0 ? 1.0 : 0.0;
    const double ib = betainc(dof / 2.0, 0.5, dof / (dof + x * x));
    return x >= 0 ? 1.0 - 0.5 * ib : 0.5 * ib;
}

double student_t_quantile(double p, double dof) {
    check(p > 0 && p < 1, "student_t_quantile: p must lie in (0,1)");
    check(dof > 0, "student_t_quantile: dof must be positive");
    double lo = -1.0, hi = 1.0;
    while (student_t_cdf(lo, dof) > p) lo *= 2.0;
    while (student_t_cdf(hi, dof) < p) hi *= 2.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (student_t_cdf(mid, dof) < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

/* ---- series ------------------------------------------------------------------- */

void CapabilitySeries::validate() const {
    for (const auto& r : records) {
        check(std::isfinite(r.year), "CapabilitySeries: non-finite year");
        check(std::isfinite(r.value) && r.value > 0,
              "CapabilitySeries: values must be strictly positive");
    }
}

CapabilitySeries CapabilitySeries::from_csv(const std::string& path) {
    const csv::Table table = csv::read(path);
    const size_t cy = table.column("year"), cv = table.column("value");
    const size_t cm = table.column("modality");
    CapabilitySeries series;
    for (const auto& row : table.rows)
        series.records.push_back(
            {csv::parse_double(row.at(cy)), csv::parse_double(row.at(cv)), row.at(cm)});
    series.validate();
    return series;
}

void CapabilitySeries::to_csv(const std::string& path) const {
    validate();
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : records)
        rows.push_back({csv::format_double(r.year), csv::format_double(r.value), r.modality});
    csv::write(path, {"year", "value", "modality"}, rows);
}

/* ---- fitting -------------------------------------------------------------------
 * Conjugate normal-inverse-gamma posterior for z = log(value) on centered
 * years: coefficients ~ N(0, 1e6 I) given the noise variance, noise variance
 * ~ InvGamma(0.01, 0.01). */

namespace {

constexpr double kPriorCoeffVar = 1e6;
constexpr double kPriorShape = 0.01;
constexpr double kPriorRate = 0.01;

TrendFit fit_one(const std::vector<const CapabilityRecord*>& recs, const std::string& label) {
    check(recs.size() >= 3, "fit_trend: modality '" + label + "' needs >= 3 records");
    const long n = long(recs.size());

    double year_center = 0;
    for (const auto* r : recs) year_center += r->year;
    year_center /= double(n);

    Eigen::MatrixXd x(n, 2);
    Eigen::VectorXd z(n);
    for (long i = 0; i < n; ++i) {
        x(i, 0) = 1.0;
        x(i, 1) = recs[size_t(i)]->year - year_center;
        z[i] = std::log(recs[size_t(i)]->value);
    }

    const Eigen::Matrix2d v0_inv = Eigen::Matrix2d::Identity() / kPriorCoeffVar;
    const Eigen::Matrix2d vn_inv = v0_inv + x.transpose() * x;
    const Eigen::Matrix2d vn = vn_inv.inverse();
    const Eigen::Vector2d m = vn * (x.transpose() * z);
    const double a_n = kPriorShape + double(n) / 2.0;
    const double b_n = kPriorRate + 0.5 * (z.squaredNorm() - m.dot(vn_inv * m));
    check_runtime(b_n > 0, "fit_trend: degenerate noise posterior");
    const double dof = 2.0 * a_n;
    const double noise_var_mean = b_n / a_n;  // scale^2 of the marginal t

    TrendFit fit;
    fit.modality = label;
    fit.n_used = n;
    fit.year_center = year_center;
    fit.coeff_mean = m;
    fit.coeff_cov_unit = vn;
    fit.noise_shape = a_n;
    fit.noise_rate = b_n;

    const double t_var_factor = dof > 2 ? dof / (dof - 2.0) : std::numeric_limits<double>::infinity();
    const double slope_scale = std::sqrt(noise_var_mean * vn(1, 1));
    fit.slope_mean = m[1];
    fit.slope_sd = slope_scale * std::sqrt(t_var_factor);

    fit.intercept_mean = m[0] - m[1] * year_center;
    const double unit_var =
        vn(0, 0) + year_center * year_center * vn(1, 1) - 2.0 * year_center * vn(0, 1);
    fit.intercept_sd = std::sqrt(noise_var_mean * std::max(0.0, unit_var) * t_var_factor);

    const double p_nonpositive = student_t_cdf((0.0 - fit.slope_mean) / slope_scale, dof);
    fit.doubling_defined = fit.slope_mean > 0 && p_nonpositive <= 0.05;
    if (fit.doubling_defined) {
        fit.doubling_time_mean = std::log(2.0) / fit.slope_mean;
        fit.doubling_time_sd =
            std::log(2.0) * fit.slope_sd / (fit.slope_mean * fit.slope_mean);
    } else {
        fit.doubling_time_mean = std::numeric_limits<double>::quiet_NaN();
        fit.doubling_time_sd = std::numeric_limits<double>::quiet_NaN();
    }
    return fit;
}

std::vector<const CapabilityRecord*> apply_year_filter(const CapabilitySeries& series,
                                                       std::optional<double> year_min) {
    std::vector<const CapabilityRecord*> out;
    for (const auto& r : series.records)
        if (!year_min || r.year >= *year_min) out.push_back(&r);
    return out;
}

} // namespace

TrendFit fit_trend(const CapabilitySeries& series, std::optional<double> year_min) {
    series.validate();
    const auto recs = apply_year_filter(series, year_min);
    check(!recs.empty(), "fit_trend: no records after the year filter");
    const std::string& label = recs.front()->modality;
    for (const auto* r : recs)
        check(r->modality == label,
              "fit_trend: series holds several modalities; use fit_trends");
    return fit_one(recs, label);
}

std::vector<TrendFit> fit_trends(const CapabilitySeries& series, std::optional<double> year_min) {
    series.validate();
    const auto recs = apply_year_filter(series, year_min);
    std::vector<std::string> order;
    for (const auto* r : recs)
        if (std::find(order.begin(), order.end(), r->modality) == order.end())
            order.push_back(r->modality);
    check(!order.empty(), "fit_trends: no records after the year filter");
    std::vector<TrendFit> fits;
    for (const auto& label : order) {
        std::vector<const CapabilityRecord*> group;
        for (const auto* r : recs)
            if (r->modality == label) group.push_back(r);
        fits.push_back(fit_one(group, label));
    }
    return fits;
}

CapabilitySeries frontier_filter(const CapabilitySeries& series, int lookback) {
    check(lookback >= 1, "frontier_filter: lookback must be >= 1");
    series.validate();
    CapabilitySeries out;
    for (const auto& r : series.records) {
        int dominated_by = 0;
        for (const auto& other : series.records)
            if (other.modality == r.modality && other.year < r.year && other.value > r.value)
                ++dominated_by;
        if (dominated_by < lookback) out.records.push_back(r);
    }
    return out;
}

Projection project(const TrendFit& fit, double year) {
    check(std::isfinite(year), "project: year must be finite");
    check(fit.doubling_defined, "project: the fit's slope is undefined");
    const Eigen::Vector2d xv(1.0, year - fit.year_center);
    const double loc = fit.coeff_mean.dot(xv);
    const double dof = 2.0 * fit.noise_shape;
    const double scale =
        std::sqrt(fit.noise_rate / fit.noise_shape * (1.0 + xv.dot(fit.coeff_cov_unit * xv)));
    const double tq = student_t_quantile(0.95, dof);
    Projection p;
    p.value_mean = std::exp(loc);
    p.lo90 = std::exp(loc - tq * scale);
    p.hi90 = std::exp(loc + tq * scale);
    return p;
}

nlohmann::json TrendFit::to_json() const {
    nlohmann::json j = {{"modality", modality},
                        {"n_used", n_used},
                        {"slope_mean", slope_mean},
                        {"slope_sd", slope_sd},
                        {"intercept_mean", intercept_mean},
                        {"intercept_sd", intercept_sd},
                        {"doubling_defined", doubling_defined},
                        {"year_center", year_center}};
    if (doubling_defined) {
        j["doubling_time_mean"] = doubling_time_mean;
        j["doubling_time_sd"] = doubling_time_sd;
    } else {
        j["doubling_time_mean"] = nullptr;
        j["doubling_time_sd"] = nullptr;
    }
    return j;
}

} // namespace twinlab::trend_fit
