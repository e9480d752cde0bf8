#pragma once
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace twinlab::trend_fit {

/* ---- data ------------------------------------------------------------------- */

struct CapabilityRecord {
    double year = 0;
    double value = 0;  // strictly positive (log taken)
    std::string modality;
};

struct CapabilitySeries {
    std::vector<CapabilityRecord> records;

    void validate() const;
    static CapabilitySeries from_csv(const std::string& path);  // year,value,modality
    void to_csv(const std::string& path) const;
};

/* ---- trend model --------------------------------------------------------------
 * log(value) = slope * year + intercept + noise, with a conjugate
 * normal-inverse-gamma prior (broad normal on coefficients, broad
 * inverse-gamma on the noise variance), so the posterior is closed form. */

struct TrendFit {
    std::string modality;
    long n_used = 0;

    double slope_mean = 0;       // per-year log growth
    double slope_sd = 0;
    double intercept_mean = 0;   // log value at year 0
    double intercept_sd = 0;

    double doubling_time_mean = 0;  // ln 2 / slope, delta-method SD
    double doubling_time_sd = 0;
    bool doubling_defined = false;  // false when P(slope <= 0) > 0.05

    /* posterior internals, needed by project() */
    double year_center = 0;            // years are centered before regression
    Eigen::Vector2d coeff_mean;        // [centered intercept, slope]
    Eigen::Matrix2d coeff_cov_unit;    // posterior covariance / noise variance
    double noise_shape = 0, noise_rate = 0;  // inverse-gamma posterior (a_n, b_n)

    nlohmann::json to_json() const;
};

/* Fits one modality; errors when the series holds several distinct labels
 * (use fit_trends). `year_min` keeps records with year >= year_min. */
TrendFit fit_trend(const CapabilitySeries& series, std::optional<double> year_min = {});

/* One fit per modality label, in order of first appearance. */
std::vector<TrendFit> fit_trends(const CapabilitySeries& series,
                                 std::optional<double> year_min = {});

/* Keeps a record only if fewer than `lookback` chronologically earlier
 * records of the same modality strictly exceed its value; stable order. */
CapabilitySeries frontier_filter(const CapabilitySeries& series, int lookback);

struct Projection {
    double value_mean = 0;  // exp of the posterior predictive location
    double lo90 = 0, hi90 = 0;  // central 90% interval of the value
};

/* Posterior predictive at `year`; errors when the fit's slope is undefined
 * (doubling_defined false). */
Projection project(const TrendFit& fit, double year);

/* Student-t distribution helpers (exposed for verification) */
double student_t_cdf(double x, double dof);
double student_t_quantile(double p, double dof);

} // namespace twinlab::trend_fit
