#include "twinlab/scaling_laws.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <limits>

#include <Eigen/Dense>

#include "twinlab/common.hpp"
#include "twinlab/csv.hpp"
#include "twinlab/lnp_sim.hpp"
#include "twinlab/parallel.hpp"
#include "twinlab/rng.hpp"

namespace twinlab::scaling_laws {

double sigmoid(double x) {
    check(std::isfinite(x), "sigmoid: non-finite input");
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double logit(double p) {
    check(p > 0.0 && p < 1.0, "logit: argument must lie in (0,1)");
    return std::log(p / (1.0 - p));
}

/* ---- ScalingCurve ---------------------------------------------------------- */

void ScalingCurve::validate() const {
    double prev = -std::numeric_limits<double>::infinity();
    for (const auto& p : points) {
        check(p.t > 0 && std::isfinite(p.t), "ScalingCurve: amounts must be positive");
        check(p.t > prev, "ScalingCurve: amounts must be strictly increasing");
        prev = p.t;
        if (!p.missing) {
            check(std::isfinite(p.feve_mean) && p.feve_mean <= 1.0 + 1e-12,
                  "ScalingCurve: feve_mean must be finite and <= 1");
            check(p.feve_se >= 0, "ScalingCurve: feve_se must be non-negative");
        }
    }
}

std::vector<ScalingCurve::Point> ScalingCurve::usable() const {
    std::vector<Point> out;
    for (const auto& p : points)
        if (!p.missing) out.push_back(p);
    return out;
}

void ScalingCurve::to_csv(const std::string& path) const {
    validate();
    std::vector<std::vector<std::string>> rows;
    for (const auto& p : points) {
        if (p.missing) continue;
        rows.push_back({csv::format_double(p.t), csv::format_double(p.feve_mean),
                        csv::format_double(p.feve_se), std::to_string(p.n_replicates)});
    }
    csv::write(path, {"t", "feve_mean", "feve_se", "n_replicates"}, rows);
}

ScalingCurve ScalingCurve::from_csv(const std::string& path) {
    const csv::Table table = csv::read(path);
    ScalingCurve curve;
    const size_t ct = table.column("t");
    const size_t cm = table.column("feve_mean");
    const bool has_se = std::count(table.header.begin(), table.header.end(), "feve_se") > 0;
    const bool has_n = std::count(table.header.begin(), table.header.end(), "n_replicates") > 0;
    for (const auto& row : table.rows) {
        Point p;
        p.t = csv::parse_double(row.at(ct));
        p.feve_mean = csv::parse_double(row.at(cm));
        if (has_se) p.feve_se = csv::parse_double(row.at(table.column("feve_se")));
        if (has_n) p.n_replicates = int(csv::parse_double(row.at(table.column("n_replicates"))));
        curve.points.push_back(p);
    }
    curve.validate();
    return curve;
}

nlohmann::json ScalingCurve::to_json() const {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : points)
        pts.push_back({{"t", p.t},
                       {"feve_mean", p.feve_mean},
                       {"feve_se", p.feve_se},
                       {"n_replicates", p.n_replicates},
                       {"missing", p.missing}});
    return {{"points", pts}, {"units_label", units_label}, {"group_label", group_label}};
}

/* ---- law forms ------------------------------------------------------------- */

const char* law_form_name(LawForm f) {
    switch (f) {
        case LawForm::BASIC: return "basic";
        case LawForm::READOUT: return "readout";
        case LawForm::WRONG_CORE: return "wrong_core";
        case LawForm::LEARNED_CORE: return "learned_core";
        case LawForm::ANALYTIC: return "analytic";
    }
    return "?";
}

LawForm law_form_from_name(const std::string& name) {
    for (LawForm f : {LawForm::BASIC, LawForm::READOUT, LawForm::WRONG_CORE,
                      LawForm::LEARNED_CORE, LawForm::ANALYTIC})
        if (name == law_form_name(f)) return f;
    throw std::invalid_argument("unknown law form: '" + name + "'");
}

namespace {

struct FormModel {
    LawForm form;
    bool free_asymptote = false; // WRONG_CORE with fitted R2

    int n_params() const {
        switch (form) {
            case LawForm::BASIC: return 2;
            case LawForm::READOUT: return 3;
            case LawForm::WRONG_CORE: return 3; // fixed: a,b,c / free: a,c,theta_r
            case LawForm::LEARNED_CORE: return 5;
            case LawForm::ANALYTIC: return 0;
        }
        return 0;
    }

    std::vector<std::string> param_names() const {
        switch (form) {
            case LawForm::BASIC: return {"a", "c"};
            case LawForm::READOUT: return {"a", "b", "c"};
            case LawForm::WRONG_CORE:
                return free_asymptote ? std::vector<std::string>{"a", "c", "r2_core"}
                                      : std::vector<std::string>{"a", "b", "c"};
            case LawForm::LEARNED_CORE: return {"a", "b", "c", "a_core", "c_core"};
            case LawForm::ANALYTIC: return {};
        }
        return {};
    }

    /* th is the raw optimizer vector; for the free asymptote th[2] is the
     * logit of R2 so the constraint R2 in (0,1) is built in */
    double eval(const double* th, double t, double cov) const {
        const double lt = std::log(t);
        switch (form) {
            case LawForm::BASIC:
                return sigmoid(th[0] * lt + th[1]);
            case LawForm::READOUT:
                return sigmoid(th[0] * lt + th[1] * std::log(cov) + th[2]);
            case LawForm::WRONG_CORE: {
                if (free_asymptote) {
                    const double r2 = sigmoid(th[2]);
                    return r2 * sigmoid(th[0] * lt + th[1]);
                }
                const double r2 = cov;
                return r2 * sigmoid(th[0] * lt + th[1] * std::log(r2) + th[2]);
            }
            case LawForm::LEARNED_CORE: {
                /* clamp away from 0 so a wild trial step cannot push log(r2)
                 * to -inf and blow up the residual evaluation */
                const double r2 =
                    std::max(sigmoid(th[3] * std::log(t * cov) + th[4]), 1e-300);
                return r2 * sigmoid(th[0] * lt + th[1] * std::log(r2) + th[2]);
            }
            case LawForm::ANALYTIC:
                return 0; // handled by predict_law directly
        }
        return 0;
    }
};

struct LmOutcome {
    Eigen::VectorXd th;
    double ssr = std::numeric_limits<double>::infinity();
    bool converged = false;
};

/* damped least squares with Marquardt diagonal scaling and a numeric
 * central-difference Jacobian */
LmOutcome levenberg_marquardt(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& resid,
                              Eigen::VectorXd th, int max_iterations) {
    const int p = int(th.size());
    auto ssr_of = [&](const Eigen::VectorXd& v) -> double {
        const Eigen::VectorXd r = resid(v);
        const double s = r.squaredNorm();
        return std::isfinite(s) ? s : std::numeric_limits<double>::infinity();
    };

    Eigen::VectorXd r = resid(th);
    double ssr = r.squaredNorm();
    if (!std::isfinite(ssr)) return {th, std::numeric_limits<double>::infinity(), false};

    double lambda = 1e-3;
    bool converged = false;
    for (int iter = 0; iter < max_iterations; ++iter) {
        Eigen::MatrixXd J(r.size(), p);
        for (int j = 0; j < p; ++j) {
            const double h = 1e-6 * std::max(1.0, std::fabs(th[j]));
            Eigen::VectorXd lo = th, hi = th;
            lo[j] -= h;
            hi[j] += h;
            J.col(j) = (resid(hi) - resid(lo)) / (2.0 * h);
        }
        const Eigen::MatrixXd A = J.transpose() * J;
        const Eigen::VectorXd g = J.transpose() * r;
        if (g.lpNorm<Eigen::Infinity>() < 1e-13 * (1.0 + ssr)) {
            converged = true;
            break;
        }
        bool accepted = false;
        for (int inner = 0; inner < 40; ++inner) {
            Eigen::MatrixXd Ad = A;
            for (int j = 0; j < p; ++j)
                Ad(j, j) += lambda * std::max(A(j, j), 1e-12);
            const Eigen::VectorXd step = Ad.ldlt().solve(-g);
            if (!step.allFinite()) {
                lambda *= 10.0;
                continue;
            }
            const Eigen::VectorXd th_try = th + step;
            const double ssr_try = ssr_of(th_try);
            if (ssr_try <= ssr) {
                const double step_size = step.lpNorm<Eigen::Infinity>();
                th = th_try;
                r = resid(th);
                const double improvement = ssr - ssr_try;
                ssr = ssr_try;
                lambda = std::max(lambda / 3.0, 1e-12);
                accepted = true;
                if (step_size < 1e-11 * (1.0 + th.lpNorm<Eigen::Infinity>()) ||
                    improvement < 1e-15 * (1.0 + ssr)) {
                    converged = true;
                }
                break;
            }
            lambda *= 3.0;
            if (lambda > 1e14) break;
        }
        if (!accepted || converged) {
            converged = converged || accepted;
            break;
        }
    }
    return {th, ssr, converged};
}

struct PreparedData {
    std::vector<double> t, y, w, cov;
    bool has_cov = false;
};

PreparedData prepare(const std::vector<FitPoint>& points, LawForm form, bool weighted,
                     bool* free_asymptote) {
    PreparedData d;
    int with_cov = 0;
    for (const auto& p : points) {
        check(p.t > 0 && std::isfinite(p.t), "fit_law: amounts must be positive");
        check(std::isfinite(p.y), "fit_law: non-finite FEVE value");
        check(p.se >= 0, "fit_law: negative standard error");
        d.t.push_back(p.t);
        d.y.push_back(p.y);
        d.w.push_back(weighted && p.se > 0 ? 1.0 / p.se : 1.0);
        d.cov.push_back(p.covariate.value_or(std::numeric_limits<double>::quiet_NaN()));
        if (p.covariate) ++with_cov;
    }
    d.has_cov = with_cov == int(points.size());
    check(with_cov == 0 || d.has_cov,
          "fit_law: covariate must be supplied for every point or for none");

    *free_asymptote = false;
    switch (form) {
        case LawForm::READOUT:
            check(d.has_cov, "fit_law: READOUT requires the readout_params covariate");
            break;
        case LawForm::LEARNED_CORE:
            check(d.has_cov, "fit_law: LEARNED_CORE requires the neurons covariate");
            break;
        case LawForm::WRONG_CORE:
            *free_asymptote = !d.has_cov; // absent covariate -> fit the asymptote
            break;
        case LawForm::BASIC:
        case LawForm::ANALYTIC:
            break;
    }
    if (d.has_cov)
        for (double c : d.cov)
            check(c > 0 && std::isfinite(c), "fit_law: covariates must be positive");
    return d;
}

/* least squares of z on columns (1, x1[, x2]) */
Eigen::VectorXd tiny_ols(const std::vector<double>& z, const std::vector<double>& x1,
                         const std::vector<double>* x2) {
    const int n = int(z.size());
    const int p = x2 ? 3 : 2;
    Eigen::MatrixXd X(n, p);
    Eigen::VectorXd zv(n);
    for (int i = 0; i < n; ++i) {
        X(i, 0) = 1.0;
        X(i, 1) = x1[size_t(i)];
        if (x2) X(i, 2) = (*x2)[size_t(i)];
        zv[i] = z[size_t(i)];
    }
    return (X.transpose() * X + 1e-12 * Eigen::MatrixXd::Identity(p, p))
        .ldlt()
        .solve(X.transpose() * zv);
}

double clip01(double y) { return std::min(0.98, std::max(0.02, y)); }

std::vector<Eigen::VectorXd> build_starts(const PreparedData& d, const FormModel& model,
                                          const FitOptions& opts) {
    std::vector<Eigen::VectorXd> starts;
    const size_t n = d.t.size();
    std::vector<double> lt(n);
    for (size_t i = 0; i < n; ++i) lt[i] = std::log(d.t[i]);
    const double lt_med = lt[n / 2];
    double y_med = d.y[n / 2];

    auto push = [&](std::initializer_list<double> v) {
        Eigen::VectorXd th(model.n_params());
        int i = 0;
        for (double x : v) th[i++] = x;
        starts.push_back(th);
    };

    switch (model.form) {
        case LawForm::BASIC: {
            std::vector<double> z(n);
            for (size_t i = 0; i < n; ++i) z[i] = logit(clip01(d.y[i]));
            const Eigen::VectorXd beta = tiny_ols(z, lt, nullptr);
            push({beta[1], beta[0]});
            for (double a : {0.25, 0.5, 1.0, 2.0, 4.0})
                push({a, logit(clip01(y_med)) - a * lt_med});
            break;
        }
        case LawForm::READOUT: {
            std::vector<double> z(n), lc(n);
            for (size_t i = 0; i < n; ++i) {
                z[i] = logit(clip01(d.y[i]));
                lc[i] = std::log(d.cov[i]);
            }
            const Eigen::VectorXd beta = tiny_ols(z, lt, &lc);
            push({beta[1], beta[2], beta[0]});
            for (double a : {0.5, 1.0, 2.0})
                for (double b : {-1.0, 1.0})
                    push({a, b, logit(clip01(y_med)) - a * lt_med});
            break;
        }
        case LawForm::WRONG_CORE: {
            if (model.free_asymptote) {
                const double ymax = *std::max_element(d.y.begin(), d.y.end());
                for (double r2 : {std::min(0.995, std::max(0.05, 1.05 * ymax)),
                                  std::min(0.995, std::max(0.05, 1.3 * ymax)), 0.95}) {
                    std::vector<double> z(n);
                    for (size_t i = 0; i < n; ++i) z[i] = logit(clip01(d.y[i] / r2));
                    const Eigen::VectorXd beta = tiny_ols(z, lt, nullptr);
                    push({beta[1], beta[0], logit(r2)});
                }
                for (double a : {0.5, 1.0, 2.0})
                    push({a, logit(clip01(y_med)) - a * lt_med, 0.0});
            } else {
                std::vector<double> z(n), lr(n);
                for (size_t i = 0; i < n; ++i) {
                    z[i] = logit(clip01(d.y[i] / d.cov[i]));
                    lr[i] = std::log(d.cov[i]);
                }
                const Eigen::VectorXd beta = tiny_ols(z, lt, &lr);
                push({beta[1], beta[2], beta[0]});
                for (double a : {0.5, 1.0, 2.0})
                    for (double b : {-0.5, 0.5})
                        push({a, b, logit(clip01(y_med)) - a * lt_med});
            }
            break;
        }
        case LawForm::LEARNED_CORE: {
            std::vector<double> z(n);
            for (size_t i = 0; i < n; ++i) z[i] = logit(clip01(d.y[i]));
            const Eigen::VectorXd beta = tiny_ols(z, lt, nullptr);
            for (auto [ac, cc] : {std::pair{0.05, 0.0}, {0.15, -1.0}, {0.3, 0.0},
                                  {0.1, 1.0}, {0.5, -2.0}})
                push({beta[1], 0.0, beta[0], ac, cc});
            push({1.0, 0.0, logit(clip01(y_med)) - lt_med, 0.1, 0.0});
            break;
        }
        case LawForm::ANALYTIC:
            break;
    }

    /* seeded jitter copies to fill the requested number of starts */
    rng::Stream jitter = rng::Stream::seeded(rng::derive(opts.seed, {rng::tag("starts")}));
    const size_t base = starts.size();
    while (int(starts.size()) < opts.multistarts && base > 0) {
        Eigen::VectorXd th = starts[starts.size() % base];
        for (int j = 0; j < th.size(); ++j) th[j] += 0.3 * (jitter.uniform01() - 0.5) * (1.0 + std::fabs(th[j]));
        starts.push_back(th);
    }
    if (int(starts.size()) > std::max(opts.multistarts, 1))
        starts.resize(size_t(std::max(opts.multistarts, 1)));
    return starts;
}

} // namespace

SigmoidLawFit fit_law_points(const std::vector<FitPoint>& points, LawForm form,
                             const FitOptions& opts) {
    check(form != LawForm::ANALYTIC,
          "fit_law: ANALYTIC has no free parameters to fit; use analytic_feve");
    FormModel model{form, false};
    PreparedData d = prepare(points, form, opts.weighted, &model.free_asymptote);
    check(int(points.size()) >= model.n_params() + 1,
          "fit_law: need at least parameter count + 1 points");

    const size_t n = d.t.size();
    auto resid = [&](const Eigen::VectorXd& th) {
        Eigen::VectorXd r(n);
        for (size_t i = 0; i < n; ++i)
            r[long(i)] = (model.eval(th.data(), d.t[i], d.cov[i]) - d.y[i]) * d.w[i];
        return r;
    };

    std::vector<Eigen::VectorXd> starts = build_starts(d, model, opts);
    if (opts.init) {
        check(int(opts.init->size()) == model.n_params(),
              "fit_law: init has the wrong parameter count for this form");
        Eigen::VectorXd th(model.n_params());
        for (int j = 0; j < model.n_params(); ++j) th[j] = (*opts.init)[size_t(j)];
        starts.insert(starts.begin(), th);
    }

    LmOutcome best;
    bool any_converged = false;
    for (const auto& th0 : starts) {
        const LmOutcome out = levenberg_marquardt(resid, th0, opts.max_iterations);
        const bool better = out.converged == any_converged ? out.ssr < best.ssr : out.converged;
        if ((out.converged && !any_converged) || (better && out.th.allFinite())) {
            if (out.th.allFinite()) {
                best = out;
                any_converged = any_converged || out.converged;
            }
        }
    }
    check_runtime(best.th.size() == model.n_params(), "fit_law: every start failed to evaluate");

    SigmoidLawFit fit;
    fit.form = form;
    fit.converged = best.converged;
    const auto names = model.param_names();
    for (int j = 0; j < model.n_params(); ++j) {
        double v = best.th[j];
        if (model.free_asymptote && names[size_t(j)] == "r2_core") v = sigmoid(v);
        fit.params[names[size_t(j)]] = v;
    }
    if (model.free_asymptote) fit.params["b"] = 0.0; // alias of c; pinned by design

    /* degeneracy: flat law or asymptote pinned at a bound */
    if (std::fabs(best.th[0]) < 1e-3) {
        fit.degenerate = true;
        fit.converged = false;
        fit.note = "degenerate: |a| < 1e-3 (no dependence on log amount)";
    }
    if (model.free_asymptote && std::fabs(best.th[2]) > 12.0) {
        fit.degenerate = true;
        fit.converged = false;
        fit.note = "degenerate: asymptote pinned at a bound";
    }

    /* unweighted goodness of fit on the fitting data */
    double ss_res = 0, ss_tot = 0, y_bar = 0;
    for (double y : d.y) y_bar += y;
    y_bar /= double(n);
    for (size_t i = 0; i < n; ++i) {
        const double f = model.eval(best.th.data(), d.t[i], d.cov[i]);
        ss_res += (d.y[i] - f) * (d.y[i] - f);
        ss_tot += (d.y[i] - y_bar) * (d.y[i] - y_bar);
    }
    fit.goodness_r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : (ss_res == 0 ? 1.0 : 0.0);
    return fit;
}

SigmoidLawFit fit_law(const ScalingCurve& curve, LawForm form,
                      const std::vector<double>* covariates, const FitOptions& opts) {
    curve.validate();
    if (covariates)
        check(covariates->size() == curve.points.size(),
              "fit_law: covariates must align with curve points");
    std::vector<FitPoint> pts;
    for (size_t i = 0; i < curve.points.size(); ++i) {
        const auto& p = curve.points[i];
        if (p.missing) continue;
        FitPoint fp;
        fp.t = p.t;
        fp.y = p.feve_mean;
        fp.se = p.feve_se;
        if (covariates) fp.covariate = (*covariates)[i];
        pts.push_back(fp);
    }
    check(pts.size() >= 3, "fit_law: need at least 3 usable points");
    return fit_law_points(pts, form, opts);
}

nlohmann::json SigmoidLawFit::to_json() const {
    return {{"form", law_form_name(form)},
            {"params", params},
            {"goodness_r2", goodness_r2},
            {"converged", converged},
            {"degenerate", degenerate},
            {"note", note}};
}

namespace {

double param(const SigmoidLawFit& fit, const std::string& name) {
    const auto it = fit.params.find(name);
    check(it != fit.params.end(), "law fit is missing parameter '" + name + "'");
    return it->second;
}

double covariate_of(const std::map<std::string, double>& covs, const std::string& name) {
    const auto it = covs.find(name);
    check(it != covs.end(), "missing covariate '" + name + "'");
    check(it->second > 0 && std::isfinite(it->second),
          "covariate '" + name + "' must be positive");
    return it->second;
}

} // namespace

double predict_law(const SigmoidLawFit& fit, double amount,
                   const std::map<std::string, double>& covariates) {
    check(amount > 0 && std::isfinite(amount), "predict_law: amount must be positive");
    const double lt = std::log(amount);
    switch (fit.form) {
        case LawForm::BASIC:
            return sigmoid(param(fit, "a") * lt + param(fit, "c"));
        case LawForm::READOUT:
            return sigmoid(param(fit, "a") * lt +
                           param(fit, "b") * std::log(covariate_of(covariates, "readout_params")) +
                           param(fit, "c"));
        case LawForm::WRONG_CORE: {
            const double r2 = fit.params.count("r2_core") ? param(fit, "r2_core")
                                                          : covariate_of(covariates, "r2_core");
            check(r2 > 0 && r2 <= 1, "r2_core must lie in (0,1]");
            const double b_term = r2 < 1.0 ? param(fit, "b") * std::log(r2) : 0.0;
            return r2 * sigmoid(param(fit, "a") * lt + b_term + param(fit, "c"));
        }
        case LawForm::LEARNED_CORE: {
            const double n = covariate_of(covariates, "neurons");
            const double r2 = sigmoid(param(fit, "a_core") * std::log(amount * n) +
                                      param(fit, "c_core"));
            return r2 * sigmoid(param(fit, "a") * lt + param(fit, "b") * std::log(r2) +
                                param(fit, "c"));
        }
        case LawForm::ANALYTIC: {
            const double m = param(fit, "m");
            const double s2 = param(fit, "s2");
            return amount / (amount + m * s2);
        }
    }
    throw std::logic_error("predict_law: unhandled form");
}

double time_to_target(const SigmoidLawFit& fit, double target_feve,
                      const std::map<std::string, double>& covariates) {
    check(fit.converged, "time_to_target: fit did not converge");
    check(target_feve > 0 && target_feve < 1, "time_to_target: target must lie in (0,1)");
    switch (fit.form) {
        case LawForm::BASIC: {
            const double a = param(fit, "a");
            check(std::fabs(a) > 1e-12, "time_to_target: flat law");
            return std::exp((logit(target_feve) - param(fit, "c")) / a);
        }
        case LawForm::READOUT: {
            const double a = param(fit, "a");
            check(std::fabs(a) > 1e-12, "time_to_target: flat law");
            const double lp = std::log(covariate_of(covariates, "readout_params"));
            return std::exp((logit(target_feve) - param(fit, "b") * lp - param(fit, "c")) / a);
        }
        case LawForm::WRONG_CORE: {
            const double r2 = fit.params.count("r2_core") ? param(fit, "r2_core")
                                                          : covariate_of(covariates, "r2_core");
            check(target_feve < r2,
                  "unreachable target: at or above the asymptote R2_core");
            const double a = param(fit, "a");
            check(std::fabs(a) > 1e-12, "time_to_target: flat law");
            const double b_term = r2 < 1.0 ? param(fit, "b") * std::log(r2) : 0.0;
            return std::exp((logit(target_feve / r2) - b_term - param(fit, "c")) / a);
        }
        case LawForm::ANALYTIC: {
            const double m = param(fit, "m");
            const double s2 = param(fit, "s2");
            return target_feve / (1.0 - target_feve) * m * s2;
        }
        case LawForm::LEARNED_CORE: {
            auto f = [&](double log_t) { return predict_law(fit, std::exp(log_t), covariates); };
            double lo = std::log(1e-9), hi = std::log(1e15);
            check(f(lo) < target_feve, "time_to_target: target below the law at t -> 0");
            check(f(hi) > target_feve,
                  "unreachable target: at or above the law's asymptote");
            for (int i = 0; i < 200; ++i) {
                const double mid = 0.5 * (lo + hi);
                (f(mid) < target_feve ? lo : hi) = mid;
            }
            return std::exp(0.5 * (lo + hi));
        }
    }
    throw std::logic_error("time_to_target: unhandled form");
}

/* ---- closed form ------------------------------------------------------------ */

double analytic_feve(double n_obs, double readout_dim, double noise_variance) {
    check(n_obs > 0 && readout_dim > 0 && noise_variance > 0,
          "analytic_feve: all arguments must be positive");
    const double direct = n_obs / (n_obs + readout_dim * noise_variance);
    const double via_sigmoid =
        sigmoid(std::log(n_obs) - std::log(readout_dim) - std::log(noise_variance));
    check_runtime(std::fabs(direct - via_sigmoid) <= 1e-12,
                  "analytic_feve: closed form and log-sigmoid form disagree");
    return direct;
}

SigmoidLawFit make_analytic_fit(double readout_dim, double noise_variance) {
    check(readout_dim > 0 && noise_variance > 0, "make_analytic_fit: positive arguments required");
    SigmoidLawFit fit;
    fit.form = LawForm::ANALYTIC;
    fit.params = {{"m", readout_dim}, {"s2", noise_variance}};
    fit.converged = true;
    fit.goodness_r2 = 1.0;
    return fit;
}

double wrong_core_asymptote(double gain, double alpha, double weight_norm2) {
    check(alpha >= 0 && alpha <= 1, "wrong_core_asymptote: alpha must lie in [0,1]");
    const double s2 = gain * gain * alpha * alpha * alpha * alpha * weight_norm2;
    const double z2 = gain * gain * (1 - alpha * alpha) * (1 - alpha * alpha);
    if (z2 == 0) return 1.0;
    return std::expm1(s2) / std::expm1(s2 + z2);
}

/* ---- theory vs simulation ---------------------------------------------------- */

std::vector<std::array<double, 3>> default_theory_grid() {
    std::vector<std::array<double, 3>> grid;
    for (double n : {10, 30, 100, 300, 1000})
        for (double m : {3, 10, 30})
            for (double s2 : {0.3, 1.0, 3.0}) grid.push_back({n, m, s2});
    return grid;
}

TheoryComparison compare_theory_simulation(const std::vector<std::array<double, 3>>& grid,
                                           int replicates, uint64_t rng_seed,
                                           const TheoryOptions& opts) {
    check(!grid.empty(), "compare_theory_simulation: empty grid");
    check(replicates >= 1, "compare_theory_simulation: replicates must be >= 1");

    TheoryComparison cmp;
    cmp.cells.resize(grid.size());
    cmp.tolerance = opts.tolerance;
    cmp.replicates = replicates;
    cmp.seed = rng_seed;

    parallel_for(grid.size(), opts.jobs, [&](size_t gi) {
        const double nd = grid[gi][0], md = grid[gi][1], s2 = grid[gi][2];
        check(nd >= 1 && md >= 1 && s2 > 0, "compare_theory_simulation: bad grid cell");
        const int N = int(nd), M = int(md);
        const double lam = md * s2;
        const uint64_t cell_seed = rng::derive(
            rng_seed, {rng::tag("theory"), uint64_t(N), uint64_t(M), std::bit_cast<uint64_t>(s2)});

        double num_sum = 0, den_sum = 0, tr_sum = 0;
        for (int r = 0; r < replicates; ++r) {
            rng::Stream gw = rng::Stream::seeded(rng::derive(cell_seed, {rng::tag("w"), uint64_t(r)}));
            rng::Stream gx = rng::Stream::seeded(rng::derive(cell_seed, {rng::tag("x"), uint64_t(r)}));
            rng::Stream gn = rng::Stream::seeded(rng::derive(cell_seed, {rng::tag("noise"), uint64_t(r)}));
            rng::Stream gv = rng::Stream::seeded(rng::derive(cell_seed, {rng::tag("val"), uint64_t(r)}));

            Eigen::VectorXd w(M);
            const double w_sd = 1.0 / std::sqrt(md);
            for (int j = 0; j < M; ++j) w[j] = w_sd * rng::normal(gw);
            Eigen::MatrixXd X(N, M);
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < M; ++j) X(i, j) = rng::normal(gx);
            Eigen::VectorXd y = X * w;
            const double noise_sd = std::sqrt(s2);
            for (int i = 0; i < N; ++i) y[i] += noise_sd * rng::normal(gn);

            const lnp_sim::MapFitResult fit = lnp_sim::fit_map_gaussian(X, y, s2);
            const Eigen::VectorXd& what = fit.weights_hat;

            /* exact expected risk of this replicate's design, for the
             * exact_theory column */
            const Eigen::MatrixXd G =
                X.transpose() * X + lam * Eigen::MatrixXd::Identity(M, M);
            tr_sum += G.llt().solve(Eigen::MatrixXd::Identity(M, M)).trace();

            if (opts.exact_validation) {
                num_sum += (w - what).squaredNorm();
                den_sum += w.squaredNorm();
            } else {
                const int nv = opts.validation_n;
                double mse = 0, pow2 = 0;
                Eigen::VectorXd xrow(M);
                for (int i = 0; i < nv; ++i) {
                    for (int j = 0; j < M; ++j) xrow[j] = rng::normal(gv);
                    const double yv = xrow.dot(w) + noise_sd * rng::normal(gv);
                    const double pv = xrow.dot(what);
                    mse += (yv - pv) * (yv - pv);
                    pow2 += yv * yv;
                }
                num_sum += mse / nv - s2;   // noise-subtracted residual power
                den_sum += pow2 / nv - s2;  // noise-subtracted signal power
            }
        }

        TheoryCell cell;
        cell.n_obs = nd;
        cell.readout_dim = md;
        cell.noise_variance = s2;
        cell.analytic = analytic_feve(nd, md, s2);
        cell.simulated = 1.0 - num_sum / den_sum;
        cell.exact_theory = 1.0 - s2 * (tr_sum / replicates);
        cell.gap = std::fabs(cell.analytic - cell.simulated);
        cell.classic = nd >= opts.classic_ratio * md;
        cell.breach = cell.gap > opts.tolerance;
        cmp.cells[gi] = cell;
    });

    cmp.all_pass = std::none_of(cmp.cells.begin(), cmp.cells.end(),
                                [](const TheoryCell& c) { return c.breach; });
    cmp.classic_pass = std::none_of(cmp.cells.begin(), cmp.cells.end(),
                                    [](const TheoryCell& c) { return c.classic && c.breach; });
    return cmp;
}

std::string TheoryComparison::table() const {
    std::string out;
    char line[160];
    std::snprintf(line, sizeof line, "%6s %4s %6s %10s %10s %12s %8s  %s\n", "N", "M", "s2",
                  "analytic", "simulated", "exact_theory", "gap", "status");
    out += line;
    for (const auto& c : cells) {
        std::snprintf(line, sizeof line, "%6.0f %4.0f %6.2f %10.4f %10.4f %12.4f %8.4f  %s%s\n",
                      c.n_obs, c.readout_dim, c.noise_variance, c.analytic, c.simulated,
                      c.exact_theory, c.gap, c.breach ? "BREACH" : "ok",
                      c.classic ? "" : " (outside classic regime)");
        out += line;
    }
    return out;
}

nlohmann::json TheoryComparison::to_json() const {
    nlohmann::json cells_json = nlohmann::json::array();
    for (const auto& c : cells)
        cells_json.push_back({{"n_obs", c.n_obs},
                              {"readout_dim", c.readout_dim},
                              {"noise_variance", c.noise_variance},
                              {"analytic", c.analytic},
                              {"simulated", c.simulated},
                              {"exact_theory", c.exact_theory},
                              {"gap", c.gap},
                              {"classic", c.classic},
                              {"breach", c.breach}});
    return {{"cells", cells_json},  {"tolerance", tolerance},       {"replicates", replicates},
            {"seed", seed},         {"all_pass", all_pass},         {"classic_pass", classic_pass}};
}

} // namespace twinlab::scaling_laws
