#include "twinlab/lnp_sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Dense>

#include "twinlab/common.hpp"
#include "twinlab/parallel.hpp"
#include "twinlab/rng.hpp"

namespace twinlab::lnp_sim {

void PoissonNeuronSpec::validate() const {
    check(std::isfinite(gain) && gain > 0, "PoissonNeuronSpec: gain must be positive");
    check(std::isfinite(offset), "PoissonNeuronSpec: offset must be finite");
    check(readout_dim >= 1, "PoissonNeuronSpec: readout_dim must be >= 1");
    check(weights.size() == readout_dim,
          "PoissonNeuronSpec: weights length must equal readout_dim");
    check(weights.allFinite(), "PoissonNeuronSpec: weights must be finite");
}

PoissonNeuronSpec PoissonNeuronSpec::random(int readout_dim, double gain, double offset,
                                            uint64_t seed) {
    check(readout_dim >= 1, "PoissonNeuronSpec::random: readout_dim must be >= 1");
    PoissonNeuronSpec spec;
    spec.gain = gain;
    spec.offset = offset;
    spec.readout_dim = readout_dim;
    spec.weights.resize(readout_dim);
    rng::Stream g = rng::Stream::seeded(rng::derive(seed, {rng::tag("weights")}));
    const double sd = 1.0 / std::sqrt(double(readout_dim));
    for (int j = 0; j < readout_dim; ++j) spec.weights[j] = sd * rng::normal(g);
    spec.validate();
    return spec;
}

void CoreMixSpec::validate(const PoissonNeuronSpec& spec) const {
    check(alpha >= 0 && alpha <= 1, "CoreMixSpec: alpha must lie in [0,1]");
    check(known_dim == spec.readout_dim,
          "CoreMixSpec: known_dim must match the neuron's readout_dim");
    check(unknown_noise_sd >= 0, "CoreMixSpec: unknown_noise_sd must be >= 0");
}

namespace {

/* draws counts for one dataset given the log rate before clamping */
long sample_counts(SimDataset& data, const Eigen::VectorXd& log_rate, rng::Stream& gy) {
    long clamped = 0;
    const long n = log_rate.size();
    data.true_rate.resize(n);
    data.counts.resize(size_t(n));
    for (long i = 0; i < n; ++i) {
        double eta = log_rate[i];
        check_runtime(std::isfinite(eta),
                      "generate: non-finite log rate at row " + std::to_string(i));
        if (std::fabs(eta) > kLogRateClamp) {
            eta = std::clamp(eta, -kLogRateClamp, kLogRateClamp);
            ++clamped;
        }
        const double mu = std::exp(eta);
        data.true_rate[i] = mu;
        data.counts[size_t(i)] = rng::poisson(gy, mu);
    }
    return clamped;
}

} // namespace

SimDataset generate_lnp(const PoissonNeuronSpec& spec, long n_obs, uint64_t seed) {
    spec.validate();
    check(n_obs >= 1, "generate_lnp: n_obs must be >= 1");
    SimDataset data;
    data.n_obs = n_obs;
    const int M = spec.readout_dim;
    data.design.resize(n_obs, M);
    rng::Stream gx = rng::Stream::seeded(rng::derive(seed, {rng::tag("design")}));
    rng::Stream gy = rng::Stream::seeded(rng::derive(seed, {rng::tag("counts")}));
    for (long i = 0; i < n_obs; ++i)
        for (int j = 0; j < M; ++j) data.design(i, j) = rng::normal(gx);
    const Eigen::VectorXd eta =
        (spec.gain * (data.design * spec.weights)).array() + spec.offset;
    data.clamped_rows = sample_counts(data, eta, gy);
    return data;
}

SimDataset generate_wrong_core(const PoissonNeuronSpec& spec, const CoreMixSpec& mix,
                               long n_obs, uint64_t seed) {
    spec.validate();
    mix.validate(spec);
    check(n_obs >= 1, "generate_wrong_core: n_obs must be >= 1");
    SimDataset data;
    data.n_obs = n_obs;
    const int M = spec.readout_dim;
    data.design.resize(n_obs, M);
    rng::Stream gx = rng::Stream::seeded(rng::derive(seed, {rng::tag("design")}));
    rng::Stream ge = rng::Stream::seeded(rng::derive(seed, {rng::tag("eps")}));
    rng::Stream gy = rng::Stream::seeded(rng::derive(seed, {rng::tag("counts")}));
    for (long i = 0; i < n_obs; ++i)
        for (int j = 0; j < M; ++j) data.design(i, j) = rng::normal(gx);

    const double a2 = mix.alpha * mix.alpha;
    Eigen::VectorXd eta(n_obs);
    const Eigen::VectorXd core = data.design * spec.weights;
    for (long i = 0; i < n_obs; ++i) {
        const double eps = mix.unknown_noise_sd * rng::normal(ge);
        eta[i] = spec.gain * a2 * core[i] + spec.gain * (1.0 - a2) * eps + spec.offset;
    }
    data.clamped_rows = sample_counts(data, eta, gy);
    return data;
}

Eigen::VectorXd predict_rate(const Eigen::MatrixXd& design, const Eigen::VectorXd& weights,
                             double gain, double offset, long* clamped) {
    check(design.cols() == weights.size(), "predict_rate: design/weights shape mismatch");
    Eigen::VectorXd eta = (gain * (design * weights)).array() + offset;
    long count = 0;
    for (long i = 0; i < eta.size(); ++i) {
        if (std::fabs(eta[i]) > kLogRateClamp) {
            eta[i] = std::clamp(eta[i], -kLogRateClamp, kLogRateClamp);
            ++count;
        }
        eta[i] = std::exp(eta[i]);
    }
    if (clamped) *clamped = count;
    return eta;
}

/* ---- Poisson MAP via damped Newton (IRLS) ----------------------------------- */

MapFitResult fit_map_poisson(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                             double gain, double offset, double prior_variance,
                             const FitControl& ctrl, const Eigen::VectorXd* init) {
    check(design.rows() >= 1 && design.rows() == response.size(),
          "fit_map_poisson: empty or inconsistent dataset");
    check(prior_variance > 0, "fit_map_poisson: prior_variance must be positive");
    check(gain != 0, "fit_map_poisson: gain must be nonzero");
    check(response.minCoeff() >= 0, "fit_map_poisson: negative response");
    check(design.allFinite(), "fit_map_poisson: non-finite design entry");

    const long N = design.rows();
    const int M = int(design.cols());
    const Eigen::MatrixXd& X = design;
    const Eigen::VectorXd& y = response;

    /* MAP objective: sum_i [y_i eta_i - exp(eta_i)] - |w|^2 / (2 v),
     * eta_i = gain * x_i . w + offset.  Large |eta| is clamped only to keep
     * exp() finite; a solution out there is treated as divergence below. */
    constexpr double kEtaCap = 300.0;
    auto objective = [&](const Eigen::VectorXd& w, Eigen::VectorXd* mu_out) {
        Eigen::VectorXd eta = (gain * (X * w)).array() + offset;
        double obj = 0;
        Eigen::VectorXd mu(N);
        for (long i = 0; i < N; ++i) {
            const double e = std::clamp(eta[i], -kEtaCap, kEtaCap);
            mu[i] = std::exp(e);
            obj += y[i] * e - mu[i];
        }
        obj -= w.squaredNorm() / (2.0 * prior_variance);
        if (mu_out) *mu_out = std::move(mu);
        return obj;
    };

    MapFitResult result;
    Eigen::VectorXd w = Eigen::VectorXd::Zero(M);
    if (init) {
        check(init->size() == M, "fit_map_poisson: init has the wrong length");
        w = *init;
    }
    Eigen::VectorXd mu;
    double obj = objective(w, &mu);
    result.objective_trace.push_back(obj);

    for (int iter = 0; iter < ctrl.max_iterations; ++iter) {
        result.iterations = iter + 1;
        const Eigen::VectorXd grad =
            gain * (X.transpose() * (y - mu)) - w / prior_variance;
        Eigen::MatrixXd H = (gain * gain) * (X.transpose() * mu.asDiagonal() * X);
        H.diagonal().array() += 1.0 / prior_variance;
        const Eigen::VectorXd step = H.ldlt().solve(grad);
        check_runtime(step.allFinite(), "fit_map_poisson: Newton step failed");

        double scale = 1.0;
        bool improved = false;
        for (int h = 0; h <= ctrl.max_halvings; ++h) {
            const Eigen::VectorXd w_try = w + scale * step;
            Eigen::VectorXd mu_try;
            const double obj_try = objective(w_try, &mu_try);
            if (std::isfinite(obj_try) && obj_try >= obj) {
                const double delta = (scale * step).lpNorm<Eigen::Infinity>();
                w = w_try;
                mu = std::move(mu_try);
                obj = obj_try;
                result.objective_trace.push_back(obj);
                improved = true;
                if (delta < ctrl.tolerance) result.converged = true;
                break;
            }
            scale *= 0.5;
        }
        if (w.norm() > ctrl.divergence_norm) {
            result.converged = false;
            break;
        }
        if (result.converged || !improved) break;
    }
    result.weights_hat = w;
    return result;
}

MapFitResult fit_map_poisson(const SimDataset& data, double gain, double offset,
                             double prior_variance, const FitControl& ctrl) {
    check(data.n_obs >= 1 && data.design.rows() == data.n_obs,
          "fit_map_poisson: empty or inconsistent dataset");
    check(long(data.counts.size()) == data.n_obs,
          "fit_map_poisson: counts length must equal n_obs");
    Eigen::VectorXd y(data.n_obs);
    for (long i = 0; i < data.n_obs; ++i) {
        check(data.counts[size_t(i)] >= 0, "fit_map_poisson: negative count");
        y[i] = double(data.counts[size_t(i)]);
    }
    return fit_map_poisson(data.design, y, gain, offset, prior_variance, ctrl, nullptr);
}

MapFitResult fit_map_gaussian(const Eigen::MatrixXd& design, const Eigen::VectorXd& targets,
                              double noise_variance) {
    check(design.rows() == targets.size(), "fit_map_gaussian: design/targets shape mismatch");
    check(design.rows() >= 1, "fit_map_gaussian: empty design");
    check(noise_variance > 0, "fit_map_gaussian: noise_variance must be positive");
    const int M = int(design.cols());

    /* prior w ~ N(0, I/M): ridge (X'X + M s2 I) w = X'y */
    Eigen::MatrixXd G = design.transpose() * design;
    G.diagonal().array() += double(M) * noise_variance;
    const Eigen::VectorXd rhs = design.transpose() * targets;

    MapFitResult result;
    Eigen::LLT<Eigen::MatrixXd> llt(G);
    if (llt.info() == Eigen::Success) {
        result.weights_hat = llt.solve(rhs);
    } else {
        result.weights_hat = G.ldlt().solve(rhs);
    }
    check_runtime(result.weights_hat.allFinite(), "fit_map_gaussian: solve failed");
    result.converged = true;
    result.iterations = 1;
    return result;
}

double evaluate_feve(const Eigen::VectorXd& truth, const Eigen::VectorXd& predicted) {
    check(truth.size() == predicted.size() && truth.size() >= 2,
          "evaluate_feve: need two aligned vectors with >= 2 entries");
    const double mean = truth.mean();
    double var = 0, mse = 0;
    for (long i = 0; i < truth.size(); ++i) {
        var += (truth[i] - mean) * (truth[i] - mean);
        mse += (truth[i] - predicted[i]) * (truth[i] - predicted[i]);
    }
    var /= double(truth.size());
    mse /= double(truth.size());
    check(var > 0, "evaluate_feve: ground-truth signal has zero variance");
    return 1.0 - mse / var;
}

/* ---- scaling sweep ----------------------------------------------------------- */

scaling_laws::ScalingCurve run_scaling_sweep(const PoissonNeuronSpec& spec,
                                             const std::optional<CoreMixSpec>& mix,
                                             const SweepConfig& config, uint64_t seed) {
    spec.validate();
    if (mix) mix->validate(spec);
    check(!config.t_grid.empty(), "run_scaling_sweep: empty t grid");
    check(config.replicates >= 2, "run_scaling_sweep: need >= 2 replicates for a standard error");
    double prev = 0;
    for (long t : config.t_grid) {
        check(t >= 2, "run_scaling_sweep: every sample size must be >= 2");
        check(double(t) > prev, "run_scaling_sweep: t grid must be strictly increasing");
        prev = double(t);
    }
    const double prior_variance =
        config.prior_variance > 0 ? config.prior_variance : 1.0 / double(spec.readout_dim);

    const size_t G = config.t_grid.size();
    const size_t R = size_t(config.replicates);
    std::vector<double> feve(G * R, std::numeric_limits<double>::quiet_NaN());
    std::vector<char> ok(G * R, 0);

    parallel_for(G * R, config.jobs, [&](size_t idx) {
        const size_t gi = idx / R, k = idx % R;
        const long t = config.t_grid[gi];
        const uint64_t sub =
            rng::derive(seed, {rng::tag("sweep"), uint64_t(gi), uint64_t(k)});
        const SimDataset train = mix ? generate_wrong_core(spec, *mix, t, sub)
                                     : generate_lnp(spec, t, sub);
        const MapFitResult fit =
            fit_map_poisson(train, spec.gain, spec.offset, prior_variance, config.fit);
        if (!fit.converged) return;

        /* FEVE against the true firing rate on fresh stimuli */
        const long n_val = std::max<long>(config.validation_min, 10L * spec.readout_dim);
        const uint64_t vseed = rng::derive(sub, {rng::tag("validation")});
        rng::Stream gv = rng::Stream::seeded(rng::derive(vseed, {rng::tag("design")}));
        Eigen::MatrixXd Xv(n_val, spec.readout_dim);
        for (long i = 0; i < n_val; ++i)
            for (int j = 0; j < spec.readout_dim; ++j) Xv(i, j) = rng::normal(gv);
        const Eigen::VectorXd rate_true =
            predict_rate(Xv, spec.weights, spec.gain, spec.offset);
        const Eigen::VectorXd rate_hat =
            predict_rate(Xv, fit.weights_hat, spec.gain, spec.offset);
        feve[idx] = evaluate_feve(rate_true, rate_hat);
        ok[idx] = 1;
    });

    scaling_laws::ScalingCurve curve;
    curve.units_label = "observations";
    for (size_t gi = 0; gi < G; ++gi) {
        scaling_laws::ScalingCurve::Point p;
        p.t = double(config.t_grid[gi]);
        double sum = 0, sum2 = 0;
        int n = 0;
        for (size_t k = 0; k < R; ++k) {
            if (!ok[gi * R + k]) continue;
            const double v = feve[gi * R + k];
            sum += v;
            sum2 += v * v;
            ++n;
        }
        p.n_replicates = n;
        if (n >= 2) {
            p.feve_mean = sum / n;
            const double var = std::max(0.0, (sum2 - sum * sum / n) / (n - 1));
            p.feve_se = std::sqrt(var / n);
        } else {
            p.missing = true;
        }
        curve.points.push_back(p);
    }
    curve.validate();
    return curve;
}

} // namespace twinlab::lnp_sim
