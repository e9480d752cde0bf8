#pragma once
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "twinlab/scaling_laws.hpp"

namespace twinlab::lnp_sim {

/* ---- generative model ------------------------------------------------------
 * rate = exp(gain * X w + offset), counts ~ Poisson(rate); X iid standard
 * normal, w ~ Normal(0, 1/M). Defaults gain 0.4, offset 0.1. */

struct PoissonNeuronSpec {
    double gain = 0.4;
    double offset = 0.1;
    Eigen::VectorXd weights;  // length readout_dim, entries drawn with variance 1/M
    int readout_dim = 0;

    void validate() const;
    static PoissonNeuronSpec random(int readout_dim, double gain, double offset,
                                    uint64_t rng_seed);
};

/* Wrong-core mixture: only X_c (dimension known_dim) is exposed to the
 * fitted model; log-rate = gain*alpha^2*(X_c w) + gain*(1-alpha^2)*eps + offset
 * with eps ~ Normal(0, unknown_noise_sd^2). alpha = 1 collapses to the
 * correct core. */
struct CoreMixSpec {
    double alpha = 1.0;
    int known_dim = 0;           // must equal the spec's readout_dim
    double unknown_noise_sd = 1.0;

    void validate(const PoissonNeuronSpec& spec) const;
};

struct SimDataset {
    Eigen::MatrixXd design;      // N x M, the component visible to the model
    Eigen::VectorXd true_rate;   // length N, noise-free rate (full model)
    std::vector<long> counts;    // length N
    long n_obs = 0;
    long clamped_rows = 0;       // rows whose log-rate hit the +-30 guard
};

constexpr double kLogRateClamp = 30.0;

SimDataset generate_lnp(const PoissonNeuronSpec& spec, long n_obs, uint64_t rng_seed);

SimDataset generate_wrong_core(const PoissonNeuronSpec& spec, const CoreMixSpec& mix,
                               long n_obs, uint64_t rng_seed);

/* predicted rate under (gain, offset, weights), same +-30 log-rate guard */
Eigen::VectorXd predict_rate(const Eigen::MatrixXd& design, const Eigen::VectorXd& weights,
                             double gain, double offset, long* clamped = nullptr);

/* ---- MAP fitting ----------------------------------------------------------- */

struct FitControl {
    double tolerance = 1e-8;     // max absolute weight update
    int max_iterations = 100;
    int max_halvings = 20;       // step halvings per iteration
    double divergence_norm = 1e6;
};

struct MapFitResult {
    Eigen::VectorXd weights_hat;
    bool converged = false;
    int iterations = 0;
    double feve_val = std::numeric_limits<double>::quiet_NaN(); // filled by sweeps
    std::vector<double> objective_trace;  // penalized log-likelihood per accepted step
};

/* Poisson MAP by damped Newton / IRLS; gain and offset are known model
 * constants (the paper fixes them), only the readout weights are estimated.
 * Prior: weights ~ Normal(0, prior_variance * I). */
MapFitResult fit_map_poisson(const SimDataset& data, double gain, double offset,
                             double prior_variance, const FitControl& ctrl = {});

/* Same solver on a real-valued response (counts need not be integers); used
 * for fixed-point checks where the response is an exact rate. `init` warm
 * starts the iteration (default: zeros). */
MapFitResult fit_map_poisson(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                             double gain, double offset, double prior_variance,
                             const FitControl& ctrl = {},
                             const Eigen::VectorXd* init = nullptr);

/* Gaussian companion, closed form: w = (X'X + M*noise_variance*I)^-1 X'y
 * (ridge matched to the w ~ Normal(0, 1/M) prior). */
MapFitResult fit_map_gaussian(const Eigen::MatrixXd& design, const Eigen::VectorXd& targets,
                              double noise_variance);

/* 1 - MSE(truth, predicted) / Var(truth); truth is the known noise-free rate */
double evaluate_feve(const Eigen::VectorXd& truth_rate, const Eigen::VectorXd& predicted_rate);

/* ---- scaling sweeps --------------------------------------------------------- */

struct SweepConfig {
    std::vector<long> t_grid;       // strictly increasing training sizes
    int replicates = 20;
    int validation_min = 1000;      // validation size = max(validation_min, 10*M)
    double prior_variance = 0;      // <= 0: matched prior 1/M
    FitControl fit;
    int jobs = 1;
};

/* For each t: fresh data, MAP fit, FEVE on a held-out validation set against
 * the known rate; replicate k of grid point g uses a sub-seed derived from
 * (rng_seed, g, k). */
scaling_laws::ScalingCurve run_scaling_sweep(const PoissonNeuronSpec& spec,
                                             const std::optional<CoreMixSpec>& mix,
                                             const SweepConfig& config, uint64_t rng_seed);

} // namespace twinlab::lnp_sim
