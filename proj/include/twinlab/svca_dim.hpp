#pragma once
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace twinlab::svca_dim {

/* ---- data -------------------------------------------------------------------
 * Population activity, neurons x time. Each neuron's trace is z-scored on
 * ingest, so downstream statistics are invariant to per-neuron scaling. */

struct PopulationRecording {
    Eigen::MatrixXd activity;                  // neurons x time, z-scored
    std::optional<Eigen::MatrixXd> positions;  // neurons x 3 spatial coordinates
    std::optional<double> sample_rate_hz;

    /* z-scores each row; errors on non-finite entries, zero-variance neurons,
     * fewer than 4 neurons or 4 timepoints, or mismatched positions */
    static PopulationRecording ingest(Eigen::MatrixXd raw_activity,
                                      std::optional<Eigen::MatrixXd> positions = {},
                                      std::optional<double> sample_rate_hz = {});
    void validate() const;
    long n_neurons() const { return activity.rows(); }
    long n_timepoints() const { return activity.cols(); }
};

/* Synthetic benchmark data: `rank` shared latent signals mixed into every
 * neuron plus independent noise scaled so per-neuron signal/noise variance
 * ratio is `snr`. rank = 0 gives a pure-noise recording. */
PopulationRecording make_planted_recording(long n_neurons, long n_timepoints, int rank,
                                           double snr, uint64_t rng_seed);

/* Headerless numeric CSV (rows x columns). */
Eigen::MatrixXd load_matrix_csv(const std::string& path);
void save_matrix_csv(const std::string& path, const Eigen::MatrixXd& m);

/* Binary matrix container: row-major float64 data file plus a JSON sidecar
 * {"data": <relative path>, "rows": R, "cols": C, "dtype": "float64",
 *  "positions": <optional CSV path>}. Pass the sidecar path. */
PopulationRecording load_recording(const std::string& path);
void save_recording_binary(const PopulationRecording& rec, const std::string& sidecar_path);

/* ---- core analysis ----------------------------------------------------------- */

struct SvcaOptions {
    double bin_width = 0;      // spatial bin width along the first axis; <= 0: auto (>= 8 bins)
    long block_length = 0;     // time-split block; <= 0: min(72, max(1, T/8))
    int n_surrogates = 2;      // circular-shift shuffle controls
    double threshold_sds = 4.0;
    int smoothing_window = 9;  // moving-average window on the surrogate mean
    int oversample = 10;       // randomized SVD oversampling
    int power_iterations = 2;  // randomized SVD power iterations
    bool normalize_total = false;  // divide by total test variance instead of per-dimension
};

struct PopulationSplit {
    std::vector<long> group1, group2;           // neuron indices
    std::vector<long> train_times, test_times;  // timepoint indices
};

/* Neurons split by alternating spatial bins along the first position axis
 * when positions exist (alternating a random permutation otherwise); time
 * split into alternating contiguous blocks. Splits are disjoint and jointly
 * exhaustive. */
PopulationSplit split_population(const PopulationRecording& rec, uint64_t rng_seed,
                                 const SvcaOptions& opts = {});

struct SvcaSpectrum {
    std::vector<double> reliable_variance;  // per dimension, on the test half
    std::vector<double> shuffle_mean;       // smoothed surrogate mean per dimension
    std::vector<double> shuffle_sd;         // pooled surrogate SD (same value per dimension)
    double threshold_sds = 4.0;
    int n_reliable = 0;
    int rank = 0;  // dimensions actually estimated (< requested when rank-deficient)

    void to_csv(const std::string& path) const;
    nlohmann::json to_json() const;
};

/* Cross-validated shared-variance spectrum: randomized SVD of the train-half
 * cross-covariance between the two neuron groups; per-dimension reliable
 * variance measured on the test half; null level from circularly time-shifted
 * surrogates pushed through the identical pipeline. */
SvcaSpectrum svca(const PopulationRecording& rec, int max_dims, uint64_t rng_seed,
                  const SvcaOptions& opts = {});

struct SweepPoint {
    long size = 0;
    double mean_reliable = 0;
    double se = 0;
    int repeats = 0;
};

struct DimensionSweep {
    std::vector<SweepPoint> points;
    std::vector<std::string> warnings;

    void to_csv(const std::string& path) const;
    nlohmann::json to_json() const;
};

/* For each population size: `repeats` random neuron subsets, svca on each,
 * mean and SE of n_reliable. Duplicate sizes are dropped with a warning. */
DimensionSweep dimension_sweep(const PopulationRecording& rec, std::vector<long> sizes,
                               int repeats, uint64_t rng_seed, const SvcaOptions& opts = {},
                               int jobs = 1);

/* ---- power law ---------------------------------------------------------------- */

struct PowerLawFit {
    double prefactor = 0;  // alpha in dims = alpha * size^beta
    double exponent = 0;   // beta
    double r2_loglog = 0;

    nlohmann::json to_json() const;
};

/* OLS of log(dims) on log(size); needs >= 3 points, all coordinates positive. */
PowerLawFit fit_power_law(const std::vector<std::pair<double, double>>& size_dims);

} // namespace twinlab::svca_dim
