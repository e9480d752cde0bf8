#include "twinlab/svca_dim.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "twinlab/common.hpp"
#include "twinlab/csv.hpp"
#include "twinlab/parallel.hpp"
#include "twinlab/rng.hpp"

namespace twinlab::svca_dim {

/* ---- recording ---------------------------------------------------------------- */

void PopulationRecording::validate() const {
    check(activity.rows() >= 4 && activity.cols() >= 4,
          "PopulationRecording: need >= 4 neurons and >= 4 timepoints");
    check(activity.allFinite(), "PopulationRecording: non-finite activity entry");
    if (positions) {
        check(positions->rows() == activity.rows(),
              "PopulationRecording: positions row count must match neuron count");
        check(positions->cols() >= 1 && positions->cols() <= 3,
              "PopulationRecording: positions need 1 to 3 coordinate columns");
        check(positions->allFinite(), "PopulationRecording: non-finite position entry");
    }
    if (sample_rate_hz) check(*sample_rate_hz > 0, "PopulationRecording: sample rate must be positive");
}

PopulationRecording PopulationRecording::ingest(Eigen::MatrixXd raw_activity,
                                                std::optional<Eigen::MatrixXd> positions,
                                                std::optional<double> sample_rate_hz) {
    PopulationRecording rec;
    rec.activity = std::move(raw_activity);
    rec.positions = std::move(positions);
    rec.sample_rate_hz = sample_rate_hz;
    check(rec.activity.rows() >= 4 && rec.activity.cols() >= 4,
          "ingest: need >= 4 neurons and >= 4 timepoints");
    check(rec.activity.allFinite(), "ingest: non-finite activity entry");
    const long T = rec.activity.cols();
    for (long i = 0; i < rec.activity.rows(); ++i) {
        const double mean = rec.activity.row(i).mean();
        rec.activity.row(i).array() -= mean;
        const double sd = std::sqrt(rec.activity.row(i).squaredNorm() / double(T));
        check(sd > 0, "ingest: neuron " + std::to_string(i) + " has zero variance");
        rec.activity.row(i) /= sd;
    }
    rec.validate();
    return rec;
}

PopulationRecording make_planted_recording(long n_neurons, long n_timepoints, int rank,
                                           double snr, uint64_t rng_seed) {
    check(n_neurons >= 4 && n_timepoints >= 4, "make_planted_recording: too small");
    check(rank >= 0, "make_planted_recording: rank must be >= 0");
    check(rank == 0 || snr > 0, "make_planted_recording: snr must be positive");
    Eigen::MatrixXd act(n_neurons, n_timepoints);
    rng::Stream gn = rng::Stream::seeded(rng::derive(rng_seed, {rng::tag("noise")}));
    const double noise_sd = rank > 0 ? std::sqrt(double(rank) / snr) : 1.0;
    for (long i = 0; i < n_neurons; ++i)
        for (long t = 0; t < n_timepoints; ++t) act(i, t) = noise_sd * rng::normal(gn);
    if (rank > 0) {
        rng::Stream gw = rng::Stream::seeded(rng::derive(rng_seed, {rng::tag("mix")}));
        rng::Stream gl = rng::Stream::seeded(rng::derive(rng_seed, {rng::tag("latents")}));
        Eigen::MatrixXd W(n_neurons, rank), L(rank, n_timepoints);
        for (long i = 0; i < n_neurons; ++i)
            for (int r = 0; r < rank; ++r) W(i, r) = rng::normal(gw);
        for (int r = 0; r < rank; ++r)
            for (long t = 0; t < n_timepoints; ++t) L(r, t) = rng::normal(gl);
        act += W * L;
    }
    return PopulationRecording::ingest(std::move(act));
}

/* ---- splitting ----------------------------------------------------------------- */

PopulationSplit split_population(const PopulationRecording& rec, uint64_t rng_seed,
                                 const SvcaOptions& opts) {
    rec.validate();
    const long n = rec.n_neurons();
    const long T = rec.n_timepoints();
    PopulationSplit split;

    bool spatial = rec.positions.has_value();
    if (spatial) {
        const Eigen::VectorXd x = rec.positions->col(0);
        const double lo = x.minCoeff(), hi = x.maxCoeff();
        double width = opts.bin_width;
        if (width <= 0) width = (hi - lo) / 8.0;  // auto: 8 bins along the first axis
        if (width <= 0) {
            spatial = false;  // degenerate extent: fall back to a random split
        } else {
            for (long i = 0; i < n; ++i) {
                const long bin = long(std::floor((x[i] - lo) / width));
                (bin % 2 == 0 ? split.group1 : split.group2).push_back(i);
            }
        }
    }
    if (!spatial) {
        std::vector<long> perm(size_t(n), 0L);
        std::iota(perm.begin(), perm.end(), 0);
        rng::Stream g = rng::Stream::seeded(rng::derive(rng_seed, {rng::tag("neuron_perm")}));
        for (long i = n - 1; i > 0; --i)
            std::swap(perm[size_t(i)], perm[size_t(g.below(uint64_t(i) + 1))]);
        for (long i = 0; i < n; ++i)
            (i % 2 == 0 ? split.group1 : split.group2).push_back(perm[size_t(i)]);
        std::sort(split.group1.begin(), split.group1.end());
        std::sort(split.group2.begin(), split.group2.end());
    }
    check(split.group1.size() >= 2 && split.group2.size() >= 2,
          "split_population: fewer than 2 neurons per group");

    long block = opts.block_length;
    if (block <= 0) block = std::min<long>(72, std::max<long>(1, T / 8));
    for (long t = 0; t < T; ++t)
        ((t / block) % 2 == 0 ? split.train_times : split.test_times).push_back(t);
    check(split.train_times.size() >= 2 && split.test_times.size() >= 2,
          "split_population: fewer than 2 timepoints per time half");
    return split;
}

/* ---- randomized SVD -------------------------------------------------------------- */

namespace {

Eigen::MatrixXd orthonormalize(const Eigen::MatrixXd& m) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
    return qr.householderQ() * Eigen::MatrixXd::Identity(m.rows(), std::min(m.rows(), m.cols()));
}

struct Rsvd {
    Eigen::MatrixXd u, v;
    Eigen::VectorXd s;
};

Rsvd randomized_svd(const Eigen::MatrixXd& m, int rank, int oversample, int power_iterations,
                    rng::Stream& g) {
    const long l = std::min<long>(rank + oversample, std::min(m.rows(), m.cols()));
    Eigen::MatrixXd omega(m.cols(), l);
    for (long i = 0; i < omega.rows(); ++i)
        for (long j = 0; j < l; ++j) omega(i, j) = rng::normal(g);
    Eigen::MatrixXd q = orthonormalize(m * omega);
    for (int it = 0; it < power_iterations; ++it) {
        q = orthonormalize(m.transpose() * q);
        q = orthonormalize(m * q);
    }
    const Eigen::MatrixXd b = q.transpose() * m;  // l x cols
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(b, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const long k = std::min<long>(rank, svd.singularValues().size());
    Rsvd out;
    out.u = q * svd.matrixU().leftCols(k);
    out.v = svd.matrixV().leftCols(k);
    out.s = svd.singularValues().head(k);
    return out;
}

Eigen::MatrixXd submatrix(const Eigen::MatrixXd& m, const std::vector<long>& rows,
                          const std::vector<long>& cols) {
    Eigen::MatrixXd out(long(rows.size()), long(cols.size()));
    for (size_t i = 0; i < rows.size(); ++i)
        for (size_t j = 0; j < cols.size(); ++j) out(long(i), long(j)) = m(rows[i], cols[j]);
    return out;
}

void center_rows(Eigen::MatrixXd& m) {
    for (long i = 0; i < m.rows(); ++i) m.row(i).array() -= m.row(i).mean();
}

/* reliable variance per dimension for one activity matrix under a fixed split */
std::vector<double> spectrum_pass(const Eigen::MatrixXd& activity, const PopulationSplit& split,
                                  int max_dims, const SvcaOptions& opts, uint64_t rsvd_seed,
                                  int* rank_out) {
    Eigen::MatrixXd a_train = submatrix(activity, split.group1, split.train_times);
    Eigen::MatrixXd b_train = submatrix(activity, split.group2, split.train_times);
    center_rows(a_train);
    center_rows(b_train);
    const double denom_train = double(split.train_times.size()) - 1.0;
    const Eigen::MatrixXd cross = a_train * b_train.transpose() / denom_train;

    rng::Stream g = rng::Stream::seeded(rsvd_seed);
    const Rsvd svd = randomized_svd(cross, max_dims, opts.oversample, opts.power_iterations, g);

    int rank = 0;
    const double floor = svd.s.size() > 0 ? 1e-10 * svd.s[0] : 0.0;
    for (long i = 0; i < svd.s.size(); ++i)
        if (svd.s[i] > floor) ++rank;
    if (rank_out) *rank_out = rank;

    Eigen::MatrixXd a_test = submatrix(activity, split.group1, split.test_times);
    Eigen::MatrixXd b_test = submatrix(activity, split.group2, split.test_times);
    center_rows(a_test);
    center_rows(b_test);
    const double denom_test = double(split.test_times.size()) - 1.0;
    const Eigen::MatrixXd pa = svd.u.leftCols(rank).transpose() * a_test;  // rank x T_test
    const Eigen::MatrixXd pb = svd.v.leftCols(rank).transpose() * b_test;

    double total = 0;
    if (opts.normalize_total)
        total = 0.5 * (a_test.squaredNorm() + b_test.squaredNorm()) / denom_test;

    std::vector<double> rv(size_t(rank), 0.0);
    for (int k = 0; k < rank; ++k) {
        const double cov = pa.row(k).dot(pb.row(k)) / denom_test;
        const double var_a = pa.row(k).squaredNorm() / denom_test;
        const double var_b = pb.row(k).squaredNorm() / denom_test;
        const double denom = opts.normalize_total ? total : 0.5 * (var_a + var_b);
        rv[size_t(k)] = denom > 0 ? cov / denom : 0.0;
    }
    return rv;
}

std::vector<double> moving_average(const std::vector<double>& v, int window) {
    const long n = long(v.size());
    const long half = std::max(0, window / 2);
    std::vector<double> out(v.size());
    for (long i = 0; i < n; ++i) {
        const long lo = std::max<long>(0, i - half), hi = std::min(n - 1, i + half);
        double sum = 0;
        for (long j = lo; j <= hi; ++j) sum += v[size_t(j)];
        out[size_t(i)] = sum / double(hi - lo + 1);
    }
    return out;
}

} // namespace

SvcaSpectrum svca(const PopulationRecording& rec, int max_dims, uint64_t rng_seed,
                  const SvcaOptions& opts) {
    rec.validate();
    check(max_dims >= 1, "svca: max_dims must be >= 1");
    const PopulationSplit split =
        split_population(rec, rng::derive(rng_seed, {rng::tag("split")}), opts);
    check(max_dims <= long(std::min(split.group1.size(), split.group2.size())) &&
              max_dims <= long(split.train_times.size()),
          "svca: max_dims exceeds min(group sizes, train length)");
    check(opts.n_surrogates >= 1, "svca: need at least one shuffle surrogate");

    SvcaSpectrum spec;
    spec.threshold_sds = opts.threshold_sds;
    int rank = 0;
    spec.reliable_variance = spectrum_pass(rec.activity, split, max_dims, opts,
                                           rng::derive(rng_seed, {rng::tag("rsvd"), 0}), &rank);
    spec.rank = rank;

    const long T = rec.n_timepoints();
    std::vector<std::vector<double>> surrogate(size_t(opts.n_surrogates));
    for (int s = 0; s < opts.n_surrogates; ++s) {
        rng::Stream g =
            rng::Stream::seeded(rng::derive(rng_seed, {rng::tag("shuffle"), uint64_t(s)}));
        Eigen::MatrixXd shifted(rec.activity.rows(), T);
        for (long i = 0; i < rec.activity.rows(); ++i) {
            const long off = long(g.below(uint64_t(T)));
            for (long t = 0; t < T; ++t) shifted(i, t) = rec.activity(i, (t + off) % T);
        }
        std::vector<double> rv =
            spectrum_pass(shifted, split, max_dims, opts,
                          rng::derive(rng_seed, {rng::tag("rsvd"), uint64_t(s) + 1}), nullptr);
        rv.resize(size_t(rank), 0.0);  // a rank-deficient surrogate contributes zeros
        surrogate[size_t(s)] = std::move(rv);
    }

    std::vector<double> raw_mean(size_t(rank), 0.0);
    for (const auto& rv : surrogate)
        for (int k = 0; k < rank; ++k) raw_mean[size_t(k)] += rv[size_t(k)];
    for (auto& m : raw_mean) m /= double(opts.n_surrogates);
    spec.shuffle_mean = moving_average(raw_mean, opts.smoothing_window);

    /* one pooled SD across dimensions and surrogates: per-dimension twin-sample
     * spread would be far too noisy to threshold against */
    double ss = 0;
    long n_dev = 0;
    for (const auto& rv : surrogate)
        for (int k = 0; k < rank; ++k) {
            const double d = rv[size_t(k)] - spec.shuffle_mean[size_t(k)];
            ss += d * d;
            ++n_dev;
        }
    const double pooled_sd = n_dev > 1 ? std::sqrt(ss / double(n_dev - 1)) : 0.0;
    spec.shuffle_sd.assign(size_t(rank), pooled_sd);

    spec.n_reliable = 0;
    for (int k = 0; k < rank; ++k)
        if (spec.reliable_variance[size_t(k)] >
            spec.shuffle_mean[size_t(k)] + spec.threshold_sds * spec.shuffle_sd[size_t(k)])
            ++spec.n_reliable;
    return spec;
}

void SvcaSpectrum::to_csv(const std::string& path) const {
    std::vector<std::vector<std::string>> rows;
    for (size_t k = 0; k < reliable_variance.size(); ++k)
        rows.push_back({std::to_string(k + 1), csv::format_double(reliable_variance[k]),
                        csv::format_double(shuffle_mean[k]), csv::format_double(shuffle_sd[k])});
    csv::write(path, {"dim", "reliable_variance", "shuffle_mean", "shuffle_sd"}, rows);
}

nlohmann::json SvcaSpectrum::to_json() const {
    return {{"reliable_variance", reliable_variance}, {"shuffle_mean", shuffle_mean},
            {"shuffle_sd", shuffle_sd},               {"threshold_sds", threshold_sds},
            {"n_reliable", n_reliable},               {"rank", rank}};
}

/* ---- sweep -------------------------------------------------------------------- */

DimensionSweep dimension_sweep(const PopulationRecording& rec, std::vector<long> sizes,
                               int repeats, uint64_t rng_seed, const SvcaOptions& opts,
                               int jobs) {
    rec.validate();
    check(!sizes.empty(), "dimension_sweep: empty size list");
    check(repeats >= 1, "dimension_sweep: repeats must be >= 1");

    DimensionSweep sweep;
    std::vector<long> unique_sizes;
    std::set<long> seen;
    for (long s : sizes) {
        if (!seen.insert(s).second) {
            sweep.warnings.push_back("duplicate size " + std::to_string(s) + " dropped");
            continue;
        }
        check(unique_sizes.empty() || s > unique_sizes.back(),
              "dimension_sweep: sizes must be increasing");
        check(s >= 4 && s <= rec.n_neurons(),
              "dimension_sweep: sizes must lie in [4, neuron count]");
        unique_sizes.push_back(s);
    }

    const size_t S = unique_sizes.size(), R = size_t(repeats);
    std::vector<double> reliable(S * R, 0.0);
    std::vector<std::string> errors(S * R);
    parallel_for(S * R, jobs, [&](size_t idx) {
        const size_t si = idx / R, r = idx % R;
        const long size = unique_sizes[si];
        try {
            const uint64_t cell_seed =
                rng::derive(rng_seed, {rng::tag("subset"), uint64_t(si), uint64_t(r)});
            /* sample `size` neurons without replacement */
            std::vector<long> pool(size_t(rec.n_neurons()), 0L);
            std::iota(pool.begin(), pool.end(), 0);
            rng::Stream g = rng::Stream::seeded(rng::derive(cell_seed, {rng::tag("choose")}));
            for (long i = 0; i < size; ++i) {
                const long j = i + long(g.below(uint64_t(pool.size() - size_t(i))));
                std::swap(pool[size_t(i)], pool[size_t(j)]);
            }
            std::vector<long> chosen(pool.begin(), pool.begin() + size);
            std::sort(chosen.begin(), chosen.end());

            PopulationRecording sub;
            sub.activity.resize(size, rec.n_timepoints());
            for (long i = 0; i < size; ++i) sub.activity.row(i) = rec.activity.row(chosen[size_t(i)]);
            if (rec.positions) {
                Eigen::MatrixXd pos(size, rec.positions->cols());
                for (long i = 0; i < size; ++i) pos.row(i) = rec.positions->row(chosen[size_t(i)]);
                sub.positions = std::move(pos);
            }
            sub.sample_rate_hz = rec.sample_rate_hz;

            const uint64_t svca_seed = rng::derive(cell_seed, {rng::tag("svca")});
            const PopulationSplit peek =
                split_population(sub, rng::derive(svca_seed, {rng::tag("split")}), opts);
            const int max_dims = int(std::min<long>(
                {50, long(std::min(peek.group1.size(), peek.group2.size())),
                 long(peek.train_times.size())}));
            reliable[idx] = double(svca(sub, max_dims, svca_seed, opts).n_reliable);
        } catch (const std::exception& e) {
            errors[idx] = e.what();
        }
    });

    for (size_t si = 0; si < S; ++si) {
        SweepPoint p;
        p.size = unique_sizes[si];
        double sum = 0, sum2 = 0;
        int n = 0;
        for (size_t r = 0; r < R; ++r) {
            if (!errors[si * R + r].empty()) {
                sweep.warnings.push_back("size " + std::to_string(p.size) + " repeat " +
                                         std::to_string(r) + ": " + errors[si * R + r]);
                continue;
            }
            sum += reliable[si * R + r];
            sum2 += reliable[si * R + r] * reliable[si * R + r];
            ++n;
        }
        check_runtime(n >= 1, "dimension_sweep: every repeat failed at size " +
                                  std::to_string(p.size));
        p.repeats = n;
        p.mean_reliable = sum / n;
        p.se = n >= 2 ? std::sqrt(std::max(0.0, (sum2 - sum * sum / n) / (n - 1)) / n) : 0.0;
        sweep.points.push_back(p);
    }
    return sweep;
}

void DimensionSweep::to_csv(const std::string& path) const {
    std::vector<std::vector<std::string>> rows;
    for (const auto& p : points)
        rows.push_back({std::to_string(p.size), csv::format_double(p.mean_reliable),
                        csv::format_double(p.se), std::to_string(p.repeats)});
    csv::write(path, {"size", "mean_reliable", "se", "repeats"}, rows);
}

nlohmann::json DimensionSweep::to_json() const {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : points)
        pts.push_back({{"size", p.size},
                       {"mean_reliable", p.mean_reliable},
                       {"se", p.se},
                       {"repeats", p.repeats}});
    return {{"points", pts}, {"warnings", warnings}};
}

/* ---- power law --------------------------------------------------------------- */

PowerLawFit fit_power_law(const std::vector<std::pair<double, double>>& size_dims) {
    check(size_dims.size() >= 3, "fit_power_law: need >= 3 points");
    const long n = long(size_dims.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    for (const auto& [size, dims] : size_dims) {
        check(size > 0, "fit_power_law: sizes must be positive");
        check(dims > 0, "fit_power_law: dims must be positive (log undefined otherwise)");
        const double x = std::log(size), y = std::log(dims);
        sx += x; sy += y; sxx += x * x; sxy += x * y; syy += y * y;
    }
    const double det = n * sxx - sx * sx;
    check(det > 0, "fit_power_law: sizes must not all coincide");
    PowerLawFit fit;
    fit.exponent = (n * sxy - sx * sy) / det;
    fit.prefactor = std::exp((sy - fit.exponent * sx) / n);
    const double ss_tot = syy - sy * sy / n;
    double ss_res = 0;
    for (const auto& [size, dims] : size_dims) {
        const double r = std::log(dims) - (std::log(fit.prefactor) + fit.exponent * std::log(size));
        ss_res += r * r;
    }
    fit.r2_loglog = ss_tot > 0 ? 1.0 - ss_res / ss_tot : (ss_res == 0 ? 1.0 : 0.0);
    return fit;
}

nlohmann::json PowerLawFit::to_json() const {
    return {{"prefactor", prefactor}, {"exponent", exponent}, {"r2_loglog", r2_loglog}};
}

/* ---- IO ------------------------------------------------------------------------- */

Eigen::MatrixXd load_matrix_csv(const std::string& path) {
    std::ifstream in(path);
    check_runtime(bool(in), "cannot open " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<double> row;
        size_t start = 0;
        while (start <= line.size()) {
            size_t end = line.find(',', start);
            if (end == std::string::npos) end = line.size();
            row.push_back(csv::parse_double(line.substr(start, end - start)));
            start = end + 1;
        }
        if (!rows.empty())
            check_runtime(row.size() == rows.front().size(),
                          "ragged matrix CSV at line " + std::to_string(rows.size() + 1));
        rows.push_back(std::move(row));
    }
    check_runtime(!rows.empty(), "empty matrix CSV: " + path);
    Eigen::MatrixXd m(long(rows.size()), long(rows.front().size()));
    for (size_t i = 0; i < rows.size(); ++i)
        for (size_t j = 0; j < rows[i].size(); ++j) m(long(i), long(j)) = rows[i][j];
    return m;
}

void save_matrix_csv(const std::string& path, const Eigen::MatrixXd& m) {
    std::ofstream out(path, std::ios::binary);
    check_runtime(bool(out), "cannot write " + path);
    for (long i = 0; i < m.rows(); ++i) {
        for (long j = 0; j < m.cols(); ++j) {
            if (j) out << ',';
            out << csv::format_double(m(i, j));
        }
        out << '\n';
    }
    check_runtime(bool(out), "write failed: " + path);
}

PopulationRecording load_recording(const std::string& path) {
    namespace fs = std::filesystem;
    if (fs::path(path).extension() == ".json") {
        std::ifstream in(path);
        check_runtime(bool(in), "cannot open " + path);
        const nlohmann::json meta = nlohmann::json::parse(in);
        check_runtime(meta.value("dtype", "float64") == "float64",
                      "binary recording: only float64 is supported");
        const long rows = meta.at("rows").get<long>();
        const long cols = meta.at("cols").get<long>();
        const fs::path dir = fs::path(path).parent_path();
        const std::string data_path = (dir / meta.at("data").get<std::string>()).string();
        std::ifstream data(data_path, std::ios::binary);
        check_runtime(bool(data), "cannot open " + data_path);
        Eigen::MatrixXd act(rows, cols);
        std::vector<double> buf(size_t(cols), 0.0);
        for (long i = 0; i < rows; ++i) {
            data.read(reinterpret_cast<char*>(buf.data()), std::streamsize(sizeof(double) * size_t(cols)));
            check_runtime(bool(data), "binary recording: short read at row " + std::to_string(i));
            for (long j = 0; j < cols; ++j) act(i, j) = buf[size_t(j)];
        }
        std::optional<Eigen::MatrixXd> positions;
        if (meta.contains("positions") && !meta.at("positions").is_null())
            positions = load_matrix_csv((dir / meta.at("positions").get<std::string>()).string());
        std::optional<double> rate;
        if (meta.contains("sample_rate_hz") && !meta.at("sample_rate_hz").is_null())
            rate = meta.at("sample_rate_hz").get<double>();
        return PopulationRecording::ingest(std::move(act), std::move(positions), rate);
    }
    return PopulationRecording::ingest(load_matrix_csv(path));
}

void save_recording_binary(const PopulationRecording& rec, const std::string& sidecar_path) {
    namespace fs = std::filesystem;
    rec.validate();
    const fs::path meta_path(sidecar_path);
    const fs::path dir = meta_path.parent_path();
    const std::string stem = meta_path.stem().string();
    const std::string data_name = stem + ".bin";
    std::ofstream data(dir / data_name, std::ios::binary);
    check_runtime(bool(data), "cannot write " + (dir / data_name).string());
    std::vector<double> buf(size_t(rec.activity.cols()), 0.0);
    for (long i = 0; i < rec.activity.rows(); ++i) {
        for (long j = 0; j < rec.activity.cols(); ++j) buf[size_t(j)] = rec.activity(i, j);
        data.write(reinterpret_cast<const char*>(buf.data()),
                   std::streamsize(sizeof(double) * buf.size()));
    }
    check_runtime(bool(data), "write failed: " + (dir / data_name).string());

    nlohmann::json meta = {{"data", data_name},
                           {"rows", rec.activity.rows()},
                           {"cols", rec.activity.cols()},
                           {"dtype", "float64"}};
    if (rec.positions) {
        const std::string pos_name = stem + "_positions.csv";
        save_matrix_csv((dir / pos_name).string(), *rec.positions);
        meta["positions"] = pos_name;
    }
    if (rec.sample_rate_hz) meta["sample_rate_hz"] = *rec.sample_rate_hz;
    std::ofstream out(meta_path);
    check_runtime(bool(out), "cannot write " + sidecar_path);
    out << meta.dump(2) << '\n';
    check_runtime(bool(out), "write failed: " + sidecar_path);
}

} // namespace twinlab::svca_dim
