#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "twinlab/rng.hpp"
#include "twinlab/svca_dim.hpp"

using namespace twinlab;
using namespace twinlab::svca_dim;

namespace {

std::filesystem::path temp_dir() {
    auto d = std::filesystem::temp_directory_path() /
             ("twinlab_svca_" + std::to_string(::getpid()));
    std::filesystem::create_directories(d);
    return d;
}

Eigen::MatrixXd random_activity(long n, long t, uint64_t seed) {
    rng::Stream g = rng::Stream::seeded(seed);
    Eigen::MatrixXd m(n, t);
    for (long i = 0; i < n; ++i)
        for (long j = 0; j < t; ++j) m(i, j) = rng::normal(g);
    return m;
}

} // namespace

/* ---- ingest -------------------------------------------------------------------- */

TEST_CASE("ingest z-scores every neuron") {
    Eigen::MatrixXd raw = random_activity(6, 100, 1);
    raw.row(2) = raw.row(2) * 40.0;                 // wild scale
    raw.row(3) = raw.row(3).array() + 900.0;        // wild offset
    const auto rec = PopulationRecording::ingest(raw);
    for (long i = 0; i < rec.n_neurons(); ++i) {
        CHECK(rec.activity.row(i).mean() == doctest::Approx(0.0).epsilon(1e-12));
        const double var = rec.activity.row(i).squaredNorm() / double(rec.n_timepoints());
        CHECK(var == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("ingest is idempotent on already z-scored data") {
    const auto rec = PopulationRecording::ingest(random_activity(8, 64, 2));
    const auto again = PopulationRecording::ingest(rec.activity);
    CHECK((again.activity - rec.activity).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("ingest rejects degenerate input") {
    Eigen::MatrixXd flat = random_activity(5, 50, 3);
    flat.row(1).setConstant(7.0);
    CHECK_THROWS(PopulationRecording::ingest(flat));

    Eigen::MatrixXd tiny = random_activity(3, 50, 4);  // < 4 neurons
    CHECK_THROWS(PopulationRecording::ingest(tiny));

    Eigen::MatrixXd thin = random_activity(5, 3, 5);   // < 4 timepoints
    CHECK_THROWS(PopulationRecording::ingest(thin));

    Eigen::MatrixXd nan_mat = random_activity(5, 50, 6);
    nan_mat(2, 7) = std::nan("");
    CHECK_THROWS(PopulationRecording::ingest(nan_mat));

    Eigen::MatrixXd pos(4, 3);  // wrong row count for a 5-neuron recording
    pos.setZero();
    CHECK_THROWS(PopulationRecording::ingest(random_activity(5, 50, 7), pos));
}

/* ---- splits --------------------------------------------------------------------- */

TEST_CASE("spatial split alternates position bins along the first axis") {
    Eigen::MatrixXd raw = random_activity(8, 64, 8);
    Eigen::MatrixXd pos(8, 3);
    pos.setZero();
    for (long i = 0; i < 8; ++i) pos(i, 0) = double(i + 1);  // x = 1..8
    const auto rec = PopulationRecording::ingest(raw, pos);
    SvcaOptions opts;
    opts.bin_width = 2.0;
    const auto split = split_population(rec, 99, opts);
    CHECK(split.group1 == std::vector<long>{0, 1, 4, 5});
    CHECK(split.group2 == std::vector<long>{2, 3, 6, 7});
}

TEST_CASE("splits are disjoint and exhaustive for neurons and time") {
    const auto rec = PopulationRecording::ingest(random_activity(37, 213, 9));
    const auto split = split_population(rec, 5);
    std::set<long> neurons(split.group1.begin(), split.group1.end());
    neurons.insert(split.group2.begin(), split.group2.end());
    CHECK(neurons.size() == 37);
    CHECK(split.group1.size() + split.group2.size() == 37);

    std::set<long> times(split.train_times.begin(), split.train_times.end());
    times.insert(split.test_times.begin(), split.test_times.end());
    CHECK(times.size() == 213);
    CHECK(split.train_times.size() + split.test_times.size() == 213);
}

TEST_CASE("time split alternates contiguous blocks") {
    const auto rec = PopulationRecording::ingest(random_activity(6, 32, 10));
    SvcaOptions opts;
    opts.block_length = 4;
    const auto split = split_population(rec, 1, opts);
    const std::vector<long> train = {0, 1, 2, 3, 8, 9, 10, 11, 16, 17, 18, 19, 24, 25, 26, 27};
    const std::vector<long> test = {4, 5, 6, 7, 12, 13, 14, 15, 20, 21, 22, 23, 28, 29, 30, 31};
    CHECK(split.train_times == train);
    CHECK(split.test_times == test);
}

TEST_CASE("default block length caps at 72 and scales as T/8") {
    const auto small = PopulationRecording::ingest(random_activity(6, 64, 11));
    const auto split_small = split_population(small, 1);
    /* T = 64 -> block 8: first train block is exactly times 0..7 */
    for (long t = 0; t < 8; ++t) CHECK(split_small.train_times[size_t(t)] == t);
    CHECK(split_small.test_times.front() == 8);

    const auto big = PopulationRecording::ingest(random_activity(6, 1600, 12));
    const auto split_big = split_population(big, 1);
    /* T = 1600 -> T/8 = 200 capped at 72 */
    CHECK(split_big.test_times.front() == 72);
}

TEST_CASE("random split without positions is deterministic in the seed") {
    const auto rec = PopulationRecording::ingest(random_activity(20, 80, 13));
    const auto a = split_population(rec, 77);
    const auto b = split_population(rec, 77);
    const auto c = split_population(rec, 78);
    CHECK(a.group1 == b.group1);
    CHECK(a.group2 == b.group2);
    CHECK(a.group1 != c.group1);  // different seed, different halves
}

/* ---- planted recordings ------------------------------------------------------------ */

TEST_CASE("planted recordings are deterministic and well-formed") {
    const auto a = make_planted_recording(30, 200, 3, 5.0, 42);
    const auto b = make_planted_recording(30, 200, 3, 5.0, 42);
    CHECK((a.activity - b.activity).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.n_neurons() == 30);
    CHECK(a.n_timepoints() == 200);
    const auto c = make_planted_recording(30, 200, 3, 5.0, 43);
    CHECK((a.activity - c.activity).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("svca recovers the planted rank") {
    const auto rec = make_planted_recording(150, 1500, 5, 10.0, 7);
    const auto spec = svca(rec, 30, 11);
    CHECK(spec.n_reliable == 5);
    CHECK(spec.rank == 30);
    REQUIRE(spec.reliable_variance.size() == 30);
    /* planted dimensions carry far more reliable variance than the rest */
    CHECK(spec.reliable_variance[4] > 5.0 * std::fabs(spec.reliable_variance[5]));
}

TEST_CASE("pure noise yields no reliable dimensions") {
    const auto rec = make_planted_recording(100, 1200, 0, 1.0, 19);
    const auto spec = svca(rec, 25, 3);
    CHECK(spec.n_reliable == 0);
}

TEST_CASE("svca is deterministic in the seed") {
    const auto rec = make_planted_recording(60, 600, 4, 8.0, 21);
    const auto a = svca(rec, 15, 5);
    const auto b = svca(rec, 15, 5);
    REQUIRE(a.reliable_variance.size() == b.reliable_variance.size());
    for (size_t i = 0; i < a.reliable_variance.size(); ++i)
        CHECK(a.reliable_variance[i] == b.reliable_variance[i]);
    CHECK(a.n_reliable == b.n_reliable);
}

TEST_CASE("dimension requests beyond the split geometry are rejected") {
    const auto rec = make_planted_recording(12, 120, 2, 6.0, 31);
    CHECK_THROWS(svca(rec, 500, 9));  // groups of ~6 cannot support 500 dims
    CHECK_THROWS(svca(rec, 0, 9));
    const auto spec = svca(rec, 5, 9);
    CHECK(spec.rank <= 5);
    CHECK(int(spec.reliable_variance.size()) == spec.rank);
}

TEST_CASE("shuffle controls share one pooled dispersion estimate") {
    const auto rec = make_planted_recording(80, 800, 3, 9.0, 37);
    const auto spec = svca(rec, 10, 13);
    REQUIRE(!spec.shuffle_sd.empty());
    for (const double sd : spec.shuffle_sd) CHECK(sd == spec.shuffle_sd[0]);
    CHECK(spec.shuffle_sd[0] > 0.0);
}

TEST_CASE("spectrum serializes to CSV and JSON") {
    const auto rec = make_planted_recording(40, 400, 2, 7.0, 41);
    const auto spec = svca(rec, 8, 15);
    const auto dir = temp_dir();
    const auto path = (dir / "spectrum.csv").string();
    spec.to_csv(path);
    CHECK(std::filesystem::exists(path));
    const auto j = spec.to_json();
    CHECK(j["n_reliable"].get<int>() == spec.n_reliable);
    CHECK(j["reliable_variance"].size() == spec.reliable_variance.size());
    std::filesystem::remove_all(dir);
}

/* ---- dimension sweep ----------------------------------------------------------------- */

TEST_CASE("dimension sweep grows with population size on planted data") {
    const auto rec = make_planted_recording(240, 1200, 8, 6.0, 55);
    const auto sweep = dimension_sweep(rec, {40, 120, 240}, 3, 17);
    REQUIRE(sweep.points.size() == 3);
    CHECK(sweep.points[0].size == 40);
    CHECK(sweep.points[2].size == 240);
    for (const auto& p : sweep.points) {
        CHECK(p.repeats == 3);
        CHECK(p.mean_reliable >= 0.0);
    }
    CHECK(sweep.points[2].mean_reliable >= sweep.points[0].mean_reliable);
}

TEST_CASE("duplicate sweep sizes are dropped with a warning") {
    const auto rec = make_planted_recording(60, 400, 2, 6.0, 61);
    const auto sweep = dimension_sweep(rec, {30, 30, 60}, 2, 19);
    CHECK(sweep.points.size() == 2);
    CHECK(!sweep.warnings.empty());
}

TEST_CASE("sweep rejects sizes beyond the population") {
    const auto rec = make_planted_recording(50, 300, 2, 6.0, 67);
    CHECK_THROWS(dimension_sweep(rec, {40, 80}, 2, 1));
    CHECK_THROWS(dimension_sweep(rec, {}, 2, 1));
    CHECK_THROWS(dimension_sweep(rec, {40}, 0, 1));
}

TEST_CASE("sweep is independent of the job count") {
    const auto rec = make_planted_recording(90, 500, 3, 7.0, 71);
    const auto serial = dimension_sweep(rec, {30, 60}, 2, 23, {}, 1);
    const auto threaded = dimension_sweep(rec, {30, 60}, 2, 23, {}, 4);
    REQUIRE(serial.points.size() == threaded.points.size());
    for (size_t i = 0; i < serial.points.size(); ++i) {
        CHECK(serial.points[i].mean_reliable == threaded.points[i].mean_reliable);
        CHECK(serial.points[i].se == threaded.points[i].se);
    }
}

/* ---- power law -------------------------------------------------------------------------- */

TEST_CASE("power-law fit is exact on exact power-law points") {
    std::vector<std::pair<double, double>> pts;
    for (const double n : {32.0, 64.0, 128.0, 256.0, 512.0})
        pts.emplace_back(n, 2.0 * std::pow(n, 0.8));
    const auto fit = fit_power_law(pts);
    CHECK(fit.exponent == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(fit.prefactor == doctest::Approx(2.0).epsilon(1e-10));
    CHECK(fit.r2_loglog == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("power-law fit recovers a range of exponents") {
    for (const double beta : {0.5, 0.91}) {
        std::vector<std::pair<double, double>> pts;
        for (const double n : {50.0, 100.0, 200.0, 400.0})
            pts.emplace_back(n, 1.3 * std::pow(n, beta));
        const auto fit = fit_power_law(pts);
        CHECK(fit.exponent == doctest::Approx(beta).epsilon(1e-10));
    }
}

TEST_CASE("power-law fit validates its input") {
    CHECK_THROWS(fit_power_law({{10.0, 3.0}, {20.0, 5.0}}));          // too few
    CHECK_THROWS(fit_power_law({{10.0, 3.0}, {20.0, 0.0}, {40.0, 5.0}}));  // non-positive
}

/* ---- persistence -------------------------------------------------------------------------- */

TEST_CASE("matrix CSV round trips") {
    const Eigen::MatrixXd m = random_activity(7, 13, 81);
    const auto dir = temp_dir();
    const auto path = (dir / "matrix.csv").string();
    save_matrix_csv(path, m);
    const Eigen::MatrixXd back = load_matrix_csv(path);
    REQUIRE(back.rows() == 7);
    REQUIRE(back.cols() == 13);
    CHECK((back - m).cwiseAbs().maxCoeff() == 0.0);  // lossless numeric formatting
    std::filesystem::remove_all(dir);
}

TEST_CASE("binary recording round trips through its sidecar") {
    Eigen::MatrixXd pos(10, 3);
    rng::Stream g = rng::Stream::seeded(4);
    for (long i = 0; i < 10; ++i)
        for (long j = 0; j < 3; ++j) pos(i, j) = g.uniform(0, 100);
    const auto rec = PopulationRecording::ingest(random_activity(10, 50, 91), pos, 30.0);
    const auto dir = temp_dir();
    const auto sidecar = (dir / "recording.json").string();
    save_recording_binary(rec, sidecar);
    const auto back = load_recording(sidecar);
    CHECK((back.activity - rec.activity).cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE(back.positions.has_value());
    CHECK((*back.positions - pos).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(back.sample_rate_hz.has_value());
    CHECK(*back.sample_rate_hz == 30.0);
    std::filesystem::remove_all(dir);
}

TEST_CASE("loading a missing recording fails cleanly") {
    CHECK_THROWS(load_recording("/nonexistent/recording.json"));
    CHECK_THROWS(load_matrix_csv("/nonexistent/matrix.csv"));
}
