#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "twinlab/distill_lab.hpp"
#include "twinlab/rng.hpp"

using namespace twinlab;
using namespace twinlab::distill_lab;

namespace {

std::filesystem::path temp_dir() {
    auto d = std::filesystem::temp_directory_path() /
             ("twinlab_distill_" + std::to_string(::getpid()));
    std::filesystem::create_directories(d);
    return d;
}

/* independent re-implementation of placement -> smoothing -> standardization,
 * used to classify generated examples by best cosine match */
Eigen::VectorXd place_template(int cls, int offset) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(kSignalLen);
    const auto& tpl = class_templates()[size_t(cls)];
    for (int i = 0; i < kTemplateLen; ++i) out[offset + i] = tpl[size_t(i)];
    return out;
}

Eigen::VectorXd smooth_reference(const Eigen::VectorXd& x, double sd) {
    const int radius = 4;
    double kernel[2 * radius + 1];
    double total = 0;
    for (int j = -radius; j <= radius; ++j) {
        kernel[j + radius] = std::exp(-0.5 * double(j) * double(j) / (sd * sd));
        total += kernel[j + radius];
    }
    Eigen::VectorXd out = Eigen::VectorXd::Zero(x.size());
    for (long t = 0; t < x.size(); ++t)
        for (int j = -radius; j <= radius; ++j) {
            const long s = t + j;
            if (s >= 0 && s < x.size()) out[t] += kernel[j + radius] / total * x[s];
        }
    return out;
}

Eigen::VectorXd standardize_reference(const Eigen::VectorXd& x) {
    const double mean = x.mean();
    const double sd = std::sqrt((x.array() - mean).square().sum() / double(x.size()));
    return (x.array() - mean) / sd;
}

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return a.dot(b) / (a.norm() * b.norm());
}

long classify_by_template(const Eigen::VectorXd& signal, double smooth_sd) {
    long best_cls = -1;
    double best = -2.0;
    for (int cls = 0; cls < kNumClasses; ++cls)
        for (int off = 0; off <= kSignalLen - kTemplateLen; ++off) {
            Eigen::VectorXd cand = place_template(cls, off);
            if (smooth_sd > 0) cand = smooth_reference(cand, smooth_sd);
            cand = standardize_reference(cand);
            const double c = cosine(signal, cand);
            if (c > best) {
                best = c;
                best_cls = cls;
            }
        }
    return best_cls;
}

std::vector<Eigen::MatrixXd> taps_of(const MicroNet& net, const Eigen::MatrixXd& batch) {
    return forward(net, batch).taps;
}

double loss_at(const MicroNet& base, const Eigen::VectorXd& params,
               const Eigen::MatrixXd& batch, const LossSpec& spec) {
    MicroNet tmp = base;
    tmp.params = params;
    return gradients(tmp, batch, spec, nullptr);
}

} // namespace

/* ---- dataset ---------------------------------------------------------------------- */

TEST_CASE("the ten class templates are distinct and non-constant") {
    const auto& tpls = class_templates();
    for (size_t a = 0; a < tpls.size(); ++a) {
        const double first = tpls[a][0];
        bool constant = true;
        for (const double v : tpls[a]) constant = constant && v == first;
        CHECK(!constant);
        for (size_t b = a + 1; b < tpls.size(); ++b) {
            bool same = true;
            for (size_t i = 0; i < tpls[a].size(); ++i) same = same && tpls[a][i] == tpls[b][i];
            CHECK(!same);
        }
    }
}

TEST_CASE("generated examples are standardized, labeled cyclically, deterministic") {
    const auto data = generate_dataset(25, 11);
    REQUIRE(data.size() == 25);
    for (size_t i = 0; i < data.size(); ++i) {
        CHECK(data[i].label == long(i) % kNumClasses);
        REQUIRE(data[i].signal.size() == kSignalLen);
        CHECK(data[i].signal.mean() == doctest::Approx(0.0).epsilon(1e-12));
        const double var = data[i].signal.squaredNorm() / double(kSignalLen);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-12));
    }
    const auto again = generate_dataset(25, 11);
    for (size_t i = 0; i < data.size(); ++i)
        CHECK((data[i].signal - again[i].signal).cwiseAbs().maxCoeff() == 0.0);
    const auto other = generate_dataset(25, 12);
    CHECK((data[0].signal - other[0].signal).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("noise-free generation is perfectly classified by template matching") {
    GenParams p;
    p.noise_sd = 0.0;
    p.smooth_sd = 0.0;
    const auto data = generate_dataset(60, 21, p);
    for (const auto& ex : data) CHECK(classify_by_template(ex.signal, 0.0) == ex.label);
}

TEST_CASE("smoothed noise-free generation matches an independent smoothing oracle") {
    GenParams p;
    p.noise_sd = 0.0;
    p.smooth_sd = 1.0;
    const auto data = generate_dataset(60, 31, p);
    for (const auto& ex : data) CHECK(classify_by_template(ex.signal, 1.0) == ex.label);
}

TEST_CASE("default noisy generation is still highly classifiable") {
    const auto data = generate_dataset(200, 41);
    int hits = 0;
    for (const auto& ex : data)
        if (classify_by_template(ex.signal, 1.0) == ex.label) ++hits;
    CHECK(hits >= 190);  // mild noise, smooth templates
}

TEST_CASE("pack_signals and pack_labels mirror the dataset") {
    const auto data = generate_dataset(20, 51);
    const Eigen::MatrixXd m = pack_signals(data);
    const auto labels = pack_labels(data);
    REQUIRE(m.rows() == 20);
    REQUIRE(m.cols() == kSignalLen);
    REQUIRE(labels.size() == 20);
    for (long i = 0; i < 20; ++i) {
        CHECK((m.row(i).transpose() - data[size_t(i)].signal).cwiseAbs().maxCoeff() == 0.0);
        CHECK(labels[size_t(i)] == data[size_t(i)].label);
    }
}

TEST_CASE("generation parameters are validated") {
    GenParams bad;
    bad.scale_min = -1;
    CHECK_THROWS(generate_dataset(10, 1, bad));
    GenParams bad2;
    bad2.noise_sd = -0.1;
    CHECK_THROWS(generate_dataset(10, 1, bad2));
    CHECK_THROWS(generate_dataset(0, 1));
}

/* ---- network ------------------------------------------------------------------------ */

TEST_CASE("parameter counts match the architecture arithmetic") {
    /* 16 channels: convs 96 + 1296 + 1296, lengths 40 -> 18 -> 7 -> 2,
     * dense 10 x 32 + 10 = 330, total 3018 */
    const auto wide = MicroNet::make(16, 1);
    CHECK(wide.param_count() == 3018);
    CHECK(wide.params.size() == 3018);
    CHECK(wide.dense_in == 32);
    /* 4 channels: 24 + 84 + 84 + 90 = 282 */
    const auto narrow = MicroNet::make(4, 1);
    CHECK(narrow.param_count() == 282);
    CHECK(narrow.dense_in == 8);
}

TEST_CASE("initialization is deterministic and biases start at zero") {
    const auto a = MicroNet::make(4, 7);
    const auto b = MicroNet::make(4, 7);
    CHECK((a.params - b.params).cwiseAbs().maxCoeff() == 0.0);
    const auto c = MicroNet::make(4, 8);
    CHECK((a.params - c.params).cwiseAbs().maxCoeff() > 0.0);
    /* first conv: 20 weights then 4 biases */
    CHECK(a.params.segment(20, 4).cwiseAbs().maxCoeff() == 0.0);
    /* tail: 10 dense biases */
    CHECK(a.params.tail(10).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward produces the documented shapes and non-negative taps") {
    const auto net = MicroNet::make(16, 3);
    const auto data = generate_dataset(5, 4);
    const auto acts = forward(net, pack_signals(data));
    CHECK(acts.logits.rows() == 5);
    CHECK(acts.logits.cols() == 10);
    REQUIRE(acts.taps.size() == 3);
    CHECK(acts.taps[0].cols() == 16 * 18);
    CHECK(acts.taps[1].cols() == 16 * 7);
    CHECK(acts.taps[2].cols() == 16 * 2);
    for (const auto& tap : acts.taps) {
        CHECK(tap.rows() == 5);
        CHECK(tap.minCoeff() >= 0.0);  // post-ReLU
    }
    Eigen::MatrixXd wrong(5, 39);
    wrong.setZero();
    CHECK_THROWS(forward(net, wrong));
}

TEST_CASE("a zeroed network emits identical logits for every class") {
    auto net = MicroNet::make(4, 5);
    net.params.setZero();
    const auto data = generate_dataset(4, 6);
    const auto acts = forward(net, pack_signals(data));
    CHECK(acts.logits.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("networks round trip through save and load") {
    const auto net = MicroNet::make(4, 9);
    const auto dir = temp_dir();
    const auto data_path = (dir / "net.bin").string();
    const auto meta_path = (dir / "net.json").string();
    net.save(data_path, meta_path);
    const auto back = MicroNet::load(data_path, meta_path);
    CHECK((back.params - net.params).cwiseAbs().maxCoeff() == 0.0);
    CHECK(back.dense_in == net.dense_in);
    REQUIRE(back.convs.size() == net.convs.size());
    const auto batch = pack_signals(generate_dataset(3, 10));
    const auto a = forward(net, batch);
    const auto b = forward(back, batch);
    CHECK((a.logits - b.logits).cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS(MicroNet::load((dir / "missing.bin").string(), meta_path));
    std::filesystem::remove_all(dir);
}

/* ---- similarity matrices -------------------------------------------------------------- */

TEST_CASE("similarity matrices have unit diagonal and are symmetric") {
    rng::Stream g = rng::Stream::seeded(12);
    Eigen::MatrixXd acts(6, 20);
    for (long i = 0; i < 6; ++i)
        for (long j = 0; j < 20; ++j) acts(i, j) = rng::normal(g);
    for (const auto kernel : {RsmKernel::CenteredCosine, RsmKernel::PlainCosine}) {
        const Eigen::MatrixXd m = rsm(acts, kernel);
        REQUIRE(m.rows() == 6);
        REQUIRE(m.cols() == 6);
        for (long i = 0; i < 6; ++i) CHECK(m(i, i) == 1.0);
        CHECK((m - m.transpose()).cwiseAbs().maxCoeff() < 1e-14);
        CHECK(m.cwiseAbs().maxCoeff() <= 1.0 + 1e-12);
    }
}

TEST_CASE("identical rows are perfectly similar; opposite rows anti-similar") {
    Eigen::MatrixXd acts(3, 8);
    rng::Stream g = rng::Stream::seeded(13);
    for (long j = 0; j < 8; ++j) acts(0, j) = rng::normal(g);
    acts.row(1) = 3.0 * acts.row(0);   // same direction, different magnitude
    acts.row(2) = -acts.row(0);
    const Eigen::MatrixXd m = rsm(acts, RsmKernel::PlainCosine);
    CHECK(m(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(m(0, 2) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("centered cosine ignores per-example offsets") {
    Eigen::MatrixXd acts(2, 10);
    rng::Stream g = rng::Stream::seeded(14);
    for (long j = 0; j < 10; ++j) acts(0, j) = rng::normal(g);
    acts.row(1) = acts.row(0).array() + 5.0;  // pure offset
    const Eigen::MatrixXd centered = rsm(acts, RsmKernel::CenteredCosine);
    CHECK(centered(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
    const Eigen::MatrixXd plain = rsm(acts, RsmKernel::PlainCosine);
    CHECK(plain(0, 1) < 1.0 - 1e-6);
}

TEST_CASE("similarity loss is zero iff representations match, and scale-free") {
    const auto net = MicroNet::make(4, 15);
    const auto batch = pack_signals(generate_dataset(6, 16));
    const auto taps = taps_of(net, batch);
    CHECK(rsa_loss(taps, taps) == 0.0);

    auto scaled = taps;
    for (auto& t : scaled) t *= 3.0;  // cosine kernel absorbs the scale
    CHECK(rsa_loss(scaled, taps) == doctest::Approx(0.0).epsilon(1e-24));

    const auto other = taps_of(MicroNet::make(4, 17), batch);
    CHECK(rsa_loss(other, taps) > 1e-6);
    CHECK_THROWS(rsa_loss({}, {}));
    CHECK_THROWS(rsa_loss({taps[0]}, taps));
}

TEST_CASE("the loss returned by gradients matches the standalone definitions") {
    const auto net = MicroNet::make(4, 18);
    const auto teacher = MicroNet::make(4, 19);
    const auto data = generate_dataset(6, 20);
    const auto batch = pack_signals(data);
    const auto labels = pack_labels(data);
    const auto teacher_taps = taps_of(teacher, batch);

    LossSpec rsa_only;
    rsa_only.teacher_taps = &teacher_taps;
    const double via_gradients = gradients(net, batch, rsa_only, nullptr);
    const double direct = rsa_loss(taps_of(net, batch), teacher_taps);
    CHECK(via_gradients == doctest::Approx(direct).epsilon(1e-12));

    LossSpec ce_only;
    ce_only.labels = &labels;
    const double ce = gradients(net, batch, ce_only, nullptr);
    CHECK(ce > 0.0);

    LossSpec both;
    both.labels = &labels;
    both.teacher_taps = &teacher_taps;
    both.beta = 0.7;
    const double combined = gradients(net, batch, both, nullptr);
    CHECK(combined == doctest::Approx(0.3 * ce + 0.7 * direct).epsilon(1e-12));
}

/* ---- gradients -------------------------------------------------------------------------- */

TEST_CASE("analytic gradients match central differences for every loss composition") {
    const auto net = MicroNet::make(4, 23);  // 282 parameters, all probed
    const auto teacher = MicroNet::make(4, 24);
    const auto data = generate_dataset(6, 25);
    const auto batch = pack_signals(data);
    const auto labels = pack_labels(data);
    const auto teacher_taps = taps_of(teacher, batch);

    LossSpec ce_only;
    ce_only.labels = &labels;
    LossSpec rsa_only;
    rsa_only.teacher_taps = &teacher_taps;
    LossSpec both;
    both.labels = &labels;
    both.teacher_taps = &teacher_taps;
    both.beta = 0.7;

    const double h = 1e-4;
    for (const LossSpec* spec : {&ce_only, &rsa_only, &both}) {
        Eigen::VectorXd grad(net.params.size());
        gradients(net, batch, *spec, &grad);
        double max_rel = 0;
        for (long i = 0; i < net.params.size(); ++i) {
            Eigen::VectorXd up = net.params, down = net.params;
            up[i] += h;
            down[i] -= h;
            const double numeric =
                (loss_at(net, up, batch, *spec) - loss_at(net, down, batch, *spec)) / (2 * h);
            const double rel = std::fabs(grad[i] - numeric) /
                               std::max({1e-2, std::fabs(grad[i]), std::fabs(numeric)});
            max_rel = std::max(max_rel, rel);
        }
        INFO("max relative gradient error: ", max_rel);
        CHECK(max_rel < 1e-4);
    }
}

TEST_CASE("input gradients match central differences") {
    const auto net = MicroNet::make(4, 26);
    const auto data = generate_dataset(4, 27);
    Eigen::MatrixXd batch = pack_signals(data);
    const auto labels = pack_labels(data);
    LossSpec spec;
    spec.labels = &labels;
    Eigen::MatrixXd input_grad;
    gradients(net, batch, spec, nullptr, &input_grad);
    REQUIRE(input_grad.rows() == batch.rows());
    REQUIRE(input_grad.cols() == batch.cols());
    const double h = 1e-4;
    for (const auto& [r, c] : std::vector<std::pair<long, long>>{{0, 0}, {1, 17}, {3, 39}, {2, 8}}) {
        Eigen::MatrixXd up = batch, down = batch;
        up(r, c) += h;
        down(r, c) -= h;
        const double numeric =
            (gradients(net, up, spec, nullptr) - gradients(net, down, spec, nullptr)) / (2 * h);
        CHECK(input_grad(r, c) == doctest::Approx(numeric).epsilon(1e-5));
    }
}

TEST_CASE("a similarity-only loss leaves the dense head untouched") {
    const auto net = MicroNet::make(4, 28);
    const auto teacher = MicroNet::make(4, 29);
    const auto batch = pack_signals(generate_dataset(5, 30));
    const auto teacher_taps = taps_of(teacher, batch);
    LossSpec spec;
    spec.teacher_taps = &teacher_taps;
    Eigen::VectorXd grad(net.params.size());
    gradients(net, batch, spec, &grad);
    const long dense_params = 10 * net.dense_in + 10;
    CHECK(grad.tail(dense_params).cwiseAbs().maxCoeff() == 0.0);
    CHECK(grad.head(net.params.size() - dense_params).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("gradients validates its loss specification") {
    const auto net = MicroNet::make(4, 31);
    const auto batch = pack_signals(generate_dataset(3, 32));
    LossSpec empty;
    CHECK_THROWS(gradients(net, batch, empty, nullptr));
    std::vector<long> bad_labels = {0, 1};  // wrong count
    LossSpec mismatched;
    mismatched.labels = &bad_labels;
    CHECK_THROWS(gradients(net, batch, mismatched, nullptr));
}

/* ---- adversarial attack ------------------------------------------------------------------ */

TEST_CASE("a zero-budget attack returns the batch unchanged") {
    const auto net = MicroNet::make(4, 33);
    const auto data = generate_dataset(8, 34);
    const auto batch = pack_signals(data);
    PgdConfig cfg;
    cfg.epsilon = 0.0;
    const auto adv = pgd_attack(net, batch, pack_labels(data), cfg, 5);
    CHECK((adv - batch).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("attacks respect the L-infinity budget and are deterministic") {
    const auto net = MicroNet::make(4, 35);
    const auto data = generate_dataset(8, 36);
    const auto batch = pack_signals(data);
    PgdConfig cfg;
    cfg.epsilon = 0.25;
    cfg.steps = 7;
    const auto adv = pgd_attack(net, batch, pack_labels(data), cfg, 6);
    CHECK((adv - batch).cwiseAbs().maxCoeff() <= 0.25 + 1e-12);
    CHECK((adv - batch).cwiseAbs().maxCoeff() > 0.0);
    const auto again = pgd_attack(net, batch, pack_labels(data), cfg, 6);
    CHECK((adv - again).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("attacks degrade a trained network") {
    const auto data = generate_dataset(1000, 37);
    DistillConfig cfg;
    cfg.epochs = 64;
    cfg.presentations_unit = 1000;
    const auto trained =
        train(MicroNet::make(4, 38), data, OptimizerSpec{}, cfg, nullptr, nullptr, 39);
    const auto eval_data = generate_dataset(400, 40);
    PgdConfig attack;
    attack.epsilon = 0.3;
    attack.steps = 10;
    const auto result = evaluate(trained.net, eval_data, &attack, 41);
    CHECK(result.clean_acc > 0.5);
    CHECK(result.adv_acc < result.clean_acc);
}

/* ---- training ------------------------------------------------------------------------------ */

TEST_CASE("training is deterministic and reduces the loss") {
    const auto data = generate_dataset(600, 42);
    DistillConfig cfg;
    cfg.epochs = 6;
    cfg.presentations_unit = 500;
    const auto a = train(MicroNet::make(4, 43), data, OptimizerSpec{}, cfg, nullptr, nullptr, 44);
    const auto b = train(MicroNet::make(4, 43), data, OptimizerSpec{}, cfg, nullptr, nullptr, 44);
    CHECK((a.net.params - b.net.params).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(a.history.epoch_loss.size() == 6);
    CHECK(a.history.epoch_loss.back() < a.history.epoch_loss.front());
    CHECK(a.history.steps == 30);  // 6 epochs x 500 presentations / batch 100
}

TEST_CASE("the learning rate drops by the configured factor at the halfway step") {
    const auto data = generate_dataset(300, 45);
    DistillConfig cfg;
    cfg.epochs = 6;
    cfg.presentations_unit = 500;
    const auto out = train(MicroNet::make(4, 46), data, OptimizerSpec{}, cfg, nullptr, nullptr, 47);
    REQUIRE(out.history.epoch_lr.size() == 6);
    CHECK(out.history.epoch_lr.front() == 0.01);
    CHECK(out.history.epoch_lr.back() == doctest::Approx(0.001).epsilon(1e-12));
}

TEST_CASE("the presentation budget is set by epochs, not dataset size") {
    DistillConfig cfg;
    cfg.epochs = 4;
    cfg.presentations_unit = 300;
    OptimizerSpec opt;
    opt.batch_size = 50;
    const auto small = train(MicroNet::make(4, 48), generate_dataset(100, 49), opt, cfg,
                             nullptr, nullptr, 50);
    const auto large = train(MicroNet::make(4, 48), generate_dataset(2000, 49), opt, cfg,
                             nullptr, nullptr, 50);
    CHECK(small.history.steps == 24);  // 4 x 300 / 50
    CHECK(large.history.steps == 24);
}

TEST_CASE("students learn to mimic their teacher's labels") {
    const auto data = generate_dataset(1000, 51);
    DistillConfig cfg;
    cfg.epochs = 24;
    cfg.presentations_unit = 1000;
    const auto teacher =
        train(MicroNet::make(16, 52), data, OptimizerSpec{}, cfg, nullptr, nullptr, 53);

    const auto student = train(MicroNet::make(16, 54), data, OptimizerSpec{}, cfg,
                               &teacher.net, nullptr, 55);
    const auto probe = pack_signals(generate_dataset(400, 56));
    const auto t_logits = forward(teacher.net, probe).logits;
    const auto s_logits = forward(student.net, probe).logits;
    int agree = 0;
    for (long i = 0; i < probe.rows(); ++i) {
        long ti, si;
        t_logits.row(i).maxCoeff(&ti);
        s_logits.row(i).maxCoeff(&si);
        if (ti == si) ++agree;
    }
    CHECK(double(agree) / double(probe.rows()) > 0.8);
}

TEST_CASE("a positive similarity weight requires a teacher") {
    const auto data = generate_dataset(50, 57);
    DistillConfig cfg;
    cfg.beta = 1.0;
    CHECK_THROWS(train(MicroNet::make(4, 58), data, OptimizerSpec{}, cfg, nullptr, nullptr, 59));
}

TEST_CASE("similarity-regularized training stays numerically sound") {
    const auto data = generate_dataset(400, 60);
    DistillConfig cfg;
    cfg.epochs = 3;
    cfg.presentations_unit = 300;
    const auto teacher =
        train(MicroNet::make(4, 61), data, OptimizerSpec{}, cfg, nullptr, nullptr, 62);
    cfg.beta = 0.9;
    cfg.feature_noise_frac = 0.05;
    const auto student = train(MicroNet::make(4, 63), data, OptimizerSpec{}, cfg,
                               &teacher.net, nullptr, 64);
    for (const double l : student.history.epoch_loss) CHECK(std::isfinite(l));
    CHECK(student.net.params.allFinite());
}

TEST_CASE("evaluation without an attack reports equal clean and adversarial accuracy") {
    const auto net = MicroNet::make(4, 65);
    const auto data = generate_dataset(100, 66);
    const auto result = evaluate(net, data, nullptr, 67);
    CHECK(result.clean_acc == result.adv_acc);
    CHECK(result.clean_acc >= 0.0);
    CHECK(result.clean_acc <= 1.0);
}

/* ---- study ----------------------------------------------------------------------------------- */

TEST_CASE("a miniature study emits one row per live cell with the exact header") {
    StudyConfig cfg;
    cfg.size_mults = {1};
    cfg.betas = {0, 5};
    cfg.noise_fracs = {0};
    cfg.n_seeds = 1;
    cfg.channels = 4;
    cfg.epochs = 2;
    cfg.presentations_unit = 200;
    cfg.teacher_size_mult = 2;
    cfg.train_attack = {0.3, 5, 0};
    cfg.eval_attack = {0.16, 5, 0};
    cfg.eval_n = 200;
    const auto report = run_distillation_study(cfg, 71);
    CHECK(report.failures.empty());
    /* beta 0 and beta 5 students, plus the adversarially trained student */
    REQUIRE(report.rows.size() == 3);
    CHECK(report.rows[0].beta == 0);
    CHECK(report.rows[1].beta == 5);
    CHECK(report.rows[2].beta == -1);
    for (const auto& r : report.rows) {
        CHECK(r.clean_acc >= 0.0);
        CHECK(r.clean_acc <= 1.0);
        CHECK(r.adv_acc >= 0.0);
        CHECK(r.adv_acc <= 1.0);
    }

    const auto dir = temp_dir();
    const auto path = (dir / "study.csv").string();
    report.to_csv(path);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "size_mult,beta,noise_frac,seed,clean_acc,adv_acc");
    std::filesystem::remove_all(dir);
}

TEST_CASE("study rows are reproducible from the master seed") {
    StudyConfig cfg;
    cfg.size_mults = {1};
    cfg.betas = {0};
    cfg.noise_fracs = {0};
    cfg.n_seeds = 1;
    cfg.channels = 4;
    cfg.epochs = 2;
    cfg.presentations_unit = 200;
    cfg.teacher_size_mult = 1;
    cfg.train_attack = {0.3, 3, 0};
    cfg.eval_attack = {0.16, 3, 0};
    cfg.eval_n = 100;
    cfg.include_adv_students = false;
    const auto a = run_distillation_study(cfg, 72);
    const auto b = run_distillation_study(cfg, 72);
    REQUIRE(a.rows.size() == 1);
    REQUIRE(b.rows.size() == 1);
    CHECK(a.rows[0].clean_acc == b.rows[0].clean_acc);
    CHECK(a.rows[0].adv_acc == b.rows[0].adv_acc);
}

TEST_CASE("noise fractions multiply only the similarity cells") {
    StudyConfig cfg;
    cfg.size_mults = {1};
    cfg.betas = {0, 5};
    cfg.noise_fracs = {0, 0.1};
    cfg.n_seeds = 1;
    cfg.channels = 4;
    cfg.epochs = 1;
    cfg.presentations_unit = 100;
    cfg.teacher_size_mult = 1;
    cfg.train_attack = {0.3, 2, 0};
    cfg.eval_attack = {0.16, 2, 0};
    cfg.eval_n = 50;
    cfg.include_adv_students = false;
    const auto report = run_distillation_study(cfg, 73);
    /* beta 0: one row (noise ignored); beta 5: two rows */
    REQUIRE(report.rows.size() == 3);
    CHECK(report.rows[0].beta == 0);
    CHECK(report.rows[0].noise_frac == 0);
    CHECK(report.rows[1].noise_frac == 0);
    CHECK(report.rows[2].noise_frac == 0.1);
}

TEST_CASE("study configuration is validated") {
    StudyConfig cfg;
    cfg.betas = {};
    CHECK_THROWS(run_distillation_study(cfg, 1));
    StudyConfig cfg2;
    cfg2.n_seeds = 0;
    CHECK_THROWS(run_distillation_study(cfg2, 1));
    StudyConfig cfg3;
    cfg3.betas = {-2};
    CHECK_THROWS(run_distillation_study(cfg3, 1));
}
