#pragma once
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace twinlab::distill_lab {

/* ---- 1-D dataset --------------------------------------------------------------
 * Each example is a length-40 signal built from one of ten 12-sample class
 * templates: random placement, random amplitude scale, additive Gaussian
 * noise, Gaussian smoothing, then per-example standardization. Labels cycle
 * 0..9 so any n divisible by 10 is exactly class-balanced. */

constexpr int kSignalLen = 40;
constexpr int kTemplateLen = 12;
constexpr int kNumClasses = 10;

struct Example1D {
    Eigen::VectorXd signal;  // length kSignalLen
    long label = 0;          // 0..9
};

struct GenParams {
    double scale_min = 0.8, scale_max = 1.2;  // amplitude scale range
    double noise_sd = 0.08;                   // additive white noise
    double smooth_sd = 1.0;                   // Gaussian smoothing kernel SD (0: off)
};

const std::array<std::array<double, kTemplateLen>, kNumClasses>& class_templates();

std::vector<Example1D> generate_dataset(long n, uint64_t rng_seed, const GenParams& params = {});

/* rows = examples */
Eigen::MatrixXd pack_signals(const std::vector<Example1D>& data);
std::vector<long> pack_labels(const std::vector<Example1D>& data);

/* ---- network -------------------------------------------------------------------
 * Stack of strided 1-D convolutions with ReLU, then a dense classifier head.
 * Activations are laid out (batch, channel*length) with index c*len + t.
 * Parameter vector layout, in order per conv layer: weights w[out][in][k]
 * then biases b[out]; finally dense weights w[out][in] then biases b[out]. */

struct MicroNet {
    struct ConvSpec {
        int in_ch = 0, out_ch = 0, kernel = 0, stride = 0;
    };
    int input_len = kSignalLen;
    std::vector<ConvSpec> convs;
    int dense_in = 0;
    int n_classes = kNumClasses;
    Eigen::VectorXd params;

    static MicroNet make(int channels, uint64_t rng_seed, int n_layers = 3, int kernel = 5,
                         int stride = 2, int input_len = kSignalLen,
                         int n_classes = kNumClasses);
    long param_count() const;
    void validate() const;

    /* flat binary parameter vector + JSON shape header */
    void save(const std::string& data_path, const std::string& meta_path) const;
    static MicroNet load(const std::string& data_path, const std::string& meta_path);
};

struct Activations {
    Eigen::MatrixXd logits;                // batch x n_classes
    std::vector<Eigen::MatrixXd> taps;     // post-ReLU conv outputs, one per conv layer
};

Activations forward(const MicroNet& net, const Eigen::MatrixXd& batch);

/* ---- representational similarity ------------------------------------------------ */

enum class RsmKernel {
    CenteredCosine,  // each activation vector centered before cosine
    PlainCosine,
};

/* S x S pairwise similarity over the batch (rows of `acts`); unit diagonal. */
Eigen::MatrixXd rsm(const Eigen::MatrixXd& acts, RsmKernel kernel = RsmKernel::CenteredCosine);

/* Mean over taps of the mean squared entry-wise difference between student
 * and teacher similarity matrices; zero iff they match. Batch size >= 2. */
double rsa_loss(const std::vector<Eigen::MatrixXd>& student_taps,
                const std::vector<Eigen::MatrixXd>& teacher_taps,
                RsmKernel kernel = RsmKernel::CenteredCosine);

/* ---- losses and gradients -------------------------------------------------------- */

struct LossSpec {
    double beta = 0;          // weight of the similarity term
    bool rescale_rsa = false; // scale the similarity term to the class term's magnitude
    RsmKernel kernel = RsmKernel::CenteredCosine;
    const std::vector<long>* labels = nullptr;                  // cross-entropy targets
    const std::vector<Eigen::MatrixXd>* teacher_taps = nullptr; // similarity reference
};

/* Loss value with exact reverse-mode gradients. Composition:
 *   labels only            -> cross-entropy
 *   teacher_taps only      -> similarity loss
 *   both                   -> (1 - beta) * cross-entropy + beta * similarity
 * `param_grad` and `input_grad` are filled when non-null. */
double gradients(const MicroNet& net, const Eigen::MatrixXd& batch, const LossSpec& spec,
                 Eigen::VectorXd* param_grad, Eigen::MatrixXd* input_grad = nullptr);

/* ---- adversarial attack ------------------------------------------------------------ */

struct PgdConfig {
    double epsilon = 0.3;  // L-infinity budget
    int steps = 10;
    double step_size = 0;  // <= 0: 2.5 * epsilon / steps
};

/* Iterated signed-gradient ascent on cross-entropy, projected to the
 * epsilon-ball around the input after every step; random start in the ball. */
Eigen::MatrixXd pgd_attack(const MicroNet& net, const Eigen::MatrixXd& batch,
                           const std::vector<long>& labels, const PgdConfig& cfg,
                           uint64_t rng_seed);

/* ---- training ----------------------------------------------------------------------- */

struct OptimizerSpec {
    double lr = 0.01;
    double lr_drop_factor = 0.1;  // applied at the halfway step
    int batch_size = 100;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
};

struct DistillConfig {
    double beta = 0;               // similarity-loss weight (teacher required when > 0)
    long distinct_examples = 1000;
    int epochs = 64;
    double feature_noise_frac = 0;  // Gaussian noise on teacher taps, fraction of tap RMS
    bool rescale_rsa = false;
    RsmKernel kernel = RsmKernel::CenteredCosine;
    /* One "epoch" is presentations_unit example presentations, so total
     * optimizer steps depend only on epochs, never on distinct_examples:
     * smaller datasets are recycled, larger ones stream through. */
    long presentations_unit = 1000;
};

struct TrainHistory {
    std::vector<double> epoch_loss;
    std::vector<double> epoch_lr;
    long steps = 0;
};

struct TrainOutcome {
    MicroNet net;
    TrainHistory history;
};

/* Teacher given: targets are the teacher's argmax labels on the clean inputs
 * and beta weights the similarity term against the teacher's (optionally
 * noisy) taps. `adversarial` given: each batch is replaced by a PGD attack
 * against the current net before the loss. */
TrainOutcome train(const MicroNet& net, const std::vector<Example1D>& data,
                   const OptimizerSpec& opt, const DistillConfig& cfg,
                   const MicroNet* teacher, const PgdConfig* adversarial, uint64_t rng_seed);

struct EvalResult {
    double clean_acc = 0;
    double adv_acc = 0;  // equals clean_acc when no attack is given
};

EvalResult evaluate(const MicroNet& net, const std::vector<Example1D>& data,
                    const PgdConfig* attack, uint64_t rng_seed);

/* ---- study -------------------------------------------------------------------------- */

struct StudyConfig {
    std::vector<double> size_mults{1, 4, 16};   // distinct examples = mult * presentations_unit
    std::vector<double> betas{0, 1, 10, 100, 300};
    std::vector<double> noise_fracs{0, 0.05, 0.10};
    int n_seeds = 5;
    int channels = 16;
    int epochs = 64;
    long presentations_unit = 1000;
    double teacher_size_mult = 16;
    PgdConfig train_attack{0.3, 10, 0};
    PgdConfig eval_attack{0.16, 20, 0};
    long eval_n = 5000;
    bool include_adv_students = true;  // adversarially trained students, beta column -1
    bool rescale_rsa = false;
    OptimizerSpec optimizer{};
    GenParams gen{};
    int jobs = 1;
};

struct StudyRow {
    double size_mult = 0;
    double beta = 0;        // -1 marks an adversarially trained student
    double noise_frac = 0;
    uint64_t seed = 0;      // seed index within the study
    double clean_acc = 0;
    double adv_acc = 0;
};

struct StudyReport {
    std::vector<StudyRow> rows;
    std::vector<std::string> failures;  // per-cell errors; the study continues
    uint64_t master_seed = 0;

    void to_csv(const std::string& path) const;  // size_mult,beta,noise_frac,seed,clean_acc,adv_acc
    nlohmann::json to_json() const;
};

/* Adversarially trains one teacher per seed, then for every grid cell trains
 * a student against that teacher and evaluates clean and adversarial
 * accuracy on a held-out set. beta = 0 cells ignore noise_frac (the
 * similarity term is off), so only the noise 0 row is emitted for them. */
StudyReport run_distillation_study(const StudyConfig& cfg, uint64_t rng_seed);
StudyReport run_distillation_study(const std::vector<double>& size_mults,
                                   const std::vector<double>& betas,
                                   const std::vector<double>& noise_fracs, uint64_t rng_seed);

} // namespace twinlab::distill_lab
