#include "twinlab/distill_lab.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "twinlab/common.hpp"
#include "twinlab/csv.hpp"
#include "twinlab/parallel.hpp"
#include "twinlab/rng.hpp"

namespace twinlab::distill_lab {

/* ---- dataset ------------------------------------------------------------------- */

const std::array<std::array<double, kTemplateLen>, kNumClasses>& class_templates() {
    static const std::array<std::array<double, kTemplateLen>, kNumClasses> t = {{
        {0, 0.09, 0.18, 0.27, 0.36, 0.45, 0.55, 0.64, 0.73, 0.82, 0.91, 1.0},  // ramp up
        {1.0, 0.91, 0.82, 0.73, 0.64, 0.55, 0.45, 0.36, 0.27, 0.18, 0.09, 0},  // ramp down
        {0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.0, 0.8, 0.6, 0.4, 0.2, 0},              // triangle
        {1.0, 0.8, 0.6, 0.4, 0.2, 0, 0, 0.2, 0.4, 0.6, 0.8, 1.0},              // vee
        {0, 0, 0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0, 0, 0},                      // plateau
        {0, 1.0, 1.0, 0, 0, 0, 0, 0, 0, 1.0, 1.0, 0},                          // twin pulses
        {0, 0.54, 0.91, 0.99, 0.76, 0.28, -0.28, -0.76, -0.99, -0.91, -0.54, 0},  // sine
        {-1.0, -1.0, -1.0, -1.0, -1.0, -1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0},    // step
        {0, 0.6, 1.0, 0.6, 0, 0.15, 0.15, 0, 0.6, 1.0, 0.6, 0},                // twin peaks
        {0, 0.33, 0.67, 1.0, 0, 0.33, 0.67, 1.0, 0, 0.33, 0.67, 1.0},          // sawtooth
    }};
    return t;
}

namespace {

Eigen::VectorXd gaussian_smooth(const Eigen::VectorXd& x, double sd) {
    constexpr int kRadius = 4;
    std::array<double, 2 * kRadius + 1> kernel{};
    double sum = 0;
    for (int d = -kRadius; d <= kRadius; ++d) {
        kernel[size_t(d + kRadius)] = std::exp(-0.5 * d * d / (sd * sd));
        sum += kernel[size_t(d + kRadius)];
    }
    for (auto& k : kernel) k /= sum;
    Eigen::VectorXd out = Eigen::VectorXd::Zero(x.size());
    for (long i = 0; i < x.size(); ++i)
        for (int d = -kRadius; d <= kRadius; ++d) {
            const long j = i + d;
            if (j >= 0 && j < x.size()) out[i] += kernel[size_t(d + kRadius)] * x[j];
        }
    return out;
}

void standardize(Eigen::VectorXd& x) {
    x.array() -= x.mean();
    const double sd = std::sqrt(x.squaredNorm() / double(x.size()));
    check_runtime(sd > 0, "generate_dataset: degenerate all-constant signal");
    x /= sd;
}

} // namespace

std::vector<Example1D> generate_dataset(long n, uint64_t rng_seed, const GenParams& params) {
    check(n >= 1, "generate_dataset: n must be >= 1");
    check(params.scale_min > 0 && params.scale_max >= params.scale_min,
          "generate_dataset: need 0 < scale_min <= scale_max");
    check(params.noise_sd >= 0 && params.smooth_sd >= 0,
          "generate_dataset: noise_sd and smooth_sd must be >= 0");
    const auto& templates = class_templates();
    rng::Stream g = rng::Stream::seeded(rng::derive(rng_seed, {rng::tag("dataset")}));
    std::vector<Example1D> data;
    data.reserve(size_t(n));
    for (long i = 0; i < n; ++i) {
        Example1D ex;
        ex.label = i % kNumClasses;
        const double scale = g.uniform(params.scale_min, params.scale_max);
        const long offset = long(g.below(uint64_t(kSignalLen - kTemplateLen + 1)));
        Eigen::VectorXd x = Eigen::VectorXd::Zero(kSignalLen);
        for (int j = 0; j < kTemplateLen; ++j)
            x[offset + j] = scale * templates[size_t(ex.label)][size_t(j)];
        if (params.noise_sd > 0)
            for (long j = 0; j < kSignalLen; ++j) x[j] += params.noise_sd * rng::normal(g);
        if (params.smooth_sd > 0) x = gaussian_smooth(x, params.smooth_sd);
        standardize(x);
        ex.signal = std::move(x);
        data.push_back(std::move(ex));
    }
    return data;
}

Eigen::MatrixXd pack_signals(const std::vector<Example1D>& data) {
    check(!data.empty(), "pack_signals: empty dataset");
    Eigen::MatrixXd m(long(data.size()), kSignalLen);
    for (size_t i = 0; i < data.size(); ++i) {
        check(data[i].signal.size() == kSignalLen, "pack_signals: signal length mismatch");
        m.row(long(i)) = data[i].signal;
    }
    return m;
}

std::vector<long> pack_labels(const std::vector<Example1D>& data) {
    std::vector<long> labels(data.size());
    for (size_t i = 0; i < data.size(); ++i) {
        check(data[i].label >= 0 && data[i].label < kNumClasses, "pack_labels: label out of range");
        labels[i] = data[i].label;
    }
    return labels;
}

/* ---- network ---------------------------------------------------------------------- */

namespace {

long conv_out_len(long in_len, const MicroNet::ConvSpec& c) {
    return (in_len - c.kernel) / c.stride + 1;
}

struct LayerOffsets {
    std::vector<long> conv_w, conv_b;
    std::vector<long> in_len, out_len;
    long dense_w = 0, dense_b = 0;
    long total = 0;
};

LayerOffsets offsets_of(const MicroNet& net) {
    LayerOffsets off;
    long pos = 0;
    long len = net.input_len;
    for (const auto& c : net.convs) {
        off.in_len.push_back(len);
        off.conv_w.push_back(pos);
        pos += long(c.out_ch) * c.in_ch * c.kernel;
        off.conv_b.push_back(pos);
        pos += c.out_ch;
        len = conv_out_len(len, c);
        off.out_len.push_back(len);
    }
    off.dense_w = pos;
    pos += long(net.dense_in) * net.n_classes;
    off.dense_b = pos;
    pos += net.n_classes;
    off.total = pos;
    return off;
}

} // namespace

long MicroNet::param_count() const { return offsets_of(*this).total; }

void MicroNet::validate() const {
    check(!convs.empty(), "MicroNet: need at least one conv layer");
    check(input_len >= 1 && n_classes >= 2, "MicroNet: bad input length or class count");
    long len = input_len;
    int ch = 1;
    for (size_t i = 0; i < convs.size(); ++i) {
        const auto& c = convs[i];
        check(c.in_ch == ch, "MicroNet: layer " + std::to_string(i) +
                                 " input channels do not match the previous output");
        check(c.out_ch >= 1 && c.kernel >= 1 && c.stride >= 1,
              "MicroNet: bad conv spec at layer " + std::to_string(i));
        check(len >= c.kernel, "MicroNet: layer " + std::to_string(i) +
                                   " kernel exceeds its input length");
        len = conv_out_len(len, c);
        ch = c.out_ch;
    }
    check(dense_in == ch * len, "MicroNet: dense_in does not match the final conv output");
    check(params.size() == param_count(), "MicroNet: parameter vector has the wrong length");
}

MicroNet MicroNet::make(int channels, uint64_t rng_seed, int n_layers, int kernel, int stride,
                        int input_len, int n_classes) {
    check(channels >= 1 && n_layers >= 1, "MicroNet::make: bad channel or layer count");
    MicroNet net;
    net.input_len = input_len;
    net.n_classes = n_classes;
    int ch = 1;
    long len = input_len;
    for (int i = 0; i < n_layers; ++i) {
        ConvSpec c{ch, channels, kernel, stride};
        check(len >= kernel, "MicroNet::make: input too short for this depth");
        net.convs.push_back(c);
        len = conv_out_len(len, c);
        ch = channels;
    }
    net.dense_in = int(ch * len);
    const LayerOffsets off = offsets_of(net);
    net.params.resize(off.total);
    rng::Stream g = rng::Stream::seeded(rng::derive(rng_seed, {rng::tag("init")}));
    for (size_t i = 0; i < net.convs.size(); ++i) {
        const auto& c = net.convs[i];
        const double sd = std::sqrt(2.0 / (double(c.in_ch) * c.kernel));
        for (long p = 0; p < long(c.out_ch) * c.in_ch * c.kernel; ++p)
            net.params[off.conv_w[i] + p] = sd * rng::normal(g);
    }
    {
        const double sd = std::sqrt(1.0 / double(net.dense_in));
        for (long p = 0; p < long(net.dense_in) * net.n_classes; ++p)
            net.params[off.dense_w + p] = sd * rng::normal(g);
    }
    for (size_t i = 0; i < net.convs.size(); ++i)
        for (int b = 0; b < net.convs[i].out_ch; ++b) net.params[off.conv_b[i] + b] = 0;
    for (int b = 0; b < net.n_classes; ++b) net.params[off.dense_b + b] = 0;
    net.validate();
    return net;
}

void MicroNet::save(const std::string& data_path, const std::string& meta_path) const {
    validate();
    std::ofstream data(data_path, std::ios::binary);
    check_runtime(bool(data), "cannot write " + data_path);
    data.write(reinterpret_cast<const char*>(params.data()),
               std::streamsize(sizeof(double) * size_t(params.size())));
    check_runtime(bool(data), "write failed: " + data_path);
    nlohmann::json convs_json = nlohmann::json::array();
    for (const auto& c : convs)
        convs_json.push_back({{"in_ch", c.in_ch},
                              {"out_ch", c.out_ch},
                              {"kernel", c.kernel},
                              {"stride", c.stride}});
    const nlohmann::json meta = {{"input_len", input_len},
                                 {"n_classes", n_classes},
                                 {"dense_in", dense_in},
                                 {"convs", convs_json},
                                 {"n_params", params.size()}};
    std::ofstream out(meta_path);
    check_runtime(bool(out), "cannot write " + meta_path);
    out << meta.dump(2) << '\n';
    check_runtime(bool(out), "write failed: " + meta_path);
}

MicroNet MicroNet::load(const std::string& data_path, const std::string& meta_path) {
    std::ifstream in(meta_path);
    check_runtime(bool(in), "cannot open " + meta_path);
    const nlohmann::json meta = nlohmann::json::parse(in);
    MicroNet net;
    net.input_len = meta.at("input_len").get<int>();
    net.n_classes = meta.at("n_classes").get<int>();
    net.dense_in = meta.at("dense_in").get<int>();
    for (const auto& c : meta.at("convs"))
        net.convs.push_back({c.at("in_ch").get<int>(), c.at("out_ch").get<int>(),
                             c.at("kernel").get<int>(), c.at("stride").get<int>()});
    const long n_params = meta.at("n_params").get<long>();
    net.params.resize(n_params);
    std::ifstream data(data_path, std::ios::binary);
    check_runtime(bool(data), "cannot open " + data_path);
    data.read(reinterpret_cast<char*>(net.params.data()),
              std::streamsize(sizeof(double) * size_t(n_params)));
    check_runtime(bool(data), "short read: " + data_path);
    net.validate();
    return net;
}

/* ---- forward / backward -------------------------------------------------------------- */

namespace {

struct ForwardCache {
    std::vector<Eigen::MatrixXd> cols;  // im2col per conv layer, (S*Lo) x (in_ch*k)
    std::vector<Eigen::MatrixXd> pre;   // pre-activation, S x (out_ch*Lo)
    std::vector<Eigen::MatrixXd> act;   // post-ReLU
    Eigen::MatrixXd logits;
};

Eigen::MatrixXd conv_weight_matrix(const MicroNet& net, const LayerOffsets& off, size_t layer) {
    const auto& c = net.convs[layer];
    Eigen::MatrixXd w(long(c.in_ch) * c.kernel, c.out_ch);
    for (int oc = 0; oc < c.out_ch; ++oc)
        for (int ic = 0; ic < c.in_ch; ++ic)
            for (int dk = 0; dk < c.kernel; ++dk)
                w(long(ic) * c.kernel + dk, oc) =
                    net.params[off.conv_w[layer] + (long(oc) * c.in_ch + ic) * c.kernel + dk];
    return w;
}

void forward_pass(const MicroNet& net, const Eigen::MatrixXd& batch, ForwardCache& cache) {
    net.validate();
    check(batch.cols() == net.input_len,
          "forward: batch has " + std::to_string(batch.cols()) + " columns, expected " +
              std::to_string(net.input_len));
    check(batch.rows() >= 1, "forward: empty batch");
    check(batch.allFinite(), "forward: non-finite input");
    const LayerOffsets off = offsets_of(net);
    const long s_count = batch.rows();

    Eigen::MatrixXd current = batch;  // S x (ch*len)
    for (size_t layer = 0; layer < net.convs.size(); ++layer) {
        const auto& c = net.convs[layer];
        const long li = off.in_len[layer], lo = off.out_len[layer];
        Eigen::MatrixXd col(s_count * lo, long(c.in_ch) * c.kernel);
        for (long s = 0; s < s_count; ++s)
            for (long o = 0; o < lo; ++o)
                for (int ic = 0; ic < c.in_ch; ++ic)
                    for (int dk = 0; dk < c.kernel; ++dk)
                        col(s * lo + o, long(ic) * c.kernel + dk) =
                            current(s, long(ic) * li + o * c.stride + dk);
        const Eigen::MatrixXd w = conv_weight_matrix(net, off, layer);
        const Eigen::MatrixXd out2d = col * w;  // (S*Lo) x out_ch
        Eigen::MatrixXd pre(s_count, long(c.out_ch) * lo);
        for (long s = 0; s < s_count; ++s)
            for (int oc = 0; oc < c.out_ch; ++oc)
                for (long o = 0; o < lo; ++o)
                    pre(s, long(oc) * lo + o) =
                        out2d(s * lo + o, oc) + net.params[off.conv_b[layer] + oc];
        cache.cols.push_back(std::move(col));
        cache.act.push_back(pre.cwiseMax(0.0));
        cache.pre.push_back(std::move(pre));
        current = cache.act.back();
    }

    Eigen::MatrixXd dense_w(net.dense_in, net.n_classes);
    for (int oc = 0; oc < net.n_classes; ++oc)
        for (int ic = 0; ic < net.dense_in; ++ic)
            dense_w(ic, oc) = net.params[off.dense_w + long(oc) * net.dense_in + ic];
    cache.logits = current * dense_w;
    for (long s = 0; s < s_count; ++s)
        for (int oc = 0; oc < net.n_classes; ++oc)
            cache.logits(s, oc) += net.params[off.dense_b + oc];
}

/* gradient of the configured loss back through the network; d_taps may hold an
 * extra gradient flowing directly into each conv layer's activations */
void backward_pass(const MicroNet& net, const ForwardCache& cache,
                   const Eigen::MatrixXd& d_logits,
                   const std::vector<Eigen::MatrixXd>& d_taps, Eigen::VectorXd* param_grad,
                   Eigen::MatrixXd* input_grad, const Eigen::MatrixXd& batch) {
    const LayerOffsets off = offsets_of(net);
    const long s_count = cache.logits.rows();
    if (param_grad) param_grad->setZero(off.total);

    /* dense head */
    const Eigen::MatrixXd& dense_in_act = cache.act.back();
    if (param_grad) {
        const Eigen::MatrixXd dw = dense_in_act.transpose() * d_logits;  // in x out
        for (int oc = 0; oc < net.n_classes; ++oc) {
            for (int ic = 0; ic < net.dense_in; ++ic)
                (*param_grad)[off.dense_w + long(oc) * net.dense_in + ic] = dw(ic, oc);
            (*param_grad)[off.dense_b + oc] = d_logits.col(oc).sum();
        }
    }
    Eigen::MatrixXd dense_w(net.dense_in, net.n_classes);
    for (int oc = 0; oc < net.n_classes; ++oc)
        for (int ic = 0; ic < net.dense_in; ++ic)
            dense_w(ic, oc) = net.params[off.dense_w + long(oc) * net.dense_in + ic];
    Eigen::MatrixXd d_act = d_logits * dense_w.transpose();  // S x dense_in

    /* conv stack, reversed */
    for (long layer = long(net.convs.size()) - 1; layer >= 0; --layer) {
        const auto& c = net.convs[size_t(layer)];
        const long li = off.in_len[size_t(layer)], lo = off.out_len[size_t(layer)];
        if (size_t(layer) < d_taps.size() && d_taps[size_t(layer)].size() > 0)
            d_act += d_taps[size_t(layer)];
        const Eigen::MatrixXd d_pre =
            (cache.pre[size_t(layer)].array() > 0.0).cast<double>() * d_act.array();

        Eigen::MatrixXd d2d(s_count * lo, c.out_ch);
        for (long s = 0; s < s_count; ++s)
            for (int oc = 0; oc < c.out_ch; ++oc)
                for (long o = 0; o < lo; ++o) d2d(s * lo + o, oc) = d_pre(s, long(oc) * lo + o);

        if (param_grad) {
            const Eigen::MatrixXd dw = cache.cols[size_t(layer)].transpose() * d2d;
            for (int oc = 0; oc < c.out_ch; ++oc) {
                for (int ic = 0; ic < c.in_ch; ++ic)
                    for (int dk = 0; dk < c.kernel; ++dk)
                        (*param_grad)[off.conv_w[size_t(layer)] +
                                      (long(oc) * c.in_ch + ic) * c.kernel + dk] =
                            dw(long(ic) * c.kernel + dk, oc);
                (*param_grad)[off.conv_b[size_t(layer)] + oc] = d2d.col(oc).sum();
            }
        }

        const bool need_input = layer > 0 || input_grad;
        if (!need_input) break;
        const Eigen::MatrixXd w = conv_weight_matrix(net, off, size_t(layer));
        const Eigen::MatrixXd d_col = d2d * w.transpose();  // (S*Lo) x (in_ch*k)
        Eigen::MatrixXd d_in = Eigen::MatrixXd::Zero(s_count, long(c.in_ch) * li);
        for (long s = 0; s < s_count; ++s)
            for (long o = 0; o < lo; ++o)
                for (int ic = 0; ic < c.in_ch; ++ic)
                    for (int dk = 0; dk < c.kernel; ++dk)
                        d_in(s, long(ic) * li + o * c.stride + dk) +=
                            d_col(s * lo + o, long(ic) * c.kernel + dk);
        d_act = std::move(d_in);
    }
    if (input_grad) {
        check_runtime(d_act.cols() == batch.cols(), "backward: input gradient shape mismatch");
        *input_grad = d_act;
    }
}

} // namespace

Activations forward(const MicroNet& net, const Eigen::MatrixXd& batch) {
    ForwardCache cache;
    forward_pass(net, batch, cache);
    return {cache.logits, cache.act};
}

/* ---- similarity ---------------------------------------------------------------------- */

namespace {

constexpr double kNormFloor = 1e-30;

struct RsmWork {
    Eigen::MatrixXd u;        // normalized (possibly centered) activation rows
    Eigen::VectorXd norms;    // pre-normalization row norms
    Eigen::MatrixXd matrix;   // the similarity matrix
};

RsmWork rsm_build(const Eigen::MatrixXd& acts, RsmKernel kernel) {
    check(acts.rows() >= 1 && acts.cols() >= 1, "rsm: empty activations");
    check(acts.allFinite(), "rsm: non-finite activations");
    RsmWork w;
    w.u = acts;
    if (kernel == RsmKernel::CenteredCosine)
        for (long i = 0; i < w.u.rows(); ++i) w.u.row(i).array() -= w.u.row(i).mean();
    w.norms.resize(w.u.rows());
    for (long i = 0; i < w.u.rows(); ++i) {
        w.norms[i] = w.u.row(i).norm();
        w.u.row(i) /= std::max(w.norms[i], kNormFloor);
    }
    w.matrix = w.u * w.u.transpose();
    w.matrix.diagonal().setOnes();
    return w;
}

} // namespace

Eigen::MatrixXd rsm(const Eigen::MatrixXd& acts, RsmKernel kernel) {
    return rsm_build(acts, kernel).matrix;
}

double rsa_loss(const std::vector<Eigen::MatrixXd>& student_taps,
                const std::vector<Eigen::MatrixXd>& teacher_taps, RsmKernel kernel) {
    check(!student_taps.empty() && student_taps.size() == teacher_taps.size(),
          "rsa_loss: tap counts differ");
    double total = 0;
    for (size_t t = 0; t < student_taps.size(); ++t) {
        check(student_taps[t].rows() == teacher_taps[t].rows(),
              "rsa_loss: batch sizes differ at tap " + std::to_string(t));
        check(student_taps[t].rows() >= 2, "rsa_loss: batch size must be >= 2");
        const Eigen::MatrixXd diff = rsm(student_taps[t], kernel) - rsm(teacher_taps[t], kernel);
        total += diff.squaredNorm() / double(diff.size());
    }
    return total / double(student_taps.size());
}

/* ---- loss with gradients --------------------------------------------------------------- */

namespace {

/* similarity loss for one tap plus its gradient w.r.t. the student activations */
double rsa_tap_grad(const Eigen::MatrixXd& student, const Eigen::MatrixXd& teacher,
                    RsmKernel kernel, double weight, Eigen::MatrixXd& d_act) {
    const RsmWork sw = rsm_build(student, kernel);
    const Eigen::MatrixXd tm = rsm(teacher, kernel);
    const Eigen::MatrixXd diff = sw.matrix - tm;
    const double loss = diff.squaredNorm() / double(diff.size());

    Eigen::MatrixXd g = (2.0 / double(diff.size())) * diff;
    g.diagonal().setZero();                      // diagonal is pinned to 1
    const Eigen::MatrixXd du = 2.0 * (g * sw.u); // d loss / d normalized rows
    Eigen::MatrixXd dc(student.rows(), student.cols());
    for (long i = 0; i < student.rows(); ++i) {
        if (sw.norms[i] <= kNormFloor) {
            dc.row(i).setZero();  // degenerate all-zero activation: flat direction
            continue;
        }
        const double along = sw.u.row(i).dot(du.row(i));
        dc.row(i) = (du.row(i) - along * sw.u.row(i)) / sw.norms[i];
    }
    if (kernel == RsmKernel::CenteredCosine)
        for (long i = 0; i < dc.rows(); ++i) dc.row(i).array() -= dc.row(i).mean();
    d_act = weight * dc;
    return loss;
}

} // namespace

double gradients(const MicroNet& net, const Eigen::MatrixXd& batch, const LossSpec& spec,
                 Eigen::VectorXd* param_grad, Eigen::MatrixXd* input_grad) {
    check(spec.labels || spec.teacher_taps,
          "gradients: the loss needs labels, teacher taps, or both");
    ForwardCache cache;
    forward_pass(net, batch, cache);
    const long s_count = batch.rows();

    double ce = 0;
    Eigen::MatrixXd d_logits = Eigen::MatrixXd::Zero(s_count, net.n_classes);
    if (spec.labels) {
        check(long(spec.labels->size()) == s_count, "gradients: label count != batch size");
        for (long s = 0; s < s_count; ++s) {
            const long y = (*spec.labels)[size_t(s)];
            check(y >= 0 && y < net.n_classes, "gradients: label out of range");
            const double mx = cache.logits.row(s).maxCoeff();
            const double lse =
                mx + std::log((cache.logits.row(s).array() - mx).exp().sum());
            ce += (lse - cache.logits(s, y)) / double(s_count);
            for (int k = 0; k < net.n_classes; ++k)
                d_logits(s, k) =
                    (std::exp(cache.logits(s, k) - lse) - (k == y ? 1.0 : 0.0)) / double(s_count);
        }
    }

    double rsa = 0;
    std::vector<Eigen::MatrixXd> d_taps;
    const bool weighted = spec.labels && spec.teacher_taps;
    double w_ce = spec.labels ? 1.0 : 0.0;
    double w_rsa = spec.teacher_taps ? 1.0 : 0.0;
    if (spec.teacher_taps) {
        check(spec.teacher_taps->size() == cache.act.size(),
              "gradients: teacher tap count != conv layer count");
        check(s_count >= 2, "gradients: similarity loss needs batch size >= 2");
        d_taps.resize(cache.act.size());
        for (size_t t = 0; t < cache.act.size(); ++t) {
            check((*spec.teacher_taps)[t].rows() == s_count &&
                      (*spec.teacher_taps)[t].cols() == cache.act[t].cols(),
                  "gradients: teacher tap shape mismatch at tap " + std::to_string(t));
            rsa += rsa_tap_grad(cache.act[t], (*spec.teacher_taps)[t], spec.kernel,
                                1.0 / double(cache.act.size()), d_taps[t]);
        }
        rsa /= double(cache.act.size());
    }

    if (weighted) {
        w_ce = 1.0 - spec.beta;
        w_rsa = spec.rescale_rsa ? spec.beta * std::fabs(ce) / std::max(rsa, 1e-8) : spec.beta;
    }
    const double loss = w_ce * ce + w_rsa * rsa;
    check_runtime(std::isfinite(loss), "gradients: non-finite loss");

    if (param_grad || input_grad) {
        d_logits *= w_ce;
        for (auto& d : d_taps) d *= w_rsa;
        backward_pass(net, cache, d_logits, d_taps, param_grad, input_grad, batch);
    }
    return loss;
}

/* ---- PGD ------------------------------------------------------------------------------- */

Eigen::MatrixXd pgd_attack(const MicroNet& net, const Eigen::MatrixXd& batch,
                           const std::vector<long>& labels, const PgdConfig& cfg,
                           uint64_t rng_seed) {
    check(cfg.epsilon >= 0, "pgd_attack: epsilon must be >= 0");
    check(cfg.steps >= 1, "pgd_attack: steps must be >= 1");
    check(long(labels.size()) == batch.rows(), "pgd_attack: label count != batch size");
    if (cfg.epsilon == 0) return batch;

    const double step = cfg.step_size > 0 ? cfg.step_size : 2.5 * cfg.epsilon / cfg.steps;
    rng::Stream g = rng::Stream::seeded(rng::derive(rng_seed, {rng::tag("pgd")}));
    Eigen::MatrixXd x = batch;
    for (long i = 0; i < x.rows(); ++i)
        for (long j = 0; j < x.cols(); ++j) x(i, j) += g.uniform(-cfg.epsilon, cfg.epsilon);

    LossSpec spec;
    spec.labels = &labels;
    const Eigen::MatrixXd lo = batch.array() - cfg.epsilon;
    const Eigen::MatrixXd hi = batch.array() + cfg.epsilon;
    for (int it = 0; it < cfg.steps; ++it) {
        Eigen::MatrixXd gin;
        gradients(net, x, spec, nullptr, &gin);
        for (long i = 0; i < x.rows(); ++i)
            for (long j = 0; j < x.cols(); ++j) {
                const double s = gin(i, j) > 0 ? 1.0 : (gin(i, j) < 0 ? -1.0 : 0.0);
                x(i, j) = std::clamp(x(i, j) + step * s, lo(i, j), hi(i, j));
            }
    }
    return x;
}

/* ---- training ----------------------------------------------------------------------------- */

namespace {

std::vector<long> predict_labels(const MicroNet& net, const Eigen::MatrixXd& x) {
    std::vector<long> labels(size_t(x.rows()), 0L);
    constexpr long kChunk = 512;
    for (long start = 0; start < x.rows(); start += kChunk) {
        const long count = std::min(kChunk, x.rows() - start);
        const Activations a = forward(net, x.middleRows(start, count));
        for (long s = 0; s < count; ++s) {
            long best = 0;
            a.logits.row(s).maxCoeff(&best);
            labels[size_t(start + s)] = best;
        }
    }
    return labels;
}

} // namespace

TrainOutcome train(const MicroNet& net, const std::vector<Example1D>& data,
                   const OptimizerSpec& opt, const DistillConfig& cfg, const MicroNet* teacher,
                   const PgdConfig* adversarial, uint64_t rng_seed) {
    check(!data.empty(), "train: empty dataset");
    check(cfg.epochs >= 1 && cfg.presentations_unit >= 1, "train: bad schedule");
    check(cfg.beta == 0 || teacher, "train: beta > 0 needs a teacher");
    check(opt.lr > 0 && opt.batch_size >= 1, "train: bad optimizer spec");
    if (teacher) {
        teacher->validate();
        check(teacher->input_len == net.input_len && teacher->n_classes == net.n_classes,
              "train: teacher and student shapes differ");
    }

    const long n = long(data.size());
    const Eigen::MatrixXd x_all = pack_signals(data);
    const std::vector<long> true_labels = pack_labels(data);
    const std::vector<long> targets = teacher ? predict_labels(*teacher, x_all) : true_labels;

    const long batch = std::min<long>(opt.batch_size, n);
    const long total_steps =
        std::max<long>(1, (long(cfg.epochs) * cfg.presentations_unit) / batch);
    const long steps_per_epoch = std::max<long>(1, total_steps / cfg.epochs);

    TrainOutcome out;
    out.net = net;
    Eigen::VectorXd m = Eigen::VectorXd::Zero(net.params.size());
    Eigen::VectorXd v = Eigen::VectorXd::Zero(net.params.size());

    std::vector<long> order(size_t(n), 0L);
    std::iota(order.begin(), order.end(), 0);
    rng::Stream order_g = rng::Stream::seeded(rng::derive(rng_seed, {rng::tag("order")}));
    long pos = n;  // forces a shuffle before the first batch

    std::vector<double> step_losses;
    step_losses.reserve(size_t(total_steps));
    out.history.epoch_lr.assign(size_t(cfg.epochs), opt.lr);

    for (long step = 0; step < total_steps; ++step) {
        const double lr = step >= total_steps / 2 ? opt.lr * opt.lr_drop_factor : opt.lr;

        if (pos + batch > n) {
            for (long i = n - 1; i > 0; --i)
                std::swap(order[size_t(i)], order[size_t(order_g.below(uint64_t(i) + 1))]);
            pos = 0;
        }
        Eigen::MatrixXd xb(batch, net.input_len);
        std::vector<long> yb(size_t(batch), 0L);
        for (long b = 0; b < batch; ++b) {
            const long idx = order[size_t(pos + b)];
            xb.row(b) = x_all.row(idx);
            yb[size_t(b)] = targets[size_t(idx)];
        }
        pos += batch;

        if (adversarial && adversarial->epsilon > 0)
            xb = pgd_attack(out.net, xb, yb, *adversarial,
                            rng::derive(rng_seed, {rng::tag("attack"), uint64_t(step)}));

        LossSpec spec;
        spec.labels = &yb;
        spec.beta = cfg.beta;
        spec.rescale_rsa = cfg.rescale_rsa;
        spec.kernel = cfg.kernel;
        std::vector<Eigen::MatrixXd> teacher_taps;
        if (teacher && cfg.beta != 0) {
            teacher_taps = forward(*teacher, xb).taps;
            if (cfg.feature_noise_frac > 0) {
                rng::Stream ng = rng::Stream::seeded(
                    rng::derive(rng_seed, {rng::tag("feature_noise"), uint64_t(step)}));
                for (auto& tap : teacher_taps) {
                    const double rms = std::sqrt(tap.squaredNorm() / double(tap.size()));
                    const double sd = cfg.feature_noise_frac * rms;
                    for (long i = 0; i < tap.rows(); ++i)
                        for (long j = 0; j < tap.cols(); ++j) tap(i, j) += sd * rng::normal(ng);
                }
            }
            spec.teacher_taps = &teacher_taps;
        }

        Eigen::VectorXd grad;
        double loss = 0;
        try {
            loss = gradients(out.net, xb, spec, &grad);
        } catch (const std::exception& e) {
            throw std::runtime_error("train: " + std::string(e.what()) + " at step " +
                                     std::to_string(step));
        }
        step_losses.push_back(loss);

        const double t = double(step + 1);
        const double bc1 = 1.0 - std::pow(opt.beta1, t);
        const double bc2 = 1.0 - std::pow(opt.beta2, t);
        for (long p = 0; p < grad.size(); ++p) {
            m[p] = opt.beta1 * m[p] + (1.0 - opt.beta1) * grad[p];
            v[p] = opt.beta2 * v[p] + (1.0 - opt.beta2) * grad[p] * grad[p];
            out.net.params[p] -= lr * (m[p] / bc1) / (std::sqrt(v[p] / bc2) + opt.adam_eps);
        }
        if (step % steps_per_epoch == 0) {
            const size_t epoch = std::min<size_t>(size_t(step / steps_per_epoch),
                                                  size_t(cfg.epochs) - 1);
            out.history.epoch_lr[epoch] = lr;
        }
    }

    out.history.steps = total_steps;
    for (int e = 0; e < cfg.epochs; ++e) {
        const long lo = e * steps_per_epoch;
        const long hi = e == cfg.epochs - 1 ? total_steps : std::min(total_steps, lo + steps_per_epoch);
        if (lo >= long(step_losses.size())) break;
        double sum = 0;
        long cnt = 0;
        for (long i = lo; i < hi && i < long(step_losses.size()); ++i) {
            sum += step_losses[size_t(i)];
            ++cnt;
        }
        out.history.epoch_loss.push_back(cnt > 0 ? sum / double(cnt) : 0.0);
    }
    return out;
}

EvalResult evaluate(const MicroNet& net, const std::vector<Example1D>& data,
                    const PgdConfig* attack, uint64_t rng_seed) {
    check(!data.empty(), "evaluate: empty dataset");
    const Eigen::MatrixXd x = pack_signals(data);
    const std::vector<long> labels = pack_labels(data);
    const long n = x.rows();
    constexpr long kChunk = 200;

    long clean_hits = 0, adv_hits = 0;
    long batch_index = 0;
    for (long start = 0; start < n; start += kChunk, ++batch_index) {
        const long count = std::min(kChunk, n - start);
        const Eigen::MatrixXd xb = x.middleRows(start, count);
        std::vector<long> yb(labels.begin() + start, labels.begin() + start + count);
        const Activations clean = forward(net, xb);
        for (long s = 0; s < count; ++s) {
            long best = 0;
            clean.logits.row(s).maxCoeff(&best);
            if (best == yb[size_t(s)]) ++clean_hits;
        }
        if (attack) {
            const Eigen::MatrixXd xa =
                pgd_attack(net, xb, yb, *attack,
                           rng::derive(rng_seed, {rng::tag("eval_attack"), uint64_t(batch_index)}));
            const Activations adv = forward(net, xa);
            for (long s = 0; s < count; ++s) {
                long best = 0;
                adv.logits.row(s).maxCoeff(&best);
                if (best == yb[size_t(s)]) ++adv_hits;
            }
        }
    }
    EvalResult res;
    res.clean_acc = double(clean_hits) / double(n);
    res.adv_acc = attack ? double(adv_hits) / double(n) : res.clean_acc;
    return res;
}

/* ---- study ---------------------------------------------------------------------------------- */

StudyReport run_distillation_study(const StudyConfig& cfg, uint64_t rng_seed) {
    check(!cfg.size_mults.empty() && !cfg.betas.empty() && !cfg.noise_fracs.empty(),
          "run_distillation_study: empty grid");
    check(cfg.n_seeds >= 1, "run_distillation_study: need >= 1 seed");
    for (double m : cfg.size_mults) check(m > 0, "run_distillation_study: size mult must be > 0");
    for (double b : cfg.betas) check(b >= 0, "run_distillation_study: beta must be >= 0");
    for (double f : cfg.noise_fracs)
        check(f >= 0, "run_distillation_study: noise fraction must be >= 0");

    StudyReport report;
    report.master_seed = rng_seed;

    /* one adversarially trained teacher per seed */
    std::vector<MicroNet> teachers(size_t(cfg.n_seeds), MicroNet{});
    std::vector<std::string> teacher_errors(size_t(cfg.n_seeds));
    parallel_for(size_t(cfg.n_seeds), cfg.jobs, [&](size_t s) {
        try {
            const long n = std::lround(cfg.teacher_size_mult * double(cfg.presentations_unit));
            const auto data = generate_dataset(
                n, rng::derive(rng_seed, {rng::tag("teacher_data"), uint64_t(s)}), cfg.gen);
            const MicroNet init = MicroNet::make(
                cfg.channels, rng::derive(rng_seed, {rng::tag("teacher_init"), uint64_t(s)}));
            DistillConfig dc;
            dc.distinct_examples = n;
            dc.epochs = cfg.epochs;
            dc.presentations_unit = cfg.presentations_unit;
            teachers[s] = train(init, data, cfg.optimizer, dc, nullptr, &cfg.train_attack,
                                rng::derive(rng_seed, {rng::tag("teacher_train"), uint64_t(s)}))
                              .net;
        } catch (const std::exception& e) {
            teacher_errors[s] = e.what();
        }
    });
    for (size_t s = 0; s < teacher_errors.size(); ++s)
        if (!teacher_errors[s].empty())
            report.failures.push_back("teacher seed " + std::to_string(s) + ": " +
                                      teacher_errors[s]);

    /* grid cells: (size, beta, noise, seed); beta -1 appended for the
     * adversarially trained students */
    struct Cell {
        double mult, beta, noise;
        size_t mult_idx, seed;
    };
    std::vector<Cell> cells;
    for (size_t mi = 0; mi < cfg.size_mults.size(); ++mi) {
        for (double beta : cfg.betas)
            for (size_t ni = 0; ni < cfg.noise_fracs.size(); ++ni) {
                if (beta == 0 && ni > 0) continue;  // noise only touches the similarity term
                for (int s = 0; s < cfg.n_seeds; ++s)
                    cells.push_back({cfg.size_mults[mi], beta,
                                     beta == 0 ? 0.0 : cfg.noise_fracs[ni], mi, size_t(s)});
            }
        if (cfg.include_adv_students)
            for (int s = 0; s < cfg.n_seeds; ++s)
                cells.push_back({cfg.size_mults[mi], -1.0, 0.0, mi, size_t(s)});
    }

    std::vector<StudyRow> rows(cells.size());
    std::vector<std::string> errors(cells.size());
    parallel_for(cells.size(), cfg.jobs, [&](size_t ci) {
        const Cell& cell = cells[ci];
        try {
            check_runtime(teacher_errors[cell.seed].empty(),
                          "teacher for this seed failed to train");
            const long n = std::lround(cell.mult * double(cfg.presentations_unit));
            const auto data = generate_dataset(
                n,
                rng::derive(rng_seed,
                            {rng::tag("train_data"), uint64_t(cell.seed), uint64_t(cell.mult_idx)}),
                cfg.gen);
            const MicroNet init = MicroNet::make(
                cfg.channels, rng::derive(rng_seed, {rng::tag("student_init"), uint64_t(cell.seed),
                                                     uint64_t(cell.mult_idx)}));
            DistillConfig dc;
            dc.beta = std::max(cell.beta, 0.0);
            dc.distinct_examples = n;
            dc.epochs = cfg.epochs;
            dc.feature_noise_frac = cell.noise;
            dc.rescale_rsa = cfg.rescale_rsa;
            dc.presentations_unit = cfg.presentations_unit;
            const bool adversarial = cell.beta < 0;
            const uint64_t train_seed =
                rng::derive(rng_seed, {rng::tag("student_train"), uint64_t(cell.seed),
                                       uint64_t(cell.mult_idx)});
            const MicroNet student =
                train(init, data, cfg.optimizer, dc, &teachers[cell.seed],
                      adversarial ? &cfg.train_attack : nullptr, train_seed)
                    .net;
            const auto eval_data = generate_dataset(
                cfg.eval_n, rng::derive(rng_seed, {rng::tag("eval_data"), uint64_t(cell.seed)}),
                cfg.gen);
            const EvalResult ev =
                evaluate(student, eval_data, &cfg.eval_attack,
                         rng::derive(rng_seed, {rng::tag("eval"), uint64_t(cell.seed)}));
            rows[ci] = {cell.mult, cell.beta, cell.noise, uint64_t(cell.seed), ev.clean_acc,
                        ev.adv_acc};
        } catch (const std::exception& e) {
            errors[ci] = e.what();
        }
    });
    for (size_t ci = 0; ci < cells.size(); ++ci) {
        if (!errors[ci].empty()) {
            char line[160];
            std::snprintf(line, sizeof line, "cell size_mult=%g beta=%g noise=%g seed=%zu: ",
                          cells[ci].mult, cells[ci].beta, cells[ci].noise, cells[ci].seed);
            report.failures.push_back(line + errors[ci]);
            continue;
        }
        report.rows.push_back(rows[ci]);
    }
    return report;
}

StudyReport run_distillation_study(const std::vector<double>& size_mults,
                                   const std::vector<double>& betas,
                                   const std::vector<double>& noise_fracs, uint64_t rng_seed) {
    StudyConfig cfg;
    cfg.size_mults = size_mults;
    cfg.betas = betas;
    cfg.noise_fracs = noise_fracs;
    return run_distillation_study(cfg, rng_seed);
}

void StudyReport::to_csv(const std::string& path) const {
    std::vector<std::vector<std::string>> out;
    for (const auto& r : rows)
        out.push_back({csv::format_double(r.size_mult), csv::format_double(r.beta),
                       csv::format_double(r.noise_frac), std::to_string(r.seed),
                       csv::format_double(r.clean_acc), csv::format_double(r.adv_acc)});
    csv::write(path, {"size_mult", "beta", "noise_frac", "seed", "clean_acc", "adv_acc"}, out);
}

nlohmann::json StudyReport::to_json() const {
    nlohmann::json rows_json = nlohmann::json::array();
    for (const auto& r : rows)
        rows_json.push_back({{"size_mult", r.size_mult},
                             {"beta", r.beta},
                             {"noise_frac", r.noise_frac},
                             {"seed", r.seed},
                             {"clean_acc", r.clean_acc},
                             {"adv_acc", r.adv_acc}});
    return {{"rows", rows_json}, {"failures", failures}, {"master_seed", master_seed}};
}

} // namespace twinlab::distill_lab
