/* python bindings: one entry point per module, matrices via Eigen/numpy,
 * structured results as JSON strings (decoded in the package __init__). */

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include "twinlab/digest.hpp"
#include "twinlab/distill_lab.hpp"
#include "twinlab/lnp_sim.hpp"
#include "twinlab/rng.hpp"
#include "twinlab/scaling_laws.hpp"
#include "twinlab/svca_dim.hpp"
#include "twinlab/trend_fit.hpp"

namespace py = pybind11;
using namespace twinlab;

namespace {

std::string simulate_sweep_json(int m, const std::vector<long>& t_grid, int replicates,
                                double alpha, uint64_t seed) {
    const auto spec = lnp_sim::PoissonNeuronSpec::random(m, 0.4, 0.1,
                                                         rng::derive(seed, {rng::tag("spec")}));
    std::optional<lnp_sim::CoreMixSpec> mix;
    if (alpha < 1.0) {
        lnp_sim::CoreMixSpec w;
        w.alpha = alpha;
        w.known_dim = m;
        mix = w;
    }
    lnp_sim::SweepConfig cfg;
    cfg.t_grid = t_grid;
    cfg.replicates = replicates;
    return lnp_sim::run_scaling_sweep(spec, mix, cfg, seed).to_json().dump();
}

std::string fit_law_json(const std::vector<double>& t, const std::vector<double>& y,
                         const std::string& form, uint64_t seed) {
    if (t.size() != y.size()) throw std::invalid_argument("fit_law: t and y lengths differ");
    std::vector<scaling_laws::FitPoint> pts;
    for (size_t i = 0; i < t.size(); ++i) pts.push_back({t[i], y[i], 0.0, std::nullopt});
    scaling_laws::FitOptions opts;
    opts.seed = seed;
    return scaling_laws::fit_law_points(pts, scaling_laws::law_form_from_name(form), opts)
        .to_json()
        .dump();
}

int svca_planted_reliable(long n_neurons, long n_timepoints, int rank, double snr, int max_dims,
                          uint64_t seed) {
    const auto rec = svca_dim::make_planted_recording(n_neurons, n_timepoints, rank, snr,
                                                      rng::derive(seed, {rng::tag("planted")}));
    return svca_dim::svca(rec, max_dims, seed).n_reliable;
}

std::string fit_trend_json(const std::vector<double>& years, const std::vector<double>& values) {
    if (years.size() != values.size())
        throw std::invalid_argument("fit_trend: years and values lengths differ");
    trend_fit::CapabilitySeries series;
    for (size_t i = 0; i < years.size(); ++i)
        series.records.push_back({years[i], values[i], "series"});
    return trend_fit::fit_trend(series).to_json().dump();
}

py::tuple generate_dataset_py(long n, uint64_t seed) {
    const auto data = distill_lab::generate_dataset(n, seed);
    py::list labels;
    for (const auto& ex : data) labels.append(ex.label);
    return py::make_tuple(distill_lab::pack_signals(data), labels);
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "desk-scale neural digital-twin laboratory (C++ core)";

    m.def("analytic_feve", &scaling_laws::analytic_feve, py::arg("n_obs"),
          py::arg("readout_dim"), py::arg("noise_variance"),
          "closed-form FEVE N/(N + M s2) of the matched-ridge estimator");
    m.def("sigmoid", &scaling_laws::sigmoid, py::arg("x"));
    m.def("logit", &scaling_laws::logit, py::arg("p"));
    m.def("wrong_core_asymptote", &scaling_laws::wrong_core_asymptote, py::arg("gain"),
          py::arg("alpha"), py::arg("weight_norm2") = 1.0);

    m.def("simulate_sweep_json", &simulate_sweep_json, py::arg("m"), py::arg("t_grid"),
          py::arg("replicates") = 5, py::arg("alpha") = 1.0, py::arg("seed") = 0,
          "LNP scaling sweep; returns the ScalingCurve as a JSON string");
    m.def("fit_law_json", &fit_law_json, py::arg("t"), py::arg("y"), py::arg("form") = "basic",
          py::arg("seed") = 0x5eedf17ull, "fit a log-sigmoid law; returns JSON");

    m.def("svca_planted_reliable", &svca_planted_reliable, py::arg("n_neurons"),
          py::arg("n_timepoints"), py::arg("rank"), py::arg("snr"), py::arg("max_dims") = 20,
          py::arg("seed") = 0, "reliable dimensions recovered from a planted-rank recording");

    m.def("fit_trend_json", &fit_trend_json, py::arg("years"), py::arg("values"),
          "Bayesian log-linear trend; returns JSON");
    m.def("student_t_cdf", &trend_fit::student_t_cdf, py::arg("x"), py::arg("dof"));

    m.def("generate_dataset", &generate_dataset_py, py::arg("n"), py::arg("seed") = 0,
          "synthetic 1-D signals; returns (signals matrix, labels)");
    py::enum_<distill_lab::RsmKernel>(m, "RsmKernel")
        .value("CenteredCosine", distill_lab::RsmKernel::CenteredCosine)
        .value("PlainCosine", distill_lab::RsmKernel::PlainCosine);
    m.def("rsm", &distill_lab::rsm, py::arg("acts"),
          py::arg("kernel") = distill_lab::RsmKernel::CenteredCosine,
          "batch similarity matrix with unit diagonal");

    m.def("sha256_hex", py::overload_cast<const std::string&>(&digest::sha256_hex),
          py::arg("data"));
}
