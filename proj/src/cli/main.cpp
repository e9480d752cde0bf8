/* twinlab — command-line workbench tying the simulation, law-fitting,
 * dimensionality, trend, and distillation modules together.
 *
 * Every run writes plot-ready CSVs, a JSON report, and a manifest recording
 * the fully resolved configuration, the master seed, and content digests of
 * every produced file. `twinlab rerun <manifest>` re-executes a manifest and
 * verifies the outputs are byte-identical.
 *
 * Exit codes: 0 success, 1 computation failure, 2 usage error. */

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "twinlab/common.hpp"
#include "twinlab/csv.hpp"
#include "twinlab/digest.hpp"
#include "twinlab/distill_lab.hpp"
#include "twinlab/lnp_sim.hpp"
#include "twinlab/manifest.hpp"
#include "twinlab/parallel.hpp"
#include "twinlab/rng.hpp"
#include "twinlab/scaling_laws.hpp"
#include "twinlab/svca_dim.hpp"
#include "twinlab/trend_fit.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace twinlab;

namespace {

/* missing or malformed configuration the CLI layer itself can diagnose */
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::vector<double> parse_double_list(const std::string& text, const std::string& flag) {
    std::vector<double> out;
    std::string cell;
    std::stringstream ss(text);
    while (std::getline(ss, cell, ',')) {
        if (cell.empty()) continue;
        try {
            size_t used = 0;
            out.push_back(std::stod(cell, &used));
            if (used != cell.size()) throw std::invalid_argument(cell);
        } catch (const std::exception&) {
            throw UsageError("cannot parse '" + cell + "' in " + flag);
        }
    }
    if (out.empty()) throw UsageError(flag + " needs at least one value");
    return out;
}

std::vector<long> to_long_list(const std::vector<double>& vals, const std::string& flag) {
    std::vector<long> out;
    for (double v : vals) {
        const long l = std::lround(v);
        if (double(l) != v) throw UsageError(flag + " needs integer values");
        out.push_back(l);
    }
    return out;
}

/* typed config lookups with usage-grade diagnostics */
double cfg_num(const json& cfg, const std::string& key) {
    if (!cfg.contains(key)) throw UsageError("missing required option --" + key);
    check(cfg.at(key).is_number(), "option " + key + " must be numeric");
    return cfg.at(key).get<double>();
}

double cfg_num_or(const json& cfg, const std::string& key, double fallback) {
    return cfg.contains(key) ? cfg.at(key).get<double>() : fallback;
}

std::string cfg_str(const json& cfg, const std::string& key) {
    if (!cfg.contains(key)) throw UsageError("missing required option --" + key);
    check(cfg.at(key).is_string(), "option " + key + " must be a string");
    return cfg.at(key).get<std::string>();
}

std::vector<double> cfg_list(const json& cfg, const std::string& key) {
    if (!cfg.contains(key)) throw UsageError("missing required option --" + key);
    const json& v = cfg.at(key);
    if (v.is_string()) return parse_double_list(v.get<std::string>(), key);
    check(v.is_array(), "option " + key + " must be a list");
    std::vector<double> out;
    for (const auto& e : v) out.push_back(e.get<double>());
    if (out.empty()) throw UsageError(key + " needs at least one value");
    return out;
}

uint64_t cfg_seed(const json& cfg) { return cfg.at("seed").get<uint64_t>(); }
int cfg_jobs(const json& cfg) { return int(cfg_num_or(cfg, "jobs", 1)); }

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    check_runtime(bool(out), "cannot write " + path.string());
    out << text;
    check_runtime(bool(out), "write failed: " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

struct RunResult {
    std::vector<std::string> outputs;  // relative to out_dir
    int exit_code = 0;
    std::string note;  // printed to stderr when exit_code != 0
};

/* ---- simulate ------------------------------------------------------------------ */

RunResult run_simulate(const json& cfg, const fs::path& out) {
    const std::string form = cfg_str(cfg, "form");
    if (form != "correct" && form != "wrong")
        throw UsageError("--form must be 'correct' or 'wrong'");
    const int m = int(cfg_num(cfg, "m"));
    const std::vector<long> t_grid = to_long_list(cfg_list(cfg, "t"), "t");
    const uint64_t seed = cfg_seed(cfg);

    const auto spec = lnp_sim::PoissonNeuronSpec::random(
        m, cfg_num_or(cfg, "gain", 0.4), cfg_num_or(cfg, "offset", 0.1),
        rng::derive(seed, {rng::tag("spec")}));
    std::optional<lnp_sim::CoreMixSpec> mix;
    if (form == "wrong") {
        lnp_sim::CoreMixSpec w;
        w.alpha = cfg_num_or(cfg, "alpha", 0.5);
        w.known_dim = m;
        w.unknown_noise_sd = cfg_num_or(cfg, "unknown_noise_sd", 1.0);
        mix = w;
    }
    lnp_sim::SweepConfig sweep;
    sweep.t_grid = t_grid;
    sweep.replicates = int(cfg_num_or(cfg, "replicates", 20));
    sweep.validation_min = int(cfg_num_or(cfg, "validation_min", 1000));
    sweep.prior_variance = cfg_num_or(cfg, "prior_variance", 0);
    sweep.jobs = cfg_jobs(cfg);

    const auto curve = lnp_sim::run_scaling_sweep(spec, mix, sweep, seed);
    curve.to_csv((out / "curve.csv").string());
    write_json(out / "report.json", json{{"command", "simulate"}, {"curve", curve.to_json()}});

    RunResult res{{"curve.csv", "report.json"}, 0, ""};
    long missing = 0;
    for (const auto& p : curve.points) missing += p.missing ? 1 : 0;
    if (missing > 0) {
        res.exit_code = 1;
        res.note = "partial sweep: " + std::to_string(missing) +
                   " grid point(s) had no converged replicate (completed points kept)";
    }
    std::cout << "simulate: " << curve.points.size() - size_t(missing) << " of "
              << curve.points.size() << " grid points -> curve.csv\n";
    return res;
}

/* ---- fit-law ------------------------------------------------------------------- */

RunResult run_fitlaw(const json& cfg, const fs::path& out) {
    const auto form = scaling_laws::law_form_from_name(cfg_str(cfg, "form"));
    scaling_laws::SigmoidLawFit fit;
    scaling_laws::ScalingCurve curve;
    std::vector<double> covariates;
    const bool have_cov = cfg.contains("covariates");

    if (form == scaling_laws::LawForm::ANALYTIC) {
        fit = scaling_laws::make_analytic_fit(cfg_num(cfg, "m"), cfg_num(cfg, "s2"));
        if (cfg.contains("input")) curve = scaling_laws::ScalingCurve::from_csv(cfg_str(cfg, "input"));
    } else {
        curve = scaling_laws::ScalingCurve::from_csv(cfg_str(cfg, "input"));
        if (have_cov) {
            const Eigen::MatrixXd c = svca_dim::load_matrix_csv(cfg_str(cfg, "covariates"));
            check(c.cols() == 1, "covariate file must hold a single column");
            covariates.assign(c.col(0).data(), c.col(0).data() + c.rows());
        }
        scaling_laws::FitOptions opts;
        opts.seed = rng::derive(cfg_seed(cfg), {rng::tag("fit")});
        opts.weighted = !cfg.value("unweighted", false);
        fit = scaling_laws::fit_law(curve, form, have_cov ? &covariates : nullptr, opts);
    }

    json report{{"command", "fit-law"}, {"fit", fit.to_json()}};

    /* plot data: observed vs fitted at each usable point */
    std::vector<std::vector<std::string>> rows;
    const auto usable = curve.usable();
    const std::string cov_key = form == scaling_laws::LawForm::READOUT   ? "readout_params"
                                : form == scaling_laws::LawForm::WRONG_CORE ? "r2_core"
                                                                            : "neurons";
    for (size_t i = 0, ui = 0; i < curve.points.size(); ++i) {
        if (curve.points[i].missing) continue;
        std::map<std::string, double> cov;
        if (have_cov && i < covariates.size()) cov[cov_key] = covariates[i];
        const double fitted =
            fit.converged || form == scaling_laws::LawForm::ANALYTIC
                ? scaling_laws::predict_law(fit, curve.points[i].t, cov)
                : std::numeric_limits<double>::quiet_NaN();
        rows.push_back({csv::format_double(curve.points[i].t),
                        csv::format_double(curve.points[i].feve_mean),
                        csv::format_double(fitted)});
        ++ui;
        (void)ui;
    }
    if (!rows.empty())
        csv::write((out / "fitted.csv").string(), {"t", "observed", "fitted"}, rows);

    if (cfg.contains("target")) {
        std::map<std::string, double> cov;
        if (cfg.contains("target_covariate")) cov[cov_key] = cfg_num(cfg, "target_covariate");
        report["time_to_target"] = {{"target", cfg_num(cfg, "target")},
                                    {"t", scaling_laws::time_to_target(
                                              fit, cfg_num(cfg, "target"), cov)}};
    }
    write_json(out / "report.json", report);
    std::cout << "fit-law: form=" << scaling_laws::law_form_name(form)
              << " converged=" << (fit.converged ? "yes" : "no") << " r2=" << fit.goodness_r2
              << "\n";
    RunResult res;
    res.outputs = {"report.json"};
    if (!rows.empty()) res.outputs.push_back("fitted.csv");
    return res;
}

/* ---- svca ---------------------------------------------------------------------- */

RunResult run_svca(const json& cfg, const fs::path& out) {
    const uint64_t seed = cfg_seed(cfg);
    svca_dim::PopulationRecording rec;
    if (cfg.contains("planted")) {
        const auto p = cfg_list(cfg, "planted");
        check(p.size() == 4, "--planted needs n,T,rank,snr");
        rec = svca_dim::make_planted_recording(long(p[0]), long(p[1]), int(p[2]), p[3],
                                               rng::derive(seed, {rng::tag("planted")}));
    } else {
        rec = svca_dim::load_recording(cfg_str(cfg, "input"));
    }

    svca_dim::SvcaOptions opts;
    opts.bin_width = cfg_num_or(cfg, "bin_width", 0);
    opts.block_length = long(cfg_num_or(cfg, "block_length", 0));
    opts.n_surrogates = int(cfg_num_or(cfg, "surrogates", 2));
    opts.threshold_sds = cfg_num_or(cfg, "threshold_sds", 4.0);
    opts.normalize_total = cfg.value("normalize_total", false);

    int max_dims = int(cfg_num_or(cfg, "max_dims", 0));
    if (max_dims <= 0) {
        const auto split = svca_dim::split_population(rec, rng::derive(seed, {rng::tag("split")}),
                                                      opts);
        max_dims = int(std::min<size_t>(
            {50, split.group1.size(), split.group2.size(), split.train_times.size()}));
    }

    const auto spectrum = svca_dim::svca(rec, max_dims, seed, opts);
    spectrum.to_csv((out / "spectrum.csv").string());
    json report{{"command", "svca"},
                {"n_neurons", rec.n_neurons()},
                {"n_timepoints", rec.n_timepoints()},
                {"spectrum", spectrum.to_json()}};
    RunResult res;
    res.outputs = {"spectrum.csv"};

    if (cfg.contains("sizes")) {
        const auto sizes = to_long_list(cfg_list(cfg, "sizes"), "sizes");
        const int repeats = int(cfg_num_or(cfg, "repeats", 3));
        const auto sweep = svca_dim::dimension_sweep(rec, sizes, repeats,
                                                     rng::derive(seed, {rng::tag("sweep")}), opts,
                                                     cfg_jobs(cfg));
        sweep.to_csv((out / "sweep.csv").string());
        report["sweep"] = sweep.to_json();
        std::vector<std::pair<double, double>> pts;
        for (const auto& p : sweep.points)
            if (p.mean_reliable > 0) pts.push_back({double(p.size), p.mean_reliable});
        if (pts.size() >= 3) {
            try {
                report["power_law"] = svca_dim::fit_power_law(pts).to_json();
            } catch (const std::exception& e) {
                report["power_law_error"] = e.what();
            }
        }
        res.outputs.push_back("sweep.csv");
    }
    write_json(out / "report.json", report);
    res.outputs.push_back("report.json");
    std::cout << "svca: " << spectrum.n_reliable << " reliable dimension(s) of "
              << spectrum.rank << " estimated\n";
    return res;
}

/* ---- trend ---------------------------------------------------------------------- */

RunResult run_trend(const json& cfg, const fs::path& out) {
    auto series = trend_fit::CapabilitySeries::from_csv(cfg_str(cfg, "input"));
    if (cfg.contains("frontier"))
        series = trend_fit::frontier_filter(series, int(cfg_num(cfg, "frontier")));
    std::optional<double> year_min;
    if (cfg.contains("year_min")) year_min = cfg_num(cfg, "year_min");
    const auto fits = trend_fit::fit_trends(series, year_min);

    std::vector<std::vector<std::string>> rows;
    json fits_json = json::array();
    for (const auto& f : fits) {
        rows.push_back({f.modality, std::to_string(f.n_used), csv::format_double(f.slope_mean),
                        csv::format_double(f.slope_sd),
                        csv::format_double(f.doubling_time_mean),
                        csv::format_double(f.doubling_time_sd),
                        f.doubling_defined ? "1" : "0"});
        fits_json.push_back(f.to_json());
    }
    csv::write((out / "trends.csv").string(),
               {"modality", "n_used", "slope_mean", "slope_sd", "doubling_time_mean",
                "doubling_time_sd", "doubling_defined"},
               rows);
    json report{{"command", "trend"}, {"fits", fits_json}};

    if (cfg.contains("project")) {
        const double year = cfg_num(cfg, "project");
        json projections = json::array();
        for (const auto& f : fits) {
            if (!f.doubling_defined) {
                projections.push_back({{"modality", f.modality},
                                       {"error", "doubling time undefined; no projection"}});
                continue;
            }
            const auto p = trend_fit::project(f, year);
            projections.push_back({{"modality", f.modality},
                                   {"year", year},
                                   {"value_mean", p.value_mean},
                                   {"lo90", p.lo90},
                                   {"hi90", p.hi90}});
        }
        report["projections"] = projections;
    }
    write_json(out / "report.json", report);
    for (const auto& f : fits) {
        std::cout << "trend: " << f.modality << " doubling_time=";
        if (f.doubling_defined)
            std::cout << f.doubling_time_mean << " +- " << f.doubling_time_sd << " years\n";
        else
            std::cout << "undefined (slope not credibly positive)\n";
    }
    return {{"trends.csv", "report.json"}, 0, ""};
}

/* ---- distill --------------------------------------------------------------------- */

RunResult run_distill(const json& cfg, const fs::path& out) {
    distill_lab::StudyConfig sc;
    if (cfg.contains("size_mults")) sc.size_mults = cfg_list(cfg, "size_mults");
    if (cfg.contains("betas")) sc.betas = cfg_list(cfg, "betas");
    if (cfg.contains("noise_fracs")) sc.noise_fracs = cfg_list(cfg, "noise_fracs");
    sc.n_seeds = int(cfg_num_or(cfg, "n_seeds", sc.n_seeds));
    sc.channels = int(cfg_num_or(cfg, "channels", sc.channels));
    sc.epochs = int(cfg_num_or(cfg, "epochs", sc.epochs));
    sc.eval_n = long(cfg_num_or(cfg, "eval_n", double(sc.eval_n)));
    sc.teacher_size_mult = cfg_num_or(cfg, "teacher_size_mult", sc.teacher_size_mult);
    sc.include_adv_students = !cfg.value("no_adv_students", false);
    sc.rescale_rsa = cfg.value("rescale_rsa", false);
    sc.train_attack.epsilon = cfg_num_or(cfg, "train_epsilon", sc.train_attack.epsilon);
    sc.eval_attack.epsilon = cfg_num_or(cfg, "eval_epsilon", sc.eval_attack.epsilon);
    sc.jobs = cfg_jobs(cfg);

    const auto report = distill_lab::run_distillation_study(sc, cfg_seed(cfg));
    report.to_csv((out / "study.csv").string());
    write_json(out / "report.json", json{{"command", "distill"}, {"study", report.to_json()}});
    for (const auto& f : report.failures) std::cerr << "warning: " << f << "\n";
    std::cout << "distill: " << report.rows.size() << " cells, " << report.failures.size()
              << " failure(s) -> study.csv\n";
    RunResult res{{"study.csv", "report.json"}, 0, ""};
    if (report.rows.empty()) {
        res.exit_code = 1;
        res.note = "distillation study produced no completed cells";
    }
    return res;
}

/* ---- verify-appendix --------------------------------------------------------------- */

RunResult run_verify(const json& cfg, const fs::path& out) {
    std::vector<std::array<double, 3>> grid;
    const std::string grid_arg = cfg.contains("grid") ? cfg_str(cfg, "grid") : "default";
    if (grid_arg == "default") {
        grid = scaling_laws::default_theory_grid();
    } else {
        const Eigen::MatrixXd m = svca_dim::load_matrix_csv(grid_arg);
        check(m.cols() == 3, "grid file must hold three columns: n, m, noise_variance");
        for (long i = 0; i < m.rows(); ++i) grid.push_back({m(i, 0), m(i, 1), m(i, 2)});
    }
    scaling_laws::TheoryOptions opts;
    opts.validation_n = int(cfg_num_or(cfg, "validation_n", 1000));
    opts.exact_validation = cfg.value("exact", false);
    opts.tolerance = cfg_num_or(cfg, "tolerance", 0.02);
    opts.classic_ratio = cfg_num_or(cfg, "classic_ratio", 16.0);
    opts.jobs = cfg_jobs(cfg);
    const int replicates = int(cfg_num_or(cfg, "replicates", 200));
    const bool strict = cfg.value("strict", false);

    const auto cmp = scaling_laws::compare_theory_simulation(grid, replicates, cfg_seed(cfg), opts);

    std::vector<std::vector<std::string>> rows;
    for (const auto& c : cmp.cells)
        rows.push_back({csv::format_double(c.n_obs), csv::format_double(c.readout_dim),
                        csv::format_double(c.noise_variance), csv::format_double(c.analytic),
                        csv::format_double(c.simulated), csv::format_double(c.exact_theory),
                        csv::format_double(c.gap), c.classic ? "1" : "0", c.breach ? "1" : "0"});
    csv::write((out / "cells.csv").string(),
               {"n", "m", "noise_variance", "analytic", "simulated", "exact_theory", "gap",
                "classic", "breach"},
               rows);
    const std::string table = cmp.table();
    write_text(out / "table.txt", table);
    json report = cmp.to_json();
    report["command"] = "verify-appendix";
    report["gate"] = strict ? "all cells" : "classic regime";
    write_json(out / "report.json", report);
    std::cout << table;

    RunResult res{{"cells.csv", "table.txt", "report.json"}, 0, ""};
    const bool pass = strict ? cmp.all_pass : cmp.classic_pass;
    std::cout << (pass ? "PASS" : "FAIL") << ": " << report["gate"].get<std::string>()
              << " within +-" << opts.tolerance << "\n";
    if (!pass) {
        res.exit_code = 1;
        res.note = strict ? "tolerance breached (strict gate: every cell)"
                          : "tolerance breached in the classic regime";
    }
    return res;
}

/* ---- dispatch / manifest plumbing ---------------------------------------------------- */

RunResult dispatch(const std::string& command, const json& cfg, const fs::path& out) {
    if (command == "simulate") return run_simulate(cfg, out);
    if (command == "fit-law") return run_fitlaw(cfg, out);
    if (command == "svca") return run_svca(cfg, out);
    if (command == "trend") return run_trend(cfg, out);
    if (command == "distill") return run_distill(cfg, out);
    if (command == "verify-appendix") return run_verify(cfg, out);
    throw UsageError("unknown command in manifest: " + command);
}

int finish_run(const std::string& command, const json& cfg, const fs::path& out,
               const RunResult& res) {
    manifest::ExperimentManifest man;
    man.command = command;
    man.config = cfg;
    man.master_seed = cfg_seed(cfg);
    for (const auto& rel : res.outputs) man.record_output((out / rel).string(), rel);
    man.save((out / "manifest.json").string());
    std::cout << "manifest: " << (out / "manifest.json").string() << "\n";
    if (res.exit_code != 0) std::cerr << "error: " << res.note << "\n";
    return res.exit_code;
}

int run_rerun(const std::string& manifest_path, const fs::path& out) {
    const auto man = manifest::ExperimentManifest::load(manifest_path);
    const RunResult res = dispatch(man.command, man.config, out);
    /* identity check against the recorded digests */
    bool all_match = true;
    for (const auto& rec : man.outputs) {
        const fs::path produced = out / rec.path;
        std::string got = "missing";
        if (fs::exists(produced)) got = digest::sha256_file(produced.string());
        const bool match = got == rec.sha256;
        all_match = all_match && match;
        std::cout << (match ? "identical " : "MISMATCH  ") << rec.path << "\n";
    }
    if (!all_match) {
        std::cerr << "error: rerun outputs differ from the manifest\n";
        return 1;
    }
    std::cout << "rerun: all outputs byte-identical\n";
    (void)res;
    return 0;
}

uint64_t fresh_seed() {
    std::random_device rd;
    return (uint64_t(rd()) << 32) ^ uint64_t(rd());
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale neural digital-twin laboratory"};
    app.require_subcommand(1);

    /* per-subcommand option storage; appliers copy set flags over the config */
    struct Shared {
        uint64_t seed = 0;
        int jobs = 0;
        std::string out_dir = ".";
        std::string config_path;
        CLI::Option *seed_opt = nullptr, *jobs_opt = nullptr;
    };
    std::map<std::string, Shared> shared;
    std::vector<std::function<void(const std::string&, json&)>> appliers;

    auto add_shared = [&](CLI::App* sub) {
        Shared& s = shared[sub->get_name()];
        s.seed_opt = sub->add_option("--seed", s.seed, "master seed (omit: drawn and recorded)");
        s.jobs_opt = sub->add_option("--jobs", s.jobs, "worker threads (0 = all cores)");
        sub->add_option("--out-dir", s.out_dir, "output directory")->capture_default_str();
        sub->add_option("--config", s.config_path, "JSON config file (flags override it)");
    };
    /* typed option helper: records the flag into the resolved config iff set */
    auto opt_for = [&](CLI::App* sub, const std::string& flag, auto& var, const char* help,
                       const std::string& key) {
        CLI::Option* o = sub->add_option(flag, var, help);
        const std::string name = sub->get_name();
        appliers.push_back([o, &var, key, name](const std::string& cmd, json& cfg) {
            if (cmd == name && o->count() > 0) cfg[key] = var;
        });
        return o;
    };
    auto flag_for = [&](CLI::App* sub, const std::string& flag, bool& var, const char* help,
                        const std::string& key) {
        CLI::Option* o = sub->add_flag(flag, var, help);
        const std::string name = sub->get_name();
        appliers.push_back([o, &var, key, name](const std::string& cmd, json& cfg) {
            if (cmd == name && o->count() > 0) cfg[key] = var;
        });
        return o;
    };

    /* simulate */
    auto* sim = app.add_subcommand("simulate", "LNP scaling sweep: data -> MAP fit -> FEVE curve");
    add_shared(sim);
    std::string sim_form, sim_t;
    int sim_m = 0, sim_reps = 0, sim_vmin = 0;
    double sim_alpha = 0, sim_gain = 0, sim_offset = 0, sim_noise_sd = 0, sim_prior = 0;
    opt_for(sim, "--form", sim_form, "generator: correct | wrong", "form");
    opt_for(sim, "--m", sim_m, "readout dimension", "m");
    opt_for(sim, "--t", sim_t, "comma-separated training sizes", "t");
    opt_for(sim, "--alpha", sim_alpha, "wrong-core mixing coefficient", "alpha");
    opt_for(sim, "--gain", sim_gain, "log-rate gain", "gain");
    opt_for(sim, "--offset", sim_offset, "log-rate offset", "offset");
    opt_for(sim, "--unknown-noise-sd", sim_noise_sd, "wrong-core unknown-part SD",
            "unknown_noise_sd");
    opt_for(sim, "--replicates", sim_reps, "replicates per grid point", "replicates");
    opt_for(sim, "--validation-min", sim_vmin, "minimum validation size", "validation_min");
    opt_for(sim, "--prior-variance", sim_prior, "weight prior variance (<=0: 1/M)",
            "prior_variance");

    /* fit-law */
    auto* fl = app.add_subcommand("fit-law", "fit a log-sigmoid scaling law to a curve CSV");
    add_shared(fl);
    std::string fl_input, fl_form, fl_cov;
    double fl_m = 0, fl_s2 = 0, fl_target = 0, fl_tcov = 0;
    bool fl_unweighted = false;
    opt_for(fl, "--input", fl_input, "ScalingCurve CSV", "input");
    opt_for(fl, "--form", fl_form, "basic | readout | wrong_core | learned_core | analytic",
            "form");
    opt_for(fl, "--covariates", fl_cov, "single-column CSV aligned with the curve rows",
            "covariates");
    opt_for(fl, "--m", fl_m, "readout dimension (analytic form)", "m");
    opt_for(fl, "--s2", fl_s2, "noise variance (analytic form)", "s2");
    opt_for(fl, "--target", fl_target, "also report time_to_target(target)", "target");
    opt_for(fl, "--target-covariate", fl_tcov, "covariate value for the target query",
            "target_covariate");
    flag_for(fl, "--unweighted", fl_unweighted, "ignore the SE column for weighting",
             "unweighted");

    /* svca */
    auto* sv = app.add_subcommand("svca", "shared-variance spectrum and dimension sweep");
    add_shared(sv);
    std::string sv_input, sv_planted, sv_sizes;
    int sv_maxdims = 0, sv_repeats = 0, sv_surr = 0;
    double sv_bin = 0, sv_block = 0, sv_thresh = 0;
    bool sv_norm_total = false;
    opt_for(sv, "--input", sv_input, "recording CSV or binary sidecar JSON", "input");
    opt_for(sv, "--planted", sv_planted, "synthesize n,T,rank,snr instead of --input", "planted");
    opt_for(sv, "--max-dims", sv_maxdims, "dimensions to estimate (0 = auto)", "max_dims");
    opt_for(sv, "--sizes", sv_sizes, "comma-separated subset sizes for a dimension sweep",
            "sizes");
    opt_for(sv, "--repeats", sv_repeats, "random subsets per size", "repeats");
    opt_for(sv, "--bin-width", sv_bin, "spatial bin width (0 = auto)", "bin_width");
    opt_for(sv, "--block-length", sv_block, "time-split block length (0 = auto)", "block_length");
    opt_for(sv, "--surrogates", sv_surr, "shuffle controls", "surrogates");
    opt_for(sv, "--threshold-sds", sv_thresh, "reliability threshold in shuffle SDs",
            "threshold_sds");
    flag_for(sv, "--normalize-total", sv_norm_total, "normalize by total test variance",
             "normalize_total");

    /* trend */
    auto* tr = app.add_subcommand("trend", "Bayesian log-linear capability trends");
    add_shared(tr);
    std::string tr_input;
    double tr_year_min = 0, tr_project = 0;
    int tr_frontier = 0;
    opt_for(tr, "--input", tr_input, "CSV with year,value,modality", "input");
    opt_for(tr, "--year-min", tr_year_min, "keep records with year >= this", "year_min");
    opt_for(tr, "--frontier", tr_frontier, "frontier filter lookback", "frontier");
    opt_for(tr, "--project", tr_project, "project each trend to this year", "project");

    /* distill */
    auto* di = app.add_subcommand("distill", "teacher-student distillation study");
    add_shared(di);
    std::string di_mults, di_betas, di_noise;
    int di_seeds = 0, di_channels = 0, di_epochs = 0;
    double di_eval_n = 0, di_teacher_mult = 0, di_train_eps = 0, di_eval_eps = 0;
    bool di_no_adv = false, di_rescale = false;
    opt_for(di, "--size-mults", di_mults, "dataset sizes, multiples of 1000", "size_mults");
    opt_for(di, "--betas", di_betas, "similarity-loss weights", "betas");
    opt_for(di, "--noise-fracs", di_noise, "teacher feature-noise fractions", "noise_fracs");
    opt_for(di, "--n-seeds", di_seeds, "independent seeds", "n_seeds");
    opt_for(di, "--channels", di_channels, "conv channels", "channels");
    opt_for(di, "--epochs", di_epochs, "presentation epochs", "epochs");
    opt_for(di, "--eval-n", di_eval_n, "held-out evaluation examples", "eval_n");
    opt_for(di, "--teacher-size-mult", di_teacher_mult, "teacher dataset size multiple",
            "teacher_size_mult");
    opt_for(di, "--train-epsilon", di_train_eps, "adversarial training budget", "train_epsilon");
    opt_for(di, "--eval-epsilon", di_eval_eps, "evaluation attack budget", "eval_epsilon");
    flag_for(di, "--no-adv-students", di_no_adv, "skip adversarially trained students",
             "no_adv_students");
    flag_for(di, "--rescale-rsa", di_rescale, "rescale the similarity term to the CE magnitude",
             "rescale_rsa");

    /* verify-appendix */
    auto* va = app.add_subcommand("verify-appendix",
                                  "closed-form FEVE vs Monte-Carlo over the (N, M, s2) grid");
    add_shared(va);
    std::string va_grid;
    int va_reps = 0, va_vn = 0;
    double va_tol = 0, va_ratio = 0;
    bool va_strict = false, va_exact = false;
    opt_for(va, "--grid", va_grid, "'default' or CSV with n,m,noise_variance rows", "grid");
    opt_for(va, "--replicates", va_reps, "Monte-Carlo replicates per cell", "replicates");
    opt_for(va, "--validation-n", va_vn, "sampled-validation size", "validation_n");
    opt_for(va, "--tolerance", va_tol, "allowed |analytic - simulated| gap", "tolerance");
    opt_for(va, "--classic-ratio", va_ratio, "classic regime when N >= ratio * M",
            "classic_ratio");
    flag_for(va, "--strict", va_strict, "gate every cell, not only the classic regime",
             "strict");
    flag_for(va, "--exact", va_exact, "closed-form validation limit instead of samples",
             "exact");

    /* rerun */
    auto* rr = app.add_subcommand("rerun", "re-execute a manifest and verify byte-identity");
    std::string rr_manifest, rr_out = ".";
    rr->add_option("manifest", rr_manifest, "manifest.json from a previous run")->required();
    rr->add_option("--out-dir", rr_out, "directory for the re-executed outputs")
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);  // prints the diagnostic
        return 2;
    }

    try {
        if (rr->parsed()) {
            const fs::path out = rr_out;
            fs::create_directories(out);
            return run_rerun(rr_manifest, out);
        }
        CLI::App* sub = app.get_subcommands().front();
        const std::string command = sub->get_name();
        Shared& s = shared.at(command);

        /* precedence: built-in defaults < config file < flags */
        json cfg = json::object();
        if (!s.config_path.empty()) {
            std::ifstream in(s.config_path);
            check_runtime(bool(in), "cannot open config file " + s.config_path);
            cfg = json::parse(in);
            check_runtime(cfg.is_object(), "config file must hold a JSON object");
        }
        for (auto& apply : appliers) apply(command, cfg);
        if (s.seed_opt->count() > 0)
            cfg["seed"] = s.seed;
        else if (!cfg.contains("seed")) {
            cfg["seed"] = fresh_seed();
            std::cerr << "note: no --seed given; drew " << cfg["seed"].get<uint64_t>()
                      << " and recorded it in the manifest\n";
        }
        if (s.jobs_opt->count() > 0) cfg["jobs"] = s.jobs;
        if (!cfg.contains("jobs") || cfg["jobs"].get<int>() <= 0) cfg["jobs"] = default_jobs();

        const fs::path out = s.out_dir;
        fs::create_directories(out);
        const RunResult res = dispatch(command, cfg, out);
        return finish_run(command, cfg, out, res);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        /* best-effort JSON error record next to the other outputs */
        try {
            const std::string cmd =
                app.get_subcommands().empty() ? "" : app.get_subcommands().front()->get_name();
            fs::path out = ".";
            if (!cmd.empty() && shared.count(cmd)) out = shared.at(cmd).out_dir;
            fs::create_directories(out);
            write_json(out / "error.json", json{{"command", cmd}, {"error", e.what()}});
        } catch (...) {
        }
        return 1;
    }
}
