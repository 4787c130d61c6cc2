#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cfhmm/cohort_io.hpp"
#include "cfhmm/error.hpp"
#include "cfhmm/log.hpp"
#include "cfhmm/pipeline.hpp"
#include "cfhmm/seeding.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cfhmm;

namespace {

// Nonzero exit statuses
constexpr int kRuntimeError = 1;
constexpr int kUsageError = 2;
constexpr int kNotConverged = 3;

struct GlobalOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::optional<std::string> scenario;
    std::string out = ".";
};

struct DataOverrides {
    std::string baseline, panel, fit, validation_baseline, validation_panel, ideal_baseline, ideal_panel;
    std::optional<int> horizon;
};

RunConfig resolve_config(const GlobalOptions& g, const DataOverrides& d) {
    json j = json::object();
    if (!g.config_path.empty()) {
        try {
            j = read_json(g.config_path);
        } catch (const json::exception& e) {
            throw Error("invalid_config", g.config_path + ": " + e.what());
        }
        if (!j.is_object()) throw Error("invalid_config", g.config_path + ": top level must be an object");
    }
    if (g.scenario) j["scenario"] = *g.scenario;
    RunConfig cfg = run_config_from_json(j);
    if (g.seed) cfg.seed = *g.seed;
    if (g.threads) {
        if (*g.threads < 1) throw Error("invalid_config", "--threads must be >= 1");
        cfg.threads = *g.threads;
    }
    auto set = [](std::string& field, const std::string& v) {
        if (!v.empty()) field = v;
    };
    set(cfg.baseline_file, d.baseline);
    set(cfg.panel_file, d.panel);
    set(cfg.fit_file, d.fit);
    set(cfg.validation_baseline_file, d.validation_baseline);
    set(cfg.validation_panel_file, d.validation_panel);
    set(cfg.ideal_baseline_file, d.ideal_baseline);
    set(cfg.ideal_panel_file, d.ideal_panel);
    if (d.horizon) cfg.data_horizon = *d.horizon;
    cfg.fit.threads = cfg.threads;
    cfg.imputation.threads = cfg.threads;
    return cfg;
}

class Run {
public:
    Run(std::string command, const RunConfig& cfg, const std::string& out) : command_(std::move(command)), cfg_(cfg) {
        try {
            fs::create_directories(out);
        } catch (const fs::filesystem_error& e) {
            throw Error("io_error", "cannot create output directory '" + out + "': " + e.code().message());
        }
        dir_ = fs::path(out);
    }

    std::string path(const std::string& name) {
        outputs_.push_back(name);
        return (dir_ / name).string();
    }

    void manifest(const json& extra = json::object()) {
        json m = {{"software", "cfhmm"},
                  {"version", CFHMM_VERSION},
                  {"command", command_},
                  {"config", run_config_to_json(cfg_)},
                  {"outputs", outputs_}};
        for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
        write_json((dir_ / "manifest.json").string(), m);
    }

private:
    std::string command_;
    const RunConfig& cfg_;
    fs::path dir_;
    std::vector<std::string> outputs_;
};

const std::string& require(const std::string& value, const std::string& what, const std::string& code = "missing_input") {
    if (value.empty()) throw Error(code, what + " not given");
    return value;
}

std::vector<IndividualRecord> load(const std::string& baseline, const std::string& panel, const RunConfig& cfg,
                                   const std::string& what) {
    auto recs = read_cohort_csv(baseline, panel, cfg.data_horizon);
    if (recs.empty()) throw Error("empty_cohort", what + " cohort has no records");
    return recs;
}

bool wants(const RunConfig& cfg, ModelKind k) { return std::find(cfg.models.begin(), cfg.models.end(), k) != cfg.models.end(); }

void check_layout(const HmmParams& theta, const IndividualRecord& rec, int horizon) {
    const auto& hz = theta.hazard;
    const std::size_t n_a = theta.emission.form == EmissionForm::GroupRates ? 1 : theta.emission.beta.size() - 1;
    if (hz.coefficients.size() != rec.x.size() + rec.a.size() || rec.a.size() != n_a || hz.horizon != horizon)
        throw Error("layout_mismatch", "fit artifact expects " + std::to_string(hz.coefficients.size() - n_a) +
                                           " covariates, " + std::to_string(n_a) + " attributes and horizon " +
                                           std::to_string(hz.horizon) + "; cohort has " + std::to_string(rec.x.size()) +
                                           ", " + std::to_string(rec.a.size()) + " and " + std::to_string(horizon));
}

FitResult fit_cohort(const RunConfig& cfg, const Dataset& data) {
    const auto& r0 = data.records().front();
    const HmmParams init =
        fit_shape(cfg, static_cast<int>(r0.x.size()), static_cast<int>(r0.a.size()), data.horizon());
    return fit_mle(data, init, cfg.fit);
}

ImputationResult impute(const RunConfig& cfg, const HmmParams& theta, const Dataset& data) {
    check_layout(theta, data.records().front(), data.horizon());
    return impute_counterfactual_outcomes(theta, data, cfg.reference, derive_seed(cfg.seed, 4), cfg.imputation);
}

void print_recalibration(const ImputationResult& im) {
    for (std::size_t g = 0; g < im.groups.size(); ++g) {
        std::string key = "pooled";
        if (!im.group_keys[g].empty()) {
            key.clear();
            for (std::size_t k = 0; k < im.group_keys[g].size(); ++k)
                key += (k ? "," : "") + std::string("a") + std::to_string(k + 1) + "=" + std::to_string(im.group_keys[g][k]);
        }
        const auto& rc = im.groups[g];
        std::cout << "group " << key << ": factor " << format_double(rc.factor) << " (raw " << format_double(rc.raw_factor)
                  << ", size " << rc.group_size << (rc.clamped ? ", clamped" : "") << ")\n";
    }
    std::cout << "clamped probabilities: " << im.clamped_probabilities << "\n";
}

// ---- commands ------------------------------------------------------------------------

int cmd_simulate(const RunConfig& cfg, const std::string& out, bool counterfactual) {
    Run run("simulate", cfg, out);
    ScenarioConfig sc = cfg.scenario;
    sc.reference = cfg.reference;
    sc.seed = cfg.seed;
    sc.counterfactual_world = false;
    const SimulatedCohort factual = generate(sc, cfg.threads);
    write_baseline_csv(run.path("baseline.csv"), factual.records);
    write_panel_csv(run.path("panel.csv"), factual.records);
    write_truth_csv(run.path("truth.csv"), factual);
    if (counterfactual) {
        // same seed: identical individuals and latent paths, tested under the reference regime
        sc.counterfactual_world = true;
        const SimulatedCohort cf = generate(sc, cfg.threads);
        write_baseline_csv(run.path("cf_baseline.csv"), cf.records);
        write_panel_csv(run.path("cf_panel.csv"), cf.records);
        write_truth_csv(run.path("cf_truth.csv"), cf);
    }
    run.manifest({{"records", factual.records.size()}});
    log::info("simulated " + std::to_string(factual.records.size()) + " records");
    return 0;
}

int cmd_fit(const RunConfig& cfg, const std::string& out) {
    const auto recs = load(require(cfg.baseline_file, "data.baseline"), require(cfg.panel_file, "data.panel"), cfg, "training");
    const Dataset data(training_records(cfg, recs), cfg.data_horizon);
    Run run("fit", cfg, out);
    const FitResult fit = fit_cohort(cfg, data);
    write_json(run.path("fit.json"), fit_result_to_json(fit));
    write_trace_csv(run.path("trace.csv"), fit);
    run.manifest({{"converged", fit.converged}, {"iterations", fit.iterations}});
    std::cout << "log-likelihood " << format_double(fit.log_likelihood) << " after " << fit.iterations << " iterations\n";
    if (!fit.converged) {
        std::fprintf(stderr, "not_converged: %s\n", fit.diagnostic.c_str());
        return kNotConverged;
    }
    return 0;
}

int cmd_impute(const RunConfig& cfg, const std::string& out) {
    const FitResult fit = fit_result_from_json(read_json(require(cfg.fit_file, "data.fit")));
    const auto recs = load(require(cfg.baseline_file, "data.baseline"), require(cfg.panel_file, "data.panel"), cfg, "training");
    const Dataset data(training_records(cfg, recs), cfg.data_horizon);
    Run run("impute", cfg, out);
    const ImputationResult im = impute(cfg, fit.theta_hat, data);
    write_imputed_csv(run.path("imputed.csv"), im);
    print_recalibration(im);
    run.manifest({{"clamped_probabilities", im.clamped_probabilities}});
    return 0;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& out) {
    if (cfg.validation_baseline_file.empty() || cfg.validation_panel_file.empty())
        throw Error("missing_validation", "evaluation needs data.validation_baseline and data.validation_panel");
    const auto recs = load(require(cfg.baseline_file, "data.baseline"), require(cfg.panel_file, "data.panel"), cfg, "training");
    const auto validation = load(cfg.validation_baseline_file, cfg.validation_panel_file, cfg, "validation");
    const Dataset data(training_records(cfg, recs), cfg.data_horizon);

    std::vector<IndividualRecord> ideal;
    if (wants(cfg, ModelKind::Ideal))
        ideal = load(require(cfg.ideal_baseline_file, "data.ideal_baseline (needed by the Ideal model)"),
                     require(cfg.ideal_panel_file, "data.ideal_panel (needed by the Ideal model)"), cfg, "ideal");

    Run run("evaluate", cfg, out);
    std::optional<FitResult> fit;
    std::optional<ImputationResult> im;
    if (wants(cfg, ModelKind::Imputed)) {
        if (!cfg.fit_file.empty()) {
            fit = fit_result_from_json(read_json(cfg.fit_file));
        } else {
            fit = fit_cohort(cfg, data);
            if (!fit->converged) log::warn("HMM fit did not converge: " + fit->diagnostic);
            write_json(run.path("fit.json"), fit_result_to_json(*fit));
        }
        im = impute(cfg, fit->theta_hat, data);
        write_imputed_csv(run.path("imputed.csv"), *im);
    }
    const auto evals = train_and_evaluate(cfg.models, data.records(), im ? &*im : nullptr, ideal, validation);
    write_metrics_csv(run.path("metrics.csv"), evals);
    write_deciles_csv(run.path("deciles.csv"), evals);
    write_net_benefit_csv(run.path("net_benefit.csv"), evals);
    if (cfg.bootstrap > 0) {
        if (!im) throw Error("invalid_config", "bootstrap needs the Imputed model");
        write_bootstrap_csv(run.path("bootstrap.csv"), bootstrap_imputed_model(cfg, data, fit->theta_hat, *im));
    }
    run.manifest();
    return 0;
}

int cmd_replicate(const RunConfig& cfg, const std::string& out) {
    Run run("replicate", cfg, out);
    std::vector<std::string> failures;
    const auto runs = run_replications(cfg, &failures);
    if (runs.empty()) throw Error("all_replications_failed", "none of " + std::to_string(cfg.replications) + " replications succeeded");
    const ReplicationSummary summary = summarize(runs, cfg.scenario.truth, cfg.replications);
    write_replications_csv(run.path("replications.csv"), runs);
    write_parameter_summary_csv(run.path("parameter_summary.csv"), summary);
    write_metric_summary_csv(run.path("metric_summary.csv"), summary);
    run.manifest({{"requested_replications", summary.requested},
                  {"effective_replications", summary.effective},
                  {"failures", failures}});
    std::cout << "effective replications: " << summary.effective << " of " << summary.requested << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Counterfactual hidden Markov model for underdiagnosis-corrected prediction models"};
    app.set_version_flag("--version", std::string(CFHMM_VERSION));
    app.require_subcommand(1);

    GlobalOptions g;
    DataOverrides d;
    app.add_option("--config", g.config_path, "JSON configuration file")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "master seed (overrides the configuration)");
    app.add_option("--out", g.out, "output directory, created if absent");
    app.add_option("--threads", g.threads, "worker threads");
    app.add_option("--scenario", g.scenario, "scenario preset (overrides the configuration)")
        ->check(CLI::IsMember({"1", "2", "3", "4", "multi_attribute"}));

    auto* sim = app.add_subcommand("simulate", "write baseline, panel and truth CSVs for a simulated cohort");
    bool counterfactual = false;
    sim->add_flag("--counterfactual", counterfactual, "also write the same cohort tested under the reference regime");

    auto cohort_flags = [&](CLI::App* sub) {
        sub->add_option("--baseline", d.baseline, "baseline CSV (id, x..., a...)");
        sub->add_option("--panel", d.panel, "panel CSV (id, t, r)");
        sub->add_option("--horizon", d.horizon, "number of timepoints in the panel");
    };
    auto* fit = app.add_subcommand("fit", "fit the HMM to a cohort");
    cohort_flags(fit);
    auto* imp = app.add_subcommand("impute", "re-impute outcomes under the reference testing regime");
    cohort_flags(imp);
    imp->add_option("--fit", d.fit, "fit artifact written by 'fit'");
    auto* eval = app.add_subcommand("evaluate", "train prediction models and evaluate them on a validation cohort");
    cohort_flags(eval);
    eval->add_option("--fit", d.fit, "fit artifact; the HMM is fitted when absent");
    eval->add_option("--validation-baseline", d.validation_baseline, "validation baseline CSV");
    eval->add_option("--validation-panel", d.validation_panel, "validation panel CSV");
    eval->add_option("--ideal-baseline", d.ideal_baseline, "Ideal-model training baseline CSV");
    eval->add_option("--ideal-panel", d.ideal_panel, "Ideal-model training panel CSV");
    auto* rep = app.add_subcommand("replicate", "run the full simulation study");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "usage_error: %s\n", e.what());
        return kUsageError;
    }

    try {
        const RunConfig cfg = resolve_config(g, d);
        if (sim->parsed()) return cmd_simulate(cfg, g.out, counterfactual);
        if (fit->parsed()) return cmd_fit(cfg, g.out);
        if (imp->parsed()) return cmd_impute(cfg, g.out);
        if (eval->parsed()) return cmd_evaluate(cfg, g.out);
        if (rep->parsed()) return cmd_replicate(cfg, g.out);
    } catch (const Error& e) {
        std::fprintf(stderr, "%s: %s\n", e.code().c_str(), e.what());
        return kRuntimeError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal_error: %s\n", e.what());
        return kRuntimeError;
    }
    return kUsageError;
}
