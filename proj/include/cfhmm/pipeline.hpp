#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cfhmm/counterfactual.hpp"
#include "cfhmm/inference.hpp"
#include "cfhmm/prediction.hpp"
#include "cfhmm/simulation.hpp"

namespace cfhmm {

enum class ModelKind { Naive, Blind, Imputed, Ideal };

const char* model_name(ModelKind k);
ModelKind model_from_name(const std::string& name);  // throws Error("invalid_config")

// Everything a command needs, resolved from the JSON configuration file.
struct RunConfig {
    ScenarioConfig scenario = scenario_preset(1);
    std::string scenario_name = "1";   // "1".."4" or "multi_attribute"
    FitOptions fit;
    std::optional<HmmParams> init;     // default_init when absent
    HazardFamily fit_family = HazardFamily::Weibull;
    std::optional<EmissionForm> fit_form;  // default: GroupRates for one attribute
    bool fit_baseline_late_free = false;
    bool drop_impossible_records = false;  // otherwise such records abort the fit
    std::optional<bool> constraint_late_ge_early;  // default: on for LogisticShared only
    ImputationOptions imputation;
    std::vector<int> reference{0};
    std::vector<ModelKind> models{ModelKind::Naive, ModelKind::Blind, ModelKind::Imputed, ModelKind::Ideal};
    int n_val = 50000;
    int replications = 1;
    int bootstrap = 0;
    std::uint64_t seed = 1;
    int threads = 1;
    // data files for fit / impute / evaluate
    std::string baseline_file, panel_file, validation_baseline_file, validation_panel_file, fit_file;
    std::string ideal_baseline_file, ideal_panel_file;  // training cohort for the Ideal model
    int data_horizon = 10;
    std::vector<std::string> attribute_names;  // names of the observability attributes
};

RunConfig default_run_config(const std::string& scenario_name);
// Every key is validated; unknown keys raise Error("invalid_config").
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& cfg);

// Applies drop_impossible_records: removes records no parameter value can explain, with a
// warning. Without the option the records are kept and the fit reports them.
std::vector<IndividualRecord> training_records(const RunConfig& cfg, std::vector<IndividualRecord> records);

// Starting values and structural choices for fitting a dataset of this layout.
HmmParams fit_shape(const RunConfig& cfg, int n_x, int n_a, int horizon);

DesignMatrix design_for(ModelKind kind, std::span<const IndividualRecord> recs);

struct ModelEvaluation {
    ModelKind kind;
    GlmModel glm;
    std::vector<MetricsReport> strata;  // overall, then a_k = 0 / 1 per attribute
};

// Trains the requested models and evaluates them on `validation`. `imputed` must be
// parallel to `train` when the Imputed model is requested; `ideal_train` when Ideal is.
std::vector<ModelEvaluation> train_and_evaluate(const std::vector<ModelKind>& models,
                                                std::span<const IndividualRecord> train,
                                                const ImputationResult* imputed,
                                                std::span<const IndividualRecord> ideal_train,
                                                std::span<const IndividualRecord> validation);

// Metric strata: "overall", then "a1=0", "a1=1", "a2=0", ...
std::vector<std::pair<std::string, std::vector<std::size_t>>> strata_of(std::span<const IndividualRecord> recs);

struct ReplicationResult {
    int index = 0;
    std::uint64_t seed = 0;
    FitResult fit;
    ImputationResult imputation;
    std::vector<std::vector<int>> attributes;  // training attribute vectors, parallel to imputation.rows
    std::vector<ModelEvaluation> models;
};

// simulate -> fit -> impute -> train -> evaluate on a counterfactual-world validation cohort.
ReplicationResult run_replication(const RunConfig& cfg, int index);

// Replication seed: derive_seed(master, index).
std::uint64_t replication_seed(std::uint64_t master, int index);

// Natural-scale parameter names and values in a stable order.
std::vector<std::pair<std::string, double>> natural_parameters(const HmmParams& theta);

struct ParameterSummary {
    std::string name;
    double truth = 0.0;
    double mean = 0.0;
    double bias = 0.0;
    std::optional<double> se;  // empty with fewer than two replications
    double mse = 0.0;
};

struct MetricSummary {
    std::string model, stratum, metric;
    double mean = 0.0;
    std::optional<double> sd;
};

struct ReplicationSummary {
    int requested = 0;
    int effective = 0;
    std::vector<ParameterSummary> parameters;
    std::vector<MetricSummary> metrics;
};

ReplicationSummary summarize(const std::vector<ReplicationResult>& runs, const HmmParams& truth, int requested);

// Apparent and optimism-corrected metrics of the Imputed model on its own training data.
// Each replicate refits the HMM from `full_fit`, re-imputes, retrains and is scored on the
// bootstrap sample and on the original rows (against the full-data imputed outcomes).
struct BootstrapReport {
    std::vector<std::string> names;  // "<stratum>/<metric>"
    OptimismResult result;
};

BootstrapReport bootstrap_imputed_model(const RunConfig& cfg, const Dataset& train, const HmmParams& full_fit,
                                        const ImputationResult& full_imputation);

// Runs cfg.replications replications, logging and skipping failures.
std::vector<ReplicationResult> run_replications(const RunConfig& cfg, std::vector<std::string>* failures = nullptr);

}  // namespace cfhmm
