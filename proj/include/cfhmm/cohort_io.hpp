#pragma once

#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cfhmm/counterfactual.hpp"
#include "cfhmm/pipeline.hpp"
#include "cfhmm/simulation.hpp"

namespace cfhmm {

// Baseline file: id,x1..xk,a1..am. Panel file: id,t,r sorted by (id, t); timepoints absent
// from the panel are read as r=3. Truth file: id,t,s_true. All files carry a header row.
void write_baseline_csv(const std::string& path, const std::vector<IndividualRecord>& recs);
void write_panel_csv(const std::string& path, const std::vector<IndividualRecord>& recs);
void write_truth_csv(const std::string& path, const SimulatedCohort& cohort);

// Errors carry "file:line". Records are validated against `horizon`.
std::vector<IndividualRecord> read_cohort_csv(const std::string& baseline_path, const std::string& panel_path,
                                              int horizon);

void write_imputed_csv(const std::string& path, const ImputationResult& imp);
void write_trace_csv(const std::string& path, const FitResult& fit);

// One row per model x stratum x metric.
void write_metrics_csv(const std::string& path, const std::vector<ModelEvaluation>& evals);
void write_deciles_csv(const std::string& path, const std::vector<ModelEvaluation>& evals);
void write_net_benefit_csv(const std::string& path, const std::vector<ModelEvaluation>& evals);
void write_bootstrap_csv(const std::string& path, const BootstrapReport& rep);

// Per-replication parameter estimates and metrics, and the summary tables.
void write_replications_csv(const std::string& path, const std::vector<ReplicationResult>& runs);
void write_parameter_summary_csv(const std::string& path, const ReplicationSummary& s);
void write_metric_summary_csv(const std::string& path, const ReplicationSummary& s);

void write_json(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json(const std::string& path);

// Shortest round-trip decimal form.
std::string format_double(double v);

}  // namespace cfhmm
