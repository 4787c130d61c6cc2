#pragma once

#include <cstdint>
#include <vector>

#include "cfhmm/model.hpp"
#include "cfhmm/record.hpp"

namespace cfhmm {

// X1 | A0 ~ N(mean_a0, sd_a0) or N(mean_a1, sd_a1); X2 ~ N(x2_mean, x2_sd).
struct CovariateLaw {
    double x1_mean_a0 = 0.0;
    double x1_sd_a0 = 1.0;
    double x1_mean_a1 = 1.0;
    double x1_sd_a1 = 1.5;
    double x2_mean = 0.5;
    double x2_sd = 1.0;
};

struct ScenarioConfig {
    int scenario = 1;                       // 1..4, or 0 for a custom configuration
    int n = 50000;
    int horizon = 10;                       // timepoints in the output cohort
    int total_horizon = 10;                 // timepoints generated (20 in Scenario 4)
    std::uint64_t seed = 1;
    std::vector<double> attribute_prob{0.2};  // P(A_k = 1), independent
    CovariateLaw covariates;
    HmmParams truth;                        // hazard horizon equals total_horizon
    double progression_a1 = 0.1;            // early-to-late rate when A_0 = 1
    double sensitivity_early = 1.0;
    double sensitivity_late = 1.0;
    bool counterfactual_world = false;      // everyone tested at the reference rates from the output baseline on
    std::vector<int> reference{0};
};

// Throws Error("invalid_config").
void validate_config(const ScenarioConfig& cfg);

ScenarioConfig scenario_preset(int scenario);
// Seven observability attributes with a shared logistic testing rate.
ScenarioConfig multi_attribute_preset();

struct IndividualTruth {
    std::vector<std::uint8_t> stages;  // latent stage per output timepoint
    bool baseline_late = false;        // late stage at the first output timepoint
    int d_cf = 0;                      // diagnosis under the reference regime, same latent path
};

struct SimulatedCohort {
    std::vector<IndividualRecord> records;  // sorted by id
    std::vector<IndividualTruth> truth;     // parallel to records
    int horizon = 10;
};

SimulatedCohort simulate_cohort(const ScenarioConfig& cfg, int threads = 1);

// Drops individuals diagnosed at or before `baseline`, discards earlier results and
// relabels the remaining timepoints from 1.
SimulatedCohort rebaseline_open_cohort(const SimulatedCohort& cohort, int baseline);

// simulate_cohort followed, for Scenario-4 style configs (total_horizon > horizon), by
// rebaselining at total_horizon - horizon.
SimulatedCohort generate(const ScenarioConfig& cfg, int threads = 1);

}  // namespace cfhmm
