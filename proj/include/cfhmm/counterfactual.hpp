#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cfhmm/inference.hpp"
#include "cfhmm/model.hpp"
#include "cfhmm/record.hpp"

namespace cfhmm {

// rows[t-1] = P(S_t | x, a, r_1..T_n) for t = 1..T_n.
struct PosteriorTrajectory {
    std::vector<Vec3> rows;
};

PosteriorTrajectory smoothed_stage_posterior(const HmmParams& theta, const IndividualRecord& rec);
PosteriorTrajectory smoothed_stage_posterior(const HmmParams& theta, const IndividualRecord& rec,
                                             const ForwardTrace& trace);

struct CounterfactualResult {
    double p_cf = 0.0;             // P(diagnosed by the horizon under the reference regime | history)
    std::vector<double> hazard;    // hazard[t-1] = P(D_t = 1 | history, D_{t-1} = 0)
    std::vector<double> survivor;  // survivor[t-1] = P(D_t = 0 | history)
};

// Counterfactual diagnosis probability when the individual is tested at the rates of the
// attribute vector `reference`, given their factual test history. `horizon` >= T_n and
// must not exceed the hazard horizon.
CounterfactualResult counterfactual_diagnosis_prob(const HmmParams& theta, const IndividualRecord& rec,
                                                   std::span<const int> reference, int horizon);

// Same, with the counterfactual stage-wise testing rates given directly.
CounterfactualResult counterfactual_diagnosis_prob(const HmmParams& theta, const IndividualRecord& rec,
                                                   const StageRates& reference_rates, int horizon);

struct Recalibration {
    double factor = 1.0;       // clamped to [0, 1]
    double raw_factor = 1.0;   // before clamping
    double mean_p_cf = 0.0;    // over the group
    double observed_incidence = 0.0;
    double undiagnosed_mass = 0.0;  // sum of p_cf over undiagnosed members / group size
    std::size_t group_size = 0;
    bool clamped = false;
};

// Incidence-preserving scale for a group of individuals who will be re-imputed:
//   factor = (mean p_cf - observed incidence) / undiagnosed_mass,
// with undiagnosed_mass = sum_{d=0} p_cf / group size, so that
//   sum_{d=0} factor * p_cf + #{d=1} = group size * mean p_cf.
// `in_group[i]` selects members. Throws Error("no_undiagnosed_mass") when the denominator
// is <= 1e-12.
Recalibration recalibration_factor(std::span<const double> p_cf, std::span<const int> diagnosed,
                                   std::span<const char> in_group);

// The same formula from precomputed group means.
double recalibration_factor(double mean_p_cf, double observed_incidence, double undiagnosed_mass);

struct ImputationOptions {
    bool per_stratum = false;  // one factor per distinct non-reference attribute vector
    int threads = 1;
};

struct ImputedRecord {
    std::string id;
    double p_cf = 0.0;
    double factor_applied = 1.0;  // 1 for individuals not re-imputed
    int d_observed = 0;
    int d_cf = 0;
    bool reimputed = false;
};

struct ImputationResult {
    std::vector<ImputedRecord> rows;          // in dataset (id) order
    std::vector<Recalibration> groups;        // one per re-imputed group
    std::vector<std::vector<int>> group_keys; // attribute vector per group (empty key = pooled)
    std::size_t clamped_probabilities = 0;    // individuals with factor * p_cf > 1
};

// p_cf for every record in id order, at the dataset horizon.
std::vector<double> counterfactual_probabilities(const HmmParams& theta, const Dataset& data,
                                                 std::span<const int> reference, int threads = 1);

// Re-imputes outcomes: reference-regime members keep their outcome, diagnosed members stay
// diagnosed, and undiagnosed members outside the reference regime are drawn as
// Bernoulli(min(1, factor * p_cf)) from a stream derived from (seed, id).
ImputationResult impute_counterfactual_outcomes(const HmmParams& theta, const Dataset& data,
                                                std::span<const int> reference, std::uint64_t seed,
                                                const ImputationOptions& opts = {});

}  // namespace cfhmm
