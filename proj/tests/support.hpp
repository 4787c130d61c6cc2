#pragma once

// Random instances and brute-force oracles shared by the unit tests and the acceptance
// binary. Oracles enumerate latent paths directly and never call the recursions under test.

#include <cstdint>
#include <random>
#include <vector>

#include "cfhmm/counterfactual.hpp"
#include "cfhmm/inference.hpp"
#include "cfhmm/model.hpp"
#include "cfhmm/record.hpp"

namespace cfhmm::testing {

struct InstanceShape {
    HazardFamily family = HazardFamily::Weibull;
    EmissionForm form = EmissionForm::GroupRates;
    int n_x = 2;
    int n_a = 1;
    int horizon = 4;
    bool baseline_late_free = true;
    bool constraint = false;
};

InstanceShape random_shape(std::mt19937_64& rng, int max_horizon);
HmmParams random_params(std::mt19937_64& rng, const InstanceShape& shape);
std::vector<double> random_x(std::mt19937_64& rng, int n_x);
std::vector<int> random_a(std::mt19937_64& rng, int n_a);

// Draws a latent path and tests from theta itself, so the record is always possible.
IndividualRecord sample_record(std::mt19937_64& rng, const HmmParams& theta, const std::string& id,
                               std::vector<double> x, std::vector<int> a);

std::vector<IndividualRecord> sample_cohort(std::mt19937_64& rng, const HmmParams& theta, int n);

// Every attribute vector of length n_a.
std::vector<std::vector<int>> all_attribute_vectors(int n_a);

// ---- oracles ---------------------------------------------------------------------------

// Probability of one latent path and the observed results (the product of the initial,
// transition and emission factors).
double path_probability(const HmmParams& theta, const IndividualRecord& rec, const std::vector<int>& path);

// log sum over all 3^T_n latent paths.
double brute_force_log_likelihood(const HmmParams& theta, const IndividualRecord& rec);

// rows[t][i] = P(S_t = i | results), by enumeration.
std::vector<Vec3> brute_force_posterior(const HmmParams& theta, const IndividualRecord& rec);

// Enumerates latent paths up to `horizon` and every counterfactual test outcome sequence.
double brute_force_p_cf(const HmmParams& theta, const IndividualRecord& rec, const StageRates& cf, int horizon);

double relative_error(double a, double b);

}  // namespace cfhmm::testing
