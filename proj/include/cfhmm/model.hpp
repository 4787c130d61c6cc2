#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace cfhmm {

using Vec3 = std::array<double, 3>;
using Vec4 = std::array<double, 4>;
using Matrix3 = std::array<Vec3, 3>;          // [from][to]
using EmissionMatrix = std::array<Vec4, 3>;   // [stage][result]

// Upper bound applied to every per-timepoint hazard: h <= 1 - kHazardEpsilon.
inline constexpr double kHazardEpsilon = 1e-6;

enum class HazardFamily { Weibull, PiecewiseBaseline };
enum class EmissionForm { GroupRates, LogisticShared };

// Discrete-time incidence hazard h(x, a, t) for t = 1..horizon. `coefficients` act on the
// concatenation (x, a).
struct HazardModel {
    HazardFamily family = HazardFamily::Weibull;
    std::vector<double> coefficients;
    double scale = 0.01;             // Weibull only
    double shape = 1.0;              // Weibull only
    std::vector<double> baseline;    // PiecewiseBaseline only, one entry per timepoint
    int horizon = 10;
};

// Testing rates per latent stage. GroupRates keys stage-0/1 rates by a single binary
// attribute; LogisticShared uses b(a) = expit(beta . (1, a)) for both stages 0 and 1.
struct EmissionModel {
    EmissionForm form = EmissionForm::GroupRates;
    std::array<double, 2> rate_s0{0.05, 0.05};
    std::array<double, 2> rate_s1{0.05, 0.05};
    std::vector<double> beta;        // LogisticShared: intercept then one per attribute
    double rate_s2 = 0.05;
    bool constraint_late_ge_early = false;
    // Attribute vectors over which the late >= early constraint is enforced (the distinct
    // vectors observed in the data). Ignored when the constraint is off.
    std::vector<std::vector<int>> constraint_support;
};

struct HmmParams {
    HazardModel hazard;
    EmissionModel emission;
    double progression = 0.1;             // shared early-to-late rate
    double baseline_late_fraction = 0.0;  // P(S_1 = 2 | S_1 != 0)
    bool baseline_late_free = true;       // when false the fraction is held fixed during fitting
};

// Stage-wise probability of a confirmatory test for attributes `a`.
struct StageRates {
    double none;
    double early;
    double late;
};

int covariate_count(const HazardModel& hz);   // length of (x, a) expected by coefficients
int attribute_count(const EmissionModel& em); // length of a expected by the emission model

double hazard(const HmmParams& theta, std::span<const double> x, std::span<const int> a, int t);
Matrix3 transition_matrix(const HmmParams& theta, std::span<const double> x, std::span<const int> a, int t);
Matrix3 transition_matrix(double h, double progression);
StageRates stage_rates(const EmissionModel& em, std::span<const int> a);
EmissionMatrix emission_matrix(const HmmParams& theta, std::span<const int> a);
EmissionMatrix emission_matrix(const StageRates& rates);
Vec3 initial_state(const HmmParams& theta, std::span<const double> x, std::span<const int> a);
Vec3 initial_state(double h1, double baseline_late_fraction);

// Largest stage-0/1 testing rate over the constraint support.
double max_early_rate(const EmissionModel& em);

// Checks every field invariant; throws cfhmm::Error("invalid_params").
void validate_params(const HmmParams& theta);

// Unconstrained optimisation vector. Layout, in order:
//   hazard block   : coefficients..., then log(scale), log(shape)   [Weibull]
//                    coefficients..., then log(baseline[0..T-1])     [PiecewiseBaseline]
//   emission block : logit rate_s0[0], logit rate_s0[1], logit rate_s1[0], logit rate_s1[1]  [GroupRates]
//                    beta...                                                             [LogisticShared]
//                    then the late rate: logit(rate_s2), or logit((rate_s2 - m) / (1 - m))
//                    with m = max_early_rate when the late >= early constraint is set
//   progression    : logit(progression)
//   baseline late  : logit(baseline_late_fraction), present only when baseline_late_free
struct UnconstrainedParams {
    std::vector<double> values;
};

struct ParamLayout {
    int hazard_coef = 0;     // offset of first hazard coefficient
    int n_hazard_coef = 0;
    int hazard_shape = -1;   // log(scale) at hazard_shape, log(shape) at hazard_shape + 1 (Weibull)
    int baseline = -1;       // first log-baseline entry (PiecewiseBaseline)
    int emission = 0;        // first emission entry
    int n_emission_early = 0;
    int late_rate = 0;
    int progression = 0;
    int baseline_late = -1;
    int size = 0;
};

ParamLayout param_layout(const HmmParams& theta);
std::vector<std::string> param_names(const HmmParams& theta);

UnconstrainedParams to_unconstrained(const HmmParams& theta);
// `shape` supplies the structural choices (families, sizes, support, fixed fields).
HmmParams from_unconstrained(const UnconstrainedParams& u, const HmmParams& shape);

nlohmann::json params_to_json(const HmmParams& theta);
HmmParams params_from_json(const nlohmann::json& j);

double expit(double v) noexcept;
double logit(double p) noexcept;

}  // namespace cfhmm
