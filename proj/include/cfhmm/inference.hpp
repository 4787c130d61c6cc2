#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cfhmm/model.hpp"
#include "cfhmm/record.hpp"

namespace cfhmm {

// Per-timepoint quantities of the forward recursion, conditioned on results before t.
struct ForwardState {
    int t = 0;
    Vec3 stage_given_past{};   // P(S_t = i | x, a, r_1..t-1)
    Vec4 result_given_past{};  // P(R_t = j | x, a, r_1..t-1)
};

// Full forward pass for one record. `filtered[t-1]` is P(S_t | r_1..t) and `hazards[t-1]`
// the hazard used to enter timepoint t.
struct ForwardTrace {
    std::vector<ForwardState> states;
    std::vector<Vec3> filtered;
    std::vector<double> hazards;
    double log_likelihood = 0.0;
};

// Per-step probabilities below this are reported as impossible observations.
inline constexpr double kImpossibleProbability = 1e-300;

ForwardTrace forward_pass(const HmmParams& theta, const IndividualRecord& rec);
double forward_log_likelihood(const HmmParams& theta, const IndividualRecord& rec);

// Records sorted by id with a fixed study horizon. Reductions over a Dataset always run in
// this order, so results do not depend on input order or thread count.
class Dataset {
public:
    Dataset(std::vector<IndividualRecord> records, int horizon);

    std::span<const IndividualRecord> records() const noexcept { return records_; }
    std::size_t size() const noexcept { return records_.size(); }
    int horizon() const noexcept { return horizon_; }
    // Distinct observability-attribute vectors, sorted.
    std::vector<std::vector<int>> attribute_support() const;

private:
    std::vector<IndividualRecord> records_;
    int horizon_;
};

// False when no parameter value can produce the record: a late positive one step after a
// negative, or at t=1 while baseline late disease is fixed at zero.
bool structurally_possible(const IndividualRecord& rec, bool baseline_late_free);

double dataset_log_likelihood(const HmmParams& theta, const Dataset& data, int threads = 1);

struct LikelihoodAndGradient {
    double log_likelihood = 0.0;
    std::vector<double> gradient;  // d logL / d u, in the UnconstrainedParams layout
};

// Exact gradient of dataset_log_likelihood(from_unconstrained(u, shape)) by reverse-mode
// differentiation of the forward recursion.
LikelihoodAndGradient log_likelihood_gradient(const UnconstrainedParams& u, const HmmParams& shape,
                                              const Dataset& data, int threads = 1);

// Central differences of the same function; test oracle and fallback.
std::vector<double> finite_difference_gradient(const UnconstrainedParams& u, const HmmParams& shape,
                                               const Dataset& data, double step = 1e-5, int threads = 1);

enum class GradientMethod { Adjoint, FiniteDifference };

struct FitOptions {
    double tol_g = 1e-6;
    int max_iter = 10000;
    int memory = 10;
    GradientMethod gradient = GradientMethod::Adjoint;
    int restarts = 0;               // extra jittered starts; best log-likelihood wins
    double restart_jitter = 0.5;    // sd of the jitter on the unconstrained vector
    std::uint64_t restart_seed = 1;
    bool record_trace = false;
    int threads = 1;
};

struct TracePoint {
    int iteration;
    double log_likelihood;
    double gradient_norm;
};

struct FitResult {
    HmmParams theta_hat;
    double log_likelihood = 0.0;
    int iterations = 0;
    double gradient_norm = 0.0;
    bool converged = false;
    std::string diagnostic;
    std::vector<TracePoint> trace;
};

// Maximum-likelihood fit by limited-memory BFGS on the unconstrained parameters. When the
// late >= early constraint is set, its support is taken from the data.
FitResult fit_mle(const Dataset& data, const HmmParams& init, const FitOptions& opts = {});

// Mid-range starting values: every testing rate 0.05, progression 0.1, free baseline late
// fraction 0.1, zero hazard coefficients, scale 0.01 and shape 1 (or constant baseline 0.01).
HmmParams default_init(HazardFamily family, EmissionForm form, int n_x, int n_a, int horizon,
                       bool baseline_late_free, bool constraint_late_ge_early);

nlohmann::json fit_result_to_json(const FitResult& fit);
FitResult fit_result_from_json(const nlohmann::json& j);

}  // namespace cfhmm
