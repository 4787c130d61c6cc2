#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace cfhmm {

// Row-major predictor matrix without the intercept column.
struct DesignMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> values;
    std::vector<std::string> names;

    double operator()(int i, int j) const { return values[static_cast<std::size_t>(i) * cols + j]; }
};

struct GlmModel {
    std::string tag;                    // naive, blind, imputed, ideal, or free text
    std::vector<std::string> names;     // "intercept" then predictor names
    std::vector<double> coefficients;   // intercept first
    int iterations = 0;
};

struct LogisticOptions {
    double tol_score = 1e-8;   // max |score component|
    int max_iter = 100;
    double separation_bound = 30.0;
};

// Maximum-likelihood logistic regression by iteratively reweighted least squares.
// `offset`, when non-empty, enters the linear predictor with coefficient 1.
// Errors: "rank_deficient" naming the column, "separation", "not_converged".
GlmModel fit_logistic(const DesignMatrix& design, std::span<const int> outcome,
                      std::span<const double> offset = {}, const LogisticOptions& opts = {});

std::vector<double> predict(const GlmModel& model, const DesignMatrix& design);

inline constexpr double kPredictionClamp = 1e-12;

double auroc(std::span<const double> pred, std::span<const int> outcome);

struct CalibrationStats {
    double slope = 0.0;
    double intercept = 0.0;        // logit(pred) as a fixed offset
    double joint_intercept = 0.0;  // intercept of the free-slope fit
    double oe_ratio = 0.0;
};

// Slope and joint intercept are NaN when the predictions are constant or separate the outcome.
CalibrationStats calibration(std::span<const double> pred, std::span<const int> outcome);

struct ScalarLosses {
    double brier = 0.0;
    double logistic_error = 0.0;
};

ScalarLosses scalar_losses(std::span<const double> pred, std::span<const int> outcome);

struct DecileBin {
    double mean_pred = 0.0;
    double observed = 0.0;
    std::size_t count = 0;
};

// Equal-frequency bins by predicted risk; ties keep input order.
std::vector<DecileBin> decile_calibration(std::span<const double> pred, std::span<const int> outcome,
                                          int bins = 10);

struct NetBenefitPoint {
    double threshold = 0.0;
    double model = 0.0;
    double treat_all = 0.0;
    double treat_none = 0.0;
};

// 0.05, 0.06, ..., 0.30
std::vector<double> default_thresholds();

// Classification rule: pred >= threshold.
std::vector<NetBenefitPoint> net_benefit(std::span<const double> pred, std::span<const int> outcome,
                                         std::span<const double> thresholds);

struct MetricsReport {
    std::string stratum;
    std::size_t n = 0;
    std::size_t events = 0;
    double auroc = 0.0;
    double calibration_slope = 0.0;
    double calibration_intercept = 0.0;
    double calibration_intercept_joint = 0.0;
    double oe_ratio = 0.0;
    double brier = 0.0;
    double logistic_error = 0.0;
    std::vector<DecileBin> deciles;
    std::vector<NetBenefitPoint> net_benefit;
};

MetricsReport evaluate_metrics(std::span<const double> pred, std::span<const int> outcome, std::string stratum);

// Scalar metrics in a fixed order, paired with scalar_metric_names().
std::vector<double> scalar_metrics(const MetricsReport& r);
const std::vector<std::string>& scalar_metric_names();

struct BootstrapOptions {
    int replicates = 100;
    std::uint64_t seed = 1;
    double max_failure_fraction = 0.2;
    int threads = 1;
};

struct BootstrapSample {
    std::vector<double> on_sample;    // metrics of the refitted pipeline on its bootstrap sample
    std::vector<double> on_original;  // the same pipeline evaluated on the original data
};

// `iteration(indices, seed)` refits the whole pipeline on the resampled rows; any exception
// counts as a failed replicate.
using BootstrapIteration = std::function<BootstrapSample(std::span<const std::size_t>, std::uint64_t)>;

struct OptimismResult {
    std::vector<double> apparent;
    std::vector<double> optimism;   // mean(on_sample - on_original)
    std::vector<double> corrected;  // apparent - optimism
    int effective_replicates = 0;
    int failures = 0;
};

// Throws Error("bootstrap_failed") when more than max_failure_fraction of replicates fail.
OptimismResult bootstrap_optimism(std::size_t n, std::span<const double> apparent,
                                  const BootstrapIteration& iteration, const BootstrapOptions& opts);

}  // namespace cfhmm
