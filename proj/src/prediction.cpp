#include "cfhmm/prediction.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>

#include <Eigen/Dense>

#include "cfhmm/error.hpp"
#include "cfhmm/log.hpp"
#include "cfhmm/model.hpp"
#include "cfhmm/seeding.hpp"
#include "parallel.hpp"

namespace cfhmm {

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* what) {
    if (a != b)
        throw DimensionError(std::string(what) + ": predictions have length " + std::to_string(a) +
                             " but outcomes have length " + std::to_string(b));
}

double clamp_pred(double p) { return std::clamp(p, kPredictionClamp, 1.0 - kPredictionClamp); }

Eigen::MatrixXd with_intercept(const DesignMatrix& d) {
    Eigen::MatrixXd X(d.rows, d.cols + 1);
    X.col(0).setOnes();
    for (int i = 0; i < d.rows; ++i)
        for (int j = 0; j < d.cols; ++j) X(i, j + 1) = d(i, j);
    return X;
}

void check_rank(const Eigen::MatrixXd& X, const std::vector<std::string>& names) {
    const double tol = 1e-10;
    for (int j = 1; j <= X.cols(); ++j) {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X.leftCols(j));
        qr.setThreshold(tol);
        if (qr.rank() < j)
            throw Error("rank_deficient", "logistic regression: column '" + names[j - 1] +
                                              "' is linearly dependent on earlier columns");
    }
}

double log_lik(const Eigen::VectorXd& eta, std::span<const int> y) {
    double ll = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
        // log(1 + e^eta) computed stably
        const double e = eta[i];
        const double softplus = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
        ll += y[i] * e - softplus;
    }
    return ll;
}

}  // namespace

GlmModel fit_logistic(const DesignMatrix& design, std::span<const int> y, std::span<const double> offset,
                      const LogisticOptions& opts) {
    if (design.values.size() != static_cast<std::size_t>(design.rows) * design.cols)
        throw DimensionError("logistic regression: design values do not match rows x cols");
    if (static_cast<int>(y.size()) != design.rows)
        throw DimensionError("logistic regression: outcome has length " + std::to_string(y.size()) +
                             ", design has " + std::to_string(design.rows) + " rows");
    if (!offset.empty() && static_cast<int>(offset.size()) != design.rows)
        throw DimensionError("logistic regression: offset length does not match design rows");
    if (design.rows <= design.cols + 1)
        throw Error("too_few_rows", "logistic regression needs more rows than coefficients");

    GlmModel m;
    m.names.push_back("intercept");
    for (int j = 0; j < design.cols; ++j)
        m.names.push_back(j < static_cast<int>(design.names.size()) ? design.names[j] : "x" + std::to_string(j + 1));

    const Eigen::MatrixXd X = with_intercept(design);
    check_rank(X, m.names);
    Eigen::VectorXd off = Eigen::VectorXd::Zero(design.rows);
    for (std::size_t i = 0; i < offset.size(); ++i) off[i] = offset[i];
    Eigen::VectorXd yv(design.rows);
    for (int i = 0; i < design.rows; ++i) yv[i] = y[i];

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(X.cols());
    Eigen::VectorXd eta = X * beta + off;
    double ll = log_lik(eta, y);
    for (int it = 0; it <= opts.max_iter; ++it) {
        Eigen::VectorXd mu(eta.size()), w(eta.size());
        for (Eigen::Index i = 0; i < eta.size(); ++i) {
            mu[i] = expit(eta[i]);
            w[i] = mu[i] * (1.0 - mu[i]);
        }
        const Eigen::VectorXd score = X.transpose() * (yv - mu);
        if (score.cwiseAbs().maxCoeff() <= opts.tol_score) {
            m.iterations = it;
            m.coefficients.assign(beta.data(), beta.data() + beta.size());
            return m;
        }
        if (it == opts.max_iter) break;
        const Eigen::MatrixXd H = X.transpose() * w.asDiagonal() * X;
        const Eigen::VectorXd step = H.ldlt().solve(score);
        double scale = 1.0;
        for (int half = 0; half < 30; ++half, scale *= 0.5) {
            const Eigen::VectorXd cand = beta + scale * step;
            const Eigen::VectorXd cand_eta = X * cand + off;
            const double cand_ll = log_lik(cand_eta, y);
            if (cand_ll >= ll - 1e-12 * std::abs(ll)) {
                beta = cand;
                eta = cand_eta;
                ll = cand_ll;
                break;
            }
        }
        if (beta.cwiseAbs().maxCoeff() > opts.separation_bound)
            throw Error("separation", "logistic regression diverged (|coefficient| > " +
                                          std::to_string(opts.separation_bound) + "); outcome is separable");
    }
    throw Error("not_converged", "logistic regression did not converge in " + std::to_string(opts.max_iter) +
                                     " iterations");
}

std::vector<double> predict(const GlmModel& model, const DesignMatrix& design) {
    if (static_cast<int>(model.coefficients.size()) != design.cols + 1)
        throw DimensionError("predict: model has " + std::to_string(model.coefficients.size()) +
                             " coefficients, design has " + std::to_string(design.cols) + " columns");
    std::vector<double> p(design.rows);
    for (int i = 0; i < design.rows; ++i) {
        double lp = model.coefficients[0];
        for (int j = 0; j < design.cols; ++j) lp += model.coefficients[j + 1] * design(i, j);
        p[i] = expit(lp);
    }
    return p;
}

double auroc(std::span<const double> pred, std::span<const int> y) {
    check_lengths(pred.size(), y.size(), "auroc");
    const std::size_t n = pred.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pred[a] < pred[b]; });
    // midranks (1-based); tie groups share their average rank
    double rank_sum = 0.0;
    std::size_t n1 = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && pred[order[j + 1]] == pred[order[i]]) ++j;
        const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k)
            if (y[order[k]]) {
                rank_sum += mid;
                ++n1;
            }
        i = j + 1;
    }
    const std::size_t n0 = n - n1;
    if (n1 == 0 || n0 == 0) throw Error("single_class", "auroc needs at least one positive and one negative");
    const double d1 = static_cast<double>(n1);
    return (rank_sum - d1 * (d1 + 1.0) / 2.0) / (d1 * static_cast<double>(n0));
}

CalibrationStats calibration(std::span<const double> pred, std::span<const int> y) {
    check_lengths(pred.size(), y.size(), "calibration");
    const int n = static_cast<int>(pred.size());
    std::vector<double> lp(n);
    double sum_p = 0.0, sum_y = 0.0;
    for (int i = 0; i < n; ++i) {
        const double p = clamp_pred(pred[i]);
        lp[i] = logit(p);
        sum_p += p;
        sum_y += y[i];
    }
    CalibrationStats c;
    c.oe_ratio = sum_y / sum_p;
    DesignMatrix slope_design{n, 1, lp, {"logit_pred"}};
    try {
        const GlmModel free = fit_logistic(slope_design, y);
        c.joint_intercept = free.coefficients[0];
        c.slope = free.coefficients[1];
    } catch (const Error& e) {
        // constant predictions leave the slope undefined; separated ones make it infinite
        if (e.code() != "rank_deficient" && e.code() != "separation") throw;
        c.joint_intercept = c.slope = std::numeric_limits<double>::quiet_NaN();
    }
    DesignMatrix none{n, 0, {}, {}};
    c.intercept = fit_logistic(none, y, lp).coefficients[0];
    return c;
}

ScalarLosses scalar_losses(std::span<const double> pred, std::span<const int> y) {
    check_lengths(pred.size(), y.size(), "scalar_losses");
    ScalarLosses s;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double p = clamp_pred(pred[i]);
        s.brier += (p - y[i]) * (p - y[i]);
        s.logistic_error -= y[i] ? std::log(p) : std::log1p(-p);
    }
    const double n = static_cast<double>(pred.size());
    s.brier /= n;
    s.logistic_error /= n;
    return s;
}

std::vector<DecileBin> decile_calibration(std::span<const double> pred, std::span<const int> y, int bins) {
    check_lengths(pred.size(), y.size(), "decile_calibration");
    const std::size_t n = pred.size();
    if (bins < 1 || n < static_cast<std::size_t>(bins))
        throw Error("too_few_rows", "decile calibration needs at least as many rows as bins");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pred[a] < pred[b]; });
    std::vector<DecileBin> out(bins);
    for (int b = 0; b < bins; ++b) {
        const std::size_t lo = n * b / bins, hi = n * (b + 1) / bins;
        double sp = 0.0, sy = 0.0;
        for (std::size_t k = lo; k < hi; ++k) {
            sp += pred[order[k]];
            sy += y[order[k]];
        }
        out[b].count = hi - lo;
        out[b].mean_pred = sp / static_cast<double>(hi - lo);
        out[b].observed = sy / static_cast<double>(hi - lo);
    }
    return out;
}

std::vector<double> default_thresholds() {
    std::vector<double> t;
    for (int k = 5; k <= 30; ++k) t.push_back(k / 100.0);
    return t;
}

std::vector<NetBenefitPoint> net_benefit(std::span<const double> pred, std::span<const int> y,
                                         std::span<const double> thresholds) {
    check_lengths(pred.size(), y.size(), "net_benefit");
    const double n = static_cast<double>(pred.size());
    const double prevalence = std::accumulate(y.begin(), y.end(), 0.0) / n;
    std::vector<NetBenefitPoint> out;
    for (double pt : thresholds) {
        if (!(pt > 0.0 && pt < 1.0)) throw Error("invalid_threshold", "net benefit thresholds must lie in (0, 1)");
        const double w = pt / (1.0 - pt);
        double tp = 0.0, fp = 0.0;
        for (std::size_t i = 0; i < pred.size(); ++i)
            if (pred[i] >= pt) (y[i] ? tp : fp) += 1.0;
        out.push_back({pt, tp / n - fp / n * w, prevalence - (1.0 - prevalence) * w, 0.0});
    }
    return out;
}

MetricsReport evaluate_metrics(std::span<const double> pred, std::span<const int> y, std::string stratum) {
    MetricsReport r;
    r.stratum = std::move(stratum);
    r.n = pred.size();
    r.events = static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
    r.auroc = auroc(pred, y);
    const CalibrationStats c = calibration(pred, y);
    r.calibration_slope = c.slope;
    r.calibration_intercept = c.intercept;
    r.calibration_intercept_joint = c.joint_intercept;
    r.oe_ratio = c.oe_ratio;
    const ScalarLosses s = scalar_losses(pred, y);
    r.brier = s.brier;
    r.logistic_error = s.logistic_error;
    r.deciles = decile_calibration(pred, y, static_cast<int>(std::min<std::size_t>(10, pred.size())));
    const auto th = default_thresholds();
    r.net_benefit = net_benefit(pred, y, th);
    return r;
}

const std::vector<std::string>& scalar_metric_names() {
    static const std::vector<std::string> names{"auroc",    "calibration_slope", "calibration_intercept",
                                                "calibration_intercept_joint", "oe_ratio", "brier",
                                                "logistic_error"};
    return names;
}

std::vector<double> scalar_metrics(const MetricsReport& r) {
    return {r.auroc, r.calibration_slope, r.calibration_intercept, r.calibration_intercept_joint,
            r.oe_ratio, r.brier, r.logistic_error};
}

OptimismResult bootstrap_optimism(std::size_t n, std::span<const double> apparent,
                                  const BootstrapIteration& iteration, const BootstrapOptions& opts) {
    if (opts.replicates < 0) throw Error("invalid_config", "bootstrap replicates must be >= 0");
    const std::size_t k = apparent.size();
    std::vector<std::optional<BootstrapSample>> samples(opts.replicates);
    detail::parallel_chunks(opts.replicates, opts.threads, [&](int b) {
        const std::uint64_t s = derive_seed(opts.seed, static_cast<std::uint64_t>(b));
        std::mt19937_64 rng(s);
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        std::vector<std::size_t> idx(n);
        for (auto& i : idx) i = pick(rng);
        std::sort(idx.begin(), idx.end());
        try {
            BootstrapSample smp = iteration(idx, s);
            if (smp.on_sample.size() != k || smp.on_original.size() != k)
                throw DimensionError("bootstrap iteration returned the wrong number of metrics");
            samples[b] = std::move(smp);
        } catch (const std::exception& e) {
            log::warn("bootstrap replicate " + std::to_string(b) + " failed: " + e.what());
        }
    });

    OptimismResult res;
    res.apparent.assign(apparent.begin(), apparent.end());
    res.optimism.assign(k, 0.0);
    for (const auto& s : samples) {
        if (!s) {
            ++res.failures;
            continue;
        }
        ++res.effective_replicates;
        for (std::size_t j = 0; j < k; ++j) res.optimism[j] += s->on_sample[j] - s->on_original[j];
    }
    if (res.failures > opts.max_failure_fraction * opts.replicates)
        throw Error("bootstrap_failed", std::to_string(res.failures) + " of " + std::to_string(opts.replicates) +
                                            " bootstrap replicates failed");
    if (res.effective_replicates > 0)
        for (double& o : res.optimism) o /= res.effective_replicates;
    res.corrected.resize(k);
    for (std::size_t j = 0; j < k; ++j) res.corrected[j] = res.apparent[j] - res.optimism[j];
    return res;
}

}  // namespace cfhmm
