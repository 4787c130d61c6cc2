#include "cfhmm/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "cfhmm/error.hpp"
#include "cfhmm/lbfgs.hpp"
#include "parallel.hpp"

namespace cfhmm {

namespace {

constexpr int kChunk = 256;

// Everything the recursion needs for one record.
struct StepInputs {
    std::span<const TestResult> results;
    std::span<const double> h;   // h[t-1], t = 1..T_n
    StageRates rates;
    double progression;
    double late_fraction;
};

struct StepAdjoint {
    std::vector<double> h;
    double none = 0, early = 0, late = 0, progression = 0, late_fraction = 0;
};

double emit(const StageRates& r, int stage, int result) {
    const double rate = stage == 0 ? r.none : stage == 1 ? r.early : r.late;
    if (result == 3) return 1.0 - rate;
    return result == stage ? rate : 0.0;
}

// Forward recursion, optionally followed by its reverse-mode adjoint. Returns the
// record's log-likelihood.
double record_log_likelihood(const StepInputs& in, const std::string& id, StepAdjoint* adj) {
    const int tn = static_cast<int>(in.results.size());
    thread_local std::vector<Vec3> pred, filt, w;
    thread_local std::vector<double> c;
    pred.resize(tn);
    filt.resize(tn);
    w.resize(tn);
    c.resize(tn);

    const double g = in.progression;
    pred[0] = initial_state(in.h[0], in.late_fraction);
    double ll = 0.0;
    for (int t = 0; t < tn; ++t) {
        const int r = static_cast<int>(in.results[t]);
        double sum = 0.0;
        for (int i = 0; i < kNumStages; ++i) {
            w[t][i] = pred[t][i] * emit(in.rates, i, r);
            sum += w[t][i];
        }
        if (!(sum > kImpossibleProbability)) throw ImpossibleObservation(id, t + 1, r);
        c[t] = sum;
        ll += std::log(sum);
        for (int i = 0; i < kNumStages; ++i) filt[t][i] = w[t][i] / sum;
        if (t + 1 < tn) {
            const double h = in.h[t + 1];
            const Vec3& q = filt[t];
            pred[t + 1] = {q[0] * (1.0 - h), q[0] * h + q[1] * (1.0 - g), q[1] * g + q[2]};
        }
    }
    if (adj == nullptr) return ll;

    adj->h.assign(tn, 0.0);
    adj->none = adj->early = adj->late = adj->progression = adj->late_fraction = 0.0;
    Vec3 pbar{0, 0, 0};  // adjoint of pred[t+1]
    for (int t = tn - 1; t >= 0; --t) {
        Vec3 qbar{0, 0, 0};
        if (t + 1 < tn) {
            const double h = in.h[t + 1];
            const Vec3& q = filt[t];
            qbar[0] = pbar[0] * (1.0 - h) + pbar[1] * h;
            qbar[1] = pbar[1] * (1.0 - g) + pbar[2] * g;
            qbar[2] = pbar[2];
            adj->h[t + 1] += q[0] * (pbar[1] - pbar[0]);
            adj->progression += q[1] * (pbar[2] - pbar[1]);
        }
        // filt = w / c, ll += log c
        double qq = 0.0;
        for (int i = 0; i < kNumStages; ++i) qq += qbar[i] * filt[t][i];
        const double cbar = (1.0 - qq) / c[t];
        const int r = static_cast<int>(in.results[t]);
        for (int i = 0; i < kNumStages; ++i) {
            const double wbar = qbar[i] / c[t] + cbar;
            pbar[i] = wbar * emit(in.rates, i, r);
            // d emit / d rate: +1 on the confirmatory diagonal, -1 for no test
            double d_rate = 0.0;
            if (r == 3) d_rate = -wbar * pred[t][i];
            else if (r == i) d_rate = wbar * pred[t][i];
            if (i == 0) adj->none += d_rate;
            else if (i == 1) adj->early += d_rate;
            else adj->late += d_rate;
        }
    }
    const double h1 = in.h[0], f = in.late_fraction;
    adj->h[0] += -pbar[0] + (1.0 - f) * pbar[1] + f * pbar[2];
    adj->late_fraction += h1 * (pbar[2] - pbar[1]);
    return ll;
}

// Hazard evaluation shared by every record in one likelihood evaluation.
class HazardTable {
public:
    explicit HazardTable(const HazardModel& hz) : hz_(hz), base_(hz.horizon), dlogk_(hz.horizon) {
        for (int t = 1; t <= hz.horizon; ++t) {
            if (hz.family == HazardFamily::Weibull) {
                const double rel = static_cast<double>(t) / hz.horizon;
                base_[t - 1] = hz.scale * hz.shape * std::pow(rel, hz.shape - 1.0);
                dlogk_[t - 1] = 1.0 + hz.shape * std::log(rel);
            } else {
                base_[t - 1] = hz.baseline[t - 1];
            }
        }
    }

    double linear_predictor(const IndividualRecord& rec) const {
        double lp = 0.0;
        const std::size_t nx = rec.x.size();
        for (std::size_t k = 0; k < nx; ++k) lp += hz_.coefficients[k] * rec.x[k];
        for (std::size_t k = 0; k < rec.a.size(); ++k) lp += hz_.coefficients[nx + k] * rec.a[k];
        return lp;
    }

    // Fills h[0..tn-1]; active[t] is false where the upper clamp binds.
    void fill(const IndividualRecord& rec, int tn, std::vector<double>& h, std::vector<char>& active) const {
        const double scale = std::exp(linear_predictor(rec));
        h.resize(tn);
        active.resize(tn);
        for (int t = 0; t < tn; ++t) {
            const double raw = base_[t] * scale;
            active[t] = raw < 1.0 - kHazardEpsilon;
            h[t] = active[t] ? raw : 1.0 - kHazardEpsilon;
        }
    }

    double dlog_shape(int t0) const { return dlogk_[t0]; }

private:
    const HazardModel& hz_;
    std::vector<double> base_, dlogk_;
};

void check_record_layout(const HmmParams& theta, const IndividualRecord& rec) {
    if (rec.x.size() + rec.a.size() != theta.hazard.coefficients.size())
        throw DimensionError("record '" + rec.id + "': (x, a) has length " + std::to_string(rec.x.size() + rec.a.size()) +
                             " but hazard coefficients have length " +
                             std::to_string(theta.hazard.coefficients.size()));
    if (static_cast<int>(rec.a.size()) != attribute_count(theta.emission))
        throw DimensionError("record '" + rec.id + "': attribute vector a has length " + std::to_string(rec.a.size()) +
                             ", emission model expects " + std::to_string(attribute_count(theta.emission)));
    if (rec.follow_up() > theta.hazard.horizon)
        throw DimensionError("record '" + rec.id + "': follow-up exceeds hazard horizon");
}

StepInputs make_inputs(const HmmParams& theta, const IndividualRecord& rec, std::span<const double> h) {
    return {rec.results, h, stage_rates(theta.emission, rec.a), theta.progression, theta.baseline_late_fraction};
}

// Index in the unconstrained vector (and rate value) of the stage-0/1 rate attaining the
// constraint maximum; GroupRates only.
std::pair<int, double> group_rates_argmax(const EmissionModel& em, const ParamLayout& L) {
    int best = -1;
    double m = -1.0;
    auto consider = [&](int g) {
        if (em.rate_s0[g] > m) { m = em.rate_s0[g]; best = L.emission + g; }
        if (em.rate_s1[g] > m) { m = em.rate_s1[g]; best = L.emission + 2 + g; }
    };
    if (em.constraint_support.empty()) {
        consider(0);
        consider(1);
    } else {
        std::set<int> groups;
        for (const auto& a : em.constraint_support) groups.insert(a.at(0) != 0 ? 1 : 0);
        for (int g : groups) consider(g);
    }
    return {best, m};
}

std::vector<int> logistic_argmax(const EmissionModel& em) {
    if (em.constraint_support.empty()) return std::vector<int>(em.beta.size() - 1, 0);
    std::vector<int> best;
    double m = -1.0;
    for (const auto& a : em.constraint_support) {
        const double b = stage_rates(em, a).none;
        if (b > m) { m = b; best = a; }
    }
    return best;
}

}  // namespace

ForwardTrace forward_pass(const HmmParams& theta, const IndividualRecord& rec) {
    check_record_layout(theta, rec);
    const int tn = rec.follow_up();
    if (tn < 1) throw Error("invalid_record", "record '" + rec.id + "' has no timepoints");
    ForwardTrace tr;
    tr.hazards.resize(tn);
    for (int t = 1; t <= tn; ++t) tr.hazards[t - 1] = hazard(theta, rec.x, rec.a, t);
    const EmissionMatrix gamma = emission_matrix(theta, rec.a);
    Vec3 pred = initial_state(tr.hazards[0], theta.baseline_late_fraction);
    for (int t = 1; t <= tn; ++t) {
        ForwardState st;
        st.t = t;
        st.stage_given_past = pred;
        for (int j = 0; j < kNumResults; ++j) {
            double s = 0.0;
            for (int i = 0; i < kNumStages; ++i) s += gamma[i][j] * pred[i];
            st.result_given_past[j] = s;
        }
        const int r = static_cast<int>(rec.results[t - 1]);
        const double c = st.result_given_past[r];
        if (!(c > kImpossibleProbability)) throw ImpossibleObservation(rec.id, t, r);
        tr.log_likelihood += std::log(c);
        Vec3 q;
        for (int i = 0; i < kNumStages; ++i) q[i] = gamma[i][r] * pred[i] / c;
        tr.filtered.push_back(q);
        tr.states.push_back(st);
        if (t < tn) {
            const Matrix3 Q = transition_matrix(tr.hazards[t], theta.progression);
            for (int j = 0; j < kNumStages; ++j) {
                pred[j] = 0.0;
                for (int i = 0; i < kNumStages; ++i) pred[j] += q[i] * Q[i][j];
            }
        }
    }
    return tr;
}

double forward_log_likelihood(const HmmParams& theta, const IndividualRecord& rec) {
    check_record_layout(theta, rec);
    std::vector<double> h(rec.follow_up());
    for (int t = 1; t <= rec.follow_up(); ++t) h[t - 1] = hazard(theta, rec.x, rec.a, t);
    if (h.empty()) throw Error("invalid_record", "record '" + rec.id + "' has no timepoints");
    return record_log_likelihood(make_inputs(theta, rec, h), rec.id, nullptr);
}

Dataset::Dataset(std::vector<IndividualRecord> records, int horizon) : records_(std::move(records)), horizon_(horizon) {
    if (records_.empty()) throw Error("empty_dataset", "dataset has no records");
    std::stable_sort(records_.begin(), records_.end(),
                     [](const IndividualRecord& l, const IndividualRecord& r) { return l.id < r.id; });
    const auto nx = records_.front().x.size(), na = records_.front().a.size();
    for (std::size_t i = 0; i < records_.size(); ++i) {
        const auto& rec = records_[i];
        validate_record(rec, horizon_);
        if (i > 0 && rec.id == records_[i - 1].id) throw Error("invalid_record", "duplicate record id '" + rec.id + "'");
        if (rec.x.size() != nx || rec.a.size() != na)
            throw DimensionError("record '" + rec.id + "': covariate layout differs from the first record");
    }
}

std::vector<std::vector<int>> Dataset::attribute_support() const {
    std::set<std::vector<int>> s;
    for (const auto& r : records_) s.insert(r.a);
    return {s.begin(), s.end()};
}

bool structurally_possible(const IndividualRecord& rec, bool baseline_late_free) {
    for (int t = 0; t < rec.follow_up(); ++t) {
        if (rec.results[t] != TestResult::LatePositive) continue;
        if (t == 0 && !baseline_late_free) return false;
        if (t > 0 && rec.results[t - 1] == TestResult::Negative) return false;
    }
    return true;
}

double dataset_log_likelihood(const HmmParams& theta, const Dataset& data, int threads) {
    const auto recs = data.records();
    check_record_layout(theta, recs.front());
    const HazardTable table(theta.hazard);
    const int n = static_cast<int>(recs.size());
    const int n_chunks = (n + kChunk - 1) / kChunk;
    std::vector<double> partial(n_chunks, 0.0);
    detail::parallel_chunks(n_chunks, threads, [&](int c) {
        std::vector<double> h;
        std::vector<char> active;
        double s = 0.0;
        for (int i = c * kChunk; i < std::min(n, (c + 1) * kChunk); ++i) {
            const auto& rec = recs[i];
            table.fill(rec, rec.follow_up(), h, active);
            s += record_log_likelihood(make_inputs(theta, rec, h), rec.id, nullptr);
        }
        partial[c] = s;
    });
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

LikelihoodAndGradient log_likelihood_gradient(const UnconstrainedParams& u, const HmmParams& shape,
                                              const Dataset& data, int threads) {
    const HmmParams theta = from_unconstrained(u, shape);
    const ParamLayout L = param_layout(theta);
    const auto recs = data.records();
    check_record_layout(theta, recs.front());
    const HazardTable table(theta.hazard);
    const EmissionModel& em = theta.emission;
    const bool weibull = theta.hazard.family == HazardFamily::Weibull;
    const int n = static_cast<int>(recs.size());
    const int n_chunks = (n + kChunk - 1) / kChunk;
    const double m_con = em.constraint_late_ge_early ? max_early_rate(em) : 0.0;
    const std::size_t width = static_cast<std::size_t>(L.size) + 1;  // last slot: adjoint of max early rate
    std::vector<double> partial_ll(n_chunks, 0.0);
    std::vector<double> partial_grad(static_cast<std::size_t>(n_chunks) * width, 0.0);

    detail::parallel_chunks(n_chunks, threads, [&](int c) {
        std::vector<double> h;
        std::vector<char> active;
        StepAdjoint adj;
        double* gsum = partial_grad.data() + static_cast<std::size_t>(c) * width;
        double ll = 0.0;
        for (int i = c * kChunk; i < std::min(n, (c + 1) * kChunk); ++i) {
            const auto& rec = recs[i];
            const int tn = rec.follow_up();
            table.fill(rec, tn, h, active);
            const StepInputs in = make_inputs(theta, rec, h);
            ll += record_log_likelihood(in, rec.id, &adj);

            double s = 0.0, s_shape = 0.0;
            for (int t = 0; t < tn; ++t) {
                if (!active[t]) continue;
                const double v = adj.h[t] * h[t];
                s += v;
                if (weibull) s_shape += v * table.dlog_shape(t);
                else gsum[L.baseline + t] += v;
            }
            const std::size_t nx = rec.x.size();
            for (std::size_t k = 0; k < nx; ++k) gsum[L.hazard_coef + k] += s * rec.x[k];
            for (std::size_t k = 0; k < rec.a.size(); ++k)
                if (rec.a[k] != 0) gsum[L.hazard_coef + nx + k] += s;
            if (weibull) {
                gsum[L.hazard_shape] += s;
                gsum[L.hazard_shape + 1] += s_shape;
            }

            const StageRates& r = in.rates;
            if (em.form == EmissionForm::GroupRates) {
                const int g = rec.a[0] != 0 ? 1 : 0;
                gsum[L.emission + g] += adj.none * r.none * (1.0 - r.none);
                gsum[L.emission + 2 + g] += adj.early * r.early * (1.0 - r.early);
            } else {
                const double v = (adj.none + adj.early) * r.none * (1.0 - r.none);
                gsum[L.emission] += v;
                for (std::size_t k = 0; k < rec.a.size(); ++k)
                    if (rec.a[k] != 0) gsum[L.emission + 1 + k] += v;
            }
            if (em.constraint_late_ge_early) {
                const double sl = (r.late - m_con) / (1.0 - m_con);
                gsum[L.late_rate] += adj.late * (1.0 - m_con) * sl * (1.0 - sl);
                gsum[L.size] += adj.late * (1.0 - sl);
            } else {
                gsum[L.late_rate] += adj.late * r.late * (1.0 - r.late);
            }
            gsum[L.progression] += adj.progression * theta.progression * (1.0 - theta.progression);
            if (L.baseline_late >= 0) {
                const double f = theta.baseline_late_fraction;
                gsum[L.baseline_late] += adj.late_fraction * f * (1.0 - f);
            }
        }
        partial_ll[c] = ll;
    });

    LikelihoodAndGradient out;
    out.gradient.assign(L.size, 0.0);
    double mbar = 0.0;
    for (int c = 0; c < n_chunks; ++c) {
        out.log_likelihood += partial_ll[c];
        const double* gsum = partial_grad.data() + static_cast<std::size_t>(c) * width;
        for (int k = 0; k < L.size; ++k) out.gradient[k] += gsum[k];
        mbar += gsum[L.size];
    }
    if (em.constraint_late_ge_early && mbar != 0.0) {
        if (em.form == EmissionForm::GroupRates) {
            const auto [idx, m] = group_rates_argmax(em, L);
            out.gradient[idx] += mbar * m * (1.0 - m);
        } else {
            const auto astar = logistic_argmax(em);
            const double b = stage_rates(em, astar).none;
            out.gradient[L.emission] += mbar * b * (1.0 - b);
            for (std::size_t k = 0; k < astar.size(); ++k)
                if (astar[k] != 0) out.gradient[L.emission + 1 + k] += mbar * b * (1.0 - b);
        }
    }
    for (int k = 0; k < L.size; ++k)
        if (!std::isfinite(out.gradient[k]))
            throw Error("non_finite_gradient", "gradient component " + std::to_string(k) + " (" +
                                                   param_names(theta)[k] + ") is not finite");
    return out;
}

std::vector<double> finite_difference_gradient(const UnconstrainedParams& u, const HmmParams& shape,
                                               const Dataset& data, double step, int threads) {
    std::vector<double> g(u.values.size());
    UnconstrainedParams v = u;
    for (std::size_t k = 0; k < g.size(); ++k) {
        const double orig = v.values[k];
        v.values[k] = orig + step;
        const double fp = dataset_log_likelihood(from_unconstrained(v, shape), data, threads);
        v.values[k] = orig - step;
        const double fm = dataset_log_likelihood(from_unconstrained(v, shape), data, threads);
        v.values[k] = orig;
        g[k] = (fp - fm) / (2.0 * step);
        if (!std::isfinite(g[k]))
            throw Error("non_finite_gradient", "finite-difference component " + std::to_string(k) + " is not finite");
    }
    return g;
}

HmmParams default_init(HazardFamily family, EmissionForm form, int n_x, int n_a, int horizon, bool baseline_late_free,
                       bool constraint_late_ge_early) {
    HmmParams theta;
    theta.hazard.family = family;
    theta.hazard.horizon = horizon;
    theta.hazard.coefficients.assign(n_x + n_a, 0.0);
    theta.hazard.scale = 0.01;
    theta.hazard.shape = 1.0;
    if (family == HazardFamily::PiecewiseBaseline) theta.hazard.baseline.assign(horizon, 0.01);
    theta.emission.form = form;
    theta.emission.rate_s0 = {0.05, 0.05};
    theta.emission.rate_s1 = {0.05, 0.05};
    if (form == EmissionForm::LogisticShared) {
        theta.emission.beta.assign(n_a + 1, 0.0);
        theta.emission.beta[0] = logit(0.05);
    }
    theta.emission.constraint_late_ge_early = constraint_late_ge_early;
    // A constrained late rate must start strictly above the early rates.
    theta.emission.rate_s2 = constraint_late_ge_early ? 0.05 + 0.95 * 0.5 : 0.05;
    theta.progression = 0.1;
    theta.baseline_late_free = baseline_late_free;
    theta.baseline_late_fraction = baseline_late_free ? 0.1 : 0.0;
    return theta;
}

FitResult fit_mle(const Dataset& data, const HmmParams& init, const FitOptions& opts) {
    HmmParams shape = init;
    if (shape.emission.constraint_late_ge_early) {
        shape.emission.constraint_support = data.attribute_support();
        const double m = max_early_rate(shape.emission);
        if (!(shape.emission.rate_s2 > m)) shape.emission.rate_s2 = m + (1.0 - m) * 0.5;
    }
    validate_params(shape);
    check_record_layout(shape, data.records().front());

    LbfgsOptions lo;
    lo.tol_g = opts.tol_g;
    lo.max_iter = opts.max_iter;
    lo.memory = opts.memory;

    auto run_from = [&](const UnconstrainedParams& start) {
        bool first = true;
        GradientObjective obj = [&](std::span<const double> x, std::span<double> grad) -> double {
            UnconstrainedParams u{{x.begin(), x.end()}};
            try {
                if (opts.gradient == GradientMethod::Adjoint) {
                    const auto lg = log_likelihood_gradient(u, shape, data, opts.threads);
                    for (std::size_t k = 0; k < grad.size(); ++k) grad[k] = -lg.gradient[k];
                    first = false;
                    return -lg.log_likelihood;
                }
                const double ll = dataset_log_likelihood(from_unconstrained(u, shape), data, opts.threads);
                const auto g = finite_difference_gradient(u, shape, data, 1e-5, opts.threads);
                for (std::size_t k = 0; k < grad.size(); ++k) grad[k] = -g[k];
                first = false;
                return -ll;
            } catch (const Error& e) {
                if (first) throw;
                // Only reachable inside a line search: treat the trial point as infeasible.
                if (e.code() == "impossible_observation" || e.code() == "non_finite_gradient" ||
                    e.code() == "non_finite_parameter")
                    return std::numeric_limits<double>::infinity();
                throw;
            }
        };
        std::vector<TracePoint> trace;
        IterationCallback cb;
        if (opts.record_trace) cb = [&](int it, double f, double gn) { trace.push_back({it, -f, gn}); };
        auto res = minimize_lbfgs(obj, start.values, lo, cb);
        if (!std::isfinite(res.f)) throw Error("nan_objective", "objective became non-finite");
        FitResult fr;
        fr.theta_hat = from_unconstrained({res.x}, shape);
        fr.log_likelihood = -res.f;
        fr.iterations = res.iterations;
        fr.gradient_norm = res.grad_norm;
        fr.converged = res.converged;
        fr.diagnostic = res.diagnostic;
        fr.trace = std::move(trace);
        return fr;
    };

    const UnconstrainedParams u0 = to_unconstrained(shape);
    FitResult best = run_from(u0);
    std::mt19937_64 rng(opts.restart_seed);
    std::normal_distribution<double> jitter(0.0, opts.restart_jitter);
    for (int k = 0; k < opts.restarts; ++k) {
        UnconstrainedParams u = u0;
        for (double& v : u.values) v += jitter(rng);
        try {
            FitResult fr = run_from(u);
            if (fr.log_likelihood > best.log_likelihood) best = std::move(fr);
        } catch (const Error&) {
            // a jittered start may land on an infeasible point; the unjittered fit stands
        }
    }
    return best;
}

nlohmann::json fit_result_to_json(const FitResult& fit) {
    nlohmann::json j = {{"params", params_to_json(fit.theta_hat)},
                        {"log_likelihood", fit.log_likelihood},
                        {"iterations", fit.iterations},
                        {"gradient_norm", fit.gradient_norm},
                        {"converged", fit.converged},
                        {"diagnostic", fit.diagnostic}};
    return j;
}

FitResult fit_result_from_json(const nlohmann::json& j) {
    FitResult fit;
    if (!j.is_object() || !j.contains("params")) throw Error("invalid_params", "fit document lacks 'params'");
    fit.theta_hat = params_from_json(j.at("params"));
    fit.log_likelihood = j.value("log_likelihood", 0.0);
    fit.iterations = j.value("iterations", 0);
    fit.gradient_norm = j.value("gradient_norm", 0.0);
    fit.converged = j.value("converged", false);
    fit.diagnostic = j.value("diagnostic", std::string{});
    return fit;
}

}  // namespace cfhmm
