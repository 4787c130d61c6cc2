#include "support.hpp"

#include <algorithm>
#include <cmath>

namespace cfhmm::testing {

namespace {

double unif(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int pick(std::mt19937_64& rng, const Vec3& p) {
    const double u = unif(rng, 0.0, 1.0);
    double c = 0.0;
    for (int i = 0; i < 3; ++i) {
        c += p[i];
        if (u < c) return i;
    }
    return p[2] > 0 ? 2 : p[1] > 0 ? 1 : 0;
}

double stage_rate(const StageRates& r, int s) { return s == 0 ? r.none : s == 1 ? r.early : r.late; }

}  // namespace

double relative_error(double a, double b) {
    const double scale = std::max(std::abs(a), std::abs(b));
    return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

InstanceShape random_shape(std::mt19937_64& rng, int max_horizon) {
    InstanceShape s;
    s.family = unif(rng, 0, 1) < 0.5 ? HazardFamily::Weibull : HazardFamily::PiecewiseBaseline;
    s.form = unif(rng, 0, 1) < 0.5 ? EmissionForm::GroupRates : EmissionForm::LogisticShared;
    s.n_x = std::uniform_int_distribution<int>(0, 2)(rng);
    s.n_a = s.form == EmissionForm::GroupRates ? 1 : std::uniform_int_distribution<int>(1, 3)(rng);
    s.horizon = std::uniform_int_distribution<int>(1, max_horizon)(rng);
    s.baseline_late_free = unif(rng, 0, 1) < 0.6;
    s.constraint = unif(rng, 0, 1) < 0.5;
    return s;
}

std::vector<std::vector<int>> all_attribute_vectors(int n_a) {
    std::vector<std::vector<int>> out;
    for (int m = 0; m < (1 << n_a); ++m) {
        std::vector<int> a(n_a);
        for (int k = 0; k < n_a; ++k) a[k] = (m >> k) & 1;
        out.push_back(a);
    }
    return out;
}

HmmParams random_params(std::mt19937_64& rng, const InstanceShape& s) {
    HmmParams th;
    HazardModel& hz = th.hazard;
    hz.family = s.family;
    hz.horizon = s.horizon;
    std::normal_distribution<double> z(0.0, 0.5);
    for (int k = 0; k < s.n_x + s.n_a; ++k) hz.coefficients.push_back(z(rng));
    if (s.family == HazardFamily::Weibull) {
        hz.scale = unif(rng, 0.02, 0.3);
        hz.shape = unif(rng, 0.5, 2.5);
    } else {
        for (int t = 0; t < s.horizon; ++t) hz.baseline.push_back(unif(rng, 0.01, 0.3));
    }
    EmissionModel& em = th.emission;
    em.form = s.form;
    if (s.form == EmissionForm::GroupRates) {
        em.rate_s0 = {unif(rng, 0.02, 0.6), unif(rng, 0.02, 0.6)};
        em.rate_s1 = {unif(rng, 0.02, 0.8), unif(rng, 0.02, 0.8)};
    } else {
        em.beta.push_back(unif(rng, -2.5, 0.5));
        for (int k = 0; k < s.n_a; ++k) em.beta.push_back(z(rng) * 2.0);
    }
    em.constraint_late_ge_early = s.constraint;
    if (s.constraint) {
        em.constraint_support = all_attribute_vectors(s.n_a);
        const double m = max_early_rate(em);
        em.rate_s2 = m + (1.0 - m) * unif(rng, 0.05, 0.95);
    } else {
        em.rate_s2 = unif(rng, 0.02, 0.95);
    }
    th.progression = unif(rng, 0.02, 0.6);
    th.baseline_late_free = s.baseline_late_free;
    th.baseline_late_fraction = s.baseline_late_free ? unif(rng, 0.01, 0.6) : 0.0;
    return th;
}

std::vector<double> random_x(std::mt19937_64& rng, int n_x) {
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<double> x(n_x);
    for (double& v : x) v = z(rng);
    return x;
}

std::vector<int> random_a(std::mt19937_64& rng, int n_a) {
    std::vector<int> a(n_a);
    for (int& v : a) v = unif(rng, 0, 1) < 0.4 ? 1 : 0;
    return a;
}

IndividualRecord sample_record(std::mt19937_64& rng, const HmmParams& theta, const std::string& id,
                               std::vector<double> x, std::vector<int> a) {
    const int T = theta.hazard.horizon;
    const StageRates r = stage_rates(theta.emission, a);
    std::vector<TestResult> res;
    int s = pick(rng, initial_state(theta, x, a));
    for (int t = 1; t <= T; ++t) {
        if (t > 1) s = pick(rng, transition_matrix(theta, x, a, t)[s]);
        if (unif(rng, 0, 1) < stage_rate(r, s)) {
            res.push_back(static_cast<TestResult>(s));
            if (s > 0) break;
        } else {
            res.push_back(TestResult::NoTest);
        }
    }
    return make_record(id, std::move(x), std::move(a), res);
}

std::vector<IndividualRecord> sample_cohort(std::mt19937_64& rng, const HmmParams& theta, int n) {
    const int n_a = attribute_count(theta.emission);
    const int n_x = covariate_count(theta.hazard) - n_a;
    std::vector<IndividualRecord> out;
    for (int i = 0; i < n; ++i) {
        char id[16];
        std::snprintf(id, sizeof id, "r%06d", i);
        out.push_back(sample_record(rng, theta, id, random_x(rng, n_x), random_a(rng, n_a)));
    }
    return out;
}

double path_probability(const HmmParams& theta, const IndividualRecord& rec, const std::vector<int>& path) {
    const EmissionMatrix G = emission_matrix(theta, rec.a);
    double p = initial_state(theta, rec.x, rec.a)[path[0]];
    for (int t = 1; t <= rec.follow_up(); ++t) {
        if (t > 1) p *= transition_matrix(theta, rec.x, rec.a, t)[path[t - 2]][path[t - 1]];
        p *= G[path[t - 1]][static_cast<int>(rec.results[t - 1])];
    }
    return p;
}

namespace {

template <class Fn>
void for_each_path(int len, Fn&& fn) {
    std::vector<int> path(len, 0);
    int total = 1;
    for (int t = 0; t < len; ++t) total *= 3;
    for (int code = 0; code < total; ++code) {
        int c = code;
        for (int t = 0; t < len; ++t) {
            path[t] = c % 3;
            c /= 3;
        }
        fn(path);
    }
}

}  // namespace

double brute_force_log_likelihood(const HmmParams& theta, const IndividualRecord& rec) {
    double total = 0.0;
    for_each_path(rec.follow_up(), [&](const std::vector<int>& p) { total += path_probability(theta, rec, p); });
    return std::log(total);
}

std::vector<Vec3> brute_force_posterior(const HmmParams& theta, const IndividualRecord& rec) {
    const int tn = rec.follow_up();
    std::vector<Vec3> rows(tn, Vec3{0, 0, 0});
    double total = 0.0;
    for_each_path(tn, [&](const std::vector<int>& p) {
        const double w = path_probability(theta, rec, p);
        total += w;
        for (int t = 0; t < tn; ++t) rows[t][p[t]] += w;
    });
    for (auto& r : rows)
        for (double& v : r) v /= total;
    return rows;
}

double brute_force_p_cf(const HmmParams& theta, const IndividualRecord& rec, const StageRates& cf, int horizon) {
    const int tn = rec.follow_up();
    double total = 0.0, diag = 0.0;
    for_each_path(horizon, [&](const std::vector<int>& p) {
        // factual evidence on the first T_n steps, pure transitions afterwards
        double w = path_probability(theta, rec, std::vector<int>(p.begin(), p.begin() + tn));
        for (int t = tn + 1; t <= horizon && w > 0; ++t) w *= transition_matrix(theta, rec.x, rec.a, t)[p[t - 2]][p[t - 1]];
        if (w == 0.0) return;
        total += w;
        // every counterfactual positive/not-positive sequence; diagnosed if any positive
        double p_diag = 0.0;
        for (int m = 1; m < (1 << horizon); ++m) {
            double q = 1.0;
            for (int t = 0; t < horizon; ++t) {
                const double d = stage_rate(cf, p[t]) * (p[t] > 0 ? 1.0 : 0.0);
                q *= (m >> t) & 1 ? d : 1.0 - d;
            }
            p_diag += q;
        }
        diag += w * p_diag;
    });
    return diag / total;
}

}  // namespace cfhmm::testing
