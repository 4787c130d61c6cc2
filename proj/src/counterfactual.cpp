#include "cfhmm/counterfactual.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "cfhmm/error.hpp"
#include "cfhmm/log.hpp"
#include "cfhmm/seeding.hpp"
#include "parallel.hpp"

namespace cfhmm {

PosteriorTrajectory smoothed_stage_posterior(const HmmParams& theta, const IndividualRecord& rec) {
    return smoothed_stage_posterior(theta, rec, forward_pass(theta, rec));
}

PosteriorTrajectory smoothed_stage_posterior(const HmmParams& theta, const IndividualRecord& rec,
                                             const ForwardTrace& tr) {
    const int tn = rec.follow_up();
    PosteriorTrajectory post;
    post.rows.resize(tn);
    // At T_n the filtered distribution already conditions on every result; it is one-hot
    // when a test was observed.
    post.rows[tn - 1] = tr.filtered[tn - 1];
    for (int t = tn - 1; t >= 1; --t) {
        // rows are 1-based timepoints t (index t-1) and t+1 (index t)
        const Matrix3 Q = transition_matrix(tr.hazards[t], theta.progression);
        const Vec3& filt = tr.filtered[t - 1];
        const Vec3& pred_next = tr.states[t].stage_given_past;
        const Vec3& next = post.rows[t];
        Vec3 row{0, 0, 0};
        for (int j = 0; j < kNumStages; ++j) {
            if (filt[j] == 0.0) continue;
            double s = 0.0;
            for (int i = 0; i < kNumStages; ++i)
                if (pred_next[i] > 0.0) s += Q[j][i] * next[i] / pred_next[i];
            row[j] = filt[j] * s;
        }
        post.rows[t - 1] = row;
    }
    return post;
}

namespace {

CounterfactualResult counterfactual_impl(const HmmParams& theta, const IndividualRecord& rec,
                                         const StageRates& cf, int horizon) {
    const int tn = rec.follow_up();
    if (horizon < tn)
        throw Error("invalid_horizon", "record '" + rec.id + "': horizon " + std::to_string(horizon) +
                                           " is shorter than follow-up " + std::to_string(tn));
    if (horizon > theta.hazard.horizon)
        throw Error("invalid_horizon", "horizon " + std::to_string(horizon) + " exceeds the hazard horizon " +
                                           std::to_string(theta.hazard.horizon));
    const ForwardTrace tr = forward_pass(theta, rec);
    const PosteriorTrajectory post = smoothed_stage_posterior(theta, rec, tr);
    const Vec3 diag{0.0, cf.early, cf.late};  // P(counterfactual positive | stage)

    CounterfactualResult res;
    res.hazard.resize(horizon);
    res.survivor.resize(horizon);
    Vec3 cond = post.rows[0];  // P(S_t | history, no counterfactual diagnosis before t)
    double surv = 1.0, p = 0.0;
    for (int t = 1; t <= horizon; ++t) {
        double hz = 0.0;
        for (int i = 0; i < kNumStages; ++i) hz += cond[i] * diag[i];
        res.hazard[t - 1] = hz;
        p += hz * surv;
        surv *= 1.0 - hz;
        res.survivor[t - 1] = surv;
        if (t == horizon) break;

        Vec3 keep;
        for (int i = 0; i < kNumStages; ++i) keep[i] = cond[i] * (1.0 - diag[i]);
        Vec3 next{0, 0, 0};
        if (t < tn) {
            // stage transition given the whole factual history
            const Matrix3 Q = transition_matrix(tr.hazards[t], theta.progression);
            const Vec3& filt = tr.filtered[t - 1];
            const Vec3& pred_next = tr.states[t].stage_given_past;
            const Vec3& cur = post.rows[t - 1];
            const Vec3& nxt = post.rows[t];
            for (int i = 0; i < kNumStages; ++i) {
                if (keep[i] == 0.0 || cur[i] == 0.0) continue;
                for (int j = 0; j < kNumStages; ++j) {
                    if (pred_next[j] == 0.0 || nxt[j] == 0.0) continue;
                    next[j] += keep[i] * Q[i][j] * filt[i] / pred_next[j] * nxt[j] / cur[i];
                }
            }
        } else {
            const Matrix3 Q = transition_matrix(theta, rec.x, rec.a, t + 1);
            for (int i = 0; i < kNumStages; ++i)
                for (int j = 0; j < kNumStages; ++j) next[j] += keep[i] * Q[i][j];
        }
        const double norm = next[0] + next[1] + next[2];
        if (norm > 0.0)
            for (int j = 0; j < kNumStages; ++j) cond[j] = next[j] / norm;
    }
    res.p_cf = p;
    return res;
}

}  // namespace

CounterfactualResult counterfactual_diagnosis_prob(const HmmParams& theta, const IndividualRecord& rec,
                                                   const StageRates& reference_rates, int horizon) {
    return counterfactual_impl(theta, rec, reference_rates, horizon);
}

CounterfactualResult counterfactual_diagnosis_prob(const HmmParams& theta, const IndividualRecord& rec,
                                                   std::span<const int> reference, int horizon) {
    if (static_cast<int>(reference.size()) != attribute_count(theta.emission))
        throw DimensionError("reference attribute vector has length " + std::to_string(reference.size()) +
                             ", emission model expects " + std::to_string(attribute_count(theta.emission)));
    return counterfactual_impl(theta, rec, stage_rates(theta.emission, reference), horizon);
}

double recalibration_factor(double mean_p_cf, double observed_incidence, double undiagnosed_mass) {
    if (!(undiagnosed_mass > 1e-12))
        throw Error("no_undiagnosed_mass", "recalibration: undiagnosed counterfactual probability mass is zero");
    return (mean_p_cf - observed_incidence) / undiagnosed_mass;
}

Recalibration recalibration_factor(std::span<const double> p_cf, std::span<const int> diagnosed,
                                   std::span<const char> in_group) {
    if (p_cf.size() != diagnosed.size() || p_cf.size() != in_group.size())
        throw DimensionError("recalibration: p_cf, diagnosed and group selector differ in length");
    Recalibration rc;
    double sum_p = 0.0, sum_p0 = 0.0, n_diag = 0.0;
    for (std::size_t i = 0; i < p_cf.size(); ++i) {
        if (!in_group[i]) continue;
        ++rc.group_size;
        sum_p += p_cf[i];
        if (diagnosed[i]) n_diag += 1.0;
        else sum_p0 += p_cf[i];
    }
    if (rc.group_size == 0) throw Error("empty_group", "recalibration: group has no members");
    const double n = static_cast<double>(rc.group_size);
    rc.mean_p_cf = sum_p / n;
    rc.observed_incidence = n_diag / n;
    rc.undiagnosed_mass = sum_p0 / n;
    rc.raw_factor = recalibration_factor(rc.mean_p_cf, rc.observed_incidence, rc.undiagnosed_mass);
    rc.factor = std::clamp(rc.raw_factor, 0.0, 1.0);
    rc.clamped = rc.factor != rc.raw_factor;
    if (rc.clamped)
        log::warn("recalibration factor " + std::to_string(rc.raw_factor) +
                  " outside [0, 1] (observed incidence exceeds estimated counterfactual incidence); clamped");
    return rc;
}

std::vector<double> counterfactual_probabilities(const HmmParams& theta, const Dataset& data,
                                                 std::span<const int> reference, int threads) {
    const auto recs = data.records();
    const int n = static_cast<int>(recs.size());
    std::vector<double> p(n);
    constexpr int chunk = 512;
    detail::parallel_chunks((n + chunk - 1) / chunk, threads, [&](int c) {
        for (int i = c * chunk; i < std::min(n, (c + 1) * chunk); ++i)
            p[i] = counterfactual_diagnosis_prob(theta, recs[i], reference, data.horizon()).p_cf;
    });
    return p;
}

ImputationResult impute_counterfactual_outcomes(const HmmParams& theta, const Dataset& data,
                                                std::span<const int> reference, std::uint64_t seed,
                                                const ImputationOptions& opts) {
    const auto recs = data.records();
    const std::size_t n = recs.size();
    const std::vector<int> ref(reference.begin(), reference.end());
    const std::vector<double> p = counterfactual_probabilities(theta, data, reference, opts.threads);
    std::vector<int> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = recs[i].diagnosed() ? 1 : 0;

    ImputationResult out;
    out.rows.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.rows[i] = {recs[i].id, p[i], 1.0, d[i], d[i], false};

    // group index per record; -1 = reference regime (kept as observed)
    std::vector<int> group(n, -1);
    std::map<std::vector<int>, int> keys;
    for (std::size_t i = 0; i < n; ++i) {
        if (recs[i].a == ref) continue;
        const std::vector<int> key = opts.per_stratum ? recs[i].a : std::vector<int>{};
        auto [it, inserted] = keys.emplace(key, static_cast<int>(keys.size()));
        group[i] = it->second;
    }
    out.group_keys.resize(keys.size());
    for (const auto& [key, idx] : keys) out.group_keys[idx] = key;
    out.groups.resize(keys.size());
    std::vector<char> sel(n);
    for (std::size_t g = 0; g < keys.size(); ++g) {
        bool any_undiagnosed = false;
        for (std::size_t i = 0; i < n; ++i) {
            sel[i] = group[i] == static_cast<int>(g);
            any_undiagnosed = any_undiagnosed || (sel[i] && d[i] == 0);
        }
        if (any_undiagnosed) {
            out.groups[g] = recalibration_factor(p, d, sel);
        } else {
            // nothing to re-impute; every member keeps their diagnosis
            Recalibration& rc = out.groups[g];
            for (std::size_t i = 0; i < n; ++i)
                if (sel[i]) {
                    ++rc.group_size;
                    rc.mean_p_cf += p[i];
                }
            rc.mean_p_cf /= static_cast<double>(rc.group_size);
            rc.observed_incidence = 1.0;
        }
    }

    for (std::size_t i = 0; i < n; ++i) {
        if (group[i] < 0 || d[i] == 1) continue;
        const double factor = out.groups[group[i]].factor;
        double prob = factor * p[i];
        if (prob > 1.0) {
            prob = 1.0;
            ++out.clamped_probabilities;
        }
        std::mt19937_64 rng(derive_seed(seed, hash_id(recs[i].id)));
        const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        auto& row = out.rows[i];
        row.factor_applied = factor;
        row.reimputed = true;
        row.d_cf = u < prob ? 1 : 0;
    }
    if (out.clamped_probabilities > 0)
        log::warn(std::to_string(out.clamped_probabilities) + " recalibrated probabilities exceeded 1 and were clamped");
    return out;
}

}  // namespace cfhmm
