#include "cfhmm/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "cfhmm/error.hpp"
#include "cfhmm/seeding.hpp"
#include "parallel.hpp"

namespace cfhmm {

namespace {

bool prob(double p) { return p >= 0.0 && p <= 1.0; }

std::string make_id(int i, int n) {
    int width = 1;
    for (int m = std::max(n - 1, 1); m >= 10; m /= 10) ++width;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%0*d", width, i);
    return buf;
}

// Stream offsets within one individual's seed.
constexpr std::uint64_t kCovariateStream = 1;
constexpr std::uint64_t kStageStream = 2;
constexpr std::uint64_t kFactualTestStream = 3;
constexpr std::uint64_t kCounterfactualTestStream = 4;

struct Draw {
    IndividualRecord rec;
    IndividualTruth truth;
};

TestResult draw_test(std::mt19937_64& rng, int stage, const StageRates& r, const ScenarioConfig& cfg) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double rate = stage == 0 ? r.none : stage == 1 ? r.early : r.late;
    if (u(rng) >= rate) return TestResult::NoTest;
    if (stage == 0) return TestResult::Negative;
    const double sens = stage == 1 ? cfg.sensitivity_early : cfg.sensitivity_late;
    if (sens < 1.0 && u(rng) >= sens) return TestResult::Negative;
    return stage == 1 ? TestResult::EarlyPositive : TestResult::LatePositive;
}

Draw simulate_one(const ScenarioConfig& cfg, int i) {
    const std::uint64_t s = derive_seed(cfg.seed, static_cast<std::uint64_t>(i));
    std::mt19937_64 cov_rng(derive_seed(s, kCovariateStream));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> z(0.0, 1.0);

    Draw d;
    const int na = static_cast<int>(cfg.attribute_prob.size());
    std::vector<int> a(na);
    for (int k = 0; k < na; ++k) a[k] = u(cov_rng) < cfg.attribute_prob[k] ? 1 : 0;
    const CovariateLaw& c = cfg.covariates;
    const double x1 = a[0] ? c.x1_mean_a1 + c.x1_sd_a1 * z(cov_rng) : c.x1_mean_a0 + c.x1_sd_a0 * z(cov_rng);
    const double x2 = c.x2_mean + c.x2_sd * z(cov_rng);
    std::vector<double> x{x1, x2};

    // latent path over all generated timepoints
    const int T = cfg.total_horizon;
    std::mt19937_64 stage_rng(derive_seed(s, kStageStream));
    const double progression = a[0] ? cfg.progression_a1 : cfg.truth.progression;
    std::vector<std::uint8_t> path(T);
    int stage = 0;
    for (int t = 1; t <= T; ++t) {
        const double h = hazard(cfg.truth, x, a, t);
        if (t == 1) {
            if (u(stage_rng) < h) stage = u(stage_rng) < cfg.truth.baseline_late_fraction ? 2 : 1;
        } else if (stage == 0) {
            if (u(stage_rng) < h) stage = 1;
        } else if (stage == 1) {
            if (u(stage_rng) < progression) stage = 2;
        }
        path[t - 1] = static_cast<std::uint8_t>(stage);
    }

    // the counterfactual regime starts at the output baseline; earlier tests keep the
    // individual's own rates, so both worlds share the same pre-baseline exclusions
    const StageRates own = stage_rates(cfg.truth.emission, a);
    const StageRates reference = stage_rates(cfg.truth.emission, cfg.reference);
    std::mt19937_64 test_rng(derive_seed(s, kFactualTestStream));
    std::mt19937_64 cf_rng(derive_seed(s, kCounterfactualTestStream));
    std::vector<TestResult> results(T);
    const int window_start = T - cfg.horizon;  // d_cf covers the output window only
    for (int t = 0; t < T; ++t) {
        const bool cf_regime = cfg.counterfactual_world && t >= window_start;
        results[t] = draw_test(test_rng, path[t], cf_regime ? reference : own, cfg);
        const bool cf_pos = is_positive(draw_test(cf_rng, path[t], reference, cfg));
        if (t >= window_start && cf_pos) d.truth.d_cf = 1;
    }
    d.rec = make_record(make_id(i, cfg.n), std::move(x), std::move(a), results);
    // latent truth is kept over the whole generated window so rebaselining can slice it
    d.truth.stages = std::move(path);
    d.truth.baseline_late = d.truth.stages[0] == 2;
    return d;
}

}  // namespace

void validate_config(const ScenarioConfig& cfg) {
    auto fail = [](const std::string& m) { throw Error("invalid_config", m); };
    if (cfg.scenario < 0 || cfg.scenario > 4) fail("scenario must be 1..4 (or 0 for custom)");
    if (cfg.n < 1) fail("n must be >= 1");
    if (cfg.horizon < 1 || cfg.total_horizon < cfg.horizon)
        fail("need 1 <= horizon <= total_horizon");
    if (cfg.truth.hazard.horizon != cfg.total_horizon) fail("truth hazard horizon must equal total_horizon");
    if (cfg.attribute_prob.empty()) fail("attribute_prob must have at least one entry");
    for (double p : cfg.attribute_prob)
        if (!prob(p)) fail("attribute probabilities must lie in [0, 1]");
    if (static_cast<int>(cfg.attribute_prob.size()) != attribute_count(cfg.truth.emission))
        fail("attribute_prob length does not match the emission model");
    if (cfg.reference.size() != cfg.attribute_prob.size()) fail("reference length does not match attributes");
    if (covariate_count(cfg.truth.hazard) != 2 + static_cast<int>(cfg.attribute_prob.size()))
        fail("hazard coefficients must cover (x1, x2, a...)");
    const HazardModel& hz = cfg.truth.hazard;
    if (hz.family == HazardFamily::Weibull && (!(hz.scale >= 0.0) || !(hz.shape > 0.0)))
        fail("hazard scale must be >= 0 and shape > 0");
    if (hz.family == HazardFamily::PiecewiseBaseline &&
        (static_cast<int>(hz.baseline.size()) != hz.horizon ||
         std::any_of(hz.baseline.begin(), hz.baseline.end(), [](double b) { return !(b >= 0.0); })))
        fail("baseline hazards must be >= 0, one per generated timepoint");
    const EmissionModel& em = cfg.truth.emission;
    for (double r : {em.rate_s0[0], em.rate_s0[1], em.rate_s1[0], em.rate_s1[1], em.rate_s2})
        if (!prob(r)) fail("testing rates must lie in [0, 1]");
    for (double p : {cfg.truth.progression, cfg.progression_a1, cfg.truth.baseline_late_fraction,
                     cfg.sensitivity_early, cfg.sensitivity_late})
        if (!prob(p)) fail("progression, baseline late fraction and sensitivities must lie in [0, 1]");
    if (cfg.covariates.x1_sd_a0 < 0 || cfg.covariates.x1_sd_a1 < 0 || cfg.covariates.x2_sd < 0)
        fail("covariate standard deviations must be >= 0");
}

ScenarioConfig scenario_preset(int scenario) {
    if (scenario < 1 || scenario > 4) throw Error("invalid_config", "scenario must be 1..4");
    ScenarioConfig cfg;
    cfg.scenario = scenario;
    cfg.total_horizon = scenario == 4 ? 20 : 10;
    HmmParams& th = cfg.truth;
    th.hazard.family = HazardFamily::Weibull;
    th.hazard.coefficients = {0.5, -0.25, 0.25};
    th.hazard.scale = 0.005;
    th.hazard.shape = 1.5;
    th.hazard.horizon = cfg.total_horizon;
    th.emission.form = EmissionForm::GroupRates;
    th.emission.rate_s0 = {0.025, 0.01};
    th.emission.rate_s1 = {0.1, 0.05};
    th.emission.rate_s2 = 0.3;
    th.progression = 0.1;
    th.baseline_late_fraction = 0.0;
    th.baseline_late_free = scenario == 4;
    cfg.progression_a1 = scenario == 3 ? 0.13 : 0.1;
    if (scenario == 2) {
        cfg.sensitivity_early = 0.90;
        cfg.sensitivity_late = 0.95;
    }
    return cfg;
}

ScenarioConfig multi_attribute_preset() {
    ScenarioConfig cfg = scenario_preset(1);
    cfg.scenario = 0;
    cfg.n = 20000;
    cfg.attribute_prob = {0.2, 0.3, 0.25, 0.4, 0.15, 0.35, 0.5};
    cfg.reference.assign(7, 0);
    HmmParams& th = cfg.truth;
    th.hazard.coefficients = {0.5, -0.25, 0.25, 0.2, 0.0, 0.15, -0.1, 0.1, 0.0};
    th.emission.form = EmissionForm::LogisticShared;
    th.emission.beta = {-2.0, -0.7, 0.4, -0.5, 0.3, -0.4, 0.2, -0.3};
    th.emission.rate_s2 = 0.3;
    th.emission.constraint_late_ge_early = true;
    return cfg;
}

SimulatedCohort simulate_cohort(const ScenarioConfig& cfg, int threads) {
    validate_config(cfg);
    std::vector<Draw> draws(cfg.n);
    constexpr int chunk = 1024;
    detail::parallel_chunks((cfg.n + chunk - 1) / chunk, threads, [&](int c) {
        for (int i = c * chunk; i < std::min(cfg.n, (c + 1) * chunk); ++i) draws[i] = simulate_one(cfg, i);
    });
    SimulatedCohort out;
    out.horizon = cfg.total_horizon;
    out.records.reserve(cfg.n);
    out.truth.reserve(cfg.n);
    for (auto& d : draws) {
        out.records.push_back(std::move(d.rec));
        out.truth.push_back(std::move(d.truth));
    }
    return out;
}

SimulatedCohort rebaseline_open_cohort(const SimulatedCohort& cohort, int baseline) {
    if (baseline < 0 || baseline >= cohort.horizon)
        throw Error("invalid_config", "rebaseline: baseline must lie in [0, horizon)");
    SimulatedCohort out;
    out.horizon = cohort.horizon - baseline;
    for (std::size_t i = 0; i < cohort.records.size(); ++i) {
        const IndividualRecord& rec = cohort.records[i];
        if (rec.diagnosed() && rec.follow_up() <= baseline) continue;
        IndividualRecord r{rec.id, rec.x, rec.a,
                           std::vector<TestResult>(rec.results.begin() + baseline, rec.results.end())};
        IndividualTruth tr;
        const auto& st = cohort.truth[i].stages;
        tr.stages.assign(st.begin() + baseline, st.end());
        tr.baseline_late = tr.stages.front() == 2;
        tr.d_cf = cohort.truth[i].d_cf;
        out.records.push_back(std::move(r));
        out.truth.push_back(std::move(tr));
    }
    return out;
}

SimulatedCohort generate(const ScenarioConfig& cfg, int threads) {
    SimulatedCohort c = simulate_cohort(cfg, threads);
    if (cfg.total_horizon > cfg.horizon) return rebaseline_open_cohort(c, cfg.total_horizon - cfg.horizon);
    return c;
}

}  // namespace cfhmm
