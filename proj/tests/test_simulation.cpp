#include <cmath>

#include "cfhmm/error.hpp"
#include "cfhmm/simulation.hpp"
#include "doctest.h"

using namespace cfhmm;

namespace {

using R = TestResult;

bool same(const SimulatedCohort& a, const SimulatedCohort& b) {
    if (a.records.size() != b.records.size()) return false;
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        const auto &x = a.records[i], &y = b.records[i];
        if (x.id != y.id || x.x != y.x || x.a != y.a || x.results != y.results) return false;
        if (a.truth[i].stages != b.truth[i].stages || a.truth[i].d_cf != b.truth[i].d_cf) return false;
    }
    return true;
}

}  // namespace

TEST_SUITE("simulation") {
    TEST_CASE("generation is deterministic and independent of threads") {
        ScenarioConfig cfg = scenario_preset(1);
        cfg.n = 3000;
        cfg.seed = 7;
        const SimulatedCohort a = simulate_cohort(cfg, 1);
        CHECK(same(a, simulate_cohort(cfg, 1)));
        CHECK(same(a, simulate_cohort(cfg, 4)));
        cfg.seed = 8;
        CHECK_FALSE(same(a, simulate_cohort(cfg, 1)));
    }

    TEST_CASE("records are sorted, censored at diagnosis and stage paths never regress") {
        ScenarioConfig cfg = scenario_preset(2);
        cfg.n = 2000;
        const SimulatedCohort c = simulate_cohort(cfg);
        for (std::size_t i = 0; i < c.records.size(); ++i) {
            const auto& r = c.records[i];
            if (i > 0) CHECK(c.records[i - 1].id < r.id);
            CHECK_NOTHROW(validate_record(r, cfg.total_horizon));
            const auto& st = c.truth[i].stages;
            for (std::size_t t = 1; t < st.size(); ++t) CHECK(st[t] >= st[t - 1]);
            for (int t = 0; t < r.follow_up(); ++t) {
                const int res = static_cast<int>(r.results[t]);
                // positives always reveal the true stage; negatives may hide disease here
                if (res == 1 || res == 2) CHECK(res == st[t]);
            }
        }
    }

    TEST_CASE("zero hazard gives no disease and no positives") {
        ScenarioConfig cfg = scenario_preset(1);
        cfg.n = 1000;
        cfg.truth.hazard.scale = 0.0;
        const SimulatedCohort c = simulate_cohort(cfg);
        for (std::size_t i = 0; i < c.records.size(); ++i) {
            CHECK_FALSE(c.records[i].diagnosed());
            for (auto s : c.truth[i].stages) CHECK(s == 0);
        }
    }

    TEST_CASE("attribute prevalence and early-stage testing frequency") {
        ScenarioConfig cfg = scenario_preset(1);
        cfg.n = 50000;
        cfg.seed = 3;
        const SimulatedCohort c = simulate_cohort(cfg, 2);
        double a1 = 0, tested = 0, exposure = 0;
        for (std::size_t i = 0; i < c.records.size(); ++i) {
            const auto& r = c.records[i];
            a1 += r.a[0];
            if (r.a[0] != 0) continue;
            for (int t = 0; t < r.follow_up(); ++t)
                if (c.truth[i].stages[t] == 1) {
                    exposure += 1;
                    tested += r.results[t] == R::EarlyPositive;
                }
        }
        const double pa = a1 / cfg.n;
        CHECK(std::abs(pa - 0.2) < 4.0 * std::sqrt(0.2 * 0.8 / cfg.n));
        REQUIRE(exposure > 500);
        const double rate = tested / exposure;
        CHECK(std::abs(rate - 0.1) < 4.0 * std::sqrt(0.1 * 0.9 / exposure));
    }

    TEST_CASE("faster progression in the underserved group under Scenario 3") {
        ScenarioConfig cfg = scenario_preset(3);
        cfg.n = 50000;
        const SimulatedCohort c = simulate_cohort(cfg, 2);
        double trans[2] = {0, 0}, at_risk[2] = {0, 0};
        for (std::size_t i = 0; i < c.records.size(); ++i) {
            const int g = c.records[i].a[0];
            const auto& st = c.truth[i].stages;
            for (std::size_t t = 1; t < st.size(); ++t)
                if (st[t - 1] == 1) {
                    at_risk[g] += 1;
                    trans[g] += st[t] == 2;
                }
        }
        const double want[2] = {0.1, 0.13};
        for (int g = 0; g < 2; ++g) {
            const double f = trans[g] / at_risk[g];
            CHECK(std::abs(f - want[g]) < 3.0 * std::sqrt(want[g] * (1 - want[g]) / at_risk[g]));
        }
    }

    TEST_CASE("the counterfactual world diagnoses more of the underserved group") {
        int wins = 0;
        for (int s = 0; s < 10; ++s) {
            ScenarioConfig cfg = scenario_preset(1);
            cfg.n = 20000;
            cfg.seed = 1000 + s;
            const SimulatedCohort f = simulate_cohort(cfg);
            cfg.counterfactual_world = true;
            const SimulatedCohort w = simulate_cohort(cfg);
            double df = 0, dw = 0;
            for (std::size_t i = 0; i < f.records.size(); ++i) {
                if (f.records[i].a[0] != 1) continue;
                df += f.records[i].diagnosed();
                dw += w.records[i].diagnosed();
            }
            wins += dw > df;
        }
        CHECK(wins == 10);
    }

    TEST_CASE("rebaselining drops early diagnoses and keeps latent late disease") {
        SimulatedCohort c;
        c.horizon = 20;
        std::vector<R> diag(20, R::NoTest);
        diag[6] = R::EarlyPositive;
        c.records.push_back(make_record("a", {0.0, 0.0}, {0}, diag));
        IndividualTruth ta;
        ta.stages.assign(20, 1);
        c.truth.push_back(ta);
        c.records.push_back(make_record("b", {0.0, 0.0}, {1}, std::vector<R>(20, R::NoTest)));
        IndividualTruth tb;
        tb.stages.assign(20, 0);
        for (int t = 5; t < 20; ++t) tb.stages[t] = t >= 9 ? 2 : 1;  // S=2 at original t=10
        c.truth.push_back(tb);

        const SimulatedCohort r = rebaseline_open_cohort(c, 10);
        REQUIRE(r.records.size() == 1);
        CHECK(r.records[0].id == "b");
        CHECK(r.records[0].follow_up() == 10);
        CHECK(r.truth[0].baseline_late);
        CHECK(r.horizon == 10);
    }

    TEST_CASE("Scenario 4 output has ten timepoints and a baseline disease gap") {
        double diseased[2] = {0, 0}, count[2] = {0, 0};
        for (int s = 0; s < 5; ++s) {
            ScenarioConfig cfg = scenario_preset(4);
            cfg.n = 20000;
            cfg.seed = 40 + s;
            const SimulatedCohort c = generate(cfg);
            CHECK(c.horizon == 10);
            for (std::size_t i = 0; i < c.records.size(); ++i) {
                const auto& r = c.records[i];
                if (!r.diagnosed()) CHECK(r.follow_up() == 10);
                const int g = r.a[0];
                count[g] += 1;
                diseased[g] += c.truth[i].stages[0] > 0;
            }
        }
        CHECK(diseased[1] / count[1] > diseased[0] / count[0]);
    }

    TEST_CASE("invalid configurations are rejected") {
        ScenarioConfig cfg = scenario_preset(1);
        cfg.n = 0;
        CHECK_THROWS_AS(simulate_cohort(cfg), Error);
        CHECK_THROWS_AS(scenario_preset(5), Error);
        ScenarioConfig bad = scenario_preset(4);
        bad.truth.hazard.horizon = 10;
        CHECK_THROWS_AS(validate_config(bad), Error);
    }
}
