#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "cfhmm/error.hpp"
#include "cfhmm/model.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cfhmm;
using namespace cfhmm::testing;

namespace {

HmmParams scenario1_truth() {
    HmmParams th;
    th.hazard.coefficients = {0.5, -0.25, 0.25};
    th.hazard.scale = 0.005;
    th.hazard.shape = 1.5;
    th.hazard.horizon = 10;
    th.emission.rate_s0 = {0.025, 0.01};
    th.emission.rate_s1 = {0.1, 0.05};
    th.emission.rate_s2 = 0.3;
    th.progression = 0.1;
    th.baseline_late_fraction = 0.0;
    th.baseline_late_free = false;
    return th;
}

}  // namespace

TEST_SUITE("model") {
    TEST_CASE("Weibull hazard by direct substitution") {
        const HmmParams th = scenario1_truth();
        const std::vector<double> x0{0.0, 0.0}, x1{1.0, 0.5};
        const std::vector<int> a0{0}, a1{1};
        CHECK(hazard(th, x0, a0, 10) == doctest::Approx(0.0075).epsilon(1e-14));
        CHECK(hazard(th, x1, a1, 10) == doctest::Approx(0.0075 * std::exp(0.5 - 0.125 + 0.25)).epsilon(1e-14));
    }

    TEST_CASE("hazard is clamped below one") {
        HmmParams th = scenario1_truth();
        th.hazard.scale = 50.0;
        const std::vector<double> x{3.0, 0.0};
        const std::vector<int> a{1};
        CHECK(hazard(th, x, a, 10) == 1.0 - kHazardEpsilon);
    }

    TEST_CASE("hazard rejects mismatched dimensions") {
        const HmmParams th = scenario1_truth();
        const std::vector<double> x{0.0};
        const std::vector<int> a{0};
        CHECK_THROWS_AS(hazard(th, x, a, 1), DimensionError);
    }

    TEST_CASE("transition matrix pattern") {
        const Matrix3 Q = transition_matrix(0.3, 0.1);
        const Matrix3 want{{{0.7, 0.3, 0.0}, {0.0, 0.9, 0.1}, {0.0, 0.0, 1.0}}};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) CHECK(Q[i][j] == doctest::Approx(want[i][j]).epsilon(1e-15));
        const Matrix3 Z = transition_matrix(0.0, 0.1);
        CHECK(Z[0][0] == 1.0);
        CHECK(Z[0][1] == 0.0);
        CHECK(Z[0][2] == 0.0);
    }

    TEST_CASE("emission matrix under group rates, reference group") {
        const HmmParams th = scenario1_truth();
        const std::vector<int> a{0};
        const EmissionMatrix G = emission_matrix(th, a);
        const EmissionMatrix want{{{0.025, 0, 0, 0.975}, {0, 0.1, 0, 0.9}, {0, 0, 0.3, 0.7}}};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 4; ++j) CHECK(G[i][j] == doctest::Approx(want[i][j]).epsilon(1e-15));
    }

    TEST_CASE("logistic shared emission at a zero linear predictor") {
        HmmParams th = scenario1_truth();
        th.emission.form = EmissionForm::LogisticShared;
        th.emission.beta = {0.0, 0.0, 0.0};
        const std::vector<int> a{1, 0};
        const StageRates r = stage_rates(th.emission, a);
        CHECK(r.none == 0.5);
        CHECK(r.early == 0.5);
    }

    TEST_CASE("initial state distribution") {
        const Vec3 p = initial_state(0.0075, 0.0);
        CHECK(p[0] == doctest::Approx(0.9925));
        CHECK(p[1] == doctest::Approx(0.0075));
        CHECK(p[2] == 0.0);
        const Vec3 q = initial_state(0.02, 0.289);
        CHECK(q[0] == doctest::Approx(0.98));
        CHECK(q[1] == doctest::Approx(0.01422).epsilon(1e-12));
        CHECK(q[2] == doctest::Approx(0.00578).epsilon(1e-12));
    }

    TEST_CASE("rows sum to one for random parameters") {
        std::mt19937_64 rng(11);
        for (int i = 0; i < 100; ++i) {
            const InstanceShape sh = random_shape(rng, 10);
            const HmmParams th = random_params(rng, sh);
            const auto x = random_x(rng, sh.n_x);
            const auto a = random_a(rng, sh.n_a);
            for (int t = 1; t <= sh.horizon; ++t)
                for (const Vec3& row : transition_matrix(th, x, a, t))
                    CHECK(row[0] + row[1] + row[2] == doctest::Approx(1.0).epsilon(1e-14));
            for (const Vec4& row : emission_matrix(th, a))
                CHECK(row[0] + row[1] + row[2] + row[3] == doctest::Approx(1.0).epsilon(1e-14));
            const Vec3 p = initial_state(th, x, a);
            CHECK(p[0] + p[1] + p[2] == doctest::Approx(1.0).epsilon(1e-14));
        }
    }

    TEST_CASE("unconstrained transform examples") {
        HmmParams th = scenario1_truth();
        th.emission.rate_s0 = {0.5, 0.5};
        const ParamLayout L = param_layout(th);
        const UnconstrainedParams u = to_unconstrained(th);
        CHECK(u.values[L.emission] == doctest::Approx(0.0).epsilon(1e-15));
        CHECK(u.values[L.hazard_shape] == doctest::Approx(std::log(0.005)));
        CHECK(static_cast<int>(u.values.size()) == L.size);
        CHECK(param_names(th).size() == u.values.size());
    }

    TEST_CASE("fixed baseline late fraction is not a free parameter") {
        HmmParams th = scenario1_truth();
        CHECK(param_layout(th).baseline_late == -1);
        th.baseline_late_free = true;
        th.baseline_late_fraction = 0.2;
        CHECK(param_layout(th).baseline_late >= 0);
    }

    TEST_CASE("parameter JSON round trip") {
        std::mt19937_64 rng(5);
        for (int i = 0; i < 20; ++i) {
            const HmmParams th = random_params(rng, random_shape(rng, 8));
            const HmmParams back = params_from_json(params_to_json(th));
            const auto u = to_unconstrained(th).values, v = to_unconstrained(back).values;
            REQUIRE(u.size() == v.size());
            for (std::size_t k = 0; k < u.size(); ++k) CHECK(u[k] == v[k]);
        }
    }

    TEST_CASE("validation rejects out-of-range parameters") {
        HmmParams th = scenario1_truth();
        th.progression = 1.5;
        CHECK_THROWS_AS(validate_params(th), Error);
    }
}
