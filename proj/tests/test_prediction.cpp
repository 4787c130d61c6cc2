#include <cmath>
#include <random>

#include "cfhmm/error.hpp"
#include "cfhmm/model.hpp"
#include "cfhmm/prediction.hpp"
#include "doctest.h"

using namespace cfhmm;

namespace {

DesignMatrix column(const std::vector<double>& v, const std::string& name = "x") {
    return DesignMatrix{static_cast<int>(v.size()), 1, v, {name}};
}

}  // namespace

TEST_SUITE("prediction") {
    TEST_CASE("null model recovers the incidence") {
        std::mt19937_64 rng(1);
        std::normal_distribution<double> z;
        const int n = 1000;
        std::vector<double> x(n);
        std::vector<int> y(n, 0);
        for (int i = 0; i < n; ++i) x[i] = z(rng);
        for (int i = 0; i < 300; ++i) y[i] = 1;
        DesignMatrix none{n, 0, {}, {}};
        const GlmModel m = fit_logistic(none, y);
        CHECK(m.coefficients[0] == doctest::Approx(logit(0.3)).epsilon(1e-10));
        const GlmModel w = fit_logistic(column(x), y);
        CHECK(std::abs(w.coefficients[1]) < 0.2);
    }

    TEST_CASE("saturated two-by-two table gives the log odds ratio") {
        // a=30 exposed cases, b=70 exposed controls, c=10 unexposed cases, d=90 unexposed controls
        std::vector<double> x;
        std::vector<int> y;
        auto add = [&](double xv, int yv, int k) {
            for (int i = 0; i < k; ++i) {
                x.push_back(xv);
                y.push_back(yv);
            }
        };
        add(1, 1, 30);
        add(1, 0, 70);
        add(0, 1, 10);
        add(0, 0, 90);
        const GlmModel m = fit_logistic(column(x), y);
        CHECK(m.coefficients[1] == doctest::Approx(std::log(30.0 * 90.0 / (70.0 * 10.0))).epsilon(1e-9));
        CHECK(m.names[0] == "intercept");
        const auto p = predict(m, column({1.0, 0.0}));
        CHECK(p[0] == doctest::Approx(0.3).epsilon(1e-9));
        CHECK(p[1] == doctest::Approx(0.1).epsilon(1e-9));
    }

    TEST_CASE("duplicated column is rank deficient") {
        DesignMatrix d{4, 2, {1, 1, 0, 0, 1, 1, 0, 0}, {"x1", "x1_copy"}};
        const std::vector<int> y{1, 0, 0, 1};
        try {
            fit_logistic(d, y);
            FAIL("expected rank_deficient");
        } catch (const Error& e) {
            CHECK(e.code() == "rank_deficient");
            CHECK(std::string(e.what()).find("x1_copy") != std::string::npos);
        }
    }

    TEST_CASE("perfect separation is reported") {
        const std::vector<int> y{0, 0, 0, 1, 1, 1};
        try {
            fit_logistic(column({1, 2, 3, 4, 5, 6}), y);
            FAIL("expected separation");
        } catch (const Error& e) {
            CHECK(e.code() == "separation");
        }
    }

    TEST_CASE("AUROC examples") {
        CHECK(auroc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}) == 1.0);
        CHECK(auroc(std::vector<double>{0.2, 0.4, 0.6}, std::vector<int>{0, 1, 0}) == 0.5);
        CHECK(auroc(std::vector<double>{0.5, 0.5}, std::vector<int>{0, 1}) == 0.5);
        CHECK_THROWS_AS(auroc(std::vector<double>{0.5, 0.4}, std::vector<int>{1, 1}), Error);
    }

    TEST_CASE("calibration of constant predictions") {
        std::vector<double> p(10, 0.5);
        std::vector<int> y{1, 1, 1, 1, 1, 0, 0, 0, 0, 0};
        const CalibrationStats c = calibration(p, y);
        CHECK(c.oe_ratio == doctest::Approx(1.0));
        CHECK(c.intercept == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(std::isnan(c.slope));
    }

    TEST_CASE("outcomes drawn from the predictions are calibrated") {
        std::mt19937_64 rng(77);
        std::normal_distribution<double> z;
        std::uniform_real_distribution<double> u;
        const int n = 100000;
        std::vector<double> p(n);
        std::vector<int> y(n);
        for (int i = 0; i < n; ++i) {
            p[i] = expit(-2.0 + 0.8 * z(rng));
            y[i] = u(rng) < p[i];
        }
        const CalibrationStats c = calibration(p, y);
        double var = 0.0, exp = 0.0;
        for (double v : p) {
            var += v * (1 - v);
            exp += v;
        }
        CHECK(std::abs(c.oe_ratio - 1.0) < 3.0 * std::sqrt(var) / exp);
        CHECK(std::abs(c.slope - 1.0) < 0.05);
        CHECK(std::abs(c.intercept) < 0.05);
    }

    TEST_CASE("scalar losses") {
        const std::vector<int> y{1, 0, 1, 0};
        const auto perfect = scalar_losses(std::vector<double>{1, 0, 1, 0}, y);
        CHECK(perfect.brier <= 1e-22);
        CHECK(perfect.logistic_error <= 1e-11);
        const auto half = scalar_losses(std::vector<double>(4, 0.5), y);
        CHECK(half.brier == 0.25);
        CHECK(half.logistic_error == doctest::Approx(std::log(2.0)));
    }

    TEST_CASE("decile calibration bins") {
        std::vector<double> p(20);
        std::vector<int> y(20);
        for (int i = 0; i < 20; ++i) {
            p[i] = i < 10 ? 0.2 : 0.6;
            y[i] = i < 10 ? (i < 2) : (i < 16);
        }
        const auto bins = decile_calibration(p, y, 10);
        REQUIRE(bins.size() == 10);
        for (const auto& b : bins) CHECK(b.count == 2);
        // constant groups: bin means match the group frequencies on average
        double lo = 0, hi = 0;
        for (int b = 0; b < 5; ++b) lo += bins[b].observed / 5.0;
        for (int b = 5; b < 10; ++b) hi += bins[b].observed / 5.0;
        CHECK(lo == doctest::Approx(0.2));
        CHECK(hi == doctest::Approx(0.6));
    }

    TEST_CASE("net benefit reference curves") {
        const std::vector<int> y{1, 0, 0, 0, 1, 0, 0, 0, 0, 0};
        const double prev = 0.2;
        std::vector<double> perfect(y.begin(), y.end());
        const auto pts = net_benefit(perfect, y, default_thresholds());
        CHECK(pts.size() == 26);
        for (const auto& pt : pts) {
            CHECK(pt.treat_none == 0.0);
            CHECK(pt.treat_all == doctest::Approx(prev - (1 - prev) * pt.threshold / (1 - pt.threshold)));
            CHECK(pt.model == doctest::Approx(prev));
        }
    }

    TEST_CASE("metrics report names and order") {
        const auto& names = scalar_metric_names();
        CHECK(names.size() == 7);
        CHECK(names[0] == "auroc");
        const MetricsReport r = evaluate_metrics(std::vector<double>{0.1, 0.9, 0.2, 0.7, 0.4}, std::vector<int>{0, 1, 1, 0, 1}, "overall");
        CHECK(scalar_metrics(r).size() == names.size());
        CHECK(r.n == 5);
        CHECK(r.events == 3);
        CHECK(r.deciles.size() == 5);
    }

    TEST_CASE("bootstrap optimism") {
        const std::vector<double> apparent{0.7, 1.0};
        BootstrapOptions opts;
        opts.replicates = 0;
        const auto none = bootstrap_optimism(10, apparent, nullptr, opts);
        CHECK(none.corrected == apparent);
        opts.replicates = 20;
        const auto flat = bootstrap_optimism(
            10, apparent, [](std::span<const std::size_t>, std::uint64_t) { return BootstrapSample{{0.5, 2.0}, {0.5, 2.0}}; },
            opts);
        CHECK(flat.optimism == std::vector<double>{0.0, 0.0});
        CHECK(flat.effective_replicates == 20);
        int calls = 0;
        CHECK_THROWS_AS(bootstrap_optimism(
                            10, apparent,
                            [&](std::span<const std::size_t>, std::uint64_t) -> BootstrapSample {
                                if (++calls % 2 == 0) throw Error("not_converged", "x");
                                return {{0.8, 1.0}, {0.7, 1.0}};
                            },
                            opts),
                        Error);
    }
}
