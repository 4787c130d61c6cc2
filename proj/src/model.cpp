#include "cfhmm/model.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "cfhmm/error.hpp"

namespace cfhmm {

double expit(double v) noexcept {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

double logit(double p) noexcept { return std::log(p) - std::log1p(-p); }

int covariate_count(const HazardModel& hz) { return static_cast<int>(hz.coefficients.size()); }

int attribute_count(const EmissionModel& em) {
    return em.form == EmissionForm::GroupRates ? 1 : static_cast<int>(em.beta.size()) - 1;
}

double hazard(const HmmParams& theta, std::span<const double> x, std::span<const int> a, int t) {
    const HazardModel& hz = theta.hazard;
    if (x.size() + a.size() != hz.coefficients.size())
        throw DimensionError("hazard: (x, a) has length " + std::to_string(x.size() + a.size()) +
                             " but coefficients has length " + std::to_string(hz.coefficients.size()));
    if (t < 1 || t > hz.horizon)
        throw DimensionError("hazard: t=" + std::to_string(t) + " outside [1, " + std::to_string(hz.horizon) + "]");
    double lp = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) lp += hz.coefficients[k] * x[k];
    for (std::size_t k = 0; k < a.size(); ++k) lp += hz.coefficients[x.size() + k] * a[k];
    double h;
    if (hz.family == HazardFamily::Weibull) {
        const double rel = static_cast<double>(t) / hz.horizon;
        h = hz.scale * hz.shape * std::pow(rel, hz.shape - 1.0) * std::exp(lp);
    } else {
        if (static_cast<int>(hz.baseline.size()) != hz.horizon)
            throw DimensionError("hazard: baseline has length " + std::to_string(hz.baseline.size()) +
                                 ", expected " + std::to_string(hz.horizon));
        h = hz.baseline[t - 1] * std::exp(lp);
    }
    return std::clamp(h, 0.0, 1.0 - kHazardEpsilon);
}

Matrix3 transition_matrix(double h, double progression) {
    return {{{1.0 - h, h, 0.0}, {0.0, 1.0 - progression, progression}, {0.0, 0.0, 1.0}}};
}

Matrix3 transition_matrix(const HmmParams& theta, std::span<const double> x, std::span<const int> a, int t) {
    return transition_matrix(hazard(theta, x, a, t), theta.progression);
}

StageRates stage_rates(const EmissionModel& em, std::span<const int> a) {
    if (static_cast<int>(a.size()) != attribute_count(em))
        throw DimensionError("emission: attribute vector a has length " + std::to_string(a.size()) +
                             ", expected " + std::to_string(attribute_count(em)));
    if (em.form == EmissionForm::GroupRates) {
        const int g = a[0] != 0 ? 1 : 0;
        return {em.rate_s0[g], em.rate_s1[g], em.rate_s2};
    }
    double lp = em.beta[0];
    for (std::size_t k = 0; k < a.size(); ++k) lp += em.beta[k + 1] * a[k];
    const double b = expit(lp);
    return {b, b, em.rate_s2};
}

EmissionMatrix emission_matrix(const StageRates& r) {
    return {{{r.none, 0.0, 0.0, 1.0 - r.none},
             {0.0, r.early, 0.0, 1.0 - r.early},
             {0.0, 0.0, r.late, 1.0 - r.late}}};
}

EmissionMatrix emission_matrix(const HmmParams& theta, std::span<const int> a) {
    return emission_matrix(stage_rates(theta.emission, a));
}

Vec3 initial_state(double h1, double f) { return {1.0 - h1, (1.0 - f) * h1, f * h1}; }

Vec3 initial_state(const HmmParams& theta, std::span<const double> x, std::span<const int> a) {
    return initial_state(hazard(theta, x, a, 1), theta.baseline_late_fraction);
}

double max_early_rate(const EmissionModel& em) {
    double m = 0.0;
    if (em.form == EmissionForm::GroupRates) {
        if (em.constraint_support.empty()) {
            for (int g = 0; g < 2; ++g) m = std::max({m, em.rate_s0[g], em.rate_s1[g]});
        } else {
            for (const auto& a : em.constraint_support) {
                const int g = a.at(0) != 0 ? 1 : 0;
                m = std::max({m, em.rate_s0[g], em.rate_s1[g]});
            }
        }
        return m;
    }
    if (em.constraint_support.empty()) return expit(em.beta.at(0));
    for (const auto& a : em.constraint_support) m = std::max(m, stage_rates(em, a).none);
    return m;
}

namespace {

bool open_unit(double p) { return p > 0.0 && p < 1.0 && std::isfinite(p); }

}  // namespace

void validate_params(const HmmParams& theta) {
    auto fail = [](const std::string& what) { throw Error("invalid_params", what); };
    const HazardModel& hz = theta.hazard;
    if (hz.horizon < 1) fail("hazard horizon must be >= 1");
    for (double c : hz.coefficients)
        if (!std::isfinite(c)) fail("hazard coefficient is not finite");
    if (hz.family == HazardFamily::Weibull) {
        if (!(hz.scale > 0.0) || !std::isfinite(hz.scale)) fail("hazard scale must be > 0");
        if (!(hz.shape > 0.0) || !std::isfinite(hz.shape)) fail("hazard shape must be > 0");
    } else {
        if (static_cast<int>(hz.baseline.size()) != hz.horizon) fail("baseline length must equal horizon");
        for (double b : hz.baseline)
            if (!(b > 0.0) || !std::isfinite(b)) fail("baseline hazard entries must be > 0");
    }
    const EmissionModel& em = theta.emission;
    if (em.form == EmissionForm::GroupRates) {
        for (int g = 0; g < 2; ++g)
            if (!open_unit(em.rate_s0[g]) || !open_unit(em.rate_s1[g])) fail("testing rates must lie in (0, 1)");
    } else {
        if (em.beta.empty()) fail("logistic emission needs at least an intercept");
        for (double b : em.beta)
            if (!std::isfinite(b)) fail("emission coefficient is not finite");
    }
    if (!open_unit(em.rate_s2)) fail("late-stage testing rate must lie in (0, 1)");
    if (em.constraint_late_ge_early && em.rate_s2 < max_early_rate(em))
        fail("late-stage testing rate is below the largest early-stage rate");
    if (!open_unit(theta.progression)) fail("progression rate must lie in (0, 1)");
    if (!(theta.baseline_late_fraction >= 0.0 && theta.baseline_late_fraction < 1.0))
        fail("baseline late fraction must lie in [0, 1)");
    if (theta.baseline_late_free && !(theta.baseline_late_fraction > 0.0))
        fail("a free baseline late fraction must be > 0");
}

ParamLayout param_layout(const HmmParams& theta) {
    ParamLayout L;
    int k = 0;
    L.hazard_coef = k;
    L.n_hazard_coef = covariate_count(theta.hazard);
    k += L.n_hazard_coef;
    if (theta.hazard.family == HazardFamily::Weibull) {
        L.hazard_shape = k;
        k += 2;
    } else {
        L.baseline = k;
        k += theta.hazard.horizon;
    }
    L.emission = k;
    L.n_emission_early = theta.emission.form == EmissionForm::GroupRates ? 4 : static_cast<int>(theta.emission.beta.size());
    k += L.n_emission_early;
    L.late_rate = k++;
    L.progression = k++;
    if (theta.baseline_late_free) L.baseline_late = k++;
    L.size = k;
    return L;
}

std::vector<std::string> param_names(const HmmParams& theta) {
    const ParamLayout L = param_layout(theta);
    std::vector<std::string> names(L.size);
    for (int i = 0; i < L.n_hazard_coef; ++i) names[L.hazard_coef + i] = "hazard.coefficients[" + std::to_string(i) + "]";
    if (L.hazard_shape >= 0) {
        names[L.hazard_shape] = "hazard.log_scale";
        names[L.hazard_shape + 1] = "hazard.log_shape";
    }
    if (L.baseline >= 0)
        for (int t = 0; t < theta.hazard.horizon; ++t) names[L.baseline + t] = "hazard.log_baseline[" + std::to_string(t) + "]";
    if (theta.emission.form == EmissionForm::GroupRates) {
        names[L.emission + 0] = "emission.logit_rate_s0[0]";
        names[L.emission + 1] = "emission.logit_rate_s0[1]";
        names[L.emission + 2] = "emission.logit_rate_s1[0]";
        names[L.emission + 3] = "emission.logit_rate_s1[1]";
    } else {
        for (int i = 0; i < L.n_emission_early; ++i) names[L.emission + i] = "emission.beta[" + std::to_string(i) + "]";
    }
    names[L.late_rate] = "emission.late_rate";
    names[L.progression] = "logit_progression";
    if (L.baseline_late >= 0) names[L.baseline_late] = "logit_baseline_late_fraction";
    return names;
}

UnconstrainedParams to_unconstrained(const HmmParams& theta) {
    validate_params(theta);
    const ParamLayout L = param_layout(theta);
    std::vector<double> u(L.size);
    const HazardModel& hz = theta.hazard;
    std::copy(hz.coefficients.begin(), hz.coefficients.end(), u.begin() + L.hazard_coef);
    if (L.hazard_shape >= 0) {
        u[L.hazard_shape] = std::log(hz.scale);
        u[L.hazard_shape + 1] = std::log(hz.shape);
    }
    if (L.baseline >= 0)
        for (int t = 0; t < hz.horizon; ++t) u[L.baseline + t] = std::log(hz.baseline[t]);
    const EmissionModel& em = theta.emission;
    if (em.form == EmissionForm::GroupRates) {
        u[L.emission + 0] = logit(em.rate_s0[0]);
        u[L.emission + 1] = logit(em.rate_s0[1]);
        u[L.emission + 2] = logit(em.rate_s1[0]);
        u[L.emission + 3] = logit(em.rate_s1[1]);
    } else {
        std::copy(em.beta.begin(), em.beta.end(), u.begin() + L.emission);
    }
    if (em.constraint_late_ge_early) {
        const double m = max_early_rate(em);
        u[L.late_rate] = logit((em.rate_s2 - m) / (1.0 - m));
    } else {
        u[L.late_rate] = logit(em.rate_s2);
    }
    u[L.progression] = logit(theta.progression);
    if (L.baseline_late >= 0) u[L.baseline_late] = logit(theta.baseline_late_fraction);
    for (int i = 0; i < L.size; ++i)
        if (!std::isfinite(u[i]))
            throw Error("non_finite_parameter", "to_unconstrained: component " + std::to_string(i) + " (" +
                                                    param_names(theta)[i] + ") is not finite");
    return {std::move(u)};
}

HmmParams from_unconstrained(const UnconstrainedParams& up, const HmmParams& shape) {
    const ParamLayout L = param_layout(shape);
    const auto& u = up.values;
    if (static_cast<int>(u.size()) != L.size)
        throw DimensionError("from_unconstrained: vector has length " + std::to_string(u.size()) + ", layout expects " +
                             std::to_string(L.size));
    for (int i = 0; i < L.size; ++i)
        if (!std::isfinite(u[i]))
            throw Error("non_finite_parameter", "from_unconstrained: component " + std::to_string(i) + " (" +
                                                    param_names(shape)[i] + ") is not finite");
    HmmParams theta = shape;
    HazardModel& hz = theta.hazard;
    std::copy(u.begin() + L.hazard_coef, u.begin() + L.hazard_coef + L.n_hazard_coef, hz.coefficients.begin());
    if (L.hazard_shape >= 0) {
        hz.scale = std::exp(u[L.hazard_shape]);
        hz.shape = std::exp(u[L.hazard_shape + 1]);
    }
    if (L.baseline >= 0)
        for (int t = 0; t < hz.horizon; ++t) hz.baseline[t] = std::exp(u[L.baseline + t]);
    EmissionModel& em = theta.emission;
    if (em.form == EmissionForm::GroupRates) {
        em.rate_s0 = {expit(u[L.emission + 0]), expit(u[L.emission + 1])};
        em.rate_s1 = {expit(u[L.emission + 2]), expit(u[L.emission + 3])};
    } else {
        std::copy(u.begin() + L.emission, u.begin() + L.emission + L.n_emission_early, em.beta.begin());
    }
    if (em.constraint_late_ge_early) {
        const double m = max_early_rate(em);
        em.rate_s2 = m + (1.0 - m) * expit(u[L.late_rate]);
    } else {
        em.rate_s2 = expit(u[L.late_rate]);
    }
    theta.progression = expit(u[L.progression]);
    if (L.baseline_late >= 0) theta.baseline_late_fraction = expit(u[L.baseline_late]);
    return theta;
}

// ---------------------------------------------------------------------------
// JSON form

namespace {

const char* family_name(HazardFamily f) { return f == HazardFamily::Weibull ? "Weibull" : "PiecewiseBaseline"; }
const char* form_name(EmissionForm f) { return f == EmissionForm::GroupRates ? "GroupRates" : "LogisticShared"; }

template <class T>
T required(const nlohmann::json& j, const char* key, const char* where) {
    if (!j.contains(key)) throw Error("invalid_params", std::string(where) + ": missing field '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw Error("invalid_params", std::string(where) + "." + key + ": " + e.what());
    }
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const char* where) {
    for (const auto& [k, v] : j.items()) {
        bool ok = false;
        for (const char* name : known) ok = ok || k == name;
        if (!ok) throw Error("invalid_params", std::string(where) + ": unknown field '" + k + "'");
    }
}

}  // namespace

nlohmann::json params_to_json(const HmmParams& theta) {
    using nlohmann::json;
    const HazardModel& hz = theta.hazard;
    json jh = {{"family", family_name(hz.family)}, {"coefficients", hz.coefficients}, {"horizon", hz.horizon}};
    if (hz.family == HazardFamily::Weibull) {
        jh["scale"] = hz.scale;
        jh["shape"] = hz.shape;
    } else {
        jh["baseline"] = hz.baseline;
    }
    const EmissionModel& em = theta.emission;
    json je = {{"form", form_name(em.form)},
               {"rate_s2", em.rate_s2},
               {"constraint_late_ge_early", em.constraint_late_ge_early},
               {"constraint_support", em.constraint_support}};
    if (em.form == EmissionForm::GroupRates) {
        je["rate_s0"] = em.rate_s0;
        je["rate_s1"] = em.rate_s1;
    } else {
        je["beta"] = em.beta;
    }
    return {{"hazard", jh},
            {"emission", je},
            {"progression", theta.progression},
            {"baseline_late_fraction", theta.baseline_late_fraction},
            {"baseline_late_free", theta.baseline_late_free}};
}

HmmParams params_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw Error("invalid_params", "parameter document must be an object");
    reject_unknown(j, {"hazard", "emission", "progression", "baseline_late_fraction", "baseline_late_free"}, "params");
    HmmParams theta;
    const auto& jh = j.at("hazard");
    reject_unknown(jh, {"family", "coefficients", "horizon", "scale", "shape", "baseline"}, "hazard");
    const auto fam = required<std::string>(jh, "family", "hazard");
    if (fam == "Weibull") {
        theta.hazard.family = HazardFamily::Weibull;
        theta.hazard.scale = required<double>(jh, "scale", "hazard");
        theta.hazard.shape = required<double>(jh, "shape", "hazard");
    } else if (fam == "PiecewiseBaseline") {
        theta.hazard.family = HazardFamily::PiecewiseBaseline;
        theta.hazard.baseline = required<std::vector<double>>(jh, "baseline", "hazard");
    } else {
        throw Error("invalid_params", "hazard.family: unknown family '" + fam + "'");
    }
    theta.hazard.coefficients = required<std::vector<double>>(jh, "coefficients", "hazard");
    theta.hazard.horizon = required<int>(jh, "horizon", "hazard");

    const auto& je = j.at("emission");
    reject_unknown(je, {"form", "rate_s0", "rate_s1", "beta", "rate_s2", "constraint_late_ge_early", "constraint_support"},
                   "emission");
    const auto form = required<std::string>(je, "form", "emission");
    if (form == "GroupRates") {
        theta.emission.form = EmissionForm::GroupRates;
        theta.emission.rate_s0 = required<std::array<double, 2>>(je, "rate_s0", "emission");
        theta.emission.rate_s1 = required<std::array<double, 2>>(je, "rate_s1", "emission");
    } else if (form == "LogisticShared") {
        theta.emission.form = EmissionForm::LogisticShared;
        theta.emission.beta = required<std::vector<double>>(je, "beta", "emission");
    } else {
        throw Error("invalid_params", "emission.form: unknown form '" + form + "'");
    }
    theta.emission.rate_s2 = required<double>(je, "rate_s2", "emission");
    theta.emission.constraint_late_ge_early = required<bool>(je, "constraint_late_ge_early", "emission");
    if (je.contains("constraint_support"))
        theta.emission.constraint_support = je.at("constraint_support").get<std::vector<std::vector<int>>>();
    theta.progression = required<double>(j, "progression", "params");
    theta.baseline_late_fraction = required<double>(j, "baseline_late_fraction", "params");
    theta.baseline_late_free = required<bool>(j, "baseline_late_free", "params");
    validate_params(theta);
    return theta;
}

}  // namespace cfhmm
