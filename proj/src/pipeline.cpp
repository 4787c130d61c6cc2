#include "cfhmm/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "cfhmm/error.hpp"
#include "cfhmm/log.hpp"
#include "cfhmm/seeding.hpp"

namespace cfhmm {

using nlohmann::json;

const char* model_name(ModelKind k) {
    switch (k) {
        case ModelKind::Naive: return "naive";
        case ModelKind::Blind: return "blind";
        case ModelKind::Imputed: return "imputed";
        case ModelKind::Ideal: return "ideal";
    }
    return "?";
}

ModelKind model_from_name(const std::string& name) {
    for (ModelKind k : {ModelKind::Naive, ModelKind::Blind, ModelKind::Imputed, ModelKind::Ideal})
        if (name == model_name(k)) return k;
    throw Error("invalid_config", "unknown model '" + name + "' (expected naive, blind, imputed or ideal)");
}

// ---- configuration -------------------------------------------------------------------

namespace {

[[noreturn]] void bad(const std::string& m) { throw Error("invalid_config", m); }

void only_keys(const json& j, const std::set<std::string>& known, const std::string& where) {
    if (!j.is_object()) bad(where + " must be an object");
    for (const auto& [k, v] : j.items())
        if (!known.count(k)) bad(where + ": unknown key '" + k + "'");
}

template <class T>
T get(const json& j, const char* key, const std::string& where) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        bad(where + "." + key + " has the wrong type");
    }
}

template <class T>
void maybe(const json& j, const char* key, T& out, const std::string& where) {
    if (j.contains(key)) out = get<T>(j, key, where);
}

std::string scenario_key(const json& v) {
    if (v.is_number_integer()) return std::to_string(v.get<int>());
    if (v.is_string()) return v.get<std::string>();
    bad("scenario must be 1..4 or \"multi_attribute\"");
}

}  // namespace

RunConfig default_run_config(const std::string& name) {
    RunConfig cfg;
    cfg.scenario_name = name;
    if (name == "multi_attribute") {
        cfg.scenario = multi_attribute_preset();
        cfg.fit_baseline_late_free = false;
    } else if (name == "1" || name == "2" || name == "3" || name == "4") {
        cfg.scenario = scenario_preset(std::stoi(name));
        // Scenarios 1-3 generate every incident case as early stage
        cfg.fit_baseline_late_free = name == "4";
        // imperfect sensitivity produces negative-then-late sequences the model cannot explain
        cfg.drop_impossible_records = name == "2";
    } else {
        bad("scenario must be 1..4 or \"multi_attribute\"");
    }
    cfg.reference = cfg.scenario.reference;
    for (std::size_t k = 0; k < cfg.scenario.attribute_prob.size(); ++k)
        cfg.attribute_names.push_back("a" + std::to_string(k + 1));
    return cfg;
}

RunConfig run_config_from_json(const json& j) {
    only_keys(j, {"scenario", "n", "seed", "threads", "n_val", "replications", "bootstrap", "models", "reference",
                  "fit", "imputation", "generator", "data"},
              "config");
    RunConfig cfg = default_run_config(j.contains("scenario") ? scenario_key(j.at("scenario")) : "1");
    maybe(j, "n", cfg.scenario.n, "config");
    maybe(j, "seed", cfg.seed, "config");
    maybe(j, "threads", cfg.threads, "config");
    maybe(j, "n_val", cfg.n_val, "config");
    maybe(j, "replications", cfg.replications, "config");
    maybe(j, "bootstrap", cfg.bootstrap, "config");
    if (cfg.scenario.n < 1) bad("n must be >= 1");
    if (cfg.threads < 1) bad("threads must be >= 1");
    if (cfg.n_val < 1) bad("n_val must be >= 1");
    if (cfg.replications < 1) bad("replications must be >= 1");
    if (cfg.bootstrap < 0) bad("bootstrap must be >= 0");

    if (j.contains("models")) {
        const auto names = get<std::vector<std::string>>(j, "models", "config");
        if (names.empty()) bad("models must not be empty");
        cfg.models.clear();
        std::set<std::string> seen;
        for (const auto& n : names) {
            if (!seen.insert(n).second) bad("duplicate model '" + n + "'");
            cfg.models.push_back(model_from_name(n));
        }
    }

    if (j.contains("generator")) {
        const json& g = j.at("generator");
        only_keys(g, {"truth", "attribute_prob", "progression_a1", "sensitivity_early", "sensitivity_late",
                      "horizon", "total_horizon", "covariates"},
                  "generator");
        ScenarioConfig& sc = cfg.scenario;
        if (g.contains("truth")) {
            try {
                sc.truth = params_from_json(g.at("truth"));
            } catch (const Error& e) {
                bad("generator.truth: " + std::string(e.what()));
            }
        }
        maybe(g, "attribute_prob", sc.attribute_prob, "generator");
        maybe(g, "progression_a1", sc.progression_a1, "generator");
        maybe(g, "sensitivity_early", sc.sensitivity_early, "generator");
        maybe(g, "sensitivity_late", sc.sensitivity_late, "generator");
        maybe(g, "horizon", sc.horizon, "generator");
        maybe(g, "total_horizon", sc.total_horizon, "generator");
        if (g.contains("covariates")) {
            const json& c = g.at("covariates");
            only_keys(c, {"x1_mean_a0", "x1_sd_a0", "x1_mean_a1", "x1_sd_a1", "x2_mean", "x2_sd"}, "generator.covariates");
            maybe(c, "x1_mean_a0", sc.covariates.x1_mean_a0, "generator.covariates");
            maybe(c, "x1_sd_a0", sc.covariates.x1_sd_a0, "generator.covariates");
            maybe(c, "x1_mean_a1", sc.covariates.x1_mean_a1, "generator.covariates");
            maybe(c, "x1_sd_a1", sc.covariates.x1_sd_a1, "generator.covariates");
            maybe(c, "x2_mean", sc.covariates.x2_mean, "generator.covariates");
            maybe(c, "x2_sd", sc.covariates.x2_sd, "generator.covariates");
        }
        cfg.attribute_names.clear();
        for (std::size_t k = 0; k < sc.attribute_prob.size(); ++k)
            cfg.attribute_names.push_back("a" + std::to_string(k + 1));
        cfg.reference.assign(sc.attribute_prob.size(), 0);
    }

    if (j.contains("data")) {
        const json& d = j.at("data");
        only_keys(d, {"baseline", "panel", "validation_baseline", "validation_panel", "ideal_baseline", "ideal_panel",
                      "fit", "horizon"},
                  "data");
        maybe(d, "baseline", cfg.baseline_file, "data");
        maybe(d, "panel", cfg.panel_file, "data");
        maybe(d, "validation_baseline", cfg.validation_baseline_file, "data");
        maybe(d, "validation_panel", cfg.validation_panel_file, "data");
        maybe(d, "ideal_baseline", cfg.ideal_baseline_file, "data");
        maybe(d, "ideal_panel", cfg.ideal_panel_file, "data");
        maybe(d, "fit", cfg.fit_file, "data");
        maybe(d, "horizon", cfg.data_horizon, "data");
        if (cfg.data_horizon < 1) bad("data.horizon must be >= 1");
    } else {
        cfg.data_horizon = cfg.scenario.horizon;
    }

    if (j.contains("reference")) {
        // attribute-name -> level; unnamed attributes stay at 0
        const json& r = j.at("reference");
        if (!r.is_object()) bad("reference must map attribute names to 0/1");
        std::vector<int> ref(cfg.attribute_names.size(), 0);
        for (const auto& [k, v] : r.items()) {
            auto it = std::find(cfg.attribute_names.begin(), cfg.attribute_names.end(), k);
            if (it == cfg.attribute_names.end()) bad("reference: unknown attribute '" + k + "'");
            if (!v.is_number_integer() || (v.get<int>() != 0 && v.get<int>() != 1))
                bad("reference: level of '" + k + "' must be 0 or 1");
            ref[it - cfg.attribute_names.begin()] = v.get<int>();
        }
        cfg.reference = ref;
    }
    cfg.scenario.reference = cfg.reference;

    if (j.contains("fit")) {
        const json& f = j.at("fit");
        only_keys(f, {"tol_g", "max_iter", "memory", "gradient", "restarts", "restart_jitter", "record_trace",
                      "hazard_family", "emission_form", "baseline_late_free", "constraint_late_ge_early", "init", "impossible_records"},
                  "fit");
        maybe(f, "tol_g", cfg.fit.tol_g, "fit");
        maybe(f, "max_iter", cfg.fit.max_iter, "fit");
        maybe(f, "memory", cfg.fit.memory, "fit");
        maybe(f, "restarts", cfg.fit.restarts, "fit");
        maybe(f, "restart_jitter", cfg.fit.restart_jitter, "fit");
        maybe(f, "record_trace", cfg.fit.record_trace, "fit");
        maybe(f, "baseline_late_free", cfg.fit_baseline_late_free, "fit");
        if (f.contains("impossible_records")) {
            const auto m = get<std::string>(f, "impossible_records", "fit");
            if (m != "error" && m != "drop") bad("fit.impossible_records must be \"error\" or \"drop\"");
            cfg.drop_impossible_records = m == "drop";
        }
        if (f.contains("constraint_late_ge_early"))
            cfg.constraint_late_ge_early = get<bool>(f, "constraint_late_ge_early", "fit");
        if (f.contains("gradient")) {
            const auto g = get<std::string>(f, "gradient", "fit");
            if (g == "adjoint") cfg.fit.gradient = GradientMethod::Adjoint;
            else if (g == "finite_difference") cfg.fit.gradient = GradientMethod::FiniteDifference;
            else bad("fit.gradient must be \"adjoint\" or \"finite_difference\"");
        }
        if (f.contains("hazard_family")) {
            const auto h = get<std::string>(f, "hazard_family", "fit");
            if (h == "Weibull") cfg.fit_family = HazardFamily::Weibull;
            else if (h == "PiecewiseBaseline") cfg.fit_family = HazardFamily::PiecewiseBaseline;
            else bad("fit.hazard_family must be \"Weibull\" or \"PiecewiseBaseline\"");
        }
        if (f.contains("emission_form")) {
            const auto e = get<std::string>(f, "emission_form", "fit");
            if (e == "GroupRates") cfg.fit_form = EmissionForm::GroupRates;
            else if (e == "LogisticShared") cfg.fit_form = EmissionForm::LogisticShared;
            else bad("fit.emission_form must be \"GroupRates\" or \"LogisticShared\"");
        }
        if (f.contains("init")) {
            try {
                cfg.init = params_from_json(f.at("init"));
            } catch (const Error& e) {
                bad("fit.init: " + std::string(e.what()));
            }
        }
        if (!(cfg.fit.tol_g > 0.0) || cfg.fit.max_iter < 1 || cfg.fit.memory < 1 || cfg.fit.restarts < 0)
            bad("fit: tol_g > 0, max_iter >= 1, memory >= 1 and restarts >= 0 are required");
    }
    if (j.contains("imputation")) {
        const json& im = j.at("imputation");
        only_keys(im, {"per_stratum"}, "imputation");
        maybe(im, "per_stratum", cfg.imputation.per_stratum, "imputation");
    }
    cfg.fit.threads = cfg.threads;
    cfg.imputation.threads = cfg.threads;
    try {
        validate_config(cfg.scenario);
    } catch (const Error& e) {
        bad(e.what());
    }
    return cfg;
}

json run_config_to_json(const RunConfig& cfg) {
    json models = json::array();
    for (ModelKind k : cfg.models) models.push_back(model_name(k));
    json ref = json::object();
    for (std::size_t k = 0; k < cfg.reference.size() && k < cfg.attribute_names.size(); ++k)
        ref[cfg.attribute_names[k]] = cfg.reference[k];
    const ScenarioConfig& sc = cfg.scenario;
    json j = {
        {"scenario", cfg.scenario_name},
        {"n", sc.n},
        {"seed", cfg.seed},
        {"threads", cfg.threads},
        {"n_val", cfg.n_val},
        {"replications", cfg.replications},
        {"bootstrap", cfg.bootstrap},
        {"models", models},
        {"reference", ref},
        {"generator",
         {{"truth", params_to_json(sc.truth)},
          {"attribute_prob", sc.attribute_prob},
          {"progression_a1", sc.progression_a1},
          {"sensitivity_early", sc.sensitivity_early},
          {"sensitivity_late", sc.sensitivity_late},
          {"horizon", sc.horizon},
          {"total_horizon", sc.total_horizon},
          {"covariates",
           {{"x1_mean_a0", sc.covariates.x1_mean_a0},
            {"x1_sd_a0", sc.covariates.x1_sd_a0},
            {"x1_mean_a1", sc.covariates.x1_mean_a1},
            {"x1_sd_a1", sc.covariates.x1_sd_a1},
            {"x2_mean", sc.covariates.x2_mean},
            {"x2_sd", sc.covariates.x2_sd}}}}},
        {"fit",
         {{"tol_g", cfg.fit.tol_g},
          {"max_iter", cfg.fit.max_iter},
          {"memory", cfg.fit.memory},
          {"gradient", cfg.fit.gradient == GradientMethod::Adjoint ? "adjoint" : "finite_difference"},
          {"restarts", cfg.fit.restarts},
          {"restart_jitter", cfg.fit.restart_jitter},
          {"record_trace", cfg.fit.record_trace},
          {"hazard_family", cfg.fit_family == HazardFamily::Weibull ? "Weibull" : "PiecewiseBaseline"},
          {"baseline_late_free", cfg.fit_baseline_late_free},
          {"impossible_records", cfg.drop_impossible_records ? "drop" : "error"}}},
        {"imputation", {{"per_stratum", cfg.imputation.per_stratum}}},
    };
    if (cfg.fit_form) j["fit"]["emission_form"] = *cfg.fit_form == EmissionForm::GroupRates ? "GroupRates" : "LogisticShared";
    if (cfg.constraint_late_ge_early) j["fit"]["constraint_late_ge_early"] = *cfg.constraint_late_ge_early;
    if (cfg.init) j["fit"]["init"] = params_to_json(*cfg.init);
    json d = {{"horizon", cfg.data_horizon}};
    for (auto [k, v] : {std::pair<const char*, const std::string*>{"baseline", &cfg.baseline_file},
                        {"panel", &cfg.panel_file},
                        {"validation_baseline", &cfg.validation_baseline_file},
                        {"validation_panel", &cfg.validation_panel_file},
                        {"ideal_baseline", &cfg.ideal_baseline_file},
                        {"ideal_panel", &cfg.ideal_panel_file},
                        {"fit", &cfg.fit_file}})
        if (!v->empty()) d[k] = *v;
    j["data"] = d;
    return j;
}

std::vector<IndividualRecord> training_records(const RunConfig& cfg, std::vector<IndividualRecord> records) {
    if (!cfg.drop_impossible_records) return records;
    const std::size_t before = records.size();
    std::erase_if(records, [&](const IndividualRecord& r) { return !structurally_possible(r, cfg.fit_baseline_late_free); });
    if (records.size() != before)
        log::info("dropped " + std::to_string(before - records.size()) + " record(s) the model cannot explain");
    return records;
}

HmmParams fit_shape(const RunConfig& cfg, int n_x, int n_a, int horizon) {
    if (cfg.init) {
        HmmParams init = *cfg.init;
        if (init.hazard.horizon != horizon)
            bad("fit.init hazard horizon " + std::to_string(init.hazard.horizon) + " does not match data horizon " +
                std::to_string(horizon));
        return init;
    }
    const EmissionForm form =
        cfg.fit_form ? *cfg.fit_form : (n_a == 1 ? EmissionForm::GroupRates : EmissionForm::LogisticShared);
    if (form == EmissionForm::GroupRates && n_a != 1)
        bad("GroupRates emission needs exactly one observability attribute");
    const bool constraint = cfg.constraint_late_ge_early.value_or(form == EmissionForm::LogisticShared);
    return default_init(cfg.fit_family, form, n_x, n_a, horizon, cfg.fit_baseline_late_free, constraint);
}

// ---- downstream models ---------------------------------------------------------------

DesignMatrix design_for(ModelKind kind, std::span<const IndividualRecord> recs) {
    if (recs.empty()) throw Error("empty_cohort", "cannot build a design matrix for an empty cohort");
    const int nx = static_cast<int>(recs[0].x.size());
    const int na = kind == ModelKind::Blind ? 0 : static_cast<int>(recs[0].a.size());
    DesignMatrix d;
    d.rows = static_cast<int>(recs.size());
    d.cols = nx + na;
    d.values.reserve(static_cast<std::size_t>(d.rows) * d.cols);
    for (int k = 0; k < nx; ++k) d.names.push_back("x" + std::to_string(k + 1));
    for (int k = 0; k < na; ++k) d.names.push_back("a" + std::to_string(k + 1));
    for (const auto& r : recs) {
        if (static_cast<int>(r.x.size()) != nx || (na > 0 && static_cast<int>(r.a.size()) != na))
            throw DimensionError("record '" + r.id + "' has a different covariate layout");
        d.values.insert(d.values.end(), r.x.begin(), r.x.end());
        for (int k = 0; k < na; ++k) d.values.push_back(r.a[k]);
    }
    return d;
}

std::vector<std::pair<std::string, std::vector<std::size_t>>> strata_of(std::span<const IndividualRecord> recs) {
    std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
    std::vector<std::size_t> all(recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) all[i] = i;
    out.emplace_back("overall", std::move(all));
    const std::size_t na = recs.empty() ? 0 : recs[0].a.size();
    for (std::size_t k = 0; k < na; ++k)
        for (int level : {0, 1}) {
            std::vector<std::size_t> idx;
            for (std::size_t i = 0; i < recs.size(); ++i)
                if (recs[i].a[k] == level) idx.push_back(i);
            out.emplace_back("a" + std::to_string(k + 1) + "=" + std::to_string(level), std::move(idx));
        }
    return out;
}

namespace {

std::vector<int> outcomes(std::span<const IndividualRecord> recs) {
    std::vector<int> y(recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) y[i] = recs[i].diagnosed() ? 1 : 0;
    return y;
}

std::vector<MetricsReport> evaluate_strata(std::span<const double> pred, std::span<const int> y,
                                           std::span<const IndividualRecord> recs) {
    std::vector<MetricsReport> out;
    for (const auto& [label, idx] : strata_of(recs)) {
        std::vector<double> p;
        std::vector<int> o;
        p.reserve(idx.size());
        o.reserve(idx.size());
        for (std::size_t i : idx) {
            p.push_back(pred[i]);
            o.push_back(y[i]);
        }
        const auto events = std::count(o.begin(), o.end(), 1);
        if (o.size() < 10 || events == 0 || events == static_cast<long>(o.size())) {
            log::info("stratum " + label + " skipped: too few rows or a single outcome class");
            continue;
        }
        out.push_back(evaluate_metrics(p, o, label));
    }
    return out;
}

}  // namespace

std::vector<ModelEvaluation> train_and_evaluate(const std::vector<ModelKind>& models,
                                                std::span<const IndividualRecord> train,
                                                const ImputationResult* imputed,
                                                std::span<const IndividualRecord> ideal_train,
                                                std::span<const IndividualRecord> validation) {
    const std::vector<int> y_val = outcomes(validation);
    std::vector<ModelEvaluation> out;
    for (ModelKind kind : models) {
        std::span<const IndividualRecord> recs = kind == ModelKind::Ideal ? ideal_train : train;
        if (recs.empty())
            throw Error("missing_cohort", std::string("no training cohort for the ") + model_name(kind) + " model");
        std::vector<int> y = outcomes(recs);
        if (kind == ModelKind::Imputed) {
            if (!imputed || imputed->rows.size() != recs.size())
                throw Error("missing_imputation", "the imputed model needs imputed outcomes for every training record");
            for (std::size_t i = 0; i < recs.size(); ++i) {
                if (imputed->rows[i].id != recs[i].id)
                    throw Error("missing_imputation", "imputed outcomes are not aligned with the training cohort");
                y[i] = imputed->rows[i].d_cf;
            }
        }
        ModelEvaluation ev{kind, fit_logistic(design_for(kind, recs), y), {}};
        ev.glm.tag = model_name(kind);
        const std::vector<double> pred = predict(ev.glm, design_for(kind, validation));
        ev.strata = evaluate_strata(pred, y_val, validation);
        out.push_back(std::move(ev));
    }
    return out;
}

// ---- replications --------------------------------------------------------------------

std::uint64_t replication_seed(std::uint64_t master, int index) {
    return derive_seed(master, static_cast<std::uint64_t>(index));
}

ReplicationResult run_replication(const RunConfig& cfg, int index) {
    ReplicationResult res;
    res.index = index;
    res.seed = replication_seed(cfg.seed, index);

    ScenarioConfig sc = cfg.scenario;
    sc.reference = cfg.reference;
    sc.counterfactual_world = false;
    sc.seed = derive_seed(res.seed, 1);
    const SimulatedCohort train = generate(sc, cfg.threads);

    const Dataset data(training_records(cfg, train.records), sc.horizon);
    const HmmParams shape =
        fit_shape(cfg, static_cast<int>(train.records[0].x.size()), static_cast<int>(train.records[0].a.size()), sc.horizon);
    res.fit = fit_mle(data, shape, cfg.fit);
    if (!res.fit.converged) log::warn("replication " + std::to_string(index) + ": " + res.fit.diagnostic);
    res.imputation = impute_counterfactual_outcomes(res.fit.theta_hat, data, cfg.reference, derive_seed(res.seed, 4),
                                                    cfg.imputation);
    for (const auto& r : data.records()) res.attributes.push_back(r.a);

    ScenarioConfig cf = sc;
    cf.counterfactual_world = true;
    SimulatedCohort ideal;
    if (std::find(cfg.models.begin(), cfg.models.end(), ModelKind::Ideal) != cfg.models.end()) {
        cf.seed = derive_seed(res.seed, 2);
        ideal = generate(cf, cfg.threads);
    }
    cf.seed = derive_seed(res.seed, 3);
    cf.n = cfg.n_val;
    const SimulatedCohort validation = generate(cf, cfg.threads);

    res.models = train_and_evaluate(cfg.models, data.records(), &res.imputation, ideal.records, validation.records);
    return res;
}

std::vector<std::pair<std::string, double>> natural_parameters(const HmmParams& th) {
    std::vector<std::pair<std::string, double>> v;
    const HazardModel& hz = th.hazard;
    for (std::size_t k = 0; k < hz.coefficients.size(); ++k)
        v.emplace_back("hazard.coefficients[" + std::to_string(k) + "]", hz.coefficients[k]);
    if (hz.family == HazardFamily::Weibull) {
        v.emplace_back("hazard.scale", hz.scale);
        v.emplace_back("hazard.shape", hz.shape);
    } else {
        for (std::size_t t = 0; t < hz.baseline.size(); ++t)
            v.emplace_back("hazard.baseline[" + std::to_string(t) + "]", hz.baseline[t]);
    }
    const EmissionModel& em = th.emission;
    if (em.form == EmissionForm::GroupRates) {
        v.emplace_back("emission.rate_s0[0]", em.rate_s0[0]);
        v.emplace_back("emission.rate_s0[1]", em.rate_s0[1]);
        v.emplace_back("emission.rate_s1[0]", em.rate_s1[0]);
        v.emplace_back("emission.rate_s1[1]", em.rate_s1[1]);
    } else {
        for (std::size_t k = 0; k < em.beta.size(); ++k)
            v.emplace_back("emission.beta[" + std::to_string(k) + "]", em.beta[k]);
    }
    v.emplace_back("emission.rate_s2", em.rate_s2);
    v.emplace_back("progression", th.progression);
    v.emplace_back("baseline_late_fraction", th.baseline_late_fraction);
    return v;
}

ReplicationSummary summarize(const std::vector<ReplicationResult>& runs, const HmmParams& truth, int requested) {
    ReplicationSummary s;
    s.requested = requested;
    s.effective = static_cast<int>(runs.size());
    if (runs.empty()) return s;
    const double n = static_cast<double>(runs.size());

    const auto truth_values = natural_parameters(truth);
    const auto names = natural_parameters(runs[0].fit.theta_hat);
    for (std::size_t k = 0; k < names.size(); ++k) {
        ParameterSummary p;
        p.name = names[k].first;
        p.truth = std::nan("");
        for (const auto& [tn, tv] : truth_values)
            if (tn == p.name) p.truth = tv;
        double sum = 0.0, sq = 0.0, mse = 0.0;
        for (const auto& r : runs) {
            const double v = natural_parameters(r.fit.theta_hat)[k].second;
            sum += v;
            mse += (v - p.truth) * (v - p.truth);
        }
        p.mean = sum / n;
        for (const auto& r : runs) {
            const double v = natural_parameters(r.fit.theta_hat)[k].second;
            sq += (v - p.mean) * (v - p.mean);
        }
        p.bias = p.mean - p.truth;
        if (runs.size() > 1) p.se = std::sqrt(sq / (n - 1.0));
        p.mse = mse / n;
        s.parameters.push_back(p);
    }

    // metric keys in first-seen order; a stratum absent from some run averages over the rest
    std::vector<std::tuple<std::string, std::string, std::string>> keys;
    std::map<std::tuple<std::string, std::string, std::string>, std::vector<double>> values;
    for (const auto& r : runs)
        for (const auto& m : r.models)
            for (const auto& rep : m.strata) {
                const auto vals = scalar_metrics(rep);
                for (std::size_t q = 0; q < vals.size(); ++q) {
                    auto key = std::make_tuple(std::string(model_name(m.kind)), rep.stratum, scalar_metric_names()[q]);
                    auto [it, inserted] = values.try_emplace(key);
                    if (inserted) keys.push_back(key);
                    it->second.push_back(vals[q]);
                }
            }
    for (const auto& key : keys) {
        const auto& v = values[key];
        MetricSummary m{std::get<0>(key), std::get<1>(key), std::get<2>(key), 0.0, std::nullopt};
        double sum = 0.0;
        for (double x : v) sum += x;
        m.mean = sum / static_cast<double>(v.size());
        if (v.size() > 1) {
            double sq = 0.0;
            for (double x : v) sq += (x - m.mean) * (x - m.mean);
            m.sd = std::sqrt(sq / static_cast<double>(v.size() - 1));
        }
        s.metrics.push_back(m);
    }
    return s;
}

std::vector<ReplicationResult> run_replications(const RunConfig& cfg, std::vector<std::string>* failures) {
    std::vector<ReplicationResult> out;
    for (int i = 0; i < cfg.replications; ++i) {
        try {
            out.push_back(run_replication(cfg, i));
            log::info("replication " + std::to_string(i) + " done");
        } catch (const Error& e) {
            const std::string msg = "replication " + std::to_string(i) + " failed: " + e.code() + ": " + e.what();
            log::warn(msg);
            if (failures) failures->push_back(msg);
        }
    }
    return out;
}

// ---- bootstrap -----------------------------------------------------------------------

namespace {

std::vector<double> flat_metrics(const std::vector<MetricsReport>& strata, const std::vector<std::string>& labels) {
    std::vector<double> out;
    for (const auto& label : labels) {
        auto it = std::find_if(strata.begin(), strata.end(), [&](const MetricsReport& r) { return r.stratum == label; });
        if (it == strata.end()) throw Error("missing_stratum", "stratum " + label + " could not be evaluated");
        const auto v = scalar_metrics(*it);
        out.insert(out.end(), v.begin(), v.end());
    }
    return out;
}

std::vector<MetricsReport> score(const GlmModel& glm, std::span<const IndividualRecord> recs, std::span<const int> y) {
    const auto pred = predict(glm, design_for(ModelKind::Imputed, recs));
    return evaluate_strata(pred, y, recs);
}

std::vector<int> imputed_outcomes(const ImputationResult& im) {
    std::vector<int> y(im.rows.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = im.rows[i].d_cf;
    return y;
}

}  // namespace

BootstrapReport bootstrap_imputed_model(const RunConfig& cfg, const Dataset& train, const HmmParams& full_fit,
                                        const ImputationResult& full_imputation) {
    const auto recs = train.records();
    const std::vector<int> y_full = imputed_outcomes(full_imputation);
    const GlmModel apparent_glm = fit_logistic(design_for(ModelKind::Imputed, recs), y_full);
    const auto apparent_strata = score(apparent_glm, recs, y_full);

    BootstrapReport rep;
    std::vector<std::string> labels;
    for (const auto& r : apparent_strata) {
        labels.push_back(r.stratum);
        for (const auto& m : scalar_metric_names()) rep.names.push_back(r.stratum + "/" + m);
    }
    const std::vector<double> apparent = flat_metrics(apparent_strata, labels);

    FitOptions fo = cfg.fit;
    fo.threads = 1;
    BootstrapIteration iteration = [&](std::span<const std::size_t> idx, std::uint64_t seed) {
        std::vector<IndividualRecord> sample;
        sample.reserve(idx.size());
        for (std::size_t k = 0; k < idx.size(); ++k) {
            IndividualRecord r = recs[idx[k]];
            r.id += "#" + std::to_string(k);
            sample.push_back(std::move(r));
        }
        const Dataset boot(std::move(sample), train.horizon());
        const FitResult fit = fit_mle(boot, full_fit, fo);
        ImputationOptions io = cfg.imputation;
        io.threads = 1;
        const ImputationResult im = impute_counterfactual_outcomes(fit.theta_hat, boot, cfg.reference, seed, io);
        const std::vector<int> y_boot = imputed_outcomes(im);
        const GlmModel glm = fit_logistic(design_for(ModelKind::Imputed, boot.records()), y_boot);
        return BootstrapSample{flat_metrics(score(glm, boot.records(), y_boot), labels),
                               flat_metrics(score(glm, recs, y_full), labels)};
    };
    BootstrapOptions bo;
    bo.replicates = cfg.bootstrap;
    bo.seed = derive_seed(cfg.seed, 0xb007);
    bo.threads = cfg.threads;
    rep.result = bootstrap_optimism(recs.size(), apparent, iteration, bo);
    return rep;
}

}  // namespace cfhmm
