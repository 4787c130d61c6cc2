#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "cfhmm/cohort_io.hpp"
#include "cfhmm/counterfactual.hpp"
#include "cfhmm/error.hpp"
#include "cfhmm/inference.hpp"
#include "cfhmm/pipeline.hpp"
#include "cfhmm/prediction.hpp"
#include "cfhmm/simulation.hpp"

namespace py = pybind11;
using nlohmann::json;
using namespace cfhmm;

// Structured values cross the boundary as JSON text; the Python package decodes them.
namespace {

RunConfig config_from(const std::string& text) { return run_config_from_json(json::parse(text.empty() ? "{}" : text)); }

std::vector<int> results_of(const IndividualRecord& r) {
    std::vector<int> v;
    for (TestResult t : r.results) v.push_back(static_cast<int>(t));
    return v;
}

IndividualRecord record_from(std::string id, std::vector<double> x, std::vector<int> a, const std::vector<int>& results) {
    IndividualRecord r{std::move(id), std::move(x), std::move(a), {}};
    for (int v : results) {
        if (v < 0 || v >= kNumResults) throw Error("invalid_record", "result codes are 0..3");
        r.results.push_back(static_cast<TestResult>(v));
    }
    return r;
}

std::string simulate(const std::string& config, bool counterfactual_world, std::vector<IndividualRecord>* out) {
    const RunConfig cfg = config_from(config);
    ScenarioConfig sc = cfg.scenario;
    sc.reference = cfg.reference;
    sc.seed = cfg.seed;
    sc.counterfactual_world = counterfactual_world;
    py::gil_scoped_release release;
    SimulatedCohort c = generate(sc, cfg.threads);
    json truth = json::array();
    for (const auto& t : c.truth) truth.push_back({{"stages", t.stages}, {"baseline_late", t.baseline_late}, {"d_cf", t.d_cf}});
    *out = std::move(c.records);
    return truth.dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Counterfactual hidden Markov model core";
    m.attr("__version__") = CFHMM_VERSION;

    static py::exception<Error> error(m, "Error", PyExc_RuntimeError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            PyErr_SetString(error.ptr(), (e.code() + ": " + e.what()).c_str());
        } catch (const json::exception& e) {
            PyErr_SetString(error.ptr(), (std::string("invalid_json: ") + e.what()).c_str());
        }
    });

    py::class_<IndividualRecord>(m, "Record")
        .def(py::init(&record_from), py::arg("id"), py::arg("x"), py::arg("a"), py::arg("results"))
        .def_readwrite("id", &IndividualRecord::id)
        .def_readwrite("x", &IndividualRecord::x)
        .def_readwrite("a", &IndividualRecord::a)
        .def_property_readonly("results", &results_of)
        .def_property_readonly("diagnosed", &IndividualRecord::diagnosed)
        .def("__repr__", [](const IndividualRecord& r) { return "<Record " + r.id + ">"; });

    m.def(
        "simulate",
        [](const std::string& config, bool counterfactual_world) {
            std::vector<IndividualRecord> recs;
            std::string truth = simulate(config, counterfactual_world, &recs);
            return py::make_tuple(recs, truth);
        },
        py::arg("config") = "", py::arg("counterfactual_world") = false);

    m.def("resolve_config", [](const std::string& config) { return run_config_to_json(config_from(config)).dump(); },
          py::arg("config") = "");

    m.def("read_cohort", &read_cohort_csv, py::arg("baseline"), py::arg("panel"), py::arg("horizon"));
    m.def(
        "write_cohort",
        [](const std::string& baseline, const std::string& panel, const std::vector<IndividualRecord>& recs) {
            write_baseline_csv(baseline, recs);
            write_panel_csv(panel, recs);
        },
        py::arg("baseline"), py::arg("panel"), py::arg("records"));

    m.def(
        "log_likelihood",
        [](const std::string& params, const std::vector<IndividualRecord>& recs, int horizon) {
            const HmmParams theta = params_from_json(json::parse(params));
            const Dataset data(recs, horizon);
            py::gil_scoped_release release;
            return dataset_log_likelihood(theta, data);
        },
        py::arg("params"), py::arg("records"), py::arg("horizon"));

    m.def(
        "fit",
        [](const std::vector<IndividualRecord>& recs, int horizon, const std::string& config) {
            const RunConfig cfg = config_from(config);
            const Dataset data(training_records(cfg, recs), horizon);
            const auto& r0 = data.records().front();
            const HmmParams init = fit_shape(cfg, static_cast<int>(r0.x.size()), static_cast<int>(r0.a.size()), horizon);
            FitOptions fo = cfg.fit;
            fo.threads = cfg.threads;
            py::gil_scoped_release release;
            return fit_result_to_json(fit_mle(data, init, fo)).dump();
        },
        py::arg("records"), py::arg("horizon"), py::arg("config") = "");

    m.def(
        "counterfactual_probabilities",
        [](const std::string& params, const std::vector<IndividualRecord>& recs, int horizon, const std::vector<int>& reference) {
            const HmmParams theta = params_from_json(json::parse(params));
            const Dataset data(recs, horizon);
            py::gil_scoped_release release;
            return counterfactual_probabilities(theta, data, reference);
        },
        py::arg("params"), py::arg("records"), py::arg("horizon"), py::arg("reference"));

    m.def(
        "impute",
        [](const std::string& params, const std::vector<IndividualRecord>& recs, int horizon,
           const std::vector<int>& reference, std::uint64_t seed, bool per_stratum) {
            const HmmParams theta = params_from_json(json::parse(params));
            const Dataset data(recs, horizon);
            ImputationOptions opt;
            opt.per_stratum = per_stratum;
            ImputationResult im;
            {
                py::gil_scoped_release release;
                im = impute_counterfactual_outcomes(theta, data, reference, seed, opt);
            }
            json rows = json::array(), groups = json::array();
            for (const auto& r : im.rows)
                rows.push_back({{"id", r.id}, {"p_cf", r.p_cf}, {"factor_applied", r.factor_applied},
                                {"d_observed", r.d_observed}, {"d_cf", r.d_cf}, {"reimputed", r.reimputed}});
            for (std::size_t g = 0; g < im.groups.size(); ++g) {
                const auto& rc = im.groups[g];
                groups.push_back({{"key", im.group_keys[g]}, {"factor", rc.factor}, {"raw_factor", rc.raw_factor},
                                  {"size", rc.group_size}, {"clamped", rc.clamped}});
            }
            return json{{"rows", rows}, {"groups", groups}, {"clamped_probabilities", im.clamped_probabilities}}.dump();
        },
        py::arg("params"), py::arg("records"), py::arg("horizon"), py::arg("reference"), py::arg("seed"),
        py::arg("per_stratum") = false);

    m.def(
        "auroc", [](const std::vector<double>& pred, const std::vector<int>& y) { return auroc(pred, y); }, py::arg("pred"), py::arg("outcome"));
    m.def(
        "metrics",
        [](const std::vector<double>& pred, const std::vector<int>& y) {
            const MetricsReport r = evaluate_metrics(pred, y, "overall");
            json out;
            const auto& names = scalar_metric_names();
            const auto values = scalar_metrics(r);
            for (std::size_t k = 0; k < names.size(); ++k) out[names[k]] = values[k];
            return out.dump();
        },
        py::arg("pred"), py::arg("outcome"));

    m.def(
        "replicate",
        [](const std::string& config) {
            const RunConfig cfg = config_from(config);
            std::vector<ReplicationResult> runs;
            {
                py::gil_scoped_release release;
                runs = run_replications(cfg);
            }
            if (runs.empty()) throw Error("all_replications_failed", "no replication succeeded");
            const ReplicationSummary s = summarize(runs, cfg.scenario.truth, cfg.replications);
            json params = json::array(), metrics = json::array();
            for (const auto& p : s.parameters)
                params.push_back({{"name", p.name}, {"truth", p.truth}, {"mean", p.mean}, {"bias", p.bias},
                                  {"se", p.se ? json(*p.se) : json(nullptr)}, {"mse", p.mse}});
            for (const auto& mm : s.metrics)
                metrics.push_back({{"model", mm.model}, {"stratum", mm.stratum}, {"metric", mm.metric}, {"mean", mm.mean},
                                   {"sd", mm.sd ? json(*mm.sd) : json(nullptr)}});
            return json{{"requested", s.requested}, {"effective", s.effective}, {"parameters", params}, {"metrics", metrics}}
                .dump();
        },
        py::arg("config") = "");
}
