#include "cfhmm/cohort_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cfhmm/error.hpp"

namespace cfhmm {

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("io_error", "cannot write '" + path + "'");
    return os;
}

void finish(std::ofstream& os, const std::string& path) {
    os.flush();
    if (!os) throw Error("io_error", "write to '" + path + "' failed");
}

std::ifstream open_in(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("io_error", "cannot read '" + path + "'");
    return is;
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

[[noreturn]] void parse_fail(const std::string& path, int line, const std::string& what) {
    throw Error("parse_error", path + ":" + std::to_string(line) + ": " + what);
}

double to_double(const std::string& s, const std::string& path, int line) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || s.empty()) parse_fail(path, line, "not a number: '" + s + "'");
    return v;
}

int to_int(const std::string& s, const std::string& path, int line) {
    int v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || s.empty()) parse_fail(path, line, "not an integer: '" + s + "'");
    return v;
}

void check_id(const std::string& id) {
    if (id.empty() || id.find_first_of(",\n\r\"") != std::string::npos)
        throw Error("invalid_record", "id '" + id + "' is empty or contains a comma, quote or newline");
}

}  // namespace

void write_baseline_csv(const std::string& path, const std::vector<IndividualRecord>& recs) {
    auto os = open_out(path);
    const std::size_t nx = recs.empty() ? 0 : recs[0].x.size();
    const std::size_t na = recs.empty() ? 0 : recs[0].a.size();
    os << "id";
    for (std::size_t k = 0; k < nx; ++k) os << ",x" << k + 1;
    for (std::size_t k = 0; k < na; ++k) os << ",a" << k + 1;
    os << '\n';
    for (const auto& r : recs) {
        check_id(r.id);
        if (r.x.size() != nx || r.a.size() != na) throw DimensionError("record '" + r.id + "' has a different layout");
        os << r.id;
        for (double v : r.x) os << ',' << format_double(v);
        for (int v : r.a) os << ',' << v;
        os << '\n';
    }
    finish(os, path);
}

void write_panel_csv(const std::string& path, const std::vector<IndividualRecord>& recs) {
    auto os = open_out(path);
    os << "id,t,r\n";
    for (const auto& r : recs) {
        check_id(r.id);
        for (int t = 0; t < r.follow_up(); ++t) os << r.id << ',' << t + 1 << ',' << static_cast<int>(r.results[t]) << '\n';
    }
    finish(os, path);
}

void write_truth_csv(const std::string& path, const SimulatedCohort& c) {
    auto os = open_out(path);
    os << "id,t,s_true\n";
    for (std::size_t i = 0; i < c.records.size(); ++i) {
        const auto& st = c.truth[i].stages;
        for (std::size_t t = 0; t < st.size(); ++t) os << c.records[i].id << ',' << t + 1 << ',' << int(st[t]) << '\n';
    }
    finish(os, path);
}

std::vector<IndividualRecord> read_cohort_csv(const std::string& baseline_path, const std::string& panel_path,
                                              int horizon) {
    std::vector<IndividualRecord> recs;
    std::map<std::string, std::size_t> index;
    {
        auto is = open_in(baseline_path);
        std::string line;
        if (!std::getline(is, line)) parse_fail(baseline_path, 1, "missing header");
        const auto header = split(line);
        if (header.empty() || header[0] != "id") parse_fail(baseline_path, 1, "first column must be 'id'");
        std::size_t nx = 0, na = 0;
        for (std::size_t k = 1; k < header.size(); ++k) {
            const std::string& h = header[k];
            if (!h.empty() && h[0] == 'x' && na == 0) ++nx;
            else if (!h.empty() && h[0] == 'a') ++na;
            else parse_fail(baseline_path, 1, "column '" + h + "' must be x<k> (before any a<k>) or a<k>");
        }
        int ln = 1;
        while (std::getline(is, line)) {
            ++ln;
            if (line.empty() || line == "\r") continue;
            const auto f = split(line);
            if (f.size() != header.size())
                parse_fail(baseline_path, ln, "expected " + std::to_string(header.size()) + " fields");
            IndividualRecord r;
            r.id = f[0];
            for (std::size_t k = 0; k < nx; ++k) r.x.push_back(to_double(f[1 + k], baseline_path, ln));
            for (std::size_t k = 0; k < na; ++k) {
                const int a = to_int(f[1 + nx + k], baseline_path, ln);
                if (a != 0 && a != 1) parse_fail(baseline_path, ln, "attributes must be 0 or 1");
                r.a.push_back(a);
            }
            if (!index.emplace(r.id, recs.size()).second) parse_fail(baseline_path, ln, "duplicate id '" + r.id + "'");
            recs.push_back(std::move(r));
        }
    }
    std::vector<std::vector<int>> panel(recs.size(), std::vector<int>(horizon, 3));
    {
        auto is = open_in(panel_path);
        std::string line;
        if (!std::getline(is, line) || split(line) != std::vector<std::string>{"id", "t", "r"})
            parse_fail(panel_path, 1, "header must be id,t,r");
        int ln = 1;
        std::string prev_id;
        int prev_t = 0;
        while (std::getline(is, line)) {
            ++ln;
            if (line.empty() || line == "\r") continue;
            const auto f = split(line);
            if (f.size() != 3) parse_fail(panel_path, ln, "expected 3 fields");
            auto it = index.find(f[0]);
            if (it == index.end()) parse_fail(panel_path, ln, "id '" + f[0] + "' not in the baseline file");
            const int t = to_int(f[1], panel_path, ln);
            const int r = to_int(f[2], panel_path, ln);
            if (t < 1 || t > horizon) parse_fail(panel_path, ln, "t outside [1, " + std::to_string(horizon) + "]");
            if (r < 0 || r > 3) parse_fail(panel_path, ln, "r must be 0..3");
            if (f[0] < prev_id || (f[0] == prev_id && t <= prev_t))
                parse_fail(panel_path, ln, "rows must be sorted by (id, t) without duplicates");
            prev_id = f[0];
            prev_t = t;
            panel[it->second][t - 1] = r;
        }
    }
    for (std::size_t i = 0; i < recs.size(); ++i) {
        std::vector<TestResult> full(horizon);
        for (int t = 0; t < horizon; ++t) full[t] = static_cast<TestResult>(panel[i][t]);
        IndividualRecord& r = recs[i];
        r = make_record(std::move(r.id), std::move(r.x), std::move(r.a), full);
        // rows after the first positive would be silently dropped by make_record
        for (int t = r.follow_up(); t < horizon; ++t)
            if (panel[i][t] != 3)
                throw Error("invalid_record", panel_path + ": record '" + r.id + "' has results after diagnosis");
        validate_record(r, horizon);
    }
    return recs;
}

void write_imputed_csv(const std::string& path, const ImputationResult& imp) {
    auto os = open_out(path);
    os << "id,p_cf,factor_applied,d_observed,d_cf\n";
    for (const auto& r : imp.rows)
        os << r.id << ',' << format_double(r.p_cf) << ',' << format_double(r.factor_applied) << ',' << r.d_observed
           << ',' << r.d_cf << '\n';
    finish(os, path);
}

void write_trace_csv(const std::string& path, const FitResult& fit) {
    auto os = open_out(path);
    os << "iteration,log_likelihood,gradient_norm\n";
    for (const auto& p : fit.trace)
        os << p.iteration << ',' << format_double(p.log_likelihood) << ',' << format_double(p.gradient_norm) << '\n';
    finish(os, path);
}

void write_metrics_csv(const std::string& path, const std::vector<ModelEvaluation>& evals) {
    auto os = open_out(path);
    os << "model,stratum,n,events,metric,value\n";
    for (const auto& e : evals)
        for (const auto& r : e.strata) {
            const auto v = scalar_metrics(r);
            for (std::size_t q = 0; q < v.size(); ++q)
                os << model_name(e.kind) << ',' << r.stratum << ',' << r.n << ',' << r.events << ','
                   << scalar_metric_names()[q] << ',' << format_double(v[q]) << '\n';
        }
    finish(os, path);
}

void write_deciles_csv(const std::string& path, const std::vector<ModelEvaluation>& evals) {
    auto os = open_out(path);
    os << "model,stratum,bin,mean_pred,observed,count\n";
    for (const auto& e : evals)
        for (const auto& r : e.strata)
            for (std::size_t b = 0; b < r.deciles.size(); ++b)
                os << model_name(e.kind) << ',' << r.stratum << ',' << b + 1 << ',' << format_double(r.deciles[b].mean_pred)
                   << ',' << format_double(r.deciles[b].observed) << ',' << r.deciles[b].count << '\n';
    finish(os, path);
}

void write_net_benefit_csv(const std::string& path, const std::vector<ModelEvaluation>& evals) {
    auto os = open_out(path);
    os << "model,stratum,threshold,net_benefit,treat_all,treat_none\n";
    for (const auto& e : evals)
        for (const auto& r : e.strata)
            for (const auto& p : r.net_benefit)
                os << model_name(e.kind) << ',' << r.stratum << ',' << format_double(p.threshold) << ','
                   << format_double(p.model) << ',' << format_double(p.treat_all) << ',' << format_double(p.treat_none)
                   << '\n';
    finish(os, path);
}

void write_bootstrap_csv(const std::string& path, const BootstrapReport& rep) {
    auto os = open_out(path);
    os << "stratum,metric,apparent,optimism,corrected,effective_replicates\n";
    for (std::size_t k = 0; k < rep.names.size(); ++k) {
        const auto slash = rep.names[k].find('/');
        os << rep.names[k].substr(0, slash) << ',' << rep.names[k].substr(slash + 1) << ','
           << format_double(rep.result.apparent[k]) << ',' << format_double(rep.result.optimism[k]) << ','
           << format_double(rep.result.corrected[k]) << ',' << rep.result.effective_replicates << '\n';
    }
    finish(os, path);
}

void write_replications_csv(const std::string& path, const std::vector<ReplicationResult>& runs) {
    auto os = open_out(path);
    os << "replication,seed,kind,model,stratum,name,value\n";
    for (const auto& r : runs) {
        const std::string head = std::to_string(r.index) + ',' + std::to_string(r.seed) + ',';
        for (const auto& [name, v] : natural_parameters(r.fit.theta_hat))
            os << head << "parameter,,," << name << ',' << format_double(v) << '\n';
        os << head << "fit,,,log_likelihood," << format_double(r.fit.log_likelihood) << '\n';
        os << head << "fit,,,converged," << (r.fit.converged ? 1 : 0) << '\n';
        os << head << "fit,,,iterations," << r.fit.iterations << '\n';
        for (std::size_t g = 0; g < r.imputation.groups.size(); ++g)
            os << head << "imputation,,group" << g << ",recalibration_factor,"
               << format_double(r.imputation.groups[g].factor) << '\n';
        for (const auto& m : r.models)
            for (const auto& rep : m.strata) {
                const auto v = scalar_metrics(rep);
                for (std::size_t q = 0; q < v.size(); ++q)
                    os << head << "metric," << model_name(m.kind) << ',' << rep.stratum << ','
                       << scalar_metric_names()[q] << ',' << format_double(v[q]) << '\n';
            }
    }
    finish(os, path);
}

void write_parameter_summary_csv(const std::string& path, const ReplicationSummary& s) {
    auto os = open_out(path);
    os << "parameter,true_value,average_estimate,bias,empirical_se,mse,replications\n";
    for (const auto& p : s.parameters)
        os << p.name << ',' << format_double(p.truth) << ',' << format_double(p.mean) << ',' << format_double(p.bias)
           << ',' << (p.se ? format_double(*p.se) : "") << ',' << format_double(p.mse) << ',' << s.effective << '\n';
    finish(os, path);
}

void write_metric_summary_csv(const std::string& path, const ReplicationSummary& s) {
    auto os = open_out(path);
    os << "model,stratum,metric,mean,sd,replications\n";
    for (const auto& m : s.metrics)
        os << m.model << ',' << m.stratum << ',' << m.metric << ',' << format_double(m.mean) << ','
           << (m.sd ? format_double(*m.sd) : "") << ',' << s.effective << '\n';
    finish(os, path);
}

void write_json(const std::string& path, const nlohmann::json& j) {
    auto os = open_out(path);
    os << j.dump(2) << '\n';
    finish(os, path);
}

nlohmann::json read_json(const std::string& path) {
    auto is = open_in(path);
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error("parse_error", path + ": " + e.what());
    }
}

}  // namespace cfhmm
