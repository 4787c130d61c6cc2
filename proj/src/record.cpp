#include "cfhmm/record.hpp"

#include "cfhmm/error.hpp"

namespace cfhmm {

void validate_record(const IndividualRecord& rec, int horizon) {
    auto fail = [&](const std::string& what) { throw Error("invalid_record", "record '" + rec.id + "': " + what); };
    const int tn = rec.follow_up();
    if (tn < 1 || tn > horizon) fail("follow-up length " + std::to_string(tn) + " outside [1, " + std::to_string(horizon) + "]");
    for (int a : rec.a)
        if (a != 0 && a != 1) fail("observability attributes must be 0 or 1");
    for (int t = 0; t < tn; ++t) {
        auto r = static_cast<int>(rec.results[t]);
        if (r < 0 || r > 3) fail("result code " + std::to_string(r) + " at t=" + std::to_string(t + 1));
        if (t + 1 < tn && is_positive(rec.results[t]))
            fail("positive result at t=" + std::to_string(t + 1) + " before end of follow-up");
    }
    if (!rec.diagnosed() && tn != horizon)
        fail("undiagnosed record censored at t=" + std::to_string(tn) + " before horizon " + std::to_string(horizon));
}

IndividualRecord make_record(std::string id, std::vector<double> x, std::vector<int> a,
                             std::span<const TestResult> full_results) {
    IndividualRecord rec{std::move(id), std::move(x), std::move(a), {}};
    for (TestResult r : full_results) {
        rec.results.push_back(r);
        if (is_positive(r)) break;
    }
    return rec;
}

}  // namespace cfhmm
