#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cfhmm {

inline constexpr int kNumStages = 3;
inline constexpr int kNumResults = 4;

enum class DiseaseStage : std::uint8_t { None = 0, Early = 1, Late = 2 };

enum class TestResult : std::uint8_t { Negative = 0, EarlyPositive = 1, LatePositive = 2, NoTest = 3 };

constexpr bool is_positive(TestResult r) noexcept {
    return r == TestResult::EarlyPositive || r == TestResult::LatePositive;
}

// One person's baseline data and per-timepoint results. Follow-up ends at the first
// positive result (diagnosis) or at the study horizon.
struct IndividualRecord {
    std::string id;
    std::vector<double> x;        // risk-only covariates
    std::vector<int> a;           // observability attributes, 0/1
    std::vector<TestResult> results;  // results[t-1] for t = 1..T_n

    int follow_up() const noexcept { return static_cast<int>(results.size()); }
    bool diagnosed() const noexcept { return !results.empty() && is_positive(results.back()); }
};

// Throws cfhmm::Error("invalid_record") if the censoring invariants do not hold for
// study horizon `horizon`.
void validate_record(const IndividualRecord& rec, int horizon);

// Builds a record from a result sequence that may extend past diagnosis; truncates at the
// first positive.
IndividualRecord make_record(std::string id, std::vector<double> x, std::vector<int> a,
                             std::span<const TestResult> full_results);

}  // namespace cfhmm
