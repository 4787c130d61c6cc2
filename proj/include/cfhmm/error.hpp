#pragma once

#include <stdexcept>
#include <string>

namespace cfhmm {

// Every failure carries a short machine-readable code (e.g. "impossible_observation")
// alongside the human message. The CLI prints both on one line.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& message) : Error("dimension_mismatch", message) {}
};

class ImpossibleObservation : public Error {
public:
    ImpossibleObservation(std::string id, int t, int result)
        : Error("impossible_observation",
                "record '" + id + "': result " + std::to_string(result) + " at t=" + std::to_string(t) +
                    " has zero probability under the model"),
          id_(std::move(id)), t_(t), result_(result) {}

    const std::string& id() const noexcept { return id_; }
    int t() const noexcept { return t_; }
    int result() const noexcept { return result_; }

private:
    std::string id_;
    int t_;
    int result_;
};

}  // namespace cfhmm
