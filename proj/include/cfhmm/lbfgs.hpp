#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace cfhmm {

// Objective returns f(x) and writes df/dx into `grad`. Returning a non-finite value
// marks x as infeasible; the line search then backtracks.
using GradientObjective = std::function<double(std::span<const double> x, std::span<double> grad)>;

struct LbfgsOptions {
    double tol_g = 1e-6;      // max-norm of the gradient
    int max_iter = 10000;
    int memory = 10;
    int max_restarts = 3;     // memory resets after a failed line search
    int max_line_search = 40;
    double max_step = 5.0;    // cap on the max-norm of the first trial step of each search
};

struct LbfgsResult {
    std::vector<double> x;
    double f = 0.0;
    std::vector<double> grad;
    int iterations = 0;
    int evaluations = 0;
    double grad_norm = 0.0;
    bool converged = false;
    std::string diagnostic;
};

using IterationCallback = std::function<void(int iteration, double f, double grad_norm)>;

// Limited-memory BFGS minimisation with a strong-Wolfe line search.
LbfgsResult minimize_lbfgs(const GradientObjective& objective, std::vector<double> x0, const LbfgsOptions& opts,
                           const IterationCallback& on_iteration = {});

}  // namespace cfhmm
