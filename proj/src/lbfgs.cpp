#include "cfhmm/lbfgs.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include "cfhmm/error.hpp"

namespace cfhmm {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double max_abs(std::span<const double> a) {
    double m = 0.0;
    for (double v : a) m = std::max(m, std::abs(v));
    return m;
}

struct Pair {
    std::vector<double> s, y;
    double rho;
};

struct Point {
    double alpha = 0.0;
    double f = 0.0;
    double dphi = 0.0;
    std::vector<double> x, g;
};

class LineSearch {
public:
    LineSearch(const GradientObjective& obj, int max_evals, int& evaluations)
        : obj_(obj), max_evals_(max_evals), evaluations_(evaluations) {}

    // Strong Wolfe search along d from (x0, f0, g0). Returns false on failure.
    bool run(const std::vector<double>& x0, double f0, double dphi0, const std::vector<double>& d, double alpha1,
             Point& out) {
        x0_ = &x0;
        d_ = &d;
        f0_ = f0;
        dphi0_ = dphi0;
        evals_ = 0;
        Point prev;
        prev.alpha = 0.0;
        prev.f = f0;
        prev.dphi = dphi0;
        double alpha = alpha1;
        for (int i = 0; evals_ < max_evals_; ++i) {
            Point cur = eval(alpha);
            if (!std::isfinite(cur.f)) {
                alpha = 0.5 * (prev.alpha + alpha);
                if (alpha - prev.alpha < 1e-20) return false;
                continue;
            }
            if (approx_wolfe(cur)) {
                out = std::move(cur);
                return true;
            }
            if (!armijo(cur) || (i > 0 && cur.f >= prev.f)) return zoom(prev, cur, out);
            if (curvature(cur)) {
                out = std::move(cur);
                return true;
            }
            if (cur.dphi >= 0) return zoom(cur, prev, out);
            prev = std::move(cur);
            alpha *= 2.0;
        }
        return false;
    }

private:
    static constexpr double kC1 = 1e-4;
    static constexpr double kC2 = 0.9;
    static constexpr double kDelta = 0.1;

    Point eval(double alpha) {
        Point p;
        p.alpha = alpha;
        p.x.resize(x0_->size());
        p.g.assign(x0_->size(), 0.0);
        for (std::size_t i = 0; i < p.x.size(); ++i) p.x[i] = (*x0_)[i] + alpha * (*d_)[i];
        p.f = obj_(p.x, p.g);
        ++evals_;
        ++evaluations_;
        p.dphi = std::isfinite(p.f) ? dot(p.g, *d_) : std::numeric_limits<double>::quiet_NaN();
        return p;
    }

    // Sufficient decrease, with a round-off allowance so that the search can still make
    // progress once f has stopped changing at double precision.
    bool armijo(const Point& p) const {
        if (p.f <= f0_ + kC1 * p.alpha * dphi0_) return true;
        return p.f <= f0_ + noise() && p.dphi <= 0.0 && std::abs(p.dphi) < std::abs(dphi0_);
    }

    bool curvature(const Point& p) const { return std::abs(p.dphi) <= -kC2 * dphi0_; }

    double noise() const { return 1e-12 * (1.0 + std::abs(f0_)); }
    bool in_noise(const Point& p) const { return std::abs(p.f - f0_) <= noise(); }

    // Once f differences are at round-off level only the directional derivative is
    // informative; accept kC2*dphi0 <= dphi <= (2*kDelta - 1)*dphi0 (Hager-Zhang).
    bool approx_wolfe(const Point& p) const {
        return in_noise(p) && p.dphi >= kC2 * dphi0_ && p.dphi <= (2.0 * kDelta - 1.0) * dphi0_;
    }

    bool zoom(Point lo, Point hi, Point& out) {
        while (evals_ < max_evals_) {
            double alpha = cubic_min(lo, hi);
            const double lo_a = std::min(lo.alpha, hi.alpha), hi_a = std::max(lo.alpha, hi.alpha);
            const double width = hi_a - lo_a;
            if (!(alpha > lo_a + 0.1 * width && alpha < hi_a - 0.1 * width)) alpha = 0.5 * (lo.alpha + hi.alpha);
            if (width < 1e-16 * std::max(1.0, hi_a)) break;
            Point cur = eval(alpha);
            if (std::isfinite(cur.f) && approx_wolfe(cur)) {
                out = std::move(cur);
                return true;
            }
            if (std::isfinite(cur.f) && in_noise(cur) && in_noise(lo)) {
                // f is flat to round-off: bracket on the sign of the derivative instead
                if ((cur.dphi >= 0) == (hi.alpha > lo.alpha)) hi = std::move(cur);
                else lo = std::move(cur);
                continue;
            }
            if (!std::isfinite(cur.f) || !armijo(cur) || cur.f >= lo.f) {
                hi = std::move(cur);
                continue;
            }
            if (curvature(cur)) {
                out = std::move(cur);
                return true;
            }
            if (cur.dphi * (hi.alpha - lo.alpha) >= 0) hi = lo;
            lo = std::move(cur);
        }
        // Accept the best decreasing point if one was found.
        if (lo.alpha > 0.0 && (lo.f < f0_ || (in_noise(lo) && std::abs(lo.dphi) < std::abs(dphi0_)))) {
            out = std::move(lo);
            return true;
        }
        return false;
    }

    static double cubic_min(const Point& a, const Point& b) {
        if (!std::isfinite(b.f) || !std::isfinite(b.dphi)) return 0.5 * (a.alpha + b.alpha);
        const double d1 = a.dphi + b.dphi - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
        const double disc = d1 * d1 - a.dphi * b.dphi;
        if (disc < 0) return 0.5 * (a.alpha + b.alpha);
        const double d2 = std::copysign(std::sqrt(disc), b.alpha - a.alpha);
        return b.alpha - (b.alpha - a.alpha) * (b.dphi + d2 - d1) / (b.dphi - a.dphi + 2.0 * d2);
    }

    const GradientObjective& obj_;
    int max_evals_;
    int& evaluations_;
    int evals_ = 0;
    const std::vector<double>* x0_ = nullptr;
    const std::vector<double>* d_ = nullptr;
    double f0_ = 0.0, dphi0_ = 0.0;
};

}  // namespace

LbfgsResult minimize_lbfgs(const GradientObjective& objective, std::vector<double> x0, const LbfgsOptions& opts,
                           const IterationCallback& on_iteration) {
    const std::size_t n = x0.size();
    LbfgsResult res;
    res.x = std::move(x0);
    res.grad.assign(n, 0.0);
    res.f = objective(res.x, res.grad);
    res.evaluations = 1;
    if (!std::isfinite(res.f)) throw Error("nan_objective", "objective is not finite at the initial point");
    for (double gi : res.grad)
        if (!std::isfinite(gi)) throw Error("nan_objective", "gradient is not finite at the initial point");
    res.grad_norm = max_abs(res.grad);
    if (on_iteration) on_iteration(0, res.f, res.grad_norm);

    std::deque<Pair> mem;
    std::vector<double> d(n), q(n), alpha_buf;
    int restarts = 0;
    LineSearch ls(objective, opts.max_line_search, res.evaluations);

    while (res.grad_norm > opts.tol_g && res.iterations < opts.max_iter) {
        // two-loop recursion
        q = res.grad;
        alpha_buf.assign(mem.size(), 0.0);
        for (std::size_t k = mem.size(); k-- > 0;) {
            alpha_buf[k] = mem[k].rho * dot(mem[k].s, q);
            for (std::size_t i = 0; i < n; ++i) q[i] -= alpha_buf[k] * mem[k].y[i];
        }
        double gamma = 1.0;
        if (!mem.empty()) gamma = dot(mem.back().s, mem.back().y) / dot(mem.back().y, mem.back().y);
        for (std::size_t i = 0; i < n; ++i) q[i] *= gamma;
        for (std::size_t k = 0; k < mem.size(); ++k) {
            const double beta = mem[k].rho * dot(mem[k].y, q);
            for (std::size_t i = 0; i < n; ++i) q[i] += (alpha_buf[k] - beta) * mem[k].s[i];
        }
        for (std::size_t i = 0; i < n; ++i) d[i] = -q[i];
        double dphi0 = dot(res.grad, d);
        if (!(dphi0 < 0)) {
            mem.clear();
            for (std::size_t i = 0; i < n; ++i) d[i] = -res.grad[i];
            dphi0 = dot(res.grad, d);
        }
        double alpha1 = 1.0;
        const double dmax = max_abs(d);
        if (mem.empty()) alpha1 = std::min(1.0, 1.0 / std::max(dmax, 1e-300));
        if (alpha1 * dmax > opts.max_step) alpha1 = opts.max_step / dmax;

        Point next;
        if (!ls.run(res.x, res.f, dphi0, d, alpha1, next)) {
            if (mem.empty() || ++restarts > opts.max_restarts) {
                res.diagnostic = "line search failed after " + std::to_string(restarts) + " restart(s)";
                break;
            }
            mem.clear();
            continue;
        }
        Pair p;
        p.s.resize(n);
        p.y.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            p.s[i] = next.x[i] - res.x[i];
            p.y[i] = next.g[i] - res.grad[i];
        }
        const double sy = dot(p.s, p.y);
        if (sy > 1e-16 * std::sqrt(dot(p.s, p.s) * dot(p.y, p.y))) {
            p.rho = 1.0 / sy;
            mem.push_back(std::move(p));
            if (static_cast<int>(mem.size()) > opts.memory) mem.pop_front();
        }
        res.x = std::move(next.x);
        res.grad = std::move(next.g);
        res.f = next.f;
        res.grad_norm = max_abs(res.grad);
        ++res.iterations;
        if (on_iteration) on_iteration(res.iterations, res.f, res.grad_norm);
    }
    res.converged = res.grad_norm <= opts.tol_g;
    if (!res.converged && res.diagnostic.empty() && res.iterations >= opts.max_iter)
        res.diagnostic = "iteration limit reached";
    return res;
}

}  // namespace cfhmm
