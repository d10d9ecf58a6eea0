#include "canonmp/solve.hpp"

#include <algorithm>
#include <cmath>

namespace canonmp {

int grid_resolution(int ugrid, std::size_t dims) {
    if (dims <= 1)
        return ugrid;
    // Keep the product grid near 2e4 points.
    const int cap = static_cast<int>(std::floor(std::pow(2e4, 1.0 / static_cast<double>(dims))));
    return std::max(11, std::min(ugrid, cap));
}

namespace {

std::vector<double> axis(const ControlDecl& c, int res) {
    if (c.is_finite()) {
        std::vector<double> pts = c.points;
        std::sort(pts.begin(), pts.end());
        return pts;
    }
    const double lo = c.box->lo;
    const double hi = c.box->hi;
    if (lo == hi || res < 2)
        return {lo};
    std::vector<double> out(static_cast<std::size_t>(res));
    for (int k = 0; k < res; ++k)
        out[static_cast<std::size_t>(k)] = k + 1 == res ? hi : lo + (hi - lo) * k / (res - 1);
    return out;
}

}  // namespace

std::vector<double> maximize_H(const ControlObjective& H, const std::vector<ControlDecl>& V, const SolverConfig& cfg) {
    std::size_t box_dims = 0;
    for (const ControlDecl& c : V)
        box_dims += c.is_finite() ? 0 : 1;
    const int res = grid_resolution(cfg.ugrid, box_dims);

    std::vector<std::vector<double>> axes;
    for (const ControlDecl& c : V)
        axes.push_back(axis(c, res));

    std::vector<std::size_t> idx(V.size(), 0);
    std::vector<double> u(V.size()), best;
    double best_value = -INFINITY;
    bool found = false;
    bool done = false;
    while (!done) {
        for (std::size_t d = 0; d < V.size(); ++d)
            u[d] = axes[d][idx[d]];
        const double h = H(u);
        if (!std::isnan(h) && (!found || h > best_value)) {
            found = true;
            best = u;
            best_value = h;
        }
        done = true;
        for (std::size_t d = V.size(); d-- > 0;) {
            if (++idx[d] < axes[d].size()) {
                done = false;
                break;
            }
            idx[d] = 0;
        }
    }
    if (!found)
        throw std::runtime_error("H is NaN on every grid point");

    constexpr double kInvPhi = 0.6180339887498949;
    for (int pass = 0; pass < cfg.refine_passes; ++pass) {
        for (std::size_t d = 0; d < V.size(); ++d) {
            if (V[d].is_finite() || axes[d].size() < 2)
                continue;
            const double step = axes[d][1] - axes[d][0];
            double a = std::max(V[d].box->lo, best[d] - step);
            double b = std::min(V[d].box->hi, best[d] + step);
            std::vector<double> probe = best;
            auto f = [&](double x) {
                probe[d] = x;
                const double v = H(probe);
                return std::isnan(v) ? -INFINITY : v;
            };
            double c = b - kInvPhi * (b - a);
            double e = a + kInvPhi * (b - a);
            double fc = f(c);
            double fe = f(e);
            for (int it = 0; it < 80 && b - a > 1e-13 * (1.0 + std::abs(a) + std::abs(b)); ++it) {
                if (fc >= fe) {
                    b = e;
                    e = c;
                    fe = fc;
                    c = b - kInvPhi * (b - a);
                    fc = f(c);
                } else {
                    a = c;
                    c = e;
                    fc = fe;
                    e = a + kInvPhi * (b - a);
                    fe = f(e);
                }
            }
            const double x = fc >= fe ? c : e;
            const double fx = std::max(fc, fe);
            if (fx > best_value) {
                best[d] = x;
                best_value = fx;
            }
        }
    }
    return best;
}

}  // namespace canonmp
