#include "canonmp/chatter.hpp"

#include "canonmp/solve.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace canonmp {

const std::vector<double>& ChatterPlan::control_at(double t) const {
    for (const Piece& pc : pieces)
        if (pc.t1 > pc.t0 && t >= pc.t0 && t < pc.t1)
            return pc.u;
    for (auto it = pieces.rbegin(); it != pieces.rend(); ++it)
        if (it->t1 > it->t0)
            return it->u;
    return pieces.back().u;
}

ChatterPlan build_plan(const RelaxedControl& rc, const Mesh& mesh, int i) {
    if (i < 1)
        throw std::invalid_argument("partition count must be positive");
    ChatterPlan plan;
    plan.i = i;
    plan.horizon = mesh.horizon();
    const double width = mesh.horizon() / i;
    for (int r = 0; r < i; ++r) {
        const double a = r * width;
        const double b = r + 1 == i ? mesh.horizon() : (r + 1) * width;
        const std::size_t k = mesh.interval_of(0.5 * (a + b));
        const auto& gamma = rc.gamma[k];
        double total = 0.0;
        for (double g : gamma)
            total += g;
        double t = a;
        for (std::size_t nu = 0; nu < gamma.size(); ++nu) {
            ChatterPlan::Piece pc;
            pc.r = static_cast<std::size_t>(r);
            pc.nu = nu;
            pc.gamma = gamma[nu] / total;
            pc.u = rc.values[k][nu];
            pc.t0 = t;
            // the last sub-subinterval absorbs rounding
            pc.t1 = nu + 1 == gamma.size() ? b : std::min(b, t + pc.gamma * (b - a));
            t = pc.t1;
            plan.pieces.push_back(std::move(pc));
        }
    }
    return plan;
}

namespace {

struct Simulator {
    const CanonicalProblem& p;
    Layout layout;
    PointFiller fill;
    std::vector<CompiledExpr> rhs;  // per state
    std::vector<std::size_t> ode_of_state;
    std::vector<double> a;

    Simulator(const CanonicalProblem& prob, const std::vector<double>& params)
        : p(prob), layout(prob.base_layout()), fill(prob, layout), a(params) {
        rhs.resize(p.states.size());
        std::vector<bool> bound(p.states.size(), false);
        for (const ConstraintSpec& c : p.constraints) {
            if (c.kind != ConstraintKind::Ode)
                throw UnsupportedError("chatter simulation handles ODE constraints only");
            const auto s = static_cast<std::size_t>(p.state_index(c.state));
            rhs[s] = CompiledExpr(c.expr, layout);
            bound[s] = true;
        }
        for (std::size_t s = 0; s < bound.size(); ++s)
            if (!bound[s])
                throw UnsupportedError("state '" + p.states[s].name + "' has no ODE");
    }

    std::vector<double> point(double t, const std::vector<double>& x, const std::vector<double>& u) const {
        std::vector<double> v(layout.size(), 0.0);
        fill.set_time(v, t);
        fill.set_states(v, x);
        fill.set_controls(v, u);
        fill.set_params(v, a);
        return v;
    }

    std::vector<double> f(double t, const std::vector<double>& x, const std::vector<double>& u) const {
        const std::vector<double> v = point(t, x, u);
        std::vector<double> out(rhs.size());
        for (std::size_t s = 0; s < rhs.size(); ++s)
            out[s] = rhs[s](v);
        return out;
    }

    std::vector<double> rk4(double t, double h, const std::vector<double>& x, const std::vector<double>& u) const {
        auto axpy = [](const std::vector<double>& y, double c, const std::vector<double>& k) {
            std::vector<double> out(y);
            for (std::size_t s = 0; s < y.size(); ++s)
                out[s] += c * k[s];
            return out;
        };
        const auto k1 = f(t, x, u);
        const auto k2 = f(t + 0.5 * h, axpy(x, 0.5 * h, k1), u);
        const auto k3 = f(t + 0.5 * h, axpy(x, 0.5 * h, k2), u);
        const auto k4 = f(t + h, axpy(x, h, k3), u);
        std::vector<double> out(x);
        for (std::size_t s = 0; s < x.size(); ++s)
            out[s] += h / 6.0 * (k1[s] + 2 * k2[s] + 2 * k3[s] + k4[s]);
        return out;
    }
};

// Nodal relaxed trajectory, linear between mesh nodes.
std::vector<double> interpolate(const SolutionCandidate& c, double t) {
    const Mesh& m = c.mesh;
    const double pos = std::clamp(t / m.step(), 0.0, static_cast<double>(m.intervals()));
    const auto k = std::min(static_cast<std::size_t>(pos), static_cast<std::size_t>(m.intervals() - 1));
    const double w = pos - static_cast<double>(k);
    std::vector<double> x(c.x[k].size());
    for (std::size_t s = 0; s < x.size(); ++s)
        x[s] = (1 - w) * c.x[k][s] + w * c.x[k + 1][s];
    return x;
}

RelaxedControl as_relaxed(const SolutionCandidate& c) {
    if (c.relaxed)
        return *c.relaxed;
    RelaxedControl rc;
    for (const auto& u : c.u) {
        rc.gamma.push_back({1.0});
        rc.values.push_back({u});
    }
    return rc;
}

StudyRow simulate(const Simulator& sim, const CanonicalProblem& p, const SolutionCandidate& relaxed,
                  const ChatterPlan& plan, int substeps) {
    const std::size_t np = p.states.size();
    std::vector<double> x0(np);
    for (std::size_t s = 0; s < np; ++s)
        x0[s] = p.states[s].init.value_or(0.0);

    std::vector<CompiledExpr> running, terminal, maximin;
    std::vector<double> terminal_time;
    for (const CriterionPart& part : p.criterion.parts) {
        if (part.kind == CriterionKind::Integral)
            running.emplace_back(part.expr, sim.layout);
        else if (part.kind == CriterionKind::Terminal) {
            terminal.emplace_back(part.expr, sim.layout);
            terminal_time.push_back(part.time);
        } else {
            maximin.emplace_back(part.expr, sim.layout);
        }
    }

    StudyRow row;
    row.i = plan.i;
    double integral = 0.0;
    double lowest = std::numeric_limits<double>::infinity();
    std::vector<double> terminal_value(terminal.size(), 0.0);
    std::vector<double> terminal_gap(terminal.size(), std::numeric_limits<double>::infinity());
    std::vector<double> x = x0;
    std::vector<double> J_integral(np, 0.0);  // int_0^tau f(x*, u_i)

    auto sample = [&](double t, const std::vector<double>& xs, const std::vector<double>& u) {
        const std::vector<double> v = sim.point(t, xs, u);
        double run = 0.0;
        for (const CompiledExpr& g : running)
            run += g(v);
        for (const CompiledExpr& g : maximin)
            lowest = std::min(lowest, g(v));
        for (std::size_t e = 0; e < terminal.size(); ++e) {
            const double d = std::abs(t - terminal_time[e]);
            if (d <= terminal_gap[e]) {
                terminal_gap[e] = d;
                terminal_value[e] = terminal[e](v);
            }
        }
        const std::vector<double> xstar = interpolate(relaxed, t);
        for (std::size_t s = 0; s < np; ++s)
            row.maxXdev = std::max(row.maxXdev, std::abs(xs[s] - xstar[s]));
        return run;
    };

    const int steps = std::max(2, substeps + (substeps % 2));
    for (const ChatterPlan::Piece& pc : plan.pieces) {
        const double len = pc.t1 - pc.t0;
        if (len <= 0.0)
            continue;
        const double h = len / steps;
        std::vector<double> values(static_cast<std::size_t>(steps) + 1);
        std::vector<std::vector<double>> fstar(static_cast<std::size_t>(steps) + 1);
        for (int k = 0; k <= steps; ++k) {
            const double t = pc.t0 + k * h;
            if (k > 0)
                x = sim.rk4(t - h, h, x, pc.u);
            for (double xv : x)
                if (!std::isfinite(xv))
                    row.blowup = true;
            if (row.blowup)
                break;
            values[static_cast<std::size_t>(k)] = sample(t, x, pc.u);
            fstar[static_cast<std::size_t>(k)] = sim.f(t, interpolate(relaxed, t), pc.u);
        }
        if (row.blowup)
            break;
        // Composite Simpson over pairs of substeps.
        for (int k = 0; k + 2 <= steps; k += 2) {
            const auto kk = static_cast<std::size_t>(k);
            integral += h / 3.0 * (values[kk] + 4 * values[kk + 1] + values[kk + 2]);
            const double t = pc.t0 + (k + 2) * h;
            const std::vector<double> xstar = interpolate(relaxed, t);
            for (std::size_t s = 0; s < np; ++s) {
                J_integral[s] += h / 3.0 * (fstar[kk][s] + 4 * fstar[kk + 1][s] + fstar[kk + 2][s]);
                row.maxJ = std::max(row.maxJ, std::abs(xstar[s] - x0[s] - J_integral[s]));
            }
        }
    }

    row.Ibar = eval_criterion(p, relaxed);
    if (row.blowup) {
        row.I = row.gapI = row.maxJ = row.maxXdev = std::numeric_limits<double>::quiet_NaN();
        return row;
    }
    row.I = integral;
    for (double v : terminal_value)
        row.I += v;
    if (!maximin.empty())
        row.I = lowest;
    row.gapI = std::abs(row.I - row.Ibar);
    return row;
}

}  // namespace

std::vector<StudyRow> convergence_study(const CanonicalProblem& p, const SolutionCandidate& relaxed,
                                        const std::vector<int>& i_list, int substeps) {
    const Simulator sim(p, relaxed.a);
    const RelaxedControl rc = as_relaxed(relaxed);
    std::vector<StudyRow> rows;
    for (int i : i_list)
        rows.push_back(simulate(sim, p, relaxed, build_plan(rc, relaxed.mesh, i), std::max(32, substeps)));
    return rows;
}

double fitted_slope(const std::vector<double>& x, const std::vector<double>& y) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    double n = 0;
    for (std::size_t k = 0; k < x.size() && k < y.size(); ++k) {
        if (!(x[k] > 0) || !(std::abs(y[k]) > 0))
            continue;
        const double lx = std::log(x[k]);
        const double ly = std::log(std::abs(y[k]));
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
        n += 1;
    }
    if (n < 2)
        return std::numeric_limits<double>::quiet_NaN();
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace canonmp
