#include "canonmp/evaluator.hpp"
#include "canonmp/solve.hpp"

#include <algorithm>
#include <cmath>

namespace canonmp {

namespace {

double project(const ControlDecl& c, double v) {
    if (!c.is_finite())
        return std::clamp(v, c.box->lo, c.box->hi);
    double best = c.points.front();
    for (double q : c.points)
        if (std::abs(q - v) < std::abs(best - v) || (std::abs(q - v) == std::abs(best - v) && q < best))
            best = q;
    return best;
}

std::vector<double> initial_params(const CanonicalProblem& p, const std::vector<double>& a) {
    std::vector<double> out(p.params.size(), 0.0);
    for (std::size_t q = 0; q < out.size(); ++q) {
        out[q] = q < a.size() ? a[q] : 0.0;
        if (p.params[q].box)
            out[q] = std::clamp(out[q], p.params[q].box->lo, p.params[q].box->hi);
    }
    return out;
}

struct AdjointPlan {
    std::size_t state;
    std::size_t constraint;
    CompiledExpr rhs;
    std::vector<std::pair<std::size_t, CompiledExpr>> jumps;  // node, amount
};

class Sweep {
public:
    Sweep(const CanonicalProblem& p, const LagrangeSystem& L, const SolverConfig& cfg, const std::vector<double>& a)
        : p_(p), L_(L), cfg_(cfg), ev_(L), fill_(p, L.layout) {
        cand_ = SolutionCandidate::zeros(p, Mesh(p.horizon, cfg.mesh));
        cand_.l0 = L.l0;
        cand_.a = initial_params(p, a);
        const std::size_t n = cand_.mesh.nodes();
        for (auto& m : cand_.multipliers) {
            m.psi.assign(n, 0.0);
            m.lambda.assign(n, 0.0);
        }
        for (auto& u : cand_.u)
            for (std::size_t c = 0; c < p.controls.size(); ++c)
                u[c] = project(p.controls[c], 0.0);

        for (std::size_t j = 0; j < p.constraints.size(); ++j) {
            const ConstraintSpec& c = p.constraints[j];
            if (c.kind == ConstraintKind::Ode) {
                const std::size_t s = static_cast<std::size_t>(p.state_index(c.state));
                rhs_.emplace_back(s, CompiledExpr(c.expr, L.layout));
            } else if (c.kind == ConstraintKind::TerminalEq) {
                terminal_ = j;
            }
        }
        if (!p.states.empty()) {
            for (AdjointEquation& eq : adjoint_system(L)) {
                AdjointPlan plan{static_cast<std::size_t>(p.state_index(eq.state)),
                                 static_cast<std::size_t>(eq.constraint - 1), CompiledExpr(eq.rhs, L.layout), {}};
                for (auto& [t, e] : eq.jumps)
                    plan.jumps.emplace_back(cand_.mesh.snap(t), CompiledExpr(e, L.layout));
                adjoint_.push_back(std::move(plan));
            }
        }
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t s = 0; s < p.states.size(); ++s)
                cand_.x[k][s] = *p.states[s].init;
    }

    bool has_terminal() const { return terminal_.has_value(); }
    SolutionCandidate& candidate() { return cand_; }

    void set_tilde(double v) { cand_.multipliers[*terminal_].scalar = v; }

    // F(x(t0)) of the terminal equality.
    double terminal_value() {
        const ConstraintSpec& c = p_.constraints[*terminal_];
        std::vector<double> v = ev_.blank();
        const std::size_t k = cand_.mesh.snap(c.time);
        ev_.load_node(v, cand_, k);
        ev_.load_controls(v, cand_.u[std::min<std::size_t>(k, cand_.u.size() - 1)]);
        return eval_at(c.expr, v);
    }

    // Runs damped sweeps to convergence; returns the final change. The
    // damping halves whenever the change stops shrinking for a while.
    double run() {
        double change = INFINITY;
        double damping = cfg_.damping;
        double best = INFINITY;
        int stalled = 0;
        for (int it = 0; it < cfg_.max_sweeps; ++it) {
            change = forward();
            change = std::max(change, backward());
            change = std::max(change, update_controls(damping));
            if (change < 0.999 * best) {
                best = change;
                stalled = 0;
            } else if (++stalled >= 25 && damping > 1e-3) {
                damping *= 0.5;
                best = change;
                stalled = 0;
            }
            if (change < cfg_.tol) {
                update_controls(1.0);
                forward();
                backward();
                return change;
            }
        }
        throw DivergenceError("forward-backward sweep did not converge", change);
    }

    void finish() {
        const double h = cand_.mesh.step();
        for (const AdjointPlan& a : adjoint_)
            cand_.multipliers[a.constraint].lambda = nodal_derivative(cand_.multipliers[a.constraint].psi, h);
        cand_.objective = eval_criterion(p_, cand_);
    }

private:
    double eval_at(const Expr& e, const std::vector<double>& v) const { return CompiledExpr(e, L_.layout)(v); }

    void load(std::vector<double>& v, std::size_t node, std::size_t interval) const {
        ev_.load_node(v, cand_, node);
        ev_.load_controls(v, cand_.u[interval]);
    }

    double forward() {
        const double h = cand_.mesh.step();
        const std::size_t ns = p_.states.size();
        if (ns == 0)
            return 0.0;
        double change = 0.0;
        std::vector<double> v0 = ev_.blank(), v1 = ev_.blank();
        std::vector<double> f0(ns), next(ns);
        for (std::size_t i = 0; i + 1 < cand_.mesh.nodes(); ++i) {
            load(v0, i, i);
            for (auto& [s, f] : rhs_)
                f0[s] = f(v0);
            for (std::size_t s = 0; s < ns; ++s)
                next[s] = cand_.x[i][s] + h * f0[s];
            load(v1, i + 1, i);
            for (int corr = 0; corr < 100; ++corr) {
                fill_.set_states(v1, next);
                double delta = 0.0;
                for (auto& [s, f] : rhs_) {
                    const double x = cand_.x[i][s] + 0.5 * h * (f0[s] + f(v1));
                    delta = std::max(delta, std::abs(x - next[s]));
                    next[s] = x;
                }
                if (delta <= 1e-15 * (1.0 + std::abs(next[0])))
                    break;
            }
            for (std::size_t s = 0; s < ns; ++s) {
                change = std::max(change, std::abs(next[s] - cand_.x[i + 1][s]));
                cand_.x[i + 1][s] = next[s];
            }
        }
        return change;
    }

    double backward() {
        if (adjoint_.empty())
            return 0.0;
        const double h = cand_.mesh.step();
        const std::size_t N = cand_.mesh.nodes() - 1;
        std::vector<double> v1 = ev_.blank(), v0 = ev_.blank();
        double change = 0.0;
        auto psi = [&](const AdjointPlan& a) -> std::vector<double>& { return cand_.multipliers[a.constraint].psi; };
        auto psi_slot = [&](const AdjointPlan& a) { return ev_.slot(psi_symbol(a.constraint + 1)); };

        // Terminal values.
        load(v1, N, N - 1);
        for (const AdjointPlan& a : adjoint_) {
            double value = 0.0;
            for (auto& [node, jump] : a.jumps)
                if (node == N)
                    value += jump(v1);
            change = std::max(change, std::abs(value - psi(a)[N]));
            psi(a)[N] = value;
        }
        for (std::size_t k = N; k-- > 0;) {
            load(v1, k + 1, k);
            std::vector<double> g1(adjoint_.size());
            for (std::size_t e = 0; e < adjoint_.size(); ++e)
                g1[e] = adjoint_[e].rhs(v1);
            load(v0, k, k);
            std::vector<double> next(adjoint_.size());
            for (std::size_t e = 0; e < adjoint_.size(); ++e)
                next[e] = psi(adjoint_[e])[k + 1] - h * g1[e];
            for (int corr = 0; corr < 100; ++corr) {
                for (std::size_t e = 0; e < adjoint_.size(); ++e)
                    v0[psi_slot(adjoint_[e])] = next[e];
                double delta = 0.0;
                for (std::size_t e = 0; e < adjoint_.size(); ++e) {
                    const double y = psi(adjoint_[e])[k + 1] - 0.5 * h * (g1[e] + adjoint_[e].rhs(v0));
                    delta = std::max(delta, std::abs(y - next[e]));
                    next[e] = y;
                }
                if (delta <= 1e-15 * (1.0 + std::abs(next[0])))
                    break;
            }
            // Interior events: psi(t-) = psi(t+) + jump.
            if (k > 0) {
                for (std::size_t e = 0; e < adjoint_.size(); ++e)
                    v0[psi_slot(adjoint_[e])] = next[e];
                for (std::size_t e = 0; e < adjoint_.size(); ++e)
                    for (auto& [node, jump] : adjoint_[e].jumps)
                        if (node == k)
                            next[e] += jump(v0);
            }
            for (std::size_t e = 0; e < adjoint_.size(); ++e) {
                change = std::max(change, std::abs(next[e] - psi(adjoint_[e])[k]));
                psi(adjoint_[e])[k] = next[e];
            }
        }
        return change;
    }

    double update_controls(double damping) {
        if (p_.controls.empty())
            return 0.0;
        double change = 0.0;
        for (std::size_t i = 0; i < cand_.u.size(); ++i) {
            SystemEvaluator::IntervalPoint pt = ev_.load_interval(cand_, i);
            std::vector<double> best = maximize_H(
                [&](const std::vector<double>& u) { return ev_.interval_H(pt, u, cand_); }, p_.controls, cfg_);
            for (std::size_t c = 0; c < best.size(); ++c) {
                double& u = cand_.u[i][c];
                change = std::max(change, std::abs(best[c] - u));
                u = p_.controls[c].is_finite() ? best[c] : u + damping * (best[c] - u);
            }
        }
        return change;
    }

    const CanonicalProblem& p_;
    const LagrangeSystem& L_;
    const SolverConfig& cfg_;
    SystemEvaluator ev_;
    PointFiller fill_;
    SolutionCandidate cand_;
    std::vector<std::pair<std::size_t, CompiledExpr>> rhs_;
    std::vector<AdjointPlan> adjoint_;
    std::optional<std::size_t> terminal_;
};

}  // namespace

bool indirect_supported(const CanonicalProblem& p, const LagrangeSystem& L, std::string* why) {
    auto refuse = [&](const std::string& reason) {
        if (why)
            *why = reason;
        return false;
    };
    if (p.criterion.is_maximin())
        return refuse("maximin criterion");
    std::size_t terminals = 0;
    std::vector<int> bound(p.states.size(), 0);
    for (const ConstraintSpec& c : p.constraints) {
        if (c.kind == ConstraintKind::Ode)
            ++bound[static_cast<std::size_t>(p.state_index(c.state))];
        else if (c.kind == ConstraintKind::TerminalEq)
            ++terminals;
        else
            return refuse(std::string(kind_name(c.kind)) + " constraint");
    }
    if (terminals > 1)
        return refuse("more than one terminal equality");
    for (int b : bound)
        if (b != 1)
            return refuse("state without a differential equation");
    if (L.classification.first_group().size() != p.controls.size())
        return refuse("controls outside the first group");
    return true;
}

SolutionCandidate solve_indirect(const CanonicalProblem& p, const LagrangeSystem& L, const SolverConfig& cfg,
                                 const std::vector<double>& a) {
    std::string why;
    if (!indirect_supported(p, L, &why))
        throw UnsupportedError("indirect sweep does not handle this problem: " + why);
    Sweep sweep(p, L, cfg, a);
    if (!sweep.has_terminal()) {
        sweep.run();
        sweep.finish();
        return sweep.candidate();
    }

    // Secant on lambda-tilde until the terminal equality holds.
    double l_prev = 0.0;
    sweep.set_tilde(l_prev);
    sweep.run();
    double f_prev = sweep.terminal_value();
    double l_cur = 1.0;
    for (int it = 0; it < 60; ++it) {
        sweep.set_tilde(l_cur);
        sweep.run();
        const double f_cur = sweep.terminal_value();
        if (std::abs(f_cur) <= 1e-10) {
            sweep.finish();
            return sweep.candidate();
        }
        double denom = f_cur - f_prev;
        double l_next = denom != 0.0 ? l_cur - f_cur * (l_cur - l_prev) / denom : l_cur + 1.0;
        l_prev = l_cur;
        f_prev = f_cur;
        l_cur = l_next;
    }
    throw DivergenceError("secant on the terminal multiplier did not converge", std::abs(f_prev));
}

std::vector<double> param_gradient(const LagrangeSystem& L, const SolutionCandidate& cand) {
    const std::size_t np = L.problem.params.size();
    std::vector<double> g(np, 0.0);
    if (np == 0)
        return g;
    SystemEvaluator ev(L);
    std::vector<double> v = ev.blank();
    const double h = cand.mesh.step();
    const std::size_t n_int = static_cast<std::size_t>(cand.mesh.intervals());
    // atom weights are normalized per interval, so only their ratios count
    auto total_weight = [&](std::size_t i) {
        double s = 0.0;
        for (std::size_t k = 0; k < cand.atom_count(i); ++k)
            s += cand.atom_weight(i, k);
        return s > 0.0 ? s : 1.0;
    };
    for (std::size_t i = 0; i < n_int; ++i) {
        const double total = total_weight(i);
        for (std::size_t end = 0; end < 2; ++end) {
            ev.load_node(v, cand, i + end);
            for (std::size_t k = 0; k < cand.atom_count(i); ++k) {
                const double w = cand.atom_weight(i, k) / total;
                if (w == 0.0)
                    continue;
                ev.load_controls(v, cand.atom_value(i, k));
                for (std::size_t t = 0; t < L.terms.size(); ++t) {
                    const TermShape s = L.terms[t].shape;
                    if (s != TermShape::Plain && s != TermShape::TauIntegral)
                        continue;
                    for (std::size_t q = 0; q < np; ++q)
                        g[q] += 0.5 * h * w * ev.term_da(t, q, v, cand);
                }
            }
        }
    }
    for (std::size_t t = 0; t < L.terms.size(); ++t) {
        if (L.terms[t].shape != TermShape::Event)
            continue;
        const std::size_t node = cand.mesh.snap(L.terms[t].event_time);
        const std::size_t i = std::min(node, n_int - 1);
        ev.load_node(v, cand, node);
        for (std::size_t k = 0; k < cand.atom_count(i); ++k) {
            ev.load_controls(v, cand.atom_value(i, k));
            for (std::size_t q = 0; q < np; ++q)
                g[q] += cand.atom_weight(i, k) / total_weight(i) * ev.term_da(t, q, v, cand);
        }
    }
    return g;
}

SolutionCandidate optimize_params(const CanonicalProblem& p, const LagrangeSystem& L, const SolverConfig& cfg) {
    std::vector<double> a = initial_params(p, {});
    SolutionCandidate cand = solve_indirect(p, L, cfg, a);
    if (p.params.empty())
        return cand;
    auto clamp_a = [&](std::vector<double> x) {
        for (std::size_t q = 0; q < x.size(); ++q)
            if (p.params[q].box)
                x[q] = std::clamp(x[q], p.params[q].box->lo, p.params[q].box->hi);
        return x;
    };
    double eta = 1.0;
    std::vector<double> prev_a, prev_g;
    for (int it = 0; it < 200; ++it) {
        std::vector<double> g = param_gradient(L, cand);
        if (!prev_g.empty()) {
            // Barzilai-Borwein step from the last accepted move
            double ss = 0.0, sy = 0.0;
            for (std::size_t q = 0; q < g.size(); ++q) {
                const double sq = cand.a[q] - prev_a[q];
                ss += sq * sq;
                sy += sq * (g[q] - prev_g[q]);
            }
            if (sy < 0.0 && ss > 0.0)
                eta = ss / -sy;
        }
        double pg = 0.0;
        for (std::size_t q = 0; q < g.size(); ++q) {
            const auto& box = p.params[q].box;
            const bool blocked = box && ((cand.a[q] <= box->lo && g[q] < 0) || (cand.a[q] >= box->hi && g[q] > 0));
            if (!blocked)
                pg = std::max(pg, std::abs(g[q]));
        }
        if (pg <= 1e-7 * (1.0 + std::abs(cand.objective)))
            break;
        bool accepted = false;
        while (eta > 1e-12 && !accepted) {
            std::vector<double> trial = cand.a;
            for (std::size_t q = 0; q < g.size(); ++q)
                trial[q] += eta * g[q];
            trial = clamp_a(trial);
            SolutionCandidate next = solve_indirect(p, L, cfg, trial);
            if (next.objective > cand.objective) {
                prev_a = cand.a;
                prev_g = g;
                cand = std::move(next);
                eta *= 1.5;
                accepted = true;
            } else {
                eta *= 0.5;
            }
        }
        if (!accepted)
            break;
    }
    return cand;
}

}  // namespace canonmp
