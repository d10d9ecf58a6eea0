#include "canonmp/verify.hpp"

#include "canonmp/relax.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace canonmp {

namespace {

bool skip_shape(TermShape s) { return s == TermShape::Event || s == TermShape::Offset; }

double weight_sum(const SolutionCandidate& c, std::size_t i) {
    double s = 0.0;
    for (std::size_t k = 0; k < c.atom_count(i); ++k)
        s += c.atom_weight(i, k);
    return s;
}

// Pointwise multipliers that may carry point masses at the ends of [0, T].
bool atom_capable(const CanonicalProblem& p, const RTerm& r) {
    if (r.shape != TermShape::Plain)
        return false;
    if (r.multiplier == "lam_a")
        return true;
    if (r.source <= 0)
        return false;
    const ConstraintKind k = p.constraints[static_cast<std::size_t>(r.source - 1)].kind;
    return k == ConstraintKind::Inequality || k == ConstraintKind::PointwiseEq;
}

std::vector<std::vector<double>*> atom_vectors(const CanonicalProblem& p, SolutionCandidate& c) {
    std::vector<std::vector<double>*> out;
    if (p.criterion.is_maximin() && !c.criterion_lambda.empty())
        out.push_back(&c.criterion_lambda);
    for (std::size_t j = 0; j < p.m() && j < c.multipliers.size(); ++j) {
        const ConstraintKind k = p.constraints[j].kind;
        if ((k == ConstraintKind::Inequality || k == ConstraintKind::PointwiseEq) && !c.multipliers[j].lambda.empty())
            out.push_back(&c.multipliers[j].lambda);
    }
    return out;
}

// Copy whose end-node pointwise multipliers keep only their density part.
SolutionCandidate without_end_atoms(const CanonicalProblem& p, const SolutionCandidate& c) {
    SolutionCandidate out = c;
    for (std::vector<double>* v : atom_vectors(p, out))
        if (v->size() >= 2) {
            (*v)[0] = (*v)[1];
            v->back() = (*v)[v->size() - 2];
        }
    return out;
}

// Copy whose node-T pointwise multipliers hold the mass of the atom at T.
SolutionCandidate end_atom_masses(const CanonicalProblem& p, const SolutionCandidate& c) {
    SolutionCandidate out = c;
    const double w = 0.5 * c.mesh.step();
    for (std::vector<double>* v : atom_vectors(p, out))
        if (v->size() >= 2)
            v->back() = (v->back() - (*v)[v->size() - 2]) * w;
    return out;
}

std::vector<std::size_t> first_group_controls(const LagrangeSystem& L) {
    std::vector<std::size_t> out;
    for (std::size_t u = 0; u < L.problem.controls.size(); ++u)
        if (L.classification.of(L.problem.controls[u].name).group == Group::First)
            out.push_back(u);
    return out;
}

std::vector<double> interior_events(const LagrangeSystem& L) {
    std::vector<double> out;
    for (const RTerm& r : L.terms)
        if (r.shape == TermShape::Event && r.event_time < L.problem.horizon)
            out.push_back(r.event_time);
    return out;
}

CheckResult finish(CheckResult r) {
    r.pass = !r.applicable || (std::isfinite(r.residual) && r.residual <= r.tolerance);
    return r;
}

CheckResult not_applicable(const std::string& name) {
    CheckResult r;
    r.name = name;
    r.applicable = false;
    return r;
}

}  // namespace

CheckResult check_Hmax(const LagrangeSystem& L, const SolutionCandidate& c, const SolverConfig& cfg,
                       const VerifyConfig& vc) {
    const std::vector<std::size_t> free = first_group_controls(L);
    if (free.empty() || L.h_terms.empty())
        return not_applicable("hmax");
    const SystemEvaluator ev(L);
    SolverConfig fine = cfg;
    fine.ugrid = vc.grid_factor * (cfg.ugrid - 1) + 1;
    std::vector<ControlDecl> V;
    for (std::size_t u : free)
        V.push_back(L.problem.controls[u]);

    CheckResult r;
    r.name = "hmax";
    double scale = 0.0;
    for (std::size_t i = 0; i < static_cast<std::size_t>(c.mesh.intervals()); ++i) {
        auto pt = ev.load_interval(c, i);
        double worst = 0.0;
        double best = 0.0;
        bool first = true;
        for (std::size_t k = 0; k < c.atom_count(i); ++k) {
            if (c.atom_weight(i, k) <= vc.gamma_tol)
                continue;
            std::vector<double> u = c.atom_value(i, k);
            const double here = ev.interval_H(pt, u, c);
            if (first) {
                // Other controls stay at this atom's values while the first group varies.
                auto H = [&](const std::vector<double>& sub) {
                    std::vector<double> full = u;
                    for (std::size_t d = 0; d < free.size(); ++d)
                        full[free[d]] = sub[d];
                    return ev.interval_H(pt, full, c);
                };
                std::vector<double> arg = maximize_H(H, V, fine);
                best = std::max(H(arg), here);
                first = false;
            }
            worst = std::max(worst, best - here);
            scale = std::max(scale, std::abs(here));
        }
        if (worst > r.residual) {
            r.residual = worst;
            r.where = c.mesh.node(i);
        }
    }
    r.tolerance = vc.hmax_tol * (1.0 + scale);
    return finish(r);
}

CheckResult check_stationarity(const LagrangeSystem& L, const SolutionCandidate& c0, const VerifyConfig& vc) {
    const CanonicalProblem& p = L.problem;
    if (p.states.empty())
        return not_applicable("stationarity");
    // Interval form: psi' is the difference quotient over the interval and
    // the remaining terms are averaged over its two end nodes.
    SolutionCandidate c = without_end_atoms(p, c0);
    std::vector<std::size_t> odes;
    for (std::size_t j = 0; j < p.m() && j < c.multipliers.size(); ++j)
        if (p.constraints[j].kind == ConstraintKind::Ode && !c.multipliers[j].psi.empty())
            odes.push_back(j);
    const SystemEvaluator ev(L);
    const std::vector<double> events = interior_events(L);
    const std::size_t n_int = static_cast<std::size_t>(c.mesh.intervals());
    const double h = c.mesh.step();

    CheckResult r;
    r.name = "stationarity";
    double scale = 0.0;
    std::vector<double> v = ev.blank();
    for (std::size_t i = 0; i < n_int; ++i) {
        const double mid = c.mesh.node(i) + 0.5 * h;
        bool near_event = false;
        for (double e : events)
            near_event = near_event || std::abs(mid - e) <= 3.0 * h;
        if (near_event)
            continue;
        for (std::size_t j : odes) {
            ConstraintMultiplier& m = c.multipliers[j];
            m.lambda[i] = m.lambda[i + 1] = (m.psi[i + 1] - m.psi[i]) / h;
        }
        const double total = weight_sum(c, i);
        for (std::size_t s = 0; s < p.states.size(); ++s) {
            double residual = 0.0;
            for (std::size_t k : {i, i + 1}) {
                ev.load_node(v, c, k);
                double side = 0.0;
                for (std::size_t a = 0; a < c.atom_count(i); ++a) {
                    const double g = c.atom_weight(i, a) / total;
                    ev.load_controls(v, c.atom_value(i, a));
                    if (a == 0)
                        for (std::size_t n : L.n_terms)
                            if (!skip_shape(L.terms[n].shape)) {
                                const double d = ev.term_dx(n, s, v, c);
                                side += d;
                                scale = std::max(scale, std::abs(d));
                            }
                    if (g == 0.0)
                        continue;
                    for (std::size_t hterm : L.h_terms) {
                        const double d = ev.term_dx(hterm, s, v, c);
                        side += g * d;
                        scale = std::max(scale, std::abs(d));
                    }
                }
                residual += 0.5 * side;
            }
            if (std::abs(residual) > r.residual) {
                r.residual = std::abs(residual);
                r.where = mid;
            }
        }
    }
    r.tolerance = vc.stationarity_tol * (1.0 + scale);
    return finish(r);
}

CheckResult check_transversality(const LagrangeSystem& L, const SolutionCandidate& c, const VerifyConfig& vc) {
    const CanonicalProblem& p = L.problem;
    std::vector<std::size_t> odes;
    for (std::size_t j = 0; j < p.m(); ++j)
        if (p.constraints[j].kind == ConstraintKind::Ode && j < c.multipliers.size() && !c.multipliers[j].psi.empty())
            odes.push_back(j);
    if (odes.empty())
        return not_applicable("transversality");

    const SystemEvaluator ev(L);
    const std::size_t N = c.mesh.nodes() - 1;
    std::vector<double> times{p.horizon};
    for (double e : interior_events(L))
        if (std::find(times.begin(), times.end(), e) == times.end())
            times.push_back(e);

    CheckResult r;
    r.name = "transversality";
    double scale = 0.0;
    std::vector<double> v = ev.blank();
    for (double time : times) {
        const std::size_t k = c.mesh.snap(time);
        const std::size_t i = std::min<std::size_t>(k, N - 1);
        for (std::size_t j : odes) {
            const std::size_t s = static_cast<std::size_t>(p.state_index(p.constraints[j].state));
            double jump = 0.0;
            for (std::size_t t = 0; t < L.terms.size(); ++t) {
                if (L.terms[t].shape != TermShape::Event || c.mesh.snap(L.terms[t].event_time) != k)
                    continue;
                ev.load_node(v, c, k);
                for (std::size_t a = 0; a < c.atom_count(i); ++a) {
                    ev.load_controls(v, c.atom_value(i, a));
                    jump += c.atom_weight(i, a) / weight_sum(c, i) * ev.term_dx(t, s, v, c);
                }
            }
            if (k == N) {
                // point masses of pointwise multipliers at T act like events
                const SolutionCandidate masses = end_atom_masses(p, c);
                for (std::size_t t = 0; t < L.terms.size(); ++t) {
                    if (!atom_capable(p, L.terms[t]))
                        continue;
                    ev.load_node(v, masses, k);
                    for (std::size_t a = 0; a < c.atom_count(i); ++a) {
                        ev.load_controls(v, c.atom_value(i, a));
                        jump += c.atom_weight(i, a) / weight_sum(c, i) * ev.term_dx(t, s, v, masses);
                    }
                }
            }
            const std::vector<double>& psi = c.multipliers[j].psi;
            double observed = 0.0;
            if (k == N) {
                observed = psi[N];  // psi vanishes after T
            } else if (k >= 2 && k + 2 <= N) {
                const double before = 2.0 * psi[k - 1] - psi[k - 2];
                const double after = 2.0 * psi[k + 1] - psi[k + 2];
                observed = before - after;
            } else {
                continue;
            }
            scale = std::max({scale, std::abs(jump), std::abs(observed)});
            const double gap = std::abs(observed - jump);
            if (gap > r.residual) {
                r.residual = gap;
                r.where = c.mesh.node(k);
            }
        }
    }
    r.tolerance = vc.stationarity_tol * (1.0 + scale);
    return finish(r);
}

CheckResult check_param(const LagrangeSystem& L, const SolutionCandidate& c, const VerifyConfig& vc) {
    const CanonicalProblem& p = L.problem;
    bool any = false;
    for (const ParamDecl& a : p.params)
        any = any || !a.automatic;
    if (!any)
        return not_applicable("param");
    const std::vector<double> g = param_gradient(L, c);
    CheckResult r;
    r.name = "param";
    for (std::size_t q = 0; q < p.params.size(); ++q) {
        const ParamDecl& a = p.params[q];
        if (a.automatic)
            continue;
        double improving = std::abs(g[q]);
        if (a.box) {
            const double width = 1e-9 * (1.0 + std::abs(a.box->lo) + std::abs(a.box->hi));
            if (c.a[q] <= a.box->lo + width)
                improving = std::max(0.0, g[q] > 0 ? g[q] : 0.0);
            if (c.a[q] >= a.box->hi - width)
                improving = std::min(improving, std::max(0.0, -g[q]));
        }
        r.residual = std::max(r.residual, improving);
    }
    r.tolerance = vc.param_tol * (1.0 + std::abs(c.objective));
    return finish(r);
}

CheckResult check_slackness(const LagrangeSystem& L, const SolutionCandidate& c, const VerifyConfig& vc) {
    const CanonicalProblem& p = L.problem;
    CheckResult r;
    r.name = "slackness";
    r.applicable = false;
    double scale = 0.0;
    for (std::size_t j = 0; j < p.m(); ++j) {
        if (p.constraints[j].kind != ConstraintKind::Inequality)
            continue;
        r.applicable = true;
        const std::size_t q = static_cast<std::size_t>(p.slack_index(p.constraints[j].slack));
        const std::vector<double>& lam = c.multipliers[j].lambda;
        for (std::size_t k = 0; k < c.mesh.nodes() && k < lam.size(); ++k) {
            const double z = c.z[k][q];
            const double gap = std::max(std::abs(lam[k] * z), std::max(0.0, -lam[k]));
            scale = std::max(scale, std::abs(lam[k]));
            if (gap > r.residual) {
                r.residual = gap;
                r.where = c.mesh.node(k);
            }
        }
    }
    r.tolerance = vc.integral_tol * (1.0 + scale);
    return finish(r);
}

CheckResult check_maximin(const LagrangeSystem& L, const SolutionCandidate& c, const VerifyConfig& vc) {
    const CanonicalProblem& p = L.problem;
    if (!p.criterion.is_maximin())
        return not_applicable("maximin");
    CheckResult r;
    r.name = "maximin";
    const Layout layout = p.base_layout();
    const PointFiller fill(p, layout);
    const CompiledExpr f0(p.criterion.parts[0].expr, layout);
    const std::size_t a = static_cast<std::size_t>(p.param_index("a"));
    const double h = c.mesh.step();
    const std::size_t n_int = static_cast<std::size_t>(c.mesh.intervals());
    std::vector<double> v(layout.size(), 0.0);
    double integral = 0.0;
    double scale = std::abs(c.l0);
    for (std::size_t k = 0; k < c.mesh.nodes(); ++k) {
        const double lam = k < c.criterion_lambda.size() ? c.criterion_lambda[k] : 0.0;
        integral += ((k == 0 || k == n_int) ? 0.5 * h : h) * lam;
        const std::size_t i = std::min(k, n_int - 1);
        fill.set_node(v, c, k);
        double value = 0.0;
        for (std::size_t at = 0; at < c.atom_count(i); ++at) {
            fill.set_controls(v, c.atom_value(i, at));
            value += c.atom_weight(i, at) / weight_sum(c, i) * f0(v);
        }
        const double gap = std::max(std::abs(lam * (value - c.a[a])), std::max(0.0, -lam));
        scale = std::max(scale, std::abs(lam));
        if (gap > r.residual) {
            r.residual = gap;
            r.where = c.mesh.node(k);
        }
    }
    r.residual = std::max(r.residual, std::abs(integral - c.l0));
    r.tolerance = vc.integral_tol * (1.0 + scale);
    return finish(r);
}

CheckResult check_weights(const LagrangeSystem&, const SolutionCandidate& c, const VerifyConfig& vc) {
    if (!c.relaxed)
        return not_applicable("weights");
    CheckResult r;
    r.name = "weights";
    const RelaxedControl& rc = *c.relaxed;
    for (std::size_t i = 0; i < rc.intervals(); ++i) {
        double total = 0.0;
        double gap = 0.0;
        for (double g : rc.gamma[i]) {
            total += g;
            gap = std::max(gap, -g);
        }
        gap = std::max(gap, std::abs(total - 1.0));
        if (gap > r.residual) {
            r.residual = gap;
            r.where = c.mesh.node(i);
        }
    }
    r.tolerance = vc.gamma_tol;
    return finish(r);
}

CheckResult check_support(const LagrangeSystem& L, const SolutionCandidate& c, const VerifyConfig& vc) {
    if (!c.relaxed)
        return not_applicable("support");
    CheckResult r;
    r.name = "support";
    const std::size_t bound = L.u_constraint_count() + 1;
    for (std::size_t i = 0; i < c.relaxed->intervals(); ++i) {
        const double s = static_cast<double>(c.relaxed->support(i, vc.gamma_tol));
        if (s > r.residual) {
            r.residual = s;
            r.where = c.mesh.node(i);
        }
    }
    r.tolerance = static_cast<double>(bound);
    return finish(r);
}

CheckResult check_nontriviality(const LagrangeSystem&, const SolutionCandidate& c, const VerifyConfig& vc) {
    CheckResult r;
    r.name = "nontriviality";
    double biggest = std::abs(c.l0);
    for (const ConstraintMultiplier& m : c.multipliers) {
        biggest = std::max(biggest, std::abs(m.scalar));
        for (double x : m.lambda)
            biggest = std::max(biggest, std::abs(x));
        for (double x : m.psi)
            biggest = std::max(biggest, std::abs(x));
    }
    for (double x : c.criterion_lambda)
        biggest = std::max(biggest, std::abs(x));
    r.residual = biggest;
    r.tolerance = vc.nontrivial_tol;
    r.pass = biggest > vc.nontrivial_tol;
    return r;
}

VerificationReport report(const LagrangeSystem& L, const SolutionCandidate& c, const SolverConfig& cfg,
                          const VerifyConfig& vc) {
    VerificationReport rep;
    rep.checks = {
        check_Hmax(L, c, cfg, vc),       check_maximin(L, c, vc),       check_nontriviality(L, c, vc),
        check_param(L, c, vc),           check_slackness(L, c, vc),     check_stationarity(L, c, vc),
        check_support(L, c, vc),         check_transversality(L, c, vc), check_weights(L, c, vc),
    };
    std::sort(rep.checks.begin(), rep.checks.end(),
              [](const CheckResult& a, const CheckResult& b) { return a.name < b.name; });
    for (const CheckResult& r : rep.checks)
        rep.verdict = rep.verdict && r.pass;
    rep.nontrivial = rep.find("nontriviality")->pass;
    return rep;
}

const CheckResult* VerificationReport::find(const std::string& name) const {
    for (const CheckResult& r : checks)
        if (r.name == name)
            return &r;
    return nullptr;
}

std::vector<std::string> VerificationReport::failures() const {
    std::vector<std::string> out;
    for (const CheckResult& r : checks)
        if (r.applicable && !r.pass)
            out.push_back(r.name);
    return out;
}

std::string VerificationReport::to_json() const {
    nlohmann::ordered_json j;
    j["verdict"] = verdict ? "pass" : "fail";
    j["nontrivial"] = nontrivial;
    j["checks"] = nlohmann::ordered_json::array();
    for (const CheckResult& r : checks) {
        nlohmann::ordered_json e;
        e["name"] = r.name;
        e["applicable"] = r.applicable;
        e["residual"] = r.residual;
        e["where"] = r.where;
        e["tolerance"] = r.tolerance;
        e["pass"] = r.pass;
        j["checks"].push_back(e);
    }
    return j.dump(2);
}

std::string VerificationReport::to_text() const {
    std::ostringstream out;
    out << std::left << std::setw(16) << "check" << std::setw(20) << "residual" << std::setw(20) << "t"
        << std::setw(20) << "tolerance" << "result\n";
    out << std::setprecision(12);
    for (const CheckResult& r : checks) {
        out << std::setw(16) << r.name;
        if (!r.applicable) {
            out << std::setw(20) << "-" << std::setw(20) << "-" << std::setw(20) << "-" << "n/a\n";
            continue;
        }
        out << std::setw(20) << r.residual << std::setw(20) << r.where << std::setw(20) << r.tolerance
            << (r.pass ? "pass" : "FAIL") << "\n";
    }
    out << "verdict: " << (verdict ? "pass" : "fail") << "\n";
    return out.str();
}

RelaxedResiduals relaxed_residuals(const RelaxedSystem& rs, const SolutionCandidate& c, const SolverConfig& cfg,
                                   const VerifyConfig& vc) {
    if (c.relaxed && !check_weights(rs.base, c, vc).pass)
        throw std::invalid_argument("relaxed weights are negative or do not sum to one");
    RelaxedResiduals out;
    out.equalization = check_Hmax(rs.base, c, cfg, vc).residual;
    out.stationarity = check_stationarity(rs.base, c, vc).residual;
    out.param = check_param(rs.base, c, vc).residual;
    return out;
}

}  // namespace canonmp
