#include "canonmp/lagrange.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace canonmp {

std::string psi_symbol(std::size_t j) { return "psi" + std::to_string(j); }
std::string dpsi_symbol(std::size_t j) { return "dpsi" + std::to_string(j); }
std::string lambda_symbol(std::size_t j) { return "lam" + std::to_string(j); }
std::string tilde_symbol(std::size_t j) { return "lt" + std::to_string(j); }
std::string tail_symbol(std::size_t j) { return "Lam" + std::to_string(j); }

std::string_view group_name(Group g) {
    switch (g) {
    case Group::First: return "first";
    case Group::Second: return "second";
    case Group::Parameter: return "parameter";
    }
    return "?";
}

namespace {

std::string time_text(double t, double horizon) {
    if (t == horizon)
        return "T";
    return to_string(Expr(t));
}

std::string delta_text(double t, double horizon) { return "delta(t-" + time_text(t, horizon) + ")"; }

RTerm make(int source, TermClass cls, TermShape shape, Expr body, std::string multiplier, std::string schematic,
           double time = 0.0) {
    RTerm r;
    r.source = source;
    r.cls = cls;
    r.shape = shape;
    r.body = std::move(body);
    r.multiplier = std::move(multiplier);
    r.schematic = std::move(schematic);
    r.event_time = time;
    return r;
}

// Suffix for repeated criterion parts: f0, f0_2, f0_3, ...
std::string numbered(const std::string& base, int count) {
    return count == 1 ? base : base + "_" + std::to_string(count);
}

std::string join_terms(const std::vector<std::string>& parts) {
    if (parts.empty())
        return "0";
    std::string out = parts.front();
    for (std::size_t i = 1; i < parts.size(); ++i) {
        const std::string& s = parts[i];
        if (!s.empty() && s[0] == '-')
            out += " - " + s.substr(1);
        else
            out += " + " + s;
    }
    return out;
}

}  // namespace

std::string RTerm::concrete() const {
    switch (shape) {
    case TermShape::Event:
        return "(" + to_string(body) + ")*delta(t-" + to_string(Expr(event_time)) + ")";
    case TermShape::TauIntegral:
        return "int(" + multiplier + "(tau)*(" + to_string(body) + "), tau, 0, T)";
    case TermShape::Plain:
    case TermShape::Offset:
        break;
    }
    return to_string(body);
}

std::vector<RTerm> contribution_for_criterion(const CriterionSpec& c, const CanonicalProblem& p) {
    std::vector<RTerm> out;
    const Expr l0 = Expr::variable("l0");
    if (c.is_maximin()) {
        const Expr a = Expr::variable("a");
        const Expr lam = Expr::variable("lam_a");
        out.push_back(make(0, TermClass::PointII, TermShape::Plain, l0 * a / Expr(p.horizon), "l0", "l0*a/T"));
        out.push_back(make(0, TermClass::PointII, TermShape::Plain, lam * c.parts[0].expr, "lam_a", "lam_a*f0"));
        out.push_back(make(0, TermClass::PointII, TermShape::Plain, -(lam * a), "lam_a", "-lam_a*a"));
        return out;
    }
    int integrals = 0;
    int terminals = 0;
    for (const CriterionPart& part : c.parts) {
        if (part.kind == CriterionKind::Integral) {
            out.push_back(make(0, TermClass::RunningI, TermShape::Plain, l0 * part.expr, "l0",
                               "l0*" + numbered("f0", ++integrals)));
        } else {
            out.push_back(make(0, TermClass::PointII, TermShape::Event, l0 * part.expr, "l0",
                               "l0*" + numbered("F0", ++terminals) + "*" + delta_text(part.time, p.horizon),
                               part.time));
        }
    }
    return out;
}

std::vector<RTerm> contribution_for_constraint(const ConstraintSpec& c, std::size_t j, const CanonicalProblem& p) {
    std::vector<RTerm> out;
    const int src = static_cast<int>(j);
    const std::string idx = std::to_string(j);
    const std::string f = "f" + idx;
    const Expr lam = Expr::variable(lambda_symbol(j));
    switch (c.kind) {
    case ConstraintKind::IntegralEq:
        out.push_back(make(src, TermClass::RunningI, TermShape::Plain, lam * c.expr, lambda_symbol(j),
                           lambda_symbol(j) + "*" + f));
        break;
    case ConstraintKind::PointwiseEq:
        out.push_back(make(src, TermClass::PointII, TermShape::Plain, lam * c.expr, lambda_symbol(j),
                           lambda_symbol(j) + "*" + f));
        break;
    case ConstraintKind::TerminalEq: {
        const Expr lt = Expr::variable(tilde_symbol(j));
        out.push_back(make(src, TermClass::PointII, TermShape::Event, lt * c.expr, tilde_symbol(j),
                           tilde_symbol(j) + "*F" + idx + "*" + delta_text(c.time, p.horizon), c.time));
        break;
    }
    case ConstraintKind::Ode: {
        const Expr psi = Expr::variable(psi_symbol(j));
        const Expr dpsi = Expr::variable(dpsi_symbol(j));
        const Expr x = Expr::variable(c.state);
        const double x0 = *p.states[p.state_index(c.state)].init;
        out.push_back(make(src, TermClass::RunningI, TermShape::Plain, psi * c.expr, psi_symbol(j),
                           psi_symbol(j) + "*" + f));
        out.push_back(make(src, TermClass::PointII, TermShape::Plain, dpsi * x, dpsi_symbol(j),
                           dpsi_symbol(j) + "*" + c.state));
        out.push_back(make(src, TermClass::PointII, TermShape::Offset,
                           Expr::variable(psi_symbol(j) + "_0") * Expr(x0 / p.horizon), psi_symbol(j),
                           psi_symbol(j) + "(0)*" + c.state + "0/T"));
        break;
    }
    case ConstraintKind::Volterra: {
        // int lambda(tau) J(tau) dtau regrouped by the order of integration:
        // f(t) * int_T^t lambda + lambda(t) x(t) + constant.
        const Expr tail = Expr::variable(tail_symbol(j));
        const Expr x = Expr::variable(c.state);
        const double x0 = *p.states[p.state_index(c.state)].init;
        out.push_back(make(src, TermClass::RunningI, TermShape::Plain, tail * c.expr, tail_symbol(j),
                           f + "*int(" + lambda_symbol(j) + "(tau), tau, T, t)"));
        out.push_back(make(src, TermClass::PointII, TermShape::Plain, lam * x, lambda_symbol(j),
                           lambda_symbol(j) + "*" + c.state));
        out.push_back(make(src, TermClass::PointII, TermShape::Offset,
                           Expr::variable(tail_symbol(j) + "_0") * Expr(x0 / p.horizon), tail_symbol(j),
                           tail_symbol(j) + "(0)*" + c.state + "0/T"));
        break;
    }
    case ConstraintKind::Fredholm:
    case ConstraintKind::Convolution: {
        const Expr x = Expr::variable(c.state);
        std::string schematic;
        if (c.kind == ConstraintKind::Convolution)
            schematic = c.control + "*int(" + lambda_symbol(j) + "(tau)*k" + idx + "(tau-t), tau, 0, T)";
        else
            schematic = "int(" + lambda_symbol(j) + "(tau)*" + f + ", tau, 0, T)";
        out.push_back(make(src, TermClass::RunningI, TermShape::TauIntegral, c.fredholm_integrand(), lambda_symbol(j),
                           schematic));
        out.push_back(make(src, TermClass::PointII, TermShape::Plain, -(lam * x), lambda_symbol(j),
                           "-" + lambda_symbol(j) + "*" + c.state));
        break;
    }
    case ConstraintKind::Inequality: {
        const Expr z = Expr::variable(c.slack);
        out.push_back(make(src, TermClass::PointII, TermShape::Plain, lam * c.expr, lambda_symbol(j),
                           lambda_symbol(j) + "*" + f));
        out.push_back(make(src, TermClass::PointII, TermShape::Plain, -(lam * z), lambda_symbol(j),
                           "-" + lambda_symbol(j) + "*" + c.slack));
        break;
    }
    }
    return out;
}

const VariableClass& Classification::of(std::string_view name) const {
    for (const VariableClass& v : vars)
        if (v.name == name)
            return v;
    throw std::out_of_range("no such variable: " + std::string(name));
}

Group Classification::group_at(std::string_view name, double t) const {
    const VariableClass& v = of(name);
    if (v.group == Group::First)
        for (double s : v.second_at)
            if (std::abs(s - t) <= 1e-12 * std::max(1.0, std::abs(s)))
                return Group::Second;
    return v.group;
}

std::vector<std::string> Classification::first_group() const {
    std::vector<std::string> out;
    for (const VariableClass& v : vars)
        if (v.group == Group::First)
            out.push_back(v.name);
    return out;
}

Classification classify_variables(const CanonicalProblem& p, const std::vector<RTerm>& terms) {
    Classification cls;
    for (const StateDecl& s : p.states)
        cls.vars.push_back({s.name, Group::Second, {}});
    for (const ControlDecl& c : p.controls) {
        VariableClass v{c.name, Group::First, {}};
        for (const RTerm& r : terms) {
            if (r.cls != TermClass::PointII || !depends_on(r.body, c.name))
                continue;
            if (r.shape == TermShape::Event) {
                if (std::find(v.second_at.begin(), v.second_at.end(), r.event_time) == v.second_at.end())
                    v.second_at.push_back(r.event_time);
            } else {
                v.group = Group::Second;
            }
        }
        if (v.group == Group::Second)
            v.second_at.clear();
        std::sort(v.second_at.begin(), v.second_at.end());
        cls.vars.push_back(std::move(v));
    }
    for (const ParamDecl& a : p.params)
        cls.vars.push_back({a.name, Group::Parameter, {}});
    for (const std::string& z : p.slacks)
        cls.vars.push_back({z, Group::Second, {}});
    return cls;
}

NHSplit split_NH(const std::vector<RTerm>& terms, const Classification& cls) {
    const std::vector<std::string> first = cls.first_group();
    NHSplit out;
    for (std::size_t i = 0; i < terms.size(); ++i) {
        const RTerm& r = terms[i];
        bool in_h = false;
        if (r.cls == TermClass::RunningI && (r.shape == TermShape::Plain || r.shape == TermShape::TauIntegral))
            for (const std::string& u : first)
                in_h = in_h || depends_on(r.body, u);
        (in_h ? out.h : out.n).push_back(i);
    }
    return out;
}

LagrangeSystem assemble(const CanonicalProblem& p, double l0) {
    LagrangeSystem L;
    L.problem = p;
    L.l0 = l0;
    L.terms = contribution_for_criterion(p.criterion, p);
    for (std::size_t j = 0; j < p.constraints.size(); ++j) {
        auto more = contribution_for_constraint(p.constraints[j], j + 1, p);
        L.terms.insert(L.terms.end(), more.begin(), more.end());
    }
    L.classification = classify_variables(p, L.terms);
    NHSplit split = split_NH(L.terms, L.classification);
    L.n_terms = std::move(split.n);
    L.h_terms = std::move(split.h);

    L.layout = p.base_layout();
    L.layout.add("l0");
    for (const RTerm& r : L.terms) {
        if (!L.layout.contains(r.multiplier))
            L.layout.add(r.multiplier);
        for (const std::string& v : free_variables(r.body))
            if (!L.layout.contains(v))
                L.layout.add(v);
    }
    return L;
}

namespace {

std::vector<std::size_t> canonical_order(const std::vector<RTerm>& terms, const std::vector<std::size_t>& subset) {
    std::vector<std::size_t> out;
    for (std::size_t i : subset)
        if (terms[i].shape != TermShape::Event && terms[i].shape != TermShape::Offset)
            out.push_back(i);
    for (std::size_t i : subset)
        if (terms[i].shape == TermShape::Event)
            out.push_back(i);
    return out;
}

std::string print_subset(const std::vector<RTerm>& terms, const std::vector<std::size_t>& subset) {
    std::vector<std::string> parts;
    for (std::size_t i : canonical_order(terms, subset))
        parts.push_back(terms[i].schematic);
    return join_terms(parts);
}

}  // namespace

std::string LagrangeSystem::print_R() const {
    std::vector<std::size_t> all(terms.size());
    for (std::size_t i = 0; i < all.size(); ++i)
        all[i] = i;
    return print_subset(terms, all);
}

std::string LagrangeSystem::print_N() const { return print_subset(terms, n_terms); }
std::string LagrangeSystem::print_H() const { return print_subset(terms, h_terms); }

std::string LagrangeSystem::print_R_concrete() const {
    std::vector<std::string> parts;
    for (const RTerm& r : terms)
        parts.push_back(r.concrete());
    return join_terms(parts);
}

std::vector<std::string> LagrangeSystem::print_conditions() const {
    const CanonicalProblem& p = problem;
    std::vector<std::string> out;
    for (std::size_t j = 0; j < p.constraints.size(); ++j) {
        const ConstraintSpec& c = p.constraints[j];
        std::string lhs;
        std::string isolating;
        bool negate = true;
        switch (c.kind) {
        case ConstraintKind::Ode:
            lhs = dpsi_symbol(j + 1);
            isolating = dpsi_symbol(j + 1);
            break;
        case ConstraintKind::Volterra:
            lhs = lambda_symbol(j + 1) + "(t)";
            isolating = lambda_symbol(j + 1);
            break;
        case ConstraintKind::Fredholm:
        case ConstraintKind::Convolution:
            lhs = lambda_symbol(j + 1) + "(t)";
            isolating = lambda_symbol(j + 1);
            negate = false;
            break;
        default:
            continue;
        }
        std::vector<std::size_t> running, events;
        for (std::size_t i = 0; i < terms.size(); ++i) {
            const RTerm& r = terms[i];
            // criterion and own-source terms always show; others when they carry the state
            const bool shown = r.source == 0 || r.source == static_cast<int>(j + 1) || depends_on(r.body, c.state);
            if (r.shape == TermShape::Offset || !shown)
                continue;
            if (r.shape == TermShape::Event)
                events.push_back(i);
            else if (!(r.source == static_cast<int>(j + 1) && r.shape == TermShape::Plain && r.multiplier == isolating))
                running.push_back(i);
        }
        const std::string d = "d/d" + c.state + " [";
        out.push_back(lhs + " = " + (negate ? "-" : "") + d + print_subset(terms, running) + "]");
        if (c.kind == ConstraintKind::Ode) {
            std::map<double, std::vector<std::size_t>> by_time;
            for (std::size_t i : events)
                by_time[terms[i].event_time].push_back(i);
            for (const auto& [t, idx] : by_time) {
                std::vector<std::string> parts;
                for (std::size_t i : idx) {
                    const std::string& sch = terms[i].schematic;
                    parts.push_back(sch.substr(0, sch.rfind("*delta(")));
                }
                const std::string at = time_text(t, p.horizon);
                out.push_back(psi_symbol(j + 1) + "(" + at + "-) - " + psi_symbol(j + 1) + "(" + at + "+) = " + d +
                              join_terms(parts) + "]");
            }
            out.push_back(psi_symbol(j + 1) + "(T+) = 0");
        }
    }
    const std::vector<std::string> first = classification.first_group();
    if (!first.empty()) {
        std::string us;
        for (const std::string& u : first)
            us += (us.empty() ? "" : ",") + u;
        if (first.size() > 1)
            us = "(" + us + ")";
        out.push_back(us + "* = argmax_{" + us + " in V} [" + print_H() + "]");
    }
    for (const VariableClass& v : classification.vars)
        if (v.group == Group::Second && p.control_index(v.name) >= 0)
            out.push_back("d/d" + v.name + " [" + print_R() + "] = 0");
    for (const ParamDecl& a : p.params) {
        if (a.automatic)
            continue;
        out.push_back("dS/d" + a.name + " * (" + a.name + "' - " + a.name + ") <= 0 for admissible " + a.name + "'");
    }
    for (std::size_t j = 0; j < p.constraints.size(); ++j)
        if (p.constraints[j].kind == ConstraintKind::Inequality)
            out.push_back(lambda_symbol(j + 1) + "*" + p.constraints[j].slack + " = 0, " + lambda_symbol(j + 1) +
                          " >= 0");
    if (p.criterion.is_maximin()) {
        out.push_back("int(lam_a, t, 0, T) = l0");
        out.push_back("lam_a*(f0 - a) = 0, lam_a >= 0");
    }
    return out;
}

std::size_t LagrangeSystem::u_constraint_count() const {
    std::vector<int> sources;
    for (std::size_t i : h_terms)
        if (terms[i].source > 0 && std::find(sources.begin(), sources.end(), terms[i].source) == sources.end())
            sources.push_back(terms[i].source);
    return sources.size();
}

std::vector<AdjointEquation> adjoint_system(const LagrangeSystem& L) {
    const CanonicalProblem& p = L.problem;
    std::vector<AdjointEquation> out;
    for (std::size_t j = 0; j < p.constraints.size(); ++j) {
        const ConstraintSpec& c = p.constraints[j];
        if (c.kind != ConstraintKind::Ode)
            continue;
        AdjointEquation eq;
        eq.state = c.state;
        eq.constraint = static_cast<int>(j + 1);
        eq.psi = psi_symbol(j + 1);
        Expr grad(0.0);
        std::map<double, Expr> jumps;
        for (const RTerm& r : L.terms) {
            if (r.shape == TermShape::Offset || r.multiplier == dpsi_symbol(j + 1))
                continue;
            if (r.shape == TermShape::TauIntegral) {
                if (depends_on(r.body, c.state))
                    throw std::invalid_argument("adjoint of " + c.state + " involves a tau-integral term");
                continue;
            }
            Expr d = diff(r.body, c.state);
            if (d.is_constant(0.0))
                continue;
            if (r.shape == TermShape::Event)
                jumps[r.event_time] = jumps[r.event_time] + d;
            else
                grad = grad + d;
        }
        eq.rhs = -grad;
        for (auto& [t, e] : jumps)
            eq.jumps.emplace_back(t, e);
        out.push_back(std::move(eq));
    }
    if (out.empty())
        throw std::invalid_argument("problem has no differential constraints");
    return out;
}

}  // namespace canonmp
