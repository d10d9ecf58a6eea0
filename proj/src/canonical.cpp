#include "canonmp/candidate.hpp"
#include "canonmp/canonical.hpp"

#include <algorithm>
#include <cmath>
#include <regex>
#include <set>

namespace canonmp {

double ControlDecl::lower() const {
    return box ? box->lo : *std::min_element(points.begin(), points.end());
}

double ControlDecl::upper() const {
    return box ? box->hi : *std::max_element(points.begin(), points.end());
}

bool ControlDecl::contains(double v, double tol) const {
    if (box)
        return v >= box->lo - tol && v <= box->hi + tol;
    return std::any_of(points.begin(), points.end(), [&](double q) { return std::abs(q - v) <= tol; });
}

std::string_view kind_name(ConstraintKind k) {
    switch (k) {
    case ConstraintKind::IntegralEq:
        return "integral";
    case ConstraintKind::PointwiseEq:
        return "pointwise";
    case ConstraintKind::TerminalEq:
        return "terminal";
    case ConstraintKind::Ode:
        return "ode";
    case ConstraintKind::Volterra:
        return "volterra";
    case ConstraintKind::Fredholm:
        return "fredholm";
    case ConstraintKind::Convolution:
        return "convolution";
    case ConstraintKind::Inequality:
        return "ineq";
    }
    return "?";
}

Expr ConstraintSpec::fredholm_integrand() const {
    if (kind == ConstraintKind::Convolution) {
        Expr shift = Expr::raw_binary(Op::Sub, Expr::variable("tau"), Expr::variable("t"));
        return Expr::variable(control) * substitute(expr, "s", shift);
    }
    return expr;
}

// ---------------------------------------------------------------------------

int CanonicalProblem::state_index(std::string_view name) const {
    for (std::size_t i = 0; i < states.size(); ++i)
        if (states[i].name == name)
            return static_cast<int>(i);
    return -1;
}

int CanonicalProblem::control_index(std::string_view name) const {
    for (std::size_t i = 0; i < controls.size(); ++i)
        if (controls[i].name == name)
            return static_cast<int>(i);
    return -1;
}

int CanonicalProblem::param_index(std::string_view name) const {
    for (std::size_t i = 0; i < params.size(); ++i)
        if (params[i].name == name)
            return static_cast<int>(i);
    return -1;
}

int CanonicalProblem::slack_index(std::string_view name) const {
    for (std::size_t i = 0; i < slacks.size(); ++i)
        if (slacks[i] == name)
            return static_cast<int>(i);
    return -1;
}

Layout CanonicalProblem::base_layout() const {
    Layout l;
    l.add("t");
    l.add("tau");
    for (const auto& s : states)
        l.add(s.name);
    for (const auto& c : controls)
        l.add(c.name);
    for (const auto& a : params)
        l.add(a.name);
    for (const auto& z : slacks)
        l.add(z);
    return l;
}

namespace {

bool reserved(const std::string& name) {
    static const std::regex pattern(R"((t|tau|s|l0|lam_a|(d?psi|lam|lt|Lam|z)[0-9]+(_0)?))");
    return std::regex_match(name, pattern);
}

void check_vars(const Expr& e, const std::set<std::string>& allowed, const std::string& where, int line) {
    for (const auto& v : free_variables(e))
        if (!allowed.count(v))
            throw ValidationError("undeclared variable '" + v + "' in " + where, line);
}

}  // namespace

CanonicalProblem build_problem(const ProblemSpec& spec) {
    CanonicalProblem p;
    if (!spec.horizon)
        throw ValidationError("missing 'horizon' declaration");
    if (!(*spec.horizon > 0.0) || !std::isfinite(*spec.horizon))
        throw ValidationError("horizon must be positive", spec.horizon_line);
    p.horizon = *spec.horizon;
    p.states = spec.states;
    p.controls = spec.controls;
    p.params = spec.params;

    std::set<std::string> names;
    auto declare = [&](const std::string& n) {
        if (reserved(n))
            throw ValidationError("name '" + n + "' is reserved");
        if (!names.insert(n).second)
            throw ValidationError("duplicate declaration of '" + n + "'");
    };
    for (const auto& s : p.states)
        declare(s.name);
    for (const auto& c : p.controls) {
        declare(c.name);
        if (c.box && !(c.box->lo <= c.box->hi))
            throw ValidationError("control '" + c.name + "' has lower bound above upper bound");
        if (!c.box && c.points.empty())
            throw ValidationError("control '" + c.name + "' has an empty feasible set");
    }
    for (const auto& a : p.params) {
        declare(a.name);
        if (a.box && !(a.box->lo <= a.box->hi))
            throw ValidationError("parameter '" + a.name + "' has lower bound above upper bound");
    }

    // Criterion: integral and terminal parts add up, maximin stands alone.
    for (std::size_t i = 0; i < spec.criterion.size(); ++i) {
        const auto& part = spec.criterion[i];
        int line = i < spec.criterion_lines.size() ? spec.criterion_lines[i] : 0;
        if (part.kind == CriterionKind::Maximin && spec.criterion.size() > 1)
            throw ValidationError("a maximin criterion cannot be combined with other criterion parts", line);
        if (part.kind == CriterionKind::Terminal && (part.time < 0.0 || part.time > p.horizon))
            throw ValidationError("terminal time outside [0, T]", line);
        p.criterion.parts.push_back(part);
    }
    if (p.criterion.is_maximin()) {
        if (names.count("a"))
            throw ValidationError("maximin criterion introduces parameter 'a'; the name is already taken");
        p.params.push_back(ParamDecl{"a", std::nullopt, true});
        names.insert("a");
    }

    std::set<std::string> base{"t"};
    for (const auto& s : p.states)
        base.insert(s.name);
    for (const auto& c : p.controls)
        base.insert(c.name);
    for (const auto& a : p.params)
        base.insert(a.name);
    for (std::size_t i = 0; i < p.criterion.parts.size(); ++i) {
        int line = i < spec.criterion_lines.size() ? spec.criterion_lines[i] : 0;
        check_vars(p.criterion.parts[i].expr, base, "criterion", line);
    }

    std::set<std::string> bound_states;
    for (std::size_t j = 0; j < spec.constraints.size(); ++j) {
        ConstraintSpec c = spec.constraints[j];
        std::string where = "constraint " + std::to_string(j + 1);
        switch (c.kind) {
        case ConstraintKind::Ode:
        case ConstraintKind::Volterra:
        case ConstraintKind::Fredholm:
        case ConstraintKind::Convolution: {
            int si = p.state_index(c.state);
            if (si < 0)
                throw ValidationError(where + " binds undeclared state '" + c.state + "'", c.line);
            if (!bound_states.insert(c.state).second)
                throw ValidationError("state '" + c.state + "' is bound by more than one constraint", c.line);
            if ((c.kind == ConstraintKind::Ode || c.kind == ConstraintKind::Volterra) && !p.states[si].init)
                throw ValidationError("state '" + c.state + "' needs an initial value for " +
                                          std::string(kind_name(c.kind)),
                                      c.line);
            break;
        }
        default:
            break;
        }
        if (c.kind == ConstraintKind::Convolution) {
            if (p.control_index(c.control) < 0)
                throw ValidationError(where + " uses undeclared control '" + c.control + "'", c.line);
            std::set<std::string> kernel_vars{"s"};
            for (const auto& a : p.params)
                kernel_vars.insert(a.name);
            check_vars(c.expr, kernel_vars, where + " kernel", c.line);
        } else if (c.kind == ConstraintKind::Fredholm) {
            std::set<std::string> vars = base;
            vars.insert("tau");
            check_vars(c.expr, vars, where, c.line);
        } else {
            check_vars(c.expr, base, where, c.line);
        }
        if (c.kind == ConstraintKind::TerminalEq && (c.time < 0.0 || c.time > p.horizon))
            throw ValidationError("terminal time outside [0, T]", c.line);
        if (c.kind == ConstraintKind::Inequality) {
            c.slack = "z" + std::to_string(j + 1);
            p.slacks.push_back(c.slack);
        }
        p.constraints.push_back(std::move(c));
    }
    return p;
}

// ---------------------------------------------------------------------------

Mesh::Mesh(double horizon, int intervals) : horizon_(horizon), n_(intervals) {
    if (!(horizon > 0.0) || intervals < 1)
        throw std::invalid_argument("mesh needs T > 0 and at least one interval");
}

double Mesh::node(std::size_t k) const {
    if (k == static_cast<std::size_t>(n_))
        return horizon_;
    return horizon_ * static_cast<double>(k) / n_;
}

std::size_t Mesh::snap(double t, bool* snapped) const {
    double r = t / step();
    auto k = static_cast<long>(std::lround(r));
    k = std::clamp<long>(k, 0, n_);
    if (snapped)
        *snapped = std::abs(r - static_cast<double>(k)) > 1e-9;
    return static_cast<std::size_t>(k);
}

std::size_t Mesh::interval_of(double t) const {
    auto i = static_cast<long>(std::floor(t / step() + 1e-12));
    return static_cast<std::size_t>(std::clamp<long>(i, 0, n_ - 1));
}

// ---------------------------------------------------------------------------

CanonicalForm to_canonical(const ConstraintSpec& c, const CanonicalProblem& p) {
    CanonicalForm form;
    const Expr tau = Expr::variable("tau");
    const Expr t = Expr::variable("t");
    const Expr heaviside = Expr::call(Func::Step, {Expr::raw_binary(Op::Sub, tau, t)});
    switch (c.kind) {
    case ConstraintKind::Ode:
    case ConstraintKind::Volterra: {
        double x0 = *p.states[p.state_index(c.state)].init;
        form.windowed = -c.expr;
        form.unwindowed = Expr(-x0 / p.horizon);
        form.window = TauWindow::UpToTau;
        form.f1 = form.windowed * heaviside + form.unwindowed;
        form.f2 = Expr::variable(c.state);
        form.point_at = PointAt::Tau;
        form.tau_family = true;
        break;
    }
    case ConstraintKind::IntegralEq:
        form.f1 = c.expr;
        form.unwindowed = c.expr;
        form.f2 = Expr(0.0);
        break;
    case ConstraintKind::PointwiseEq:
        form.f1 = Expr(0.0);
        form.f2 = c.expr;
        form.point_at = PointAt::Tau;
        form.tau_family = true;
        break;
    case ConstraintKind::TerminalEq:
        form.f1 = Expr(0.0);
        form.f2 = c.expr;
        form.point_at = PointAt::Fixed;
        form.point_time = c.time;
        break;
    case ConstraintKind::Fredholm:
    case ConstraintKind::Convolution:
        form.f1 = c.fredholm_integrand();
        form.unwindowed = form.f1;
        form.f2 = -Expr::variable(c.state);
        form.point_at = PointAt::Tau;
        form.tau_family = true;
        break;
    case ConstraintKind::Inequality:
        form.f1 = Expr(0.0);
        form.f2 = c.expr - Expr::variable(c.slack);
        form.point_at = PointAt::Tau;
        form.tau_family = true;
        break;
    }
    return form;
}

// ---------------------------------------------------------------------------
// Candidates

std::size_t RelaxedControl::support(std::size_t i, double tol) const {
    return static_cast<std::size_t>(std::count_if(gamma[i].begin(), gamma[i].end(), [&](double g) { return g > tol; }));
}

std::size_t RelaxedControl::max_support(double tol) const {
    std::size_t s = 0;
    for (std::size_t i = 0; i < intervals(); ++i)
        s = std::max(s, support(i, tol));
    return s;
}

SolutionCandidate SolutionCandidate::zeros(const CanonicalProblem& p, const Mesh& mesh) {
    SolutionCandidate c;
    c.mesh = mesh;
    std::size_t n = mesh.nodes();
    c.x.assign(n, std::vector<double>(p.states.size(), 0.0));
    c.u.assign(static_cast<std::size_t>(mesh.intervals()), std::vector<double>(p.controls.size(), 0.0));
    c.a.assign(p.params.size(), 0.0);
    c.z.assign(n, std::vector<double>(p.slacks.size(), 0.0));
    c.multipliers.resize(p.constraints.size());
    for (std::size_t j = 0; j < p.constraints.size(); ++j) {
        c.multipliers[j].lambda.assign(n, 0.0);
        auto k = p.constraints[j].kind;
        if (k == ConstraintKind::Ode || k == ConstraintKind::Volterra)
            c.multipliers[j].psi.assign(n, 0.0);
    }
    if (p.criterion.is_maximin())
        c.criterion_lambda.assign(n, 0.0);
    return c;
}

std::size_t SolutionCandidate::atom_count(std::size_t interval) const {
    return relaxed ? relaxed->gamma[interval].size() : 1;
}

double SolutionCandidate::atom_weight(std::size_t interval, std::size_t atom) const {
    return relaxed ? relaxed->gamma[interval][atom] : 1.0;
}

const std::vector<double>& SolutionCandidate::atom_value(std::size_t interval, std::size_t atom) const {
    return relaxed ? relaxed->values[interval][atom] : u[interval];
}

PointFiller::PointFiller(const CanonicalProblem& p, const Layout& layout)
    : t_slot_(layout.slot("t")),
      tau_slot_(layout.slot("tau")),
      state0_(p.states.empty() ? 0 : layout.slot(p.states.front().name)),
      control0_(p.controls.empty() ? 0 : layout.slot(p.controls.front().name)),
      param0_(p.params.empty() ? 0 : layout.slot(p.params.front().name)),
      slack0_(p.slacks.empty() ? 0 : layout.slot(p.slacks.front())),
      n_states_(p.states.size()),
      n_controls_(p.controls.size()),
      n_params_(p.params.size()),
      n_slacks_(p.slacks.size()) {}

void PointFiller::set_node(std::vector<double>& v, const SolutionCandidate& c, std::size_t node) const {
    v[t_slot_] = c.mesh.node(node);
    set_states(v, c.x[node]);
    for (std::size_t i = 0; i < n_slacks_; ++i)
        v[slack0_ + i] = c.z[node][i];
    set_params(v, c.a);
}

void PointFiller::set_controls(std::vector<double>& v, const std::vector<double>& u) const {
    for (std::size_t i = 0; i < n_controls_; ++i)
        v[control0_ + i] = u[i];
}

void PointFiller::set_params(std::vector<double>& v, const std::vector<double>& a) const {
    for (std::size_t i = 0; i < n_params_; ++i)
        v[param0_ + i] = a[i];
}

void PointFiller::set_states(std::vector<double>& v, const std::vector<double>& x) const {
    for (std::size_t i = 0; i < n_states_; ++i)
        v[state0_ + i] = x[i];
}

namespace {

// Trapezoid of g over interval i, averaged over the control atoms.
double interval_trapezoid(const CompiledExpr& g, const PointFiller& fill, const SolutionCandidate& c, std::size_t i,
                          std::vector<double>& left, std::vector<double>& right) {
    double h = c.mesh.step();
    fill.set_node(left, c, i);
    fill.set_node(right, c, i + 1);
    double sum = 0.0;
    for (std::size_t k = 0; k < c.atom_count(i); ++k) {
        double w = c.atom_weight(i, k);
        if (w == 0.0)
            continue;
        fill.set_controls(left, c.atom_value(i, k));
        fill.set_controls(right, c.atom_value(i, k));
        sum += w * 0.5 * h * (g(left) + g(right));
    }
    return sum;
}

// Point evaluation at a node using the controls of the interval starting
// there (the last interval at t = T), averaged over atoms.
double node_value(const CompiledExpr& g, const PointFiller& fill, const SolutionCandidate& c, std::size_t node,
                  std::vector<double>& v) {
    std::size_t i = std::min(node, static_cast<std::size_t>(c.mesh.intervals() - 1));
    fill.set_node(v, c, node);
    double sum = 0.0;
    for (std::size_t k = 0; k < c.atom_count(i); ++k) {
        double w = c.atom_weight(i, k);
        if (w == 0.0)
            continue;
        fill.set_controls(v, c.atom_value(i, k));
        sum += w * g(v);
    }
    return sum;
}

}  // namespace

std::vector<std::vector<double>> eval_functionals(const CanonicalProblem& p, const SolutionCandidate& cand) {
    const Layout layout = p.base_layout();
    const PointFiller fill(p, layout);
    const std::size_t n_nodes = cand.mesh.nodes();
    const std::size_t n_int = static_cast<std::size_t>(cand.mesh.intervals());
    std::vector<double> left(layout.size(), 0.0), right(layout.size(), 0.0);
    std::vector<std::vector<double>> result;

    for (const auto& c : p.constraints) {
        CanonicalForm form = to_canonical(c, p);
        std::vector<double> J(n_nodes, 0.0);

        if (form.window == TauWindow::UpToTau) {
            CompiledExpr g(form.windowed, layout);
            double acc = 0.0;
            for (std::size_t k = 0; k < n_nodes; ++k) {
                J[k] += acc;
                if (k < n_int)
                    acc += interval_trapezoid(g, fill, cand, k, left, right);
            }
        }
        if (!(form.unwindowed == Expr(0.0))) {
            CompiledExpr g(form.unwindowed, layout);
            bool tau_dependent = depends_on(form.unwindowed, "tau");
            double constant_part = 0.0;
            for (std::size_t k = 0; k < n_nodes; ++k) {
                if (!tau_dependent && k > 0) {
                    J[k] += constant_part;
                    continue;
                }
                double tau = cand.mesh.node(k);
                fill.set_tau(left, tau);
                fill.set_tau(right, tau);
                double sum = 0.0;
                for (std::size_t i = 0; i < n_int; ++i)
                    sum += interval_trapezoid(g, fill, cand, i, left, right);
                constant_part = sum;
                J[k] += sum;
            }
        }
        if (form.point_at != PointAt::None) {
            CompiledExpr g(form.f2, layout);
            if (form.point_at == PointAt::Tau) {
                for (std::size_t k = 0; k < n_nodes; ++k) {
                    fill.set_tau(left, cand.mesh.node(k));
                    J[k] += node_value(g, fill, cand, k, left);
                }
            } else {
                std::size_t k0 = cand.mesh.snap(form.point_time);
                double v = node_value(g, fill, cand, k0, left);
                for (auto& j : J)
                    j += v;
            }
        }
        result.push_back(std::move(J));
    }
    return result;
}

double eval_criterion(const CanonicalProblem& p, const SolutionCandidate& cand) {
    const Layout layout = p.base_layout();
    const PointFiller fill(p, layout);
    std::vector<double> left(layout.size(), 0.0), right(layout.size(), 0.0);
    double total = 0.0;
    for (const auto& part : p.criterion.parts) {
        CompiledExpr g(part.expr, layout);
        switch (part.kind) {
        case CriterionKind::Integral:
            for (std::size_t i = 0; i < static_cast<std::size_t>(cand.mesh.intervals()); ++i)
                total += interval_trapezoid(g, fill, cand, i, left, right);
            break;
        case CriterionKind::Terminal:
            total += node_value(g, fill, cand, cand.mesh.snap(part.time), left);
            break;
        case CriterionKind::Maximin: {
            double lo = std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < cand.mesh.nodes(); ++k)
                lo = std::min(lo, node_value(g, fill, cand, k, left));
            total += lo;
            break;
        }
        }
    }
    return total;
}

std::vector<double> nodal_derivative(const std::vector<double>& y, double h) {
    const std::size_t n = y.size();
    std::vector<double> d(n, 0.0);
    if (n < 2)
        return d;
    if (n == 2) {
        d[0] = d[1] = (y[1] - y[0]) / h;
        return d;
    }
    d[0] = (-3.0 * y[0] + 4.0 * y[1] - y[2]) / (2.0 * h);
    d[n - 1] = (3.0 * y[n - 1] - 4.0 * y[n - 2] + y[n - 3]) / (2.0 * h);
    for (std::size_t k = 1; k + 1 < n; ++k)
        d[k] = (y[k + 1] - y[k - 1]) / (2.0 * h);
    return d;
}

double max_residual(const std::vector<std::vector<double>>& J) {
    double m = 0.0;
    for (const auto& row : J)
        for (double v : row)
            m = std::max(m, std::abs(v));
    return m;
}

}  // namespace canonmp
