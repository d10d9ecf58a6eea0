#include "canonmp/evaluator.hpp"

namespace canonmp {

namespace {

std::optional<CompiledExpr> try_diff(const Expr& e, const std::string& var, const Layout& layout, std::string& err) {
    try {
        return CompiledExpr(diff(e, var), layout);
    } catch (const NonsmoothError& ex) {
        err = ex.what();
        return std::nullopt;
    }
}

double at(const std::vector<double>& v, std::size_t k) { return k < v.size() ? v[k] : 0.0; }

}  // namespace

SystemEvaluator::SystemEvaluator(const LagrangeSystem& L)
    : L_(&L), filler_(L.problem, L.layout), tau_slot_(L.layout.slot("tau")) {
    const CanonicalProblem& p = L.problem;
    for (const RTerm& r : L.terms) {
        Compiled c;
        c.value = CompiledExpr(r.body, L.layout);
        for (const StateDecl& s : p.states)
            c.dx.push_back(try_diff(r.body, s.name, L.layout, c.nonsmooth));
        for (const ParamDecl& a : p.params)
            c.da.push_back(try_diff(r.body, a.name, L.layout, c.nonsmooth));
        for (const ControlDecl& u : p.controls)
            c.du.push_back(try_diff(r.body, u.name, L.layout, c.nonsmooth));
        compiled_.push_back(std::move(c));
    }

    auto bind = [&](const std::string& name, Source src, std::size_t j) {
        if (L.layout.contains(name))
            bindings_.push_back({L.layout.slot(name), src, j});
    };
    bind("l0", Source::L0, 0);
    bind("lam_a", Source::LamA, 0);
    for (std::size_t j = 0; j < p.constraints.size(); ++j) {
        const std::size_t n = j + 1;
        switch (p.constraints[j].kind) {
        case ConstraintKind::IntegralEq:
            bind(lambda_symbol(n), Source::Scalar, j);
            break;
        case ConstraintKind::TerminalEq:
            bind(tilde_symbol(n), Source::Scalar, j);
            break;
        case ConstraintKind::Ode:
            bind(psi_symbol(n), Source::NodalPsi, j);
            bind(dpsi_symbol(n), Source::NodalLambda, j);
            bind(psi_symbol(n) + "_0", Source::PsiAt0, j);
            break;
        case ConstraintKind::Volterra:
            bind(tail_symbol(n), Source::NodalPsi, j);
            bind(lambda_symbol(n), Source::NodalLambda, j);
            bind(tail_symbol(n) + "_0", Source::PsiAt0, j);
            break;
        case ConstraintKind::PointwiseEq:
        case ConstraintKind::Fredholm:
        case ConstraintKind::Convolution:
        case ConstraintKind::Inequality:
            bind(lambda_symbol(n), Source::NodalLambda, j);
            break;
        }
    }
}

void SystemEvaluator::load_node(std::vector<double>& v, const SolutionCandidate& c, std::size_t node) const {
    filler_.set_node(v, c, node);
    v[tau_slot_] = c.mesh.node(node);
    for (const Binding& b : bindings_) {
        double value = 0.0;
        switch (b.source) {
        case Source::L0: value = c.l0; break;
        case Source::LamA: value = at(c.criterion_lambda, node); break;
        case Source::NodalLambda: value = at(c.multipliers[b.j].lambda, node); break;
        case Source::NodalPsi: value = at(c.multipliers[b.j].psi, node); break;
        case Source::PsiAt0: value = at(c.multipliers[b.j].psi, 0); break;
        case Source::Scalar: value = c.multipliers[b.j].scalar; break;
        }
        v[b.slot] = value;
    }
}

void SystemEvaluator::load_controls(std::vector<double>& v, const std::vector<double>& u) const {
    filler_.set_controls(v, u);
}

double SystemEvaluator::tau_sum(std::size_t i, const CompiledExpr& f, std::vector<double>& v,
                                const SolutionCandidate& c) const {
    const std::size_t j = static_cast<std::size_t>(L_->terms[i].source) - 1;
    const std::vector<double>& lam = c.multipliers[j].lambda;
    const double saved = v[tau_slot_];
    const double h = c.mesh.step();
    double s = 0.0;
    for (std::size_t k = 0; k < c.mesh.nodes(); ++k) {
        const double w = (k == 0 || k + 1 == c.mesh.nodes()) ? 0.5 * h : h;
        const double l = at(lam, k);
        if (l == 0.0)
            continue;
        v[tau_slot_] = c.mesh.node(k);
        s += w * l * f(v);
    }
    v[tau_slot_] = saved;
    return s;
}

double SystemEvaluator::term(std::size_t i, std::vector<double>& v, const SolutionCandidate& c) const {
    if (L_->terms[i].shape == TermShape::TauIntegral)
        return tau_sum(i, compiled_[i].value, v, c);
    return compiled_[i].value(v);
}

namespace {

const CompiledExpr& need(const std::optional<CompiledExpr>& d, const std::string& err) {
    if (!d)
        throw NonsmoothError(err);
    return *d;
}

}  // namespace

double SystemEvaluator::term_dx(std::size_t i, std::size_t state, std::vector<double>& v,
                                const SolutionCandidate& c) const {
    const CompiledExpr& d = need(compiled_[i].dx[state], compiled_[i].nonsmooth);
    return L_->terms[i].shape == TermShape::TauIntegral ? tau_sum(i, d, v, c) : d(v);
}

double SystemEvaluator::term_da(std::size_t i, std::size_t param, std::vector<double>& v,
                                const SolutionCandidate& c) const {
    const CompiledExpr& d = need(compiled_[i].da[param], compiled_[i].nonsmooth);
    return L_->terms[i].shape == TermShape::TauIntegral ? tau_sum(i, d, v, c) : d(v);
}

double SystemEvaluator::term_du(std::size_t i, std::size_t control, std::vector<double>& v,
                                const SolutionCandidate& c) const {
    const CompiledExpr& d = need(compiled_[i].du[control], compiled_[i].nonsmooth);
    return L_->terms[i].shape == TermShape::TauIntegral ? tau_sum(i, d, v, c) : d(v);
}

double SystemEvaluator::sum(const std::vector<std::size_t>& subset, std::vector<double>& v,
                            const SolutionCandidate& c) const {
    double s = 0.0;
    for (std::size_t i : subset)
        s += term(i, v, c);
    return s;
}

SystemEvaluator::IntervalPoint SystemEvaluator::load_interval(const SolutionCandidate& c, std::size_t i) const {
    IntervalPoint pt{blank(), blank()};
    load_node(pt.left, c, i);
    load_node(pt.right, c, i + 1);
    return pt;
}

double SystemEvaluator::interval_H(IntervalPoint& pt, const std::vector<double>& u, const SolutionCandidate& c) const {
    load_controls(pt.left, u);
    load_controls(pt.right, u);
    return 0.5 * (sum(L_->h_terms, pt.left, c) + sum(L_->h_terms, pt.right, c));
}

}  // namespace canonmp
