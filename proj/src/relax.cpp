#include "canonmp/relax.hpp"

#include <algorithm>

namespace canonmp {

RelaxedSystem extend(const LagrangeSystem& L) {
    RelaxedSystem rs;
    rs.base = L;
    rs.m = L.u_constraint_count();
    rs.slots = L.classification.first_group().empty() ? 0 : rs.m + 1;
    return rs;
}

double extended_R(const SystemEvaluator& ev, std::vector<double>& v, const SolutionCandidate& c, std::size_t i) {
    const LagrangeSystem& L = ev.system();
    double r = 0.0;
    for (std::size_t k = 0; k < c.atom_count(i); ++k) {
        ev.load_controls(v, c.atom_value(i, k));
        if (k == 0)
            r += ev.sum(L.n_terms, v, c);
        r += c.atom_weight(i, k) * ev.sum(L.h_terms, v, c);
    }
    return r;
}

}  // namespace canonmp

namespace canonmp {

SolutionCandidate reduce_support(const LagrangeSystem& L, const SolutionCandidate& c) {
    if (!c.relaxed)
        return c;
    const SystemEvaluator ev(L);
    const std::size_t m = L.u_constraint_count();

    // Sources with H terms; constraint features use unit multipliers unless
    // the term integrates the multiplier over tau.
    std::vector<int> sources;
    for (std::size_t h : L.h_terms)
        if (L.terms[h].source > 0 && std::find(sources.begin(), sources.end(), L.terms[h].source) == sources.end())
            sources.push_back(L.terms[h].source);
    SolutionCandidate unit = c;
    for (int s : sources) {
        bool tau_integral = false;
        for (std::size_t h : L.h_terms)
            tau_integral = tau_integral || (L.terms[h].source == s && L.terms[h].shape == TermShape::TauIntegral);
        if (tau_integral)
            continue;
        ConstraintMultiplier& cm = unit.multipliers[static_cast<std::size_t>(s - 1)];
        std::fill(cm.lambda.begin(), cm.lambda.end(), 1.0);
        std::fill(cm.psi.begin(), cm.psi.end(), 1.0);
        cm.scalar = 1.0;
    }

    SolutionCandidate out = c;
    RelaxedControl& rc = *out.relaxed;
    for (std::size_t i = 0; i < rc.intervals(); ++i) {
        auto pt = ev.load_interval(c, i);
        auto unit_pt = ev.load_interval(unit, i);
        std::vector<SupportPoint<double>> points;
        double total = 0.0;
        for (std::size_t k = 0; k < rc.gamma[i].size(); ++k)
            total += rc.gamma[i][k];
        for (std::size_t k = 0; k < rc.gamma[i].size(); ++k) {
            const auto& u = rc.values[i][k];
            SupportPoint<double> sp;
            sp.weight = rc.gamma[i][k] / total;
            sp.f.push_back(ev.interval_H(pt, u, c));
            ev.load_controls(unit_pt.left, u);
            ev.load_controls(unit_pt.right, u);
            for (int s : sources) {
                double f = 0.0;
                for (std::size_t h : L.h_terms)
                    if (L.terms[h].source == s)
                        f += 0.5 * (ev.term(h, unit_pt.left, unit) + ev.term(h, unit_pt.right, unit));
                sp.f.push_back(f);
            }
            points.push_back(std::move(sp));
        }
        const ReducedSupport<double> red = caratheodory_reduce(points);
        std::vector<double> gamma(m + 1, 0.0);
        std::vector<std::vector<double>> values(m + 1, rc.values[i][red.index[0]]);
        std::size_t best = 0;
        for (std::size_t k = 0; k < red.index.size() && k < m + 1; ++k) {
            gamma[k] = red.weight[k];
            values[k] = rc.values[i][red.index[k]];
            if (gamma[k] > gamma[best])
                best = k;
        }
        out.u[i] = values[best];
        rc.gamma[i] = std::move(gamma);
        rc.values[i] = std::move(values);
    }
    return out;
}

}  // namespace canonmp
