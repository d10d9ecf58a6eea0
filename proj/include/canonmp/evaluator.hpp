#pragma once

#include "canonmp/candidate.hpp"
#include "canonmp/lagrange.hpp"

#include <optional>
#include <string>
#include <vector>

namespace canonmp {

/// Compiled view of a LagrangeSystem bound to candidate data. A value
/// vector follows system().layout; load_node fills everything except the
/// controls.
class SystemEvaluator {
public:
    explicit SystemEvaluator(const LagrangeSystem& L);

    const LagrangeSystem& system() const { return *L_; }
    std::vector<double> blank() const { return std::vector<double>(L_->layout.size(), 0.0); }

    void load_node(std::vector<double>& v, const SolutionCandidate& c, std::size_t node) const;
    void load_controls(std::vector<double>& v, const std::vector<double>& u) const;
    std::size_t slot(std::string_view name) const { return L_->layout.slot(name); }

    /// Value of term i at the point v. Tau-integral terms sum over the
    /// candidate's mesh with trapezoid weights.
    double term(std::size_t i, std::vector<double>& v, const SolutionCandidate& c) const;
    double term_dx(std::size_t i, std::size_t state, std::vector<double>& v, const SolutionCandidate& c) const;
    double term_da(std::size_t i, std::size_t param, std::vector<double>& v, const SolutionCandidate& c) const;
    double term_du(std::size_t i, std::size_t control, std::vector<double>& v, const SolutionCandidate& c) const;

    double sum(const std::vector<std::size_t>& subset, std::vector<double>& v, const SolutionCandidate& c) const;

    /// Node data of both ends of interval i.
    struct IntervalPoint {
        std::vector<double> left;
        std::vector<double> right;
    };
    IntervalPoint load_interval(const SolutionCandidate& c, std::size_t i) const;

    /// Trapezoid mean of H over the interval with controls u.
    double interval_H(IntervalPoint& pt, const std::vector<double>& u, const SolutionCandidate& c) const;

private:
    struct Compiled {
        CompiledExpr value;
        std::vector<std::optional<CompiledExpr>> dx;
        std::vector<std::optional<CompiledExpr>> da;
        std::vector<std::optional<CompiledExpr>> du;
        std::string nonsmooth;  // diff error message, if any
    };
    enum class Source { L0, LamA, NodalLambda, NodalPsi, PsiAt0, Scalar };
    struct Binding {
        std::size_t slot;
        Source source;
        std::size_t j;  // 0-based constraint index
    };

    double tau_sum(std::size_t i, const CompiledExpr& f, std::vector<double>& v, const SolutionCandidate& c) const;

    const LagrangeSystem* L_;
    PointFiller filler_;
    std::vector<Compiled> compiled_;
    std::vector<Binding> bindings_;
    std::size_t tau_slot_;
};

}  // namespace canonmp
