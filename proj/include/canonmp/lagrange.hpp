#pragma once

#include "canonmp/canonical.hpp"

#include <string>
#include <vector>

namespace canonmp {

/// R_I terms may carry first-group variables; R_II terms are point/state
/// terms and demote every control they contain.
enum class TermClass { RunningI, PointII };

/// How a term enters S = int R dt.
///  Plain:       body(t) integrated over [0, T]
///  Event:       body * delta(t - event_time)
///  TauIntegral: int_0^T lambda_j(tau) * body(t, tau) dtau, integrated over t
///  Offset:      constant carried for completeness; no effect on the
///               conditions when x0 and T are fixed
enum class TermShape { Plain, Event, TauIntegral, Offset };

struct RTerm {
    int source = 0;  // 0 for the criterion, j >= 1 for constraint j
    TermClass cls = TermClass::RunningI;
    TermShape shape = TermShape::Plain;
    Expr body;
    std::string multiplier;  // multiplier object the term references
    double event_time = 0.0;
    std::string schematic;   // role-named form, e.g. "psi1*f1"

    /// Body with the actual problem expressions, e.g. "psi1*u".
    std::string concrete() const;
};

enum class Group { First, Second, Parameter };

std::string_view group_name(Group g);

struct VariableClass {
    std::string name;
    Group group = Group::Second;
    std::vector<double> second_at;  // event times where a first-group control is demoted
};

struct Classification {
    std::vector<VariableClass> vars;

    const VariableClass& of(std::string_view name) const;
    /// Group at time t (event demotions apply only at the event time).
    Group group_at(std::string_view name, double t) const;
    std::vector<std::string> first_group() const;
};

/// psi_nu' = rhs on (0, T); at each listed time psi jumps down by the
/// listed amount (psi(t-) - psi(t+) = jump), with psi = 0 after T.
struct AdjointEquation {
    std::string state;
    int constraint = 0;  // 1-based index of the Ode constraint
    std::string psi;     // adjoint symbol, e.g. "psi1"
    Expr rhs;
    std::vector<std::pair<double, Expr>> jumps;
};

class LagrangeSystem {
public:
    CanonicalProblem problem;
    std::vector<RTerm> terms;
    Classification classification;
    std::vector<std::size_t> n_terms;  // indices into terms
    std::vector<std::size_t> h_terms;
    double l0 = 1.0;
    Layout layout;  // problem variables followed by multiplier symbols

    /// Canonical printing: non-event terms in source order, then event
    /// terms; constant offsets are omitted.
    std::string print_R() const;
    std::string print_N() const;
    std::string print_H() const;
    /// Every term including offsets, with the actual expressions.
    std::string print_R_concrete() const;
    /// Necessary conditions in schematic form, one per line: stationarity
    /// in each state, jumps at events, the max condition for first-group
    /// controls, and the parameter and multiplier sign conditions.
    std::vector<std::string> print_conditions() const;

    /// Number of constraints whose R_I terms carry a first-group control.
    std::size_t u_constraint_count() const;
};

std::vector<RTerm> contribution_for_criterion(const CriterionSpec& c, const CanonicalProblem& p);
std::vector<RTerm> contribution_for_constraint(const ConstraintSpec& c, std::size_t j, const CanonicalProblem& p);

LagrangeSystem assemble(const CanonicalProblem& p, double l0 = 1.0);

struct NHSplit {
    std::vector<std::size_t> n;
    std::vector<std::size_t> h;
};

NHSplit split_NH(const std::vector<RTerm>& terms, const Classification& cls);

Classification classify_variables(const CanonicalProblem& p, const std::vector<RTerm>& terms);

/// Adjoint equations of every Ode constraint. Throws std::invalid_argument
/// without Ode constraints and NonsmoothError if R is not smooth in x.
std::vector<AdjointEquation> adjoint_system(const LagrangeSystem& L);

/// Multiplier symbols of constraint j (1-based) by role.
std::string psi_symbol(std::size_t j);
std::string dpsi_symbol(std::size_t j);
std::string lambda_symbol(std::size_t j);
std::string tilde_symbol(std::size_t j);
std::string tail_symbol(std::size_t j);  // int_T^t lambda_j, Volterra

}  // namespace canonmp
