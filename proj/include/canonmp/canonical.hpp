#pragma once

#include "canonmp/expr.hpp"

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace canonmp {

/// Invalid problem declaration (undeclared variable, duplicate binding, ...).
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg, int line = 0)
        : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg), line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

struct Box {
    double lo = 0.0;
    double hi = 0.0;
};

struct StateDecl {
    std::string name;
    std::optional<double> init;
};

/// Feasible set V of one control component: a box or a finite point set.
struct ControlDecl {
    std::string name;
    std::optional<Box> box;
    std::vector<double> points;

    bool is_finite() const { return !box.has_value(); }
    double lower() const;
    double upper() const;
    bool contains(double v, double tol = 1e-12) const;
};

struct ParamDecl {
    std::string name;
    std::optional<Box> box;
    bool automatic = false;  // introduced by a maximin criterion
};

enum class CriterionKind { Integral, Terminal, Maximin };

/// One additive part of the criterion. Several Integral/Terminal parts sum
/// up (each terminal part is one delta(t - t_l) event); Maximin stands alone.
struct CriterionPart {
    CriterionKind kind = CriterionKind::Integral;
    Expr expr;
    double time = 0.0;  // Terminal only
};

struct CriterionSpec {
    std::vector<CriterionPart> parts;
    bool is_maximin() const { return parts.size() == 1 && parts[0].kind == CriterionKind::Maximin; }
};

enum class ConstraintKind { IntegralEq, PointwiseEq, TerminalEq, Ode, Volterra, Fredholm, Convolution, Inequality };

std::string_view kind_name(ConstraintKind k);

struct ConstraintSpec {
    ConstraintKind kind = ConstraintKind::IntegralEq;
    Expr expr;            // right-hand side f, F, or the kernel k(s) for Convolution
    std::string state;    // Ode, Volterra, Fredholm, Convolution
    std::string control;  // Convolution input
    double time = 0.0;    // TerminalEq
    std::string slack;    // Inequality: generated z >= 0
    int line = 0;

    /// Integrand in (t, tau, ...) for Fredholm and Convolution.
    Expr fredholm_integrand() const;
};

/// Unvalidated declarations as read from a problem file.
struct ProblemSpec {
    std::optional<double> horizon;
    std::vector<StateDecl> states;
    std::vector<ControlDecl> controls;
    std::vector<ParamDecl> params;
    std::vector<CriterionPart> criterion;
    std::vector<ConstraintSpec> constraints;
    std::vector<int> criterion_lines;
    int horizon_line = 0;
};

/// Validated problem in canonical form: maximize the criterion subject to
/// the tau-indexed family J_j(tau) = 0.
class CanonicalProblem {
public:
    double horizon = 1.0;
    std::vector<StateDecl> states;
    std::vector<ControlDecl> controls;
    std::vector<ParamDecl> params;
    std::vector<std::string> slacks;
    CriterionSpec criterion;
    std::vector<ConstraintSpec> constraints;

    std::size_t m() const { return constraints.size(); }
    std::size_t p() const { return states.size(); }

    int state_index(std::string_view name) const;
    int control_index(std::string_view name) const;
    int param_index(std::string_view name) const;
    int slack_index(std::string_view name) const;

    /// Slots: t, tau, states, controls, params, slacks.
    Layout base_layout() const;
};

CanonicalProblem build_problem(const ProblemSpec& spec);

/// Uniform mesh of N intervals on [0, T].
class Mesh {
public:
    Mesh(double horizon, int intervals);
    int intervals() const { return n_; }
    std::size_t nodes() const { return static_cast<std::size_t>(n_) + 1; }
    double horizon() const { return horizon_; }
    double step() const { return horizon_ / n_; }
    double node(std::size_t k) const;
    /// Index of the node nearest to t. Sets `snapped` when t is off-grid.
    std::size_t snap(double t, bool* snapped = nullptr) const;
    /// Interval containing t (right-continuous, the last interval closed).
    std::size_t interval_of(double t) const;

private:
    double horizon_;
    int n_;
};

/// Quadrature window applied to the running part of f_{j1}.
enum class TauWindow { None, UpToTau };

enum class PointAt { None, Tau, Fixed };

/// Canonical integrand pair of one constraint:
/// J(tau) = int_0^T [ f1(t, ..., tau) + f2(t, ..., tau) delta(t - point) ] dt.
struct CanonicalForm {
    Expr f1;                // full f_{j1}, with step(tau - t) for the Heaviside factor
    Expr f2;                // f_{j2}
    Expr windowed;          // part of f1 multiplied by h(tau - t)
    Expr unwindowed;        // remainder of f1
    TauWindow window = TauWindow::None;
    PointAt point_at = PointAt::None;
    double point_time = 0.0;
    bool tau_family = false;  // J depends on tau
};

CanonicalForm to_canonical(const ConstraintSpec& c, const CanonicalProblem& p);

}  // namespace canonmp
