#pragma once

#include "canonmp/canonical.hpp"

#include <cstddef>
#include <optional>
#include <vector>

namespace canonmp {

/// Finite atomic measure per mesh interval: weights gamma_k and basic
/// values u^k (one vector of control components per atom).
struct RelaxedControl {
    std::vector<std::vector<double>> gamma;                // [interval][atom]
    std::vector<std::vector<std::vector<double>>> values;  // [interval][atom][control]

    std::size_t intervals() const { return gamma.size(); }
    std::size_t slots() const { return gamma.empty() ? 0 : gamma.front().size(); }
    /// Number of atoms with weight above `tol` on interval i.
    std::size_t support(std::size_t i, double tol = 1e-9) const;
    std::size_t max_support(double tol = 1e-9) const;
};

/// Multiplier data attached to constraint j.
struct ConstraintMultiplier {
    std::vector<double> lambda;  // nodal lambda_j(t); for Ode/Volterra lambda = dpsi/dt
    std::vector<double> psi;     // nodal adjoint for Ode/Volterra, empty otherwise
    double scalar = 0.0;         // IntegralEq lambda, TerminalEq lambda-tilde
};

/// Mesh trajectories plus multipliers. x and z are nodal (piecewise
/// linear), u is per interval (piecewise constant).
struct SolutionCandidate {
    Mesh mesh{1.0, 1};
    std::vector<std::vector<double>> x;  // [node][state]
    std::vector<std::vector<double>> u;  // [interval][control]
    std::optional<RelaxedControl> relaxed;
    std::vector<double> a;
    std::vector<std::vector<double>> z;  // [node][slack]
    double l0 = 1.0;
    std::vector<ConstraintMultiplier> multipliers;  // one per constraint
    std::vector<double> criterion_lambda;           // maximin lambda(t), nodal
    double objective = 0.0;

    /// Zero-initialised candidate shaped for problem p on mesh.
    static SolutionCandidate zeros(const CanonicalProblem& p, const Mesh& mesh);

    std::size_t atom_count(std::size_t interval) const;
    double atom_weight(std::size_t interval, std::size_t atom) const;
    const std::vector<double>& atom_value(std::size_t interval, std::size_t atom) const;
};

/// Fills a value vector laid out by CanonicalProblem::base_layout() (plus
/// any trailing multiplier slots, left untouched).
class PointFiller {
public:
    PointFiller(const CanonicalProblem& p, const Layout& layout);

    /// Writes t, x(node), z(node), a. Controls are written separately.
    void set_node(std::vector<double>& v, const SolutionCandidate& c, std::size_t node) const;
    void set_time(std::vector<double>& v, double t) const { v[t_slot_] = t; }
    void set_tau(std::vector<double>& v, double tau) const { v[tau_slot_] = tau; }
    void set_controls(std::vector<double>& v, const std::vector<double>& u) const;
    void set_params(std::vector<double>& v, const std::vector<double>& a) const;
    void set_states(std::vector<double>& v, const std::vector<double>& x) const;

private:
    std::size_t t_slot_;
    std::size_t tau_slot_;
    std::size_t state0_;
    std::size_t control0_;
    std::size_t param0_;
    std::size_t slack0_;
    std::size_t n_states_;
    std::size_t n_controls_;
    std::size_t n_params_;
    std::size_t n_slacks_;
};

/// Residuals J_j(tau_k) on every mesh node: [constraint][node].
/// Trapezoidal quadrature per interval, delta terms as point evaluations,
/// h(0) = 1 so the windowed integral over [0, tau_k] uses whole intervals.
std::vector<std::vector<double>> eval_functionals(const CanonicalProblem& p, const SolutionCandidate& cand);

/// Criterion value I of the candidate (averaged over atoms for relaxed
/// candidates; min over nodes for maximin).
double eval_criterion(const CanonicalProblem& p, const SolutionCandidate& cand);

/// Second-order finite-difference derivative of nodal values with step h
/// (central inside, one-sided at both ends).
std::vector<double> nodal_derivative(const std::vector<double>& y, double h);

/// Largest |J_j(tau)| over constraints and nodes.
double max_residual(const std::vector<std::vector<double>>& J);

}  // namespace canonmp
