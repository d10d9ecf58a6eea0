#pragma once

#include "canonmp/candidate.hpp"
#include "canonmp/lagrange.hpp"

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace canonmp {

struct SolverConfig {
    int mesh = 200;
    int ugrid = 201;          // grid points per box control dimension
    int refine_passes = 3;    // golden-section passes per box dimension
    int max_sweeps = 2000;
    double tol = 1e-7;        // sweep convergence (max nodal change)
    double damping = 0.5;
    int penalty_rounds = 6;
    double penalty0 = 1.0;
    double penalty_growth = 10.0;
    double inner_tol = 1e-8;
    int inner_iterations = 200;
    double feasibility_tol = 1e-5;
    unsigned seed = 0;
};

/// Problem shape outside what a solver handles.
class UnsupportedError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Sweep iteration cap reached without convergence.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& msg, double residual) : std::runtime_error(msg), residual_(residual) {}
    double residual() const { return residual_; }

private:
    double residual_;
};

/// Collocation residuals stalled above the feasibility tolerance.
class InfeasibleError : public std::runtime_error {
public:
    InfeasibleError(const std::string& msg, double residual) : std::runtime_error(msg), residual_(residual) {}
    double residual() const { return residual_; }

private:
    double residual_;
};

using ControlObjective = std::function<double(const std::vector<double>&)>;

/// Grid search over V followed by golden-section refinement along each box
/// dimension. Ties keep the lexicographically smallest u.
std::vector<double> maximize_H(const ControlObjective& H, const std::vector<ControlDecl>& V, const SolverConfig& cfg);

/// Grid points per box dimension used for `dims` box controls.
int grid_resolution(int ugrid, std::size_t dims);

/// Damped forward-backward sweep for problems whose constraints are ODEs
/// (plus at most one terminal equality). Parameters, if any, are held at
/// `a` (empty: zero projected onto their boxes).
SolutionCandidate solve_indirect(const CanonicalProblem& p, const LagrangeSystem& L, const SolverConfig& cfg,
                                 const std::vector<double>& a = {});

enum class ControlMode { Classical, Relaxed };

/// Augmented-Lagrangian transcription of the trapezoidal discretization,
/// inner problems solved by projected Newton. Relaxed mode optimizes atom
/// weights and values per interval.
SolutionCandidate solve_collocation(const CanonicalProblem& p, const LagrangeSystem& L, const SolverConfig& cfg,
                                    ControlMode mode = ControlMode::Classical);

/// Collocation rows J_j(tau_k) at the candidate, constraint by constraint
/// (one row for scalar constraints, one per node otherwise).
std::vector<double> collocation_rows(const CanonicalProblem& p, const SolutionCandidate& cand);

/// Largest gap between the analytic transcription derivatives (rows and
/// criterion) and central differences with step h.
double collocation_jacobian_error(const CanonicalProblem& p, const SolutionCandidate& cand, double h);

/// dS/da of the candidate (trapezoid in t, delta terms as point values).
std::vector<double> param_gradient(const LagrangeSystem& L, const SolutionCandidate& cand);

/// Projected gradient ascent on a with an indirect re-solve per step.
SolutionCandidate optimize_params(const CanonicalProblem& p, const LagrangeSystem& L, const SolverConfig& cfg);

/// Whether solve_indirect accepts the problem; `why` explains a refusal.
bool indirect_supported(const CanonicalProblem& p, const LagrangeSystem& L, std::string* why = nullptr);

}  // namespace canonmp
