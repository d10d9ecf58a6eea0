#pragma once

#include "canonmp/evaluator.hpp"
#include "canonmp/solve.hpp"

#include <string>
#include <vector>

namespace canonmp {

struct VerifyConfig {
    double hmax_tol = 1e-4;          // scaled by 1 + max|H|
    double stationarity_tol = 5e-3;  // scaled by 1 + largest term derivative
    double integral_tol = 1e-6;
    double param_tol = 1e-5;         // scaled by 1 + |I|
    double gamma_tol = 1e-9;         // atoms above this weight are active
    double nontrivial_tol = 1e-12;
    int grid_factor = 4;             // control grid refinement over the solver's
};

struct CheckResult {
    std::string name;
    double residual = 0.0;
    double where = 0.0;  // t of the worst violation
    double tolerance = 0.0;
    bool applicable = true;
    bool pass = true;
};

struct VerificationReport {
    std::vector<CheckResult> checks;  // ordered by name
    bool verdict = true;
    bool nontrivial = true;

    const CheckResult* find(const std::string& name) const;
    /// Names of applicable checks that failed.
    std::vector<std::string> failures() const;
    std::string to_json() const;
    std::string to_text() const;
};

/// max over intervals of max_u H - H(u_cand); relaxed candidates use the
/// worst active atom. Only first-group controls vary.
CheckResult check_Hmax(const LagrangeSystem& L, const SolutionCandidate& c, const SolverConfig& cfg,
                       const VerifyConfig& vc = {});

/// |dN/dx + sum gamma dH/dx| per interval: psi' as the interval difference
/// quotient, other terms averaged over the two end nodes.
CheckResult check_stationarity(const LagrangeSystem& L, const SolutionCandidate& c, const VerifyConfig& vc = {});

/// Adjoint jumps at event times and psi(T+) = 0. Point masses of pointwise
/// multipliers at T count as events.
CheckResult check_transversality(const LagrangeSystem& L, const SolutionCandidate& c, const VerifyConfig& vc = {});

/// Largest improving feasible directional derivative dS/da.
CheckResult check_param(const LagrangeSystem& L, const SolutionCandidate& c, const VerifyConfig& vc = {});

/// max |lambda z| and max(0, -lambda) over inequality constraints.
CheckResult check_slackness(const LagrangeSystem& L, const SolutionCandidate& c, const VerifyConfig& vc = {});

/// |int lambda dt - l0| and the slackness of lambda (f0 - a).
CheckResult check_maximin(const LagrangeSystem& L, const SolutionCandidate& c, const VerifyConfig& vc = {});

/// gamma >= 0 and sum gamma = 1 per interval.
CheckResult check_weights(const LagrangeSystem& L, const SolutionCandidate& c, const VerifyConfig& vc = {});

/// Active atoms per interval against m + 1.
CheckResult check_support(const LagrangeSystem& L, const SolutionCandidate& c, const VerifyConfig& vc = {});

/// Largest multiplier magnitude.
CheckResult check_nontriviality(const LagrangeSystem& L, const SolutionCandidate& c, const VerifyConfig& vc = {});

VerificationReport report(const LagrangeSystem& L, const SolutionCandidate& c, const SolverConfig& cfg,
                          const VerifyConfig& vc = {});

}  // namespace canonmp
