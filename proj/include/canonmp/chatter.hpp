#pragma once

#include "canonmp/candidate.hpp"

#include <vector>

namespace canonmp {

/// Fast-switching admissible control built from a relaxed control: [0, T]
/// is cut into i equal subintervals, each split in proportion to the
/// weights frozen at its midpoint.
struct ChatterPlan {
    struct Piece {
        double t0 = 0.0;
        double t1 = 0.0;
        std::size_t r = 0;   // subinterval
        std::size_t nu = 0;  // atom
        double gamma = 0.0;  // frozen weight
        std::vector<double> u;
    };

    int i = 1;
    double horizon = 1.0;
    std::vector<Piece> pieces;  // in time order, zero-length pieces kept

    /// Control value at t (right-continuous, the last piece closed).
    const std::vector<double>& control_at(double t) const;
};

ChatterPlan build_plan(const RelaxedControl& rc, const Mesh& mesh, int i);

struct StudyRow {
    int i = 0;
    double I = 0.0;        // criterion of the simulated trajectory
    double Ibar = 0.0;     // relaxed criterion
    double gapI = 0.0;     // |I - Ibar|
    double maxJ = 0.0;     // max_tau |J_j(tau)| along x* under the chatter control
    double maxXdev = 0.0;  // max |x_i - x*|
    bool blowup = false;
};

/// Simulates each plan with `substeps` RK4 steps per piece (ODE-constrained
/// problems only) and tabulates the gaps to the relaxed solution.
std::vector<StudyRow> convergence_study(const CanonicalProblem& p, const SolutionCandidate& relaxed,
                                        const std::vector<int>& i_list, int substeps = 32);

/// Least-squares slope of log|y| against log x.
double fitted_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace canonmp
