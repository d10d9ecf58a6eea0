#pragma once

#include "canonmp/chatter.hpp"
#include "canonmp/solve.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace canonmp {

/// 12 significant digits, "nan"/"inf" spelled out.
std::string format_number(double v);

/// Candidate as CSV: a '# ' line with a JSON header (I, a, l0, scalar
/// multipliers, mesh, config), then columns t, states, controls, psi{j},
/// lambda{j}, slacks and lam_a where present. Controls on the last node
/// repeat the last interval.
void write_candidate(std::ostream& out, const CanonicalProblem& p, const SolutionCandidate& c,
                     const SolverConfig& cfg);
SolutionCandidate read_candidate(std::istream& in, const CanonicalProblem& p);

/// Relaxed control as CSV rows (t, nu, gamma, controls...), t the interval start.
void write_relaxed(std::ostream& out, const CanonicalProblem& p, const SolutionCandidate& c);
RelaxedControl read_relaxed(std::istream& in, const CanonicalProblem& p, const Mesh& mesh);

/// Study CSV: i, I_i, Ibar, gapI, maxJ, maxXdev.
void write_study(std::ostream& out, const std::vector<StudyRow>& rows);

}  // namespace canonmp
