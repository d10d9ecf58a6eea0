#pragma once

#include "canonmp/canonical.hpp"

#include <string>
#include <string_view>

namespace canonmp {

/// Reads the line-oriented problem format. Syntax errors raise ParseError
/// with the file line and column; declarations are not validated here.
ProblemSpec parse_problem_text(std::string_view text);

ProblemSpec read_problem_file(const std::string& path);

/// parse_problem_text followed by build_problem.
CanonicalProblem load_problem(const std::string& path);

}  // namespace canonmp
