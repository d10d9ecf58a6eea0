#include "canonmp/io.hpp"
#include "canonmp/problem_file.hpp"

#include "doctest.h"

#include <sstream>

using namespace canonmp;

namespace {

CanonicalProblem problem(const std::string& text) { return build_problem(parse_problem_text(text)); }

void close(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k)
        CHECK(a[k] == doctest::Approx(b[k]).epsilon(1e-11));
}

}  // namespace

TEST_CASE("numbers carry 12 significant digits") {
    CHECK(format_number(1.0 / 3.0) == "0.333333333333");
    CHECK(format_number(-2.5e-7) == "-2.5e-07");
    CHECK(format_number(0.0) == "0");
}

TEST_CASE("candidate CSV round trip") {
    const CanonicalProblem p = problem(R"P(
horizon 2
state x init 1
state y init 0
control u box -1 1
param b box 0 3
criterion integral "-(x^2+u^2) + b"
constraint ode x "u"
constraint volterra y "x*u"
constraint ineq "x + 2"
constraint terminal "y" at T
)P");
    SolverConfig cfg;
    cfg.mesh = 6;
    SolutionCandidate c = SolutionCandidate::zeros(p, Mesh(2.0, 6));
    double v = 0.1;
    auto next = [&] { return v = v * 1.37 - 0.61; };
    for (auto& row : c.x)
        for (double& x : row)
            x = next();
    for (auto& row : c.u)
        for (double& x : row)
            x = next();
    for (auto& row : c.z)
        for (double& x : row)
            x = std::abs(next());
    c.a[0] = 1.25;
    for (std::size_t j = 0; j < 3; ++j) {
        c.multipliers[j].lambda.resize(7);
        for (double& x : c.multipliers[j].lambda)
            x = next();
    }
    for (std::size_t j = 0; j < 2; ++j) {
        c.multipliers[j].psi.resize(7);
        for (double& x : c.multipliers[j].psi)
            x = next();
    }
    c.multipliers[3].scalar = 0.75;
    c.objective = -1.5;

    std::stringstream s;
    write_candidate(s, p, c, cfg);
    const std::string text = s.str();
    CHECK(text.find("t,x,y,u,psi1,psi2,lambda1,lambda2,lambda3,z3") != std::string::npos);
    const SolutionCandidate r = read_candidate(s, p);
    CHECK(r.mesh.intervals() == 6);
    CHECK(r.objective == -1.5);
    CHECK(r.a[0] == 1.25);
    CHECK(r.multipliers[3].scalar == 0.75);
    for (std::size_t k = 0; k < 7; ++k) {
        close(r.x[k], c.x[k]);
        close(r.z[k], c.z[k]);
    }
    for (std::size_t i = 0; i < 6; ++i)
        close(r.u[i], c.u[i]);
    for (std::size_t j = 0; j < 3; ++j)
        close(r.multipliers[j].lambda, c.multipliers[j].lambda);
    close(r.multipliers[1].psi, c.multipliers[1].psi);
}

TEST_CASE("relaxed CSV round trip") {
    const CanonicalProblem p = problem(R"P(
horizon 1
state x init 0
control u set -1 1
criterion integral "-x^2"
constraint ode x "u"
)P");
    SolutionCandidate c = SolutionCandidate::zeros(p, Mesh(1.0, 3));
    RelaxedControl rc;
    rc.gamma = {{0.5, 0.5}, {0.25, 0.75}, {1.0, 0.0}};
    rc.values = {{{-1}, {1}}, {{-1}, {1}}, {{1}, {-1}}};
    c.relaxed = rc;
    std::stringstream s;
    write_relaxed(s, p, c);
    CHECK(s.str().rfind("t,nu,gamma,u\n0,0,0.5,-1\n", 0) == 0);
    const RelaxedControl r = read_relaxed(s, p, c.mesh);
    CHECK(r.gamma == rc.gamma);
    CHECK(r.values == rc.values);
}

TEST_CASE("study CSV columns") {
    std::stringstream s;
    write_study(s, {StudyRow{4, -0.005, 0, 0.005, 0.125, 0.125, false}});
    CHECK(s.str() == "i,I_i,Ibar,gapI,maxJ,maxXdev\n4,-0.005,0,0.005,0.125,0.125\n");
}

TEST_CASE("malformed candidate files are rejected") {
    const CanonicalProblem p = problem("horizon 1\nstate x init 0\ncontrol u box -1 1\ncriterion integral \"x\"\nconstraint ode x \"u\"\n");
    std::stringstream none("t,x\n");
    CHECK_THROWS(read_candidate(none, p));
    std::stringstream short_file("# {\"I\":0,\"horizon\":1,\"intervals\":2,\"l0\":1,\"a\":{},\"scalar_multipliers\":{}}\nt,x,u,psi1,lambda1\n0,0,0,0,0\n");
    CHECK_THROWS(read_candidate(short_file, p));
}
