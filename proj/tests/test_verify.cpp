#include "canonmp/problem_file.hpp"
#include "canonmp/relax.hpp"
#include "canonmp/verify.hpp"

#include "doctest.h"

#include <cmath>
#include <functional>
#include <sstream>

using namespace canonmp;

namespace {

CanonicalProblem problem(const std::string& text) { return build_problem(parse_problem_text(text)); }

const char* kLq = R"P(
horizon 1
state x init 1
control u box -10 10
criterion integral "-(x^2+u^2)"
constraint ode x "u"
)P";

const char* kSliding = R"P(
horizon 1
state x init 0
control u set -1 1
criterion integral "-x^2"
constraint ode x "u"
)P";

SolverConfig mesh(int n) {
    SolverConfig cfg;
    cfg.mesh = n;
    return cfg;
}

// Closed-form LQ solution sampled on the mesh.
SolutionCandidate lq_oracle(const CanonicalProblem& p, int n) {
    SolutionCandidate c = SolutionCandidate::zeros(p, Mesh(1.0, n));
    const double ch = std::cosh(1.0);
    c.multipliers[0].psi.resize(c.mesh.nodes());
    for (std::size_t k = 0; k < c.mesh.nodes(); ++k) {
        const double t = c.mesh.node(k);
        c.x[k][0] = std::cosh(1 - t) / ch;
        c.multipliers[0].psi[k] = -2 * std::sinh(1 - t) / ch;
    }
    c.multipliers[0].lambda = nodal_derivative(c.multipliers[0].psi, c.mesh.step());
    for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i)
        c.u[i][0] = 0.25 * (c.multipliers[0].psi[i] + c.multipliers[0].psi[i + 1]);
    c.objective = eval_criterion(p, c);
    return c;
}

std::string fingerprint(const SolutionCandidate& c) {
    std::ostringstream out;
    out.precision(17);
    for (const auto& row : c.x)
        for (double v : row)
            out << v << ' ';
    for (const auto& row : c.u)
        for (double v : row)
            out << v << ' ';
    for (const auto& m : c.multipliers) {
        for (double v : m.lambda)
            out << v << ' ';
        for (double v : m.psi)
            out << v << ' ';
        out << m.scalar << ' ';
    }
    if (c.relaxed)
        for (const auto& g : c.relaxed->gamma)
            for (double v : g)
                out << v << ' ';
    out << c.l0 << ' ' << c.objective;
    return out.str();
}

}  // namespace

TEST_CASE("closed-form LQ solution passes every check") {
    const CanonicalProblem p = problem(kLq);
    const LagrangeSystem L = assemble(p);
    const VerificationReport r = report(L, lq_oracle(p, 200), mesh(200));
    CHECK(r.verdict);
    CHECK(r.find("hmax")->residual <= 1e-5);
    CHECK(r.find("stationarity")->residual <= 2e-3);
    CHECK_FALSE(r.find("maximin")->applicable);
}

TEST_CASE("solver output passes verification") {
    const CanonicalProblem p = problem(kLq);
    const LagrangeSystem L = assemble(p);
    const SolverConfig cfg = mesh(200);
    for (const SolutionCandidate& c : {solve_collocation(p, L, cfg), solve_indirect(p, L, cfg)}) {
        const VerificationReport r = report(L, c, cfg);
        CHECK_MESSAGE(r.verdict, r.to_text());
    }
}

TEST_CASE("control bump raises the H gap by the quadratic amount") {
    const CanonicalProblem p = problem(kLq);
    const LagrangeSystem L = assemble(p);
    SolutionCandidate c = lq_oracle(p, 200);
    c.u[57][0] += 0.1;
    const CheckResult r = check_Hmax(L, c, mesh(200));
    // H = -(x^2 + u^2) + psi u is quadratic in u with unit curvature.
    CHECK(r.residual == doctest::Approx(0.01).epsilon(1e-3));
    CHECK(r.where == doctest::Approx(c.mesh.node(57)));
    CHECK_FALSE(r.pass);
}

TEST_CASE("scaled adjoint breaks stationarity") {
    const CanonicalProblem p = problem(kLq);
    const LagrangeSystem L = assemble(p);
    SolutionCandidate c = lq_oracle(p, 200);
    for (double& v : c.multipliers[0].psi)
        v *= 2;
    const CheckResult r = check_stationarity(L, c);
    CHECK(r.residual > 0.1);
    CHECK_FALSE(r.pass);
}

TEST_CASE("state-free criterion has zero stationarity residual with zero adjoint") {
    const CanonicalProblem p = problem(R"P(
horizon 1
state x init 0
control u box -1 1
criterion integral "-u^2"
constraint ode x "u"
)P");
    const LagrangeSystem L = assemble(p);
    SolutionCandidate c = SolutionCandidate::zeros(p, Mesh(1.0, 20));
    c.multipliers[0].psi.assign(21, 0.0);
    CHECK(check_stationarity(L, c).residual == 0.0);
}

TEST_CASE("parameter check respects bounds") {
    const CanonicalProblem p = problem(R"P(
horizon 1
param b box 0 2
criterion integral "-(b - 0.5)^2 + 0.3*b"
)P");
    const LagrangeSystem L = assemble(p);
    SolutionCandidate c = SolutionCandidate::zeros(p, Mesh(1.0, 10));
    // dS/db = -2(b - 0.5) + 0.3
    c.a[0] = 0.65;
    CHECK(check_param(L, c).residual <= 1e-12);
    CHECK(check_param(L, c).pass);
    c.a[0] = 0.5;
    CHECK(check_param(L, c).residual == doctest::Approx(0.3));
    CHECK_FALSE(check_param(L, c).pass);

    const CanonicalProblem q = problem(R"P(
horizon 1
param b box 0 2
criterion integral "-b"
)P");
    SolutionCandidate d = SolutionCandidate::zeros(q, Mesh(1.0, 10));
    CHECK(check_param(assemble(q), d).pass);  // only db >= 0 is feasible
}

TEST_CASE("slackness examples") {
    const CanonicalProblem p = problem(R"P(
horizon 1
state x init 0
control u box -1 1
criterion integral "-u^2"
constraint ode x "u"
constraint ineq "x + 1"
)P");
    const LagrangeSystem L = assemble(p);
    SolutionCandidate c = SolutionCandidate::zeros(p, Mesh(1.0, 4));
    c.multipliers[1].lambda.assign(5, 0.0);
    for (auto& z : c.z)
        z[0] = 1.0;
    CHECK(check_slackness(L, c).residual == 0.0);  // z > 0, lambda = 0
    for (auto& z : c.z)
        z[0] = 0.0;
    c.multipliers[1].lambda.assign(5, 0.4);
    CHECK(check_slackness(L, c).residual == 0.0);  // z = 0, lambda >= 0
    c.z[2][0] = 0.2;
    c.multipliers[1].lambda[2] = 0.5;
    CHECK(check_slackness(L, c).residual == doctest::Approx(0.1));
    CHECK_FALSE(check_slackness(L, c).pass);
    c.z[2][0] = 0.0;
    c.multipliers[1].lambda[3] = -0.25;
    CHECK(check_slackness(L, c).residual == doctest::Approx(0.25));
}

TEST_CASE("maximin closure examples") {
    const CanonicalProblem p = problem(R"P(
horizon 2
criterion maximin "1"
)P");
    const LagrangeSystem L = assemble(p);
    SolutionCandidate c = SolutionCandidate::zeros(p, Mesh(2.0, 8));
    c.a[0] = 1.0;
    c.criterion_lambda.assign(9, 0.5);
    CHECK(check_maximin(L, c).residual <= 1e-15);
    c.criterion_lambda.assign(9, 0.0);
    CHECK(check_maximin(L, c).residual == doctest::Approx(1.0));
    CHECK_FALSE(check_maximin(L, c).pass);
    // with l0 = 0 the integral is compared against 0
    c.l0 = 0.0;
    c.criterion_lambda.assign(9, 0.5);
    CHECK(check_maximin(L, c).residual == doctest::Approx(1.0));
    CHECK(check_nontriviality(L, c).pass);
}

TEST_CASE("all-zero multipliers fail nontriviality") {
    const CanonicalProblem p = problem(kLq);
    const LagrangeSystem L = assemble(p);
    SolutionCandidate c = lq_oracle(p, 50);
    c.l0 = 0.0;
    for (auto& m : c.multipliers) {
        std::fill(m.psi.begin(), m.psi.end(), 0.0);
        std::fill(m.lambda.begin(), m.lambda.end(), 0.0);
    }
    const VerificationReport r = report(L, c, mesh(50));
    CHECK_FALSE(r.nontrivial);
    CHECK(r.failures() == std::vector<std::string>{"nontriviality"});
}

TEST_CASE("sliding relaxed candidate passes the relaxed checks") {
    const CanonicalProblem p = problem(kSliding);
    const LagrangeSystem L = assemble(p);
    const SolverConfig cfg = mesh(40);
    const SolutionCandidate c = solve_collocation(p, L, cfg, ControlMode::Relaxed);
    const VerificationReport r = report(L, c, cfg);
    CHECK_MESSAGE(r.verdict, r.to_text());
    CHECK(r.find("support")->pass);
    CHECK(r.find("weights")->pass);
    const RelaxedResiduals rr = relaxed_residuals(extend(L), c, cfg);
    CHECK(rr.equalization <= 1e-8);
}

TEST_CASE("relaxed residuals reduce to the classical ones for one atom") {
    const CanonicalProblem p = problem(kLq);
    const LagrangeSystem L = assemble(p);
    const SolverConfig cfg = mesh(60);
    const SolutionCandidate classical = lq_oracle(p, 60);
    SolutionCandidate single = classical;
    RelaxedControl rc;
    for (const auto& u : classical.u) {
        rc.gamma.push_back({1.0});
        rc.values.push_back({u});
    }
    single.relaxed = rc;
    const RelaxedResiduals rr = relaxed_residuals(extend(L), single, cfg);
    CHECK(rr.equalization == check_Hmax(L, classical, cfg).residual);
    CHECK(rr.stationarity == check_stationarity(L, classical).residual);
    CHECK(rr.param == check_param(L, classical).residual);
}

TEST_CASE("inactive atoms do not count toward equalization") {
    const CanonicalProblem p = problem(kLq);
    const LagrangeSystem L = assemble(p);
    const SolverConfig cfg = mesh(30);
    SolutionCandidate c = lq_oracle(p, 30);
    RelaxedControl rc;
    for (const auto& u : c.u) {
        rc.gamma.push_back({1.0, 0.0});
        rc.values.push_back({u, {7.0}});
    }
    c.relaxed = rc;
    CHECK(relaxed_residuals(extend(L), c, cfg).equalization <= 1e-5);
    c.relaxed->gamma[4] = {0.5, 0.6};
    CHECK_THROWS_AS(relaxed_residuals(extend(L), c, cfg), std::invalid_argument);
}

TEST_CASE("verifier leaves its inputs untouched") {
    const CanonicalProblem p = problem(kSliding);
    const LagrangeSystem L = assemble(p);
    const SolverConfig cfg = mesh(20);
    const SolutionCandidate c = solve_collocation(p, L, cfg, ControlMode::Relaxed);
    const std::size_t before = std::hash<std::string>{}(fingerprint(c));
    const std::string system_before = L.print_R_concrete();
    (void)report(L, c, cfg);
    CHECK(std::hash<std::string>{}(fingerprint(c)) == before);
    CHECK(L.print_R_concrete() == system_before);
}

TEST_CASE("report renders JSON and text") {
    const CanonicalProblem p = problem(kLq);
    const LagrangeSystem L = assemble(p);
    const VerificationReport r = report(L, lq_oracle(p, 40), mesh(40));
    CHECK(r.to_json().find("\"verdict\": \"pass\"") != std::string::npos);
    CHECK(r.to_text().find("verdict: pass") != std::string::npos);
    for (std::size_t i = 1; i < r.checks.size(); ++i)
        CHECK(r.checks[i - 1].name < r.checks[i].name);
}
