#include "canonmp/problem_file.hpp"
#include "canonmp/solve.hpp"

#include "doctest.h"

#include <cmath>
#include <random>

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

const char* kBang = R"P(
horizon 2
state x init 0
state y init 0
control u box -1 1
criterion integral "x"
criterion terminal "-0.5*y" at T
constraint ode x "y"
constraint ode y "u"
)P";

const char* kTerminal = R"P(
horizon 1
state x init 0
control u box -5 5
criterion integral "-u^2"
constraint ode x "u"
constraint terminal "x - 1" at T
)P";

ControlDecl box(double lo, double hi) { return ControlDecl{"u", Box{lo, hi}, {}}; }

}  // namespace

TEST_CASE("maximize_H examples") {
    SolverConfig cfg;
    CHECK(maximize_H([](const std::vector<double>& u) { return -u[0] * u[0] + 0.5 * u[0]; }, {box(-1, 1)}, cfg)[0] ==
          doctest::Approx(0.25).epsilon(1e-9));
    CHECK(maximize_H([](const std::vector<double>& u) { return 0.7 * u[0]; }, {box(-1, 1)}, cfg)[0] == 1.0);
    ControlDecl set{"u", std::nullopt, {1.0, -1.0}};
    CHECK(maximize_H([](const std::vector<double>& u) { return 0.0 * u[0]; }, {set}, cfg)[0] == -1.0);
    CHECK_THROWS(maximize_H([](const std::vector<double>&) { return NAN; }, {box(0, 1)}, cfg));
}

TEST_CASE("maximize_H never loses to a grid point") {
    SolverConfig cfg;
    cfg.ugrid = 41;
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> d(-2.0, 2.0);
    const std::vector<ControlDecl> V = {box(-1, 1), box(0, 2)};
    const int res = grid_resolution(cfg.ugrid, 2);
    for (int probe = 0; probe < 1000; ++probe) {
        const double x = d(rng), psi = d(rng), t = d(rng);
        auto H = [&](const std::vector<double>& u) {
            return -x * u[0] * u[0] + psi * std::sin(3 * u[0] + t) + psi * u[1] - 0.3 * (u[1] - t) * (u[1] - t) * x;
        };
        const std::vector<double> best = maximize_H(H, V, cfg);
        double grid_max = -INFINITY;
        for (int i = 0; i < res; ++i)
            for (int j = 0; j < res; ++j)
                grid_max = std::max(grid_max, H({-1.0 + 2.0 * i / (res - 1), 2.0 * j / (res - 1)}));
        CHECK(grid_max <= H(best) + 1e-9);
    }
}

TEST_CASE("indirect sweep on the LQ problem") {
    CanonicalProblem p = problem(kLq);
    LagrangeSystem L = assemble(p);
    SolverConfig cfg;
    SolutionCandidate c = solve_indirect(p, L, cfg);
    CHECK(std::abs(c.objective + std::tanh(1.0)) <= 1e-3);
    for (std::size_t k = 0; k < c.mesh.nodes(); k += 20) {
        const double t = c.mesh.node(k);
        CHECK(c.x[k][0] == doctest::Approx(std::cosh(1 - t) / std::cosh(1.0)).epsilon(1e-4));
        CHECK(c.multipliers[0].psi[k] == doctest::Approx(-2 * std::sinh(1 - t) / std::cosh(1.0)).epsilon(1e-3).scale(1));
    }
}

TEST_CASE("indirect sweep on the bang-bang problem switches at t = 1") {
    CanonicalProblem p = problem(kBang);
    LagrangeSystem L = assemble(p);
    SolutionCandidate c = solve_indirect(p, L, SolverConfig{});
    for (std::size_t i = 0; i < c.u.size(); ++i) {
        const double mid = c.mesh.node(i) + 0.5 * c.mesh.step();
        if (std::abs(mid - 1.0) > c.mesh.step())
            CHECK(c.u[i][0] == doctest::Approx(mid < 1.0 ? 1.0 : -1.0).epsilon(1e-8));
    }
}

TEST_CASE("terminal equality via secant on lambda-tilde") {
    CanonicalProblem p = problem(kTerminal);
    LagrangeSystem L = assemble(p);
    SolutionCandidate c = solve_indirect(p, L, SolverConfig{});
    CHECK(std::abs(c.x.back()[0] - 1.0) <= 1e-6);
    CHECK(c.multipliers[1].scalar == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(c.multipliers[0].psi.back() == doctest::Approx(c.multipliers[1].scalar).epsilon(1e-9));
    CHECK(c.objective == doctest::Approx(-1.0).epsilon(1e-6));
}

namespace {

SolverConfig small_mesh(int n) {
    SolverConfig cfg;
    cfg.mesh = n;
    return cfg;
}

double max_abs_diff(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b, std::size_t col) {
    double d = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k)
        d = std::max(d, std::abs(a[k][col] - b[k][col]));
    return d;
}

}  // namespace

TEST_CASE("collocation on the LQ problem") {
    const CanonicalProblem p = problem(kLq);
    const LagrangeSystem L = assemble(p);
    const SolutionCandidate c = solve_collocation(p, L, small_mesh(100));
    CHECK(c.objective == doctest::Approx(-std::tanh(1.0)).epsilon(1e-3));
    CHECK(max_residual(eval_functionals(p, c)) <= 1e-5);
    for (std::size_t k = 0; k < c.mesh.nodes(); k += 10) {
        const double t = c.mesh.node(k);
        CHECK(c.x[k][0] == doctest::Approx(std::cosh(1 - t) / std::cosh(1.0)).epsilon(1e-3));
        CHECK(c.multipliers[0].psi[k] ==
              doctest::Approx(-2 * std::sinh(1 - t) / std::cosh(1.0)).epsilon(2e-3).scale(1.0));
    }
}

TEST_CASE("collocation and the indirect sweep agree on ODE problems") {
    for (const char* text : {kLq, kBang, kTerminal}) {
        const CanonicalProblem p = problem(text);
        const LagrangeSystem L = assemble(p);
        const SolverConfig cfg = small_mesh(80);
        const SolutionCandidate a = solve_indirect(p, L, cfg);
        const SolutionCandidate b = solve_collocation(p, L, cfg);
        CHECK(a.objective == doctest::Approx(b.objective).epsilon(1e-3).scale(1.0));
        for (std::size_t s = 0; s < p.states.size(); ++s)
            CHECK(max_abs_diff(a.x, b.x, s) <= 2e-2);
    }
}

TEST_CASE("collocation respects the terminal equality") {
    const CanonicalProblem p = problem(kTerminal);
    const LagrangeSystem L = assemble(p);
    const SolutionCandidate c = solve_collocation(p, L, small_mesh(60));
    CHECK(c.x.back()[0] == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(c.multipliers[1].scalar == doctest::Approx(2.0).epsilon(1e-3));
    CHECK(c.objective == doctest::Approx(-1.0).epsilon(1e-3));
}

TEST_CASE("maximin multipliers integrate to one") {
    const CanonicalProblem p = problem(R"P(
horizon 1
state x init 0
control u box -1 1
criterion maximin "x - (t - 0.5)^2"
constraint ode x "u - x"
)P");
    const LagrangeSystem L = assemble(p);
    const SolutionCandidate c = solve_collocation(p, L, small_mesh(40));
    const Mesh& m = c.mesh;
    double integral = 0.0;
    for (std::size_t k = 0; k < m.nodes(); ++k) {
        const double w = (k == 0 || k + 1 == m.nodes()) ? 0.5 * m.step() : m.step();
        integral += w * c.criterion_lambda[k];
    }
    CHECK(integral == doctest::Approx(1.0).epsilon(1e-6));
    // lambda vanishes where f0 sits above the attained minimum
    const std::vector<double> none;
    for (std::size_t k = 0; k < m.nodes(); ++k) {
        const double t = m.node(k);
        const double slack = c.x[k][0] - (t - 0.5) * (t - 0.5) - c.a[0];
        CHECK(std::abs(c.criterion_lambda[k] * slack) <= 1e-6);
    }
}

TEST_CASE("convolution state matches the equivalent ODE") {
    // x(t) = int_0^t exp(-(t - s)) u(s) ds solves x' = u - x, x(0) = 0.
    const CanonicalProblem conv = problem(R"P(
horizon 1
state x
control u box -2 2
criterion integral "x - u^2"
constraint convolution x u kernel "step(s)*exp(-s)"
)P");
    const CanonicalProblem ode = problem(R"P(
horizon 1
state x init 0
control u box -2 2
criterion integral "x - u^2"
constraint ode x "u - x"
)P");
    const SolverConfig cfg = small_mesh(60);
    const SolutionCandidate a = solve_collocation(conv, assemble(conv), cfg);
    const SolutionCandidate b = solve_collocation(ode, assemble(ode), cfg);
    CHECK(a.objective == doctest::Approx(b.objective).epsilon(2e-3));
    CHECK(max_abs_diff(a.x, b.x, 0) <= 5e-3);
}

TEST_CASE("relaxed collocation slides on x' = u, u in {-1, 1}") {
    const CanonicalProblem p = problem(R"P(
horizon 1
state x init 0
control u set -1 1
criterion integral "-x^2"
constraint ode x "u"
)P");
    const LagrangeSystem L = assemble(p);
    const SolutionCandidate c = solve_collocation(p, L, small_mesh(40), ControlMode::Relaxed);
    REQUIRE(c.relaxed);
    CHECK(c.relaxed->max_support() == 2);
    CHECK(c.objective == doctest::Approx(0.0).scale(1.0).epsilon(1e-6));
    for (std::size_t i = 0; i < c.relaxed->intervals(); ++i)
        CHECK(c.relaxed->gamma[i][0] == doctest::Approx(0.5).epsilon(1e-4));
}

namespace {

std::string random_expr(std::mt19937& rng, int depth, bool with_tau) {
    std::vector<std::string> leaves{"x", "y", "u", "b", "t", "0.7", "1.3"};
    if (with_tau)
        leaves.push_back("tau");
    std::uniform_int_distribution<int> pick(0, depth > 0 ? 6 : 0);
    switch (pick(rng)) {
    case 1: return "(" + random_expr(rng, depth - 1, with_tau) + " + " + random_expr(rng, depth - 1, with_tau) + ")";
    case 2: return "(" + random_expr(rng, depth - 1, with_tau) + " * " + random_expr(rng, depth - 1, with_tau) + ")";
    case 3: return "sin(" + random_expr(rng, depth - 1, with_tau) + ")";
    case 4: return "exp(0.3*" + random_expr(rng, depth - 1, with_tau) + ")";
    case 5: return "(" + random_expr(rng, depth - 1, with_tau) + ")^2";
    default: return leaves[std::uniform_int_distribution<std::size_t>(0, leaves.size() - 1)(rng)];
    }
}

std::string random_problem(std::mt19937& rng) {
    std::string text = "horizon 1.5\nstate x init 0.4\nstate y init -0.2\ncontrol u box -1 1\nparam b box 0 2\n";
    text += "criterion integral \"" + random_expr(rng, 2, false) + "\"\n";
    text += "constraint ode x \"" + random_expr(rng, 2, false) + "\"\n";
    switch (std::uniform_int_distribution<int>(0, 2)(rng)) {
    case 0: text += "constraint ode y \"" + random_expr(rng, 2, false) + "\"\n"; break;
    case 1: text += "constraint volterra y \"" + random_expr(rng, 2, false) + "\"\n"; break;
    default: text += "constraint fredholm y \"" + random_expr(rng, 2, true) + "\"\n"; break;
    }
    const char* extra[] = {"integral", "pointwise", "ineq"};
    text += std::string("constraint ") + extra[std::uniform_int_distribution<int>(0, 2)(rng)] + " \"" +
            random_expr(rng, 2, false) + "\"\n";
    text += "constraint terminal \"" + random_expr(rng, 1, false) + "\" at 1\n";
    return text;
}

SolutionCandidate random_candidate(const CanonicalProblem& p, int n, std::mt19937& rng) {
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    SolutionCandidate c = SolutionCandidate::zeros(p, Mesh(p.horizon, n));
    for (auto& row : c.x)
        for (double& v : row)
            v = d(rng);
    for (auto& row : c.u)
        for (double& v : row)
            v = d(rng);
    for (auto& row : c.z)
        for (double& v : row)
            v = std::abs(d(rng));
    for (double& v : c.a)
        v = 1.0 + d(rng);
    return c;
}

}  // namespace

TEST_CASE("transcription rows equal the residual functionals") {
    std::mt19937 rng(11);
    for (int trial = 0; trial < 60; ++trial) {
        const CanonicalProblem p = problem(random_problem(rng));
        const SolutionCandidate c = random_candidate(p, 7, rng);
        const std::vector<double> rows = collocation_rows(p, c);
        const auto J = eval_functionals(p, c);
        std::vector<double> expected;
        for (std::size_t j = 0; j < p.m(); ++j) {
            const bool family = to_canonical(p.constraints[j], p).tau_family;
            if (family)
                expected.insert(expected.end(), J[j].begin(), J[j].end());
            else
                expected.push_back(J[j][0]);
        }
        REQUIRE(rows.size() == expected.size());
        double worst = 0.0;
        for (std::size_t r = 0; r < rows.size(); ++r)
            worst = std::max(worst, std::abs(rows[r] - expected[r]) / (1.0 + std::abs(expected[r])));
        CHECK(worst <= 1e-12);
    }
}

TEST_CASE("transcription derivatives match central differences") {
    std::mt19937 rng(23);
    for (int trial = 0; trial < 25; ++trial) {
        const CanonicalProblem p = problem(random_problem(rng));
        const SolutionCandidate c = random_candidate(p, 5, rng);
        CHECK(collocation_jacobian_error(p, c, 1e-6) <= 1e-5);
    }
}
