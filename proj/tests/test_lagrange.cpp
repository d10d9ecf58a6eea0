#include "canonmp/evaluator.hpp"
#include "canonmp/lagrange.hpp"
#include "canonmp/problem_file.hpp"

#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

using namespace canonmp;

namespace {

CanonicalProblem problem(const std::string& text) { return build_problem(parse_problem_text(text)); }

const char* kLq = R"P(
horizon 1
state x init 1
control u box -1 1
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

SolutionCandidate random_candidate(const CanonicalProblem& p, int n, std::mt19937& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    SolutionCandidate c = SolutionCandidate::zeros(p, Mesh(p.horizon, n));
    for (auto& row : c.x)
        for (double& v : row)
            v = g(rng);
    for (auto& row : c.u)
        for (double& v : row)
            v = g(rng);
    for (auto& row : c.z)
        for (double& v : row)
            v = std::abs(g(rng));
    for (double& a : c.a)
        a = g(rng);
    for (auto& m : c.multipliers) {
        m.lambda.resize(c.mesh.nodes());
        m.psi.resize(c.mesh.nodes());
        for (double& v : m.lambda)
            v = g(rng);
        for (double& v : m.psi)
            v = g(rng);
        m.scalar = g(rng);
    }
    c.criterion_lambda.assign(c.mesh.nodes(), 0.0);
    for (double& v : c.criterion_lambda)
        v = g(rng);
    return c;
}

}  // namespace

TEST_CASE("canonical R for a two-state Pontryagin problem") {
    LagrangeSystem L = assemble(problem(R"P(
horizon 1
state x1 init 0
state x2 init 1
control u box -1 1
criterion integral "-u^2"
criterion terminal "x1" at T
constraint ode x1 "x2"
constraint ode x2 "u - x1"
)P"));
    CHECK(L.print_R() == "l0*f0 + psi1*f1 + dpsi1*x1 + psi2*f2 + dpsi2*x2 + l0*F0*delta(t-T)");
    CHECK(L.print_H() == "l0*f0 + psi2*f2");
    CHECK(L.print_N() == "psi1*f1 + dpsi1*x1 + dpsi2*x2 + l0*F0*delta(t-T)");
}

TEST_CASE("canonical R for Fredholm, slack and maximin problems") {
    LagrangeSystem fred = assemble(problem(R"P(
horizon 1
state x
control u box -1 1
criterion integral "-(x - 1)^2 - 0.1*u^2"
constraint fredholm x "exp(-(tau - t)^2)*u"
)P"));
    CHECK(fred.print_R() == "l0*f0 + int(lam1(tau)*f1, tau, 0, T) - lam1*x");
    CHECK(fred.print_H() == "l0*f0 + int(lam1(tau)*f1, tau, 0, T)");

    LagrangeSystem slack = assemble(problem(R"P(
horizon 1
state x init 0
control u box -1 1
criterion integral "x"
constraint ode x "u"
constraint ineq "0.5 - x"
)P"));
    CHECK(slack.print_R() == "l0*f0 + psi1*f1 + dpsi1*x + lam2*f2 - lam2*z2");

    LagrangeSystem mm = assemble(problem(R"P(
horizon 1
state x init 0
control u box -1 1
criterion maximin "x"
constraint ode x "u"
)P"));
    CHECK(mm.print_R() == "l0*a/T + lam_a*f0 - lam_a*a + psi1*f1 + dpsi1*x");
    CHECK(mm.classification.of("a").group == Group::Parameter);

    LagrangeSystem conv = assemble(problem(R"P(
horizon 1
state x
control u box 0 1
constraint convolution x u kernel "exp(-s)"
)P"));
    CHECK(conv.print_R() == "u*int(lam1(tau)*k1(tau-t), tau, 0, T) - lam1*x");
}

TEST_CASE("concrete printing uses the problem expressions") {
    LagrangeSystem L = assemble(problem(kLq));
    CHECK(L.terms[1].concrete() == "psi1*u");
    CHECK(L.print_R_concrete().find("psi1_0") != std::string::npos);
}

TEST_CASE("classification of controls") {
    CHECK(assemble(problem(kLq)).classification.of("u").group == Group::First);

    LagrangeSystem pw = assemble(problem(R"P(
horizon 1
state x init 0
control u box -1 1
constraint ode x "u"
constraint pointwise "x - u"
)P"));
    CHECK(pw.classification.of("u").group == Group::Second);
    CHECK(pw.classification.first_group().empty());
    CHECK(pw.h_terms.empty());

    LagrangeSystem ev = assemble(problem(R"P(
horizon 2
state x init 0
control u box -1 1
constraint ode x "u"
constraint terminal "x + u" at 1
)P"));
    const VariableClass& u = ev.classification.of("u");
    CHECK(u.group == Group::First);
    REQUIRE(u.second_at.size() == 1);
    CHECK(ev.classification.group_at("u", 1.0) == Group::Second);
    CHECK(ev.classification.group_at("u", 0.5) == Group::First);
    CHECK(ev.classification.of("x").group == Group::Second);
}

TEST_CASE("adding a constraint never promotes a variable") {
    const std::vector<std::string> pool = {
        "constraint integral \"u - v\"",       "constraint pointwise \"x - v\"",
        "constraint terminal \"x + u\" at 1", "constraint ineq \"1 - u^2\"",
        "constraint fredholm y \"u*t*tau\"",  "constraint pointwise \"y - x\"",
        "constraint terminal \"v\" at T",     "constraint ineq \"x\"",
    };
    auto rank = [](Group g) { return g == Group::First ? 1 : 0; };
    std::mt19937 rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        std::string text = "horizon 2\nstate x init 0\nstate y\ncontrol u box -1 1\ncontrol v set -1 1\n"
                           "criterion integral \"-u^2 + v\"\nconstraint ode x \"u + v\"\n";
        LagrangeSystem before = assemble(problem(text));
        std::vector<std::string> order = pool;
        std::shuffle(order.begin(), order.end(), rng);
        for (int step = 0; step < 4; ++step) {
            text += order[step] + "\n";
            LagrangeSystem after = assemble(problem(text));
            for (const std::string& name : {"u", "v"})
                for (double t : {0.5, 1.0, 2.0})
                    CHECK(rank(after.classification.group_at(name, t)) <= rank(before.classification.group_at(name, t)));
            before = std::move(after);
        }
    }
}

TEST_CASE("N and H partition R and sum to R at random points") {
    const std::vector<std::string> texts = {
        kLq, kBang,
        "horizon 1\nstate x\ncontrol u box -1 1\ncriterion integral \"-x^2 - u^2\"\n"
        "constraint fredholm x \"sin(t + tau)*u + x/4\"\n",
        "horizon 1\nstate x init 0\ncontrol u box 0 1\ncriterion maximin \"x + u\"\nconstraint volterra x \"u - x\"\n",
        "horizon 1\nstate x init 0\ncontrol u box 0 1\ncriterion integral \"u\"\nconstraint ode x \"u\"\n"
        "constraint ineq \"0.3 - x\"\nconstraint integral \"u^2 - 0.2\"\n",
    };
    std::mt19937 rng(11);
    for (const std::string& text : texts) {
        LagrangeSystem L = assemble(problem(text));
        std::vector<int> seen(L.terms.size(), 0);
        for (std::size_t i : L.n_terms)
            ++seen[i];
        for (std::size_t i : L.h_terms)
            ++seen[i];
        for (int s : seen)
            CHECK(s == 1);

        SystemEvaluator ev(L);
        std::vector<std::size_t> all(L.terms.size());
        for (std::size_t i = 0; i < all.size(); ++i)
            all[i] = i;
        for (int trial = 0; trial < 40; ++trial) {
            SolutionCandidate c = random_candidate(L.problem, 5, rng);
            std::vector<double> v = ev.blank();
            for (std::size_t k = 0; k < c.mesh.nodes(); ++k) {
                ev.load_node(v, c, k);
                ev.load_controls(v, c.u[std::min<std::size_t>(k, c.u.size() - 1)]);
                double r = ev.sum(all, v, c);
                double nh = ev.sum(L.n_terms, v, c) + ev.sum(L.h_terms, v, c);
                CHECK(std::abs(r - nh) <= 1e-12 * (1.0 + std::abs(r)));
            }
        }
    }
}

TEST_CASE("LQ and bang-bang adjoint systems") {
    LagrangeSystem L = assemble(problem(kLq));
    auto adj = adjoint_system(L);
    REQUIRE(adj.size() == 1);
    CHECK(adj[0].psi == "psi1");
    CHECK(adj[0].jumps.empty());
    for (double x : {-1.0, 0.3, 2.0})
        for (double l0 : {0.0, 1.0})
            CHECK(eval(adj[0].rhs, {{"x", x}, {"u", 0.7}, {"l0", l0}, {"psi1", 3.0}}) == doctest::Approx(2 * l0 * x));

    LagrangeSystem B = assemble(problem(kBang));
    auto bb = adjoint_system(B);
    REQUIRE(bb.size() == 2);
    VarEnv env{{"l0", 1.0}, {"psi1", 0.25}, {"psi2", -1.0}, {"x", 0.0}, {"y", 0.0}, {"u", 0.0}};
    CHECK(eval(bb[0].rhs, env) == doctest::Approx(-1.0));
    CHECK(eval(bb[1].rhs, env) == doctest::Approx(-0.25));
    CHECK(bb[0].jumps.empty());
    REQUIRE(bb[1].jumps.size() == 1);
    CHECK(bb[1].jumps[0].first == 2.0);
    CHECK(eval(bb[1].jumps[0].second, env) == doctest::Approx(-0.5));

    CHECK_THROWS_AS(adjoint_system(assemble(problem("horizon 1\nstate x\nconstraint integral \"x\"\n"))),
                    std::invalid_argument);
    CHECK_THROWS_AS(adjoint_system(assemble(problem(
                        "horizon 1\nstate x init 0\ncontrol u box 0 1\ncriterion integral \"-abs(x)\"\n"
                        "constraint ode x \"u\"\n"))),
                    NonsmoothError);
}

TEST_CASE("convolution term equals u times the lambda-weighted kernel") {
    LagrangeSystem L = assemble(problem("horizon 1\nstate x\ncontrol u box 0 1\n"
                                        "constraint convolution x u kernel \"exp(-2*s)*step(s)\"\n"));
    SystemEvaluator ev(L);
    std::mt19937 rng(3);
    SolutionCandidate c = random_candidate(L.problem, 16, rng);
    std::vector<double> v = ev.blank();
    const double h = c.mesh.step();
    for (std::size_t k = 0; k < c.mesh.nodes(); ++k) {
        ev.load_node(v, c, k);
        const double u = 0.37;
        ev.load_controls(v, {u});
        const double t = c.mesh.node(k);
        double expect = 0.0;
        for (std::size_t q = 0; q < c.mesh.nodes(); ++q) {
            const double tau = c.mesh.node(q);
            const double w = (q == 0 || q == c.mesh.intervals()) ? h / 2 : h;
            const double kernel = tau - t >= 0 ? std::exp(-2 * (tau - t)) : 0.0;
            expect += w * c.multipliers[0].lambda[q] * kernel;
        }
        CHECK(ev.term(0, v, c) == doctest::Approx(u * expect).epsilon(1e-12));
        CHECK(ev.term_du(0, 0, v, c) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("Volterra grouping reproduces int lambda(tau) J(tau) dtau") {
    // x(tau) = 1 + int_0^tau (u - x) dt with smooth data, high resolution.
    LagrangeSystem L = assemble(problem("horizon 1\nstate x init 1\ncontrol u box -2 2\n"
                                        "constraint volterra x \"u - x*t\"\n"));
    SystemEvaluator ev(L);
    const int n = 4000;
    SolutionCandidate c = SolutionCandidate::zeros(L.problem, Mesh(1.0, n));
    auto lam = [](double t) { return std::cos(3 * t) + 0.5; };
    auto xf = [](double t) { return 1.0 + t * t; };
    auto uf = [](double t) { return std::sin(2 * t); };
    const double h = c.mesh.step();
    ConstraintMultiplier& m = c.multipliers[0];
    m.lambda.resize(n + 1);
    m.psi.assign(n + 1, 0.0);
    for (int k = 0; k <= n; ++k) {
        c.x[k][0] = xf(c.mesh.node(k));
        m.lambda[k] = lam(c.mesh.node(k));
    }
    for (int i = 0; i < n; ++i)
        c.u[i][0] = uf(c.mesh.node(i) + h / 2);
    for (int k = n - 1; k >= 0; --k)  // Lam(t) = -int_t^T lambda
        m.psi[k] = m.psi[k + 1] - 0.5 * h * (m.lambda[k] + m.lambda[k + 1]);

    // Grouped form: int (f*Lam + lambda*x) dt + x0*Lam(0).
    std::vector<double> v = ev.blank();
    double grouped = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int end = 0; end < 2; ++end) {
            ev.load_node(v, c, i + end);
            ev.load_controls(v, c.u[i]);
            grouped += 0.5 * h * (ev.term(0, v, c) + ev.term(1, v, c));
        }
    }
    ev.load_node(v, c, 0);
    grouped += ev.term(2, v, c) * L.problem.horizon;

    // Direct form: int lambda(tau) (x(tau) - x0 - int_0^tau f dt) dtau.
    double direct = 0.0;
    double inner = 0.0;
    for (int k = 0; k <= n; ++k) {
        if (k > 0) {
            const double t0 = c.mesh.node(k - 1);
            const double t1 = c.mesh.node(k);
            inner += 0.5 * h * ((c.u[k - 1][0] - xf(t0) * t0) + (c.u[k - 1][0] - xf(t1) * t1));
        }
        const double w = (k == 0 || k == n) ? h / 2 : h;
        direct += w * m.lambda[k] * (c.x[k][0] - 1.0 - inner);
    }
    CHECK(grouped == doctest::Approx(direct).epsilon(1e-5));
}

TEST_CASE("printed conditions for the integral-equation and Pontryagin problems") {
    LagrangeSystem fred = assemble(problem(R"P(
horizon 1
state x
control u box -1 1
criterion integral "-(x - 1)^2 - 0.1*u^2"
constraint fredholm x "exp(-(tau - t)^2)*u"
)P"));
    const std::vector<std::string> expected = {
        "lam1(t) = d/dx [l0*f0 + int(lam1(tau)*f1, tau, 0, T)]",
        "u* = argmax_{u in V} [l0*f0 + int(lam1(tau)*f1, tau, 0, T)]",
    };
    CHECK(fred.print_conditions() == expected);

    LagrangeSystem pont = assemble(problem(R"P(
horizon 1
state x init 1
control u box -1 1
criterion integral "-(x^2 + u^2)"
criterion terminal "-x^2" at 1
constraint ode x "u"
)P"));
    const std::vector<std::string> expected_p = {
        "dpsi1 = -d/dx [l0*f0 + psi1*f1]",
        "psi1(T-) - psi1(T+) = d/dx [l0*F0]",
        "psi1(T+) = 0",
        "u* = argmax_{u in V} [l0*f0 + psi1*f1]",
    };
    CHECK(pont.print_conditions() == expected_p);
}
