#include "canonmp/problem_file.hpp"
#include "canonmp/relax.hpp"

#include "doctest.h"
#include "support/oracles.hpp"

#include <boost/multiprecision/cpp_int.hpp>

#include <cmath>
#include <random>

using namespace canonmp;
using boost::multiprecision::cpp_rational;
using namespace canonmp::testing;

namespace {

CanonicalProblem problem(const std::string& text) { return build_problem(parse_problem_text(text)); }

}  // namespace

TEST_CASE("extend counts u-bearing constraints") {
    const LagrangeSystem pont = assemble(problem(R"P(
horizon 1
state x init 0
control u box -1 1
criterion integral "-x^2"
constraint ode x "u"
)P"));
    CHECK(extend(pont).slots == 2);
    const LagrangeSystem bare = assemble(problem(R"P(
horizon 1
control u box -1 1
criterion integral "-u^2"
)P"));
    CHECK(extend(bare).slots == 1);
    const LagrangeSystem two = assemble(problem(R"P(
horizon 1
state x init 0
state y init 0
control u box -1 1
criterion integral "-x^2"
constraint ode x "u"
constraint ode y "u^2 - x"
)P"));
    CHECK(extend(two).slots == 3);
    const LagrangeSystem none = assemble(problem(R"P(
horizon 1
state x init 0
control u box -1 1
criterion integral "x"
constraint ode x "u"
constraint pointwise "x + u"
)P"));
    CHECK(extend(none).slots == 0);
}

TEST_CASE("one weight-one atom recovers R") {
    const CanonicalProblem p = problem(R"P(
horizon 1
state x init 1
control u box -2 2
criterion integral "-(x^2+u^2)"
constraint ode x "u - x*u"
)P");
    const LagrangeSystem L = assemble(p);
    const SystemEvaluator ev(L);
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    SolutionCandidate c = SolutionCandidate::zeros(p, Mesh(1.0, 6));
    c.multipliers[0].psi.resize(7);
    c.multipliers[0].lambda.resize(7);
    RelaxedControl rc;
    for (std::size_t k = 0; k < 7; ++k) {
        c.x[k][0] = d(rng);
        c.multipliers[0].psi[k] = d(rng);
        c.multipliers[0].lambda[k] = d(rng);
    }
    for (std::size_t i = 0; i < 6; ++i) {
        c.u[i][0] = 2 * d(rng);
        rc.gamma.push_back({1.0});
        rc.values.push_back({c.u[i]});
    }
    SolutionCandidate relaxed = c;
    relaxed.relaxed = rc;
    for (std::size_t i = 0; i < 6; ++i) {
        std::vector<double> v = ev.blank();
        ev.load_node(v, c, i);
        ev.load_controls(v, c.u[i]);
        const double direct = ev.sum(L.n_terms, v, c) + ev.sum(L.h_terms, v, c);
        std::vector<double> w = ev.blank();
        ev.load_node(w, relaxed, i);
        CHECK(extended_R(ev, w, relaxed, i) == direct);
    }
}

TEST_CASE("caratheodory examples") {
    std::vector<SupportPoint<double>> one{{{3.0, 1.0}, 1.0}};
    ReducedSupport<double> r = caratheodory_reduce(one);
    CHECK(r.index == std::vector<std::size_t>{0});
    CHECK(r.weight[0] == 1.0);

    std::vector<SupportPoint<double>> pts{{{0, -1}, 0.25}, {{0, 1}, 0.25}, {{1, 0}, 0.5}};
    r = caratheodory_reduce(pts);
    CHECK(r.index == std::vector<std::size_t>{2});
    CHECK(r.weight[0] == doctest::Approx(1.0));
    CHECK(means(pts, r)[0] == doctest::Approx(1.0));

    std::vector<SupportPoint<double>> two{{{0, -1}, 0.5}, {{0, 1}, 0.5}};
    r = caratheodory_reduce(two);
    CHECK(r.index == std::vector<std::size_t>{0, 1});
    CHECK(r.weight == std::vector<double>{0.5, 0.5});

    CHECK_THROWS_AS(caratheodory_reduce(std::vector<SupportPoint<double>>{{{0, 1}, 0.4}}), std::invalid_argument);
    CHECK_THROWS_AS(caratheodory_reduce(std::vector<SupportPoint<double>>{{{0, 1}, 1.5}, {{1, 1}, -0.5}}),
                    std::invalid_argument);
}

TEST_CASE("caratheodory on rationals is exact") {
    using Q = cpp_rational;
    std::vector<SupportPoint<Q>> pts{{{Q(0), Q(-1)}, Q(1, 4)}, {{Q(0), Q(1)}, Q(1, 4)}, {{Q(1), Q(0)}, Q(1, 2)}};
    const ReducedSupport<Q> r = caratheodory_reduce(pts);
    CHECK(r.index == std::vector<std::size_t>{2});
    CHECK(r.weight[0] == Q(1));

    std::mt19937 rng(17);
    std::uniform_int_distribution<int> num(-9, 9);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t m = 1 + static_cast<std::size_t>(trial % 3);
        const std::size_t n = m + 2 + static_cast<std::size_t>(trial % 5);
        std::vector<SupportPoint<Q>> q(n);
        for (std::size_t k = 0; k < n; ++k) {
            for (std::size_t d = 0; d <= m; ++d)
                q[k].f.push_back(Q(num(rng), 1 + std::abs(num(rng))));
            q[k].weight = Q(1, static_cast<long>(n));
        }
        const ReducedSupport<Q> red = caratheodory_reduce(q);
        CHECK(red.index.size() <= m + 1);
        const auto before = means(q);
        const auto after = means(q, red);
        for (std::size_t d = 1; d <= m; ++d)
            CHECK(after[d] == before[d]);
        CHECK(after[0] >= before[0]);
    }
}

TEST_CASE("caratheodory on random instances against brute force") {
    std::mt19937 rng(2024);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t m = 1 + static_cast<std::size_t>(trial % 3);
        const std::size_t n = 1 + std::uniform_int_distribution<std::size_t>(0, 9)(rng);
        const auto pts = random_points(rng, m, n);
        const ReducedSupport<double> r = caratheodory_reduce(pts);
        CHECK(r.index.size() <= m + 1);
        const auto before = means(pts);
        const auto after = means(pts, r);
        for (std::size_t d = 1; d <= m; ++d)
            CHECK(std::abs(after[d] - before[d]) <= 1e-12);
        CHECK(after[0] >= before[0] - 1e-12);
        double total = 0.0;
        for (double w : r.weight) {
            CHECK(w >= 0.0);
            total += w;
        }
        CHECK(std::abs(total - 1.0) <= 1e-12);
        if (m <= 2 && n > m + 1) {
            // the optimum over (m+1)-point supports bounds the reduced mean
            const double best = brute_force_best(pts, before);
            CHECK(best >= after[0] - 1e-9);
        }
    }
}

TEST_CASE("reduce_support keeps at most m+1 atoms and the dynamics means") {
    const CanonicalProblem p = problem(R"P(
horizon 1
state x init 0
control u set -1 0 0.5 1
criterion integral "-x^2 - 0.1*u^2"
constraint ode x "u"
)P");
    const LagrangeSystem L = assemble(p);
    SolutionCandidate c = SolutionCandidate::zeros(p, Mesh(1.0, 5));
    c.multipliers[0].psi.assign(6, 0.3);
    c.multipliers[0].lambda.assign(6, 0.0);
    RelaxedControl rc;
    for (std::size_t i = 0; i < 5; ++i) {
        rc.gamma.push_back({0.1, 0.2, 0.3, 0.4});
        rc.values.push_back({{-1.0}, {0.0}, {0.5}, {1.0}});
    }
    c.relaxed = rc;
    const SolutionCandidate r = reduce_support(L, c);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(r.relaxed->support(i) <= 2);
        double mean_u = 0.0, total = 0.0;
        for (std::size_t k = 0; k < r.relaxed->gamma[i].size(); ++k) {
            mean_u += r.relaxed->gamma[i][k] * r.relaxed->values[i][k][0];
            total += r.relaxed->gamma[i][k];
        }
        CHECK(mean_u == doctest::Approx(0.1 * -1 + 0.3 * 0.5 + 0.4));
        CHECK(total == doctest::Approx(1.0));
    }
}
