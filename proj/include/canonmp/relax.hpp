#pragma once

#include "canonmp/evaluator.hpp"
#include "canonmp/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <type_traits>
#include <vector>

namespace canonmp {

/// Averaged extension R~ = N + sum_k gamma_k H(x, u_k, ...) with `slots`
/// weight/value pairs per interval. slots == 0 marks a problem without
/// first-group variables.
struct RelaxedSystem {
    LagrangeSystem base;
    std::size_t m = 0;  // constraints whose R_I terms carry first-group controls
    std::size_t slots = 0;
};

RelaxedSystem extend(const LagrangeSystem& L);

/// N + sum_k gamma_k H(u_k) at the point v (controls slot overwritten), for
/// interval i of the candidate.
double extended_R(const SystemEvaluator& ev, std::vector<double>& v, const SolutionCandidate& c, std::size_t i);

struct RelaxedResiduals {
    double equalization = 0.0;  // max over active atoms of max_u H - H(u_k)
    double stationarity = 0.0;  // |dN/dx + sum gamma_k dH(u_k)/dx|
    double param = 0.0;         // improving directional derivative in a
};

/// Optimality residuals of a relaxed candidate; throws std::invalid_argument
/// when the weights are not a probability vector.
RelaxedResiduals relaxed_residuals(const RelaxedSystem& rs, const SolutionCandidate& c, const SolverConfig& cfg,
                                   const VerifyConfig& vc = {});

/// Replaces each interval's atoms by at most m+1 of them (Caratheodory),
/// keeping the interval means of the u-dependent constraint integrands.
SolutionCandidate reduce_support(const LagrangeSystem& L, const SolutionCandidate& c);

template <class Real>
struct SupportPoint {
    std::vector<Real> f;  // f[0] objective, f[1..m] constraint integrands
    Real weight;
};

template <class Real>
struct ReducedSupport {
    std::vector<std::size_t> index;  // into the input points
    std::vector<Real> weight;
};

namespace detail {

template <class Real>
bool negligible(const Real& x, const Real& scale) {
    if constexpr (std::is_floating_point_v<Real>)
        return std::abs(x) <= 1e-13 * scale;
    else
        return x == 0;
}

template <class Real>
Real magnitude(const Real& x) {
    return x < 0 ? Real(-x) : x;
}

// Nonzero null vector of the (rows x cols) matrix A, cols > rows.
template <class Real>
std::vector<Real> null_vector(std::vector<std::vector<Real>> A, std::size_t cols) {
    const std::size_t rows = A.size();
    Real scale = 1;
    for (const auto& r : A)
        for (const Real& a : r)
            if (scale < magnitude(a))
                scale = magnitude(a);
    std::vector<std::size_t> pivot_col;
    std::size_t r = 0;
    for (std::size_t c = 0; c < cols && r < rows; ++c) {
        std::size_t best = r;
        for (std::size_t i = r + 1; i < rows; ++i)
            if (magnitude(A[best][c]) < magnitude(A[i][c]))
                best = i;
        if (negligible(A[best][c], scale))
            continue;
        std::swap(A[r], A[best]);
        const Real p = A[r][c];
        for (std::size_t k = c; k < cols; ++k)
            A[r][k] /= p;
        for (std::size_t i = 0; i < rows; ++i) {
            if (i == r || A[i][c] == 0)
                continue;
            const Real f = A[i][c];
            for (std::size_t k = c; k < cols; ++k)
                A[i][k] -= f * A[r][k];
        }
        pivot_col.push_back(c);
        ++r;
    }
    std::size_t free_col = cols;
    for (std::size_t c = 0; c < cols && free_col == cols; ++c)
        if (std::find(pivot_col.begin(), pivot_col.end(), c) == pivot_col.end())
            free_col = c;
    std::vector<Real> v(cols, Real(0));
    v[free_col] = 1;
    for (std::size_t i = 0; i < pivot_col.size(); ++i)
        v[pivot_col[i]] = -A[i][free_col];
    return v;
}

}  // namespace detail

/// Reduces a finite atomic measure to at most m+1 atoms while keeping the
/// means of f[1..m] and not decreasing the mean of f[0].
template <class Real>
ReducedSupport<Real> caratheodory_reduce(const std::vector<SupportPoint<Real>>& points) {
    if (points.empty())
        throw std::invalid_argument("empty support");
    const std::size_t dim = points[0].f.size();
    if (dim == 0)
        throw std::invalid_argument("support points need an objective component");
    const std::size_t m = dim - 1;
    Real total = 0;
    for (const auto& pt : points) {
        if (pt.f.size() != dim)
            throw std::invalid_argument("support points of mixed dimension");
        if (pt.weight < 0 && !detail::negligible(pt.weight, Real(1)))
            throw std::invalid_argument("negative weight");
        total += pt.weight;
    }
    if (!detail::negligible(Real(total - 1), Real(1e3)))
        throw std::invalid_argument("weights do not sum to one");

    ReducedSupport<Real> out;
    for (std::size_t i = 0; i < points.size(); ++i)
        if (points[i].weight > 0) {
            out.index.push_back(i);
            out.weight.push_back(points[i].weight);
        }

    while (out.index.size() > m + 1) {
        const std::size_t cols = m + 2;  // any m+2 atoms are affinely dependent
        std::vector<std::vector<Real>> A(m + 1, std::vector<Real>(cols));
        for (std::size_t c = 0; c < cols; ++c) {
            const auto& f = points[out.index[c]].f;
            for (std::size_t r = 0; r < m; ++r)
                A[r][c] = f[r + 1];
            A[m][c] = 1;
        }
        std::vector<Real> v = detail::null_vector(A, cols);
        Real gain = 0;
        for (std::size_t c = 0; c < cols; ++c)
            gain += points[out.index[c]].f[0] * v[c];
        if (gain < 0)
            for (Real& x : v)
                x = -x;

        std::size_t hit = cols;
        Real theta = 0;
        for (std::size_t c = 0; c < cols; ++c) {
            if (!(v[c] < 0))
                continue;
            Real t = out.weight[c] / Real(-v[c]);
            if (hit == cols || t < theta) {
                theta = t;
                hit = c;
            }
        }
        for (std::size_t c = 0; c < cols; ++c)
            out.weight[c] += theta * v[c];
        out.weight[hit] = 0;

        ReducedSupport<Real> next;
        for (std::size_t c = 0; c < out.index.size(); ++c) {
            if (out.weight[c] > 0 && !detail::negligible(out.weight[c], Real(1))) {
                next.index.push_back(out.index[c]);
                next.weight.push_back(out.weight[c]);
            }
        }
        out = std::move(next);
    }
    return out;
}

}  // namespace canonmp
