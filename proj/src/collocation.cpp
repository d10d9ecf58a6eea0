#include "canonmp/relax.hpp"
#include "canonmp/solve.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace canonmp {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kInf = std::numeric_limits<double>::infinity();

// Expression with first and second derivatives over the local variables
// (states, controls, params, slacks).
struct LocalFn {
    CompiledExpr f;
    std::vector<std::pair<std::size_t, CompiledExpr>> d1;
    std::vector<std::tuple<std::size_t, std::size_t, CompiledExpr>> d2;
    bool uses_controls = false;
};

// One quadrature sample: coeff * fn(node, controls of `interval`, tau),
// added to every row in [row_lo, row_hi).
struct Piece {
    std::size_t fn;
    std::size_t node;
    std::size_t interval;
    double tau;
    double coeff;
    std::size_t row_lo;
    std::size_t row_hi;
};

struct Linear {
    std::size_t row;
    std::size_t var;
    double coeff;
};

struct Atom {
    long gamma = -1;          // weight variable, -1 for weight 1
    std::vector<long> u_var;  // per control, -1 when fixed
    std::vector<double> u_fixed;
};

struct RowBlock {
    std::size_t first = 0;
    std::size_t count = 0;
};

class Transcription {
public:
    Transcription(const CanonicalProblem& p, const SolverConfig& cfg, ControlMode mode,
                  const std::vector<std::vector<double>>* fixed_u, std::size_t slots)
        : p_(p), mesh_(p.horizon, cfg.mesh), layout_(p.base_layout()), mode_(mode), slots_(std::max<std::size_t>(slots, 1)) {
        np_ = p.states.size();
        nc_ = p.controls.size();
        na_ = p.params.size();
        nz_ = p.slacks.size();
        nodes_ = mesh_.nodes();
        intervals_ = static_cast<std::size_t>(mesh_.intervals());
        build_variables(fixed_u);
        build_rows();
    }

    std::size_t n() const { return lower_.size(); }
    std::size_t rows() const { return rows_; }
    const VectorXd& lower() const { return lower_; }
    const VectorXd& upper() const { return upper_; }
    const Mesh& mesh() const { return mesh_; }

    VectorXd initial() const {
        VectorXd w = VectorXd::Zero(static_cast<Eigen::Index>(n()));
        for (std::size_t k = 0; k < nodes_; ++k)
            for (std::size_t s = 0; s < np_; ++s)
                w[x_var(k, s)] = p_.states[s].init.value_or(0.0);
        for (std::size_t i = 0; i < intervals_; ++i) {
            const auto& slots = atoms_[i];
            for (std::size_t a = 0; a < slots.size(); ++a) {
                if (slots[a].gamma >= 0)
                    w[slots[a].gamma] = 1.0 / static_cast<double>(slots.size());
                for (std::size_t c = 0; c < nc_; ++c) {
                    if (slots[a].u_var[c] < 0)
                        continue;
                    const Box& b = *p_.controls[c].box;
                    double u = std::clamp(0.0, b.lo, b.hi);
                    if (mode_ == ControlMode::Relaxed)
                        u = b.lo + (b.hi - b.lo) * static_cast<double>(a + 1) / static_cast<double>(slots.size() + 1);
                    w[slots[a].u_var[c]] = u;
                }
            }
        }
        for (std::size_t q = 0; q < na_; ++q)
            if (p_.params[q].box)
                w[a_var(q)] = std::clamp(0.0, p_.params[q].box->lo, p_.params[q].box->hi);
        return w;
    }

    // Constraint residuals and optionally the dense Jacobian.
    void constraints(const VectorXd& w, VectorXd& c, MatrixXd* jac) const {
        const auto R = static_cast<Eigen::Index>(rows_);
        VectorXd diff = VectorXd::Zero(R + 1);
        MatrixXd djac;
        if (jac)
            djac = MatrixXd::Zero(R + 1, static_cast<Eigen::Index>(n()));
        std::vector<double> v(layout_.size(), 0.0);
        for (const Piece& pc : pieces_) {
            sample(pc, w, v, [&](double value, long var, double d) {
                if (var == -2) {
                    diff[static_cast<Eigen::Index>(pc.row_lo)] += pc.coeff * value;
                    diff[static_cast<Eigen::Index>(pc.row_hi)] -= pc.coeff * value;
                } else if (jac) {
                    djac(static_cast<Eigen::Index>(pc.row_lo), var) += pc.coeff * d;
                    djac(static_cast<Eigen::Index>(pc.row_hi), var) -= pc.coeff * d;
                }
            }, jac != nullptr);
        }
        c.resize(R);
        double acc = 0.0;
        for (Eigen::Index r = 0; r < R; ++r) {
            acc += diff[r];
            c[r] = acc + row_const_[static_cast<std::size_t>(r)];
        }
        for (const Linear& l : linear_)
            c[static_cast<Eigen::Index>(l.row)] += l.coeff * w[static_cast<Eigen::Index>(l.var)];
        if (jac) {
            jac->resize(R, static_cast<Eigen::Index>(n()));
            Eigen::RowVectorXd run = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(n()));
            for (Eigen::Index r = 0; r < R; ++r) {
                run += djac.row(r);
                jac->row(r) = run;
            }
            for (const Linear& l : linear_)
                (*jac)(static_cast<Eigen::Index>(l.row), static_cast<Eigen::Index>(l.var)) += l.coeff;
        }
    }

    // Criterion value and optionally its gradient.
    double objective(const VectorXd& w, VectorXd* grad) const {
        double value = 0.0;
        std::vector<double> v(layout_.size(), 0.0);
        for (const Piece& pc : objective_pieces_) {
            sample(pc, w, v, [&](double f, long var, double d) {
                if (var == -2)
                    value += pc.coeff * f;
                else if (grad)
                    (*grad)[var] += pc.coeff * d;
            }, grad != nullptr);
        }
        for (const Linear& l : objective_linear_) {
            value += l.coeff * w[static_cast<Eigen::Index>(l.var)];
            if (grad)
                (*grad)[static_cast<Eigen::Index>(l.var)] += l.coeff;
        }
        return value;
    }

    // Adds sum over pieces of weight * Hessian, with weights -1 * coeff for
    // the objective and nu-weighted row sums for the constraints.
    void curvature(const VectorXd& w, const VectorXd& nu, double objective_sign, MatrixXd& H) const {
        std::vector<double> prefix(rows_ + 1, 0.0);
        for (std::size_t r = 0; r < rows_; ++r)
            prefix[r + 1] = prefix[r] + nu[static_cast<Eigen::Index>(r)];
        std::vector<double> v(layout_.size(), 0.0);
        for (const Piece& pc : pieces_) {
            const double weight = pc.coeff * (prefix[pc.row_hi] - prefix[pc.row_lo]);
            if (weight != 0.0)
                hessian(pc, w, v, weight, H);
        }
        for (const Piece& pc : objective_pieces_)
            hessian(pc, w, v, objective_sign * pc.coeff, H);
    }

    // Row weights mapping row multipliers to densities.
    double row_weight(std::size_t row) const { return row_weight_[row]; }
    const std::vector<RowBlock>& blocks() const { return blocks_; }
    const RowBlock& maximin_block() const { return maximin_; }

    // Decision vector holding the candidate (classical layout).
    VectorXd pack(const SolutionCandidate& c) const {
        VectorXd w = VectorXd::Zero(static_cast<Eigen::Index>(n()));
        for (std::size_t k = 0; k < nodes_; ++k) {
            for (std::size_t s = 0; s < np_; ++s)
                w[x_var(k, s)] = c.x[k][s];
            for (std::size_t q = 0; q < nz_; ++q)
                w[z_var(k, q)] = c.z[k][q];
        }
        for (std::size_t q = 0; q < na_; ++q)
            w[a_var(q)] = c.a[q];
        for (std::size_t i = 0; i < intervals_; ++i)
            for (std::size_t u = 0; u < nc_; ++u)
                if (atoms_[i][0].u_var[u] >= 0)
                    w[atoms_[i][0].u_var[u]] = c.u[i][u];
        return w;
    }

    SolutionCandidate extract(const VectorXd& w) const {
        SolutionCandidate c = SolutionCandidate::zeros(p_, mesh_);
        for (std::size_t k = 0; k < nodes_; ++k) {
            for (std::size_t s = 0; s < np_; ++s)
                c.x[k][s] = w[x_var(k, s)];
            for (std::size_t q = 0; q < nz_; ++q)
                c.z[k][q] = std::max(0.0, w[z_var(k, q)]);
        }
        for (std::size_t q = 0; q < na_; ++q)
            c.a[q] = w[a_var(q)];
        if (mode_ == ControlMode::Classical) {
            for (std::size_t i = 0; i < intervals_; ++i)
                c.u[i] = atom_controls(atoms_[i][0], w);
            return c;
        }
        RelaxedControl rc;
        for (std::size_t i = 0; i < intervals_; ++i) {
            std::vector<double> g;
            std::vector<std::vector<double>> vals;
            double total = 0.0;
            for (const Atom& a : atoms_[i]) {
                g.push_back(std::max(0.0, w[a.gamma]));
                total += g.back();
                vals.push_back(atom_controls(a, w));
            }
            for (double& x : g)
                x /= total;
            const auto best = std::max_element(g.begin(), g.end()) - g.begin();
            c.u[i] = vals[static_cast<std::size_t>(best)];
            rc.gamma.push_back(std::move(g));
            rc.values.push_back(std::move(vals));
        }
        c.relaxed = std::move(rc);
        return c;
    }

private:
    Eigen::Index x_var(std::size_t k, std::size_t s) const { return static_cast<Eigen::Index>(k * np_ + s); }
    Eigen::Index z_var(std::size_t k, std::size_t q) const { return static_cast<Eigen::Index>(off_z_ + k * nz_ + q); }
    Eigen::Index a_var(std::size_t q) const { return static_cast<Eigen::Index>(off_a_ + q); }

    std::vector<double> atom_controls(const Atom& a, const VectorXd& w) const {
        std::vector<double> u(nc_);
        for (std::size_t c = 0; c < nc_; ++c)
            u[c] = a.u_var[c] >= 0 ? w[a.u_var[c]] : a.u_fixed[c];
        return u;
    }

    long add_var(double lo, double hi) {
        bounds_.emplace_back(lo, hi);
        return static_cast<long>(bounds_.size() - 1);
    }

    void build_variables(const std::vector<std::vector<double>>* fixed_u) {
        for (std::size_t k = 0; k < nodes_; ++k)
            for (std::size_t s = 0; s < np_; ++s)
                add_var(-kInf, kInf);
        off_z_ = bounds_.size();
        for (std::size_t k = 0; k < nodes_; ++k)
            for (std::size_t q = 0; q < nz_; ++q)
                add_var(0.0, kInf);
        off_a_ = bounds_.size();
        for (const ParamDecl& a : p_.params)
            add_var(a.box ? a.box->lo : -kInf, a.box ? a.box->hi : kInf);

        atoms_.resize(intervals_);
        if (mode_ == ControlMode::Classical) {
            for (std::size_t i = 0; i < intervals_; ++i) {
                Atom a;
                for (std::size_t c = 0; c < nc_; ++c) {
                    const ControlDecl& d = p_.controls[c];
                    if (d.is_finite()) {
                        if (!fixed_u)
                            throw UnsupportedError("finite control sets need fixed values in classical collocation");
                        a.u_var.push_back(-1);
                        a.u_fixed.push_back((*fixed_u)[i][c]);
                    } else {
                        a.u_var.push_back(add_var(d.box->lo, d.box->hi));
                        a.u_fixed.push_back(0.0);
                    }
                }
                atoms_[i].push_back(std::move(a));
            }
            return;
        }

        bool all_finite = true;
        bool all_box = true;
        for (const ControlDecl& d : p_.controls) {
            all_finite = all_finite && d.is_finite();
            all_box = all_box && !d.is_finite();
        }
        if (!all_finite && !all_box)
            throw UnsupportedError("relaxed collocation needs all-box or all-finite controls");
        std::vector<std::vector<double>> points;
        if (all_finite) {
            points.push_back({});
            for (const ControlDecl& d : p_.controls) {
                std::vector<double> axis = d.points;
                std::sort(axis.begin(), axis.end());
                std::vector<std::vector<double>> next;
                for (const auto& prefix : points)
                    for (double v : axis) {
                        next.push_back(prefix);
                        next.back().push_back(v);
                    }
                points = std::move(next);
            }
        }
        for (std::size_t i = 0; i < intervals_; ++i) {
            const std::size_t count = all_finite ? points.size() : slots_;
            for (std::size_t s = 0; s < count; ++s) {
                Atom a;
                a.gamma = add_var(0.0, 1.0);
                for (std::size_t c = 0; c < nc_; ++c) {
                    if (all_finite) {
                        a.u_var.push_back(-1);
                        a.u_fixed.push_back(points[s][c]);
                    } else {
                        a.u_var.push_back(add_var(p_.controls[c].box->lo, p_.controls[c].box->hi));
                        a.u_fixed.push_back(0.0);
                    }
                }
                atoms_[i].push_back(std::move(a));
            }
        }
    }

    std::size_t fn_index(const Expr& e) {
        const std::string key = to_string(e);
        auto it = fn_cache_.find(key);
        if (it != fn_cache_.end())
            return it->second;
        LocalFn fn;
        fn.f = CompiledExpr(e, layout_);
        std::vector<std::string> names;
        for (const auto& s : p_.states)
            names.push_back(s.name);
        for (const auto& c : p_.controls)
            names.push_back(c.name);
        for (const auto& a : p_.params)
            names.push_back(a.name);
        for (const auto& z : p_.slacks)
            names.push_back(z);
        for (std::size_t l = np_; l < np_ + nc_; ++l)
            fn.uses_controls = fn.uses_controls || depends_on(e, names[l]);
        for (std::size_t l1 = 0; l1 < names.size(); ++l1) {
            if (!depends_on(e, names[l1]))
                continue;
            Expr d = diff(e, names[l1]);
            if (d.is_constant(0.0))
                continue;
            fn.d1.emplace_back(l1, CompiledExpr(d, layout_));
            for (std::size_t l2 = l1; l2 < names.size(); ++l2) {
                if (!depends_on(d, names[l2]))
                    continue;
                Expr dd = diff(d, names[l2]);
                if (!dd.is_constant(0.0))
                    fn.d2.emplace_back(l1, l2, CompiledExpr(dd, layout_));
            }
        }
        fns_.push_back(std::move(fn));
        fn_cache_.emplace(key, fns_.size() - 1);
        return fns_.size() - 1;
    }

    std::size_t new_rows(std::size_t count, bool trapezoid) {
        const std::size_t first = rows_;
        rows_ += count;
        row_const_.resize(rows_, 0.0);
        for (std::size_t r = 0; r < count; ++r) {
            double w = 1.0;
            if (trapezoid)
                w = (r == 0 || r + 1 == count) ? 0.5 * mesh_.step() : mesh_.step();
            row_weight_.push_back(w);
        }
        return first;
    }

    void add_running(std::vector<Piece>& out, const Expr& g, double tau, std::size_t lo, std::size_t hi,
                     std::size_t first_interval = 0) {
        const std::size_t fn = fn_index(g);
        const double h = mesh_.step();
        for (std::size_t i = first_interval; i < intervals_; ++i)
            for (std::size_t end = 0; end < 2; ++end)
                out.push_back({fn, i + end, i, tau, 0.5 * h, lo, hi});
    }

    void build_rows() {
        const double h = mesh_.step();
        for (const ConstraintSpec& c : p_.constraints) {
            const CanonicalForm form = to_canonical(c, p_);
            const std::size_t count = form.tau_family ? nodes_ : 1;
            const std::size_t r0 = new_rows(count, form.tau_family);
            blocks_.push_back({r0, count});
            const std::size_t r1 = r0 + count;
            if (form.window == TauWindow::UpToTau) {
                const std::size_t fn = fn_index(form.windowed);
                for (std::size_t i = 0; i < intervals_; ++i)
                    for (std::size_t end = 0; end < 2; ++end)
                        pieces_.push_back({fn, i + end, i, 0.0, 0.5 * h, r0 + i + 1, r1});
            }
            if (!(form.unwindowed == Expr(0.0))) {
                if (form.unwindowed.is_constant()) {
                    for (std::size_t r = r0; r < r1; ++r)
                        row_const_[r] += form.unwindowed.value() * p_.horizon;
                } else if (depends_on(form.unwindowed, "tau")) {
                    for (std::size_t k = 0; k < count; ++k)
                        add_running(pieces_, form.unwindowed, mesh_.node(k), r0 + k, r0 + k + 1);
                } else {
                    add_running(pieces_, form.unwindowed, 0.0, r0, r1);
                }
            }
            if (form.point_at == PointAt::Tau) {
                const std::size_t fn = fn_index(form.f2);
                for (std::size_t k = 0; k < count; ++k)
                    pieces_.push_back({fn, k, std::min(k, intervals_ - 1), mesh_.node(k), 1.0, r0 + k, r0 + k + 1});
            } else if (form.point_at == PointAt::Fixed) {
                const std::size_t fn = fn_index(form.f2);
                const std::size_t k = mesh_.snap(form.point_time);
                pieces_.push_back({fn, k, std::min(k, intervals_ - 1), 0.0, 1.0, r0, r1});
            }
        }

        for (const CriterionPart& part : p_.criterion.parts) {
            switch (part.kind) {
            case CriterionKind::Integral:
                add_running(objective_pieces_, part.expr, 0.0, 0, 0);
                break;
            case CriterionKind::Terminal: {
                const std::size_t k = mesh_.snap(part.time);
                objective_pieces_.push_back({fn_index(part.expr), k, std::min(k, intervals_ - 1), 0.0, 1.0, 0, 0});
                break;
            }
            case CriterionKind::Maximin: {
                // maximize a subject to f0(t_k) - a - zm_k = 0, zm_k >= 0
                const std::size_t a = static_cast<std::size_t>(a_var(static_cast<std::size_t>(p_.param_index("a"))));
                objective_linear_.push_back({0, a, 1.0});
                const std::size_t r0 = new_rows(nodes_, true);
                maximin_ = {r0, nodes_};
                const std::size_t fn = fn_index(part.expr);
                for (std::size_t k = 0; k < nodes_; ++k) {
                    const long zm = add_var(0.0, kInf);
                    pieces_.push_back({fn, k, std::min(k, intervals_ - 1), mesh_.node(k), 1.0, r0 + k, r0 + k + 1});
                    linear_.push_back({r0 + k, a, -1.0});
                    linear_.push_back({r0 + k, static_cast<std::size_t>(zm), -1.0});
                }
                break;
            }
            }
        }

        if (mode_ == ControlMode::Relaxed) {
            const std::size_t r0 = new_rows(intervals_, false);
            for (std::size_t i = 0; i < intervals_; ++i) {
                row_const_[r0 + i] = -1.0;
                for (const Atom& a : atoms_[i])
                    linear_.push_back({r0 + i, static_cast<std::size_t>(a.gamma), 1.0});
            }
        }

        lower_.resize(static_cast<Eigen::Index>(bounds_.size()));
        upper_.resize(static_cast<Eigen::Index>(bounds_.size()));
        for (std::size_t j = 0; j < bounds_.size(); ++j) {
            lower_[static_cast<Eigen::Index>(j)] = bounds_[j].first;
            upper_[static_cast<Eigen::Index>(j)] = bounds_[j].second;
        }
    }

    // Fills the evaluation point for piece pc (controls excluded).
    void load(const Piece& pc, const VectorXd& w, std::vector<double>& v) const {
        v[0] = mesh_.node(pc.node);  // t
        v[1] = pc.tau;
        std::size_t slot = 2;
        for (std::size_t s = 0; s < np_; ++s)
            v[slot++] = w[x_var(pc.node, s)];
        slot += nc_;
        for (std::size_t q = 0; q < na_; ++q)
            v[slot++] = w[a_var(q)];
        for (std::size_t q = 0; q < nz_; ++q)
            v[slot++] = w[z_var(pc.node, q)];
    }

    void set_controls(std::vector<double>& v, const Atom& a, const VectorXd& w) const {
        for (std::size_t c = 0; c < nc_; ++c)
            v[2 + np_ + c] = a.u_var[c] >= 0 ? w[a.u_var[c]] : a.u_fixed[c];
    }

    long global(std::size_t local, const Piece& pc, const Atom& a) const {
        if (local < np_)
            return x_var(pc.node, local);
        if (local < np_ + nc_)
            return a.u_var[local - np_];
        if (local < np_ + nc_ + na_)
            return a_var(local - np_ - nc_);
        return z_var(pc.node, local - np_ - nc_ - na_);
    }

    // Calls sink(value, -2, 0) once with the piece value and, when
    // `derivatives`, sink(0, var, d) for each partial derivative.
    template <class Sink>
    void sample(const Piece& pc, const VectorXd& w, std::vector<double>& v, Sink&& sink, bool derivatives) const {
        const LocalFn& fn = fns_[pc.fn];
        load(pc, w, v);
        const auto& slots = atoms_[pc.interval];
        const std::size_t count = fn.uses_controls ? slots.size() : 1;
        double value = 0.0;
        for (std::size_t k = 0; k < count; ++k) {
            const Atom& a = slots[k];
            set_controls(v, a, w);
            const double gamma = (fn.uses_controls && a.gamma >= 0) ? w[a.gamma] : 1.0;
            const double f = fn.f(v);
            value += gamma * f;
            if (!derivatives)
                continue;
            if (fn.uses_controls && a.gamma >= 0)
                sink(0.0, a.gamma, f);
            for (const auto& [l, d] : fn.d1) {
                const long var = global(l, pc, a);
                if (var >= 0)
                    sink(0.0, var, gamma * d(v));
            }
        }
        sink(value, -2, 0.0);
    }

    void hessian(const Piece& pc, const VectorXd& w, std::vector<double>& v, double weight, MatrixXd& H) const {
        const LocalFn& fn = fns_[pc.fn];
        load(pc, w, v);
        const auto& slots = atoms_[pc.interval];
        const std::size_t count = fn.uses_controls ? slots.size() : 1;
        for (std::size_t k = 0; k < count; ++k) {
            const Atom& a = slots[k];
            set_controls(v, a, w);
            const bool weighted = fn.uses_controls && a.gamma >= 0;
            const double gamma = weighted ? w[a.gamma] : 1.0;
            for (const auto& [l1, l2, d] : fn.d2) {
                const long g1 = global(l1, pc, a);
                const long g2 = global(l2, pc, a);
                if (g1 < 0 || g2 < 0)
                    continue;
                const double value = weight * gamma * d(v);
                H(g1, g2) += value;
                if (g1 != g2)
                    H(g2, g1) += value;
            }
            if (weighted) {
                for (const auto& [l, d] : fn.d1) {
                    const long g = global(l, pc, a);
                    if (g < 0)
                        continue;
                    const double value = weight * d(v);
                    H(g, a.gamma) += value;
                    H(a.gamma, g) += value;
                }
            }
        }
    }

    const CanonicalProblem& p_;
    Mesh mesh_;
    Layout layout_;
    ControlMode mode_;
    std::size_t slots_;
    std::size_t np_ = 0, nc_ = 0, na_ = 0, nz_ = 0, nodes_ = 0, intervals_ = 0;
    std::size_t off_z_ = 0, off_a_ = 0;
    std::vector<std::pair<double, double>> bounds_;
    std::vector<std::vector<Atom>> atoms_;
    std::vector<LocalFn> fns_;
    std::map<std::string, std::size_t> fn_cache_;
    std::vector<Piece> pieces_;
    std::vector<Piece> objective_pieces_;
    std::vector<Linear> linear_;
    std::vector<Linear> objective_linear_;
    std::vector<double> row_const_;
    std::vector<double> row_weight_;
    std::size_t rows_ = 0;
    std::vector<RowBlock> blocks_;
    RowBlock maximin_;
    VectorXd lower_, upper_;
};


struct AugmentedState {
    VectorXd mu;
    double rho = 1.0;
};

// G(w) = -Phi + mu.c + rho/2 |c|^2, minimized over the box.
double merit(const Transcription& tr, const AugmentedState& s, const VectorXd& w) {
    VectorXd c;
    tr.constraints(w, c, nullptr);
    return -tr.objective(w, nullptr) + s.mu.dot(c) + 0.5 * s.rho * c.squaredNorm();
}

VectorXd project(const Transcription& tr, const VectorXd& w) {
    return w.cwiseMax(tr.lower()).cwiseMin(tr.upper());
}

void inner_solve(const Transcription& tr, const AugmentedState& s, const SolverConfig& cfg, VectorXd& w) {
    const auto n = static_cast<Eigen::Index>(tr.n());
    for (int it = 0; it < cfg.inner_iterations; ++it) {
        VectorXd c;
        MatrixXd J;
        tr.constraints(w, c, &J);
        VectorXd gphi = VectorXd::Zero(n);
        const double phi = tr.objective(w, &gphi);
        const VectorXd nu = s.mu + s.rho * c;
        const VectorXd g = -gphi + J.transpose() * nu;
        const double G = -phi + s.mu.dot(c) + 0.5 * s.rho * c.squaredNorm();

        const VectorXd step = project(tr, w - g) - w;
        const double pg = step.cwiseAbs().maxCoeff();
        if (pg <= cfg.inner_tol * std::max(1.0, gphi.cwiseAbs().maxCoeff()))
            return;

        MatrixXd H = MatrixXd::Zero(n, n);
        H.selfadjointView<Eigen::Lower>().rankUpdate(J.transpose(), s.rho);
        H.triangularView<Eigen::StrictlyUpper>() = H.transpose();
        tr.curvature(w, nu, -1.0, H);

        // Variables held at an active bound are excluded from the Newton system.
        const double eps = std::min(1e-8, pg);
        std::vector<Eigen::Index> free;
        for (Eigen::Index j = 0; j < n; ++j) {
            const bool at_lo = w[j] <= tr.lower()[j] + eps && g[j] > 0;
            const bool at_hi = w[j] >= tr.upper()[j] - eps && g[j] < 0;
            if (!at_lo && !at_hi)
                free.push_back(j);
        }
        const auto nf = static_cast<Eigen::Index>(free.size());
        MatrixXd Hf(nf, nf);
        VectorXd gf(nf);
        double scale = 1e-12;
        for (Eigen::Index a = 0; a < nf; ++a) {
            gf[a] = g[free[static_cast<std::size_t>(a)]];
            for (Eigen::Index b = 0; b < nf; ++b)
                Hf(a, b) = H(free[static_cast<std::size_t>(a)], free[static_cast<std::size_t>(b)]);
            scale = std::max(scale, std::abs(Hf(a, a)));
        }
        // Levenberg-style: raise the shift until the projected search succeeds.
        bool moved = false;
        for (double reg = 1e-10 * scale; !moved && reg < 1e8 * scale; reg *= 100.0) {
            VectorXd d = VectorXd::Zero(n);
            for (Eigen::Index j = 0; j < n; ++j)
                d[j] = -g[j] / (std::abs(H(j, j)) + reg);
            if (nf > 0) {
                Eigen::LLT<MatrixXd> llt(Hf + reg * MatrixXd::Identity(nf, nf));
                if (llt.info() != Eigen::Success)
                    continue;
                const VectorXd df = llt.solve(-gf);
                for (Eigen::Index a = 0; a < nf; ++a)
                    d[free[static_cast<std::size_t>(a)]] = df[a];
            }
            double alpha = 1.0;
            for (int ls = 0; ls < 30; ++ls, alpha *= 0.5) {
                const VectorXd trial = project(tr, w + alpha * d);
                const double decrease = g.dot(trial - w);
                if (!(decrease < 0.0))
                    continue;
                if (merit(tr, s, trial) <= G + 1e-4 * decrease) {
                    w = trial;
                    moved = true;
                    break;
                }
            }
        }
        if (!moved)
            return;  // stalled at round-off
    }
}

// Multipliers from row duals: rows are J(tau_k), lambda_k = -mu_k / w_k.
void recover_multipliers(const CanonicalProblem& p, const Transcription& tr, const VectorXd& mu, SolutionCandidate& c) {
    const std::size_t nodes = tr.mesh().nodes();
    const std::size_t intervals = nodes - 1;
    c.multipliers.assign(p.m(), ConstraintMultiplier{});
    for (std::size_t j = 0; j < p.m(); ++j) {
        const RowBlock& b = tr.blocks()[j];
        ConstraintMultiplier& cm = c.multipliers[j];
        const ConstraintKind kind = p.constraints[j].kind;
        if (b.count == 1) {
            cm.scalar = -mu[static_cast<Eigen::Index>(b.first)];
            continue;
        }
        std::vector<double> W(nodes);
        for (std::size_t k = 0; k < nodes; ++k)
            W[k] = -mu[static_cast<Eigen::Index>(b.first + k)];
        cm.lambda.resize(nodes);
        for (std::size_t k = 0; k < nodes; ++k)
            cm.lambda[k] = W[k] / tr.row_weight(b.first + k);
        if (kind != ConstraintKind::Ode && kind != ConstraintKind::Volterra)
            continue;
        // psi on interval i is minus the tail sum of W over nodes above i.
        std::vector<double> tail(nodes + 1, 0.0);
        for (std::size_t k = nodes; k-- > 0;)
            tail[k] = tail[k + 1] + W[k];
        std::vector<double> mid(intervals);
        for (std::size_t i = 0; i < intervals; ++i)
            mid[i] = -tail[i + 1];
        cm.psi.resize(nodes);
        for (std::size_t k = 1; k < intervals; ++k)
            cm.psi[k] = 0.5 * (mid[k - 1] + mid[k]);
        if (intervals == 1) {
            cm.psi[0] = cm.psi[1] = mid[0];
        } else {
            cm.psi[0] = 1.5 * mid[0] - 0.5 * mid[1];
            cm.psi[intervals] = 1.5 * mid[intervals - 1] - 0.5 * mid[intervals - 2];
        }
        if (kind == ConstraintKind::Ode)
            cm.lambda = nodal_derivative(cm.psi, tr.mesh().step());
    }
    if (p.criterion.is_maximin()) {
        const RowBlock& b = tr.maximin_block();
        c.criterion_lambda.resize(nodes);
        for (std::size_t k = 0; k < nodes; ++k)
            c.criterion_lambda[k] = -mu[static_cast<Eigen::Index>(b.first + k)] / tr.row_weight(b.first + k);
    }
}

SolutionCandidate run(const CanonicalProblem& p, const SolverConfig& cfg, ControlMode mode,
                      const std::vector<std::vector<double>>* fixed_u, std::size_t slots) {
    const Transcription tr(p, cfg, mode, fixed_u, slots);
    VectorXd w = tr.initial();
    AugmentedState s;
    s.mu = VectorXd::Zero(static_cast<Eigen::Index>(tr.rows()));
    s.rho = cfg.penalty0;
    double violation = 0.0;
    for (int round = 0; round < cfg.penalty_rounds; ++round) {
        inner_solve(tr, s, cfg, w);
        VectorXd c;
        tr.constraints(w, c, nullptr);
        s.mu += s.rho * c;
        violation = tr.rows() == 0 ? 0.0 : c.cwiseAbs().maxCoeff();
        if (round + 1 < cfg.penalty_rounds)
            s.rho *= cfg.penalty_growth;
    }
    if (violation > cfg.feasibility_tol)
        throw InfeasibleError("collocation residual " + std::to_string(violation) + " above tolerance", violation);
    SolutionCandidate cand = tr.extract(w);
    recover_multipliers(p, tr, s.mu, cand);
    cand.objective = eval_criterion(p, cand);
    return cand;
}

bool any_finite(const CanonicalProblem& p) {
    for (const ControlDecl& c : p.controls)
        if (c.is_finite())
            return true;
    return false;
}

}  // namespace

namespace {

SolverConfig mesh_of(const SolutionCandidate& c) {
    SolverConfig cfg;
    cfg.mesh = c.mesh.intervals();
    return cfg;
}

std::size_t constraint_rows(const Transcription& tr) {
    const auto& b = tr.blocks();
    return b.empty() ? 0 : b.back().first + b.back().count;
}

}  // namespace

std::vector<double> collocation_rows(const CanonicalProblem& p, const SolutionCandidate& cand) {
    const Transcription tr(p, mesh_of(cand), ControlMode::Classical, &cand.u, 1);
    VectorXd c;
    tr.constraints(tr.pack(cand), c, nullptr);
    return std::vector<double>(c.data(), c.data() + constraint_rows(tr));
}

double collocation_jacobian_error(const CanonicalProblem& p, const SolutionCandidate& cand, double h) {
    const Transcription tr(p, mesh_of(cand), ControlMode::Classical, &cand.u, 1);
    const VectorXd w = tr.pack(cand);
    VectorXd c, cp, cm;
    MatrixXd J;
    tr.constraints(w, c, &J);
    VectorXd g = VectorXd::Zero(w.size());
    tr.objective(w, &g);
    double err = 0.0;
    for (Eigen::Index j = 0; j < w.size(); ++j) {
        VectorXd wp = w, wm = w;
        wp[j] += h;
        wm[j] -= h;
        tr.constraints(wp, cp, nullptr);
        tr.constraints(wm, cm, nullptr);
        err = std::max(err, ((cp - cm) / (2 * h) - J.col(j)).cwiseAbs().maxCoeff());
        const double fd = (tr.objective(wp, nullptr) - tr.objective(wm, nullptr)) / (2 * h);
        err = std::max(err, std::abs(fd - g[j]));
    }
    return err;
}

SolutionCandidate solve_collocation(const CanonicalProblem& p, const LagrangeSystem& L, const SolverConfig& cfg,
                                    ControlMode mode) {
    const RelaxedSystem rs = extend(L);
    if (mode == ControlMode::Relaxed) {
        SolutionCandidate c = run(p, cfg, mode, nullptr, rs.slots);
        if (c.relaxed && c.relaxed->slots() > rs.m + 1)
            c = reduce_support(L, c);
        return c;
    }
    if (!any_finite(p))
        return run(p, cfg, mode, nullptr, 1);
    // Finite sets: round the relaxed solution to its heaviest atom, then
    // re-solve with the controls fixed.
    const SolutionCandidate relaxed = run(p, cfg, ControlMode::Relaxed, nullptr, rs.slots);
    return run(p, cfg, mode, &relaxed.u, 1);
}

}  // namespace canonmp
