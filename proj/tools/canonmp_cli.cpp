#include "canonmp/chatter.hpp"
#include "canonmp/io.hpp"
#include "canonmp/lagrange.hpp"
#include "canonmp/problem_file.hpp"
#include "canonmp/relax.hpp"
#include "canonmp/solve.hpp"
#include "canonmp/verify.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace canonmp;

namespace {

constexpr int kExitFail = 1;
constexpr int kExitInput = 2;
constexpr int kExitSolver = 3;

struct Options {
    std::string file;
    int mesh = 200;
    int ugrid = 201;
    double tol = 1e-7;
    bool relax = false;
    bool oracle = false;
    std::string out = ".";
    unsigned seed = 0;
    std::string candidate_dir;
    std::vector<int> i_list = {4, 8, 16, 32, 64};
};

SolverConfig config_of(const Options& o) {
    SolverConfig cfg;
    cfg.mesh = o.mesh;
    cfg.ugrid = o.ugrid;
    cfg.tol = o.tol;
    cfg.seed = o.seed;
    return cfg;
}

std::string criterion_text(const CanonicalProblem& p) {
    std::vector<std::string> parts;
    for (const CriterionPart& c : p.criterion.parts) {
        switch (c.kind) {
        case CriterionKind::Integral:
            parts.push_back("int(" + to_string(c.expr) + ", t, 0, T)");
            break;
        case CriterionKind::Terminal:
            parts.push_back("(" + to_string(c.expr) + ")|t=" + format_number(c.time));
            break;
        case CriterionKind::Maximin:
            parts.push_back("min_t (" + to_string(c.expr) + ")");
            break;
        }
    }
    std::string out;
    for (const std::string& s : parts)
        out += (out.empty() ? "" : " + ") + s;
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw std::runtime_error("cannot write " + path.string());
    f << text;
}

int cmd_inspect(const Options& o) {
    const CanonicalProblem p = load_problem(o.file);
    const LagrangeSystem L = assemble(p);
    std::ostream& out = std::cout;
    out << "horizon T = " << format_number(p.horizon) << "\n";
    out << "maximize I = " << criterion_text(p) << "\n";
    out << "canonical constraints J_j(tau) = int_0^T [f_j1 + f_j2*delta(t - t_j)] dt = 0:\n";
    for (std::size_t j = 0; j < p.constraints.size(); ++j) {
        const ConstraintSpec& c = p.constraints[j];
        const CanonicalForm cf = to_canonical(c, p);
        out << "  J" << j + 1 << " [" << kind_name(c.kind) << "]"
            << (cf.tau_family ? " for all tau in [0, T]" : "") << "\n";
        out << "    f" << j + 1 << "1 = " << to_string(cf.f1) << "\n";
        out << "    f" << j + 1 << "2 = " << to_string(cf.f2);
        if (cf.point_at == PointAt::Tau)
            out << "  at t = tau";
        else if (cf.point_at == PointAt::Fixed)
            out << "  at t = " << format_number(cf.point_time);
        out << "\n";
        if (c.kind == ConstraintKind::Inequality)
            out << "    slack " << c.slack << " >= 0\n";
    }
    out << "R = " << L.print_R() << "\n";
    out << "N = " << L.print_N() << "\n";
    out << "H = " << L.print_H() << "\n";
    out << "R (concrete) = " << L.print_R_concrete() << "\n";
    out << "classification:\n";
    for (const VariableClass& v : L.classification.vars) {
        out << "  " << v.name << ": " << group_name(v.group);
        for (double t : v.second_at)
            out << ", second at t = " << format_number(t);
        out << "\n";
    }
    out << "conditions:\n";
    for (const std::string& line : L.print_conditions())
        out << "  " << line << "\n";
    return 0;
}

// Indirect sweep where it applies, collocation otherwise.
SolutionCandidate primary_solve(const CanonicalProblem& p, const LagrangeSystem& L, const SolverConfig& cfg,
                                bool relax, std::string& method) {
    if (relax) {
        method = "collocation-relaxed";
        return solve_collocation(p, L, cfg, ControlMode::Relaxed);
    }
    if (indirect_supported(p, L)) {
        bool free_params = false;
        for (const ParamDecl& a : p.params)
            free_params = free_params || !a.automatic;
        method = free_params ? "indirect-params" : "indirect";
        try {
            return free_params ? optimize_params(p, L, cfg) : solve_indirect(p, L, cfg);
        } catch (const DivergenceError& e) {
            std::cerr << "indirect sweep diverged (residual " << format_number(e.residual())
                      << "), switching to collocation\n";
        }
    }
    method = "collocation";
    return solve_collocation(p, L, cfg, ControlMode::Classical);
}

int cmd_solve(const Options& o) {
    const CanonicalProblem p = load_problem(o.file);
    const LagrangeSystem L = assemble(p);
    const SolverConfig cfg = config_of(o);
    fs::create_directories(o.out);
    const fs::path dir(o.out);

    std::string method;
    SolutionCandidate cand;
    try {
        cand = primary_solve(p, L, cfg, o.relax, method);
    } catch (const DivergenceError& e) {
        nlohmann::ordered_json dump = {{"error", "divergence"}, {"message", e.what()}, {"residual", e.residual()}};
        write_text(dir / "failure.json", dump.dump(2) + "\n");
        std::cerr << "solver diverged: " << e.what() << " (residual " << format_number(e.residual()) << ")\n";
        return kExitSolver;
    } catch (const InfeasibleError& e) {
        nlohmann::ordered_json dump = {{"error", "infeasible"}, {"message", e.what()}, {"residual", e.residual()}};
        write_text(dir / "failure.json", dump.dump(2) + "\n");
        std::cerr << "solver stalled infeasible: " << e.what() << " (residual " << format_number(e.residual())
                  << ")\n";
        return kExitSolver;
    }

    {
        std::ofstream f(dir / "candidate.csv", std::ios::binary);
        write_candidate(f, p, cand, cfg);
    }
    if (cand.relaxed) {
        std::ofstream f(dir / "relaxed.csv", std::ios::binary);
        write_relaxed(f, p, cand);
    }
    const VerificationReport rep = report(L, cand, cfg);
    write_text(dir / "report.json", rep.to_json() + "\n");
    write_text(dir / "report.txt", rep.to_text());

    std::cout << "method: " << method << "\n";
    std::cout << "I = " << format_number(cand.objective) << "\n";
    if (cand.relaxed)
        std::cout << "max support = " << cand.relaxed->max_support() << " (bound m+1 = " << p.m() + 1 << ")\n";
    if (o.oracle) {
        try {
            SolutionCandidate other;
            std::string other_method;
            if (method.rfind("indirect", 0) == 0 || o.relax) {
                other_method = "collocation";
                other = solve_collocation(p, L, cfg, ControlMode::Classical);
            } else if (indirect_supported(p, L)) {
                other_method = "indirect";
                other = solve_indirect(p, L, cfg);
            }
            if (other_method.empty())
                std::cout << "oracle: no independent route for this problem\n";
            else
                std::cout << "oracle (" << other_method << "): I = " << format_number(other.objective)
                          << ", |dI| = " << format_number(std::abs(other.objective - cand.objective)) << "\n";
        } catch (const std::exception& e) {
            std::cout << "oracle failed: " << e.what() << "\n";
        }
    }
    std::cout << rep.to_text();
    return rep.verdict ? 0 : kExitFail;
}

// Candidate plus its relaxed control when the directory has one.
SolutionCandidate load_candidate(const CanonicalProblem& p, const fs::path& dir) {
    const fs::path cpath = dir / "candidate.csv";
    std::ifstream f(cpath, std::ios::binary);
    if (!f)
        throw std::invalid_argument("missing candidate file " + cpath.string());
    SolutionCandidate c = read_candidate(f, p);
    const fs::path rpath = dir / "relaxed.csv";
    if (fs::exists(rpath)) {
        std::ifstream r(rpath, std::ios::binary);
        c.relaxed = read_relaxed(r, p, c.mesh);
    }
    return c;
}

int cmd_verify(const Options& o) {
    const CanonicalProblem p = load_problem(o.file);
    const LagrangeSystem L = assemble(p);
    const SolutionCandidate c = load_candidate(p, o.candidate_dir);
    const VerificationReport rep = report(L, c, config_of(o));
    if (!o.out.empty() && o.out != ".") {
        fs::create_directories(o.out);
        write_text(fs::path(o.out) / "report.json", rep.to_json() + "\n");
        write_text(fs::path(o.out) / "report.txt", rep.to_text());
    }
    std::cout << rep.to_text();
    return rep.verdict ? 0 : kExitFail;
}

int cmd_chatter(const Options& o) {
    const CanonicalProblem p = load_problem(o.file);
    const SolutionCandidate c = load_candidate(p, o.candidate_dir);
    const std::vector<StudyRow> rows = convergence_study(p, c, o.i_list);
    fs::create_directories(o.out);
    {
        std::ofstream f(fs::path(o.out) / "study.csv", std::ios::binary);
        write_study(f, rows);
    }
    write_study(std::cout, rows);
    std::vector<double> xs, gap, J, X;
    for (const StudyRow& r : rows) {
        xs.push_back(r.i);
        gap.push_back(r.gapI);
        J.push_back(r.maxJ);
        X.push_back(r.maxXdev);
    }
    std::cout << "slope gapI = " << format_number(fitted_slope(xs, gap)) << "\n";
    std::cout << "slope maxJ = " << format_number(fitted_slope(xs, J)) << "\n";
    std::cout << "slope maxXdev = " << format_number(fitted_slope(xs, X)) << "\n";
    return 0;
}

void add_solver_flags(CLI::App* cmd, Options& o) {
    cmd->add_option("--mesh", o.mesh, "mesh intervals")->check(CLI::PositiveNumber);
    cmd->add_option("--ugrid", o.ugrid, "control grid points per box dimension")->check(CLI::Range(2, 100000));
    cmd->add_option("--tol", o.tol, "sweep tolerance")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", o.seed, "random seed");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"canonmp: optimality conditions and solvers for canonical optimal control problems"};
    app.require_subcommand(1);
    Options o;

    auto* inspect = app.add_subcommand("inspect", "print the canonical form, R/N/H, classification and conditions");
    inspect->add_option("file", o.file, "problem file")->required();

    auto* solve = app.add_subcommand("solve", "solve, write the candidate and verify it");
    solve->add_option("file", o.file, "problem file")->required();
    add_solver_flags(solve, o);
    solve->add_flag("--relax", o.relax, "solve in relaxed controls");
    solve->add_flag("--oracle", o.oracle, "cross-check with an independent solver");
    solve->add_option("--out", o.out, "output directory");

    auto* verify = app.add_subcommand("verify", "check a stored candidate against the conditions");
    verify->add_option("file", o.file, "problem file")->required();
    verify->add_option("--candidate", o.candidate_dir, "directory holding candidate.csv")->required();
    add_solver_flags(verify, o);
    verify->add_option("--out", o.out, "directory for report.json and report.txt");

    auto* chatter = app.add_subcommand("chatter", "approximate a relaxed candidate by chattering controls");
    chatter->add_option("file", o.file, "problem file")->required();
    chatter->add_option("--relaxed", o.candidate_dir, "directory holding candidate.csv and relaxed.csv")->required();
    chatter->add_option("--i", o.i_list, "partition counts")->delimiter(',')->check(CLI::PositiveNumber);
    chatter->add_option("--out", o.out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitInput;
    }

    try {
        if (*inspect)
            return cmd_inspect(o);
        if (*solve)
            return cmd_solve(o);
        if (*verify)
            return cmd_verify(o);
        return cmd_chatter(o);
    } catch (const ParseError& e) {
        std::cerr << o.file << ": " << e.what() << "\n";
        return kExitInput;
    } catch (const ValidationError& e) {
        std::cerr << o.file << ": " << e.what() << "\n";
        return kExitInput;
    } catch (const UnsupportedError& e) {
        std::cerr << "unsupported: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::invalid_argument& e) {
        std::cerr << e.what() << "\n";
        return kExitInput;
    } catch (const DivergenceError& e) {
        std::cerr << "diverged: " << e.what() << " (residual " << format_number(e.residual()) << ")\n";
        return kExitSolver;
    } catch (const InfeasibleError& e) {
        std::cerr << "infeasible: " << e.what() << " (residual " << format_number(e.residual()) << ")\n";
        return kExitSolver;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    }
}
