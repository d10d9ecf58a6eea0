#include "canonmp/io.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace canonmp {

namespace {

using nlohmann::ordered_json;

bool has_nodal_lambda(ConstraintKind k) {
    return k != ConstraintKind::IntegralEq && k != ConstraintKind::TerminalEq;
}

bool has_psi(ConstraintKind k) { return k == ConstraintKind::Ode || k == ConstraintKind::Volterra; }

ordered_json config_json(const SolverConfig& cfg) {
    ordered_json j;
    j["mesh"] = cfg.mesh;
    j["ugrid"] = cfg.ugrid;
    j["tol"] = cfg.tol;
    j["damping"] = cfg.damping;
    j["max_sweeps"] = cfg.max_sweeps;
    j["penalty_rounds"] = cfg.penalty_rounds;
    j["inner_tol"] = cfg.inner_tol;
    j["seed"] = cfg.seed;
    return j;
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ','))
        out.push_back(cell);
    return out;
}

double number(const std::string& s) {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size())
        throw std::runtime_error("malformed number '" + s + "'");
    return v;
}

// JSON numbers at 12 significant digits.
ordered_json rounded(double v) { return std::isfinite(v) ? ordered_json::parse(format_number(v)) : ordered_json(); }

}  // namespace

std::string format_number(double v) {
    if (std::isnan(v))
        return "nan";
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

void write_candidate(std::ostream& out, const CanonicalProblem& p, const SolutionCandidate& c,
                     const SolverConfig& cfg) {
    ordered_json h;
    h["I"] = rounded(c.objective);
    h["horizon"] = rounded(p.horizon);
    h["intervals"] = c.mesh.intervals();
    h["l0"] = rounded(c.l0);
    ordered_json a = ordered_json::object();
    for (std::size_t q = 0; q < p.params.size(); ++q)
        a[p.params[q].name] = rounded(c.a[q]);
    h["a"] = a;
    ordered_json scalars = ordered_json::object();
    for (std::size_t j = 0; j < p.m(); ++j)
        if (!has_nodal_lambda(p.constraints[j].kind))
            scalars[std::to_string(j + 1)] = rounded(c.multipliers[j].scalar);
    h["scalar_multipliers"] = scalars;
    h["relaxed"] = c.relaxed.has_value();
    h["config"] = config_json(cfg);
    out << "# " << h.dump() << "\n";

    std::vector<std::string> cols{"t"};
    for (const auto& s : p.states)
        cols.push_back(s.name);
    for (const auto& u : p.controls)
        cols.push_back(u.name);
    for (std::size_t j = 0; j < p.m(); ++j)
        if (has_psi(p.constraints[j].kind))
            cols.push_back("psi" + std::to_string(j + 1));
    for (std::size_t j = 0; j < p.m(); ++j)
        if (has_nodal_lambda(p.constraints[j].kind))
            cols.push_back("lambda" + std::to_string(j + 1));
    for (const auto& z : p.slacks)
        cols.push_back(z);
    if (p.criterion.is_maximin())
        cols.push_back("lam_a");
    for (std::size_t k = 0; k < cols.size(); ++k)
        out << (k ? "," : "") << cols[k];
    out << "\n";

    auto at = [](const std::vector<double>& v, std::size_t k) { return k < v.size() ? v[k] : 0.0; };
    const std::size_t n_int = static_cast<std::size_t>(c.mesh.intervals());
    for (std::size_t k = 0; k < c.mesh.nodes(); ++k) {
        std::vector<double> row{c.mesh.node(k)};
        row.insert(row.end(), c.x[k].begin(), c.x[k].end());
        const auto& u = c.u[std::min(k, n_int - 1)];
        row.insert(row.end(), u.begin(), u.end());
        for (std::size_t j = 0; j < p.m(); ++j)
            if (has_psi(p.constraints[j].kind))
                row.push_back(at(c.multipliers[j].psi, k));
        for (std::size_t j = 0; j < p.m(); ++j)
            if (has_nodal_lambda(p.constraints[j].kind))
                row.push_back(at(c.multipliers[j].lambda, k));
        row.insert(row.end(), c.z[k].begin(), c.z[k].end());
        if (p.criterion.is_maximin())
            row.push_back(at(c.criterion_lambda, k));
        for (std::size_t q = 0; q < row.size(); ++q)
            out << (q ? "," : "") << format_number(row[q]);
        out << "\n";
    }
}

SolutionCandidate read_candidate(std::istream& in, const CanonicalProblem& p) {
    std::string line;
    if (!std::getline(in, line) || line.rfind("# ", 0) != 0)
        throw std::runtime_error("candidate file lacks its JSON header line");
    const ordered_json h = ordered_json::parse(line.substr(2));
    const int n = h.at("intervals").get<int>();
    SolutionCandidate c = SolutionCandidate::zeros(p, Mesh(h.at("horizon").get<double>(), n));
    if (std::abs(c.mesh.horizon() - p.horizon) > 1e-9 * (1 + p.horizon))
        throw std::runtime_error("candidate horizon does not match the problem");
    c.objective = h.at("I").get<double>();
    c.l0 = h.at("l0").get<double>();
    for (std::size_t q = 0; q < p.params.size(); ++q)
        c.a[q] = h.at("a").at(p.params[q].name).get<double>();
    for (std::size_t j = 0; j < p.m(); ++j) {
        const std::string key = std::to_string(j + 1);
        if (h.at("scalar_multipliers").contains(key))
            c.multipliers[j].scalar = h.at("scalar_multipliers").at(key).get<double>();
    }

    if (!std::getline(in, line))
        throw std::runtime_error("candidate file lacks its column line");
    const std::vector<std::string> cols = split(line);
    auto column = [&](const std::string& name) -> long {
        for (std::size_t k = 0; k < cols.size(); ++k)
            if (cols[k] == name)
                return static_cast<long>(k);
        return -1;
    };
    auto require = [&](const std::string& name) {
        const long k = column(name);
        if (k < 0)
            throw std::runtime_error("candidate file has no column '" + name + "'");
        return static_cast<std::size_t>(k);
    };

    for (std::size_t j = 0; j < p.m(); ++j) {
        if (has_psi(p.constraints[j].kind))
            c.multipliers[j].psi.assign(c.mesh.nodes(), 0.0);
        if (has_nodal_lambda(p.constraints[j].kind))
            c.multipliers[j].lambda.assign(c.mesh.nodes(), 0.0);
    }
    if (p.criterion.is_maximin())
        c.criterion_lambda.assign(c.mesh.nodes(), 0.0);

    const std::size_t n_int = static_cast<std::size_t>(n);
    for (std::size_t k = 0; k < c.mesh.nodes(); ++k) {
        if (!std::getline(in, line))
            throw std::runtime_error("candidate file ends after " + std::to_string(k) + " rows");
        const std::vector<std::string> cells = split(line);
        if (cells.size() != cols.size())
            throw std::runtime_error("candidate row " + std::to_string(k + 1) + " has the wrong width");
        auto get = [&](const std::string& name) { return number(cells[require(name)]); };
        for (std::size_t s = 0; s < p.states.size(); ++s)
            c.x[k][s] = get(p.states[s].name);
        if (k < n_int)
            for (std::size_t u = 0; u < p.controls.size(); ++u)
                c.u[k][u] = get(p.controls[u].name);
        for (std::size_t j = 0; j < p.m(); ++j) {
            if (has_psi(p.constraints[j].kind))
                c.multipliers[j].psi[k] = get("psi" + std::to_string(j + 1));
            if (has_nodal_lambda(p.constraints[j].kind))
                c.multipliers[j].lambda[k] = get("lambda" + std::to_string(j + 1));
        }
        for (std::size_t q = 0; q < p.slacks.size(); ++q)
            c.z[k][q] = get(p.slacks[q]);
        if (p.criterion.is_maximin())
            c.criterion_lambda[k] = get("lam_a");
    }
    return c;
}

void write_relaxed(std::ostream& out, const CanonicalProblem& p, const SolutionCandidate& c) {
    if (!c.relaxed)
        throw std::invalid_argument("candidate has no relaxed control");
    out << "t,nu,gamma";
    for (const auto& u : p.controls)
        out << "," << u.name;
    out << "\n";
    const RelaxedControl& rc = *c.relaxed;
    for (std::size_t i = 0; i < rc.intervals(); ++i)
        for (std::size_t k = 0; k < rc.gamma[i].size(); ++k) {
            out << format_number(c.mesh.node(i)) << "," << k << "," << format_number(rc.gamma[i][k]);
            for (double v : rc.values[i][k])
                out << "," << format_number(v);
            out << "\n";
        }
}

RelaxedControl read_relaxed(std::istream& in, const CanonicalProblem& p, const Mesh& mesh) {
    std::string line;
    if (!std::getline(in, line) || line.rfind("t,nu,gamma", 0) != 0)
        throw std::runtime_error("relaxed file lacks the t,nu,gamma header");
    RelaxedControl rc;
    rc.gamma.resize(static_cast<std::size_t>(mesh.intervals()));
    rc.values.resize(rc.gamma.size());
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        const std::vector<std::string> cells = split(line);
        if (cells.size() != 3 + p.controls.size())
            throw std::runtime_error("relaxed row has the wrong width");
        const std::size_t i = mesh.interval_of(number(cells[0]) + 0.5 * mesh.step());
        std::vector<double> u;
        for (std::size_t q = 3; q < cells.size(); ++q)
            u.push_back(number(cells[q]));
        rc.gamma[i].push_back(number(cells[2]));
        rc.values[i].push_back(std::move(u));
    }
    for (const auto& g : rc.gamma)
        if (g.empty())
            throw std::runtime_error("relaxed file misses an interval");
    return rc;
}

void write_study(std::ostream& out, const std::vector<StudyRow>& rows) {
    out << "i,I_i,Ibar,gapI,maxJ,maxXdev\n";
    for (const StudyRow& r : rows)
        out << r.i << "," << format_number(r.I) << "," << format_number(r.Ibar) << "," << format_number(r.gapI)
            << "," << format_number(r.maxJ) << "," << format_number(r.maxXdev) << "\n";
}

}  // namespace canonmp
