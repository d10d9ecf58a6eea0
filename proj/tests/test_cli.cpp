#include "doctest.h"

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::path(CANONMP_WORK_DIR);
const fs::path kProblems = fs::path(CANONMP_PROBLEMS_DIR);

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

Run cli(const std::string& args) {
    fs::create_directories(kWork);
    const fs::path out = kWork / "stdout.txt";
    const fs::path err = kWork / "stderr.txt";
    const std::string cmd =
        std::string("\"") + CANONMP_CLI + "\" " + args + " >\"" + out.string() + "\" 2>\"" + err.string() + "\"";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

std::string problem(const std::string& name) { return (kProblems / (name + ".prob")).string(); }

double value_after(const std::string& text, const std::string& key) {
    const auto pos = text.find(key);
    REQUIRE(pos != std::string::npos);
    return std::stod(text.substr(pos + key.size()));
}

std::vector<std::vector<double>> csv_rows(const fs::path& p) {
    std::ifstream f(p);
    std::string line;
    std::getline(f, line);
    std::vector<std::vector<double>> rows;
    while (std::getline(f, line)) {
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ','))
            row.push_back(std::stod(cell));
        rows.push_back(row);
    }
    return rows;
}

}  // namespace

TEST_CASE("every corpus problem goes through inspect, solve and verify") {
    for (const auto& entry : fs::directory_iterator(kProblems)) {
        if (entry.path().extension() != ".prob")
            continue;
        const std::string name = entry.path().stem().string();
        CAPTURE(name);
        const std::string flags = name == "sliding" ? " --relax" : "";
        CHECK(cli("inspect " + entry.path().string()).code == 0);
        const fs::path dir = kWork / name;
        const Run solved = cli("solve " + entry.path().string() + flags + " --out " + dir.string());
        CHECK(solved.code == 0);
        CHECK(fs::exists(dir / "candidate.csv"));
        CHECK(fs::exists(dir / "report.json"));
        CHECK(fs::exists(dir / "report.txt"));
        const Run verified = cli("verify " + entry.path().string() + " --candidate " + dir.string());
        CHECK(verified.code == 0);
        CHECK(verified.out.find("verdict: pass") != std::string::npos);
    }
}

TEST_CASE("solve output is byte-identical across runs") {
    const fs::path a = kWork / "det_a";
    const fs::path b = kWork / "det_b";
    REQUIRE(cli("solve " + problem("slack") + " --seed 7 --out " + a.string()).code == 0);
    REQUIRE(cli("solve " + problem("slack") + " --seed 7 --out " + b.string()).code == 0);
    for (const char* file : {"candidate.csv", "report.json", "report.txt"})
        CHECK(slurp(a / file) == slurp(b / file));
}

TEST_CASE("LQ value through the CLI with the collocation cross-check") {
    const Run r = cli("solve " + problem("lq") + " --oracle --out " + (kWork / "lq_oracle").string());
    REQUIRE(r.code == 0);
    CHECK(std::abs(value_after(r.out, "I = ") + std::tanh(1.0)) <= 1e-3);
    CHECK(value_after(r.out, "|dI| = ") <= 1e-3);
    CHECK(r.out.find("verdict: pass") != std::string::npos);
}

TEST_CASE("inspect prints the Lagrangian and the conditions") {
    const Run p = cli("inspect " + problem("pontryagin"));
    REQUIRE(p.code == 0);
    CHECK(p.out.find("R = l0*f0 + psi1*f1 + dpsi1*x1 + psi2*f2 + dpsi2*x2 + l0*F0*delta(t-T)\n") != std::string::npos);
    CHECK(p.out.find("  u: first\n") != std::string::npos);

    const Run b = cli("inspect " + problem("butkovskii"));
    REQUIRE(b.code == 0);
    CHECK(b.out.find("  lam1(t) = d/dx [l0*f0 + int(lam1(tau)*f1, tau, 0, T)]\n") != std::string::npos);
    CHECK(b.out.find("  u* = argmax_{u in V} [l0*f0 + int(lam1(tau)*f1, tau, 0, T)]\n") != std::string::npos);
}

TEST_CASE("input errors exit with 2") {
    const fs::path bad = kWork / "bad.prob";
    fs::create_directories(kWork);
    std::ofstream(bad) << "horizon 1\nstate x init 0\ncriterion integral \"x +* 2\"\n";
    const Run r = cli("inspect " + bad.string());
    CHECK(r.code == 2);
    CHECK(r.err.find("line 3") != std::string::npos);

    CHECK(cli("inspect " + (kWork / "no_such.prob").string()).code == 2);
    CHECK(cli("chatter " + problem("sliding") + " --relaxed " + (kWork / "no_such_dir").string()).code == 2);
    CHECK(cli("solve").code == 2);
}

TEST_CASE("an unreachable constraint exits with 3 and dumps the residual") {
    const fs::path bad = kWork / "infeasible.prob";
    fs::create_directories(kWork);
    std::ofstream(bad) << "horizon 1\nstate x\ncontrol u box -1 1\ncriterion integral \"-u^2\"\n"
                          "constraint fredholm x \"u*t*tau\"\nconstraint integral \"u^2 + 1\"\n";
    const fs::path dir = kWork / "infeasible";
    const Run r = cli("solve " + bad.string() + " --mesh 20 --out " + dir.string());
    CHECK(r.code == 3);
    const std::string dump = slurp(dir / "failure.json");
    CHECK(dump.find("\"residual\"") != std::string::npos);
}

TEST_CASE("chatter study on the sliding example") {
    const fs::path dir = kWork / "sliding_chatter";
    REQUIRE(cli("solve " + problem("sliding") + " --relax --out " + dir.string()).code == 0);
    const Run r = cli("chatter " + problem("sliding") + " --relaxed " + dir.string() + " --i 4,8,16,32,64 --out " +
                      dir.string());
    REQUIRE(r.code == 0);
    CHECK(r.out.find("slope gapI = ") != std::string::npos);
    const auto rows = csv_rows(dir / "study.csv");
    REQUIRE(rows.size() == 5);
    for (const auto& row : rows) {
        const double i = row[0];
        CHECK(std::abs(row[3] - 1.0 / (12 * i * i)) <= 0.05 / (12 * i * i));
    }
}
