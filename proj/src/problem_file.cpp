#include "canonmp/problem_file.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <vector>

namespace canonmp {

namespace {

struct Token {
    std::string text;
    int column = 1;  // 1-based column of the first character (inside quotes for strings)
    bool quoted = false;
};

std::vector<Token> tokenize(const std::string& line, int line_no) {
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < line.size()) {
        char c = line[i];
        if (c == '#')
            break;
        if (c == ' ' || c == '\t' || c == '\r') {
            ++i;
            continue;
        }
        if (c == '"') {
            std::size_t end = line.find('"', i + 1);
            if (end == std::string::npos)
                throw ParseError("syntax error: unterminated string", line_no, static_cast<int>(i) + 1);
            out.push_back(Token{line.substr(i + 1, end - i - 1), static_cast<int>(i) + 2, true});
            i = end + 1;
            continue;
        }
        std::size_t start = i;
        while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '"' && line[i] != '#' &&
               line[i] != '\r')
            ++i;
        out.push_back(Token{line.substr(start, i - start), static_cast<int>(start) + 1, false});
    }
    return out;
}

class LineReader {
public:
    LineReader(std::vector<Token> tokens, int line) : tokens_(std::move(tokens)), line_(line) {}

    bool done() const { return pos_ >= tokens_.size(); }

    [[noreturn]] void fail(const std::string& msg) const {
        int col = pos_ < tokens_.size() ? tokens_[pos_].column : end_column();
        throw ParseError("syntax error: " + msg, line_, col);
    }

    const Token& next(const char* what) {
        if (done())
            fail(std::string("expected ") + what);
        return tokens_[pos_++];
    }

    std::string word(const char* what) {
        const Token& t = next(what);
        if (t.quoted) {
            --pos_;
            fail(std::string("expected ") + what);
        }
        return t.text;
    }

    bool accept(std::string_view keyword) {
        if (!done() && !tokens_[pos_].quoted && tokens_[pos_].text == keyword) {
            ++pos_;
            return true;
        }
        return false;
    }

    void keyword(std::string_view kw) {
        if (!accept(kw))
            fail("expected '" + std::string(kw) + "'");
    }

    double number(const char* what, std::optional<double> horizon = std::nullopt) {
        const Token& t = next(what);
        if (!t.quoted && t.text == "T" && horizon)
            return *horizon;
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
        if (t.quoted || ec != std::errc() || ptr != t.text.data() + t.text.size()) {
            --pos_;
            fail(std::string("expected ") + what);
        }
        return v;
    }

    Expr expression() {
        const Token& t = next("quoted expression");
        if (!t.quoted) {
            --pos_;
            fail("expected quoted expression");
        }
        try {
            return parse(t.text);
        } catch (const ParseError& e) {
            std::string msg = e.what();
            msg = msg.substr(0, msg.find(" at line"));
            throw ParseError(msg, line_, t.column + e.column() - 1);
        }
    }

    void finish() {
        if (!done())
            fail("unexpected '" + tokens_[pos_].text + "'");
    }

    int line() const { return line_; }

private:
    int end_column() const {
        if (tokens_.empty())
            return 1;
        const Token& last = tokens_.back();
        return last.column + static_cast<int>(last.text.size()) + (last.quoted ? 1 : 0);
    }

    std::vector<Token> tokens_;
    std::size_t pos_ = 0;
    int line_;
};

}  // namespace

ProblemSpec parse_problem_text(std::string_view text) {
    ProblemSpec spec;
    std::istringstream in{std::string(text)};
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto tokens = tokenize(line, line_no);
        if (tokens.empty())
            continue;
        LineReader r(std::move(tokens), line_no);
        std::string head = r.word("declaration");
        if (head == "horizon") {
            spec.horizon = r.number("horizon value");
            spec.horizon_line = line_no;
        } else if (head == "state") {
            StateDecl s{r.word("state name"), std::nullopt};
            if (r.accept("init"))
                s.init = r.number("initial value");
            spec.states.push_back(std::move(s));
        } else if (head == "control") {
            ControlDecl c;
            c.name = r.word("control name");
            if (r.accept("box")) {
                double lo = r.number("lower bound");
                double hi = r.number("upper bound");
                c.box = Box{lo, hi};
            } else if (r.accept("set")) {
                while (!r.done())
                    c.points.push_back(r.number("set value"));
                if (c.points.empty())
                    r.fail("expected set value");
            } else {
                r.fail("expected 'box' or 'set'");
            }
            spec.controls.push_back(std::move(c));
        } else if (head == "param") {
            ParamDecl a;
            a.name = r.word("parameter name");
            if (r.accept("box")) {
                double lo = r.number("lower bound");
                double hi = r.number("upper bound");
                a.box = Box{lo, hi};
            }
            spec.params.push_back(std::move(a));
        } else if (head == "criterion") {
            CriterionPart part;
            if (r.accept("integral")) {
                part.kind = CriterionKind::Integral;
                part.expr = r.expression();
            } else if (r.accept("terminal")) {
                part.kind = CriterionKind::Terminal;
                part.expr = r.expression();
                r.keyword("at");
                part.time = r.number("event time", spec.horizon);
            } else if (r.accept("maximin")) {
                part.kind = CriterionKind::Maximin;
                part.expr = r.expression();
            } else {
                r.fail("expected 'integral', 'terminal' or 'maximin'");
            }
            spec.criterion.push_back(std::move(part));
            spec.criterion_lines.push_back(line_no);
        } else if (head == "constraint") {
            ConstraintSpec c;
            c.line = line_no;
            std::string kind = r.word("constraint kind");
            if (kind == "ode" || kind == "volterra" || kind == "fredholm") {
                c.kind = kind == "ode" ? ConstraintKind::Ode
                                       : (kind == "volterra" ? ConstraintKind::Volterra : ConstraintKind::Fredholm);
                c.state = r.word("state name");
                c.expr = r.expression();
            } else if (kind == "integral" || kind == "pointwise" || kind == "ineq") {
                c.kind = kind == "integral" ? ConstraintKind::IntegralEq
                                            : (kind == "pointwise" ? ConstraintKind::PointwiseEq
                                                                   : ConstraintKind::Inequality);
                c.expr = r.expression();
            } else if (kind == "terminal") {
                c.kind = ConstraintKind::TerminalEq;
                c.expr = r.expression();
                r.keyword("at");
                c.time = r.number("event time", spec.horizon);
            } else if (kind == "convolution") {
                c.kind = ConstraintKind::Convolution;
                c.state = r.word("state name");
                c.control = r.word("control name");
                r.keyword("kernel");
                c.expr = r.expression();
            } else {
                throw ParseError("syntax error: unknown constraint kind '" + kind + "'", line_no,
                                 static_cast<int>(line.find(kind)) + 1);
            }
            spec.constraints.push_back(std::move(c));
        } else {
            throw ParseError("syntax error: unknown declaration '" + head + "'", line_no,
                             static_cast<int>(line.find(head)) + 1);
        }
        r.finish();
    }
    return spec;
}

ProblemSpec read_problem_file(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open problem file '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_problem_text(buf.str());
}

CanonicalProblem load_problem(const std::string& path) { return build_problem(read_problem_file(path)); }

}  // namespace canonmp
