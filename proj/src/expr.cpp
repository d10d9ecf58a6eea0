#include "canonmp/expr.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <limits>

namespace canonmp {

ParseError::ParseError(const std::string& msg, int line, int column)
    : std::runtime_error(msg + " at line " + std::to_string(line) + ", column " + std::to_string(column)),
      line_(line),
      column_(column) {}

namespace {

struct FuncInfo {
    Func func;
    std::string_view name;
    std::size_t arity;
    bool smooth;
};

constexpr std::array<FuncInfo, 10> kFuncs{{
    {Func::Sin, "sin", 1, true},
    {Func::Cos, "cos", 1, true},
    {Func::Exp, "exp", 1, true},
    {Func::Log, "log", 1, true},
    {Func::Tanh, "tanh", 1, true},
    {Func::Abs, "abs", 1, false},
    {Func::Min, "min", 2, false},
    {Func::Max, "max", 2, false},
    {Func::Pow, "pow", 2, true},
    {Func::Step, "step", 1, false},
}};

const FuncInfo& info(Func f) {
    return kFuncs[static_cast<std::size_t>(f)];
}

std::shared_ptr<const ExprNode> make_node(ExprNode n) {
    return std::make_shared<const ExprNode>(std::move(n));
}

}  // namespace

std::string_view func_name(Func f) { return info(f).name; }
std::size_t func_arity(Func f) { return info(f).arity; }
bool func_is_smooth(Func f) { return info(f).smooth; }

// ---------------------------------------------------------------------------
// Construction

Expr::Expr() : Expr(0.0) {}

Expr::Expr(double value) : node_(make_node(ExprNode{Op::Const, value, {}, Func::Sin, {}})) {}

Expr Expr::constant(double value) { return Expr(value); }

Expr Expr::variable(std::string name) {
    return Expr(make_node(ExprNode{Op::Var, 0.0, std::move(name), Func::Sin, {}}));
}

Expr Expr::call(Func f, std::vector<Expr> args) {
    if (args.size() != func_arity(f))
        throw std::invalid_argument("wrong argument count for " + std::string(func_name(f)));
    return Expr(make_node(ExprNode{Op::Call, 0.0, {}, f, std::move(args)}));
}

Expr Expr::raw_unary(Op op, Expr a) {
    return Expr(make_node(ExprNode{op, 0.0, {}, Func::Sin, {std::move(a)}}));
}

Expr Expr::raw_binary(Op op, Expr a, Expr b) {
    return Expr(make_node(ExprNode{op, 0.0, {}, Func::Sin, {std::move(a), std::move(b)}}));
}

Op Expr::op() const { return node_->op; }
double Expr::value() const { return node_->value; }
const std::string& Expr::name() const { return node_->name; }
Func Expr::func() const { return node_->func; }
const std::vector<Expr>& Expr::args() const { return node_->args; }

bool Expr::operator==(const Expr& other) const {
    if (node_ == other.node_)
        return true;
    if (op() != other.op())
        return false;
    switch (op()) {
    case Op::Const:
        return value() == other.value();
    case Op::Var:
        return name() == other.name();
    case Op::Call:
        if (func() != other.func())
            return false;
        break;
    default:
        break;
    }
    return args() == other.args();
}

Expr operator+(const Expr& a, const Expr& b) {
    if (a.is_constant() && b.is_constant())
        return Expr(a.value() + b.value());
    if (a.is_constant(0.0))
        return b;
    if (b.is_constant(0.0))
        return a;
    if (b.is_constant() && b.value() < 0.0)
        return Expr::raw_binary(Op::Sub, a, Expr(-b.value()));
    return Expr::raw_binary(Op::Add, a, b);
}

Expr operator-(const Expr& a, const Expr& b) {
    if (a.is_constant() && b.is_constant())
        return Expr(a.value() - b.value());
    if (b.is_constant(0.0))
        return a;
    if (a.is_constant(0.0))
        return -b;
    return Expr::raw_binary(Op::Sub, a, b);
}

Expr operator*(const Expr& a, const Expr& b) {
    if (a.is_constant() && b.is_constant())
        return Expr(a.value() * b.value());
    if (a.is_constant(0.0) || b.is_constant(0.0))
        return Expr(0.0);
    if (a.is_constant(1.0))
        return b;
    if (b.is_constant(1.0))
        return a;
    return Expr::raw_binary(Op::Mul, a, b);
}

Expr operator/(const Expr& a, const Expr& b) {
    if (a.is_constant() && b.is_constant() && b.value() != 0.0)
        return Expr(a.value() / b.value());
    if (a.is_constant(0.0) && !b.is_constant(0.0))
        return Expr(0.0);
    if (b.is_constant(1.0))
        return a;
    return Expr::raw_binary(Op::Div, a, b);
}

Expr operator-(const Expr& a) {
    if (a.is_constant())
        return Expr(-a.value());
    if (a.op() == Op::Neg)
        return a.args()[0];
    return Expr::raw_unary(Op::Neg, a);
}

Expr pow(const Expr& base, const Expr& exponent) {
    if (base.is_constant() && exponent.is_constant()) {
        double v = std::pow(base.value(), exponent.value());
        if (std::isfinite(v))
            return Expr(v);
    }
    if (exponent.is_constant(0.0))
        return Expr(1.0);
    if (exponent.is_constant(1.0))
        return base;
    return Expr::raw_binary(Op::Pow, base, exponent);
}

// ---------------------------------------------------------------------------
// Parsing

namespace {

class Parser {
public:
    explicit Parser(std::string_view text) : text_(text) {}

    Expr parse_all() {
        Expr e = parse_sum();
        skip_ws();
        if (pos_ < text_.size())
            fail("unexpected '" + std::string(1, text_[pos_]) + "'");
        return e;
    }

private:
    std::string_view text_;
    std::size_t pos_ = 0;

    [[noreturn]] void fail(const std::string& msg) const { fail_at(msg, pos_); }

    [[noreturn]] void fail_at(const std::string& msg, std::size_t at) const {
        int line = 1;
        int col = 1;
        for (std::size_t i = 0; i < at && i < text_.size(); ++i) {
            if (text_[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw ParseError("syntax error: " + msg, line, col);
    }

    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_])))
            ++pos_;
    }

    bool accept(char c) {
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    void expect(char c) {
        if (!accept(c)) {
            if (pos_ >= text_.size())
                fail(std::string("expected '") + c + "' before end of input");
            fail(std::string("expected '") + c + "'");
        }
    }

    Expr parse_sum() {
        Expr lhs = parse_product();
        for (;;) {
            if (accept('+'))
                lhs = Expr::raw_binary(Op::Add, lhs, parse_product());
            else if (accept('-'))
                lhs = Expr::raw_binary(Op::Sub, lhs, parse_product());
            else
                return lhs;
        }
    }

    Expr parse_product() {
        Expr lhs = parse_unary();
        for (;;) {
            if (accept('*'))
                lhs = Expr::raw_binary(Op::Mul, lhs, parse_unary());
            else if (accept('/'))
                lhs = Expr::raw_binary(Op::Div, lhs, parse_unary());
            else
                return lhs;
        }
    }

    Expr parse_unary() {
        if (accept('-')) {
            skip_ws();
            // A negated numeric literal becomes a negative constant, unless
            // it is the base of a power (-2^2 is -(2^2)).
            if (pos_ < text_.size() && (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.')) {
                std::size_t save = pos_;
                double v = parse_number();
                skip_ws();
                bool power_follows = pos_ < text_.size() && text_[pos_] == '^';
                if (!power_follows)
                    return Expr(-v);
                pos_ = save;
            }
            return Expr::raw_unary(Op::Neg, parse_unary());
        }
        return parse_power();
    }

    Expr parse_power() {
        Expr base = parse_primary();
        if (accept('^'))
            return Expr::raw_binary(Op::Pow, base, parse_unary());
        return base;
    }

    double parse_number() {
        std::size_t start = pos_;
        while (pos_ < text_.size() && (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.'))
            ++pos_;
        if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
            std::size_t mark = pos_;
            ++pos_;
            if (pos_ < text_.size() && (text_[pos_] == '+' || text_[pos_] == '-'))
                ++pos_;
            if (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
                while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_])))
                    ++pos_;
            } else {
                pos_ = mark;
            }
        }
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(text_.data() + start, text_.data() + pos_, v);
        if (ec != std::errc() || ptr != text_.data() + pos_)
            fail_at("malformed number", start);
        return v;
    }

    Expr parse_primary() {
        skip_ws();
        if (pos_ >= text_.size())
            fail("unexpected end of input");
        char c = text_[pos_];
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.')
            return Expr(parse_number());
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t start = pos_;
            while (pos_ < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
                ++pos_;
            std::string ident(text_.substr(start, pos_ - start));
            skip_ws();
            if (pos_ < text_.size() && text_[pos_] == '(') {
                auto it = std::find_if(kFuncs.begin(), kFuncs.end(), [&](const FuncInfo& f) { return f.name == ident; });
                if (it == kFuncs.end())
                    fail_at("unknown function '" + ident + "'", start);
                ++pos_;
                std::vector<Expr> args;
                if (!accept(')')) {
                    do {
                        args.push_back(parse_sum());
                    } while (accept(','));
                    expect(')');
                }
                if (args.size() != it->arity)
                    fail_at("function '" + ident + "' takes " + std::to_string(it->arity) + " argument(s)", start);
                return Expr::call(it->func, std::move(args));
            }
            return Expr::variable(std::move(ident));
        }
        if (accept('(')) {
            Expr inner = parse_sum();
            expect(')');
            return inner;
        }
        fail("unexpected '" + std::string(1, c) + "'");
    }
};

}  // namespace

Expr parse(std::string_view text) {
    return Parser(text).parse_all();
}

// ---------------------------------------------------------------------------
// Printing

namespace {

// Binding strength used to decide where parentheses are needed.
int precedence(const Expr& e) {
    switch (e.op()) {
    case Op::Add:
    case Op::Sub:
        return 1;
    case Op::Mul:
    case Op::Div:
        return 2;
    case Op::Neg:
        return 3;
    case Op::Pow:
        return 4;
    case Op::Const:
        return (e.value() < 0.0 || std::signbit(e.value())) ? 3 : 5;
    default:
        return 5;
    }
}

std::string format_number(double v) {
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), ptr);
}

void print(const Expr& e, std::string& out);

void print_operand(const Expr& e, bool parens, std::string& out) {
    if (parens)
        out += '(';
    print(e, out);
    if (parens)
        out += ')';
}

void print(const Expr& e, std::string& out) {
    switch (e.op()) {
    case Op::Const:
        out += format_number(e.value());
        return;
    case Op::Var:
        out += e.name();
        return;
    case Op::Neg:
        out += '-';
        {
            const Expr& a = e.args()[0];
            bool literal = a.op() == Op::Const && !std::signbit(a.value());
            print_operand(a, literal || precedence(a) < 3, out);
        }
        return;
    case Op::Add:
    case Op::Sub: {
        print_operand(e.args()[0], precedence(e.args()[0]) < 1, out);
        out += e.op() == Op::Add ? " + " : " - ";
        print_operand(e.args()[1], precedence(e.args()[1]) <= 1, out);
        return;
    }
    case Op::Mul:
    case Op::Div: {
        print_operand(e.args()[0], precedence(e.args()[0]) < 2, out);
        out += e.op() == Op::Mul ? "*" : "/";
        print_operand(e.args()[1], precedence(e.args()[1]) <= 2, out);
        return;
    }
    case Op::Pow: {
        print_operand(e.args()[0], precedence(e.args()[0]) <= 4, out);
        out += '^';
        print_operand(e.args()[1], precedence(e.args()[1]) < 3, out);
        return;
    }
    case Op::Call: {
        out += func_name(e.func());
        out += '(';
        for (std::size_t i = 0; i < e.args().size(); ++i) {
            if (i)
                out += ", ";
            print(e.args()[i], out);
        }
        out += ')';
        return;
    }
    }
}

}  // namespace

std::string to_string(const Expr& e) {
    std::string out;
    print(e, out);
    return out;
}

// ---------------------------------------------------------------------------
// Symbolic differentiation

bool depends_on(const Expr& e, const std::string& var) {
    if (e.op() == Op::Var)
        return e.name() == var;
    return std::any_of(e.args().begin(), e.args().end(), [&](const Expr& a) { return depends_on(a, var); });
}

Expr diff(const Expr& e, const std::string& var) {
    switch (e.op()) {
    case Op::Const:
        return Expr(0.0);
    case Op::Var:
        return Expr(e.name() == var ? 1.0 : 0.0);
    case Op::Neg:
        return -diff(e.args()[0], var);
    case Op::Add:
        return diff(e.args()[0], var) + diff(e.args()[1], var);
    case Op::Sub:
        return diff(e.args()[0], var) - diff(e.args()[1], var);
    case Op::Mul: {
        const Expr& a = e.args()[0];
        const Expr& b = e.args()[1];
        return diff(a, var) * b + a * diff(b, var);
    }
    case Op::Div: {
        const Expr& a = e.args()[0];
        const Expr& b = e.args()[1];
        Expr da = diff(a, var);
        Expr db = diff(b, var);
        if (db.is_constant(0.0))
            return da / b;
        return (da * b - a * db) / pow(b, Expr(2.0));
    }
    case Op::Pow: {
        const Expr& a = e.args()[0];
        const Expr& b = e.args()[1];
        Expr da = diff(a, var);
        Expr db = diff(b, var);
        if (db.is_constant(0.0)) {
            Expr lowered = b.is_constant() ? Expr(b.value() - 1.0) : b - Expr(1.0);
            return b * pow(a, lowered) * da;
        }
        Expr log_a = Expr::call(Func::Log, {a});
        return e * (db * log_a + b * da / a);
    }
    case Op::Call: {
        const auto& args = e.args();
        if (!func_is_smooth(e.func())) {
            for (const Expr& a : args)
                if (depends_on(a, var))
                    throw NonsmoothError("nonsmooth function '" + std::string(func_name(e.func())) +
                                         "' differentiated with respect to '" + var + "'");
            return Expr(0.0);
        }
        if (e.func() == Func::Pow)
            return diff(Expr::raw_binary(Op::Pow, args[0], args[1]), var);
        const Expr& g = args[0];
        Expr dg = diff(g, var);
        if (dg.is_constant(0.0))
            return Expr(0.0);
        switch (e.func()) {
        case Func::Sin:
            return dg * Expr::call(Func::Cos, {g});
        case Func::Cos:
            return -(dg * Expr::call(Func::Sin, {g}));
        case Func::Exp:
            return dg * e;
        case Func::Log:
            return dg / g;
        case Func::Tanh:
            return dg * (Expr(1.0) - pow(e, Expr(2.0)));
        default:
            break;
        }
        break;
    }
    }
    throw std::logic_error("diff: unhandled node");
}

Expr substitute(const Expr& e, const std::string& name, const Expr& replacement) {
    switch (e.op()) {
    case Op::Const:
        return e;
    case Op::Var:
        return e.name() == name ? replacement : e;
    case Op::Neg:
        return Expr::raw_unary(Op::Neg, substitute(e.args()[0], name, replacement));
    case Op::Call: {
        std::vector<Expr> args;
        for (const Expr& a : e.args())
            args.push_back(substitute(a, name, replacement));
        return Expr::call(e.func(), std::move(args));
    }
    default:
        return Expr::raw_binary(e.op(), substitute(e.args()[0], name, replacement),
                                substitute(e.args()[1], name, replacement));
    }
}

namespace {
void collect(const Expr& e, std::set<std::string>& out) {
    if (e.op() == Op::Var)
        out.insert(e.name());
    for (const Expr& a : e.args())
        collect(a, out);
}

double apply(Func f, double a, double b) {
    switch (f) {
    case Func::Sin:
        return std::sin(a);
    case Func::Cos:
        return std::cos(a);
    case Func::Exp:
        return std::exp(a);
    case Func::Log:
        return a > 0.0 ? std::log(a) : std::numeric_limits<double>::quiet_NaN();
    case Func::Tanh:
        return std::tanh(a);
    case Func::Abs:
        return std::fabs(a);
    case Func::Min:
        return std::min(a, b);
    case Func::Max:
        return std::max(a, b);
    case Func::Pow:
        return std::pow(a, b);
    case Func::Step:
        return a >= 0.0 ? 1.0 : 0.0;
    }
    return std::numeric_limits<double>::quiet_NaN();
}

double binary(Op op, double a, double b) {
    switch (op) {
    case Op::Add:
        return a + b;
    case Op::Sub:
        return a - b;
    case Op::Mul:
        return a * b;
    case Op::Div:
        return a / b;
    case Op::Pow:
        return std::pow(a, b);
    default:
        return std::numeric_limits<double>::quiet_NaN();
    }
}
}  // namespace

std::set<std::string> free_variables(const Expr& e) {
    std::set<std::string> out;
    collect(e, out);
    return out;
}

double eval(const Expr& e, const VarEnv& env) {
    double result = 0.0;
    switch (e.op()) {
    case Op::Const:
        return e.value();
    case Op::Var: {
        auto it = env.find(e.name());
        if (it == env.end())
            throw EvalError("missing binding for '" + e.name() + "'");
        return it->second;
    }
    case Op::Neg:
        return -eval(e.args()[0], env);
    case Op::Call: {
        double a = eval(e.args()[0], env);
        double b = e.args().size() > 1 ? eval(e.args()[1], env) : 0.0;
        if (e.func() == Func::Log && !(a > 0.0))
            throw EvalError("domain error: log of nonpositive value");
        result = apply(e.func(), a, b);
        break;
    }
    default:
        result = binary(e.op(), eval(e.args()[0], env), eval(e.args()[1], env));
        break;
    }
    if (std::isnan(result))
        throw EvalError("domain error: NaN in '" + to_string(e) + "'");
    return result;
}

// ---------------------------------------------------------------------------
// Layout and compiled evaluation

std::size_t Layout::add(const std::string& name) {
    auto it = index_.find(name);
    if (it != index_.end())
        return it->second;
    index_.emplace(name, names_.size());
    names_.push_back(name);
    return names_.size() - 1;
}

bool Layout::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

std::size_t Layout::slot(std::string_view name) const {
    auto it = index_.find(name);
    if (it == index_.end())
        throw EvalError("variable '" + std::string(name) + "' is not bound in layout");
    return it->second;
}

namespace {
std::size_t emit(const Expr& e, const Layout& layout, auto& code) {
    using Instr = std::remove_reference_t<decltype(code[0])>;
    switch (e.op()) {
    case Op::Const:
        code.push_back(Instr{Op::Const, Func::Sin, 0, e.value()});
        return 1;
    case Op::Var:
        code.push_back(Instr{Op::Var, Func::Sin, layout.slot(e.name()), 0.0});
        return 1;
    case Op::Neg: {
        std::size_t d = emit(e.args()[0], layout, code);
        code.push_back(Instr{Op::Neg, Func::Sin, 0, 0.0});
        return d;
    }
    case Op::Call: {
        std::size_t depth = 0;
        for (std::size_t i = 0; i < e.args().size(); ++i)
            depth = std::max(depth, i + emit(e.args()[i], layout, code));
        code.push_back(Instr{Op::Call, e.func(), e.args().size(), 0.0});
        return depth;
    }
    default: {
        std::size_t d0 = emit(e.args()[0], layout, code);
        std::size_t d1 = emit(e.args()[1], layout, code);
        code.push_back(Instr{e.op(), Func::Sin, 0, 0.0});
        return std::max(d0, d1 + 1);
    }
    }
}
}  // namespace

CompiledExpr::CompiledExpr(const Expr& e, const Layout& layout) { max_depth_ = emit(e, layout, code_); }

double CompiledExpr::operator()(std::span<const double> values) const {
    std::array<double, 64> small{};
    std::vector<double> big;
    double* stack = small.data();
    if (max_depth_ > small.size()) {
        big.resize(max_depth_);
        stack = big.data();
    }
    std::size_t top = 0;
    for (const Instr& in : code_) {
        switch (in.op) {
        case Op::Const:
            stack[top++] = in.value;
            break;
        case Op::Var:
            stack[top++] = values[in.slot];
            break;
        case Op::Neg:
            stack[top - 1] = -stack[top - 1];
            break;
        case Op::Call:
            if (in.slot == 1) {
                stack[top - 1] = apply(in.func, stack[top - 1], 0.0);
            } else {
                stack[top - 2] = apply(in.func, stack[top - 2], stack[top - 1]);
                --top;
            }
            break;
        default:
            stack[top - 2] = binary(in.op, stack[top - 2], stack[top - 1]);
            --top;
            break;
        }
    }
    return code_.empty() ? 0.0 : stack[0];
}

}  // namespace canonmp
