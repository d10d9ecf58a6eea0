#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace canonmp {

/// Raised by the expression parser. Line and column are 1-based.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& msg, int line, int column);
    int line() const { return line_; }
    int column() const { return column_; }

private:
    int line_;
    int column_;
};

/// Missing binding or domain violation during evaluation.
class EvalError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Differentiation through abs/min/max/step with respect to a variable
/// the nonsmooth argument depends on.
class NonsmoothError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Op { Const, Var, Neg, Add, Sub, Mul, Div, Pow, Call };

enum class Func { Sin, Cos, Exp, Log, Tanh, Abs, Min, Max, Pow, Step };

std::string_view func_name(Func f);
std::size_t func_arity(Func f);
bool func_is_smooth(Func f);

struct ExprNode;

/// Immutable expression tree. Copies share structure.
class Expr {
public:
    Expr();  // constant 0
    Expr(double value);  // NOLINT(google-explicit-constructor)

    static Expr constant(double value);
    static Expr variable(std::string name);
    static Expr call(Func f, std::vector<Expr> args);

    // Raw constructors perform no folding; the parser uses them so that
    // the tree mirrors the text.
    static Expr raw_unary(Op op, Expr a);
    static Expr raw_binary(Op op, Expr a, Expr b);

    Op op() const;
    double value() const;             // Const only
    const std::string& name() const;  // Var only
    Func func() const;                // Call only
    const std::vector<Expr>& args() const;

    bool is_constant() const { return op() == Op::Const; }
    bool is_constant(double v) const { return is_constant() && value() == v; }

    /// Structural equality.
    bool operator==(const Expr& other) const;

private:
    explicit Expr(std::shared_ptr<const ExprNode> node) : node_(std::move(node)) {}
    std::shared_ptr<const ExprNode> node_;
};

struct ExprNode {
    Op op = Op::Const;
    double value = 0.0;
    std::string name;
    Func func = Func::Sin;
    std::vector<Expr> args;
};

// Folding builders: constant folding plus 0/1 elimination, nothing more.
Expr operator+(const Expr& a, const Expr& b);
Expr operator-(const Expr& a, const Expr& b);
Expr operator*(const Expr& a, const Expr& b);
Expr operator/(const Expr& a, const Expr& b);
Expr operator-(const Expr& a);
Expr pow(const Expr& base, const Expr& exponent);

Expr parse(std::string_view text);

/// Shortest text that parses back to the same tree.
std::string to_string(const Expr& e);

Expr diff(const Expr& e, const std::string& var);

/// Replace every occurrence of variable `name` by `replacement`.
Expr substitute(const Expr& e, const std::string& name, const Expr& replacement);

std::set<std::string> free_variables(const Expr& e);
bool depends_on(const Expr& e, const std::string& var);

using VarEnv = std::map<std::string, double, std::less<>>;

/// Tree-walking evaluation; throws EvalError on a missing binding or on a
/// domain violation (log of a nonpositive number, NaN result).
double eval(const Expr& e, const VarEnv& env);

/// Maps variable names to slots of a flat value vector.
class Layout {
public:
    std::size_t add(const std::string& name);
    bool contains(std::string_view name) const;
    std::size_t slot(std::string_view name) const;
    std::size_t size() const { return names_.size(); }
    const std::vector<std::string>& names() const { return names_; }

private:
    std::vector<std::string> names_;
    std::map<std::string, std::size_t, std::less<>> index_;
};

/// Flat postfix program bound to a Layout. Domain violations yield NaN.
class CompiledExpr {
public:
    CompiledExpr() = default;
    CompiledExpr(const Expr& e, const Layout& layout);

    double operator()(std::span<const double> values) const;
    bool is_zero() const { return code_.size() == 1 && code_[0].op == Op::Const && code_[0].value == 0.0; }

private:
    struct Instr {
        Op op;
        Func func;
        std::size_t slot;
        double value;
    };
    std::vector<Instr> code_;
    std::size_t max_depth_ = 0;
};

}  // namespace canonmp
