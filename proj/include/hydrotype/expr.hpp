#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "hydrotype/errors.hpp"

namespace ht {

enum class NodeKind : std::uint8_t { constant, variable, unary, binary };

enum class UnaryOp : std::uint8_t { neg, sin, cos, exp, log, sqrt, tanh };

enum class BinaryOp : std::uint8_t { add, sub, mul, div, pow };

struct ExprNode;
using NodePtr = std::shared_ptr<const ExprNode>;

/** Immutable expression tree over variables u1..un.
 *
 * Handles share subtrees freely; no operation mutates a node after creation.
 * A default-constructed Expr is an empty handle, used for absent optional
 * entries (for example b-coefficients of identically vanishing rows); every
 * operation below requires a non-empty handle.
 */
class Expr {
  public:
    Expr() = default;
    bool empty() const { return !node_; }
    static Expr constant(double v);
    static Expr variable(int index);  // 1-based
    static Expr unary(UnaryOp op, Expr a);
    static Expr binary(BinaryOp op, Expr a, Expr b);

    const ExprNode& node() const { return *node_; }
    const NodePtr& ptr() const { return node_; }

    /** True when the tree is exactly the constant `v`. */
    bool is_const(double v) const;
    bool is_constant() const;

  private:
    explicit Expr(NodePtr n) : node_(std::move(n)) {}
    NodePtr node_;
};

struct ExprNode {
    NodeKind kind;
    double value = 0.0;  // constant payload
    int index = 0;       // variable payload, 1-based
    UnaryOp uop = UnaryOp::neg;
    BinaryOp bop = BinaryOp::add;
    Expr a, b;           // children; unary uses `a` only
};

// Convenience constructors used throughout the coefficient algebra.
Expr operator+(const Expr& a, const Expr& b);
Expr operator-(const Expr& a, const Expr& b);
Expr operator*(const Expr& a, const Expr& b);
Expr operator/(const Expr& a, const Expr& b);
Expr operator-(const Expr& a);

/** Parse `text` against the fixed grammar.
 *
 *   expr   := term (('+'|'-') term)*
 *   term   := factor (('*'|'/') factor)*
 *   factor := base ('^' factor)?
 *   base   := number | ident | '(' expr ')' | func '(' expr ')' | '-' base
 *
 * func is one of sin, cos, exp, log, sqrt, tanh; ident is 'u' followed by
 * digits. Variable indices outside [1, n_vars] are rejected. A leading '-' on a
 * bare number folds into the literal. Throws ParseError with a byte offset.
 */
Expr parse_expr(const std::string& text, int n_vars);

/** Canonical rendering; parse(print(e)) yields a structurally equal tree and
 *  print is a fixed point of print . parse. */
std::string print_expr(const Expr& e);

/** Exact partial derivative with respect to u_var (1-based). */
Expr diff(const Expr& e, int var);

/** Evaluate at `point` (point[k] is the value of u_{k+1}).
 *  Throws EvalError on domain failures or non-finite intermediates. */
double eval(const Expr& e, const std::vector<double>& point);

/** Light, conservative rewriting: constant folding (only when the folded value
 *  is finite), x+0, x*1, x*0, x-0, x-x, x/x and x/1, x^0, x^1, negation
 *  normalization. Idempotent and value-preserving away from removable
 *  singularities. */
Expr simplify(const Expr& e);

/** True when simplify(e) is the literal constant 0. Sound, not complete. */
bool is_zero(const Expr& e);

bool same_structure(const Expr& a, const Expr& b);

/** Largest variable index that occurs, 0 for constant expressions. */
int max_var_index(const Expr& e);

/** Shortest decimal rendering of v that parses back to exactly v. */
std::string format_double(double v);

}  // namespace ht
