#include "hydrotype/expr.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <utility>

namespace ht {

namespace {

NodePtr make_node(ExprNode n) {
    return std::make_shared<const ExprNode>(std::move(n));
}

const char* unary_name(UnaryOp op) {
    switch (op) {
        case UnaryOp::neg: return "-";
        case UnaryOp::sin: return "sin";
        case UnaryOp::cos: return "cos";
        case UnaryOp::exp: return "exp";
        case UnaryOp::log: return "log";
        case UnaryOp::sqrt: return "sqrt";
        case UnaryOp::tanh: return "tanh";
    }
    return "?";
}

}  // namespace

Expr Expr::constant(double v) {
    ExprNode n{};
    n.kind = NodeKind::constant;
    n.value = v;
    return Expr(make_node(std::move(n)));
}

Expr Expr::variable(int index) {
    ExprNode n{};
    n.kind = NodeKind::variable;
    n.index = index;
    return Expr(make_node(std::move(n)));
}

Expr Expr::unary(UnaryOp op, Expr a) {
    ExprNode n{};
    n.kind = NodeKind::unary;
    n.uop = op;
    n.a = std::move(a);
    return Expr(make_node(std::move(n)));
}

Expr Expr::binary(BinaryOp op, Expr a, Expr b) {
    ExprNode n{};
    n.kind = NodeKind::binary;
    n.bop = op;
    n.a = std::move(a);
    n.b = std::move(b);
    return Expr(make_node(std::move(n)));
}

bool Expr::is_const(double v) const {
    return node_ && node_->kind == NodeKind::constant && node_->value == v;
}

bool Expr::is_constant() const { return node_ && node_->kind == NodeKind::constant; }

Expr operator+(const Expr& a, const Expr& b) { return Expr::binary(BinaryOp::add, a, b); }
Expr operator-(const Expr& a, const Expr& b) { return Expr::binary(BinaryOp::sub, a, b); }
Expr operator*(const Expr& a, const Expr& b) { return Expr::binary(BinaryOp::mul, a, b); }
Expr operator/(const Expr& a, const Expr& b) { return Expr::binary(BinaryOp::div, a, b); }
Expr operator-(const Expr& a) { return Expr::unary(UnaryOp::neg, a); }

// ---------------------------------------------------------------------------
// Parsing

namespace {

struct Parser {
    const std::string& text;
    int n_vars;
    std::size_t pos = 0;

    [[noreturn]] void fail(const std::string& msg) const {
        throw ParseError(msg + " at offset " + std::to_string(pos), pos);
    }

    void skip_ws() {
        while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    }

    char peek() {
        skip_ws();
        return pos < text.size() ? text[pos] : '\0';
    }

    bool accept(char c) {
        if (peek() == c) {
            ++pos;
            return true;
        }
        return false;
    }

    Expr parse_full() {
        Expr e = expr();
        if (peek() != '\0') fail(std::string("unexpected character '") + text[pos] + "'");
        return e;
    }

    Expr expr() {
        Expr e = term();
        for (;;) {
            if (accept('+')) e = Expr::binary(BinaryOp::add, e, term());
            else if (accept('-')) e = Expr::binary(BinaryOp::sub, e, term());
            else return e;
        }
    }

    Expr term() {
        Expr e = factor();
        for (;;) {
            if (accept('*')) e = Expr::binary(BinaryOp::mul, e, factor());
            else if (accept('/')) e = Expr::binary(BinaryOp::div, e, factor());
            else return e;
        }
    }

    // Exponentiation is right associative and binds looser than a leading minus,
    // so "-u1^2" means (-u1)^2.
    Expr factor() {
        Expr e = base();
        if (accept('^')) return Expr::binary(BinaryOp::pow, e, factor());
        return e;
    }

    Expr base() {
        char c = peek();
        if (c == '(') {
            ++pos;
            Expr e = expr();
            if (!accept(')')) fail("expected ')'");
            return e;
        }
        if (c == '-') {
            ++pos;
            // A minus directly on a numeric literal folds into the constant.
            if (std::isdigit(static_cast<unsigned char>(peek())) || peek() == '.') {
                return Expr::constant(-number());
            }
            return Expr::unary(UnaryOp::neg, base());
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return Expr::constant(number());
        if (std::isalpha(static_cast<unsigned char>(c))) return identifier();
        if (c == '\0') fail("unexpected end of input");
        fail(std::string("unexpected character '") + c + "'");
    }

    double number() {
        skip_ws();
        std::size_t start = pos;
        while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) ++pos;
        if (pos < text.size() && text[pos] == '.') {
            ++pos;
            while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) ++pos;
        }
        if (pos == start || (pos == start + 1 && text[start] == '.')) {
            pos = start;
            fail("expected number");
        }
        if (pos < text.size() && (text[pos] == 'e' || text[pos] == 'E')) {
            std::size_t mark = pos;
            ++pos;
            if (pos < text.size() && (text[pos] == '+' || text[pos] == '-')) ++pos;
            if (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
                while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) ++pos;
            } else {
                pos = mark;  // the 'e' belongs to something else
            }
        }
        return std::strtod(text.substr(start, pos - start).c_str(), nullptr);
    }

    Expr identifier() {
        skip_ws();
        std::size_t start = pos;
        while (pos < text.size() && std::islower(static_cast<unsigned char>(text[pos]))) ++pos;
        std::string name = text.substr(start, pos - start);
        if (name == "u") {
            std::size_t digits = pos;
            while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) ++pos;
            if (pos == digits) {
                pos = start;
                fail("expected variable index after 'u'");
            }
            if (pos - digits > 6) {
                pos = start;
                fail("variable index too large");
            }
            int index = std::atoi(text.substr(digits, pos - digits).c_str());
            if (index < 1 || index > n_vars) {
                pos = start;
                fail("variable index " + std::to_string(index) + " out of range [1.." +
                     std::to_string(n_vars) + "]");
            }
            return Expr::variable(index);
        }
        static const std::pair<const char*, UnaryOp> funcs[] = {
            {"sin", UnaryOp::sin},   {"cos", UnaryOp::cos}, {"exp", UnaryOp::exp},
            {"log", UnaryOp::log},   {"sqrt", UnaryOp::sqrt}, {"tanh", UnaryOp::tanh},
        };
        for (const auto& [fname, op] : funcs) {
            if (name == fname) {
                if (!accept('(')) fail("expected '(' after '" + name + "'");
                Expr arg = expr();
                if (!accept(')')) fail("expected ')'");
                return Expr::unary(op, arg);
            }
        }
        pos = start;
        fail("unknown function or identifier '" + name + "'");
    }
};

}  // namespace

Expr parse_expr(const std::string& text, int n_vars) {
    Parser p{text, n_vars};
    return p.parse_full();
}

// ---------------------------------------------------------------------------
// Printing

std::string format_double(double v) {
    char buf[40];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

namespace {

int precedence(const ExprNode& n) {
    if (n.kind != NodeKind::binary) return 4;
    switch (n.bop) {
        case BinaryOp::add:
        case BinaryOp::sub: return 1;
        case BinaryOp::mul:
        case BinaryOp::div: return 2;
        case BinaryOp::pow: return 3;
    }
    return 4;
}

void render(const Expr& e, std::string& out);

void render_wrapped(const Expr& e, std::string& out) {
    out += '(';
    render(e, out);
    out += ')';
}

// Right operands whose rendering starts with '-' always get parentheses, so
// "a*-b" never appears and negative literals survive a round trip unchanged.
void render_right(const Expr& e, int parent_prec, std::string& out) {
    std::string piece;
    render(e, piece);
    bool parens = precedence(e.node()) <= parent_prec || piece.front() == '-';
    if (parens && parent_prec == 3) parens = precedence(e.node()) < 3 || piece.front() == '-';
    if (parens) {
        out += '(';
        out += piece;
        out += ')';
    } else {
        out += piece;
    }
}

void render(const Expr& e, std::string& out) {
    const ExprNode& n = e.node();
    switch (n.kind) {
        case NodeKind::constant:
            out += format_double(n.value);
            return;
        case NodeKind::variable:
            out += 'u';
            out += std::to_string(n.index);
            return;
        case NodeKind::unary:
            if (n.uop == UnaryOp::neg) {
                out += '-';
                const ExprNode& c = n.a.node();
                // Constants are always wrapped: "-(1.5)" reparses to the same
                // neg(const) node, while "-1.5" would fold into one literal.
                bool simple = (c.kind == NodeKind::variable) ||
                              (c.kind == NodeKind::unary && c.uop != UnaryOp::neg);
                if (simple) render(n.a, out);
                else render_wrapped(n.a, out);
            } else {
                out += unary_name(n.uop);
                render_wrapped(n.a, out);
            }
            return;
        case NodeKind::binary: {
            int prec = precedence(n);
            if (n.bop == BinaryOp::pow) {
                // The left slot of '^' must be grammar-level base: any binary
                // subtree needs parentheses, everything else stands alone.
                if (n.a.node().kind == NodeKind::binary) render_wrapped(n.a, out);
                else render(n.a, out);
                out += '^';
                render_right(n.b, prec, out);
                return;
            }
            if (precedence(n.a.node()) < prec) render_wrapped(n.a, out);
            else render(n.a, out);
            switch (n.bop) {
                case BinaryOp::add: out += '+'; break;
                case BinaryOp::sub: out += '-'; break;
                case BinaryOp::mul: out += '*'; break;
                case BinaryOp::div: out += '/'; break;
                case BinaryOp::pow: break;
            }
            render_right(n.b, prec, out);
            return;
        }
    }
}

}  // namespace

std::string print_expr(const Expr& e) {
    std::string out;
    render(e, out);
    return out;
}

// ---------------------------------------------------------------------------
// Differentiation

Expr diff(const Expr& e, int var) {
    const ExprNode& n = e.node();
    switch (n.kind) {
        case NodeKind::constant:
            return Expr::constant(0.0);
        case NodeKind::variable:
            return Expr::constant(n.index == var ? 1.0 : 0.0);
        case NodeKind::unary: {
            Expr da = diff(n.a, var);
            switch (n.uop) {
                case UnaryOp::neg: return -da;
                case UnaryOp::sin: return Expr::unary(UnaryOp::cos, n.a) * da;
                case UnaryOp::cos: return -(Expr::unary(UnaryOp::sin, n.a) * da);
                case UnaryOp::exp: return Expr::unary(UnaryOp::exp, n.a) * da;
                case UnaryOp::log: return da / n.a;
                case UnaryOp::sqrt:
                    return da / (Expr::constant(2.0) * Expr::unary(UnaryOp::sqrt, n.a));
                case UnaryOp::tanh: {
                    Expr th = Expr::unary(UnaryOp::tanh, n.a);
                    return da * (Expr::constant(1.0) - th * th);
                }
            }
            break;
        }
        case NodeKind::binary: {
            switch (n.bop) {
                case BinaryOp::add: return diff(n.a, var) + diff(n.b, var);
                case BinaryOp::sub: return diff(n.a, var) - diff(n.b, var);
                case BinaryOp::mul: return diff(n.a, var) * n.b + n.a * diff(n.b, var);
                case BinaryOp::div:
                    return (diff(n.a, var) * n.b - n.a * diff(n.b, var)) / (n.b * n.b);
                case BinaryOp::pow: {
                    if (n.b.is_constant()) {
                        double c = n.b.node().value;
                        return Expr::constant(c) *
                               Expr::binary(BinaryOp::pow, n.a, Expr::constant(c - 1.0)) *
                               diff(n.a, var);
                    }
                    // General case f^g = exp(g log f); valid where f > 0.
                    Expr f = n.a, g = n.b;
                    return Expr::binary(BinaryOp::pow, f, g) *
                           (diff(g, var) * Expr::unary(UnaryOp::log, f) +
                            g * diff(f, var) / f);
                }
            }
            break;
        }
    }
    return Expr::constant(0.0);
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

[[noreturn]] void eval_fail(const char* what, const Expr& e) {
    throw EvalError(std::string(what) + " in '" + print_expr(e) + "'", print_expr(e));
}

bool is_integral(double v) { return std::isfinite(v) && v == std::nearbyint(v); }

}  // namespace

double eval(const Expr& e, const std::vector<double>& point) {
    const ExprNode& n = e.node();
    double r = 0.0;
    switch (n.kind) {
        case NodeKind::constant:
            r = n.value;
            break;
        case NodeKind::variable:
            if (n.index < 1 || static_cast<std::size_t>(n.index) > point.size())
                eval_fail("variable outside the evaluation point", e);
            r = point[n.index - 1];
            break;
        case NodeKind::unary: {
            double a = eval(n.a, point);
            switch (n.uop) {
                case UnaryOp::neg: r = -a; break;
                case UnaryOp::sin: r = std::sin(a); break;
                case UnaryOp::cos: r = std::cos(a); break;
                case UnaryOp::exp: r = std::exp(a); break;
                case UnaryOp::log:
                    if (a <= 0.0) eval_fail("log of a nonpositive value", e);
                    r = std::log(a);
                    break;
                case UnaryOp::sqrt:
                    if (a < 0.0) eval_fail("square root of a negative value", e);
                    r = std::sqrt(a);
                    break;
                case UnaryOp::tanh: r = std::tanh(a); break;
            }
            break;
        }
        case NodeKind::binary: {
            double a = eval(n.a, point);
            double b = eval(n.b, point);
            switch (n.bop) {
                case BinaryOp::add: r = a + b; break;
                case BinaryOp::sub: r = a - b; break;
                case BinaryOp::mul: r = a * b; break;
                case BinaryOp::div:
                    if (b == 0.0) eval_fail("division by zero", e);
                    r = a / b;
                    break;
                case BinaryOp::pow:
                    if (a < 0.0 && !is_integral(b))
                        eval_fail("negative base with non-integer exponent", e);
                    if (a == 0.0 && b < 0.0) eval_fail("zero base with negative exponent", e);
                    r = std::pow(a, b);
                    break;
            }
            break;
        }
    }
    if (!std::isfinite(r)) eval_fail("non-finite value", e);
    return r;
}

// ---------------------------------------------------------------------------
// Simplification

namespace {

bool const_fold_unary(UnaryOp op, double a, double& out) {
    switch (op) {
        case UnaryOp::neg: out = -a; break;
        case UnaryOp::sin: out = std::sin(a); break;
        case UnaryOp::cos: out = std::cos(a); break;
        case UnaryOp::exp: out = std::exp(a); break;
        case UnaryOp::log:
            if (a <= 0.0) return false;
            out = std::log(a);
            break;
        case UnaryOp::sqrt:
            if (a < 0.0) return false;
            out = std::sqrt(a);
            break;
        case UnaryOp::tanh: out = std::tanh(a); break;
    }
    return std::isfinite(out);
}

bool const_fold_binary(BinaryOp op, double a, double b, double& out) {
    switch (op) {
        case BinaryOp::add: out = a + b; break;
        case BinaryOp::sub: out = a - b; break;
        case BinaryOp::mul: out = a * b; break;
        case BinaryOp::div:
            if (b == 0.0) return false;
            out = a / b;
            break;
        case BinaryOp::pow:
            if (a < 0.0 && !is_integral(b)) return false;
            if (a == 0.0 && b < 0.0) return false;
            out = std::pow(a, b);
            break;
    }
    return std::isfinite(out);
}

Expr rewrite_unary(UnaryOp op, const Expr& a) {
    double folded = 0.0;
    if (a.is_constant() && const_fold_unary(op, a.node().value, folded))
        return Expr::constant(folded);
    if (op == UnaryOp::neg && a.node().kind == NodeKind::unary &&
        a.node().uop == UnaryOp::neg)
        return a.node().a;
    return Expr::unary(op, a);
}

Expr rewrite_binary(BinaryOp op, const Expr& a, const Expr& b);

// Sign cancellation for quotients, so e.g. (0-1)/(0-u1) reaches 1/u1.
bool div_signs(const Expr& a, const Expr& b, Expr& out) {
    auto negated = [](const Expr& e, Expr& stripped) {
        if (e.node().kind == NodeKind::unary && e.node().uop == UnaryOp::neg) {
            stripped = e.node().a;
            return true;
        }
        if (e.is_constant() && e.node().value < 0.0) {
            stripped = Expr::constant(-e.node().value);
            return true;
        }
        return false;
    };
    Expr na, nb;
    bool has_a = negated(a, na), has_b = negated(b, nb);
    if (has_a && has_b) {
        out = rewrite_binary(BinaryOp::div, na, nb);
        return true;
    }
    return false;
}

Expr rewrite_binary(BinaryOp op, const Expr& a, const Expr& b) {
    double folded = 0.0;
    if (a.is_constant() && b.is_constant() &&
        const_fold_binary(op, a.node().value, b.node().value, folded))
        return Expr::constant(folded);
    switch (op) {
        case BinaryOp::add:
            if (a.is_const(0.0)) return b;
            if (b.is_const(0.0)) return a;
            break;
        case BinaryOp::sub:
            if (b.is_const(0.0)) return a;
            if (a.is_const(0.0)) return rewrite_unary(UnaryOp::neg, b);
            if (same_structure(a, b)) return Expr::constant(0.0);
            break;
        case BinaryOp::mul:
            if (a.is_const(0.0) || b.is_const(0.0)) return Expr::constant(0.0);
            if (a.is_const(1.0)) return b;
            if (b.is_const(1.0)) return a;
            break;
        case BinaryOp::div: {
            if (b.is_const(1.0)) return a;
            if (a.is_const(0.0)) return Expr::constant(0.0);
            if (same_structure(a, b)) return Expr::constant(1.0);
            Expr cancelled;
            if (div_signs(a, b, cancelled)) return cancelled;
            break;
        }
        case BinaryOp::pow:
            if (b.is_const(1.0)) return a;
            if (b.is_const(0.0)) return Expr::constant(1.0);
            if (a.is_const(1.0)) return Expr::constant(1.0);
            break;
    }
    return Expr::binary(op, a, b);
}

}  // namespace

Expr simplify(const Expr& e) {
    const ExprNode& n = e.node();
    switch (n.kind) {
        case NodeKind::constant:
        case NodeKind::variable:
            return e;
        case NodeKind::unary:
            return rewrite_unary(n.uop, simplify(n.a));
        case NodeKind::binary:
            return rewrite_binary(n.bop, simplify(n.a), simplify(n.b));
    }
    return e;
}

bool is_zero(const Expr& e) { return simplify(e).is_const(0.0); }

bool same_structure(const Expr& a, const Expr& b) {
    if (a.ptr() == b.ptr()) return true;
    const ExprNode& x = a.node();
    const ExprNode& y = b.node();
    if (x.kind != y.kind) return false;
    switch (x.kind) {
        case NodeKind::constant: return x.value == y.value;
        case NodeKind::variable: return x.index == y.index;
        case NodeKind::unary: return x.uop == y.uop && same_structure(x.a, y.a);
        case NodeKind::binary:
            return x.bop == y.bop && same_structure(x.a, y.a) && same_structure(x.b, y.b);
    }
    return false;
}

int max_var_index(const Expr& e) {
    const ExprNode& n = e.node();
    switch (n.kind) {
        case NodeKind::constant: return 0;
        case NodeKind::variable: return n.index;
        case NodeKind::unary: return max_var_index(n.a);
        case NodeKind::binary: return std::max(max_var_index(n.a), max_var_index(n.b));
    }
    return 0;
}

}  // namespace ht
