#include "morphmesh/shape.hpp"

#include <algorithm>
#include <charconv>
#include <cctype>
#include <cmath>
#include <system_error>
#include <utility>

#include "morphmesh/errors.hpp"
#include "morphmesh/io.hpp"

namespace morphmesh {

struct ShapeExpr::Node {
  Kind kind = Kind::kConst;
  double value = 0.0;
  Var var = Var::kX;
  Func func = Func::kSin;
  std::vector<ShapeExpr> children;
  std::vector<Guard> guards;
};

namespace {

using Kind = ShapeExpr::Kind;
using Var = ShapeExpr::Var;
using Func = ShapeExpr::Func;

struct FuncName {
  Func func;
  std::string_view name;
};

constexpr FuncName kFuncNames[] = {
    {Func::kSin, "sin"},   {Func::kCos, "cos"}, {Func::kExp, "exp"},   {Func::kLog, "log"},
    {Func::kSqrt, "sqrt"}, {Func::kAbs, "abs"}, {Func::kSign, "sign"},
};

std::string_view func_name(Func f) {
  for (const auto& entry : kFuncNames) {
    if (entry.func == f) return entry.name;
  }
  return "?";
}

[[noreturn]] void eval_error(const std::string& what) { throw Error(ErrorCode::kEvalError, what); }

}  // namespace

ShapeExpr::ShapeExpr() : node_(std::make_shared<const Node>()) {}

ShapeExpr::ShapeExpr(std::shared_ptr<const Node> node) : node_(std::move(node)) {}

ShapeExpr ShapeExpr::constant(double value) {
  auto n = std::make_shared<Node>();
  n->kind = Kind::kConst;
  n->value = value;
  return ShapeExpr(std::move(n));
}

ShapeExpr ShapeExpr::variable(Var var) {
  auto n = std::make_shared<Node>();
  n->kind = Kind::kVar;
  n->var = var;
  return ShapeExpr(std::move(n));
}

ShapeExpr ShapeExpr::negate(ShapeExpr operand) {
  // A negated literal is a literal; keeps print/parse structurally stable.
  if (operand.kind() == Kind::kConst) return constant(-operand.value());
  auto n = std::make_shared<Node>();
  n->kind = Kind::kNeg;
  n->children = {std::move(operand)};
  return ShapeExpr(std::move(n));
}

ShapeExpr ShapeExpr::binary(Kind kind, ShapeExpr lhs, ShapeExpr rhs) {
  auto n = std::make_shared<Node>();
  n->kind = kind;
  n->children = {std::move(lhs), std::move(rhs)};
  return ShapeExpr(std::move(n));
}

ShapeExpr ShapeExpr::call(Func func, ShapeExpr arg) {
  auto n = std::make_shared<Node>();
  n->kind = Kind::kCall;
  n->func = func;
  n->children = {std::move(arg)};
  return ShapeExpr(std::move(n));
}

ShapeExpr ShapeExpr::piecewise(std::vector<Guard> guards, std::vector<ShapeExpr> branches) {
  if (branches.size() != guards.size() + 1) {
    throw Error(ErrorCode::kInvalidArgument, "piecewise needs one fallback branch");
  }
  auto n = std::make_shared<Node>();
  n->kind = Kind::kPiecewise;
  n->guards = std::move(guards);
  n->children = std::move(branches);
  return ShapeExpr(std::move(n));
}

ShapeExpr::Kind ShapeExpr::kind() const { return node_->kind; }
double ShapeExpr::value() const { return node_->value; }
ShapeExpr::Var ShapeExpr::var() const { return node_->var; }
ShapeExpr::Func ShapeExpr::func() const { return node_->func; }
const std::vector<ShapeExpr>& ShapeExpr::children() const { return node_->children; }
const std::vector<ShapeExpr::Guard>& ShapeExpr::guards() const { return node_->guards; }

bool operator==(const ShapeExpr& a, const ShapeExpr& b) {
  if (a.node_ == b.node_) return true;
  if (a.kind() != b.kind()) return false;
  switch (a.kind()) {
    case Kind::kConst:
      return a.value() == b.value();
    case Kind::kVar:
      return a.var() == b.var();
    case Kind::kCall:
      if (a.func() != b.func()) return false;
      break;
    case Kind::kPiecewise: {
      const auto& ga = a.guards();
      const auto& gb = b.guards();
      if (ga.size() != gb.size()) return false;
      for (std::size_t i = 0; i < ga.size(); ++i) {
        if (ga[i].threshold != gb[i].threshold || ga[i].inclusive != gb[i].inclusive) return false;
      }
      break;
    }
    default:
      break;
  }
  const auto& ca = a.children();
  const auto& cb = b.children();
  return ca.size() == cb.size() && std::equal(ca.begin(), ca.end(), cb.begin());
}

// ---------------------------------------------------------------------------
// Parsing

namespace {

class Parser {
 public:
  explicit Parser(std::string_view src) : src_(src) {}

  ShapeExpr parse() {
    ShapeExpr e = expr();
    skip_ws();
    if (pos_ != src_.size()) fail("unexpected trailing input");
    return e;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(pos_, msg); }

  void skip_ws() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip_ws();
    if (pos_ < src_.size() && src_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!accept(c)) fail(std::string("expected '") + c + "'");
  }

  ShapeExpr expr() {
    ShapeExpr lhs = term();
    for (;;) {
      if (accept('+')) {
        lhs = ShapeExpr::binary(Kind::kAdd, lhs, term());
      } else if (accept('-')) {
        lhs = ShapeExpr::binary(Kind::kSub, lhs, term());
      } else {
        return lhs;
      }
    }
  }

  ShapeExpr term() {
    ShapeExpr lhs = unary();
    for (;;) {
      if (accept('*')) {
        lhs = ShapeExpr::binary(Kind::kMul, lhs, unary());
      } else if (accept('/')) {
        lhs = ShapeExpr::binary(Kind::kDiv, lhs, unary());
      } else {
        return lhs;
      }
    }
  }

  ShapeExpr unary() {
    if (accept('-')) return ShapeExpr::negate(unary());
    return power();
  }

  ShapeExpr power() {
    ShapeExpr base = primary();
    if (accept('^')) return ShapeExpr::binary(Kind::kPow, base, unary());
    return base;
  }

  double number() {
    skip_ws();
    double value = 0.0;
    const char* first = src_.data() + pos_;
    const char* last = src_.data() + src_.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr == first) fail("expected a number");
    pos_ += static_cast<std::size_t>(ptr - first);
    return value;
  }

  std::string_view identifier() {
    skip_ws();
    const std::size_t start = pos_;
    while (pos_ < src_.size() &&
           (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) {
      ++pos_;
    }
    return src_.substr(start, pos_ - start);
  }

  ShapeExpr primary() {
    skip_ws();
    if (pos_ >= src_.size()) fail("unexpected end of input");
    const char c = src_[pos_];
    if (c == '(') {
      ++pos_;
      ShapeExpr inner = expr();
      expect(')');
      return inner;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      return ShapeExpr::constant(number());
    }
    if (!std::isalpha(static_cast<unsigned char>(c))) fail(std::string("unexpected character '") + c + "'");

    const std::size_t start = pos_;
    const std::string_view id = identifier();
    if (id == "x") return ShapeExpr::variable(Var::kX);
    if (id == "y") return ShapeExpr::variable(Var::kY);
    if (id == "t") return ShapeExpr::variable(Var::kT);
    if (id == "piecewise") return piecewise();
    for (const auto& entry : kFuncNames) {
      if (entry.name == id) {
        expect('(');
        ShapeExpr arg = expr();
        expect(')');
        return ShapeExpr::call(entry.func, arg);
      }
    }
    pos_ = start;
    fail("unknown identifier '" + std::string(id) + "'");
  }

  ShapeExpr piecewise() {
    expect('(');
    std::vector<ShapeExpr::Guard> guards;
    std::vector<ShapeExpr> branches;
    for (;;) {
      skip_ws();
      // A guard starts with "t <" ; anything else is the fallback branch.
      const std::size_t save = pos_;
      bool is_guard = false;
      if (pos_ < src_.size() && src_[pos_] == 't') {
        ++pos_;
        skip_ws();
        is_guard = pos_ < src_.size() && src_[pos_] == '<';
      }
      if (!is_guard) {
        pos_ = save;
        branches.push_back(expr());
        expect(')');
        break;
      }
      ++pos_;
      ShapeExpr::Guard g;
      g.inclusive = accept('=');
      g.threshold = number();
      expect(':');
      guards.push_back(g);
      branches.push_back(expr());
      expect(',');
    }
    return ShapeExpr::piecewise(std::move(guards), std::move(branches));
  }

  std::string_view src_;
  std::size_t pos_ = 0;
};

// Printing precedence levels.
int precedence(const ShapeExpr& e) {
  switch (e.kind()) {
    case Kind::kAdd:
    case Kind::kSub:
      return 1;
    case Kind::kMul:
    case Kind::kDiv:
      return 2;
    case Kind::kNeg:
      return 3;
    case Kind::kPow:
      return 4;
    case Kind::kConst:
      return e.value() < 0.0 || std::signbit(e.value()) ? 0 : 5;
    default:
      return 5;
  }
}

void print(const ShapeExpr& e, std::string& out);

void print_wrapped(const ShapeExpr& e, bool wrap, std::string& out) {
  if (wrap) out += '(';
  print(e, out);
  if (wrap) out += ')';
}

void print(const ShapeExpr& e, std::string& out) {
  switch (e.kind()) {
    case Kind::kConst:
      out += format_double(e.value());
      return;
    case Kind::kVar:
      out += e.var() == Var::kX ? "x" : e.var() == Var::kY ? "y" : "t";
      return;
    case Kind::kNeg:
      out += '-';
      print_wrapped(e.children()[0], precedence(e.children()[0]) < 3, out);
      return;
    case Kind::kAdd:
    case Kind::kSub:
    case Kind::kMul:
    case Kind::kDiv: {
      const int p = precedence(e);
      const char op = e.kind() == Kind::kAdd   ? '+'
                      : e.kind() == Kind::kSub ? '-'
                      : e.kind() == Kind::kMul ? '*'
                                               : '/';
      print_wrapped(e.children()[0], precedence(e.children()[0]) < p, out);
      if (p == 1) {
        out += ' ';
        out += op;
        out += ' ';
      } else {
        out += op;
      }
      print_wrapped(e.children()[1], precedence(e.children()[1]) <= p, out);
      return;
    }
    case Kind::kPow:
      print_wrapped(e.children()[0], precedence(e.children()[0]) <= 4, out);
      out += '^';
      print_wrapped(e.children()[1], precedence(e.children()[1]) < 3, out);
      return;
    case Kind::kCall:
      out += func_name(e.func());
      out += '(';
      print(e.children()[0], out);
      out += ')';
      return;
    case Kind::kPiecewise: {
      out += "piecewise(";
      const auto& guards = e.guards();
      for (std::size_t i = 0; i < guards.size(); ++i) {
        out += guards[i].inclusive ? "t <= " : "t < ";
        out += format_double(guards[i].threshold);
        out += ": ";
        print(e.children()[i], out);
        out += ", ";
      }
      print(e.children().back(), out);
      out += ')';
      return;
    }
  }
}

double checked(double v, const char* what) {
  if (!std::isfinite(v)) eval_error(std::string("non-finite result in ") + what);
  return v;
}

}  // namespace

ShapeExpr parse_shape(std::string_view source) { return Parser(source).parse(); }

std::string to_string(const ShapeExpr& expr) {
  std::string out;
  print(expr, out);
  return out;
}

double evaluate(const ShapeExpr& e, double x, double y, double t) {
  const auto& c = e.children();
  switch (e.kind()) {
    case Kind::kConst:
      return e.value();
    case Kind::kVar:
      return e.var() == Var::kX ? x : e.var() == Var::kY ? y : t;
    case Kind::kNeg:
      return -evaluate(c[0], x, y, t);
    case Kind::kAdd:
      return evaluate(c[0], x, y, t) + evaluate(c[1], x, y, t);
    case Kind::kSub:
      return evaluate(c[0], x, y, t) - evaluate(c[1], x, y, t);
    case Kind::kMul:
      return evaluate(c[0], x, y, t) * evaluate(c[1], x, y, t);
    case Kind::kDiv: {
      const double den = evaluate(c[1], x, y, t);
      if (den == 0.0) eval_error("division by zero");
      return checked(evaluate(c[0], x, y, t) / den, "division");
    }
    case Kind::kPow: {
      const double base = evaluate(c[0], x, y, t);
      const double ex = evaluate(c[1], x, y, t);
      if (base < 0.0 && ex != std::floor(ex)) eval_error("negative base with fractional exponent");
      if (base == 0.0 && ex < 0.0) eval_error("zero raised to a negative power");
      return checked(std::pow(base, ex), "power");
    }
    case Kind::kCall: {
      const double a = evaluate(c[0], x, y, t);
      switch (e.func()) {
        case Func::kSin: return std::sin(a);
        case Func::kCos: return std::cos(a);
        case Func::kExp: return checked(std::exp(a), "exp");
        case Func::kLog:
          if (a <= 0.0) eval_error("log of a non-positive value");
          return std::log(a);
        case Func::kSqrt:
          if (a < 0.0) eval_error("sqrt of a negative value");
          return std::sqrt(a);
        case Func::kAbs: return std::abs(a);
        case Func::kSign: return a > 0.0 ? 1.0 : a < 0.0 ? -1.0 : 0.0;
      }
      return 0.0;
    }
    case Kind::kPiecewise: {
      const auto& guards = e.guards();
      for (std::size_t i = 0; i < guards.size(); ++i) {
        const bool hit = guards[i].inclusive ? t <= guards[i].threshold : t < guards[i].threshold;
        if (hit) return evaluate(c[i], x, y, t);
      }
      return evaluate(c.back(), x, y, t);
    }
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// Simplifying algebra

ShapeExpr operator+(const ShapeExpr& a, const ShapeExpr& b) {
  if (a.kind() == Kind::kConst && b.kind() == Kind::kConst) return ShapeExpr::constant(a.value() + b.value());
  if (a.is_constant(0.0)) return b;
  if (b.is_constant(0.0)) return a;
  return ShapeExpr::binary(Kind::kAdd, a, b);
}

ShapeExpr operator-(const ShapeExpr& a, const ShapeExpr& b) {
  if (a.kind() == Kind::kConst && b.kind() == Kind::kConst) return ShapeExpr::constant(a.value() - b.value());
  if (b.is_constant(0.0)) return a;
  if (a.is_constant(0.0)) return -b;
  return ShapeExpr::binary(Kind::kSub, a, b);
}

ShapeExpr operator*(const ShapeExpr& a, const ShapeExpr& b) {
  if (a.kind() == Kind::kConst && b.kind() == Kind::kConst) return ShapeExpr::constant(a.value() * b.value());
  if (a.is_constant(0.0) || b.is_constant(0.0)) return ShapeExpr::constant(0.0);
  if (a.is_constant(1.0)) return b;
  if (b.is_constant(1.0)) return a;
  if (a.is_constant(-1.0)) return -b;
  if (b.is_constant(-1.0)) return -a;
  return ShapeExpr::binary(Kind::kMul, a, b);
}

ShapeExpr operator/(const ShapeExpr& a, const ShapeExpr& b) {
  if (a.is_constant(0.0)) return ShapeExpr::constant(0.0);
  if (b.is_constant(1.0)) return a;
  if (a.kind() == Kind::kConst && b.kind() == Kind::kConst && b.value() != 0.0) {
    return ShapeExpr::constant(a.value() / b.value());
  }
  return ShapeExpr::binary(Kind::kDiv, a, b);
}

ShapeExpr operator-(const ShapeExpr& a) {
  if (a.kind() == Kind::kNeg) return a.children()[0];
  return ShapeExpr::negate(a);
}

namespace {

ShapeExpr pow_expr(const ShapeExpr& base, const ShapeExpr& ex) {
  if (ex.is_constant(1.0)) return base;
  if (ex.is_constant(0.0)) return ShapeExpr::constant(1.0);
  return ShapeExpr::binary(Kind::kPow, base, ex);
}

bool depends_on(const ShapeExpr& e, Var v) {
  if (e.kind() == Kind::kVar) return e.var() == v;
  for (const auto& c : e.children()) {
    if (depends_on(c, v)) return true;
  }
  return false;
}

}  // namespace

ShapeExpr derivative(const ShapeExpr& e, Var v) {
  const auto& c = e.children();
  const ShapeExpr zero = ShapeExpr::constant(0.0);
  switch (e.kind()) {
    case Kind::kConst:
      return zero;
    case Kind::kVar:
      return ShapeExpr::constant(e.var() == v ? 1.0 : 0.0);
    case Kind::kNeg:
      return -derivative(c[0], v);
    case Kind::kAdd:
      return derivative(c[0], v) + derivative(c[1], v);
    case Kind::kSub:
      return derivative(c[0], v) - derivative(c[1], v);
    case Kind::kMul:
      return derivative(c[0], v) * c[1] + c[0] * derivative(c[1], v);
    case Kind::kDiv: {
      const ShapeExpr du = derivative(c[0], v);
      const ShapeExpr dw = derivative(c[1], v);
      if (dw.is_constant(0.0)) return du / c[1];
      return (du * c[1] - c[0] * dw) / pow_expr(c[1], ShapeExpr::constant(2.0));
    }
    case Kind::kPow: {
      const ShapeExpr& base = c[0];
      const ShapeExpr& ex = c[1];
      const ShapeExpr db = derivative(base, v);
      if (!depends_on(ex, v)) {
        // d(u^k) = k u^(k-1) u'
        const ShapeExpr lowered =
            ex.kind() == Kind::kConst ? ShapeExpr::constant(ex.value() - 1.0) : ex - ShapeExpr::constant(1.0);
        return ex * pow_expr(base, lowered) * db;
      }
      // d(u^w) = u^w (w' log u + w u'/u)
      const ShapeExpr dw = derivative(ex, v);
      return e * (dw * ShapeExpr::call(Func::kLog, base) + ex * db / base);
    }
    case Kind::kCall: {
      const ShapeExpr& u = c[0];
      const ShapeExpr du = derivative(u, v);
      if (du.is_constant(0.0)) return zero;
      switch (e.func()) {
        case Func::kSin: return ShapeExpr::call(Func::kCos, u) * du;
        case Func::kCos: return -ShapeExpr::call(Func::kSin, u) * du;
        case Func::kExp: return e * du;
        case Func::kLog: return du / u;
        case Func::kSqrt: return du / (ShapeExpr::constant(2.0) * e);
        // Subgradient 0 at the kink: sign(0) = 0.
        case Func::kAbs: return ShapeExpr::call(Func::kSign, u) * du;
        case Func::kSign: return zero;
      }
      return zero;
    }
    case Kind::kPiecewise: {
      std::vector<ShapeExpr> branches;
      branches.reserve(c.size());
      for (const auto& b : c) branches.push_back(derivative(b, v));
      return ShapeExpr::piecewise(e.guards(), std::move(branches));
    }
  }
  return zero;
}

ShapeGradient differentiate(const ShapeExpr& expr) {
  return {derivative(expr, Var::kX), derivative(expr, Var::kY), derivative(expr, Var::kT)};
}

ShapeExpr substitute(const ShapeExpr& e, const Substitution& sub) {
  const auto& c = e.children();
  switch (e.kind()) {
    case Kind::kConst:
      return e;
    case Kind::kVar:
      return e.var() == Var::kX ? sub.x : e.var() == Var::kY ? sub.y : sub.t;
    case Kind::kNeg:
      return ShapeExpr::negate(substitute(c[0], sub));
    case Kind::kCall:
      return ShapeExpr::call(e.func(), substitute(c[0], sub));
    case Kind::kPiecewise: {
      std::vector<ShapeExpr> branches;
      for (const auto& b : c) branches.push_back(substitute(b, sub));
      return ShapeExpr::piecewise(e.guards(), std::move(branches));
    }
    default:
      return ShapeExpr::binary(e.kind(), substitute(c[0], sub), substitute(c[1], sub));
  }
}

ShapeExpr scale_shift(const ShapeExpr& base, const ShapeParams& p) {
  using E = ShapeExpr;
  Substitution sub;
  sub.x = (E::variable(Var::kX) - E::constant(p.x0)) / E::constant(p.sx);
  sub.y = (E::variable(Var::kY) - E::constant(p.y0)) / E::constant(p.sy);
  sub.t = E::constant(p.time_scale) * E::variable(Var::kT);
  return E::constant(p.amplitude) * substitute(base, sub) + E::constant(p.offset);
}

ShapeExpr anchor_through(const ShapeExpr& expr, const Vec3& anchor) {
  Substitution at;
  at.x = ShapeExpr::constant(anchor.x());
  at.y = ShapeExpr::constant(anchor.y());
  return expr - substitute(expr, at) + ShapeExpr::constant(anchor.z());
}

ShapeField::ShapeField(ShapeExpr expr) : expr_(std::move(expr)), gradient_(differentiate(expr_)) {}

SurfaceSample ShapeField::sample(double x, double y, double t) const {
  SurfaceSample s;
  s.z = evaluate(expr_, x, y, t);
  s.dfdx = evaluate(gradient_.dfdx, x, y, t);
  s.dfdy = evaluate(gradient_.dfdy, x, y, t);
  s.normal = Vec3(-s.dfdx, -s.dfdy, 1.0).normalized();
  return s;
}

const std::vector<BuiltinShape>& builtin_shapes() {
  static const std::vector<BuiltinShape> shapes = {
      {"mesh3x3_target", "x*y*cos(y)", "static saddle-like target for the 3x3 mesh"},
      {"mesh8x8_target", "cos(x + t) + cos(x + y + t)", "travelling wave target for the 8x8 mesh"},
      {"mesh20x20_target", "x^2 - y^2", "static hyperbolic paraboloid for the 20x20 mesh"},
      {"piecewise_4x8",
       "piecewise(t <= 10: x^2 - y^2, t <= 15: x^2, t <= 25: y^2, -y^2)",
       "time-switched target for the 4x8 thigh cover"},
      {"paraboloid", "x^2 + y^2", "initialization surface"},
      {"hyperbolic_paraboloid", "x*y", "initialization surface (saddle)"},
      {"cylinder", "1 - sqrt(1 - y^2)", "initialization surface (graph form; unit radius, axis along x)"},
      {"flat", "0", "plane z = 0"},
  };
  return shapes;
}

const BuiltinShape& builtin_shape(std::string_view name) {
  for (const auto& s : builtin_shapes()) {
    if (s.name == name) return s;
  }
  throw Error(ErrorCode::kUnknownShape, "unknown builtin shape '" + std::string(name) + "'");
}

}  // namespace morphmesh
