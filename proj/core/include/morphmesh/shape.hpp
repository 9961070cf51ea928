#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "morphmesh/se3.hpp"

namespace morphmesh {

// Immutable expression tree over the variables x, y, t. Copies share nodes.
//
// Grammar (see docs/shape_grammar.md):
//   expr     := term (('+' | '-') term)*
//   term     := unary (('*' | '/') unary)*
//   unary    := '-' unary | power
//   power    := primary ('^' unary)?
//   primary  := number | 'x' | 'y' | 't' | func '(' expr ')' | '(' expr ')'
//             | 'piecewise' '(' (guard ':' expr ',')* expr ')'
//   guard    := 't' ('<=' | '<') number
class ShapeExpr {
 public:
  enum class Kind { kConst, kVar, kNeg, kAdd, kSub, kMul, kDiv, kPow, kCall, kPiecewise };
  enum class Var { kX, kY, kT };
  enum class Func { kSin, kCos, kExp, kLog, kSqrt, kAbs, kSign };

  struct Guard {
    double threshold = 0.0;
    bool inclusive = true;  // t <= threshold when true, t < threshold otherwise
  };

  ShapeExpr();  // the constant 0

  static ShapeExpr constant(double value);
  static ShapeExpr variable(Var var);
  static ShapeExpr negate(ShapeExpr operand);
  static ShapeExpr binary(Kind kind, ShapeExpr lhs, ShapeExpr rhs);
  static ShapeExpr call(Func func, ShapeExpr arg);
  // `branches` has guards.size() + 1 entries; the last one is the fallback.
  static ShapeExpr piecewise(std::vector<Guard> guards, std::vector<ShapeExpr> branches);

  Kind kind() const;
  double value() const;
  Var var() const;
  Func func() const;
  const std::vector<ShapeExpr>& children() const;
  const std::vector<Guard>& guards() const;

  bool is_constant(double v) const { return kind() == Kind::kConst && value() == v; }

  friend bool operator==(const ShapeExpr& a, const ShapeExpr& b);

 private:
  struct Node;
  explicit ShapeExpr(std::shared_ptr<const Node> node);
  std::shared_ptr<const Node> node_;
};

ShapeExpr parse_shape(std::string_view source);
std::string to_string(const ShapeExpr& expr);

// Throws Error(kEvalError) on sqrt/log of a negative, division by zero, or a
// non-finite result.
double evaluate(const ShapeExpr& expr, double x, double y, double t);

// Simplifying constructors used by differentiation and transformation.
ShapeExpr operator+(const ShapeExpr& a, const ShapeExpr& b);
ShapeExpr operator-(const ShapeExpr& a, const ShapeExpr& b);
ShapeExpr operator*(const ShapeExpr& a, const ShapeExpr& b);
ShapeExpr operator/(const ShapeExpr& a, const ShapeExpr& b);
ShapeExpr operator-(const ShapeExpr& a);

ShapeExpr derivative(const ShapeExpr& expr, ShapeExpr::Var var);

struct ShapeGradient {
  ShapeExpr dfdx;
  ShapeExpr dfdy;
  ShapeExpr dfdt;
};

ShapeGradient differentiate(const ShapeExpr& expr);

struct Substitution {
  ShapeExpr x = ShapeExpr::variable(ShapeExpr::Var::kX);
  ShapeExpr y = ShapeExpr::variable(ShapeExpr::Var::kY);
  ShapeExpr t = ShapeExpr::variable(ShapeExpr::Var::kT);
};

// Replaces every variable with the given expression. Piecewise guards keep
// testing the raw time value, so `t` substitutions apply only to branches.
ShapeExpr substitute(const ShapeExpr& expr, const Substitution& sub);

// amplitude * f((x - x0)/sx, (y - y0)/sy, time_scale * t) + offset
struct ShapeParams {
  double amplitude = 1.0;
  double x0 = 0.0;
  double y0 = 0.0;
  double sx = 1.0;
  double sy = 1.0;
  double time_scale = 1.0;
  double offset = 0.0;
};

ShapeExpr scale_shift(const ShapeExpr& base, const ShapeParams& params);

// expr - expr(x = ax, y = ay) + az: the surface passes through (ax, ay, az) at
// every instant.
ShapeExpr anchor_through(const ShapeExpr& expr, const Vec3& anchor);

struct SurfaceSample {
  double z = 0.0;
  double dfdx = 0.0;
  double dfdy = 0.0;
  Vec3 normal = Vec3::UnitZ();
};

// A shape expression with its symbolic partials computed once.
class ShapeField {
 public:
  ShapeField() : ShapeField(ShapeExpr()) {}
  explicit ShapeField(ShapeExpr expr);

  const ShapeExpr& expr() const { return expr_; }
  const ShapeGradient& gradient() const { return gradient_; }

  double height(double x, double y, double t) const { return evaluate(expr_, x, y, t); }
  // Upward graph normal (-f_x, -f_y, 1) / |.|.
  SurfaceSample sample(double x, double y, double t) const;

 private:
  ShapeExpr expr_;
  ShapeGradient gradient_;
};

struct BuiltinShape {
  std::string name;
  std::string source;
  std::string description;
};

const std::vector<BuiltinShape>& builtin_shapes();
// Throws Error(kUnknownShape).
const BuiltinShape& builtin_shape(std::string_view name);

}  // namespace morphmesh
