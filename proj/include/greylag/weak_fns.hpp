#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "greylag/distributions.hpp"
#include "greylag/value.hpp"

namespace greylag {

using InputValues = std::span<const Value* const>;

/// Deterministic function computing a weak node from its inputs, with an
/// optional vector-Jacobian product for reverse-mode gradients.
class WeakFn {
 public:
  using Eval = std::function<Value(InputValues)>;
  /// Returns one adjoint per input. Only inputs flagged in `needed` must be
  /// filled; a missing entry for a needed input means the function is not
  /// differentiable in it.
  using Vjp = std::function<std::vector<std::optional<Value>>(
      InputValues inputs, const Value& output, const Value& adjoint,
      const std::vector<bool>& needed)>;

  WeakFn(std::string name, Eval eval, Vjp vjp = {})
      : name_(std::move(name)), eval_(std::move(eval)), vjp_(std::move(vjp)) {}

  const std::string& name() const noexcept { return name_; }
  bool has_vjp() const noexcept { return bool(vjp_); }

  Value operator()(InputValues inputs) const { return eval_(inputs); }

  std::vector<std::optional<Value>> vjp(InputValues inputs, const Value& output,
                                        const Value& adjoint,
                                        const std::vector<bool>& needed) const;

 private:
  std::string name_;
  Eval eval_;
  Vjp vjp_;
};

using WeakFnPtr = std::shared_ptr<const WeakFn>;

namespace weak {

/// A (n x p) times x (p) -> (n).
WeakFnPtr matvec();
/// constant + sum_i coefficients[i] * input_i, size-1 inputs broadcast.
WeakFnPtr affine(std::vector<double> coefficients, double constant = 0.0);
/// Sum of all inputs, size-1 inputs broadcast.
WeakFnPtr add();
WeakFnPtr identity();
WeakFnPtr exp();
WeakFnPtr log();
WeakFnPtr logistic();
/// Sum of the elements, scalar result.
WeakFnPtr sum();
WeakFnPtr dot();
/// beta' K beta, inputs (beta, K).
WeakFnPtr quad_form();
/// Elementwise bijector forward map.
WeakFnPtr bijector_forward(Bijector bijector);

/// Custom function without a vjp (not differentiable).
WeakFnPtr custom(std::string name, WeakFn::Eval eval, WeakFn::Vjp vjp = {});

}  // namespace weak

}  // namespace greylag
