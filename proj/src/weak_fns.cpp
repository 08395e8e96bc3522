#include "greylag/weak_fns.hpp"

#include <cmath>

#include "greylag/errors.hpp"

namespace greylag {

std::vector<std::optional<Value>> WeakFn::vjp(InputValues inputs, const Value& output,
                                              const Value& adjoint,
                                              const std::vector<bool>& needed) const {
  if (!vjp_) throw NonDifferentiableError("weak function '" + name_ + "' has no vjp");
  return vjp_(inputs, output, adjoint, needed);
}

namespace weak {

namespace {

Value copy_of(const Value& v) {
  return Value(v.shape(), std::vector<double>(v.data().begin(), v.data().end()));
}

/// Output shape of a broadcasting elementwise combination.
Shape broadcast_shape(InputValues inputs) {
  const Value* widest = inputs[0];
  for (const Value* v : inputs) {
    if (v->size() > widest->size()) widest = v;
  }
  for (const Value* v : inputs) {
    if (v->size() != 1 && v->size() != widest->size()) {
      throw ShapeError("inputs of sizes " + std::to_string(v->size()) + " and " +
                       std::to_string(widest->size()) + " do not broadcast");
    }
  }
  return widest->shape();
}

/// Adjoint of a broadcast input: summed if the input was size 1.
Value reduce_adjoint(const Value& input, const Value& adjoint, double scale) {
  if (input.size() == 1 && adjoint.size() != 1) {
    double total = 0.0;
    for (double a : adjoint.data()) total += a;
    return Value(input.shape(), {scale * total});
  }
  Value out = copy_of(adjoint);
  if (scale != 1.0) {
    for (double& a : out.data()) a *= scale;
  }
  return Value(input.shape(), std::vector<double>(out.data().begin(), out.data().end()));
}

template <typename F, typename DF>
WeakFnPtr elementwise(std::string name, F f, DF df) {
  auto eval = [f](InputValues in) {
    Value out = copy_of(*in[0]);
    for (double& x : out.data()) x = f(x);
    return out;
  };
  auto vjp = [df](InputValues in, const Value& out, const Value& adj,
                  const std::vector<bool>&) {
    Value grad = copy_of(adj);
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= df((*in[0])[i], out[i]);
    return std::vector<std::optional<Value>>{std::move(grad)};
  };
  return std::make_shared<const WeakFn>(std::move(name), eval, vjp);
}

}  // namespace

WeakFnPtr matvec() {
  auto eval = [](InputValues in) {
    const auto a = in[0]->mat();
    if (std::size_t(a.cols()) != in[1]->size()) {
      throw ShapeError("matvec: matrix has " + std::to_string(a.cols()) +
                       " columns, vector has " + std::to_string(in[1]->size()) + " elements");
    }
    return Value::vector(Eigen::VectorXd(a * in[1]->vec()));
  };
  auto vjp = [](InputValues in, const Value&, const Value& adj,
                const std::vector<bool>& needed) {
    std::vector<std::optional<Value>> out(2);
    const auto a = in[0]->mat();
    if (needed[0]) out[0] = Value::matrix(adj.vec() * in[1]->vec().transpose());
    if (needed[1]) {
      out[1] = Value(in[1]->shape(), std::vector<double>(in[1]->size()));
      out[1]->vec() = a.transpose() * adj.vec();
    }
    return out;
  };
  return std::make_shared<const WeakFn>("matvec", eval, vjp);
}

WeakFnPtr affine(std::vector<double> coefficients, double constant) {
  auto eval = [coefficients, constant](InputValues in) {
    if (in.size() != coefficients.size()) {
      throw ShapeError("affine: expected " + std::to_string(coefficients.size()) + " inputs");
    }
    Value out = Value::zeros(broadcast_shape(in));
    for (std::size_t i = 0; i < out.size(); ++i) {
      double acc = constant;
      for (std::size_t k = 0; k < in.size(); ++k) acc += coefficients[k] * in[k]->bcast(i);
      out[i] = acc;
    }
    return out;
  };
  auto vjp = [coefficients](InputValues in, const Value&, const Value& adj,
                            const std::vector<bool>& needed) {
    std::vector<std::optional<Value>> out(in.size());
    for (std::size_t k = 0; k < in.size(); ++k) {
      if (needed[k]) out[k] = reduce_adjoint(*in[k], adj, coefficients[k]);
    }
    return out;
  };
  return std::make_shared<const WeakFn>("affine", eval, vjp);
}

WeakFnPtr add() {
  auto eval = [](InputValues in) {
    Value out = Value::zeros(broadcast_shape(in));
    for (std::size_t i = 0; i < out.size(); ++i) {
      double acc = 0.0;
      for (const Value* v : in) acc += v->bcast(i);
      out[i] = acc;
    }
    return out;
  };
  auto vjp = [](InputValues in, const Value&, const Value& adj,
                const std::vector<bool>& needed) {
    std::vector<std::optional<Value>> out(in.size());
    for (std::size_t k = 0; k < in.size(); ++k) {
      if (needed[k]) out[k] = reduce_adjoint(*in[k], adj, 1.0);
    }
    return out;
  };
  return std::make_shared<const WeakFn>("add", eval, vjp);
}

WeakFnPtr identity() {
  return elementwise("identity", [](double x) { return x; }, [](double, double) { return 1.0; });
}

WeakFnPtr exp() {
  return elementwise("exp", [](double x) { return std::exp(x); },
                     [](double, double y) { return y; });
}

WeakFnPtr log() {
  return elementwise("log", [](double x) { return std::log(x); },
                     [](double x, double) { return 1.0 / x; });
}

WeakFnPtr logistic() {
  return elementwise(
      "logistic",
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

WeakFnPtr sum() {
  auto eval = [](InputValues in) {
    double total = 0.0;
    for (double x : in[0]->data()) total += x;
    return Value::scalar(total);
  };
  auto vjp = [](InputValues in, const Value&, const Value& adj, const std::vector<bool>&) {
    Value grad = Value::zeros(in[0]->shape());
    for (double& g : grad.data()) g = adj.item();
    return std::vector<std::optional<Value>>{std::move(grad)};
  };
  return std::make_shared<const WeakFn>("sum", eval, vjp);
}

WeakFnPtr dot() {
  auto eval = [](InputValues in) {
    if (in[0]->size() != in[1]->size()) throw ShapeError("dot: size mismatch");
    return Value::scalar(in[0]->vec().dot(in[1]->vec()));
  };
  auto vjp = [](InputValues in, const Value&, const Value& adj,
                const std::vector<bool>& needed) {
    std::vector<std::optional<Value>> out(2);
    for (int k = 0; k < 2; ++k) {
      if (!needed[k]) continue;
      Value g = copy_of(*in[1 - k]);
      for (double& x : g.data()) x *= adj.item();
      out[k] = Value(in[k]->shape(), std::vector<double>(g.data().begin(), g.data().end()));
    }
    return out;
  };
  return std::make_shared<const WeakFn>("dot", eval, vjp);
}

WeakFnPtr quad_form() {
  auto eval = [](InputValues in) {
    const auto k = in[1]->mat();
    if (std::size_t(k.rows()) != in[0]->size() || k.rows() != k.cols()) {
      throw ShapeError("quad_form: penalty does not match coefficient size");
    }
    return Value::scalar(in[0]->vec().dot(k * in[0]->vec()));
  };
  auto vjp = [](InputValues in, const Value&, const Value& adj,
                const std::vector<bool>& needed) {
    std::vector<std::optional<Value>> out(2);
    const auto k = in[1]->mat();
    const auto b = in[0]->vec();
    const double a = adj.item();
    if (needed[0]) {
      out[0] = Value(in[0]->shape(), std::vector<double>(in[0]->size()));
      out[0]->vec() = a * (k * b + k.transpose() * b);
    }
    if (needed[1]) out[1] = Value::matrix(Eigen::MatrixXd(a * b * b.transpose()));
    return out;
  };
  return std::make_shared<const WeakFn>("quad_form", eval, vjp);
}

WeakFnPtr bijector_forward(Bijector bijector) {
  return elementwise(
      std::string(bijector_name(bijector.kind)) + "_forward",
      [bijector](double u) { return bijector.forward(u); },
      [bijector](double u, double) { return bijector.forward_derivative(u); });
}

WeakFnPtr custom(std::string name, WeakFn::Eval eval, WeakFn::Vjp vjp) {
  return std::make_shared<const WeakFn>(std::move(name), std::move(eval), std::move(vjp));
}

}  // namespace weak

}  // namespace greylag
