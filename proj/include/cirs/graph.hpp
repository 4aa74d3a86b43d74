#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cirs/params.hpp"
#include "cirs/tensor.hpp"

namespace cirs::nn {

enum class Op : std::uint8_t {
  kInput,
  kParam,
  kConst,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kMatmul,
  kTranspose,
  kReshape,
  kRow,
  kSigmoid,
  kRelu,
  kExp,
  kLog,
  kSoftmax,     // row-wise on rank 2, whole vector on rank 1
  kLogSoftmax,  // same layout as kSoftmax
  kConcat,      // axis 0; rank-1 inputs chain, rank-2 inputs stack rows
  kSum,         // all elements -> scalar
  kMean,        // all elements -> scalar
  kAffine,      // c0 * x + c1
};

const char* op_name(Op op);

struct Val {
  int id = -1;
};

// Reverse-mode tape. Nodes are appended in topological order and evaluated
// eagerly; recompute() re-runs the tape against current input/param values,
// backward() accumulates gradients into the referenced ParamStores.
class Graph {
 public:
  Val input(std::string name, Tensor v);
  Val constant(Tensor v);
  Val constant(double v) { return constant(Tensor::scalar(v)); }
  Val param(ParamStore& store, std::size_t index);
  Val param(ParamStore& store, std::string_view name) { return param(store, store.index(name)); }

  Val add(Val a, Val b);
  Val sub(Val a, Val b);
  Val mul(Val a, Val b);
  Val div(Val a, Val b);
  Val matmul(Val a, Val b);
  Val transpose(Val x);
  Val reshape(Val x, std::vector<std::size_t> shape);
  Val row(Val x, std::size_t index);
  Val sigmoid(Val x);
  Val relu(Val x);
  Val exp(Val x);
  Val log(Val x);
  Val softmax(Val x);
  Val log_softmax(Val x);
  Val concat(std::span<const Val> parts);
  Val concat(Val a, Val b);
  Val sum(Val x);
  Val mean(Val x);
  Val affine(Val x, double mul, double add);
  Val scale(Val x, double c) { return affine(x, c, 0.0); }
  Val neg(Val x) { return affine(x, -1.0, 0.0); }

  // Composed helpers.
  Val softplus(Val x);                              // log(1 + exp(x))
  Val square(Val x) { return mul(x, x); }
  Val min(Val a, Val b);                            // a - relu(a - b)
  Val max(Val a, Val b);                            // a + relu(b - a)
  Val clip(Val x, double lo, double hi);
  Val linear(Val x, Val w, Val b);                  // x@w + ones@b, b is [1,n]

  void set_input(std::string_view name, Tensor v);
  void recompute();

  const Tensor& value(Val v) const;
  double scalar(Val v) const;

  // Accumulates into the referenced stores' grad slots; callers own zeroing.
  void backward_accumulate(Val out);
  // Zeroes the grads of every store this graph references, then accumulates.
  void backward(Val out);

  // Central finite differences over every referenced parameter element vs the
  // gradients from backward(). Returns the max relative error.
  double gradient_check(Val out, double epsilon);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Op op;
    int a = -1;
    int b = -1;
    std::vector<int> extra;   // kConcat inputs beyond the first two
    double c0 = 0.0;
    double c1 = 0.0;
    std::size_t idx = 0;      // kRow index
    ParamStore* store = nullptr;
    std::size_t param = 0;
    std::string name;         // kInput only
    Tensor value;             // kParam reads the store instead
    Tensor grad;
    bool needs_grad = false;
  };

  const Tensor& val(int id) const;
  Tensor& grad_ref(int id);
  Val push(Node n);
  void compute(Node& n);
  void backprop(int id);
  void check_same_shape(const Node& n, const Tensor& a, const Tensor& b, int id) const;
  [[noreturn]] void fail(int id, const std::string& msg) const;

  std::vector<Node> nodes_;
};

}  // namespace cirs::nn
