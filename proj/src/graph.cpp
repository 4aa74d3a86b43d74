#include "cirs/graph.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace cirs::nn {

const char* op_name(Op op) {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kParam: return "param";
    case Op::kConst: return "const";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kMatmul: return "matmul";
    case Op::kTranspose: return "transpose";
    case Op::kReshape: return "reshape";
    case Op::kRow: return "row";
    case Op::kSigmoid: return "sigmoid";
    case Op::kRelu: return "relu";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kSoftmax: return "softmax";
    case Op::kLogSoftmax: return "log_softmax";
    case Op::kConcat: return "concat";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kAffine: return "affine";
  }
  return "?";
}

void Graph::fail(int id, const std::string& msg) const {
  std::string where = "node";
  if (id >= 0 && id < static_cast<int>(nodes_.size())) {
    where = "node " + std::to_string(id) + " (" + op_name(nodes_[id].op);
    if (!nodes_[id].name.empty()) where += " '" + nodes_[id].name + "'";
    where += ")";
  }
  throw std::runtime_error("graph: " + where + ": " + msg);
}

const Tensor& Graph::val(int id) const {
  const Node& n = nodes_[id];
  if (n.op == Op::kParam) return n.store->value(n.param);
  return n.value;
}

Tensor& Graph::grad_ref(int id) {
  Node& n = nodes_[id];
  if (n.op == Op::kParam) return n.store->grad(n.param);
  return n.grad;
}

Val Graph::push(Node n) {
  int id = static_cast<int>(nodes_.size());
  auto in_range = [&](int v) {
    if (v >= 0 && v >= id) throw std::runtime_error("graph: node operand out of range");
  };
  in_range(n.a);
  in_range(n.b);
  for (int e : n.extra) in_range(e);
  switch (n.op) {
    case Op::kInput:
    case Op::kConst:
      break;
    case Op::kParam:
      n.needs_grad = true;
      break;
    default: {
      bool g = false;
      if (n.a >= 0) g = g || nodes_[n.a].needs_grad;
      if (n.b >= 0) g = g || nodes_[n.b].needs_grad;
      for (int e : n.extra) g = g || nodes_[e].needs_grad;
      n.needs_grad = g;
    }
  }
  nodes_.push_back(std::move(n));
  try {
    compute(nodes_.back());
  } catch (...) {
    nodes_.pop_back();
    throw;
  }
  return Val{id};
}

void Graph::check_same_shape(const Node&, const Tensor& a, const Tensor& b, int id) const {
  if (!a.same_shape(b)) {
    fail(id, "shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
}

Val Graph::input(std::string name, Tensor v) {
  if (name.empty()) throw std::invalid_argument("graph: input name must be non-empty");
  for (const Node& n : nodes_) {
    if (n.op == Op::kInput && n.name == name) {
      throw std::invalid_argument("graph: duplicate input '" + name + "'");
    }
  }
  Node n;
  n.op = Op::kInput;
  n.name = std::move(name);
  n.value = std::move(v);
  return push(std::move(n));
}

Val Graph::constant(Tensor v) {
  Node n;
  n.op = Op::kConst;
  n.value = std::move(v);
  return push(std::move(n));
}

Val Graph::param(ParamStore& store, std::size_t index) {
  if (index >= store.size()) throw std::out_of_range("graph: param index out of range");
  Node n;
  n.op = Op::kParam;
  n.store = &store;
  n.param = index;
  return push(std::move(n));
}

Val Graph::add(Val a, Val b) { return push({.op = Op::kAdd, .a = a.id, .b = b.id}); }
Val Graph::sub(Val a, Val b) { return push({.op = Op::kSub, .a = a.id, .b = b.id}); }
Val Graph::mul(Val a, Val b) { return push({.op = Op::kMul, .a = a.id, .b = b.id}); }
Val Graph::div(Val a, Val b) { return push({.op = Op::kDiv, .a = a.id, .b = b.id}); }
Val Graph::matmul(Val a, Val b) { return push({.op = Op::kMatmul, .a = a.id, .b = b.id}); }
Val Graph::transpose(Val x) { return push({.op = Op::kTranspose, .a = x.id}); }

Val Graph::reshape(Val x, std::vector<std::size_t> shape) {
  Node n;
  n.op = Op::kReshape;
  n.a = x.id;
  n.value = Tensor(std::move(shape));
  return push(std::move(n));
}

Val Graph::row(Val x, std::size_t index) {
  Node n;
  n.op = Op::kRow;
  n.a = x.id;
  n.idx = index;
  return push(std::move(n));
}

Val Graph::sigmoid(Val x) { return push({.op = Op::kSigmoid, .a = x.id}); }
Val Graph::relu(Val x) { return push({.op = Op::kRelu, .a = x.id}); }
Val Graph::exp(Val x) { return push({.op = Op::kExp, .a = x.id}); }
Val Graph::log(Val x) { return push({.op = Op::kLog, .a = x.id}); }
Val Graph::softmax(Val x) { return push({.op = Op::kSoftmax, .a = x.id}); }
Val Graph::log_softmax(Val x) { return push({.op = Op::kLogSoftmax, .a = x.id}); }

Val Graph::concat(std::span<const Val> parts) {
  if (parts.empty()) throw std::invalid_argument("graph: concat of zero tensors");
  Node n;
  n.op = Op::kConcat;
  n.a = parts[0].id;
  if (parts.size() > 1) n.b = parts[1].id;
  for (std::size_t i = 2; i < parts.size(); ++i) n.extra.push_back(parts[i].id);
  return push(std::move(n));
}

Val Graph::concat(Val a, Val b) {
  const Val parts[] = {a, b};
  return concat(parts);
}

Val Graph::sum(Val x) { return push({.op = Op::kSum, .a = x.id}); }
Val Graph::mean(Val x) { return push({.op = Op::kMean, .a = x.id}); }

Val Graph::affine(Val x, double mul, double add) {
  Node n;
  n.op = Op::kAffine;
  n.a = x.id;
  n.c0 = mul;
  n.c1 = add;
  return push(std::move(n));
}

Val Graph::softplus(Val x) { return log(affine(exp(x), 1.0, 1.0)); }

Val Graph::min(Val a, Val b) { return sub(a, relu(sub(a, b))); }
Val Graph::max(Val a, Val b) { return add(a, relu(sub(b, a))); }

Val Graph::clip(Val x, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("graph: clip with lo > hi");
  // lo + relu(x - lo) caps from below; hi - relu(hi - .) caps from above.
  Val below = affine(relu(affine(x, 1.0, -lo)), 1.0, lo);
  return affine(relu(affine(below, -1.0, hi)), -1.0, hi);
}

Val Graph::linear(Val x, Val w, Val b) {
  const Tensor& xv = val(x.id);
  const Tensor& bv = val(b.id);
  if (xv.rank() != 2 || bv.rank() != 2 || bv.rows() != 1) {
    throw std::invalid_argument("graph: linear expects x [m,k] and bias [1,n]");
  }
  Val ones = constant(Tensor::full({xv.rows(), 1}, 1.0));
  return add(matmul(x, w), matmul(ones, b));
}

void Graph::set_input(std::string_view name, Tensor v) {
  for (Node& n : nodes_) {
    if (n.op == Op::kInput && n.name == name) {
      if (!n.value.same_shape(v)) {
        throw std::invalid_argument("graph: input '" + std::string(name) + "' shape changed from " +
                                    n.value.shape_str() + " to " + v.shape_str());
      }
      n.value = std::move(v);
      return;
    }
  }
  throw std::invalid_argument("graph: unknown input '" + std::string(name) + "'");
}

void Graph::recompute() {
  for (Node& n : nodes_) compute(n);
}

const Tensor& Graph::value(Val v) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
    throw std::out_of_range("graph: bad value handle");
  }
  return val(v.id);
}

double Graph::scalar(Val v) const {
  const Tensor& t = value(v);
  if (t.size() != 1) {
    throw std::invalid_argument("graph: scalar() on tensor of shape " + t.shape_str());
  }
  return t[0];
}

void Graph::compute(Node& n) {
  int id = static_cast<int>(&n - nodes_.data());
  switch (n.op) {
    case Op::kInput:
    case Op::kParam:
    case Op::kConst:
      return;
    case Op::kAdd:
    case Op::kSub:
    case Op::kMul: {
      const Tensor& a = val(n.a);
      const Tensor& b = val(n.b);
      check_same_shape(n, a, b, id);
      if (!n.value.same_shape(a)) n.value = Tensor(a.shape());
      for (std::size_t i = 0; i < a.size(); ++i) {
        double v = n.op == Op::kAdd ? a[i] + b[i] : n.op == Op::kSub ? a[i] - b[i] : a[i] * b[i];
        n.value[i] = v;
      }
      return;
    }
    case Op::kDiv: {
      const Tensor& a = val(n.a);
      const Tensor& b = val(n.b);
      check_same_shape(n, a, b, id);
      if (!n.value.same_shape(a)) n.value = Tensor(a.shape());
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (b[i] == 0.0) fail(id, "division by zero at element " + std::to_string(i));
        n.value[i] = a[i] / b[i];
      }
      return;
    }
    case Op::kMatmul: {
      const Tensor& a = val(n.a);
      const Tensor& b = val(n.b);
      if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
        fail(id, "cannot multiply " + a.shape_str() + " by " + b.shape_str());
      }
      std::size_t m = a.rows(), k = a.cols(), p = b.cols();
      if (!(n.value.rank() == 2 && n.value.rows() == m && n.value.cols() == p)) {
        n.value = Tensor({m, p});
      } else {
        n.value.fill(0.0);
      }
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t t = 0; t < k; ++t) {
          double av = a[i * k + t];
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < p; ++j) n.value[i * p + j] += av * b[t * p + j];
        }
      }
      return;
    }
    case Op::kTranspose: {
      const Tensor& a = val(n.a);
      if (a.rank() != 2) fail(id, "transpose expects rank 2, got " + a.shape_str());
      std::size_t m = a.rows(), k = a.cols();
      if (!(n.value.rank() == 2 && n.value.rows() == k && n.value.cols() == m)) {
        n.value = Tensor({k, m});
      }
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) n.value[j * m + i] = a[i * k + j];
      return;
    }
    case Op::kReshape: {
      const Tensor& a = val(n.a);
      if (a.size() != n.value.size()) {
        fail(id, "cannot reshape " + a.shape_str() + " into " + n.value.shape_str());
      }
      std::copy(a.data().begin(), a.data().end(), n.value.data().begin());
      return;
    }
    case Op::kRow: {
      const Tensor& a = val(n.a);
      if (a.rank() == 1) {
        if (n.idx >= a.size()) fail(id, "row index " + std::to_string(n.idx) + " out of range for " + a.shape_str());
        if (n.value.size() != 1) n.value = Tensor({1});
        n.value[0] = a[n.idx];
        return;
      }
      if (a.rank() != 2 || n.idx >= a.rows()) {
        fail(id, "row index " + std::to_string(n.idx) + " out of range for " + a.shape_str());
      }
      std::size_t k = a.cols();
      if (!(n.value.rank() == 2 && n.value.rows() == 1 && n.value.cols() == k)) {
        n.value = Tensor({1, k});
      }
      for (std::size_t j = 0; j < k; ++j) n.value[j] = a[n.idx * k + j];
      return;
    }
    case Op::kSigmoid:
    case Op::kRelu:
    case Op::kExp: {
      const Tensor& a = val(n.a);
      if (!n.value.same_shape(a)) n.value = Tensor(a.shape());
      for (std::size_t i = 0; i < a.size(); ++i) {
        double x = a[i];
        double v;
        if (n.op == Op::kSigmoid) {
          v = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        } else if (n.op == Op::kRelu) {
          v = x > 0.0 ? x : 0.0;
        } else {
          v = std::exp(x);
        }
        n.value[i] = v;
      }
      return;
    }
    case Op::kLog: {
      const Tensor& a = val(n.a);
      if (!n.value.same_shape(a)) n.value = Tensor(a.shape());
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] <= 0.0) fail(id, "log of non-positive value at element " + std::to_string(i));
        n.value[i] = std::log(a[i]);
      }
      return;
    }
    case Op::kSoftmax:
    case Op::kLogSoftmax: {
      const Tensor& a = val(n.a);
      if (a.rank() > 2) fail(id, "softmax expects rank 1 or 2, got " + a.shape_str());
      if (!n.value.same_shape(a)) n.value = Tensor(a.shape());
      std::size_t rows = a.rank() == 2 ? a.rows() : 1;
      std::size_t cols = a.rank() == 2 ? a.cols() : a.size();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* x = a.data().data() + r * cols;
        double* y = n.value.data().data() + r * cols;
        double mx = x[0];
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < cols; ++j) z += std::exp(x[j] - mx);
        double lz = std::log(z);
        for (std::size_t j = 0; j < cols; ++j) {
          double ls = x[j] - mx - lz;
          y[j] = n.op == Op::kSoftmax ? std::exp(ls) : ls;
        }
      }
      return;
    }
    case Op::kConcat: {
      std::vector<int> ids;
      ids.push_back(n.a);
      if (n.b >= 0) ids.push_back(n.b);
      for (int e : n.extra) ids.push_back(e);
      const Tensor& first = val(ids[0]);
      if (first.rank() == 1) {
        std::size_t total = 0;
        for (int p : ids) {
          const Tensor& t = val(p);
          if (t.rank() != 1) fail(id, "concat mixes ranks: " + first.shape_str() + " vs " + t.shape_str());
          total += t.size();
        }
        if (!(n.value.rank() == 1 && n.value.size() == total)) n.value = Tensor({total});
        std::size_t at = 0;
        for (int p : ids) {
          const Tensor& t = val(p);
          std::copy(t.data().begin(), t.data().end(), n.value.data().begin() + at);
          at += t.size();
        }
        return;
      }
      if (first.rank() != 2) fail(id, "concat expects rank 1 or 2, got " + first.shape_str());
      std::size_t cols = first.cols();
      std::size_t rows = 0;
      for (int p : ids) {
        const Tensor& t = val(p);
        if (t.rank() != 2 || t.cols() != cols) {
          fail(id, "concat column mismatch: " + first.shape_str() + " vs " + t.shape_str());
        }
        rows += t.rows();
      }
      if (!(n.value.rank() == 2 && n.value.rows() == rows && n.value.cols() == cols)) {
        n.value = Tensor({rows, cols});
      }
      std::size_t at = 0;
      for (int p : ids) {
        const Tensor& t = val(p);
        std::copy(t.data().begin(), t.data().end(), n.value.data().begin() + at);
        at += t.size();
      }
      return;
    }
    case Op::kSum:
    case Op::kMean: {
      const Tensor& a = val(n.a);
      if (n.value.size() != 1) n.value = Tensor({1});
      double s = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
      n.value[0] = n.op == Op::kSum ? s : s / static_cast<double>(a.size());
      return;
    }
    case Op::kAffine: {
      const Tensor& a = val(n.a);
      if (!n.value.same_shape(a)) n.value = Tensor(a.shape());
      for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = n.c0 * a[i] + n.c1;
      return;
    }
  }
}

void Graph::backprop(int id) {
  Node& n = nodes_[id];
  const Tensor& g = grad_ref(id);
  auto acc = [&](int child, auto&& fn) {
    if (child < 0 || !nodes_[child].needs_grad) return;
    fn(grad_ref(child));
  };
  switch (n.op) {
    case Op::kInput:
    case Op::kParam:
    case Op::kConst:
      return;
    case Op::kAdd:
      acc(n.a, [&](Tensor& ga) { for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i]; });
      acc(n.b, [&](Tensor& gb) { for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i]; });
      return;
    case Op::kSub:
      acc(n.a, [&](Tensor& ga) { for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i]; });
      acc(n.b, [&](Tensor& gb) { for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i]; });
      return;
    case Op::kMul: {
      const Tensor& a = val(n.a);
      const Tensor& b = val(n.b);
      acc(n.a, [&](Tensor& ga) { for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i]; });
      acc(n.b, [&](Tensor& gb) { for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i]; });
      return;
    }
    case Op::kDiv: {
      const Tensor& a = val(n.a);
      const Tensor& b = val(n.b);
      acc(n.a, [&](Tensor& ga) { for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / b[i]; });
      acc(n.b, [&](Tensor& gb) {
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * a[i] / (b[i] * b[i]);
      });
      return;
    }
    case Op::kMatmul: {
      const Tensor& a = val(n.a);
      const Tensor& b = val(n.b);
      std::size_t m = a.rows(), k = a.cols(), p = b.cols();
      acc(n.a, [&](Tensor& ga) {
        // ga += g @ b^T
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < p; ++j) {
            double gv = g[i * p + j];
            if (gv == 0.0) continue;
            for (std::size_t t = 0; t < k; ++t) ga[i * k + t] += gv * b[t * p + j];
          }
      });
      acc(n.b, [&](Tensor& gb) {
        // gb += a^T @ g
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t t = 0; t < k; ++t) {
            double av = a[i * k + t];
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < p; ++j) gb[t * p + j] += av * g[i * p + j];
          }
      });
      return;
    }
    case Op::kTranspose: {
      const Tensor& a = val(n.a);
      std::size_t m = a.rows(), k = a.cols();
      acc(n.a, [&](Tensor& ga) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < k; ++j) ga[i * k + j] += g[j * m + i];
      });
      return;
    }
    case Op::kReshape:
      acc(n.a, [&](Tensor& ga) { for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i]; });
      return;
    case Op::kRow: {
      const Tensor& a = val(n.a);
      std::size_t k = a.rank() == 2 ? a.cols() : 1;
      acc(n.a, [&](Tensor& ga) {
        for (std::size_t j = 0; j < g.size(); ++j) ga[n.idx * k + j] += g[j];
      });
      return;
    }
    case Op::kSigmoid: {
      const Tensor& y = n.value;
      acc(n.a, [&](Tensor& ga) {
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
      });
      return;
    }
    case Op::kRelu: {
      const Tensor& a = val(n.a);
      acc(n.a, [&](Tensor& ga) {
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += a[i] > 0.0 ? g[i] : 0.0;
      });
      return;
    }
    case Op::kExp: {
      const Tensor& y = n.value;
      acc(n.a, [&](Tensor& ga) {
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
      });
      return;
    }
    case Op::kLog: {
      const Tensor& a = val(n.a);
      acc(n.a, [&](Tensor& ga) {
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / a[i];
      });
      return;
    }
    case Op::kSoftmax: {
      const Tensor& y = n.value;
      std::size_t rows = y.rank() == 2 ? y.rows() : 1;
      std::size_t cols = y.rank() == 2 ? y.cols() : y.size();
      acc(n.a, [&](Tensor& ga) {
        for (std::size_t r = 0; r < rows; ++r) {
          double dot = 0.0;
          for (std::size_t j = 0; j < cols; ++j) dot += g[r * cols + j] * y[r * cols + j];
          for (std::size_t j = 0; j < cols; ++j) {
            ga[r * cols + j] += y[r * cols + j] * (g[r * cols + j] - dot);
          }
        }
      });
      return;
    }
    case Op::kLogSoftmax: {
      const Tensor& y = n.value;
      std::size_t rows = y.rank() == 2 ? y.rows() : 1;
      std::size_t cols = y.rank() == 2 ? y.cols() : y.size();
      acc(n.a, [&](Tensor& ga) {
        for (std::size_t r = 0; r < rows; ++r) {
          double gsum = 0.0;
          for (std::size_t j = 0; j < cols; ++j) gsum += g[r * cols + j];
          for (std::size_t j = 0; j < cols; ++j) {
            ga[r * cols + j] += g[r * cols + j] - std::exp(y[r * cols + j]) * gsum;
          }
        }
      });
      return;
    }
    case Op::kConcat: {
      std::vector<int> ids;
      ids.push_back(n.a);
      if (n.b >= 0) ids.push_back(n.b);
      for (int e : n.extra) ids.push_back(e);
      std::size_t at = 0;
      for (int p : ids) {
        std::size_t len = val(p).size();
        std::size_t base = at;
        acc(p, [&](Tensor& gp) {
          for (std::size_t i = 0; i < len; ++i) gp[i] += g[base + i];
        });
        at += len;
      }
      return;
    }
    case Op::kSum: {
      acc(n.a, [&](Tensor& ga) {
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
      });
      return;
    }
    case Op::kMean: {
      const Tensor& a = val(n.a);
      double inv = 1.0 / static_cast<double>(a.size());
      acc(n.a, [&](Tensor& ga) {
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * inv;
      });
      return;
    }
    case Op::kAffine:
      acc(n.a, [&](Tensor& ga) {
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += n.c0 * g[i];
      });
      return;
  }
}

void Graph::backward_accumulate(Val out) {
  if (out.id < 0 || out.id >= static_cast<int>(nodes_.size())) {
    throw std::out_of_range("graph: bad output handle");
  }
  const Tensor& ov = val(out.id);
  if (ov.size() != 1) fail(out.id, "backward output must be scalar, got " + ov.shape_str());
  for (int i = 0; i <= out.id; ++i) {
    Node& n = nodes_[i];
    if (n.op == Op::kParam || !n.needs_grad) continue;
    if (!n.grad.same_shape(val(i))) {
      n.grad = Tensor(val(i).shape());
    } else {
      n.grad.fill(0.0);
    }
  }
  grad_ref(out.id)[0] += 1.0;
  for (int i = out.id; i >= 0; --i) {
    if (!nodes_[i].needs_grad) continue;
    backprop(i);
  }
}

void Graph::backward(Val out) {
  std::set<ParamStore*> stores;
  for (const Node& n : nodes_) {
    if (n.op == Op::kParam) stores.insert(n.store);
  }
  for (ParamStore* s : stores) s->zero_grads();
  backward_accumulate(out);
}

double Graph::gradient_check(Val out, double epsilon) {
  if (epsilon <= 0.0) throw std::invalid_argument("graph: gradient_check epsilon must be positive");
  backward(out);
  std::set<std::pair<ParamStore*, std::size_t>> leaves;
  for (const Node& n : nodes_) {
    if (n.op == Op::kParam) leaves.insert({n.store, n.param});
  }
  double worst = 0.0;
  for (auto [store, pi] : leaves) {
    Tensor& v = store->value(pi);
    const Tensor& analytic = store->grad(pi);
    for (std::size_t i = 0; i < v.size(); ++i) {
      double keep = v[i];
      v[i] = keep + epsilon;
      recompute();
      double fp = scalar(out);
      v[i] = keep - epsilon;
      recompute();
      double fm = scalar(out);
      v[i] = keep;
      double fd = (fp - fm) / (2.0 * epsilon);
      double a = analytic[i];
      double err = std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
      worst = std::max(worst, err);
    }
  }
  recompute();
  return worst;
}

}  // namespace cirs::nn
