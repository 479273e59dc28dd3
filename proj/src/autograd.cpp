#include "vlabel/autograd.hpp"

#include <algorithm>
#include <cmath>

namespace vlabel {

template <typename T>
void Tape<T>::check_owner(Var<T> v) const {
  if (v.tape != this || v.id >= nodes_.size()) throw ContractViolation("variable does not belong to this tape");
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false, std::nullopt});
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::parameter(Tensor<T> value) {
  nodes_.push_back(Node{std::move(value), {}, {}, true, std::nullopt});
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::vector<Var<T>> inputs, BackwardFn backward) {
  Node node{std::move(value), {}, {}, false, std::nullopt};
  for (auto in : inputs) {
    check_owner(in);
    node.inputs.push_back(in.id);
    node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  check_owner(loss);
  if (nodes_[loss.id].value.size() != 1) {
    throw ContractViolation("backward requires a scalar loss, got " + shape_str(nodes_[loss.id].value.shape()));
  }
  visits_ = 0;
  // Only leaves accumulate across sweeps; derived nodes restart from zero.
  for (std::size_t id = 0; id <= loss.id; ++id) {
    if (!nodes_[id].inputs.empty() || id == loss.id) nodes_[id].grad.reset();
  }
  auto& seed = nodes_[loss.id].grad;
  if (!seed) seed.emplace(nodes_[loss.id].value.shape());
  (*seed)[0] += T(1);
  if (!nodes_[loss.id].requires_grad) return;

  std::vector<Tensor<T>*> input_grads;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.backward || !node.grad) continue;
    input_grads.assign(node.inputs.size(), nullptr);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      Node& in = nodes_[node.inputs[i]];
      if (!in.requires_grad) continue;
      if (!in.grad) in.grad.emplace(in.value.shape());
      input_grads[i] = &*in.grad;
    }
    node.backward(*this, *node.grad, input_grads);
    ++visits_;
  }
}

template <typename T>
void Tape<T>::zero_grad() {
  for (auto& n : nodes_) n.grad.reset();
}

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require_same_shape(av, bv, "add");
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape->record(std::move(out), {a, b}, [](const Tape<T>&, const Tensor<T>& g, auto& grads) {
    for (auto* dst : grads) {
      if (!dst) continue;
      for (std::size_t i = 0; i < g.size(); ++i) (*dst)[i] += g[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require_same_shape(av, bv, "mul");
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const auto ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib](const Tape<T>& tape, const Tensor<T>& g, auto& grads) {
    const auto& x = tape.value(ia);
    const auto& y = tape.value(ib);
    if (grads[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i] * y[i];
    if (grads[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*grads[1])[i] += g[i] * x[i];
  });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v *= factor;
  return a.tape->record(std::move(out), {a}, [factor](const Tape<T>&, const Tensor<T>& g, auto& grads) {
    for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += factor * g[i];
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  T total = 0;
  for (auto v : a.value().data()) total += v;
  return a.tape->record(Tensor<T>::scalar(total), {a}, [](const Tape<T>&, const Tensor<T>& g, auto& grads) {
    for (auto& v : grads[0]->storage()) v += g[0];
  });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  return a.tape->record(a.value().reshaped(std::move(shape)), {a},
                        [](const Tape<T>&, const Tensor<T>& g, auto& grads) {
                          for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i];
                        });
}

template <typename T>
Var<T> contract(Var<T> a, Var<T> b, const AxisPairs& axes) {
  Tensor<T> out = contract(a.value(), b.value(), axes);
  const std::size_t ra = a.value().rank();
  const std::size_t rb = b.value().rank();
  const auto ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [=](const Tape<T>& tape, const Tensor<T>& g, auto& grads) {
    const auto& av = tape.value(ia);
    const auto& bv = tape.value(ib);
    std::vector<bool> ca(ra, false), cb(rb, false);
    for (auto [x, y] : axes) ca[x] = cb[y] = true;
    std::vector<std::size_t> free_a, free_b;
    for (std::size_t i = 0; i < ra; ++i)
      if (!ca[i]) free_a.push_back(i);
    for (std::size_t i = 0; i < rb; ++i)
      if (!cb[i]) free_b.push_back(i);
    // g is laid out as [free_a..., free_b...]; restore the full output shape.
    Shape gshape;
    for (auto i : free_a) gshape.push_back(av.dim(i));
    for (auto i : free_b) gshape.push_back(bv.dim(i));
    Tensor<T> gfull = gshape.empty() ? g : g.reshaped(gshape);

    if (grads[0]) {
      // dA[free_a, contracted] = sum over free_b of g * B.
      AxisPairs pairs;
      for (std::size_t j = 0; j < free_b.size(); ++j) pairs.emplace_back(free_a.size() + j, free_b[j]);
      Tensor<T> da = gshape.empty() ? Tensor<T>(bv) : contract(gfull, bv, pairs);
      if (gshape.empty())
        for (auto& v : da.storage()) v *= g[0];
      // da axes: [free_a..., b's contracted axes in b order]; map back to a's axis order.
      std::vector<std::size_t> src_axis_of_a(ra);
      std::size_t pos = 0;
      for (auto i : free_a) src_axis_of_a[i] = pos++;
      std::vector<std::size_t> cb_order;
      for (std::size_t i = 0; i < rb; ++i)
        if (cb[i]) cb_order.push_back(i);
      for (auto [x, y] : axes) {
        auto it = std::find(cb_order.begin(), cb_order.end(), y);
        src_axis_of_a[x] = free_a.size() + static_cast<std::size_t>(it - cb_order.begin());
      }
      Tensor<T> mapped = permute(da, src_axis_of_a);
      for (std::size_t i = 0; i < mapped.size(); ++i) (*grads[0])[i] += mapped[i];
    }
    if (grads[1]) {
      AxisPairs pairs;
      for (std::size_t j = 0; j < free_a.size(); ++j) pairs.emplace_back(free_a[j], j);
      Tensor<T> db = gshape.empty() ? Tensor<T>(av) : contract(av, gfull, pairs);
      if (gshape.empty())
        for (auto& v : db.storage()) v *= g[0];
      // db axes: [a's contracted axes in a order..., free_b...].
      std::vector<std::size_t> ca_order;
      for (std::size_t i = 0; i < ra; ++i)
        if (ca[i]) ca_order.push_back(i);
      std::vector<std::size_t> src_axis_of_b(rb);
      for (auto [x, y] : axes) {
        auto it = std::find(ca_order.begin(), ca_order.end(), x);
        src_axis_of_b[y] = static_cast<std::size_t>(it - ca_order.begin());
      }
      std::size_t pos = ca_order.size();
      for (auto i : free_b) src_axis_of_b[i] = pos++;
      Tensor<T> mapped = permute(db, src_axis_of_b);
      for (std::size_t i = 0; i < mapped.size(); ++i) (*grads[1])[i] += mapped[i];
    }
  });
}

template <typename T>
Tensor<T> finite_difference(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x, T eps) {
  if (!(eps > T(0))) throw std::invalid_argument("finite_difference: eps must be positive");
  Tensor<T> probe = x;
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T orig = probe[i];
    probe[i] = orig + eps;
    const T up = f(probe);
    probe[i] = orig - eps;
    const T down = f(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw std::domain_error("finite_difference: non-finite function value at element " + std::to_string(i));
    }
    out[i] = (up - down) / (T(2) * eps);
  }
  return out;
}

template <typename T>
double max_relative_error(const Tensor<T>& a, const Tensor<T>& b, double floor) {
  if (a.shape() != b.shape()) throw DimensionError("max_relative_error: shape mismatch");
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i], y = b[i];
    const double denom = std::max({std::abs(x), std::abs(y), floor});
    worst = std::max(worst, std::abs(x - y) / denom);
  }
  return worst;
}

#define VLABEL_INSTANTIATE(T)                                                                   \
  template class Tape<T>;                                                                       \
  template Var<T> add(Var<T>, Var<T>);                                                          \
  template Var<T> mul(Var<T>, Var<T>);                                                          \
  template Var<T> scale(Var<T>, T);                                                             \
  template Var<T> sum(Var<T>);                                                                  \
  template Var<T> reshape(Var<T>, Shape);                                                       \
  template Var<T> contract(Var<T>, Var<T>, const AxisPairs&);                                   \
  template Tensor<T> finite_difference(const std::function<T(const Tensor<T>&)>&, const Tensor<T>&, T); \
  template double max_relative_error(const Tensor<T>&, const Tensor<T>&, double);

VLABEL_INSTANTIATE(float)
VLABEL_INSTANTIATE(double)

}  // namespace vlabel
