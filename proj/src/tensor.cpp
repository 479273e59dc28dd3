#include "vlabel/tensor.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace vlabel {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one axis");
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimension must be positive: " + shape_str(shape));
  }
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_numel(shape_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_str(shape_));
  }
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  Tensor out = *this;
  out.reshape(std::move(shape));
  return out;
}

template <typename T>
void Tensor<T>::reshape(Shape shape) {
  check_shape(shape);
  if (shape_numel(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  shape_ = std::move(shape);
}

template <typename T>
void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
std::size_t Tensor<T>::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw DimensionError("index rank " + std::to_string(index.size()) + " vs tensor " + shape_str(shape_));
  }
  std::size_t off = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape_[axis]) throw std::out_of_range("tensor index out of range");
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& in, const std::vector<std::size_t>& perm) {
  const auto& s = in.shape();
  const std::size_t r = s.size();
  if (perm.size() != r) throw DimensionError("permutation rank mismatch for " + shape_str(s));
  std::vector<bool> seen(r, false);
  for (auto p : perm) {
    if (p >= r || seen[p]) throw DimensionError("invalid axis permutation for " + shape_str(s));
    seen[p] = true;
  }
  bool identity = true;
  for (std::size_t i = 0; i < r; ++i) identity = identity && perm[i] == i;
  if (identity) return in;

  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = s[perm[i]];
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r - 1; i > 0; --i) in_stride[i - 1] = in_stride[i] * s[i];
  std::vector<std::size_t> stride(r);
  for (std::size_t i = 0; i < r; ++i) stride[i] = in_stride[perm[i]];

  Tensor<T> out(out_shape);
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  const auto n = out.size();
  for (std::size_t o = 0; o < n; ++o) {
    out[o] = in[src];
    for (std::size_t ax = r; ax-- > 0;) {
      if (++idx[ax] < out_shape[ax]) {
        src += stride[ax];
        break;
      }
      src -= stride[ax] * (out_shape[ax] - 1);
      idx[ax] = 0;
    }
  }
  return out;
}

template <typename T>
Tensor<T> contract(const Tensor<T>& a, const Tensor<T>& b, const AxisPairs& axes) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  std::vector<bool> ca(sa.size(), false), cb(sb.size(), false);
  std::size_t k = 1;
  for (auto [ia, ib] : axes) {
    if (ia >= sa.size() || ib >= sb.size() || ca[ia] || cb[ib] || sa[ia] != sb[ib]) {
      throw DimensionError("cannot contract " + shape_str(sa) + " with " + shape_str(sb) + " on axes (" +
                           std::to_string(ia) + "," + std::to_string(ib) + ")");
    }
    ca[ia] = cb[ib] = true;
    k *= sa[ia];
  }
  std::vector<std::size_t> perm_a, perm_b;
  Shape out_shape;
  std::size_t m = 1, n = 1;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (!ca[i]) {
      perm_a.push_back(i);
      out_shape.push_back(sa[i]);
      m *= sa[i];
    }
  }
  for (auto [ia, ib] : axes) {
    perm_a.push_back(ia);
    perm_b.push_back(ib);
  }
  for (std::size_t i = 0; i < sb.size(); ++i) {
    if (!cb[i]) {
      perm_b.push_back(i);
      out_shape.push_back(sb[i]);
      n *= sb[i];
    }
  }
  if (out_shape.empty()) out_shape = {1};
  const Tensor<T> pa = permute(a, perm_a);
  const Tensor<T> pb = permute(b, perm_b);
  Tensor<T> out(out_shape);
  gemm<T>(false, false, m, n, k, T(1), pa.data().data(), k, pb.data().data(), n, T(0), out.data().data(), n);
  return out;
}

template <>
void gemm<float>(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, float alpha,
                 const float* a, std::size_t lda, const float* b, std::size_t ldb, float beta, float* c,
                 std::size_t ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a, static_cast<int>(lda), b,
              static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

template <>
void gemm<double>(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha,
                  const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
                  std::size_t ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a, static_cast<int>(lda), b,
              static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

void set_single_threaded_blas() { openblas_set_num_threads(1); }

template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> contract(const Tensor<float>&, const Tensor<float>&, const AxisPairs&);
template Tensor<double> contract(const Tensor<double>&, const Tensor<double>&, const AxisPairs&);
template Tensor<float> permute(const Tensor<float>&, const std::vector<std::size_t>&);
template Tensor<double> permute(const Tensor<double>&, const std::vector<std::size_t>&);

}  // namespace vlabel
