#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <map>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dcrl {

// Error hierarchy. Every failure the library reports derives from Error so
// callers can catch broadly; the subclasses let tests pin the failure kind.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimensionError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct UsageError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct FormatError : Error {
  using Error::Error;
};

inline std::string dims_str(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

// Buffers start on a cache-line boundary so that vectorized kernels take the
// same code path (and summation order) for every allocation.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t kAlign = 64;
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) {
    const std::size_t bytes = (n * sizeof(T) + kAlign - 1) / kAlign * kAlign;
    void* p = std::aligned_alloc(kAlign, bytes ? bytes : kAlign);
    if (!p) throw std::bad_alloc();
    return static_cast<T*>(p);
  }
  void deallocate(T* p, std::size_t) { std::free(p); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <class Real>
using Buffer = std::vector<Real, AlignedAllocator<Real>>;

// Dense row-major 2D array. Vectors are 1 x n. Batched activations are
// (batch x features).
template <class Real>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, Real fill = Real(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, const std::vector<Real>& data)
      : rows_(rows), cols_(cols), data_(data.begin(), data.end()) {
    if (data_.size() != rows_ * cols_)
      throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                           " does not match shape " + dims_str(rows_, cols_));
  }

  static Matrix row(const std::vector<Real>& v) { return Matrix(1, v.size(), v); }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Real& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  Real operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }

  std::span<Real> row_span(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const Real> row_span(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }
  Buffer<Real>& values() { return data_; }
  const Buffer<Real>& values() const { return data_; }
  std::vector<Real> to_vector() const { return {data_.begin(), data_.end()}; }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }
  void resize(std::size_t rows, std::size_t cols) {
    rows_ = rows;
    cols_ = cols;
    data_.assign(rows * cols, Real(0));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Real x) { return std::isfinite(x); });
  }

  template <class Other>
  Matrix<Other> cast() const {
    Matrix<Other> out(rows_, cols_);
    std::copy(data_.begin(), data_.end(), out.data());
    return out;
  }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Buffer<Real> data_;
};

// Columns [begin, begin + count) of m.
template <class Real>
Matrix<Real> slice_cols(const Matrix<Real>& m, std::size_t begin, std::size_t count) {
  if (begin + count > m.cols()) throw DimensionError("column slice out of range");
  Matrix<Real> out(m.rows(), count);
  for (std::size_t r = 0; r < m.rows(); ++r)
    std::copy_n(m.data() + r * m.cols() + begin, count, out.data() + r * count);
  return out;
}

template <class Real>
Matrix<Real> concat_cols(const Matrix<Real>& a, const Matrix<Real>& b) {
  if (a.rows() != b.rows())
    throw DimensionError("concat_cols row mismatch: " + dims_str(a.rows(), a.cols()) + " vs " +
                         dims_str(b.rows(), b.cols()));
  Matrix<Real> out(a.rows(), a.cols() + b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    std::copy_n(a.data() + r * a.cols(), a.cols(), out.data() + r * out.cols());
    std::copy_n(b.data() + r * b.cols(), b.cols(), out.data() + r * out.cols() + a.cols());
  }
  return out;
}

// Named weights of one network with matching gradient buffers. Iteration
// follows insertion order.
template <class Real>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Matrix<Real> value;
    Matrix<Real> grad;
  };

  std::size_t add(std::string name, Matrix<Real> value) {
    if (index_.count(name)) throw UsageError("duplicate parameter name '" + name + "'");
    Matrix<Real> grad(value.rows(), value.cols());
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), std::move(value), std::move(grad)});
    return entries_.size() - 1;
  }

  std::size_t size() const { return entries_.size(); }
  Entry& operator[](std::size_t i) { return entries_[i]; }
  const Entry& operator[](std::size_t i) const { return entries_[i]; }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("no parameter named '" + name + "'");
    return it->second;
  }
  Entry& at(const std::string& name) { return entries_[index_of(name)]; }
  const Entry& at(const std::string& name) const { return entries_[index_of(name)]; }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.grad.fill(Real(0));
  }

  double grad_norm() const {
    double s = 0;
    for (const auto& e : entries_)
      for (Real g : e.grad.values()) s += double(g) * double(g);
    return std::sqrt(s);
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace dcrl
