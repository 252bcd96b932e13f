#include "tslider/tensor.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>
#include <sstream>
#include <utility>

#include "tslider/errors.hpp"

namespace tslider {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// BasicTensor

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data, bool requires_grad)
    : impl_(std::make_shared<Storage>()) {
  for (auto extent : shape) {
    if (extent == 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape));
  }
  if (shape.empty()) throw DimensionError("tensor shape must have at least one axis");
  if (tslider::numel(shape) != data.size()) {
    throw DimensionError("shape " + to_string(shape) + " does not match " +
                         std::to_string(data.size()) + " elements");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  const auto n = tslider::numel(shape);
  return BasicTensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::filled(Shape shape, T value) {
  const auto n = tslider::numel(shape);
  return BasicTensor(std::move(shape), std::vector<T>(n, value));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value) {
  return BasicTensor(Shape{1}, std::vector<T>{value});
}

namespace {
template <typename Impl>
Impl& require(const std::shared_ptr<Impl>& impl) {
  if (!impl) throw ContractError("use of an undefined tensor");
  return *impl;
}
}  // namespace

template <typename T>
const Shape& BasicTensor<T>::shape() const {
  return require(impl_).shape;
}

template <typename T>
std::size_t BasicTensor<T>::numel() const {
  return require(impl_).data.size();
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + to_string(s));
  return s[axis];
}

template <typename T>
std::span<const T> BasicTensor<T>::data() const {
  return require(impl_).data;
}

template <typename T>
std::span<T> BasicTensor<T>::mutable_data() {
  return require(impl_).data;
}

template <typename T>
T BasicTensor<T>::at(std::size_t flat_index) const {
  const auto& d = require(impl_).data;
  if (flat_index >= d.size()) throw DimensionError("flat index out of range");
  return d[flat_index];
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw ContractError("item() requires a single-element tensor, got " + to_string(shape()));
  return data()[0];
}

template <typename T>
bool BasicTensor<T>::requires_grad() const {
  return impl_ && impl_->requires_grad;
}

template <typename T>
void BasicTensor<T>::set_requires_grad(bool value) {
  require(impl_).requires_grad = value;
}

template <typename T>
bool BasicTensor<T>::has_grad() const {
  return impl_ && !impl_->grad.empty();
}

template <typename T>
std::span<const T> BasicTensor<T>::grad() const {
  return require(impl_).grad;
}

template <typename T>
std::span<T> BasicTensor<T>::mutable_grad() const {
  auto& s = require(impl_);
  if (s.grad.empty()) s.grad.assign(s.data.size(), T(0));
  return s.grad;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  if (impl_) impl_->grad.clear();
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return BasicTensor(shape(), std::vector<T>(data().begin(), data().end()));
}

template <typename T>
bool bit_equal(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  auto x = a.data();
  auto y = b.data();
  return std::memcmp(x.data(), y.data(), x.size_bytes()) == 0;
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template bool bit_equal(const BasicTensor<float>&, const BasicTensor<float>&);
template bool bit_equal(const BasicTensor<double>&, const BasicTensor<double>&);

// ---------------------------------------------------------------------------
// Tape

namespace {
constexpr std::array<std::pair<OpKind, std::string_view>, 17> kOpNames{{
    {OpKind::kMatmul, "matmul"},
    {OpKind::kTranspose, "transpose"},
    {OpKind::kAdd, "add"},
    {OpKind::kSub, "sub"},
    {OpKind::kMul, "mul"},
    {OpKind::kScale, "scale"},
    {OpKind::kAddRowwise, "add_rowwise"},
    {OpKind::kGelu, "gelu"},
    {OpKind::kSoftmax, "softmax"},
    {OpKind::kLayerNorm, "layernorm"},
    {OpKind::kConcat, "concat"},
    {OpKind::kSliceRows, "slice_rows"},
    {OpKind::kGatherRows, "gather_rows"},
    {OpKind::kReshape, "reshape"},
    {OpKind::kMse, "mse"},
    {OpKind::kSum, "sum"},
    {OpKind::kAttention, "attention"},
}};

std::atomic<int> g_backward_fault{-1};
}  // namespace

std::string_view op_name(OpKind kind) {
  for (const auto& [k, name] : kOpNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

std::optional<OpKind> op_from_name(std::string_view name) {
  for (const auto& [k, n] : kOpNames) {
    if (n == name) return k;
  }
  return std::nullopt;
}

namespace debug {
void set_backward_fault(std::optional<OpKind> kind) {
  g_backward_fault.store(kind ? static_cast<int>(*kind) : -1);
}
std::optional<OpKind> backward_fault() {
  const int v = g_backward_fault.load();
  if (v < 0) return std::nullopt;
  return static_cast<OpKind>(v);
}
}  // namespace debug

template <typename T>
void Tape<T>::backward(const BasicTensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + to_string(loss.shape()));
  }
  if (nodes_.empty()) return;
  if (!loss.requires_grad()) {
    nodes_.clear();
    return;
  }
  auto seed = BasicTensor<T>(loss);
  seed.mutable_grad()[0] = T(1);

  const auto fault = debug::backward_fault();
  std::vector<T> faulty;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    std::span<const T> grad_out = it->output.grad();
    if (fault && *fault == it->kind) {
      faulty.assign(grad_out.begin(), grad_out.end());
      for (auto& g : faulty) g *= T(1.25);
      grad_out = faulty;
    }
    it->backward(grad_out);
  }
  nodes_.clear();
}

template <typename T>
Tape<T>*& active_tape_slot() noexcept {
  thread_local Tape<T>* slot = nullptr;
  return slot;
}

template <typename T>
Tape<T>* active_tape() noexcept {
  return active_tape_slot<T>();
}

template <typename T>
TapeScope<T>::TapeScope(Tape<T>& tape) : previous_(active_tape_slot<T>()) {
  active_tape_slot<T>() = &tape;
}

template <typename T>
TapeScope<T>::~TapeScope() {
  active_tape_slot<T>() = previous_;
}

template <typename T>
void backward(const BasicTensor<T>& loss) {
  auto* tape = active_tape<T>();
  if (tape == nullptr) {
    if (loss.numel() != 1) {
      throw ContractError("backward requires a scalar loss, got shape " + to_string(loss.shape()));
    }
    return;
  }
  tape->backward(loss);
}

template class Tape<float>;
template class Tape<double>;
template class TapeScope<float>;
template class TapeScope<double>;
template Tape<float>* active_tape<float>() noexcept;
template Tape<double>* active_tape<double>() noexcept;
template void backward(const BasicTensor<float>&);
template void backward(const BasicTensor<double>&);

// ---------------------------------------------------------------------------
// Operations

namespace {

template <typename T>
void check_finite([[maybe_unused]] const BasicTensor<T>& out, [[maybe_unused]] OpKind kind) {
#ifndef NDEBUG
  for (T v : out.data()) {
    if (!std::isfinite(v)) {
      throw NumericalError("non-finite value produced by " + std::string(op_name(kind)));
    }
  }
#endif
}

/// Records a node when a tape is active and any input requires grad.
template <typename T, typename Backward>
BasicTensor<T> finish(OpKind kind, BasicTensor<T> out, std::vector<BasicTensor<T>> inputs,
                      Backward&& rule) {
  check_finite(out, kind);
  auto* tape = active_tape<T>();
  if (tape == nullptr) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const BasicTensor<T>& t) { return t.requires_grad(); });
  if (!any) return out;
  out.set_requires_grad(true);
  tape->record(TapeNode<T>{kind, std::move(inputs), out, std::forward<Backward>(rule)});
  return out;
}

std::string shapes_message(std::string_view op, const Shape& a, const Shape& b) {
  return std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b);
}

template <typename T>
void require_same_shape(std::string_view op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) throw DimensionError(shapes_message(op, a.shape(), b.shape()));
}

template <typename T>
void require_matrix(std::string_view op, const BasicTensor<T>& a) {
  if (a.dims() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + to_string(a.shape()));
}

/// Rows and width of the trailing axis.
template <typename T>
std::pair<std::size_t, std::size_t> rows_cols(const BasicTensor<T>& x) {
  const std::size_t cols = x.shape().back();
  return {x.numel() / cols, cols};
}

}  // namespace

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw DimensionError(shapes_message("matmul", a.shape(), b.shape()));

  auto ad = a.data();
  auto bd = b.data();
  std::vector<T> out(m * n);
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = static_cast<double>(ad[i * k + p]);
      const T* brow = bd.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) acc[j] += aip * static_cast<double>(brow[j]);
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = static_cast<T>(acc[j]);
  }

  return finish<T>(OpKind::kMatmul, BasicTensor<T>({m, n}, std::move(out)), {a, b},
                   [a, b, m, k, n](std::span<const T> g) mutable {
                     auto ad = a.data();
                     auto bd = b.data();
                     if (a.requires_grad()) {
                       auto ga = a.mutable_grad();
                       for (std::size_t i = 0; i < m; ++i) {
                         for (std::size_t p = 0; p < k; ++p) {
                           double s = 0.0;
                           for (std::size_t j = 0; j < n; ++j) {
                             s += static_cast<double>(g[i * n + j]) * static_cast<double>(bd[p * n + j]);
                           }
                           ga[i * k + p] += static_cast<T>(s);
                         }
                       }
                     }
                     if (b.requires_grad()) {
                       auto gb = b.mutable_grad();
                       std::vector<double> acc(n);
                       for (std::size_t p = 0; p < k; ++p) {
                         std::fill(acc.begin(), acc.end(), 0.0);
                         for (std::size_t i = 0; i < m; ++i) {
                           const double aip = static_cast<double>(ad[i * k + p]);
                           for (std::size_t j = 0; j < n; ++j) acc[j] += aip * static_cast<double>(g[i * n + j]);
                         }
                         for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += static_cast<T>(acc[j]);
                       }
                     }
                   });
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  require_matrix("transpose", a);
  const std::size_t m = a.dim(0), n = a.dim(1);
  auto ad = a.data();
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = ad[i * n + j];
  return finish<T>(OpKind::kTranspose, BasicTensor<T>({n, m}, std::move(out)), {a},
                   [a, m, n](std::span<const T> g) mutable {
                     auto ga = a.mutable_grad();
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
                   });
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("add", a, b);
  auto ad = a.data();
  auto bd = b.data();
  std::vector<T> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  return finish<T>(OpKind::kAdd, BasicTensor<T>(a.shape(), std::move(out)), {a, b},
                   [a, b](std::span<const T> g) mutable {
                     if (a.requires_grad()) {
                       auto ga = a.mutable_grad();
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                     }
                     if (b.requires_grad()) {
                       auto gb = b.mutable_grad();
                       for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                     }
                   });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("sub", a, b);
  auto ad = a.data();
  auto bd = b.data();
  std::vector<T> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
  return finish<T>(OpKind::kSub, BasicTensor<T>(a.shape(), std::move(out)), {a, b},
                   [a, b](std::span<const T> g) mutable {
                     if (a.requires_grad()) {
                       auto ga = a.mutable_grad();
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                     }
                     if (b.requires_grad()) {
                       auto gb = b.mutable_grad();
                       for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                     }
                   });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("mul", a, b);
  auto ad = a.data();
  auto bd = b.data();
  std::vector<T> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  return finish<T>(OpKind::kMul, BasicTensor<T>(a.shape(), std::move(out)), {a, b},
                   [a, b](std::span<const T> g) mutable {
                     auto ad = a.data();
                     auto bd = b.data();
                     if (a.requires_grad()) {
                       auto ga = a.mutable_grad();
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bd[i];
                     }
                     if (b.requires_grad()) {
                       auto gb = b.mutable_grad();
                       for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ad[i];
                     }
                   });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  auto ad = a.data();
  std::vector<T> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * factor;
  return finish<T>(OpKind::kScale, BasicTensor<T>(a.shape(), std::move(out)), {a},
                   [a, factor](std::span<const T> g) mutable {
                     auto ga = a.mutable_grad();
                     for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
                   });
}

template <typename T>
BasicTensor<T> add_rowwise(const BasicTensor<T>& x, const BasicTensor<T>& bias) {
  const auto [rows, cols] = rows_cols(x);
  if (bias.numel() != cols) throw DimensionError(shapes_message("add_rowwise", x.shape(), bias.shape()));
  auto xd = x.data();
  auto bd = bias.data();
  std::vector<T> out(xd.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xd[r * cols + c] + bd[c];
  return finish<T>(OpKind::kAddRowwise, BasicTensor<T>(x.shape(), std::move(out)), {x, bias},
                   [x, bias, rows, cols](std::span<const T> g) mutable {
                     if (x.requires_grad()) {
                       auto gx = x.mutable_grad();
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                     }
                     if (bias.requires_grad()) {
                       auto gb = bias.mutable_grad();
                       for (std::size_t c = 0; c < cols; ++c) {
                         double s = 0.0;
                         for (std::size_t r = 0; r < rows; ++r) s += static_cast<double>(g[r * cols + c]);
                         gb[c] += static_cast<T>(s);
                       }
                     }
                   });
}

template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  auto xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = static_cast<double>(xd[i]);
    out[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)));
  }
  return finish<T>(OpKind::kGelu, BasicTensor<T>(x.shape(), std::move(out)), {x},
                   [x](std::span<const T> g) mutable {
                     auto xd = x.data();
                     auto gx = x.mutable_grad();
                     const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       const double v = static_cast<double>(xd[i]);
                       const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
                       const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
                       gx[i] += static_cast<T>(static_cast<double>(g[i]) * (cdf + v * pdf));
                     }
                   });
}

template <typename T>
BasicTensor<T> softmax_lastdim(const BasicTensor<T>& x) {
  const auto [rows, cols] = rows_cols(x);
  auto xd = x.data();
  std::vector<T> out(xd.size());
  std::vector<double> e(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xd.data() + r * cols;
    const double mx = static_cast<double>(*std::max_element(row, row + cols));
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      e[c] = std::exp(static_cast<double>(row[c]) - mx);
      s += e[c];
    }
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = static_cast<T>(e[c] / s);
  }
  BasicTensor<T> y(x.shape(), std::move(out));
  return finish<T>(OpKind::kSoftmax, y, {x},
                   [x, y, rows, cols](std::span<const T> g) mutable {
                     auto yd = y.data();
                     auto gx = x.mutable_grad();
                     for (std::size_t r = 0; r < rows; ++r) {
                       double dot = 0.0;
                       for (std::size_t c = 0; c < cols; ++c) {
                         dot += static_cast<double>(g[r * cols + c]) * static_cast<double>(yd[r * cols + c]);
                       }
                       for (std::size_t c = 0; c < cols; ++c) {
                         const std::size_t i = r * cols + c;
                         gx[i] += static_cast<T>(static_cast<double>(yd[i]) * (static_cast<double>(g[i]) - dot));
                       }
                     }
                   });
}

template <typename T>
BasicTensor<T> layernorm(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                         const BasicTensor<T>& bias, double eps) {
  const auto [rows, cols] = rows_cols(x);
  if (gain.numel() != cols) throw DimensionError(shapes_message("layernorm gain", x.shape(), gain.shape()));
  if (bias.numel() != cols) throw DimensionError(shapes_message("layernorm bias", x.shape(), bias.shape()));
  auto xd = x.data();
  auto gd = gain.data();
  auto bd = bias.data();
  std::vector<T> out(xd.size());
  std::vector<double> xhat(xd.size());
  std::vector<double> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xd.data() + r * cols;
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += static_cast<double>(row[c]);
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = static_cast<double>(row[c]) - mean;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      xhat[i] = (static_cast<double>(row[c]) - mean) * rstd[r];
      out[i] = static_cast<T>(xhat[i] * static_cast<double>(gd[c]) + static_cast<double>(bd[c]));
    }
  }
  return finish<T>(
      OpKind::kLayerNorm, BasicTensor<T>(x.shape(), std::move(out)), {x, gain, bias},
      [x, gain, bias, rows, cols, xhat = std::move(xhat), rstd = std::move(rstd)](std::span<const T> g) mutable {
        auto gd = gain.data();
        if (x.requires_grad()) {
          auto gx = x.mutable_grad();
          std::vector<double> dxhat(cols);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
              const std::size_t i = r * cols + c;
              dxhat[c] = static_cast<double>(g[i]) * static_cast<double>(gd[c]);
              mean_d += dxhat[c];
              mean_dx += dxhat[c] * xhat[i];
            }
            mean_d /= static_cast<double>(cols);
            mean_dx /= static_cast<double>(cols);
            for (std::size_t c = 0; c < cols; ++c) {
              const std::size_t i = r * cols + c;
              gx[i] += static_cast<T>(rstd[r] * (dxhat[c] - mean_d - xhat[i] * mean_dx));
            }
          }
        }
        if (gain.requires_grad()) {
          auto gg = gain.mutable_grad();
          for (std::size_t c = 0; c < cols; ++c) {
            double s = 0.0;
            for (std::size_t r = 0; r < rows; ++r) s += static_cast<double>(g[r * cols + c]) * xhat[r * cols + c];
            gg[c] += static_cast<T>(s);
          }
        }
        if (bias.requires_grad()) {
          auto gb = bias.mutable_grad();
          for (std::size_t c = 0; c < cols; ++c) {
            double s = 0.0;
            for (std::size_t r = 0; r < rows; ++r) s += static_cast<double>(g[r * cols + c]);
            gb[c] += static_cast<T>(s);
          }
        }
      });
}

template <typename T>
BasicTensor<T> concat_lastdim(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  Shape lead_a(a.shape().begin(), a.shape().end() - 1);
  Shape lead_b(b.shape().begin(), b.shape().end() - 1);
  if (lead_a != lead_b) throw DimensionError(shapes_message("concat_lastdim", a.shape(), b.shape()));
  const auto [rows, ca] = rows_cols(a);
  const std::size_t cb = b.shape().back();
  const std::size_t cw = ca + cb;
  auto ad = a.data();
  auto bd = b.data();
  std::vector<T> out(rows * cw);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(ad.data() + r * ca, ca, out.data() + r * cw);
    std::copy_n(bd.data() + r * cb, cb, out.data() + r * cw + ca);
  }
  Shape shape = lead_a;
  shape.push_back(cw);
  return finish<T>(OpKind::kConcat, BasicTensor<T>(std::move(shape), std::move(out)), {a, b},
                   [a, b, rows, ca, cb, cw](std::span<const T> g) mutable {
                     if (a.requires_grad()) {
                       auto ga = a.mutable_grad();
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t c = 0; c < ca; ++c) ga[r * ca + c] += g[r * cw + c];
                     }
                     if (b.requires_grad()) {
                       auto gb = b.mutable_grad();
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t c = 0; c < cb; ++c) gb[r * cb + c] += g[r * cw + ca + c];
                     }
                   });
}

template <typename T>
BasicTensor<T> slice_rows(const BasicTensor<T>& x, std::size_t begin, std::size_t end) {
  if (begin >= end || end > x.dim(0)) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for " + to_string(x.shape()));
  }
  const std::size_t stride = x.numel() / x.dim(0);
  auto xd = x.data();
  std::vector<T> out(xd.begin() + begin * stride, xd.begin() + end * stride);
  Shape shape = x.shape();
  shape[0] = end - begin;
  return finish<T>(OpKind::kSliceRows, BasicTensor<T>(std::move(shape), std::move(out)), {x},
                   [x, begin, stride](std::span<const T> g) mutable {
                     auto gx = x.mutable_grad();
                     for (std::size_t i = 0; i < g.size(); ++i) gx[begin * stride + i] += g[i];
                   });
}

template <typename T>
BasicTensor<T> gather_rows(const BasicTensor<T>& table, std::span<const std::int32_t> ids) {
  require_matrix("gather_rows", table);
  const std::size_t rows = table.dim(0), cols = table.dim(1);
  if (ids.empty()) throw DimensionError("gather_rows: empty id list");
  auto td = table.data();
  std::vector<T> out(ids.size() * cols);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows) {
      throw DimensionError("gather_rows: id " + std::to_string(ids[i]) + " out of range for table " +
                           to_string(table.shape()));
    }
    std::copy_n(td.data() + static_cast<std::size_t>(ids[i]) * cols, cols, out.data() + i * cols);
  }
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  return finish<T>(OpKind::kGatherRows, BasicTensor<T>({ids.size(), cols}, std::move(out)), {table},
                   [table, cols, saved = std::move(saved)](std::span<const T> g) mutable {
                     auto gt = table.mutable_grad();
                     for (std::size_t i = 0; i < saved.size(); ++i) {
                       const std::size_t row = static_cast<std::size_t>(saved[i]);
                       for (std::size_t c = 0; c < cols; ++c) gt[row * cols + c] += g[i * cols + c];
                     }
                   });
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (tslider::numel(shape) != x.numel()) throw DimensionError(shapes_message("reshape", x.shape(), shape));
  auto xd = x.data();
  return finish<T>(OpKind::kReshape, BasicTensor<T>(std::move(shape), std::vector<T>(xd.begin(), xd.end())), {x},
                   [x](std::span<const T> g) mutable {
                     auto gx = x.mutable_grad();
                     for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                   });
}

template <typename T>
BasicTensor<T> mse(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("mse", a, b);
  auto ad = a.data();
  auto bd = b.data();
  double s = 0.0;
  for (std::size_t i = 0; i < ad.size(); ++i) {
    const double d = static_cast<double>(ad[i]) - static_cast<double>(bd[i]);
    s += d * d;
  }
  const double n = static_cast<double>(ad.size());
  return finish<T>(OpKind::kMse, BasicTensor<T>::scalar(static_cast<T>(s / n)), {a, b},
                   [a, b, n](std::span<const T> g) mutable {
                     auto ad = a.data();
                     auto bd = b.data();
                     const double g0 = static_cast<double>(g[0]);
                     if (a.requires_grad()) {
                       auto ga = a.mutable_grad();
                       for (std::size_t i = 0; i < ad.size(); ++i) {
                         ga[i] += static_cast<T>(2.0 * g0 * (static_cast<double>(ad[i]) - static_cast<double>(bd[i])) / n);
                       }
                     }
                     if (b.requires_grad()) {
                       auto gb = b.mutable_grad();
                       for (std::size_t i = 0; i < bd.size(); ++i) {
                         gb[i] -= static_cast<T>(2.0 * g0 * (static_cast<double>(ad[i]) - static_cast<double>(bd[i])) / n);
                       }
                     }
                   });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  double s = 0.0;
  for (T v : x.data()) s += static_cast<double>(v);
  return finish<T>(OpKind::kSum, BasicTensor<T>::scalar(static_cast<T>(s)), {x},
                   [x](std::span<const T> g) mutable {
                     auto gx = x.mutable_grad();
                     for (auto& v : gx) v += g[0];
                   });
}

template <typename T>
BasicTensor<T> attention(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v,
                         std::size_t n_heads, bool causal) {
  require_matrix("attention", q);
  require_same_shape("attention", q, k);
  require_same_shape("attention", q, v);
  const std::size_t len = q.dim(0), d = q.dim(1);
  if (n_heads == 0 || d % n_heads != 0) {
    throw DimensionError("attention: width " + std::to_string(d) + " not divisible by " +
                         std::to_string(n_heads) + " heads");
  }
  const std::size_t hd = d / n_heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(hd));
  auto qd = q.data();
  auto kd = k.data();
  auto vd = v.data();

  // probs[h][i][j]; masked entries stay 0.
  std::vector<double> probs(n_heads * len * len, 0.0);
  std::vector<T> out(len * d);
  std::vector<double> scores(len);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t off = h * hd;
    for (std::size_t i = 0; i < len; ++i) {
      const std::size_t visible = causal ? i + 1 : len;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < visible; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < hd; ++c) {
          s += static_cast<double>(qd[i * d + off + c]) * static_cast<double>(kd[j * d + off + c]);
        }
        scores[j] = s * inv_scale;
        mx = std::max(mx, scores[j]);
      }
      double total = 0.0;
      for (std::size_t j = 0; j < visible; ++j) {
        scores[j] = std::exp(scores[j] - mx);
        total += scores[j];
      }
      double* prow = probs.data() + (h * len + i) * len;
      for (std::size_t j = 0; j < visible; ++j) prow[j] = scores[j] / total;
      for (std::size_t c = 0; c < hd; ++c) {
        double s = 0.0;
        for (std::size_t j = 0; j < visible; ++j) s += prow[j] * static_cast<double>(vd[j * d + off + c]);
        out[i * d + off + c] = static_cast<T>(s);
      }
    }
  }

  return finish<T>(
      OpKind::kAttention, BasicTensor<T>({len, d}, std::move(out)), {q, k, v},
      [q, k, v, len, d, hd, n_heads, causal, inv_scale, probs = std::move(probs)](std::span<const T> g) mutable {
        auto qd = q.data();
        auto kd = k.data();
        auto vd = v.data();
        std::vector<double> gq(len * d, 0.0), gk(len * d, 0.0), gv(len * d, 0.0);
        std::vector<double> dp(len);
        for (std::size_t h = 0; h < n_heads; ++h) {
          const std::size_t off = h * hd;
          for (std::size_t i = 0; i < len; ++i) {
            const std::size_t visible = causal ? i + 1 : len;
            const double* prow = probs.data() + (h * len + i) * len;
            double dot = 0.0;
            for (std::size_t j = 0; j < visible; ++j) {
              double s = 0.0;
              for (std::size_t c = 0; c < hd; ++c) {
                const double gic = static_cast<double>(g[i * d + off + c]);
                s += gic * static_cast<double>(vd[j * d + off + c]);
                gv[j * d + off + c] += prow[j] * gic;
              }
              dp[j] = s;
              dot += prow[j] * s;
            }
            for (std::size_t j = 0; j < visible; ++j) {
              const double ds = prow[j] * (dp[j] - dot) * inv_scale;
              for (std::size_t c = 0; c < hd; ++c) {
                gq[i * d + off + c] += ds * static_cast<double>(kd[j * d + off + c]);
                gk[j * d + off + c] += ds * static_cast<double>(qd[i * d + off + c]);
              }
            }
          }
        }
        auto flush = [](const BasicTensor<T>& t, const std::vector<double>& src) {
          if (!t.requires_grad()) return;
          auto dst = t.mutable_grad();
          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += static_cast<T>(src[i]);
        };
        flush(q, gq);
        flush(k, gk);
        flush(v, gv);
      });
}

#define TSLIDER_INSTANTIATE_OPS(T)                                                              \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                 \
  template BasicTensor<T> transpose(const BasicTensor<T>&);                                     \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                    \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                    \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                    \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                      \
  template BasicTensor<T> add_rowwise(const BasicTensor<T>&, const BasicTensor<T>&);            \
  template BasicTensor<T> gelu(const BasicTensor<T>&);                                          \
  template BasicTensor<T> softmax_lastdim(const BasicTensor<T>&);                               \
  template BasicTensor<T> layernorm(const BasicTensor<T>&, const BasicTensor<T>&,               \
                                    const BasicTensor<T>&, double);                             \
  template BasicTensor<T> concat_lastdim(const BasicTensor<T>&, const BasicTensor<T>&);         \
  template BasicTensor<T> slice_rows(const BasicTensor<T>&, std::size_t, std::size_t);          \
  template BasicTensor<T> gather_rows(const BasicTensor<T>&, std::span<const std::int32_t>);    \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                \
  template BasicTensor<T> mse(const BasicTensor<T>&, const BasicTensor<T>&);                    \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                           \
  template BasicTensor<T> attention(const BasicTensor<T>&, const BasicTensor<T>&,               \
                                    const BasicTensor<T>&, std::size_t, bool);

TSLIDER_INSTANTIATE_OPS(float)
TSLIDER_INSTANTIATE_OPS(double)

#undef TSLIDER_INSTANTIATE_OPS

}  // namespace tslider
