#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tslider {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major tensor handle with an optional gradient buffer.
///
/// Copies share storage. Operations never write into their inputs; only
/// optimizers and initializers touch leaf data through mutable_data().
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor filled(Shape shape, T value);
  static BasicTensor scalar(T value);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const;
  std::size_t dims() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;

  std::span<const T> data() const;
  std::span<T> mutable_data();
  T at(std::size_t flat_index) const;
  T item() const;

  bool requires_grad() const;
  void set_requires_grad(bool value);

  bool has_grad() const;
  std::span<const T> grad() const;
  /// Gradient buffer, allocated as zeros on first use.
  std::span<T> mutable_grad() const;
  void zero_grad();

  /// Deep copy without gradient state.
  BasicTensor detach() const;

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(numel());
    auto src = data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(src[i]);
    return BasicTensor<U>(shape(), std::move(out));
  }

  bool shares_storage_with(const BasicTensor& other) const noexcept {
    return impl_ == other.impl_;
  }

 private:
  struct Storage {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> impl_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// True when both tensors have the same shape and bitwise-equal data.
template <typename T>
bool bit_equal(const BasicTensor<T>& a, const BasicTensor<T>& b);

// ---------------------------------------------------------------------------
// Tape

enum class OpKind {
  kMatmul,
  kTranspose,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddRowwise,
  kGelu,
  kSoftmax,
  kLayerNorm,
  kConcat,
  kSliceRows,
  kGatherRows,
  kReshape,
  kMse,
  kSum,
  kAttention,
};

std::string_view op_name(OpKind kind);
std::optional<OpKind> op_from_name(std::string_view name);

template <typename T>
struct TapeNode {
  OpKind kind;
  std::vector<BasicTensor<T>> inputs;
  BasicTensor<T> output;
  /// Accumulates into the gradients of `inputs` given d(loss)/d(output).
  std::function<void(std::span<const T>)> backward;
};

/// Append-only record of the forward computation for one training step.
template <typename T>
class Tape {
 public:
  void record(TapeNode<T> node) { nodes_.push_back(std::move(node)); }

  /// Reverse sweep from a scalar loss. Leaves keep their gradients; the
  /// tape is cleared afterwards. Empty tape is a no-op.
  void backward(const BasicTensor<T>& loss);

  void clear() { nodes_.clear(); }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool empty() const noexcept { return nodes_.empty(); }
  std::span<const TapeNode<T>> nodes() const noexcept { return nodes_; }

 private:
  std::vector<TapeNode<T>> nodes_;
};

template <typename T>
Tape<T>* active_tape() noexcept;

/// Makes `tape` the recording target on this thread for the scope lifetime.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

/// Backward through the active tape of this thread.
template <typename T>
void backward(const BasicTensor<T>& loss);

namespace debug {
// Test hook: scales the upstream gradient fed to one op kind's backward rule.
void set_backward_fault(std::optional<OpKind> kind);
std::optional<OpKind> backward_fault();
}  // namespace debug

// ---------------------------------------------------------------------------
// Operations. Reductions accumulate in double, sequentially along the
// reduction axis, and round once to T.

inline constexpr double kLayerNormEps = 1e-5;

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a);
template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor);
/// x[..., n] + bias[n], bias broadcast over every leading row.
template <typename T>
BasicTensor<T> add_rowwise(const BasicTensor<T>& x, const BasicTensor<T>& bias);
/// Exact (erf) GELU.
template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> softmax_lastdim(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> layernorm(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                         const BasicTensor<T>& bias, double eps = kLayerNormEps);
template <typename T>
BasicTensor<T> concat_lastdim(const BasicTensor<T>& a, const BasicTensor<T>& b);
/// Rows [begin, end) along the first axis.
template <typename T>
BasicTensor<T> slice_rows(const BasicTensor<T>& x, std::size_t begin, std::size_t end);
/// Embedding lookup: out[i] = table[ids[i]].
template <typename T>
BasicTensor<T> gather_rows(const BasicTensor<T>& table, std::span<const std::int32_t> ids);
template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);
/// Mean squared difference over all elements, as a shape-{1} tensor.
template <typename T>
BasicTensor<T> mse(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x);
/// Multi-head scaled dot-product self-attention over q, k, v of shape
/// [len x d]. With `causal`, position i attends to positions <= i.
template <typename T>
BasicTensor<T> attention(const BasicTensor<T>& q, const BasicTensor<T>& k,
                         const BasicTensor<T>& v, std::size_t n_heads, bool causal);

/// x W^T + b for W of shape [out x in].
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias) {
  return add_rowwise(matmul(x, transpose(weight)), bias);
}

}  // namespace tslider
