#ifndef WSR_TENSOR_HPP
#define WSR_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "wsr/error.hpp"

namespace wsr {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);
bool same_shape(const Shape& a, const Shape& b);

// When enabled, every op scans its output for non-finite values and aborts
// with the op name. Debug builds default to on.
void set_finite_checks(bool on);
bool finite_checks_enabled();

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // accumulated (merged) gradient; empty until used
  bool requires_grad = false;
};

// Value-semantics handle to shared storage. Values are written once at
// creation time (forward ops allocate fresh storage); after that, tensors
// are read-only and safe to share across threads.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value);

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  int rank() const { return static_cast<int>(s_->shape.size()); }
  int dim(int i) const { return s_->shape[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(s_->values.size()); }
  bool is_scalar() const { return size() == 1; }
  T item() const;

  const T* data() const { return s_->values.data(); }
  T* data() { return s_->values.data(); }
  std::span<const T> values() const { return s_->values; }
  std::vector<T>& mutable_values() { return s_->values; }

  bool requires_grad() const { return s_ && s_->requires_grad; }
  void set_requires_grad(bool on) { s_->requires_grad = on; }

  // Accumulated gradient (after Tape::merge_into). Zero-filled on demand.
  std::vector<T>& grad();
  const std::vector<T>* grad_if_present() const;
  void zero_grad();

  const TensorStorage<T>* key() const { return s_.get(); }

  template <typename U>
  Tensor<U> cast() const;

 private:
  std::shared_ptr<TensorStorage<T>> s_;
};

// Reverse-mode tape. Ops append one node each in forward creation order, so
// the node list is already topologically sorted; backward() walks it once in
// reverse. Gradient buffers live on the tape (not on the tensors), which is
// what makes independent per-sample tapes safe to run concurrently against
// shared parameter tensors; merge_into() folds tape gradients into the
// tensors' accumulated buffers afterward.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(const char* op, const Tensor<T>& out, BackwardFn fn);

  // True if gradients should be propagated into t (it is a parameter or was
  // produced by an op on this tape). Backward closures consult this to skip
  // dead branches.
  bool wants_grad(const Tensor<T>& t) const;
  bool produced(const Tensor<T>& t) const;

  // Tape-local gradient buffer, zero-initialized on first access.
  std::vector<T>& grad(const Tensor<T>& t);
  const std::vector<T>* find_grad(const Tensor<T>& t) const;

  void backward(const Tensor<T>& loss);

  // Accumulate this tape's gradients into the tensors' own grad buffers.
  void merge_into(std::span<const Tensor<T>> params);

  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    const char* op;
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const TensorStorage<T>*, std::vector<T>> grads_;
  std::unordered_map<const TensorStorage<T>*, Tensor<T>> produced_;
};

enum class EwOp { add, sub, mul, scale };

// Elementwise ops. b must match a's shape exactly (scale takes a scalar).
// Passing tape == nullptr runs any op below in pure forward mode.
template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& a, T factor);
template <typename T>
Tensor<T> elementwise(Tape<T>* tape, EwOp op, const Tensor<T>& a, const Tensor<T>& b, T factor = T(0));

template <typename T>
Tensor<T> matmul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> reduce_sum(Tape<T>* tape, const Tensor<T>& a);

// Mean of squared elementwise differences, as a differentiable scalar.
template <typename T>
Tensor<T> mse(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

// Sum of squared elementwise differences (the ||.||_2^2 building block).
template <typename T>
Tensor<T> sum_sq_diff(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

// Returns a tensor with the same elements and a new shape (copy semantics).
template <typename T>
Tensor<T> reshape(Tape<T>* tape, const Tensor<T>& a, Shape shape);

// Concatenate rank-3 tensors [C_i, H, W] along the channel axis.
template <typename T>
Tensor<T> concat_channels(Tape<T>* tape, std::span<const Tensor<T>> parts);

// --- serialization ("WSR1" blob: u32 magic, u32 rank, u32 dims, f32 data,
// little-endian throughout). Doubles are stored as f32.
template <typename T>
std::vector<uint8_t> tensor_to_blob(const Tensor<T>& t);
template <typename T>
Tensor<T> tensor_from_blob(std::span<const uint8_t> blob);
template <typename T>
void save_tensor(const Tensor<T>& t, const std::string& path);
template <typename T>
Tensor<T> load_tensor(const std::string& path);

template <typename T>
void debug_check_finite(const Tensor<T>& t, const char* op);

}  // namespace wsr

#endif  // WSR_TENSOR_HPP
