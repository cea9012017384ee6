#include "wsr/tensor.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>

namespace wsr {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

namespace {
#ifdef NDEBUG
std::atomic<bool> g_finite_checks{false};
#else
std::atomic<bool> g_finite_checks{true};
#endif
}  // namespace

void set_finite_checks(bool on) { g_finite_checks.store(on); }
bool finite_checks_enabled() { return g_finite_checks.load(); }

template <typename T>
void debug_check_finite(const Tensor<T>& t, const char* op) {
  if (!finite_checks_enabled()) return;
  for (T v : t.values()) {
    WSR_REQUIRE(std::isfinite(static_cast<double>(v)), ErrKind::numeric,
                "non-finite value produced by op '", op, "'");
  }
}

// ---------------------------------------------------------------- Tensor

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  Tensor t;
  t.s_ = std::make_shared<TensorStorage<T>>();
  t.s_->shape = std::move(shape);
  t.s_->values.assign(static_cast<size_t>(shape_numel(t.s_->shape)), T(0));
  t.s_->requires_grad = requires_grad;
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (auto& v : t.s_->values) v = value;
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::from_values(Shape shape, std::vector<T> values, bool requires_grad) {
  WSR_REQUIRE(static_cast<int64_t>(values.size()) == shape_numel(shape), ErrKind::usage,
              "element count ", values.size(), " does not match shape ", shape_str(shape));
  Tensor t;
  t.s_ = std::make_shared<TensorStorage<T>>();
  t.s_->shape = std::move(shape);
  t.s_->values = std::move(values);
  t.s_->requires_grad = requires_grad;
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return from_values({1}, {value});
}

template <typename T>
T Tensor<T>::item() const {
  WSR_REQUIRE(is_scalar(), ErrKind::usage, "item() on non-scalar tensor ", shape_str(shape()));
  return s_->values[0];
}

template <typename T>
std::vector<T>& Tensor<T>::grad() {
  if (s_->grad.empty()) s_->grad.assign(s_->values.size(), T(0));
  return s_->grad;
}

template <typename T>
const std::vector<T>* Tensor<T>::grad_if_present() const {
  return s_->grad.empty() ? nullptr : &s_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), T(0));
}

template <typename T>
template <typename U>
Tensor<U> Tensor<T>::cast() const {
  std::vector<U> v(s_->values.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<U>(s_->values[i]);
  return Tensor<U>::from_values(s_->shape, std::move(v), s_->requires_grad);
}

// ------------------------------------------------------------------ Tape

template <typename T>
void Tape<T>::record(const char* op, const Tensor<T>& out, BackwardFn fn) {
  debug_check_finite(out, op);
  produced_.emplace(out.key(), out);
  nodes_.push_back(Node{op, std::move(fn)});
}

template <typename T>
bool Tape<T>::produced(const Tensor<T>& t) const {
  return produced_.count(t.key()) > 0;
}

template <typename T>
bool Tape<T>::wants_grad(const Tensor<T>& t) const {
  return t.requires_grad() || produced(t);
}

template <typename T>
std::vector<T>& Tape<T>::grad(const Tensor<T>& t) {
  auto it = grads_.find(t.key());
  if (it == grads_.end()) {
    it = grads_.emplace(t.key(), std::vector<T>(static_cast<size_t>(t.size()), T(0))).first;
  }
  return it->second;
}

template <typename T>
const std::vector<T>* Tape<T>::find_grad(const Tensor<T>& t) const {
  auto it = grads_.find(t.key());
  return it == grads_.end() ? nullptr : &it->second;
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  WSR_REQUIRE(loss.defined() && loss.is_scalar(), ErrKind::usage,
              "backward requires a scalar loss, got ",
              loss.defined() ? shape_str(loss.shape()) : "undefined");
  WSR_REQUIRE(produced(loss), ErrKind::usage, "backward: loss tensor is not on this tape");
  grad(loss).assign(1, T(1));
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->fn(*this);
  }
}

template <typename T>
void Tape<T>::merge_into(std::span<const Tensor<T>> params) {
  for (const Tensor<T>& p : params) {
    const std::vector<T>* g = find_grad(p);
    if (!g) continue;
    Tensor<T> t = p;
    std::vector<T>& acc = t.grad();
    for (size_t i = 0; i < acc.size(); ++i) acc[i] += (*g)[i];
  }
}

// ----------------------------------------------------------- elementwise

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  WSR_REQUIRE(same_shape(a.shape(), b.shape()), ErrKind::usage, op, ": shape mismatch ",
              shape_str(a.shape()), " vs ", shape_str(b.shape()));
}

}  // namespace

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> v(static_cast<size_t>(a.size()));
  const T* pa = a.data();
  const T* pb = b.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = pa[i] + pb[i];
  Tensor<T> out = Tensor<T>::from_values(a.shape(), std::move(v));
  if (tape) {
    tape->record("add", out, [a, b, out](Tape<T>& tp) {
      const std::vector<T>& go = tp.grad(out);
      if (tp.wants_grad(a)) {
        std::vector<T>& ga = tp.grad(a);
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
      }
      if (tp.wants_grad(b)) {
        std::vector<T>& gb = tp.grad(b);
        for (size_t i = 0; i < gb.size(); ++i) gb[i] += go[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> v(static_cast<size_t>(a.size()));
  const T* pa = a.data();
  const T* pb = b.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = pa[i] - pb[i];
  Tensor<T> out = Tensor<T>::from_values(a.shape(), std::move(v));
  if (tape) {
    tape->record("sub", out, [a, b, out](Tape<T>& tp) {
      const std::vector<T>& go = tp.grad(out);
      if (tp.wants_grad(a)) {
        std::vector<T>& ga = tp.grad(a);
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
      }
      if (tp.wants_grad(b)) {
        std::vector<T>& gb = tp.grad(b);
        for (size_t i = 0; i < gb.size(); ++i) gb[i] -= go[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> v(static_cast<size_t>(a.size()));
  const T* pa = a.data();
  const T* pb = b.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = pa[i] * pb[i];
  Tensor<T> out = Tensor<T>::from_values(a.shape(), std::move(v));
  if (tape) {
    tape->record("mul", out, [a, b, out](Tape<T>& tp) {
      const std::vector<T>& go = tp.grad(out);
      const T* pa = a.data();
      const T* pb = b.data();
      if (tp.wants_grad(a)) {
        std::vector<T>& ga = tp.grad(a);
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * pb[i];
      }
      if (tp.wants_grad(b)) {
        std::vector<T>& gb = tp.grad(b);
        for (size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * pa[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& a, T factor) {
  std::vector<T> v(static_cast<size_t>(a.size()));
  const T* pa = a.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = pa[i] * factor;
  Tensor<T> out = Tensor<T>::from_values(a.shape(), std::move(v));
  if (tape) {
    tape->record("scale", out, [a, out, factor](Tape<T>& tp) {
      if (!tp.wants_grad(a)) return;
      const std::vector<T>& go = tp.grad(out);
      std::vector<T>& ga = tp.grad(a);
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * factor;
    });
  }
  return out;
}

template <typename T>
Tensor<T> elementwise(Tape<T>* tape, EwOp op, const Tensor<T>& a, const Tensor<T>& b, T factor) {
  switch (op) {
    case EwOp::add: return add(tape, a, b);
    case EwOp::sub: return sub(tape, a, b);
    case EwOp::mul: return mul(tape, a, b);
    case EwOp::scale: return scale(tape, a, factor);
  }
  fail(ErrKind::internal, "elementwise: bad op");
}

// ---------------------------------------------------------------- matmul

template <typename T>
Tensor<T> matmul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  WSR_REQUIRE(a.rank() == 2 && b.rank() == 2, ErrKind::usage, "matmul: rank-2 tensors required, got ",
              shape_str(a.shape()), " and ", shape_str(b.shape()));
  const int m = a.dim(0), n = a.dim(1), n2 = b.dim(0), p = b.dim(1);
  WSR_REQUIRE(n == n2, ErrKind::usage, "matmul: inner dimensions disagree, ", shape_str(a.shape()),
              " vs ", shape_str(b.shape()));
  Tensor<T> out = Tensor<T>::zeros({m, p});
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (int i = 0; i < m; ++i) {
    for (int k = 0; k < n; ++k) {
      const T aik = pa[i * n + k];
      const T* brow = pb + k * p;
      T* orow = po + i * p;
      for (int j = 0; j < p; ++j) orow[j] += aik * brow[j];
    }
  }
  if (tape) {
    tape->record("matmul", out, [a, b, out, m, n, p](Tape<T>& tp) {
      const std::vector<T>& go = tp.grad(out);
      if (tp.wants_grad(a)) {
        // dA = dC * B^T
        std::vector<T>& ga = tp.grad(a);
        const T* pb = b.data();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < p; ++j) {
            const T g = go[static_cast<size_t>(i * p + j)];
            for (int k = 0; k < n; ++k) ga[static_cast<size_t>(i * n + k)] += g * pb[k * p + j];
          }
      }
      if (tp.wants_grad(b)) {
        // dB = A^T * dC
        std::vector<T>& gb = tp.grad(b);
        const T* pa = a.data();
        for (int i = 0; i < m; ++i)
          for (int k = 0; k < n; ++k) {
            const T aik = pa[i * n + k];
            for (int j = 0; j < p; ++j)
              gb[static_cast<size_t>(k * p + j)] += aik * go[static_cast<size_t>(i * p + j)];
          }
      }
    });
  }
  return out;
}

// ------------------------------------------------------------ reductions

template <typename T>
Tensor<T> reduce_sum(Tape<T>* tape, const Tensor<T>& a) {
  T s = 0;
  for (T v : a.values()) s += v;
  Tensor<T> out = Tensor<T>::scalar(s);
  if (tape) {
    tape->record("reduce_sum", out, [a, out](Tape<T>& tp) {
      if (!tp.wants_grad(a)) return;
      const T g = tp.grad(out)[0];
      std::vector<T>& ga = tp.grad(a);
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mse(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mse");
  const size_t n = static_cast<size_t>(a.size());
  const T* pa = a.data();
  const T* pb = b.data();
  T s = 0;
  for (size_t i = 0; i < n; ++i) {
    const T d = pa[i] - pb[i];
    s += d * d;
  }
  Tensor<T> out = Tensor<T>::scalar(s / static_cast<T>(n));
  if (tape) {
    tape->record("mse", out, [a, b, out, n](Tape<T>& tp) {
      const T g = tp.grad(out)[0] * T(2) / static_cast<T>(n);
      const T* pa = a.data();
      const T* pb = b.data();
      if (tp.wants_grad(a)) {
        std::vector<T>& ga = tp.grad(a);
        for (size_t i = 0; i < n; ++i) ga[i] += g * (pa[i] - pb[i]);
      }
      if (tp.wants_grad(b)) {
        std::vector<T>& gb = tp.grad(b);
        for (size_t i = 0; i < n; ++i) gb[i] -= g * (pa[i] - pb[i]);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum_sq_diff(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sum_sq_diff");
  const size_t n = static_cast<size_t>(a.size());
  const T* pa = a.data();
  const T* pb = b.data();
  T s = 0;
  for (size_t i = 0; i < n; ++i) {
    const T d = pa[i] - pb[i];
    s += d * d;
  }
  Tensor<T> out = Tensor<T>::scalar(s);
  if (tape) {
    tape->record("sum_sq_diff", out, [a, b, out, n](Tape<T>& tp) {
      const T g = tp.grad(out)[0] * T(2);
      const T* pa = a.data();
      const T* pb = b.data();
      if (tp.wants_grad(a)) {
        std::vector<T>& ga = tp.grad(a);
        for (size_t i = 0; i < n; ++i) ga[i] += g * (pa[i] - pb[i]);
      }
      if (tp.wants_grad(b)) {
        std::vector<T>& gb = tp.grad(b);
        for (size_t i = 0; i < n; ++i) gb[i] -= g * (pa[i] - pb[i]);
      }
    });
  }
  return out;
}

// --------------------------------------------------------- shape changes

template <typename T>
Tensor<T> reshape(Tape<T>* tape, const Tensor<T>& a, Shape shape) {
  WSR_REQUIRE(shape_numel(shape) == a.size(), ErrKind::usage, "reshape: ", shape_str(a.shape()),
              " has ", a.size(), " elements, target ", shape_str(shape), " wants ",
              shape_numel(shape));
  std::vector<T> v(a.values().begin(), a.values().end());
  Tensor<T> out = Tensor<T>::from_values(std::move(shape), std::move(v));
  if (tape) {
    tape->record("reshape", out, [a, out](Tape<T>& tp) {
      if (!tp.wants_grad(a)) return;
      const std::vector<T>& go = tp.grad(out);
      std::vector<T>& ga = tp.grad(a);
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_channels(Tape<T>* tape, std::span<const Tensor<T>> parts) {
  WSR_REQUIRE(!parts.empty(), ErrKind::usage, "concat_channels: no inputs");
  const int h = parts[0].dim(1), w = parts[0].dim(2);
  int channels = 0;
  for (const auto& p : parts) {
    WSR_REQUIRE(p.rank() == 3, ErrKind::usage, "concat_channels: rank-3 inputs required, got ",
                shape_str(p.shape()));
    WSR_REQUIRE(p.dim(1) == h && p.dim(2) == w, ErrKind::usage,
                "concat_channels: spatial mismatch ", shape_str(p.shape()), " vs [", h, "x", w, "]");
    channels += p.dim(0);
  }
  Tensor<T> out = Tensor<T>::zeros({channels, h, w});
  T* po = out.data();
  size_t off = 0;
  for (const auto& p : parts) {
    std::memcpy(po + off, p.data(), static_cast<size_t>(p.size()) * sizeof(T));
    off += static_cast<size_t>(p.size());
  }
  if (tape) {
    std::vector<Tensor<T>> held(parts.begin(), parts.end());
    tape->record("concat_channels", out, [held = std::move(held), out](Tape<T>& tp) {
      const std::vector<T>& go = tp.grad(out);
      size_t off = 0;
      for (const auto& p : held) {
        const size_t n = static_cast<size_t>(p.size());
        if (tp.wants_grad(p)) {
          std::vector<T>& gp = tp.grad(p);
          for (size_t i = 0; i < n; ++i) gp[i] += go[off + i];
        }
        off += n;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------- serialization

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 24) & 0xff));
}

uint32_t get_u32(std::span<const uint8_t> in, size_t off) {
  return static_cast<uint32_t>(in[off]) | (static_cast<uint32_t>(in[off + 1]) << 8) |
         (static_cast<uint32_t>(in[off + 2]) << 16) | (static_cast<uint32_t>(in[off + 3]) << 24);
}

constexpr uint32_t kTensorMagic = 0x31525357u;  // "WSR1" little-endian

}  // namespace

template <typename T>
std::vector<uint8_t> tensor_to_blob(const Tensor<T>& t) {
  std::vector<uint8_t> out;
  out.reserve(8 + 4 * t.shape().size() + 4 * static_cast<size_t>(t.size()));
  put_u32(out, kTensorMagic);
  put_u32(out, static_cast<uint32_t>(t.rank()));
  for (int d : t.shape()) put_u32(out, static_cast<uint32_t>(d));
  for (T v : t.values()) {
    const float f = static_cast<float>(v);
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
  }
  return out;
}

template <typename T>
Tensor<T> tensor_from_blob(std::span<const uint8_t> blob) {
  WSR_REQUIRE(blob.size() >= 8, ErrKind::io, "tensor blob truncated (", blob.size(), " bytes)");
  WSR_REQUIRE(get_u32(blob, 0) == kTensorMagic, ErrKind::io, "tensor blob: bad magic");
  const uint32_t rank = get_u32(blob, 4);
  WSR_REQUIRE(rank <= 8, ErrKind::io, "tensor blob: implausible rank ", rank);
  WSR_REQUIRE(blob.size() >= 8 + 4 * rank, ErrKind::io, "tensor blob truncated in dims");
  Shape shape(rank);
  int64_t n = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    shape[i] = static_cast<int>(get_u32(blob, 8 + 4 * i));
    n *= shape[i];
  }
  const size_t data_off = 8 + 4 * rank;
  WSR_REQUIRE(static_cast<int64_t>(blob.size()) == static_cast<int64_t>(data_off) + 4 * n,
              ErrKind::io, "tensor blob: size ", blob.size(), " does not match header");
  std::vector<T> values(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const uint32_t bits = get_u32(blob, data_off + 4 * static_cast<size_t>(i));
    float f;
    std::memcpy(&f, &bits, 4);
    values[static_cast<size_t>(i)] = static_cast<T>(f);
  }
  return Tensor<T>::from_values(std::move(shape), std::move(values));
}

template <typename T>
void save_tensor(const Tensor<T>& t, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  WSR_REQUIRE(f.good(), ErrKind::io, "cannot open '", path, "' for writing");
  const std::vector<uint8_t> blob = tensor_to_blob(t);
  f.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
  WSR_REQUIRE(f.good(), ErrKind::io, "write failed for '", path, "'");
}

template <typename T>
Tensor<T> load_tensor(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  WSR_REQUIRE(f.good(), ErrKind::io, "cannot open '", path, "'");
  std::vector<uint8_t> blob((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return tensor_from_blob<T>(blob);
}

// ----------------------------------------------------- instantiations

#define WSR_INSTANTIATE_TENSOR(T)                                                              \
  template class Tensor<T>;                                                                    \
  template class Tape<T>;                                                                      \
  template void debug_check_finite<T>(const Tensor<T>&, const char*);                          \
  template Tensor<T> add<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> sub<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> mul<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> scale<T>(Tape<T>*, const Tensor<T>&, T);                                  \
  template Tensor<T> elementwise<T>(Tape<T>*, EwOp, const Tensor<T>&, const Tensor<T>&, T);    \
  template Tensor<T> matmul<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> reduce_sum<T>(Tape<T>*, const Tensor<T>&);                                \
  template Tensor<T> mse<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> sum_sq_diff<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> reshape<T>(Tape<T>*, const Tensor<T>&, Shape);                            \
  template Tensor<T> concat_channels<T>(Tape<T>*, std::span<const Tensor<T>>);                 \
  template std::vector<uint8_t> tensor_to_blob<T>(const Tensor<T>&);                           \
  template Tensor<T> tensor_from_blob<T>(std::span<const uint8_t>);                            \
  template void save_tensor<T>(const Tensor<T>&, const std::string&);                          \
  template Tensor<T> load_tensor<T>(const std::string&);

WSR_INSTANTIATE_TENSOR(float)
WSR_INSTANTIATE_TENSOR(double)

template Tensor<double> Tensor<float>::cast<double>() const;
template Tensor<float> Tensor<double>::cast<float>() const;
template Tensor<float> Tensor<float>::cast<float>() const;
template Tensor<double> Tensor<double>::cast<double>() const;

}  // namespace wsr
