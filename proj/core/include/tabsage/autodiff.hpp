#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tabsage/dataset.hpp"
#include "tabsage/knn_graph.hpp"
#include "tabsage/rng.hpp"

// Dense reverse-mode differentiation for exactly the operations the GraphSAGE
// regressor needs. Tensors are 2-D, row-major and shared by handle: copying a
// Tensor aliases its storage, `clone()` makes an independent copy.
namespace tabsage::ad {

enum class Mode { train, eval };

// Cache-line aligned storage, so vectorized kernels see the same alignment on
// every allocation and sum in the same order run to run.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, bool requires_grad = false);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values, bool requires_grad = false);
  static Tensor from_matrix(const RowMatrix& m, bool requires_grad = false);
  static Tensor column(std::span<const double> values, bool requires_grad = false);

  bool defined() const noexcept { return storage_ != nullptr; }
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;
  std::size_t size() const noexcept { return rows() * cols(); }
  bool requires_grad() const noexcept;

  std::span<const double> values() const noexcept;
  // In-place writes for optimizer updates and test perturbations; shape is fixed.
  std::span<double> mutable_values() noexcept;
  double value(std::size_t r, std::size_t c) const { return values()[r * cols() + c]; }
  double item() const;

  bool has_grad() const noexcept;
  std::span<const double> grad() const noexcept;
  void zero_grad() noexcept;

  Tensor clone() const;
  bool shares_storage(const Tensor& other) const noexcept { return storage_ == other.storage_; }

 private:
  struct Storage {
    std::size_t rows = 0;
    std::size_t cols = 0;
    Buffer values;
    Buffer grad;
    bool requires_grad = false;
  };

  std::shared_ptr<Storage> storage_;

  friend class Tape;
  friend std::span<double> grad_buffer(const Tensor& t);
};

// Ordered record of executed operations. `backward` replays them in exact
// reverse order; gradients accumulate additively into every tracked input.
class Tape {
 public:
  // A non-recording tape runs forward only: no closures, no output grads.
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return ops_.size(); }

  // Registers `fn` to run during backward; `inputs` are checked for finite
  // gradients afterwards.
  void record(std::string_view op, std::vector<Tensor> inputs, std::function<void()> fn);

  // loss must be a tracked 1x1 tensor produced on this tape.
  void backward(const Tensor& loss);

  // Drops recorded operations so the tape can be reused.
  void reset() noexcept;

 private:
  struct Op {
    std::string name;
    std::vector<Tensor> inputs;
    std::function<void()> backward;
  };

  bool recording_;
  bool backward_done_ = false;
  std::vector<Op> ops_;
};

// Per-feature batch normalization parameters and running statistics.
struct BatchNorm {
  static constexpr double kEpsilon = 1e-5;
  static constexpr double kMomentum = 0.1;

  explicit BatchNorm(std::size_t features = 0);

  Tensor gamma;  // 1 x f, learnable, starts at 1
  Tensor beta;   // 1 x f, learnable, starts at 0
  std::vector<double> running_mean;  // starts at 0
  std::vector<double> running_var;   // starts at 1; biased batch estimate

  BatchNorm clone() const;
};

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
// x · weightᵀ + bias, weight is out x in, bias is 1 x out.
Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor concat_cols(Tape& tape, const Tensor& a, const Tensor& b);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sum(Tape& tape, const Tensor& x);
Tensor relu(Tape& tape, const Tensor& x);
// Train mode normalizes with batch statistics and updates the running ones;
// eval mode uses the running statistics.
Tensor batch_norm(Tape& tape, const Tensor& x, BatchNorm& state, Mode mode);
// Eval-mode normalization with a read-only state.
Tensor batch_norm(Tape& tape, const Tensor& x, const BatchNorm& state);
// Inverted dropout; identity in eval mode or for p = 0.
Tensor dropout(Tape& tape, const Tensor& x, double p, Mode mode, Rng& rng);
// Row i becomes the mean of rows N(i), self excluded.
Tensor neighbor_mean(Tape& tape, const Tensor& h, const Adjacency& adjacency);
// Mean of consecutive row blocks [offsets[s], offsets[s+1]).
Tensor segment_mean(Tape& tape, const Tensor& h, std::span<const std::size_t> offsets);
// Mean squared error over the rows listed in mask.
Tensor mse_loss(Tape& tape, const Tensor& pred, const Tensor& target, std::span<const std::size_t> mask);

}  // namespace tabsage::ad
