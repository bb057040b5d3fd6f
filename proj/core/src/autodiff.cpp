#include "tabsage/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "tabsage/error.hpp"

namespace tabsage::ad {

namespace {

#if defined(__GLIBC__)
// Activation buffers of a few MB are freed and reallocated every epoch; serve
// them from the heap rather than fresh mmap pages.
const bool kHeapTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
  return true;
}();
#endif

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapConst = Eigen::Map<const Matrix>;
using Map = Eigen::Map<Matrix>;

MapConst view(const Tensor& t) { return MapConst(t.values().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())); }
MapConst view(std::span<const double> s, std::size_t rows, std::size_t cols) {
  return MapConst(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
Map view_mut(std::span<double> s, std::size_t rows, std::size_t cols) {
  return Map(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

std::string shape(const Tensor& t) { return std::to_string(t.rows()) + "x" + std::to_string(t.cols()); }

void check_finite(std::string_view op, std::span<const double> values, std::string_view what) {
  for (double v : values) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, std::string(op) + " produced a non-finite " + std::string(what));
  }
}

bool tracks(const Tape& tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape.recording()) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

}  // namespace

std::span<double> grad_buffer(const Tensor& t);

namespace {

// Tracked outputs get a zeroed gradient up front so backward closures can
// always read it, even when the output does not reach the loss.
Tensor make_output(const Tape& tape, std::size_t rows, std::size_t cols, std::initializer_list<const Tensor*> inputs) {
  Tensor out(rows, cols, tracks(tape, inputs));
  if (out.requires_grad()) grad_buffer(out);
  return out;
}

}  // namespace

Tensor::Tensor(std::size_t rows, std::size_t cols, bool requires_grad)
    : Tensor(rows, cols, std::vector<double>(rows * cols, 0.0), requires_grad) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values, bool requires_grad)
    : storage_(std::make_shared<Storage>()) {
  if (values.size() != rows * cols) {
    throw Error(ErrorCode::ShapeMismatch, std::to_string(values.size()) + " values for a " + std::to_string(rows) + "x" +
                                              std::to_string(cols) + " tensor");
  }
  storage_->rows = rows;
  storage_->cols = cols;
  storage_->values.assign(values.begin(), values.end());
  storage_->requires_grad = requires_grad;
}

Tensor Tensor::from_matrix(const RowMatrix& m, bool requires_grad) {
  return Tensor(m.rows(), m.cols(), std::vector<double>(m.data().begin(), m.data().end()), requires_grad);
}

Tensor Tensor::column(std::span<const double> values, bool requires_grad) {
  return Tensor(values.size(), 1, std::vector<double>(values.begin(), values.end()), requires_grad);
}

std::size_t Tensor::rows() const noexcept { return storage_ ? storage_->rows : 0; }
std::size_t Tensor::cols() const noexcept { return storage_ ? storage_->cols : 0; }
bool Tensor::requires_grad() const noexcept { return storage_ && storage_->requires_grad; }

std::span<const double> Tensor::values() const noexcept {
  return storage_ ? std::span<const double>(storage_->values) : std::span<const double>{};
}
std::span<double> Tensor::mutable_values() noexcept {
  return storage_ ? std::span<double>(storage_->values) : std::span<double>{};
}

double Tensor::item() const {
  if (size() != 1) throw Error(ErrorCode::ShapeMismatch, "item() on a " + shape(*this) + " tensor");
  return storage_->values[0];
}

bool Tensor::has_grad() const noexcept { return storage_ && !storage_->grad.empty(); }

std::span<const double> Tensor::grad() const noexcept {
  return storage_ ? std::span<const double>(storage_->grad) : std::span<const double>{};
}

void Tensor::zero_grad() noexcept {
  if (storage_) std::fill(storage_->grad.begin(), storage_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  if (!storage_) return {};
  Tensor out;
  out.storage_ = std::make_shared<Storage>(*storage_);
  out.storage_->grad.clear();
  return out;
}

// Gradient storage of a tracked tensor, allocated on first use.
std::span<double> grad_buffer(const Tensor& t) {
  auto& g = t.storage_->grad;
  if (g.empty()) g.assign(t.storage_->values.size(), 0.0);
  return g;
}

void Tape::record(std::string_view op, std::vector<Tensor> inputs, std::function<void()> fn) {
  if (!recording_) return;
  ops_.push_back({std::string(op), std::move(inputs), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (backward_done_) throw Error(ErrorCode::DoubleBackward, "backward already ran on this tape; reset() first");
  if (loss.size() != 1) throw Error(ErrorCode::NonScalarLoss, "loss has shape " + shape(loss));
  if (!loss.requires_grad()) throw Error(ErrorCode::NonScalarLoss, "loss is not tracked");
  backward_done_ = true;
  grad_buffer(loss)[0] = 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    it->backward();
    for (const auto& input : it->inputs) {
      if (input.requires_grad() && input.has_grad()) check_finite(it->name, input.grad(), "gradient");
    }
  }
}

void Tape::reset() noexcept {
  ops_.clear();
  backward_done_ = false;
}

BatchNorm::BatchNorm(std::size_t features)
    : gamma(1, features, std::vector<double>(features, 1.0), true),
      beta(1, features, true),
      running_mean(features, 0.0),
      running_var(features, 1.0) {}

BatchNorm BatchNorm::clone() const {
  BatchNorm out(0);
  out.gamma = gamma.clone();
  out.beta = beta.clone();
  out.running_mean = running_mean;
  out.running_var = running_var;
  return out;
}

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw Error(ErrorCode::ShapeMismatch, "matmul " + shape(a) + " by " + shape(b));
  Tensor out = make_output(tape, a.rows(), b.cols(), {&a, &b});
  view_mut(out.mutable_values(), out.rows(), out.cols()).noalias() = view(a) * view(b);
  check_finite("matmul", out.values(), "value");
  if (out.requires_grad()) {
    tape.record("matmul", {a, b}, [a, b, out] {
      const auto g = view(out.grad(), out.rows(), out.cols());
      if (a.requires_grad()) view_mut(grad_buffer(a), a.rows(), a.cols()).noalias() += g * view(b).transpose();
      if (b.requires_grad()) view_mut(grad_buffer(b), b.rows(), b.cols()).noalias() += view(a).transpose() * g;
    });
  }
  return out;
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.cols() != weight.cols() || bias.rows() != 1 || bias.cols() != weight.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "linear x " + shape(x) + ", weight " + shape(weight) + ", bias " + shape(bias));
  }
  Tensor out = make_output(tape, x.rows(), weight.rows(), {&x, &weight, &bias});
  auto o = view_mut(out.mutable_values(), out.rows(), out.cols());
  o.noalias() = view(x) * view(weight).transpose();
  o.rowwise() += view(bias).row(0);
  check_finite("linear", out.values(), "value");
  if (out.requires_grad()) {
    tape.record("linear", {x, weight, bias}, [x, weight, bias, out] {
      const auto g = view(out.grad(), out.rows(), out.cols());
      if (x.requires_grad()) view_mut(grad_buffer(x), x.rows(), x.cols()).noalias() += g * view(weight);
      if (weight.requires_grad()) {
        view_mut(grad_buffer(weight), weight.rows(), weight.cols()).noalias() += g.transpose() * view(x);
      }
      if (bias.requires_grad()) view_mut(grad_buffer(bias), 1, bias.cols()) += g.colwise().sum();
    });
  }
  return out;
}

Tensor concat_cols(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) throw Error(ErrorCode::ShapeMismatch, "concat " + shape(a) + " with " + shape(b));
  Tensor out = make_output(tape, a.rows(), a.cols() + b.cols(), {&a, &b});
  auto o = view_mut(out.mutable_values(), out.rows(), out.cols());
  o.leftCols(static_cast<Eigen::Index>(a.cols())) = view(a);
  o.rightCols(static_cast<Eigen::Index>(b.cols())) = view(b);
  if (out.requires_grad()) {
    tape.record("concat_cols", {a, b}, [a, b, out] {
      const auto g = view(out.grad(), out.rows(), out.cols());
      if (a.requires_grad()) view_mut(grad_buffer(a), a.rows(), a.cols()) += g.leftCols(static_cast<Eigen::Index>(a.cols()));
      if (b.requires_grad()) {
        view_mut(grad_buffer(b), b.rows(), b.cols()) += g.rightCols(static_cast<Eigen::Index>(b.cols()));
      }
    });
  }
  return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error(ErrorCode::ShapeMismatch, "add " + shape(a) + " and " + shape(b));
  Tensor out = make_output(tape, a.rows(), a.cols(), {&a, &b});
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.values()[i] + b.values()[i];
  check_finite("add", out.values(), "value");
  if (out.requires_grad()) {
    tape.record("add", {a, b}, [a, b, out] {
      const auto g = out.grad();
      for (const Tensor* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto dst = grad_buffer(*t);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sum(Tape& tape, const Tensor& x) {
  Tensor out = make_output(tape, 1, 1, {&x});
  double total = 0.0;
  for (double v : x.values()) total += v;
  out.mutable_values()[0] = total;
  check_finite("sum", out.values(), "value");
  if (out.requires_grad()) {
    tape.record("sum", {x}, [x, out] {
      const double g = out.grad()[0];
      for (auto& d : grad_buffer(x)) d += g;
    });
  }
  return out;
}

Tensor relu(Tape& tape, const Tensor& x) {
  Tensor out = make_output(tape, x.rows(), x.cols(), {&x});
  const auto in = x.values();
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = in[i] > 0.0 ? in[i] : 0.0;
  check_finite("relu", out.values(), "value");
  if (out.requires_grad()) {
    tape.record("relu", {x}, [x, out] {
      const auto in = x.values();
      const auto g = out.grad();
      auto dst = grad_buffer(x);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (in[i] > 0.0) dst[i] += g[i];
      }
    });
  }
  return out;
}

namespace {

Tensor batch_norm_impl(Tape& tape, const Tensor& x, const BatchNorm& state, Mode mode, BatchNorm* update) {
  const std::size_t n = x.rows();
  const std::size_t f = x.cols();
  if (state.gamma.cols() != f || state.beta.cols() != f) {
    throw Error(ErrorCode::ShapeMismatch, "batch_norm over " + shape(x) + " with " + std::to_string(state.gamma.cols()) + " features");
  }
  if (mode == Mode::train && n < 2) throw Error(ErrorCode::SingleRowTrainBatch, "batch_norm needs >= 2 rows in train mode");

  const Tensor gamma = state.gamma;
  const Tensor beta = state.beta;
  Tensor out = make_output(tape, n, f, {&x, &gamma, &beta});

  // Per-column normalized input and inverse standard deviation, kept for backward.
  auto xhat = std::make_shared<std::vector<double>>(n * f);
  auto inv_std = std::make_shared<std::vector<double>>(f);
  const auto in = x.values();

  std::vector<double> mean(f, 0.0);
  std::vector<double> var(f, 0.0);
  if (mode == Mode::train) {
    for (std::size_t r = 0; r < n; ++r) {
      const double* row = in.data() + r * f;
      for (std::size_t c = 0; c < f; ++c) mean[c] += row[c];
    }
    for (auto& m : mean) m /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) {
      const double* row = in.data() + r * f;
      for (std::size_t c = 0; c < f; ++c) {
        const double d = row[c] - mean[c];
        var[c] += d * d;
      }
    }
    for (auto& v : var) v /= static_cast<double>(n);
    if (update != nullptr) {
      for (std::size_t c = 0; c < f; ++c) {
        update->running_mean[c] = (1.0 - BatchNorm::kMomentum) * update->running_mean[c] + BatchNorm::kMomentum * mean[c];
        update->running_var[c] = (1.0 - BatchNorm::kMomentum) * update->running_var[c] + BatchNorm::kMomentum * var[c];
      }
    }
  } else {
    mean = state.running_mean;
    var = state.running_var;
  }
  for (std::size_t c = 0; c < f; ++c) (*inv_std)[c] = 1.0 / std::sqrt(var[c] + BatchNorm::kEpsilon);

  const auto g_vals = gamma.values();
  const auto b_vals = beta.values();
  auto o = out.mutable_values();
  const double* is = inv_std->data();
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = in.data() + r * f;
    double* xh = xhat->data() + r * f;
    double* dst = o.data() + r * f;
    for (std::size_t c = 0; c < f; ++c) {
      xh[c] = (row[c] - mean[c]) * is[c];
      dst[c] = g_vals[c] * xh[c] + b_vals[c];
    }
  }
  check_finite("batch_norm", out.values(), "value");

  if (out.requires_grad()) {
    tape.record("batch_norm", {x, gamma, beta}, [x, gamma, beta, out, xhat, inv_std, mode, n, f] {
      const auto g = out.grad();
      const auto& xh = *xhat;
      std::vector<double> sum_g(f, 0.0);
      std::vector<double> sum_g_xhat(f, 0.0);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < f; ++c) {
          sum_g[c] += g[r * f + c];
          sum_g_xhat[c] += g[r * f + c] * xh[r * f + c];
        }
      }
      if (gamma.requires_grad()) {
        auto dg = grad_buffer(gamma);
        for (std::size_t c = 0; c < f; ++c) dg[c] += sum_g_xhat[c];
      }
      if (beta.requires_grad()) {
        auto db = grad_buffer(beta);
        for (std::size_t c = 0; c < f; ++c) db[c] += sum_g[c];
      }
      if (!x.requires_grad()) return;
      const auto gm = gamma.values();
      auto dx = grad_buffer(x);
      const double inv_n = 1.0 / static_cast<double>(n);
      const double* is = inv_std->data();
      std::vector<double> scale(f);
      for (std::size_t c = 0; c < f; ++c) scale[c] = gm[c] * is[c];
      for (std::size_t r = 0; r < n; ++r) {
        const double* gr = g.data() + r * f;
        const double* xr = xh.data() + r * f;
        double* dr = dx.data() + r * f;
        if (mode == Mode::train) {
          // dx = gamma inv_std / n * (n g - sum g - xhat sum(g xhat))
          for (std::size_t c = 0; c < f; ++c) {
            dr[c] += scale[c] * inv_n * (static_cast<double>(n) * gr[c] - sum_g[c] - xr[c] * sum_g_xhat[c]);
          }
        } else {
          for (std::size_t c = 0; c < f; ++c) dr[c] += gr[c] * scale[c];
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor batch_norm(Tape& tape, const Tensor& x, BatchNorm& state, Mode mode) {
  return batch_norm_impl(tape, x, state, mode, &state);
}

Tensor batch_norm(Tape& tape, const Tensor& x, const BatchNorm& state) {
  return batch_norm_impl(tape, x, state, Mode::eval, nullptr);
}

Tensor dropout(Tape& tape, const Tensor& x, double p, Mode mode, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw Error(ErrorCode::InvalidRate, "dropout rate " + std::to_string(p) + " outside [0, 1)");
  if (mode == Mode::eval || p == 0.0) return x;

  Tensor out = make_output(tape, x.rows(), x.cols(), {&x});
  const double keep_scale = 1.0 / (1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(x.size());
  for (auto& m : *mask) m = rng.uniform() < p ? 0.0 : keep_scale;
  const auto in = x.values();
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = in[i] * (*mask)[i];
  check_finite("dropout", out.values(), "value");
  if (out.requires_grad()) {
    tape.record("dropout", {x}, [x, out, mask] {
      const auto g = out.grad();
      auto dst = grad_buffer(x);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * (*mask)[i];
    });
  }
  return out;
}

Tensor neighbor_mean(Tape& tape, const Tensor& h, const Adjacency& adjacency) {
  const std::size_t n = h.rows();
  const std::size_t f = h.cols();
  if (adjacency.node_count() != n) {
    throw Error(ErrorCode::ShapeMismatch, "neighbor_mean over " + shape(h) + " with " +
                                              std::to_string(adjacency.node_count()) + " graph nodes");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (adjacency.degree(i) == 0) throw Error(ErrorCode::IsolatedNode, "node " + std::to_string(i) + " has no neighbors");
  }

  Tensor out = make_output(tape, n, f, {&h});
  const auto in = h.values();
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < n; ++i) {
    const auto nbrs = adjacency.neighbors(i);
    const double inv = 1.0 / static_cast<double>(nbrs.size());
    double* dst = o.data() + i * f;
    for (auto j : nbrs) {
      const double* src = in.data() + j * f;
      for (std::size_t c = 0; c < f; ++c) dst[c] += src[c];
    }
    for (std::size_t c = 0; c < f; ++c) dst[c] *= inv;
  }
  check_finite("neighbor_mean", out.values(), "value");
  if (out.requires_grad()) {
    // The adjacency must outlive the tape; graphs are owned by the caller for the whole run.
    const Adjacency* adj = &adjacency;
    tape.record("neighbor_mean", {h}, [h, out, adj, n, f] {
      const auto g = out.grad();
      auto dst = grad_buffer(h);
      for (std::size_t i = 0; i < n; ++i) {
        const auto nbrs = adj->neighbors(i);
        const double inv = 1.0 / static_cast<double>(nbrs.size());
        const double* gi = g.data() + i * f;
        for (auto j : nbrs) {
          double* dj = dst.data() + j * f;
          for (std::size_t c = 0; c < f; ++c) dj[c] += gi[c] * inv;
        }
      }
    });
  }
  return out;
}

Tensor segment_mean(Tape& tape, const Tensor& h, std::span<const std::size_t> offsets) {
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != h.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "segment offsets do not cover the " + shape(h) + " input");
  }
  const std::size_t segments = offsets.size() - 1;
  const std::size_t f = h.cols();
  for (std::size_t s = 0; s < segments; ++s) {
    if (offsets[s + 1] <= offsets[s]) throw Error(ErrorCode::ShapeMismatch, "segment " + std::to_string(s) + " is empty");
  }
  auto owned_offsets = std::make_shared<std::vector<std::size_t>>(offsets.begin(), offsets.end());

  Tensor out = make_output(tape, segments, f, {&h});
  const auto in = h.values();
  auto o = out.mutable_values();
  for (std::size_t s = 0; s < segments; ++s) {
    double* dst = o.data() + s * f;
    for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r) {
      const double* src = in.data() + r * f;
      for (std::size_t c = 0; c < f; ++c) dst[c] += src[c];
    }
    const double inv = 1.0 / static_cast<double>(offsets[s + 1] - offsets[s]);
    for (std::size_t c = 0; c < f; ++c) dst[c] *= inv;
  }
  check_finite("segment_mean", out.values(), "value");
  if (out.requires_grad()) {
    tape.record("segment_mean", {h}, [h, out, owned_offsets, segments, f] {
      const auto& off = *owned_offsets;
      const auto g = out.grad();
      auto dst = grad_buffer(h);
      for (std::size_t s = 0; s < segments; ++s) {
        const double inv = 1.0 / static_cast<double>(off[s + 1] - off[s]);
        const double* gs = g.data() + s * f;
        for (std::size_t r = off[s]; r < off[s + 1]; ++r) {
          double* dr = dst.data() + r * f;
          for (std::size_t c = 0; c < f; ++c) dr[c] += gs[c] * inv;
        }
      }
    });
  }
  return out;
}

Tensor mse_loss(Tape& tape, const Tensor& pred, const Tensor& target, std::span<const std::size_t> mask) {
  if (pred.rows() != target.rows() || pred.cols() != 1 || target.cols() != 1) {
    throw Error(ErrorCode::ShapeMismatch, "mse_loss pred " + shape(pred) + ", target " + shape(target));
  }
  if (mask.empty()) throw Error(ErrorCode::EmptyMask, "mse_loss with an empty mask");
  for (auto i : mask) {
    if (i >= pred.rows()) throw Error(ErrorCode::IndexOutOfRange, "mask index " + std::to_string(i));
  }
  Tensor out = make_output(tape, 1, 1, {&pred, &target});
  const auto p = pred.values();
  const auto t = target.values();
  double total = 0.0;
  for (auto i : mask) {
    const double d = p[i] - t[i];
    total += d * d;
  }
  out.mutable_values()[0] = total / static_cast<double>(mask.size());
  check_finite("mse_loss", out.values(), "value");
  if (out.requires_grad()) {
    auto owned_mask = std::make_shared<std::vector<std::size_t>>(mask.begin(), mask.end());
    tape.record("mse_loss", {pred, target}, [pred, target, out, owned_mask] {
      const double scale = 2.0 * out.grad()[0] / static_cast<double>(owned_mask->size());
      const auto p = pred.values();
      const auto t = target.values();
      if (pred.requires_grad()) {
        auto dst = grad_buffer(pred);
        for (auto i : *owned_mask) dst[i] += scale * (p[i] - t[i]);
      }
      if (target.requires_grad()) {
        auto dst = grad_buffer(target);
        for (auto i : *owned_mask) dst[i] -= scale * (p[i] - t[i]);
      }
    });
  }
  return out;
}

}  // namespace tabsage::ad
