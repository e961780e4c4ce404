#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "capsrec/errors.hpp"
#include "capsrec/rng.hpp"

namespace capsrec {

// Dense 2-D tensor of doubles with reverse-mode differentiation. Vectors are
// 1xN or Nx1 matrices, scalars are 1x1. Values are row-major. Gradient
// buffers are allocated lazily on first accumulation.
struct TensorData {
    int rows = 0;
    int cols = 0;
    std::vector<double> value;
    std::vector<double> grad;  // empty until touched
    bool requires_grad = false;

    TensorData(int r, int c, bool rg);

    int64_t numel() const { return static_cast<int64_t>(rows) * cols; }
    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
    }
};

class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(int rows, int cols, bool requires_grad = false);
    static Tensor constant(int rows, int cols, double fill);
    static Tensor from(int rows, int cols, std::vector<double> values,
                       bool requires_grad = false);
    static Tensor scalar(double v);

    bool defined() const { return static_cast<bool>(d_); }
    int rows() const { return d_->rows; }
    int cols() const { return d_->cols; }
    int64_t numel() const { return d_->numel(); }
    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool rg) { d_->requires_grad = rg; }

    std::vector<double>& value() { return d_->value; }
    const std::vector<double>& value() const { return d_->value; }
    std::vector<double>& grad() {
        d_->ensure_grad();
        return d_->grad;
    }
    bool has_grad() const { return !d_->grad.empty(); }
    void zero_grad() { d_->grad.clear(); }

    double at(int i, int j) const { return d_->value[static_cast<size_t>(i) * d_->cols + j]; }
    double& at(int i, int j) { return d_->value[static_cast<size_t>(i) * d_->cols + j]; }
    double grad_at(int i, int j) const;

    // Scalar extraction; ContractError when not 1x1.
    double item() const;

    std::shared_ptr<TensorData> data() const { return d_; }

    std::string shape_str() const;

  private:
    explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}
    std::shared_ptr<TensorData> d_;
};

// Thread-local recording of backward closures, executed in reverse by
// backward(). One forward pass -> one backward() -> tape cleared.
class Tape {
  public:
    static Tape& get();
    void record(std::function<void()> fn) { entries_.push_back(std::move(fn)); }
    size_t size() const { return entries_.size(); }
    void run_reverse_and_clear();
    void clear() { entries_.clear(); }

  private:
    std::vector<std::function<void()>> entries_;
};

// Disables recording (and requires_grad propagation) while alive. Nestable.
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

// Counts tensor allocations while alive; used to assert memory complexity
// (e.g. that no quadratic intermediate is ever materialized).
class AllocationAudit {
  public:
    AllocationAudit();
    ~AllocationAudit();
    AllocationAudit(const AllocationAudit&) = delete;
    AllocationAudit& operator=(const AllocationAudit&) = delete;
    size_t count() const { return count_; }
    int64_t max_numel() const { return max_numel_; }
    int64_t total_numel() const { return total_numel_; }

    void report(int64_t numel);

  private:
    size_t count_ = 0;
    int64_t max_numel_ = 0;
    int64_t total_numel_ = 0;
    AllocationAudit* prev_ = nullptr;
};

// Seeds d(root)/d(root)=1 and sweeps the tape in reverse, accumulating
// gradients into every reachable tensor with requires_grad. Root must be
// scalar. Clears the tape afterwards.
void backward(const Tensor& root);

// ------------------------------------------------------------------ operators
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor add_rowvec(const Tensor& a, const Tensor& v);
Tensor scale(const Tensor& a, double s);
Tensor add_const(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor reduce_sum(const Tensor& a);                 // -> 1x1
Tensor colwise_sum(const Tensor& a);                // -> 1xC
Tensor rowwise_sum(const Tensor& a);                // -> Rx1
Tensor add_n(const std::vector<Tensor>& ts);
Tensor gather_rows(const Tensor& a, const std::vector<int>& idx);
Tensor slice_rows(const Tensor& a, int r0, int r1);
Tensor repeat_rows(const Tensor& a, int times);     // row k -> rows k*times..k*times+times-1
Tensor sum_consecutive_rows(const Tensor& a, int group);
// out[i] = sum_{j in nbrs[i]} w[i][j'] * a[j]; weights optional (1.0 if null).
Tensor neighbor_sum(const std::vector<std::vector<int>>& nbrs, const Tensor& a,
                    const std::vector<std::vector<double>>* weights = nullptr);
// out[k] = sum_p b[k,p] * u[k*g+p] for b [n x g], u [n*g x d].
Tensor block_weighted_sum(const Tensor& b, const Tensor& u);
Tensor vstack(const std::vector<Tensor>& ts);
Tensor reshape(const Tensor& a, int rows, int cols);
Tensor exp_t(const Tensor& a);
Tensor log_t(const Tensor& a);
Tensor clamped_log(const Tensor& a, double eps);
Tensor sqrt_t(const Tensor& a);
Tensor square(const Tensor& a);
Tensor recip(const Tensor& a);
Tensor softmax(const Tensor& a, int axis = 1);
Tensor log_softmax_rows(const Tensor& a);
Tensor squash(const Tensor& a, int axis = 1);
Tensor l2_normalize(const Tensor& a, int axis = 1);
Tensor mul_colvec(const Tensor& a, const Tensor& c);  // c: Rx1
Tensor div_colvec(const Tensor& a, const Tensor& c);
Tensor mul_scalar_t(const Tensor& a, const Tensor& s);  // s: 1x1
Tensor pick_per_row(const Tensor& a, const std::vector<int>& idx);  // -> Rx1
Tensor diag(const Tensor& a);                                       // -> Rx1
Tensor dropout(const Tensor& a, double p, Rng& rng);

// Non-differentiating helpers.
std::vector<int> argmax_rows(const Tensor& a);  // ties -> lowest index

constexpr double kNormEps = 1e-12;

}  // namespace capsrec
