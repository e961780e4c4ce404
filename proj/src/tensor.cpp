#include "capsrec/tensor.hpp"

#include <cmath>
#include <cstdio>
#include <utility>

namespace capsrec {

namespace {

thread_local int g_no_grad_depth = 0;
thread_local AllocationAudit* g_audit = nullptr;

std::string shape_of(const Tensor& t) { return t.shape_str(); }

void require_defined(const Tensor& t, const char* op) {
    if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

void check_finite(const Tensor& t, const char* op) {
    for (double v : t.value()) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string("non-finite value produced by ") + op);
        }
    }
}

bool recording() { return g_no_grad_depth == 0; }

Tensor make_out(int rows, int cols, bool rg) {
    return Tensor::zeros(rows, cols, rg && recording());
}

void record(std::function<void()> fn) { Tape::get().record(std::move(fn)); }

// Shared closure prologue: returns false when the output never received a
// gradient, so the entry contributes nothing.
bool seeded(const std::shared_ptr<TensorData>& out) { return !out->grad.empty(); }

}  // namespace

namespace {
size_t checked_numel(int r, int c) {
    if (r < 0 || c < 0) throw ShapeError("tensor with negative extent");
    return static_cast<size_t>(r) * c;
}
}  // namespace

TensorData::TensorData(int r, int c, bool rg)
    : rows(r), cols(c), value(checked_numel(r, c), 0.0), requires_grad(rg) {
    if (g_audit) g_audit->report(numel());
}

Tensor Tensor::zeros(int rows, int cols, bool requires_grad) {
    return Tensor(std::make_shared<TensorData>(rows, cols, requires_grad));
}

Tensor Tensor::constant(int rows, int cols, double fill) {
    Tensor t = zeros(rows, cols, false);
    for (auto& v : t.value()) v = fill;
    return t;
}

Tensor Tensor::from(int rows, int cols, std::vector<double> values, bool requires_grad) {
    if (static_cast<int64_t>(values.size()) != static_cast<int64_t>(rows) * cols) {
        throw ShapeError("from: value count " + std::to_string(values.size()) +
                         " does not match " + std::to_string(rows) + "x" + std::to_string(cols));
    }
    Tensor t = zeros(rows, cols, requires_grad);
    t.value() = std::move(values);
    return t;
}

Tensor Tensor::scalar(double v) { return from(1, 1, {v}); }

double Tensor::grad_at(int i, int j) const {
    if (d_->grad.empty()) return 0.0;
    return d_->grad[static_cast<size_t>(i) * d_->cols + j];
}

double Tensor::item() const {
    if (!defined() || rows() != 1 || cols() != 1) {
        throw ContractError("item: tensor is not scalar, shape " +
                            (defined() ? shape_str() : std::string("<undefined>")));
    }
    return d_->value[0];
}

std::string Tensor::shape_str() const {
    return "[" + std::to_string(d_->rows) + "x" + std::to_string(d_->cols) + "]";
}

Tape& Tape::get() {
    thread_local Tape tape;
    return tape;
}

void Tape::run_reverse_and_clear() {
    for (size_t i = entries_.size(); i > 0; --i) entries_[i - 1]();
    entries_.clear();
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

bool grad_enabled() { return recording(); }

AllocationAudit::AllocationAudit() : prev_(g_audit) { g_audit = this; }
AllocationAudit::~AllocationAudit() { g_audit = prev_; }

void AllocationAudit::report(int64_t numel) {
    ++count_;
    total_numel_ += numel;
    if (numel > max_numel_) max_numel_ = numel;
}

void backward(const Tensor& root) {
    require_defined(root, "backward");
    if (root.rows() != 1 || root.cols() != 1) {
        throw ContractError("backward: root must be scalar, got " + root.shape_str());
    }
    root.data()->ensure_grad();
    root.data()->grad[0] += 1.0;
    Tape::get().run_reverse_and_clear();
}

// ---------------------------------------------------------------------- ops

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_defined(a, "matmul");
    require_defined(b, "matmul");
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: " + shape_of(a) + " x " + shape_of(b));
    }
    const int n = a.rows(), k = a.cols(), m = b.cols();
    Tensor out = make_out(n, m, a.requires_grad() || b.requires_grad());
    const double* av = a.value().data();
    const double* bv = b.value().data();
    double* ov = out.value().data();
    for (int i = 0; i < n; ++i) {
        for (int p = 0; p < k; ++p) {
            const double av_ip = av[static_cast<size_t>(i) * k + p];
            if (av_ip == 0.0) continue;
            const double* brow = bv + static_cast<size_t>(p) * m;
            double* orow = ov + static_cast<size_t>(i) * m;
            for (int j = 0; j < m; ++j) orow[j] += av_ip * brow[j];
        }
    }
    check_finite(out, "matmul");
    if (out.requires_grad()) {
        auto ad = a.data(), bd = b.data(), od = out.data();
        record([ad, bd, od, n, k, m] {
            if (!seeded(od)) return;
            const double* g = od->grad.data();
            if (ad->requires_grad) {
                ad->ensure_grad();
                double* ga = ad->grad.data();
                const double* bv = bd->value.data();
                for (int i = 0; i < n; ++i)
                    for (int p = 0; p < k; ++p) {
                        double s = 0.0;
                        const double* grow = g + static_cast<size_t>(i) * m;
                        const double* brow = bv + static_cast<size_t>(p) * m;
                        for (int j = 0; j < m; ++j) s += grow[j] * brow[j];
                        ga[static_cast<size_t>(i) * k + p] += s;
                    }
            }
            if (bd->requires_grad) {
                bd->ensure_grad();
                double* gb = bd->grad.data();
                const double* av = ad->value.data();
                for (int p = 0; p < k; ++p)
                    for (int i = 0; i < n; ++i) {
                        const double av_ip = av[static_cast<size_t>(i) * k + p];
                        if (av_ip == 0.0) continue;
                        const double* grow = g + static_cast<size_t>(i) * m;
                        double* brow = gb + static_cast<size_t>(p) * m;
                        for (int j = 0; j < m; ++j) brow[j] += av_ip * grow[j];
                    }
            }
        });
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    require_defined(a, "transpose");
    const int r = a.rows(), c = a.cols();
    Tensor out = make_out(c, r, a.requires_grad());
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.at(j, i) = a.at(i, j);
    if (out.requires_grad()) {
        auto ad = a.data(), od = out.data();
        record([ad, od, r, c] {
            if (!seeded(od)) return;
            ad->ensure_grad();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j)
                    ad->grad[static_cast<size_t>(i) * c + j] +=
                        od->grad[static_cast<size_t>(j) * r + i];
        });
    }
    return out;
}

namespace {
void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(op) + ": " + a.shape_str() + " vs " + b.shape_str());
    }
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_defined(a, "add");
    require_defined(b, "add");
    require_same_shape(a, b, "add");
    Tensor out = make_out(a.rows(), a.cols(), a.requires_grad() || b.requires_grad());
    const size_t n = a.value().size();
    for (size_t i = 0; i < n; ++i) out.value()[i] = a.value()[i] + b.value()[i];
    check_finite(out, "add");
    if (out.requires_grad()) {
        auto ad = a.data(), bd = b.data(), od = out.data();
        record([ad, bd, od, n] {
            if (!seeded(od)) return;
            if (ad->requires_grad) {
                ad->ensure_grad();
                for (size_t i = 0; i < n; ++i) ad->grad[i] += od->grad[i];
            }
            if (bd->requires_grad) {
                bd->ensure_grad();
                for (size_t i = 0; i < n; ++i) bd->grad[i] += od->grad[i];
            }
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_defined(a, "sub");
    require_defined(b, "sub");
    require_same_shape(a, b, "sub");
    Tensor out = make_out(a.rows(), a.cols(), a.requires_grad() || b.requires_grad());
    const size_t n = a.value().size();
    for (size_t i = 0; i < n; ++i) out.value()[i] = a.value()[i] - b.value()[i];
    check_finite(out, "sub");
    if (out.requires_grad()) {
        auto ad = a.data(), bd = b.data(), od = out.data();
        record([ad, bd, od, n] {
            if (!seeded(od)) return;
            if (ad->requires_grad) {
                ad->ensure_grad();
                for (size_t i = 0; i < n; ++i) ad->grad[i] += od->grad[i];
            }
            if (bd->requires_grad) {
                bd->ensure_grad();
                for (size_t i = 0; i < n; ++i) bd->grad[i] -= od->grad[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_defined(a, "mul");
    require_defined(b, "mul");
    require_same_shape(a, b, "mul");
    Tensor out = make_out(a.rows(), a.cols(), a.requires_grad() || b.requires_grad());
    const size_t n = a.value().size();
    for (size_t i = 0; i < n; ++i) out.value()[i] = a.value()[i] * b.value()[i];
    check_finite(out, "mul");
    if (out.requires_grad()) {
        auto ad = a.data(), bd = b.data(), od = out.data();
        record([ad, bd, od, n] {
            if (!seeded(od)) return;
            if (ad->requires_grad) {
                ad->ensure_grad();
                for (size_t i = 0; i < n; ++i) ad->grad[i] += od->grad[i] * bd->value[i];
            }
            if (bd->requires_grad) {
                bd->ensure_grad();
                for (size_t i = 0; i < n; ++i) bd->grad[i] += od->grad[i] * ad->value[i];
            }
        });
    }
    return out;
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
    require_defined(a, "add_rowvec");
    require_defined(v, "add_rowvec");
    if (v.rows() != 1 || v.cols() != a.cols()) {
        throw ShapeError("add_rowvec: " + a.shape_str() + " vs " + v.shape_str());
    }
    const int r = a.rows(), c = a.cols();
    Tensor out = make_out(r, c, a.requires_grad() || v.requires_grad());
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.at(i, j) = a.at(i, j) + v.at(0, j);
    check_finite(out, "add_rowvec");
    if (out.requires_grad()) {
        auto ad = a.data(), vd = v.data(), od = out.data();
        record([ad, vd, od, r, c] {
            if (!seeded(od)) return;
            if (ad->requires_grad) {
                ad->ensure_grad();
                const size_t n = od->grad.size();
                for (size_t i = 0; i < n; ++i) ad->grad[i] += od->grad[i];
            }
            if (vd->requires_grad) {
                vd->ensure_grad();
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j)
                        vd->grad[j] += od->grad[static_cast<size_t>(i) * c + j];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& a, double s) {
    require_defined(a, "scale");
    Tensor out = make_out(a.rows(), a.cols(), a.requires_grad());
    const size_t n = a.value().size();
    for (size_t i = 0; i < n; ++i) out.value()[i] = a.value()[i] * s;
    check_finite(out, "scale");
    if (out.requires_grad()) {
        auto ad = a.data(), od = out.data();
        record([ad, od, s, n] {
            if (!seeded(od)) return;
            ad->ensure_grad();
            for (size_t i = 0; i < n; ++i) ad->grad[i] += od->grad[i] * s;
        });
    }
    return out;
}

Tensor add_const(const Tensor& a, double c) {
    require_defined(a, "add_const");
    Tensor out = make_out(a.rows(), a.cols(), a.requires_grad());
    const size_t n = a.value().size();
    for (size_t i = 0; i < n; ++i) out.value()[i] = a.value()[i] + c;
    check_finite(out, "add_const");
    if (out.requires_grad()) {
        auto ad = a.data(), od = out.data();
        record([ad, od, n] {
            if (!seeded(od)) return;
            ad->ensure_grad();
            for (size_t i = 0; i < n; ++i) ad->grad[i] += od->grad[i];
        });
    }
    return out;
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    require_defined(a, "concat_cols");
    require_defined(b, "concat_cols");
    if (a.rows() != b.rows()) {
        throw ShapeError("concat_cols: " + a.shape_str() + " vs " + b.shape_str());
    }
    const int r = a.rows(), ca = a.cols(), cb = b.cols();
    Tensor out = make_out(r, ca + cb, a.requires_grad() || b.requires_grad());
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < ca; ++j) out.at(i, j) = a.at(i, j);
        for (int j = 0; j < cb; ++j) out.at(i, ca + j) = b.at(i, j);
    }
    if (out.requires_grad()) {
        auto ad = a.data(), bd = b.data(), od = out.data();
        record([ad, bd, od, r, ca, cb] {
            if (!seeded(od)) return;
            const int c = ca + cb;
            if (ad->requires_grad) {
                ad->ensure_grad();
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < ca; ++j)
                        ad->grad[static_cast<size_t>(i) * ca + j] +=
                            od->grad[static_cast<size_t>(i) * c + j];
            }
            if (bd->requires_grad) {
                bd->ensure_grad();
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < cb; ++j)
                        bd->grad[static_cast<size_t>(i) * cb + j] +=
                            od->grad[static_cast<size_t>(i) * c + ca + j];
            }
        });
    }
    return out;
}

Tensor reduce_sum(const Tensor& a) {
    require_defined(a, "reduce_sum");
    Tensor out = make_out(1, 1, a.requires_grad());
    double s = 0.0;
    for (double v : a.value()) s += v;
    out.value()[0] = s;
    check_finite(out, "reduce_sum");
    if (out.requires_grad()) {
        auto ad = a.data(), od = out.data();
        record([ad, od] {
            if (!seeded(od)) return;
            ad->ensure_grad();
            const double g = od->grad[0];
            for (auto& gv : ad->grad) gv += g;
        });
    }
    return out;
}

Tensor colwise_sum(const Tensor& a) {
    require_defined(a, "colwise_sum");
    const int r = a.rows(), c = a.cols();
    Tensor out = make_out(1, c, a.requires_grad());
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.value()[j] += a.at(i, j);
    check_finite(out, "colwise_sum");
    if (out.requires_grad()) {
        auto ad = a.data(), od = out.data();
        record([ad, od, r, c] {
            if (!seeded(od)) return;
            ad->ensure_grad();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j)
                    ad->grad[static_cast<size_t>(i) * c + j] += od->grad[j];
        });
    }
    return out;
}

Tensor rowwise_sum(const Tensor& a) {
    require_defined(a, "rowwise_sum");
    const int r = a.rows(), c = a.cols();
    Tensor out = make_out(r, 1, a.requires_grad());
    for (int i = 0; i < r; ++i) {
        double s = 0.0;
        for (int j = 0; j < c; ++j) s += a.at(i, j);
        out.value()[i] = s;
    }
    check_finite(out, "rowwise_sum");
    if (out.requires_grad()) {
        auto ad = a.data(), od = out.data();
        record([ad, od, r, c] {
            if (!seeded(od)) return;
            ad->ensure_grad();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j)
                    ad->grad[static_cast<size_t>(i) * c + j] += od->grad[i];
        });
    }
    return out;
}

Tensor add_n(const std::vector<Tensor>& ts) {
    if (ts.empty()) throw ContractError("add_n: empty input");
    bool rg = false;
    for (const auto& t : ts) {
        require_defined(t, "add_n");
        require_same_shape(ts[0], t, "add_n");
        rg = rg || t.requires_grad();
    }
    Tensor out = make_out(ts[0].rows(), ts[0].cols(), rg);
    const size_t n = out.value().size();
    for (const auto& t : ts)
        for (size_t i = 0; i < n; ++i) out.value()[i] += t.value()[i];
    check_finite(out, "add_n");
    if (out.requires_grad()) {
        std::vector<std::shared_ptr<TensorData>> ins;
        ins.reserve(ts.size());
        for (const auto& t : ts) ins.push_back(t.data());
        auto od = out.data();
        record([ins, od, n] {
            if (!seeded(od)) return;
            for (const auto& in : ins) {
                if (!in->requires_grad) continue;
                in->ensure_grad();
                for (size_t i = 0; i < n; ++i) in->grad[i] += od->grad[i];
            }
        });
    }
    return out;
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& idx) {
    require_defined(a, "gather_rows");
    const int c = a.cols();
    for (int i : idx) {
        if (i < 0 || i >= a.rows()) {
            throw IndexError("gather_rows: row " + std::to_string(i) + " out of " +
                             std::to_string(a.rows()));
        }
    }
    Tensor out = make_out(static_cast<int>(idx.size()), c, a.requires_grad());
    for (size_t r = 0; r < idx.size(); ++r)
        for (int j = 0; j < c; ++j) out.at(static_cast<int>(r), j) = a.at(idx[r], j);
    if (out.requires_grad()) {
        auto ad = a.data(), od = out.data();
        record([ad, od, idx, c] {
            if (!seeded(od)) return;
            ad->ensure_grad();
            for (size_t r = 0; r < idx.size(); ++r)
                for (int j = 0; j < c; ++j)
                    ad->grad[static_cast<size_t>(idx[r]) * c + j] +=
                        od->grad[r * c + j];
        });
    }
    return out;
}

Tensor slice_rows(const Tensor& a, int r0, int r1) {
    require_defined(a, "slice_rows");
    if (r0 < 0 || r1 > a.rows() || r0 > r1) {
        throw IndexError("slice_rows: [" + std::to_string(r0) + "," + std::to_string(r1) +
                         ") of " + a.shape_str());
    }
    const int c = a.cols(), r = r1 - r0;
    Tensor out = make_out(r, c, a.requires_grad());
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.at(i, j) = a.at(r0 + i, j);
    if (out.requires_grad()) {
        auto ad = a.data(), od = out.data();
        record([ad, od, r0, r, c] {
            if (!seeded(od)) return;
            ad->ensure_grad();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j)
                    ad->grad[static_cast<size_t>(r0 + i) * c + j] +=
                        od->grad[static_cast<size_t>(i) * c + j];
        });
    }
    return out;
}

Tensor repeat_rows(const Tensor& a, int times) {
    require_defined(a, "repeat_rows");
    if (times < 1) throw ContractError("repeat_rows: times must be >= 1");
    const int r = a.rows(), c = a.cols();
    Tensor out = make_out(r * times, c, a.requires_grad());
    for (int i = 0; i < r; ++i)
        for (int t = 0; t < times; ++t)
            for (int j = 0; j < c; ++j) out.at(i * times + t, j) = a.at(i, j);
    if (out.requires_grad()) {
        auto ad = a.data(), od = out.data();
        record([ad, od, r, c, times] {
            if (!seeded(od)) return;
            ad->ensure_grad();
            for (int i = 0; i < r; ++i)
                for (int t = 0; t < times; ++t)
                    for (int j = 0; j < c; ++j)
                        ad->grad[static_cast<size_t>(i) * c + j] +=
                            od->grad[static_cast<size_t>(i * times + t) * c + j];
        });
    }
    return out;
}

Tensor sum_consecutive_rows(const Tensor& a, int group) {
    require_defined(a, "sum_consecutive_rows");
    if (group < 1 || a.rows() % group != 0) {
        throw ShapeError("sum_consecutive_rows: rows " + std::to_string(a.rows()) +
                         " not divisible by group " + std::to_string(group));
    }
    const int r = a.rows() / group, c = a.cols();
    Tensor out = make_out(r, c, a.requires_grad());
    for (int k = 0; k < r; ++k)
        for (int h = 0; h < group; ++h)
            for (int j = 0; j < c; ++j) out.at(k, j) += a.at(k * group + h, j);
    check_finite(out, "sum_consecutive_rows");
    if (out.requires_grad()) {
        auto ad = a.data(), od = out.data();
        record([ad, od, r, c, group] {
            if (!seeded(od)) return;
            ad->ensure_grad();
            for (int k = 0; k < r; ++k)
                for (int h = 0; h < group; ++h)
                    for (int j = 0; j < c; ++j)
                        ad->grad[static_cast<size_t>(k * group + h) * c + j] +=
                            od->grad[static_cast<size_t>(k) * c + j];
        });
    }
    return out;
}

Tensor neighbor_sum(const std::vector<std::vector<int>>& nbrs, const Tensor& a,
                    const std::vector<std::vector<double>>* weights) {
    require_defined(a, "neighbor_sum");
    if (weights && weights->size() != nbrs.size()) {
        throw ShapeError("neighbor_sum: weight list size mismatch");
    }
    const int c = a.cols();
    Tensor out = make_out(static_cast<int>(nbrs.size()), c, a.requires_grad());
    for (size_t i = 0; i < nbrs.size(); ++i) {
        for (size_t t = 0; t < nbrs[i].size(); ++t) {
            const int j = nbrs[i][t];
            if (j < 0 || j >= a.rows()) {
                throw IndexError("neighbor_sum: row " + std::to_string(j) + " out of " +
                                 std::to_string(a.rows()));
            }
            const double w = weights ? (*weights)[i][t] : 1.0;
            for (int q = 0; q < c; ++q)
                out.value()[i * c + q] += w * a.at(j, q);
        }
    }
    check_finite(out, "neighbor_sum");
    if (out.requires_grad()) {
        auto ad = a.data(), od = out.data();
        // Copy the adjacency so the closure owns it.
        auto nb = nbrs;
        std::vector<std::vector<double>> wt;
        if (weights) wt = *weights;
        const bool has_w = weights != nullptr;
        record([ad, od, nb = std::move(nb), wt = std::move(wt), has_w, c] {
            if (!seeded(od)) return;
            ad->ensure_grad();
            for (size_t i = 0; i < nb.size(); ++i)
                for (size_t t = 0; t < nb[i].size(); ++t) {
                    const double w = has_w ? wt[i][t] : 1.0;
                    const size_t j = static_cast<size_t>(nb[i][t]);
                    for (int q = 0; q < c; ++q)
                        ad->grad[j * c + q] += w * od->grad[i * c + q];
                }
        });
    }
    return out;
}

Tensor block_weighted_sum(const Tensor& b, const Tensor& u) {
    require_defined(b, "block_weighted_sum");
    require_defined(u, "block_weighted_sum");
    const int n = b.rows(), g = b.cols(), d = u.cols();
    if (u.rows() != n * g) {
        throw ShapeError("block_weighted_sum: " + b.shape_str() + " with " + u.shape_str());
    }
    Tensor out = make_out(n, d, b.requires_grad() || u.requires_grad());
    for (int k = 0; k < n; ++k)
        for (int p = 0; p < g; ++p) {
            const double w = b.at(k, p);
            for (int j = 0; j < d; ++j) out.at(k, j) += w * u.at(k * g + p, j);
        }
    check_finite(out, "block_weighted_sum");
    if (out.requires_grad()) {
        auto bd = b.data(), ud = u.data(), od = out.data();
        record([bd, ud, od, n, g, d] {
            if (!seeded(od)) return;
            if (bd->requires_grad) bd->ensure_grad();
            if (ud->requires_grad) ud->ensure_grad();
            for (int k = 0; k < n; ++k)
                for (int p = 0; p < g; ++p) {
                    const size_t urow = static_cast<size_t>(k * g + p) * d;
                    const size_t orow = static_cast<size_t>(k) * d;
                    if (bd->requires_grad) {
                        double s = 0.0;
                        for (int j = 0; j < d; ++j)
                            s += od->grad[orow + j] * ud->value[urow + j];
                        bd->grad[static_cast<size_t>(k) * g + p] += s;
                    }
                    if (ud->requires_grad) {
                        const double w = bd->value[static_cast<size_t>(k) * g + p];
                        for (int j = 0; j < d; ++j)
                            ud->grad[urow + j] += w * od->grad[orow + j];
                    }
                }
        });
    }
    return out;
}

Tensor vstack(const std::vector<Tensor>& ts) {
    if (ts.empty()) throw ContractError("vstack: empty input");
    int rows = 0;
    bool rg = false;
    const int c = ts[0].cols();
    for (const auto& t : ts) {
        require_defined(t, "vstack");
        if (t.cols() != c) {
            throw ShapeError("vstack: " + ts[0].shape_str() + " vs " + t.shape_str());
        }
        rows += t.rows();
        rg = rg || t.requires_grad();
    }
    Tensor out = make_out(rows, c, rg);
    int r = 0;
    for (const auto& t : ts) {
        for (int i = 0; i < t.rows(); ++i, ++r)
            for (int j = 0; j < c; ++j) out.at(r, j) = t.at(i, j);
    }
    if (out.requires_grad()) {
        std::vector<std::shared_ptr<TensorData>> ins;
        ins.reserve(ts.size());
        for (const auto& t : ts) ins.push_back(t.data());
        auto od = out.data();
        record([ins, od, c] {
            if (!seeded(od)) return;
            size_t r = 0;
            for (const auto& in : ins) {
                const size_t nr = static_cast<size_t>(in->rows);
                if (in->requires_grad) {
                    in->ensure_grad();
                    for (size_t i = 0; i < nr; ++i)
                        for (int j = 0; j < c; ++j)
                            in->grad[i * c + j] += od->grad[(r + i) * c + j];
                }
                r += nr;
            }
        });
    }
    return out;
}

Tensor reshape(const Tensor& a, int rows, int cols) {
    require_defined(a, "reshape");
    if (static_cast<int64_t>(rows) * cols != a.numel()) {
        throw ShapeError("reshape: " + a.shape_str() + " to [" + std::to_string(rows) + "x" +
                         std::to_string(cols) + "]");
    }
    Tensor out = make_out(rows, cols, a.requires_grad());
    out.value() = a.value();
    if (out.requires_grad()) {
        auto ad = a.data(), od = out.data();
        record([ad, od] {
            if (!seeded(od)) return;
            ad->ensure_grad();
            for (size_t i = 0; i < od->grad.size(); ++i) ad->grad[i] += od->grad[i];
        });
    }
    return out;
}

namespace {

// Shared scaffold for elementwise y = f(x) with dx = df(x, y) * dy.
template <class F, class DF>
Tensor elementwise(const Tensor& a, const char* name, F f, DF df) {
    require_defined(a, name);
    Tensor out = make_out(a.rows(), a.cols(), a.requires_grad());
    const size_t n = a.value().size();
    for (size_t i = 0; i < n; ++i) out.value()[i] = f(a.value()[i]);
    check_finite(out, name);
    if (out.requires_grad()) {
        auto ad = a.data(), od = out.data();
        record([ad, od, df, n] {
            if (!seeded(od)) return;
            ad->ensure_grad();
            for (size_t i = 0; i < n; ++i)
                ad->grad[i] += od->grad[i] * df(ad->value[i], od->value[i]);
        });
    }
    return out;
}

}  // namespace

Tensor exp_t(const Tensor& a) {
    return elementwise(a, "exp", [](double x) { return std::exp(x); },
                       [](double, double y) { return y; });
}

Tensor log_t(const Tensor& a) {
    return elementwise(a, "log", [](double x) { return std::log(x); },
                       [](double x, double) { return 1.0 / x; });
}

Tensor clamped_log(const Tensor& a, double eps) {
    return elementwise(a, "clamped_log",
                       [eps](double x) { return std::log(x > eps ? x : eps); },
                       [eps](double x, double) { return x > eps ? 1.0 / x : 0.0; });
}

Tensor sqrt_t(const Tensor& a) {
    return elementwise(a, "sqrt", [](double x) { return std::sqrt(x); },
                       [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Tensor square(const Tensor& a) {
    return elementwise(a, "square", [](double x) { return x * x; },
                       [](double x, double) { return 2.0 * x; });
}

Tensor recip(const Tensor& a) {
    return elementwise(a, "recip", [](double x) { return 1.0 / x; },
                       [](double, double y) { return -y * y; });
}

namespace {

Tensor softmax_rows_impl(const Tensor& a) {
    const int r = a.rows(), c = a.cols();
    if (c == 0) throw ShapeError("softmax: empty axis in " + a.shape_str());
    Tensor out = make_out(r, c, a.requires_grad());
    for (int i = 0; i < r; ++i) {
        double mx = a.at(i, 0);
        for (int j = 1; j < c; ++j) mx = std::max(mx, a.at(i, j));
        double z = 0.0;
        for (int j = 0; j < c; ++j) {
            const double e = std::exp(a.at(i, j) - mx);
            out.at(i, j) = e;
            z += e;
        }
        for (int j = 0; j < c; ++j) out.at(i, j) /= z;
    }
    check_finite(out, "softmax");
    if (out.requires_grad()) {
        auto ad = a.data(), od = out.data();
        record([ad, od, r, c] {
            if (!seeded(od)) return;
            ad->ensure_grad();
            for (int i = 0; i < r; ++i) {
                const size_t row = static_cast<size_t>(i) * c;
                double s = 0.0;
                for (int j = 0; j < c; ++j) s += od->grad[row + j] * od->value[row + j];
                for (int j = 0; j < c; ++j)
                    ad->grad[row + j] += od->value[row + j] * (od->grad[row + j] - s);
            }
        });
    }
    return out;
}

Tensor squash_rows_impl(const Tensor& a) {
    const int r = a.rows(), c = a.cols();
    if (c == 0) throw ShapeError("squash: empty axis in " + a.shape_str());
    Tensor out = make_out(r, c, a.requires_grad());
    std::vector<double> norms(r, 0.0);
    for (int i = 0; i < r; ++i) {
        double ss = 0.0;
        for (int j = 0; j < c; ++j) ss += a.at(i, j) * a.at(i, j);
        const double nrm = std::sqrt(ss);
        norms[i] = nrm;
        const double coef = nrm / (1.0 + ss);  // |x|/(1+|x|^2): zero at zero input
        for (int j = 0; j < c; ++j) out.at(i, j) = a.at(i, j) * coef;
    }
    check_finite(out, "squash");
    if (out.requires_grad()) {
        auto ad = a.data(), od = out.data();
        record([ad, od, norms, r, c] {
            if (!seeded(od)) return;
            ad->ensure_grad();
            for (int i = 0; i < r; ++i) {
                const size_t row = static_cast<size_t>(i) * c;
                const double nrm = norms[i];
                const double ss = nrm * nrm;
                const double coef = nrm / (1.0 + ss);
                // d coef/d nrm = (1 - nrm^2) / (1 + nrm^2)^2
                double dotgx = 0.0;
                for (int j = 0; j < c; ++j) dotgx += od->grad[row + j] * ad->value[row + j];
                const double dcoef = (1.0 - ss) / ((1.0 + ss) * (1.0 + ss));
                for (int j = 0; j < c; ++j) {
                    double g = coef * od->grad[row + j];
                    if (nrm > kNormEps) g += (dcoef / nrm) * dotgx * ad->value[row + j];
                    ad->grad[row + j] += g;
                }
            }
        });
    }
    return out;
}

Tensor l2_normalize_rows_impl(const Tensor& a) {
    const int r = a.rows(), c = a.cols();
    if (c == 0) throw ShapeError("l2_normalize: empty axis in " + a.shape_str());
    Tensor out = make_out(r, c, a.requires_grad());
    std::vector<double> norms(r, 0.0);
    for (int i = 0; i < r; ++i) {
        double ss = 0.0;
        for (int j = 0; j < c; ++j) ss += a.at(i, j) * a.at(i, j);
        const double nrm = std::sqrt(ss);
        norms[i] = nrm;
        const double inv = 1.0 / std::max(nrm, kNormEps);
        for (int j = 0; j < c; ++j) out.at(i, j) = a.at(i, j) * inv;
    }
    check_finite(out, "l2_normalize");
    if (out.requires_grad()) {
        auto ad = a.data(), od = out.data();
        record([ad, od, norms, r, c] {
            if (!seeded(od)) return;
            ad->ensure_grad();
            for (int i = 0; i < r; ++i) {
                const size_t row = static_cast<size_t>(i) * c;
                const double nrm = norms[i];
                if (nrm <= kNormEps) {
                    // Treated as division by the constant guard.
                    for (int j = 0; j < c; ++j)
                        ad->grad[row + j] += od->grad[row + j] / kNormEps;
                    continue;
                }
                double dotgx = 0.0;
                for (int j = 0; j < c; ++j) dotgx += od->grad[row + j] * ad->value[row + j];
                const double inv = 1.0 / nrm;
                const double inv3 = inv * inv * inv;
                for (int j = 0; j < c; ++j)
                    ad->grad[row + j] +=
                        od->grad[row + j] * inv - dotgx * ad->value[row + j] * inv3;
            }
        });
    }
    return out;
}

template <class RowFn>
Tensor along_axis(const Tensor& a, int axis, const char* name, RowFn rowfn) {
    require_defined(a, name);
    if (axis == 1) return rowfn(a);
    if (axis == 0) return transpose(rowfn(transpose(a)));
    throw ShapeError(std::string(name) + ": axis must be 0 or 1");
}

}  // namespace

Tensor softmax(const Tensor& a, int axis) {
    return along_axis(a, axis, "softmax", softmax_rows_impl);
}

Tensor squash(const Tensor& a, int axis) {
    return along_axis(a, axis, "squash", squash_rows_impl);
}

Tensor l2_normalize(const Tensor& a, int axis) {
    return along_axis(a, axis, "l2_normalize", l2_normalize_rows_impl);
}

Tensor log_softmax_rows(const Tensor& a) {
    require_defined(a, "log_softmax");
    const int r = a.rows(), c = a.cols();
    if (c == 0) throw ShapeError("log_softmax: empty axis in " + a.shape_str());
    Tensor out = make_out(r, c, a.requires_grad());
    std::vector<double> soft(static_cast<size_t>(r) * c);
    for (int i = 0; i < r; ++i) {
        double mx = a.at(i, 0);
        for (int j = 1; j < c; ++j) mx = std::max(mx, a.at(i, j));
        double z = 0.0;
        for (int j = 0; j < c; ++j) z += std::exp(a.at(i, j) - mx);
        const double lse = mx + std::log(z);
        for (int j = 0; j < c; ++j) {
            out.at(i, j) = a.at(i, j) - lse;
            soft[static_cast<size_t>(i) * c + j] = std::exp(out.at(i, j));
        }
    }
    check_finite(out, "log_softmax");
    if (out.requires_grad()) {
        auto ad = a.data(), od = out.data();
        record([ad, od, soft = std::move(soft), r, c] {
            if (!seeded(od)) return;
            ad->ensure_grad();
            for (int i = 0; i < r; ++i) {
                const size_t row = static_cast<size_t>(i) * c;
                double s = 0.0;
                for (int j = 0; j < c; ++j) s += od->grad[row + j];
                for (int j = 0; j < c; ++j)
                    ad->grad[row + j] += od->grad[row + j] - soft[row + j] * s;
            }
        });
    }
    return out;
}

Tensor mul_colvec(const Tensor& a, const Tensor& c) {
    require_defined(a, "mul_colvec");
    require_defined(c, "mul_colvec");
    if (c.cols() != 1 || c.rows() != a.rows()) {
        throw ShapeError("mul_colvec: " + a.shape_str() + " vs " + c.shape_str());
    }
    const int r = a.rows(), cc = a.cols();
    Tensor out = make_out(r, cc, a.requires_grad() || c.requires_grad());
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < cc; ++j) out.at(i, j) = a.at(i, j) * c.value()[i];
    check_finite(out, "mul_colvec");
    if (out.requires_grad()) {
        auto ad = a.data(), cd = c.data(), od = out.data();
        record([ad, cd, od, r, cc] {
            if (!seeded(od)) return;
            if (ad->requires_grad) ad->ensure_grad();
            if (cd->requires_grad) cd->ensure_grad();
            for (int i = 0; i < r; ++i) {
                const size_t row = static_cast<size_t>(i) * cc;
                const double cv = cd->value[i];
                double s = 0.0;
                for (int j = 0; j < cc; ++j) {
                    if (ad->requires_grad) ad->grad[row + j] += od->grad[row + j] * cv;
                    s += od->grad[row + j] * ad->value[row + j];
                }
                if (cd->requires_grad) cd->grad[i] += s;
            }
        });
    }
    return out;
}

Tensor div_colvec(const Tensor& a, const Tensor& c) {
    require_defined(a, "div_colvec");
    require_defined(c, "div_colvec");
    if (c.cols() != 1 || c.rows() != a.rows()) {
        throw ShapeError("div_colvec: " + a.shape_str() + " vs " + c.shape_str());
    }
    const int r = a.rows(), cc = a.cols();
    Tensor out = make_out(r, cc, a.requires_grad() || c.requires_grad());
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < cc; ++j) out.at(i, j) = a.at(i, j) / c.value()[i];
    check_finite(out, "div_colvec");
    if (out.requires_grad()) {
        auto ad = a.data(), cd = c.data(), od = out.data();
        record([ad, cd, od, r, cc] {
            if (!seeded(od)) return;
            if (ad->requires_grad) ad->ensure_grad();
            if (cd->requires_grad) cd->ensure_grad();
            for (int i = 0; i < r; ++i) {
                const size_t row = static_cast<size_t>(i) * cc;
                const double cv = cd->value[i];
                double s = 0.0;
                for (int j = 0; j < cc; ++j) {
                    if (ad->requires_grad) ad->grad[row + j] += od->grad[row + j] / cv;
                    s += od->grad[row + j] * od->value[row + j];
                }
                if (cd->requires_grad) cd->grad[i] -= s / cv;
            }
        });
    }
    return out;
}

Tensor mul_scalar_t(const Tensor& a, const Tensor& s) {
    require_defined(a, "mul_scalar_t");
    require_defined(s, "mul_scalar_t");
    if (s.rows() != 1 || s.cols() != 1) {
        throw ShapeError("mul_scalar_t: scalar expected, got " + s.shape_str());
    }
    const double sv = s.value()[0];
    Tensor out = make_out(a.rows(), a.cols(), a.requires_grad() || s.requires_grad());
    const size_t n = a.value().size();
    for (size_t i = 0; i < n; ++i) out.value()[i] = a.value()[i] * sv;
    check_finite(out, "mul_scalar_t");
    if (out.requires_grad()) {
        auto ad = a.data(), sd = s.data(), od = out.data();
        record([ad, sd, od, n] {
            if (!seeded(od)) return;
            if (ad->requires_grad) {
                ad->ensure_grad();
                const double sv = sd->value[0];
                for (size_t i = 0; i < n; ++i) ad->grad[i] += od->grad[i] * sv;
            }
            if (sd->requires_grad) {
                sd->ensure_grad();
                double acc = 0.0;
                for (size_t i = 0; i < n; ++i) acc += od->grad[i] * ad->value[i];
                sd->grad[0] += acc;
            }
        });
    }
    return out;
}

Tensor pick_per_row(const Tensor& a, const std::vector<int>& idx) {
    require_defined(a, "pick_per_row");
    if (static_cast<int>(idx.size()) != a.rows()) {
        throw ShapeError("pick_per_row: " + std::to_string(idx.size()) + " indices for " +
                         a.shape_str());
    }
    const int r = a.rows(), c = a.cols();
    for (int i : idx) {
        if (i < 0 || i >= c) {
            throw IndexError("pick_per_row: column " + std::to_string(i) + " out of " +
                             std::to_string(c));
        }
    }
    Tensor out = make_out(r, 1, a.requires_grad());
    for (int i = 0; i < r; ++i) out.value()[i] = a.at(i, idx[i]);
    if (out.requires_grad()) {
        auto ad = a.data(), od = out.data();
        record([ad, od, idx, c] {
            if (!seeded(od)) return;
            ad->ensure_grad();
            for (size_t i = 0; i < idx.size(); ++i)
                ad->grad[i * c + idx[i]] += od->grad[i];
        });
    }
    return out;
}

Tensor diag(const Tensor& a) {
    require_defined(a, "diag");
    if (a.rows() != a.cols()) throw ShapeError("diag: square matrix expected, got " + a.shape_str());
    const int r = a.rows();
    Tensor out = make_out(r, 1, a.requires_grad());
    for (int i = 0; i < r; ++i) out.value()[i] = a.at(i, i);
    if (out.requires_grad()) {
        auto ad = a.data(), od = out.data();
        record([ad, od, r] {
            if (!seeded(od)) return;
            ad->ensure_grad();
            for (int i = 0; i < r; ++i)
                ad->grad[static_cast<size_t>(i) * r + i] += od->grad[i];
        });
    }
    return out;
}

Tensor dropout(const Tensor& a, double p, Rng& rng) {
    require_defined(a, "dropout");
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: rate must be in [0,1)");
    const size_t n = a.value().size();
    // Inverted dropout: kept entries are scaled by 1/(1-p). Mask drawn even
    // when p == 0 is skipped to keep the zero-rate path cost-free.
    if (p == 0.0) return a;
    std::vector<double> mask(n);
    const double keep_scale = 1.0 / (1.0 - p);
    for (size_t i = 0; i < n; ++i) mask[i] = rng.uniform01() >= p ? keep_scale : 0.0;
    Tensor out = make_out(a.rows(), a.cols(), a.requires_grad());
    for (size_t i = 0; i < n; ++i) out.value()[i] = a.value()[i] * mask[i];
    check_finite(out, "dropout");
    if (out.requires_grad()) {
        auto ad = a.data(), od = out.data();
        record([ad, od, mask = std::move(mask), n] {
            if (!seeded(od)) return;
            ad->ensure_grad();
            for (size_t i = 0; i < n; ++i) ad->grad[i] += od->grad[i] * mask[i];
        });
    }
    return out;
}

std::vector<int> argmax_rows(const Tensor& a) {
    std::vector<int> out(a.rows());
    for (int i = 0; i < a.rows(); ++i) {
        int best = 0;
        for (int j = 1; j < a.cols(); ++j)
            if (a.at(i, j) > a.at(i, best)) best = j;
        out[i] = best;
    }
    return out;
}

}  // namespace capsrec
