#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "nanocontrol/common.hpp"
#include "nanocontrol/rng.hpp"

namespace nanocontrol {

template <class Real>
struct TensorImpl {
    std::vector<int64_t> shape;
    std::vector<Real> data;
    std::vector<Real> grad;  // empty until first accumulation
    bool requires_grad = false;

    int64_t numel() const {
        int64_t n = 1;
        for (auto s : shape) n *= s;
        return n;
    }
    bool has_grad() const { return !grad.empty(); }
    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), Real(0));
    }
};

// Reverse-mode tape. One tape lives per forward pass: ops record backward
// closures in execution order (topological by construction), backward()
// replays them once in reverse and then clears the tape.
template <class Real>
class Tape;

// Value-semantic handle over shared tensor storage.
template <class Real>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int64_t> shape) {
        Tensor t;
        t.impl_ = std::make_shared<TensorImpl<Real>>();
        t.impl_->shape = std::move(shape);
        t.impl_->data.assign(size_t(t.impl_->numel()), Real(0));
        return t;
    }
    static Tensor full(std::vector<int64_t> shape, Real v) {
        Tensor t = zeros(std::move(shape));
        for (auto& x : t.impl_->data) x = v;
        return t;
    }
    static Tensor from(std::vector<int64_t> shape, std::vector<Real> data) {
        Tensor t;
        t.impl_ = std::make_shared<TensorImpl<Real>>();
        t.impl_->shape = std::move(shape);
        if (int64_t(data.size()) != t.impl_->numel())
            throw ShapeError("tensor init: " + std::to_string(data.size()) +
                             " values for shape " + shape_str(t.impl_->shape));
        t.impl_->data = std::move(data);
        return t;
    }
    static Tensor randn(std::vector<int64_t> shape, Rng& rng, Real stddev = Real(1)) {
        Tensor t = zeros(std::move(shape));
        for (auto& x : t.impl_->data) x = Real(rng.normal()) * stddev;
        return t;
    }

    bool defined() const { return impl_ != nullptr; }
    const std::vector<int64_t>& shape() const { return impl_->shape; }
    int64_t dims() const { return int64_t(impl_->shape.size()); }
    int64_t dim(int64_t i) const { return impl_->shape[size_t(i)]; }
    int64_t numel() const { return impl_->numel(); }
    int64_t rows() const { return impl_->shape[0]; }
    int64_t cols() const { return impl_->shape[1]; }

    Real* data() { return impl_->data.data(); }
    const Real* data() const { return impl_->data.data(); }
    Real item() const {
        if (numel() != 1) throw ContractError("item(): tensor has shape " + shape_str(shape()));
        return impl_->data[0];
    }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        impl_->requires_grad = v;
        return *this;
    }
    bool has_grad() const { return impl_->has_grad(); }
    const Real* grad_data() const { return impl_->grad.data(); }
    Real* grad_data() { return impl_->grad.data(); }
    void zero_grad() {
        if (impl_->has_grad())
            std::fill(impl_->grad.begin(), impl_->grad.end(), Real(0));
    }

    // A detached copy of the values (no grad history).
    Tensor clone_detached() const {
        Tensor t;
        t.impl_ = std::make_shared<TensorImpl<Real>>();
        t.impl_->shape = impl_->shape;
        t.impl_->data = impl_->data;
        return t;
    }

    TensorImpl<Real>* impl() const { return impl_.get(); }
    std::shared_ptr<TensorImpl<Real>> impl_ptr() const { return impl_; }

private:
    std::shared_ptr<TensorImpl<Real>> impl_;
};

template <class Real>
class Tape {
public:
    Tape() {
        prev_ = active_;
        active_ = this;
    }
    ~Tape() { active_ = prev_; }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active() { return active_; }

    void record(std::function<void()> backward_step) {
        entries_.push_back(std::move(backward_step));
    }
    size_t size() const { return entries_.size(); }

    // Populates grad for every requires_grad leaf reachable from `loss`,
    // then resets the tape.
    void backward(const Tensor<Real>& loss) {
        if (loss.numel() != 1)
            throw ContractError("backward: loss must be scalar, got shape " +
                                shape_str(loss.shape()));
        if (!loss.requires_grad())
            throw ContractError("backward: loss is not connected to the tape");
        loss.impl()->ensure_grad();
        loss.impl()->grad[0] += Real(1);
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
        entries_.clear();
    }

private:
    std::vector<std::function<void()>> entries_;
    Tape* prev_ = nullptr;
    static thread_local Tape* active_;
};

template <class Real>
thread_local Tape<Real>* Tape<Real>::active_ = nullptr;

}  // namespace nanocontrol
