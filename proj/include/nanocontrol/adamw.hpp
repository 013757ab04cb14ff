#pragma once

#include <string>
#include <vector>

#include "nanocontrol/ops.hpp"
#include "nanocontrol/tensor.hpp"

namespace nanocontrol {

template <class Real>
struct NamedParam {
    std::string name;
    Tensor<Real> tensor;
};

// AdamW with decoupled weight decay, PyTorch update order:
// p <- p * (1 - lr*wd), then the bias-corrected Adam step.
template <class Real>
class AdamW {
public:
    struct Hyper {
        Real lr = Real(1e-4);
        Real beta1 = Real(0.9);
        Real beta2 = Real(0.999);
        Real eps = Real(1e-8);
        Real weight_decay = Real(0.01);
    };

    AdamW(std::vector<NamedParam<Real>> params, Hyper hyper)
        : params_(std::move(params)), hyper_(hyper) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(size_t(params_[i].tensor.numel()), Real(0));
            v_[i].assign(size_t(params_[i].tensor.numel()), Real(0));
        }
    }

    void zero_grad() {
        for (auto& p : params_) {
            p.tensor.impl()->ensure_grad();
            p.tensor.zero_grad();
        }
    }

    void step() {
        ++t_;
        const Real bc1 = Real(1) - std::pow(hyper_.beta1, Real(t_));
        const Real bc2 = Real(1) - std::pow(hyper_.beta2, Real(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            if (!p.tensor.has_grad())
                throw ContractError("adamw_step: parameter '" + p.name + "' has no gradient");
            Real* w = p.tensor.data();
            const Real* g = p.tensor.grad_data();
            Real* m = m_[i].data();
            Real* v = v_[i].data();
            const int64_t n = p.tensor.numel();
            for (int64_t j = 0; j < n; ++j) {
                w[j] *= Real(1) - hyper_.lr * hyper_.weight_decay;
                m[j] = hyper_.beta1 * m[j] + (Real(1) - hyper_.beta1) * g[j];
                v[j] = hyper_.beta2 * v[j] + (Real(1) - hyper_.beta2) * g[j] * g[j];
                const Real mhat = m[j] / bc1;
                const Real vhat = v[j] / bc2;
                w[j] -= hyper_.lr * mhat / (std::sqrt(vhat) + hyper_.eps);
            }
            check_finite(p.tensor, "adamw_step");
        }
    }

    int64_t step_count() const { return t_; }
    const std::vector<NamedParam<Real>>& params() const { return params_; }

private:
    std::vector<NamedParam<Real>> params_;
    Hyper hyper_;
    std::vector<std::vector<Real>> m_, v_;
    int64_t t_ = 0;
};

}  // namespace nanocontrol
