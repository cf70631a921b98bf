#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "actra/tensor.hpp"

namespace actra {

// AdamW with decoupled weight decay: the decay term multiplies the parameter
// directly and is not folded into the gradient moments. Parameters are
// registered once; each step consumes and clears their grad buffers.
class AdamW {
public:
    struct Config {
        double lr = 1e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 1e-4;
    };

    AdamW() : AdamW(Config{}) {}
    explicit AdamW(Config cfg) : cfg_(cfg) {
        if (!(cfg_.lr >= 0.0) || !(cfg_.eps > 0.0))
            throw std::invalid_argument("adamw: lr must be >= 0 and eps > 0");
        if (!(cfg_.beta1 >= 0.0 && cfg_.beta1 < 1.0) || !(cfg_.beta2 >= 0.0 && cfg_.beta2 < 1.0))
            throw std::invalid_argument("adamw: betas must lie in [0,1)");
    }

    const Config& config() const { return cfg_; }
    std::int64_t step_count() const { return t_; }

    void add_param(Tensor& p) {
        p.requires_grad = true;
        p.ensure_grad();
        params_.push_back(&p);
        m_.emplace_back(p.data.size(), 0.0);
        v_.emplace_back(p.data.size(), 0.0);
    }

    void zero_grad() {
        for (Tensor* p : params_) p->zero_grad();
    }

    // Applies one update from the parameters' current grad buffers and zeros
    // them. If any gradient entry is non-finite the whole update is rejected:
    // no parameter or moment changes, the step counter stays put, and the
    // return value reports the rejection.
    bool step() {
        for (Tensor* p : params_)
            for (double g : p->grad)
                if (!std::isfinite(g)) {
                    zero_grad();
                    return false;
                }
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            Tensor& p = *params_[k];
            std::vector<double>& m = m_[k];
            std::vector<double>& v = v_[k];
            for (std::size_t i = 0; i < p.data.size(); ++i) {
                const double g = p.grad[i];
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                p.data[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p.data[i]);
            }
        }
        zero_grad();
        return true;
    }

private:
    Config cfg_;
    std::int64_t t_ = 0;
    std::vector<Tensor*> params_;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace actra
