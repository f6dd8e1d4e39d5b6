#include "mpcs/optim.hpp"

#include <cmath>

namespace mpcs {

void Adam::step(const std::vector<ParamTensor*>& params) {
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i]->value.v.size(), 0.0);
            v_[i].assign(params[i]->value.v.size(), 0.0);
        }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t i = 0; i < params.size(); ++i) {
        auto& p = *params[i];
        for (size_t j = 0; j < p.value.v.size(); ++j) {
            const double g = p.grad.v[j];
            m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
            v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
            const double mhat = m_[i][j] / bc1;
            const double vhat = v_[i][j] / bc2;
            p.value.v[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

void Lars::step(const std::vector<ParamTensor*>& params) {
    if (velocity_.empty()) {
        velocity_.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i)
            velocity_[i].assign(params[i]->value.v.size(), 0.0);
    }
    for (size_t i = 0; i < params.size(); ++i) {
        auto& p = *params[i];
        double wnorm = 0.0, gnorm = 0.0;
        for (size_t j = 0; j < p.value.v.size(); ++j) {
            const double g = p.grad.v[j] + weight_decay_ * p.value.v[j];
            wnorm += p.value.v[j] * p.value.v[j];
            gnorm += g * g;
        }
        wnorm = std::sqrt(wnorm);
        gnorm = std::sqrt(gnorm);
        const double local_lr =
            (wnorm > 0.0 && gnorm > 0.0) ? trust_ * wnorm / (gnorm + eps_) : 1.0;
        for (size_t j = 0; j < p.value.v.size(); ++j) {
            const double g = p.grad.v[j] + weight_decay_ * p.value.v[j];
            velocity_[i][j] = momentum_ * velocity_[i][j] + lr_ * local_lr * g;
            p.value.v[j] -= velocity_[i][j];
        }
    }
}

std::unique_ptr<Optimizer> make_optimizer(const std::string& kind, double lr) {
    if (kind == "adam") return std::make_unique<Adam>(lr);
    if (kind == "lars") return std::make_unique<Lars>(lr);
    throw ConfigError("unknown optimizer: " + kind + " (expected adam|lars)");
}

}  // namespace mpcs
