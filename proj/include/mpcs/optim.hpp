#pragma once

#include <vector>

#include "mpcs/model.hpp"

namespace mpcs {

class Optimizer {
public:
    virtual ~Optimizer() = default;
    virtual void step(const std::vector<ParamTensor*>& params) = 0;
};

class Adam : public Optimizer {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
    void step(const std::vector<ParamTensor*>& params) override;

private:
    double lr_, beta1_, beta2_, eps_;
    int t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// Layer-wise adaptive rate scaling over SGD+momentum. The paper's large-batch
// pre-training preset uses it; desk-scale presets default to Adam.
class Lars : public Optimizer {
public:
    explicit Lars(double lr, double momentum = 0.9, double weight_decay = 1e-6,
                  double trust = 0.001, double eps = 1e-12)
        : lr_(lr), momentum_(momentum), weight_decay_(weight_decay), trust_(trust), eps_(eps) {}
    void step(const std::vector<ParamTensor*>& params) override;

private:
    double lr_, momentum_, weight_decay_, trust_, eps_;
    std::vector<std::vector<double>> velocity_;
};

std::unique_ptr<Optimizer> make_optimizer(const std::string& kind, double lr);

}  // namespace mpcs
