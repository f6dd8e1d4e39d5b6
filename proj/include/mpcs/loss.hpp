#pragma once

#include <span>
#include <vector>

#include "mpcs/tensor.hpp"

namespace mpcs {

// Batch of 2N projected views. pair_of is an involution without fixed
// points: pair_of[pair_of[i]] == i and pair_of[i] != i. strict_exclusion
// drops the positive from the denominator as well (sensitivity switch; the
// default keeps it, the SimCLR convention).
struct ContrastiveBatch {
    Tensor z;                  // (2N, out)
    std::vector<int> pair_of;  // size 2N
    double temperature = 0.01;
    bool strict_exclusion = false;

    void validate() const;
};

double cosine_sim(std::span<const double> a, std::span<const double> b);

// Mean over all 2N anchors of the per-anchor temperature-scaled loss.
// Embeddings are L2-normalized once up front; the denominator uses
// log-sum-exp with max subtraction (mandatory at temperature 0.01).
double nt_xent(const ContrastiveBatch& batch);

std::vector<double> nt_xent_per_anchor(const ContrastiveBatch& batch);

// Analytic gradient w.r.t. the raw (pre-normalization) rows of z.
Tensor nt_xent_grad(const ContrastiveBatch& batch);

double nt_xent_with_grad(const ContrastiveBatch& batch, Tensor& grad);

}  // namespace mpcs
