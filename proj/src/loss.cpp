#include "mpcs/loss.hpp"

#include <algorithm>
#include <cmath>

#include "mpcs/kernels.hpp"

namespace mpcs {

void ContrastiveBatch::validate() const {
    if (z.ndim() != 2) throw ShapeMismatchError("contrastive batch must be (2N, out)");
    const int n = z.dim(0);
    if (n < 2) throw DegenerateBatchError("DegenerateBatch: need at least 2 views, got " + std::to_string(n));
    if (strict_exclusion && n < 4)
        throw DegenerateBatchError("DegenerateBatch: strict exclusion leaves an empty denominator at 2N=2");
    if (static_cast<int>(pair_of.size()) != n)
        throw ShapeMismatchError("pair_of size does not match batch rows");
    if (temperature <= 0.0) throw ConfigError("temperature must be positive");
    for (int i = 0; i < n; ++i) {
        const int p = pair_of[static_cast<size_t>(i)];
        if (p < 0 || p >= n || p == i || pair_of[static_cast<size_t>(p)] != i)
            throw ConfigError("pair_of must be a fixed-point-free involution");
    }
    for (double v : z.v)
        if (!std::isfinite(v)) throw Error("contrastive batch contains non-finite values");
}

double cosine_sim(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeMismatchError("cosine_sim: dimension mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na <= 0.0 || nb <= 0.0) throw ZeroVectorError("ZeroVector: cosine similarity undefined");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace {

struct LossTerms {
    std::vector<double> per_anchor;
    Tensor softmax;  // (n, n): w_ik over the anchor's denominator set, 0 outside
    Tensor sim;      // (n, n) cosine matrix
};

LossTerms anchor_terms(const ContrastiveBatch& batch) {
    batch.validate();
    const int n = batch.z.dim(0);
    const double tau = batch.temperature;

    LossTerms t;
    kernels::cosine_matrix(batch.z, t.sim);
    t.softmax = Tensor({n, n});
    t.per_anchor.resize(static_cast<size_t>(n));

    for (int i = 0; i < n; ++i) {
        const int pos = batch.pair_of[static_cast<size_t>(i)];
        double maxv = -1e300;
        for (int k = 0; k < n; ++k) {
            if (k == i) continue;
            if (batch.strict_exclusion && k == pos) continue;
            maxv = std::max(maxv, t.sim.at2(i, k) / tau);
        }
        double denom = 0.0;
        for (int k = 0; k < n; ++k) {
            if (k == i) continue;
            if (batch.strict_exclusion && k == pos) continue;
            denom += std::exp(t.sim.at2(i, k) / tau - maxv);
        }
        const double lse = maxv + std::log(denom);
        t.per_anchor[static_cast<size_t>(i)] = lse - t.sim.at2(i, pos) / tau;
        for (int k = 0; k < n; ++k) {
            if (k == i) continue;
            if (batch.strict_exclusion && k == pos) continue;
            t.softmax.at2(i, k) = std::exp(t.sim.at2(i, k) / tau - lse);
        }
    }
    return t;
}

}  // namespace

std::vector<double> nt_xent_per_anchor(const ContrastiveBatch& batch) {
    return anchor_terms(batch).per_anchor;
}

double nt_xent(const ContrastiveBatch& batch) {
    const auto terms = anchor_terms(batch);
    double total = 0.0;
    for (double l : terms.per_anchor) total += l;
    return total / static_cast<double>(terms.per_anchor.size());
}

double nt_xent_with_grad(const ContrastiveBatch& batch, Tensor& grad) {
    const auto terms = anchor_terms(batch);
    const int n = batch.z.dim(0);
    const int d = batch.z.dim(1);
    const double tau = batch.temperature;
    const double inv_n = 1.0 / n;

    // dL/ds for every used (anchor, other) slot
    Tensor gs({n, n});
    for (int i = 0; i < n; ++i) {
        const int pos = batch.pair_of[static_cast<size_t>(i)];
        for (int k = 0; k < n; ++k) {
            if (k == i) continue;
            double g = terms.softmax.at2(i, k);
            if (k == pos) g -= 1.0;
            gs.at2(i, k) = g * inv_n / tau;
        }
    }

    // chain to normalized rows: s_ik = u_i . u_k, used by anchors i and k
    std::vector<double> norms(static_cast<size_t>(n));
    Tensor u = batch.z;
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int c = 0; c < d; ++c) acc += batch.z.at2(i, c) * batch.z.at2(i, c);
        norms[static_cast<size_t>(i)] = std::sqrt(acc);
        for (int c = 0; c < d; ++c) u.at2(i, c) /= norms[static_cast<size_t>(i)];
    }
    Tensor gu({n, d});
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < n; ++k) {
            if (k == i) continue;
            const double g = gs.at2(i, k) + gs.at2(k, i);
            if (g == 0.0) continue;
            for (int c = 0; c < d; ++c) gu.at2(i, c) += g * u.at2(k, c);
        }

    // through the normalization: dz = (gu - (gu . u) u) / ||z||
    grad = Tensor({n, d});
    for (int i = 0; i < n; ++i) {
        double proj = 0.0;
        for (int c = 0; c < d; ++c) proj += gu.at2(i, c) * u.at2(i, c);
        for (int c = 0; c < d; ++c)
            grad.at2(i, c) = (gu.at2(i, c) - proj * u.at2(i, c)) / norms[static_cast<size_t>(i)];
    }

    double total = 0.0;
    for (double l : terms.per_anchor) total += l;
    return total * inv_n;
}

Tensor nt_xent_grad(const ContrastiveBatch& batch) {
    Tensor grad;
    nt_xent_with_grad(batch, grad);
    return grad;
}

}  // namespace mpcs
