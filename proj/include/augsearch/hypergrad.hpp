#pragma once

// Score-function hypergradient of the one-step-unrolled validation loss.
//
//   theta_hat = theta - eta0 * g_hat,   g_hat = mean_j grad l_train(theta, tau_j)
//   w_j       = grad l_val(theta_hat) . grad l_train(theta, tau_j)
//   G_phi     = -(eta0 / N_a) * sum_j w_j * score(tau_j)
//
// The augmentations and training batch behind g_hat are carried in a
// HyperBatch so the outer estimate reuses exactly the same draws.

#include <cstdint>
#include <vector>

#include "augsearch/errors.hpp"
#include "augsearch/parallel.hpp"
#include "augsearch/policy.hpp"
#include "augsearch/predictor.hpp"
#include "augsearch/random.hpp"

namespace augsearch {

struct HyperBatch {
    std::vector<CompositeAugmentation> augmentations;
    Batch train_batch;
    Batch val_batch;
    std::vector<Vector> per_aug_train_grads;
    std::vector<double> per_aug_train_losses;
};

struct InnerEstimate {
    Vector g_hat;
    double train_loss = 0.0;  // mean augmented training loss
    HyperBatch hb;
};

/// Mean of the per-augmentation gradients, summed in index order.
inline Vector mean_train_grad(const HyperBatch& hb) {
    if (hb.per_aug_train_grads.empty()) throw ArgumentError("HyperBatch: no augmentations");
    Vector g = hb.per_aug_train_grads.front();
    for (std::size_t j = 1; j < hb.per_aug_train_grads.size(); ++j) g += hb.per_aug_train_grads[j];
    return g / static_cast<double>(hb.per_aug_train_grads.size());
}

inline Batch augment_batch(const Policy& policy, const CompositeAugmentation& tau, const Batch& batch, Rng& rng) {
    Batch out;
    out.labels = batch.labels;
    out.images.reserve(batch.size());
    for (const Image& img : batch.images) out.images.push_back(apply_augmentation(policy, tau, img, rng));
    return out;
}

/// Draws n_aug augmentations, applies each to the whole training batch and
/// averages the resulting gradients. Each augmentation gets its own child
/// stream seeded from `rng`, so results do not depend on `workers`.
template <Classifier M>
InnerEstimate inner_grad(const M& model, const Vector& theta, const Policy& policy, Batch train_batch, Batch val_batch,
                         Rng& rng, int n_aug, int workers = 1) {
    if (n_aug < 1) throw ArgumentError("inner_grad: N_a must be >= 1");
    const auto count = static_cast<std::size_t>(n_aug);
    std::vector<std::uint64_t> seeds(count);
    for (auto& s : seeds) s = rng();

    InnerEstimate est;
    HyperBatch& hb = est.hb;
    hb.augmentations.resize(count);
    hb.per_aug_train_grads.resize(count);
    hb.per_aug_train_losses.resize(count);
    hb.train_batch = std::move(train_batch);
    hb.val_batch = std::move(val_batch);

    parallel_for(count, workers, [&](std::size_t j) {
        Rng child(seeds[j]);
        hb.augmentations[j] = sample(policy, child);
        const Batch augmented = augment_batch(policy, hb.augmentations[j], hb.train_batch, child);
        hb.per_aug_train_losses[j] = model.loss_and_grad(theta, augmented, hb.per_aug_train_grads[j]);
    });

    est.g_hat = mean_train_grad(hb);
    double total = 0.0;
    for (double l : hb.per_aug_train_losses) total += l;
    est.train_loss = total / static_cast<double>(count);
    return est;
}

/// One plain gradient step (no momentum, no schedule).
inline Vector virtual_step(const Vector& theta, const Vector& g_hat, double eta0) {
    if (!(eta0 > 0.0)) throw ArgumentError("virtual_step: eta0 must be positive");
    if (g_hat.size() != theta.size()) throw ArgumentError("virtual_step: gradient length mismatch");
    return theta - eta0 * g_hat;
}

struct OuterEstimate {
    PolicyGradient grad;
    std::vector<double> weights;  // w_j, gradient alignments
    double val_loss = 0.0;        // clean validation loss at theta_hat
};

/// Weighted score sum with the validation gradient taken at a given theta_hat.
template <Classifier M>
OuterEstimate outer_grad_at(const M& model, const Vector& theta_hat, const HyperBatch& hb, double eta0, const Policy& policy) {
    if (!(eta0 > 0.0)) throw ArgumentError("outer_grad: eta0 must be positive");
    if (hb.augmentations.size() != hb.per_aug_train_grads.size() || hb.augmentations.empty()) {
        throw ArgumentError("outer_grad: inconsistent HyperBatch");
    }
    OuterEstimate out{PolicyGradient::zeros_like(policy), {}, 0.0};
    Vector val_grad;
    out.val_loss = model.loss_and_grad(theta_hat, hb.val_batch, val_grad, false);
    if (!val_grad.allFinite()) throw NumericalError("outer_grad: non-finite validation gradient");

    const double n_aug = static_cast<double>(hb.augmentations.size());
    out.weights.reserve(hb.augmentations.size());
    for (std::size_t j = 0; j < hb.augmentations.size(); ++j) {
        const double w = val_grad.dot(hb.per_aug_train_grads[j]);
        out.weights.push_back(w);
        PolicyGradient s = score(policy, hb.augmentations[j]);
        s *= w;
        out.grad += s;
    }
    out.grad *= -eta0 / n_aug;
    if (!out.grad.all_finite()) throw NumericalError("outer_grad: non-finite hypergradient");
    return out;
}

template <Classifier M>
OuterEstimate outer_grad_with_stats(const M& model, const Vector& theta, const HyperBatch& hb, double eta0, const Policy& policy) {
    return outer_grad_at(model, virtual_step(theta, mean_train_grad(hb), eta0), hb, eta0, policy);
}

/// Stochastic upper-level gradient from the draws retained in `hb`.
template <Classifier M>
PolicyGradient outer_grad(const M& model, const Vector& theta, const HyperBatch& hb, double eta0, const Policy& policy) {
    return outer_grad_with_stats(model, theta, hb, eta0, policy).grad;
}

}  // namespace augsearch
