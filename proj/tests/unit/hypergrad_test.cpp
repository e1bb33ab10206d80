#include <gtest/gtest.h>

#include <cmath>

#include "augsearch/hypergrad.hpp"

namespace augsearch {
namespace {

using T = TransformId;

Batch random_batch(std::size_t n, const Architecture& a, Rng& rng) {
    Batch b;
    for (std::size_t i = 0; i < n; ++i) {
        Image img(a.width, a.height, a.channels);
        for (auto& v : img.pixels) v = static_cast<float>(uniform_index(rng, 256)) / 255.0f;
        b.images.push_back(std::move(img));
        b.labels.push_back(static_cast<int>(uniform_index(rng, static_cast<std::size_t>(a.classes))));
    }
    return b;
}

struct Fixture {
    Architecture arch{3, 3, 1, 0, 3};
    MlpClassifier model{arch, 5e-4};
    Rng rng{42};
    Vector theta;
    Batch train, val;

    Fixture() {
        theta = model.init(rng);
        train = random_batch(8, arch, rng);
        val = random_batch(8, arch, rng);
    }
};

TEST(InnerGrad, IdentityAugmentationsGiveThePlainGradient) {
    Fixture f;
    Policy p = uniform_policy(2, std::vector<TransformId>{T::Identity, T::Invert});
    p.logits.col(0).setConstant(60.0);
    Rng rng(1);
    const InnerEstimate est = inner_grad(f.model, f.theta, p, f.train, f.val, rng, 8);
    EXPECT_EQ(est.hb.augmentations.size(), 8u);
    EXPECT_LE((est.g_hat - f.model.grad(f.theta, f.train)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(InnerGrad, KeepsDrawsAndBatchesTogether) {
    Fixture f;
    const Policy p = uniform_policy(2, std::vector<TransformId>{T::Identity, T::Invert, T::Rotate});
    Rng rng(2);
    const InnerEstimate est = inner_grad(f.model, f.theta, p, f.train, f.val, rng, 5);
    ASSERT_EQ(est.hb.per_aug_train_grads.size(), 5u);
    EXPECT_EQ(est.hb.train_batch.labels, f.train.labels);
    EXPECT_EQ(est.hb.val_batch.labels, f.val.labels);
    Vector sum = Vector::Zero(f.model.param_count());
    for (const auto& g : est.hb.per_aug_train_grads) sum += g;
    EXPECT_LE((est.g_hat - sum / 5.0).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(InnerGrad, IndependentOfWorkerCount) {
    Fixture f;
    const Policy p = uniform_policy(3, 17);
    Rng a(3), b(3);
    const InnerEstimate one = inner_grad(f.model, f.theta, p, f.train, f.val, a, 8, 1);
    const InnerEstimate four = inner_grad(f.model, f.theta, p, f.train, f.val, b, 8, 4);
    EXPECT_EQ(one.g_hat, four.g_hat);
    EXPECT_EQ(one.hb.augmentations, four.hb.augmentations);
}

TEST(InnerGrad, MonteCarloMeanMatchesEnumeration) {
    Fixture f;
    Policy p = uniform_policy(1, std::vector<TransformId>{T::Identity, T::Invert});
    p.logits(0, 0) = 0.4;
    const Eigen::MatrixXd probs = slot_probabilities(p);
    Rng unused(0);
    const Vector g_id = f.model.grad(f.theta, f.train);
    const Vector g_inv = f.model.grad(f.theta, augment_batch(p, {{Slot{1, 0.0, 1}}}, f.train, unused));
    const Vector exact = probs(0, 0) * g_id + probs(0, 1) * g_inv;

    const int draws = 10000;
    Rng rng(4);
    Vector sum = Vector::Zero(exact.size()), sq = Vector::Zero(exact.size());
    for (int i = 0; i < draws; ++i) {
        const Vector g = inner_grad(f.model, f.theta, p, f.train, f.val, rng, 1).g_hat;
        sum += g;
        sq += g.cwiseProduct(g);
    }
    const Vector mean = sum / draws;
    const Vector se = ((sq / draws - mean.cwiseProduct(mean)) / draws).cwiseSqrt();
    for (Eigen::Index i = 0; i < exact.size(); ++i) EXPECT_LE(std::abs(mean[i] - exact[i]), 3.0 * se[i] + 1e-12) << i;
}

TEST(VirtualStep, HandValues) {
    Vector theta = Vector::Ones(1);
    // Loss theta^2 / 2 has gradient theta.
    EXPECT_DOUBLE_EQ(virtual_step(theta, theta, 0.1)[0], 0.9);
    EXPECT_EQ(virtual_step(theta, Vector::Zero(1), 0.1), theta);
    EXPECT_THROW(virtual_step(theta, theta, 0.0), ArgumentError);
}

TEST(OuterGrad, ClosedFormOnRetainedDraws) {
    Fixture f;
    Policy p = uniform_policy(2, std::vector<TransformId>{T::Identity, T::Invert, T::Rotate, T::Contrast});
    p.logits.setRandom();
    Rng rng(6);
    const InnerEstimate est = inner_grad(f.model, f.theta, p, f.train, f.val, rng, 8);
    const double eta0 = 0.1;
    const OuterEstimate out = outer_grad_with_stats(f.model, f.theta, est.hb, eta0, p);

    const Vector theta_hat = f.theta - eta0 * est.g_hat;
    Vector vg;
    f.model.loss_and_grad(theta_hat, f.val, vg, false);
    PolicyGradient want = PolicyGradient::zeros_like(p);
    for (std::size_t j = 0; j < 8; ++j) {
        const double w = vg.dot(est.hb.per_aug_train_grads[j]);
        EXPECT_NEAR(out.weights[j], w, 1e-12);
        PolicyGradient s = score(p, est.hb.augmentations[j]);
        s *= -eta0 * w / 8.0;
        want += s;
    }
    EXPECT_LE((out.grad.d_logits - want.d_logits).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((out.grad.d_mag - want.d_mag).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(out.val_loss, f.model.loss(theta_hat, f.val), 1e-12);
}

TEST(OuterGrad, ValidationGradientHasNoWeightDecay) {
    Fixture f;
    const Policy p = uniform_policy(1, 3);
    Rng rng(7);
    const InnerEstimate est = inner_grad(f.model, f.theta, p, f.train, f.val, rng, 4);
    const Vector theta_hat = virtual_step(f.theta, est.g_hat, 0.1);
    const OuterEstimate out = outer_grad_at(f.model, theta_hat, est.hb, 0.1, p);
    Vector vg;
    f.model.loss_and_grad(theta_hat, f.val, vg, false);
    EXPECT_NEAR(out.weights[0], vg.dot(est.hb.per_aug_train_grads[0]), 1e-14);
}

TEST(OuterGrad, LinearInEtaAtFrozenThetaHat) {
    Fixture f;
    Policy p = uniform_policy(2, std::vector<TransformId>{T::Identity, T::Invert, T::Rotate});
    p.logits.setRandom();
    Rng rng(8);
    const InnerEstimate est = inner_grad(f.model, f.theta, p, f.train, f.val, rng, 8);
    const Vector theta_hat = virtual_step(f.theta, est.g_hat, 0.1);
    const OuterEstimate a = outer_grad_at(f.model, theta_hat, est.hb, 0.1, p);
    const OuterEstimate b = outer_grad_at(f.model, theta_hat, est.hb, 0.2, p);
    EXPECT_LE((b.grad.d_logits - 2.0 * a.grad.d_logits).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LE((b.grad.d_mag - 2.0 * a.grad.d_mag).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(OuterGrad, ZeroForOrthogonalGradients) {
    // Train gradients projected orthogonal to the validation gradient.
    Fixture f;
    const Policy p = uniform_policy(1, 3);
    Rng rng(9);
    InnerEstimate est = inner_grad(f.model, f.theta, p, f.train, f.val, rng, 4);
    const Vector theta_hat = virtual_step(f.theta, est.g_hat, 0.1);
    Vector vg;
    f.model.loss_and_grad(theta_hat, f.val, vg, false);
    for (auto& g : est.hb.per_aug_train_grads) g -= vg * (vg.dot(g) / vg.squaredNorm());
    const OuterEstimate out = outer_grad_at(f.model, theta_hat, est.hb, 0.1, p);
    for (double w : out.weights) EXPECT_NEAR(w, 0.0, 1e-12);
    EXPECT_LE(out.grad.d_logits.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(OuterGrad, ZeroValidationGradientGivesZero) {
    // A saturated model: the validation gradient underflows to ~1e-174.
    Architecture arch{1, 1, 1, 0, 2};
    MlpClassifier model(arch);
    Batch val;
    val.images.push_back(Image(1, 1, 1, 0.5f));
    val.labels.push_back(1);
    Vector theta = Vector::Zero(model.param_count());
    theta[3] = 400.0;  // bias of class 1
    Batch train = val;
    const Policy p = uniform_policy(1, std::vector<TransformId>{T::Identity, T::Invert});
    Rng rng(10);
    const InnerEstimate est = inner_grad(model, theta, p, train, val, rng, 4);
    const PolicyGradient g = outer_grad(model, theta, est.hb, 0.1, p);
    EXPECT_LE(g.d_logits.cwiseAbs().maxCoeff(), 1e-100);
}

TEST(OuterGrad, RejectsInconsistentHyperBatch) {
    Fixture f;
    const Policy p = uniform_policy(1, 3);
    HyperBatch hb;
    hb.val_batch = f.val;
    EXPECT_THROW(outer_grad(f.model, f.theta, hb, 0.1, p), ArgumentError);
}

}  // namespace
}  // namespace augsearch
