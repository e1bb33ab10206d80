#pragma once

// The stochastic augmentation policy.
//
// A composite augmentation is K slots. Slot k draws a transform index from
// softmax(logits.row(k)) and a magnitude m = u + eps, u ~ U[0, mu_i],
// eps ~ N(0, sigma^2), whose density is
//
//   p(m | mu_i) = (1/mu_i) [Phi((mu_i - m)/sigma) - Phi(-m/sigma)].
//
// Direction signs are fair coin flips outside the learned parameters.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "augsearch/errors.hpp"
#include "augsearch/random.hpp"
#include "augsearch/raster.hpp"

namespace augsearch {

inline constexpr double kMuMin = 0.05;
inline constexpr double kDefaultSigma = 0.1;
inline constexpr double kDefaultMuInit = 0.75;

struct Policy {
    std::vector<TransformId> transforms;  // the N candidates, in column order
    Eigen::MatrixXd logits;               // K x N
    Eigen::VectorXd mag_upper;            // N, each in [kMuMin, 1]
    double sigma = kDefaultSigma;

    int num_slots() const { return static_cast<int>(logits.rows()); }
    int num_transforms() const { return static_cast<int>(logits.cols()); }
    const TransformSpec& spec(int n) const { return spec_of(transforms[static_cast<std::size_t>(n)]); }

    friend bool operator==(const Policy& a, const Policy& b) {
        return a.transforms == b.transforms && a.sigma == b.sigma && a.logits.rows() == b.logits.rows() &&
               a.logits.cols() == b.logits.cols() && a.logits == b.logits && a.mag_upper == b.mag_upper;
    }
};

struct Slot {
    int transform = 0;
    double magnitude = 0.0;  // raw sample; clamped to [0,1] only when applied
    int direction = 1;

    friend bool operator==(const Slot&, const Slot&) = default;
};

struct CompositeAugmentation {
    std::vector<Slot> slots;
    friend bool operator==(const CompositeAugmentation&, const CompositeAugmentation&) = default;
};

struct PolicyGradient {
    Eigen::MatrixXd d_logits;
    Eigen::VectorXd d_mag;

    static PolicyGradient zeros(int slots, int transforms) {
        return {Eigen::MatrixXd::Zero(slots, transforms), Eigen::VectorXd::Zero(transforms)};
    }
    static PolicyGradient zeros_like(const Policy& p) { return zeros(p.num_slots(), p.num_transforms()); }

    PolicyGradient& operator+=(const PolicyGradient& o) {
        d_logits += o.d_logits;
        d_mag += o.d_mag;
        return *this;
    }
    PolicyGradient& operator*=(double s) {
        d_logits *= s;
        d_mag *= s;
        return *this;
    }
    bool all_finite() const { return d_logits.allFinite() && d_mag.allFinite(); }
};

inline void validate(const Policy& p) {
    if (p.num_slots() < 1 || p.num_transforms() < 2) throw ArgumentError("policy: need K >= 1 and N >= 2");
    if (static_cast<int>(p.transforms.size()) != p.num_transforms() || p.mag_upper.size() != p.num_transforms()) {
        throw ArgumentError("policy: transform list, logits and mag_upper disagree on N");
    }
    if (!(p.sigma > 0.0)) throw ArgumentError("policy: sigma must be positive");
    if (!p.logits.allFinite()) throw NumericalError("policy: non-finite logits");
    for (Eigen::Index i = 0; i < p.mag_upper.size(); ++i) {
        if (!(p.mag_upper[i] >= kMuMin && p.mag_upper[i] <= 1.0)) {
            throw ArgumentError("policy: mag_upper entries must lie in [0.05, 1]");
        }
    }
}

inline Policy uniform_policy(int slots, std::vector<TransformId> transforms, double mu_init = kDefaultMuInit) {
    if (slots < 1) throw ArgumentError("uniform_policy: K must be >= 1");
    if (transforms.size() < 2) throw ArgumentError("uniform_policy: N must be >= 2");
    if (!(mu_init >= kMuMin && mu_init <= 1.0)) throw ArgumentError("uniform_policy: mu_init outside [0.05, 1]");
    const auto n = static_cast<Eigen::Index>(transforms.size());
    return Policy{std::move(transforms), Eigen::MatrixXd::Zero(slots, n), Eigen::VectorXd::Constant(n, mu_init),
                  kDefaultSigma};
}

/// Uniform policy over the first N transforms of the default registry.
inline Policy uniform_policy(int slots, int n, double mu_init = kDefaultMuInit) {
    if (n < 2 || n > static_cast<int>(registry().size())) {
        throw ArgumentError("uniform_policy: N must lie in [2, registry size]");
    }
    std::vector<TransformId> ids;
    for (int i = 0; i < n; ++i) ids.push_back(registry()[static_cast<std::size_t>(i)].id);
    return uniform_policy(slots, std::move(ids), mu_init);
}

inline Eigen::RowVectorXd log_softmax(const Eigen::RowVectorXd& row) {
    const double mx = row.maxCoeff();
    const double lse = mx + std::log((row.array() - mx).exp().sum());
    return row.array() - lse;
}

inline Eigen::MatrixXd slot_probabilities(const Policy& p) {
    Eigen::MatrixXd probs(p.logits.rows(), p.logits.cols());
    for (Eigen::Index k = 0; k < p.logits.rows(); ++k) probs.row(k) = log_softmax(p.logits.row(k)).array().exp();
    return probs;
}

/// Slot probabilities averaged over the K slots.
inline Eigen::VectorXd mean_probabilities(const Policy& p) { return slot_probabilities(p).colwise().mean().transpose(); }

/// Shannon entropy (nats) of each slot's categorical distribution.
inline Eigen::VectorXd slot_entropy(const Policy& p) {
    Eigen::VectorXd h(p.num_slots());
    for (Eigen::Index k = 0; k < p.logits.rows(); ++k) {
        const Eigen::RowVectorXd lp = log_softmax(p.logits.row(k));
        h[k] = -(lp.array().exp() * lp.array()).sum();
    }
    return h;
}

/// Gradient in the logits of the summed slot entropies.
inline Eigen::MatrixXd entropy_gradient(const Policy& p) {
    Eigen::MatrixXd g(p.logits.rows(), p.logits.cols());
    for (Eigen::Index k = 0; k < p.logits.rows(); ++k) {
        const Eigen::RowVectorXd lp = log_softmax(p.logits.row(k));
        const Eigen::RowVectorXd q = lp.array().exp();
        const double h = -(q.array() * lp.array()).sum();
        g.row(k) = -(q.array() * (lp.array() + h));
    }
    return g;
}

namespace detail {

// log of the standard normal upper tail Q(x) = 1 - Phi(x).
inline double log_normal_sf(double x) {
    if (x < 25.0) return std::log(0.5 * std::erfc(x / std::numbers::sqrt2));
    // Asymptotic series; erfc underflows past here.
    const double x2 = x * x;
    return -0.5 * x2 - std::log(x) - 0.5 * std::log(2.0 * std::numbers::pi) + std::log1p(-1.0 / x2 + 3.0 / (x2 * x2));
}

inline double normal_sf(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

inline double log_normal_pdf(double x) { return -0.5 * x * x - 0.5 * std::log(2.0 * std::numbers::pi); }

// log(Phi(a) - Phi(b)) for a > b, stable in both tails.
inline double log_normal_cdf_diff(double a, double b) {
    if (b >= 0.0) {
        const double la = log_normal_sf(a);
        const double lb = log_normal_sf(b);
        return lb + std::log1p(-std::exp(la - lb));
    }
    if (a <= 0.0) {
        const double la = log_normal_sf(-a);
        const double lb = log_normal_sf(-b);
        return la + std::log1p(-std::exp(lb - la));
    }
    return std::log1p(-normal_sf(a) - normal_sf(-b));
}

}  // namespace detail

inline double log_magnitude_density(double mu, double sigma, double m) {
    if (!(mu > 0.0) || !(sigma > 0.0)) throw ArgumentError("magnitude_density: mu and sigma must be positive");
    return -std::log(mu) + detail::log_normal_cdf_diff((mu - m) / sigma, -m / sigma);
}

/// Smoothed-uniform magnitude density. Floors at the smallest normal double
/// where the exact value underflows.
inline double magnitude_density(double mu, double sigma, double m) {
    return std::max(std::exp(log_magnitude_density(mu, sigma, m)), std::numeric_limits<double>::min());
}

/// d/dmu log p(m | mu).
inline double magnitude_score(double mu, double sigma, double m) {
    const double a = (mu - m) / sigma;
    const double log_ratio = detail::log_normal_pdf(a) - detail::log_normal_cdf_diff(a, -m / sigma);
    return -1.0 / mu + std::exp(log_ratio) / sigma;
}

inline CompositeAugmentation sample(const Policy& p, Rng& rng) {
    CompositeAugmentation tau;
    tau.slots.reserve(static_cast<std::size_t>(p.num_slots()));
    for (int k = 0; k < p.num_slots(); ++k) {
        const Eigen::RowVectorXd probs = log_softmax(p.logits.row(k)).array().exp();
        const double u = uniform01(rng);
        int idx = p.num_transforms() - 1;
        double cum = 0.0;
        for (int n = 0; n < p.num_transforms(); ++n) {
            cum += probs[n];
            if (u < cum) {
                idx = n;
                break;
            }
        }
        Slot slot{idx, 0.0, 1};
        const TransformSpec& spec = p.spec(idx);
        if (!spec.parameter_free) {
            slot.magnitude = p.mag_upper[idx] * uniform01(rng) + p.sigma * standard_normal(rng);
        }
        if (spec.directional) slot.direction = uniform01(rng) < 0.5 ? -1 : 1;
        tau.slots.push_back(slot);
    }
    return tau;
}

namespace detail {
inline void check_slots(const Policy& p, const CompositeAugmentation& tau) {
    if (static_cast<int>(tau.slots.size()) != p.num_slots()) {
        throw ArgumentError("policy: augmentation slot count does not match K");
    }
    for (const Slot& s : tau.slots) {
        if (s.transform < 0 || s.transform >= p.num_transforms()) throw ArgumentError("policy: transform index out of range");
    }
}
}  // namespace detail

/// Exact log-density of tau. Direction signs contribute only a constant and are omitted.
inline double log_prob(const Policy& p, const CompositeAugmentation& tau) {
    detail::check_slots(p, tau);
    double lp = 0.0;
    for (int k = 0; k < p.num_slots(); ++k) {
        const Slot& s = tau.slots[static_cast<std::size_t>(k)];
        lp += log_softmax(p.logits.row(k))[s.transform];
        if (!p.spec(s.transform).parameter_free) lp += log_magnitude_density(p.mag_upper[s.transform], p.sigma, s.magnitude);
    }
    return lp;
}

/// Gradient of log_prob in (logits, mag_upper).
inline PolicyGradient score(const Policy& p, const CompositeAugmentation& tau) {
    detail::check_slots(p, tau);
    PolicyGradient g = PolicyGradient::zeros_like(p);
    for (int k = 0; k < p.num_slots(); ++k) {
        const Slot& s = tau.slots[static_cast<std::size_t>(k)];
        g.d_logits.row(k) = -log_softmax(p.logits.row(k)).array().exp();
        g.d_logits(k, s.transform) += 1.0;
        if (!p.spec(s.transform).parameter_free) {
            g.d_mag[s.transform] += magnitude_score(p.mag_upper[s.transform], p.sigma, s.magnitude);
        }
    }
    return g;
}

struct KlResult {
    double value = 0.0;
    PolicyGradient grad;
};

/// Sum over slots of KL(softmax(policy) || softmax(anchor)) and its exact
/// gradient in the policy logits. Magnitudes are not anchored.
inline KlResult kl_to_anchor(const Policy& p, const Policy& anchor) {
    if (p.logits.rows() != anchor.logits.rows() || p.logits.cols() != anchor.logits.cols()) {
        throw ArgumentError("kl_to_anchor: policy and anchor shapes differ");
    }
    KlResult r{0.0, PolicyGradient::zeros_like(p)};
    for (Eigen::Index k = 0; k < p.logits.rows(); ++k) {
        const Eigen::RowVectorXd lq = log_softmax(p.logits.row(k));
        const Eigen::RowVectorXd la = log_softmax(anchor.logits.row(k));
        const Eigen::RowVectorXd q = lq.array().exp();
        const Eigen::RowVectorXd diff = lq - la;
        const double kl = (q.array() * diff.array()).sum();
        r.value += kl;
        r.grad.d_logits.row(k) = q.array() * (diff.array() - kl);
    }
    return r;
}

/// One projected step: logits <- logits - alpha (G + lambda grad KL),
/// mu <- clip(mu - (alpha / mu_lr_divisor) G_mu, [0.05, 1]).
inline Policy outer_update(const Policy& p, const PolicyGradient& g, const Policy& anchor, double alpha, double lambda,
                           double mu_lr_divisor = 40.0) {
    if (!(alpha >= 0.0) || !(lambda >= 0.0) || !(mu_lr_divisor > 0.0)) {
        throw ArgumentError("outer_update: need alpha >= 0, lambda >= 0, mu_lr_divisor > 0");
    }
    if (g.d_logits.rows() != p.logits.rows() || g.d_logits.cols() != p.logits.cols() || g.d_mag.size() != p.mag_upper.size()) {
        throw ArgumentError("outer_update: gradient shape does not match policy");
    }
    if (!g.all_finite()) throw NumericalError("outer_update: non-finite policy gradient");

    Policy next = p;
    next.logits -= alpha * g.d_logits;
    if (lambda > 0.0) next.logits -= (alpha * lambda) * kl_to_anchor(p, anchor).grad.d_logits;
    const double mu_step = alpha / mu_lr_divisor;
    for (int n = 0; n < p.num_transforms(); ++n) {
        if (p.spec(n).parameter_free) continue;
        next.mag_upper[n] = std::clamp(p.mag_upper[n] - mu_step * g.d_mag[n], kMuMin, 1.0);
    }
    if (!next.logits.allFinite()) throw NumericalError("outer_update: logits became non-finite");
    return next;
}

/// Applies the slots of tau in order, clamping each raw magnitude to [0,1].
inline Image apply_augmentation(const Policy& p, const CompositeAugmentation& tau, const Image& image, Rng& rng) {
    Image out = image;
    for (const Slot& s : tau.slots) {
        out = apply_transform(p.spec(s.transform), std::clamp(s.magnitude, 0.0, 1.0), s.direction, out, rng);
    }
    return out;
}

}  // namespace augsearch
