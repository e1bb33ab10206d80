#pragma once

// Small differentiable classifiers with analytic gradients, and the SGD
// optimizer used at both search and evaluation time.
//
// Parameters are one flat vector. For the one-hidden-layer network the layout
// is [W1 (H x D, row-major) | b1 (H) | W2 (C x H, row-major) | b2 (C)]; the
// linear model drops the hidden layer: [W (C x D) | b (C)].

#include <Eigen/Dense>

#include <cmath>
#include <concepts>
#include <numbers>
#include <string>
#include <vector>

#include "augsearch/binary_io.hpp"
#include "augsearch/errors.hpp"
#include "augsearch/random.hpp"
#include "augsearch/raster.hpp"

namespace augsearch {

using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Batch {
    std::vector<Image> images;
    std::vector<int> labels;

    std::size_t size() const { return images.size(); }
    bool empty() const { return images.empty(); }
};

struct Architecture {
    int width = 16;
    int height = 16;
    int channels = 1;
    int hidden = 64;  // 0 selects the linear (softmax-regression) model
    int classes = 4;

    Eigen::Index input_dim() const { return static_cast<Eigen::Index>(width) * height * channels; }
    Eigen::Index param_count() const {
        if (hidden == 0) return classes * input_dim() + classes;
        return hidden * input_dim() + hidden + classes * hidden + classes;
    }
    friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// What the search and evaluation loops require of a predictor.
template <typename M>
concept Classifier = requires(const M& m, const Vector& theta, const Batch& batch, Vector& grad_out, Rng& rng) {
    { m.param_count() } -> std::convertible_to<Eigen::Index>;
    { m.loss(theta, batch) } -> std::convertible_to<double>;
    { m.loss_and_grad(theta, batch, grad_out) } -> std::convertible_to<double>;
    { m.loss_and_grad(theta, batch, grad_out, false) } -> std::convertible_to<double>;
    { m.predict(theta, batch) } -> std::same_as<std::vector<int>>;
    { m.init(rng) } -> std::same_as<Vector>;
    { m.weight_decay() } -> std::convertible_to<double>;
};

namespace detail {

// Pixels enter the network centred on mid-grey.
inline RowMatrix flatten(const Batch& batch, Eigen::Index dim) {
    RowMatrix x(static_cast<Eigen::Index>(batch.size()), dim);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Image& img = batch.images[i];
        if (static_cast<Eigen::Index>(img.size()) != dim) throw ArgumentError("predictor: image size does not match architecture");
        for (Eigen::Index j = 0; j < dim; ++j) x(static_cast<Eigen::Index>(i), j) = img.pixels[static_cast<std::size_t>(j)] - 0.5;
    }
    return x;
}

inline void check_batch(const Batch& batch, int classes) {
    if (batch.empty()) throw ArgumentError("predictor: empty batch");
    if (batch.images.size() != batch.labels.size()) throw ArgumentError("predictor: images/labels length mismatch");
    for (int y : batch.labels) {
        if (y < 0 || y >= classes) throw ArgumentError("predictor: label out of range");
    }
}

/// Mean cross-entropy of row-wise softmax(logits); overwrites logits with
/// dLoss/dlogits when `want_grad`.
inline double softmax_xent(RowMatrix& logits, const std::vector<int>& labels, bool want_grad) {
    const auto n = logits.rows();
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        auto row = logits.row(i);
        const double mx = row.maxCoeff();
        row.array() -= mx;
        const double lse = std::log(row.array().exp().sum());
        const int y = labels[static_cast<std::size_t>(i)];
        total += lse - row[y];
        if (want_grad) {
            row = (row.array() - lse).exp();
            row[y] -= 1.0;
            row /= static_cast<double>(n);
        }
    }
    return total / static_cast<double>(n);
}

}  // namespace detail

/// One-hidden-layer ReLU network over flattened pixels (hidden == 0: linear).
class MlpClassifier {
public:
    explicit MlpClassifier(Architecture arch, double weight_decay = 0.0) : arch_(arch), weight_decay_(weight_decay) {
        if (arch.width <= 0 || arch.height <= 0 || arch.channels <= 0 || arch.classes < 2 || arch.hidden < 0) {
            throw ArgumentError("MlpClassifier: invalid architecture");
        }
        if (weight_decay < 0.0) throw ArgumentError("MlpClassifier: weight_decay must be nonnegative");
    }

    const Architecture& architecture() const { return arch_; }
    Eigen::Index param_count() const { return arch_.param_count(); }
    double weight_decay() const { return weight_decay_; }

    /// He initialization scaled by fan-in; biases start at zero.
    Vector init(Rng& rng) const {
        Vector theta = Vector::Zero(param_count());
        const Eigen::Index d = arch_.input_dim();
        if (arch_.hidden == 0) {
            const double scale = std::sqrt(2.0 / static_cast<double>(d));
            for (Eigen::Index i = 0; i < arch_.classes * d; ++i) theta[i] = scale * standard_normal(rng);
            return theta;
        }
        const Eigen::Index h = arch_.hidden;
        const double s1 = std::sqrt(2.0 / static_cast<double>(d));
        for (Eigen::Index i = 0; i < h * d; ++i) theta[i] = s1 * standard_normal(rng);
        const double s2 = std::sqrt(2.0 / static_cast<double>(h));
        const Eigen::Index w2 = h * d + h;
        for (Eigen::Index i = 0; i < arch_.classes * h; ++i) theta[w2 + i] = s2 * standard_normal(rng);
        return theta;
    }

    /// Mean cross-entropy over the batch (no weight-decay term).
    double loss(const Vector& theta, const Batch& batch) const {
        detail::check_batch(batch, arch_.classes);
        check_theta(theta);
        RowMatrix logits = forward(theta, detail::flatten(batch, arch_.input_dim()), nullptr);
        return detail::softmax_xent(logits, batch.labels, false);
    }

    /// Returns the loss; writes d(loss)/d(theta) + weight_decay * theta into grad
    /// (the decay term only when `with_weight_decay`).
    double loss_and_grad(const Vector& theta, const Batch& batch, Vector& grad, bool with_weight_decay = true) const {
        detail::check_batch(batch, arch_.classes);
        check_theta(theta);
        const RowMatrix x = detail::flatten(batch, arch_.input_dim());
        const Eigen::Index d = arch_.input_dim();
        const Eigen::Index c = arch_.classes;
        grad.setZero(param_count());

        if (arch_.hidden == 0) {
            RowMatrix dz = forward(theta, x, nullptr);
            const double l = detail::softmax_xent(dz, batch.labels, true);
            Eigen::Map<RowMatrix>(grad.data(), c, d).noalias() = dz.transpose() * x;
            grad.segment(c * d, c) = dz.colwise().sum().transpose();
            if (with_weight_decay && weight_decay_ > 0.0) grad += weight_decay_ * theta;
            return l;
        }

        const Eigen::Index h = arch_.hidden;
        RowMatrix hidden_act;
        RowMatrix dz2 = forward(theta, x, &hidden_act);
        const double l = detail::softmax_xent(dz2, batch.labels, true);

        const Eigen::Map<const RowMatrix> w2(theta.data() + h * d + h, c, h);
        Eigen::Map<RowMatrix>(grad.data() + h * d + h, c, h).noalias() = dz2.transpose() * hidden_act;
        grad.segment(h * d + h + c * h, c) = dz2.colwise().sum().transpose();

        RowMatrix dz1 = dz2 * w2;
        dz1.array() *= (hidden_act.array() > 0.0).cast<double>();
        Eigen::Map<RowMatrix>(grad.data(), h, d).noalias() = dz1.transpose() * x;
        grad.segment(h * d, h) = dz1.colwise().sum().transpose();

        if (with_weight_decay && weight_decay_ > 0.0) grad += weight_decay_ * theta;
        return l;
    }

    Vector grad(const Vector& theta, const Batch& batch) const {
        Vector g;
        loss_and_grad(theta, batch, g);
        return g;
    }

    std::vector<int> predict(const Vector& theta, const Batch& batch) const {
        check_theta(theta);
        if (batch.empty()) return {};
        const RowMatrix logits = forward(theta, detail::flatten(batch, arch_.input_dim()), nullptr);
        std::vector<int> out(batch.size());
        for (Eigen::Index i = 0; i < logits.rows(); ++i) {
            Eigen::Index best = 0;
            logits.row(i).maxCoeff(&best);
            out[static_cast<std::size_t>(i)] = static_cast<int>(best);
        }
        return out;
    }

    double accuracy(const Vector& theta, const Batch& batch) const {
        if (batch.empty()) throw ArgumentError("accuracy: empty batch");
        const auto pred = predict(theta, batch);
        std::size_t hits = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == batch.labels[i] ? 1 : 0;
        return static_cast<double>(hits) / static_cast<double>(pred.size());
    }

private:
    void check_theta(const Vector& theta) const {
        if (theta.size() != param_count()) throw ArgumentError("predictor: parameter vector has wrong length");
    }

    RowMatrix forward(const Vector& theta, const RowMatrix& x, RowMatrix* hidden_out) const {
        const Eigen::Index d = arch_.input_dim();
        const Eigen::Index c = arch_.classes;
        if (arch_.hidden == 0) {
            const Eigen::Map<const RowMatrix> w(theta.data(), c, d);
            RowMatrix z = x * w.transpose();
            z.rowwise() += theta.segment(c * d, c).transpose();
            return z;
        }
        const Eigen::Index h = arch_.hidden;
        const Eigen::Map<const RowMatrix> w1(theta.data(), h, d);
        const Eigen::Map<const RowMatrix> w2(theta.data() + h * d + h, c, h);
        RowMatrix a = x * w1.transpose();
        a.rowwise() += theta.segment(h * d, h).transpose();
        a = a.cwiseMax(0.0);
        RowMatrix z = a * w2.transpose();
        z.rowwise() += theta.segment(h * d + h + c * h, c).transpose();
        if (hidden_out) *hidden_out = std::move(a);
        return z;
    }

    Architecture arch_;
    double weight_decay_;
};

static_assert(Classifier<MlpClassifier>);

struct OptimState {
    Vector momentum_buffer;
    long step = 0;
    double base_lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 0.0;
    long total_steps = 1;
};

inline OptimState make_optim_state(Eigen::Index params, double base_lr, double momentum, double weight_decay, long total_steps) {
    if (!(base_lr > 0.0)) throw ArgumentError("optimizer: base_lr must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ArgumentError("optimizer: momentum must lie in [0,1)");
    if (total_steps < 1) throw ArgumentError("optimizer: total_steps must be >= 1");
    return OptimState{Vector::Zero(params), 0, base_lr, momentum, weight_decay, total_steps};
}

/// Cosine schedule: base_lr * (1 + cos(pi * t / T)) / 2.
inline double learning_rate(const OptimState& opt) {
    return opt.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(opt.step) / static_cast<double>(opt.total_steps)));
}

/// buffer <- momentum * buffer + g; theta <- theta - lr(t) * buffer.
inline void sgd_step(Vector& theta, const Vector& g, OptimState& opt) {
    if (g.size() != theta.size() || opt.momentum_buffer.size() != theta.size()) {
        throw ArgumentError("sgd_step: gradient length does not match parameters");
    }
    if (opt.step >= opt.total_steps) throw ArgumentError("sgd_step: schedule exhausted");
    if (!g.allFinite()) throw NumericalError("sgd_step: non-finite gradient");
    const double lr = learning_rate(opt);
    opt.momentum_buffer = opt.momentum * opt.momentum_buffer + g;
    theta -= lr * opt.momentum_buffer;
    ++opt.step;
}

// Checkpoint: "AUGCKPT1" | u32 width, height, channels, hidden, classes |
// u64 count | count little-endian float32.
inline constexpr std::string_view kCheckpointMagic = "AUGCKPT1";

inline void save_checkpoint(const Architecture& arch, const Vector& theta, const std::string& path) {
    if (theta.size() != arch.param_count()) throw ArgumentError("save_checkpoint: parameter count mismatch");
    binary::Writer w;
    w.bytes(kCheckpointMagic);
    for (int v : {arch.width, arch.height, arch.channels, arch.hidden, arch.classes}) w.u32(static_cast<std::uint32_t>(v));
    w.u64(static_cast<std::uint64_t>(theta.size()));
    for (Eigen::Index i = 0; i < theta.size(); ++i) w.f32(static_cast<float>(theta[i]));
    w.write_file(path);
}

struct Checkpoint {
    Architecture arch;
    Vector theta;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    auto r = binary::Reader::from_file(path);
    if (r.bytes(kCheckpointMagic.size(), "magic") != kCheckpointMagic) {
        throw FormatError(FormatError::Kind::BadMagic, 0, "not a predictor checkpoint");
    }
    Checkpoint ck;
    ck.arch.width = static_cast<int>(r.u32("width"));
    ck.arch.height = static_cast<int>(r.u32("height"));
    ck.arch.channels = static_cast<int>(r.u32("channels"));
    ck.arch.hidden = static_cast<int>(r.u32("hidden"));
    ck.arch.classes = static_cast<int>(r.u32("classes"));
    const std::size_t at = r.offset();
    const auto count = r.u64("parameter count");
    if (static_cast<Eigen::Index>(count) != ck.arch.param_count()) {
        throw FormatError(FormatError::Kind::DimensionMismatch, at, "parameter count does not match architecture");
    }
    ck.theta.resize(static_cast<Eigen::Index>(count));
    for (Eigen::Index i = 0; i < ck.theta.size(); ++i) ck.theta[i] = r.f32("parameters");
    return ck;
}

}  // namespace augsearch
