#pragma once

// Evaluation phase: retrain a fresh predictor on train + val under a policy,
// then measure clean test accuracy; aggregate seeds with a normal-theory 95%
// confidence interval.

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "augsearch/data.hpp"
#include "augsearch/errors.hpp"
#include "augsearch/hypergrad.hpp"
#include "augsearch/parallel.hpp"
#include "augsearch/policy.hpp"
#include "augsearch/predictor.hpp"

namespace augsearch {

struct EvalConfig {
    int epochs = 30;
    int batch_size = 64;
    double base_lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    int hidden = 64;
    bool per_image_sampling = false;
    int workers = 1;
};

struct ConfidenceInterval {
    double mean = 0.0;
    double half_width = 0.0;
};

inline constexpr double kZ95 = 1.96;

/// Sample mean and 1.96 * s / sqrt(n) with the n - 1 sample deviation.
inline ConfidenceInterval confidence_interval(std::span<const double> values) {
    if (values.size() < 2) throw ArgumentError("confidence_interval: need at least two values");
    const auto n = static_cast<double>(values.size());
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= n;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return {mean, kZ95 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}

struct EvalReport {
    std::vector<std::uint64_t> seeds;
    std::vector<double> accuracies;
    double mean = 0.0;
    double ci_half_width = 0.0;  // 0 when only one seed was run
    EvalConfig config;
};

/// Trains from the seeded initialization on `data`. Augmentation draws use
/// their own stream, so a policy that only ever yields Identity reproduces the
/// unaugmented run (policy == nullptr) exactly.
template <Classifier M>
Vector train_classifier(const M& model, const Dataset& data, const Policy* policy, const EvalConfig& cfg, std::uint64_t seed) {
    if (data.empty()) throw ArgumentError("train_classifier: empty dataset");
    if (cfg.epochs < 0 || cfg.batch_size < 1) throw ArgumentError("train_classifier: invalid epochs/batch size");
    Rng init_rng(mix_seed(seed, 11));
    BatchSampler sampler(data.size(), mix_seed(seed, 12));
    Rng aug_rng(mix_seed(seed, 13));
    Vector theta = model.init(init_rng);
    const auto per_epoch = static_cast<long>((data.size() + static_cast<std::size_t>(cfg.batch_size) - 1) /
                                             static_cast<std::size_t>(cfg.batch_size));
    const long steps = per_epoch * cfg.epochs;
    if (steps == 0) return theta;
    OptimState opt = make_optim_state(model.param_count(), cfg.base_lr, cfg.momentum, cfg.weight_decay, steps);
    Vector g;
    for (long t = 0; t < steps; ++t) {
        Batch batch = data.batch(sampler.next(static_cast<std::size_t>(cfg.batch_size)));
        if (policy) {
            if (cfg.per_image_sampling) {
                for (auto& img : batch.images) img = apply_augmentation(*policy, sample(*policy, aug_rng), img, aug_rng);
            } else {
                batch = augment_batch(*policy, sample(*policy, aug_rng), batch, aug_rng);
            }
        }
        model.loss_and_grad(theta, batch, g);
        sgd_step(theta, g, opt);
    }
    return theta;
}

template <Classifier M>
double test_accuracy(const M& model, const Vector& theta, const Dataset& test) {
    if (test.empty()) throw ArgumentError("test_accuracy: empty test set");
    const Batch b = test.as_batch();
    const auto pred = model.predict(theta, b);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == b.labels[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

inline MlpClassifier make_eval_model(const EvalConfig& cfg, const Dataset& reference) {
    if (reference.empty()) throw ArgumentError("evaluate: empty dataset");
    const Image& probe = reference.images.front();
    return MlpClassifier(Architecture{probe.width, probe.height, probe.channels, cfg.hidden, reference.num_classes},
                         cfg.weight_decay);
}

/// Retrains on train + val for each seed (concurrently up to cfg.workers) and
/// reports clean test accuracies. `policy == nullopt` trains without augmentation.
inline EvalReport evaluate_policy(const std::optional<Policy>& policy, const Splits& splits, const EvalConfig& cfg,
                                  const std::vector<std::uint64_t>& seeds) {
    if (seeds.empty()) throw ArgumentError("evaluate_policy: need at least one seed");
    if (policy) validate(*policy);
    const Dataset full = concat(splits.train, splits.val);
    const MlpClassifier model = make_eval_model(cfg, full);
    EvalReport report;
    report.seeds = seeds;
    report.config = cfg;
    report.accuracies.resize(seeds.size());
    parallel_for(seeds.size(), cfg.workers, [&](std::size_t i) {
        const Vector theta = train_classifier(model, full, policy ? &*policy : nullptr, cfg, seeds[i]);
        report.accuracies[i] = test_accuracy(model, theta, splits.test);
    });
    if (seeds.size() >= 2) {
        const auto ci = confidence_interval(report.accuracies);
        report.mean = ci.mean;
        report.ci_half_width = ci.half_width;
    } else {
        report.mean = report.accuracies.front();
    }
    return report;
}

inline nlohmann::json eval_config_to_json(const EvalConfig& c) {
    return {{"epochs", c.epochs},       {"batch_size", c.batch_size},     {"base_lr", c.base_lr},
            {"momentum", c.momentum},   {"weight_decay", c.weight_decay}, {"hidden", c.hidden},
            {"per_image_sampling", c.per_image_sampling}};
}

inline nlohmann::json report_to_json(const EvalReport& r) {
    return {{"seeds", r.seeds},
            {"accuracies", r.accuracies},
            {"mean", r.mean},
            {"ci_half_width", r.ci_half_width},
            {"config", eval_config_to_json(r.config)}};
}

/// Appends `label,n,mean,ci_half_width,accuracies` to a CSV ledger, writing the
/// header when the file is new.
inline void append_ledger_row(const EvalReport& r, const std::string& label, const std::string& path) {
    const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    std::ofstream out(path, std::ios::app);
    if (!out) throw std::runtime_error("cannot open ledger '" + path + "'");
    if (fresh) out << "label,n,mean,ci_half_width,accuracies\n";
    out << label << ',' << r.accuracies.size() << ',' << r.mean << ',' << r.ci_half_width << ',';
    for (std::size_t i = 0; i < r.accuracies.size(); ++i) out << (i ? ";" : "") << r.accuracies[i];
    out << '\n';
}

}  // namespace augsearch
