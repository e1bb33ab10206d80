#pragma once

// Multi-stage policy search: pretrain theta0 under the uniform policy, then
// run rounds that restart the model from theta0 (cold start), freeze the
// current policy as the KL anchor, retrain for n_retrain steps, and finally
// alternate one inner step with one policy step until n_total.

#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "augsearch/data.hpp"
#include "augsearch/errors.hpp"
#include "augsearch/hypergrad.hpp"
#include "augsearch/parallel.hpp"
#include "augsearch/policy.hpp"
#include "augsearch/predictor.hpp"
#include "augsearch/random.hpp"

namespace augsearch {

struct SearchMode {
    bool kl_on = true;
    bool cold_start = true;
    bool single_stage = false;
    int ensemble_size = 1;
};

struct SearchConfig {
    int n_rounds = 10;
    int n_retrain = 100;
    int n_total = 140;
    int n_aug = 8;
    int train_batch_size = 128;
    int val_batch_size = 128;
    double base_lr = 0.1;  // inner learning rate; also the virtual-step size
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double alpha = 10.0;    // upper learning rate for the logits
    double lambda = 0.002;  // KL weight; alpha * lambda = 0.02
    double mu_lr_divisor = 40.0;
    double policy_momentum = 0.0;
    int num_slots = 3;
    double mu_init = kDefaultMuInit;
    int pretrain_steps = -1;  // negative: 2 * n_total
    int hidden = 64;
    SearchMode mode;
    std::uint64_t seed = 0;
    int workers = 1;
    std::vector<TransformId> transforms = all_transforms();

    static std::vector<TransformId> all_transforms() {
        std::vector<TransformId> ids;
        for (const auto& s : registry()) ids.push_back(s.id);
        return ids;
    }
    int effective_pretrain_steps() const { return pretrain_steps < 0 ? 2 * n_total : pretrain_steps; }
    double effective_lambda() const { return mode.kl_on ? lambda : 0.0; }
};

inline void validate(const SearchConfig& c) {
    auto fail = [](const std::string& m) { throw ArgumentError("search config: " + m); };
    if (c.n_rounds < 0) fail("n_rounds must be >= 0");
    if (c.n_total < 1 || c.n_retrain < 0 || c.n_retrain > c.n_total) fail("need 0 <= n_retrain <= n_total, n_total >= 1");
    if (c.n_aug < 1) fail("N_a must be >= 1");
    if (c.train_batch_size < 1 || c.val_batch_size < 1) fail("batch sizes must be positive");
    if (!(c.base_lr > 0.0)) fail("base_lr must be positive");
    if (!(c.momentum >= 0.0 && c.momentum < 1.0)) fail("momentum must lie in [0,1)");
    if (c.weight_decay < 0.0) fail("weight_decay must be >= 0");
    if (c.alpha < 0.0 || c.lambda < 0.0) fail("alpha and lambda must be >= 0");
    if (c.mode.kl_on && !(c.alpha * c.lambda > 0.0)) fail("alpha * lambda must be positive when KL is on");
    if (!(c.mu_lr_divisor > 0.0)) fail("mu_lr_divisor must be positive");
    if (!(c.policy_momentum >= 0.0 && c.policy_momentum < 1.0)) fail("policy_momentum must lie in [0,1)");
    if (c.num_slots < 1) fail("num_slots must be >= 1");
    if (c.mode.ensemble_size < 1) fail("ensemble_size must be >= 1");
    if (c.transforms.size() < 2) fail("need at least two transforms");
    if (c.hidden < 0) fail("hidden must be >= 0");
    if (c.workers < 1) fail("workers must be >= 1");
}

// ---------------------------------------------------------------------------
// Trace

struct TraceRecord {
    long step = 0;  // outer step, from 1
    int round = 0;  // from 1
    Eigen::MatrixXd probs;
    Eigen::VectorXd mu;
    double kl = 0.0;
    Eigen::VectorXd entropy;
    double inner_loss = 0.0;
    double outer_loss = 0.0;
};

struct RoundSummary {
    int round = 0;
    double train_loss = 0.0;  // clean, full search-train split, replica 0
    double val_loss = 0.0;    // clean, full validation split, replica 0
    double val_accuracy = 0.0;
};

struct PolicyTrace {
    std::vector<TransformId> transforms;
    int num_slots = 0;
    std::vector<TraceRecord> records;
    std::vector<RoundSummary> rounds;
};

inline void write_trace_csv(const PolicyTrace& trace, std::ostream& out) {
    out << "step,round,inner_loss,outer_loss,kl";
    for (int k = 0; k < trace.num_slots; ++k) out << ",entropy_" << k;
    for (int k = 0; k < trace.num_slots; ++k)
        for (TransformId id : trace.transforms) out << ",p" << k << '_' << to_string(id);
    for (TransformId id : trace.transforms) out << ",mu_" << to_string(id);
    out << '\n';
    out.precision(std::numeric_limits<double>::max_digits10);
    for (const TraceRecord& r : trace.records) {
        out << r.step << ',' << r.round << ',' << r.inner_loss << ',' << r.outer_loss << ',' << r.kl;
        for (Eigen::Index k = 0; k < r.entropy.size(); ++k) out << ',' << r.entropy[k];
        for (Eigen::Index k = 0; k < r.probs.rows(); ++k)
            for (Eigen::Index n = 0; n < r.probs.cols(); ++n) out << ',' << r.probs(k, n);
        for (Eigen::Index n = 0; n < r.mu.size(); ++n) out << ',' << r.mu[n];
        out << '\n';
    }
}

inline void write_rounds_csv(const PolicyTrace& trace, std::ostream& out) {
    out << "round,train_loss,val_loss,val_accuracy\n";
    out.precision(std::numeric_limits<double>::max_digits10);
    for (const RoundSummary& r : trace.rounds) {
        out << r.round << ',' << r.train_loss << ',' << r.val_loss << ',' << r.val_accuracy << '\n';
    }
}

/// Raised when a round hits a non-finite value; carries the trace so far.
class SearchAborted : public NumericalError {
public:
    SearchAborted(const std::string& what, PolicyTrace partial) : NumericalError(what), trace_(std::move(partial)) {}
    const PolicyTrace& trace() const { return trace_; }

private:
    PolicyTrace trace_;
};

// ---------------------------------------------------------------------------
// State

struct Replica {
    Vector theta0;
    Vector theta;
    OptimState opt;
    BatchSampler train_sampler;
    BatchSampler val_sampler;
    Rng rng;
};

struct SearchState {
    Policy policy;
    Policy anchor;
    PolicyGradient velocity;
    std::vector<Replica> replicas;
    long outer_step = 0;
    int round = 0;
    PolicyTrace trace;
};

struct PretrainResult {
    Vector theta0;
    std::vector<double> loss_curve;  // augmented minibatch loss per step
    double initial_loss = 0.0;       // clean loss on the full train split
    double final_loss = 0.0;
    std::vector<long> index_counts;  // sampled transform tallies, all slots
};

inline MlpClassifier make_model(const SearchConfig& c, const Dataset& reference) {
    if (reference.empty()) throw ArgumentError("search: empty dataset");
    const Image& probe = reference.images.front();
    return MlpClassifier(Architecture{probe.width, probe.height, probe.channels, c.hidden, reference.num_classes}, c.weight_decay);
}

namespace detail {

inline std::uint64_t replica_seed(std::uint64_t seed, int replica) {
    return replica == 0 ? seed : mix_seed(seed, 1000 + static_cast<std::uint64_t>(replica));
}

inline void check_splits(const SearchConfig& c, const Splits& s) {
    if (s.train.empty() || s.val.empty()) throw ArgumentError("search: train and val splits must be non-empty");
    if (s.train.size() < static_cast<std::size_t>(c.train_batch_size)) {
        throw ArgumentError("search: training split smaller than one batch");
    }
}

}  // namespace detail

/// Trains theta from its seeded initialization on the search-train split under
/// the uniform policy, with momentum SGD on a cosine schedule over `steps`.
template <Classifier M>
PretrainResult pretrain(const M& model, const SearchConfig& c, const Dataset& train, Rng& init_rng, BatchSampler& sampler,
                        Rng& aug_rng) {
    if (train.size() < static_cast<std::size_t>(c.train_batch_size)) {
        throw ArgumentError("pretrain: training split smaller than one batch");
    }
    const Policy uniform = uniform_policy(c.num_slots, c.transforms, c.mu_init);
    PretrainResult out;
    out.theta0 = model.init(init_rng);
    out.index_counts.assign(c.transforms.size(), 0);
    const Batch full = train.as_batch();
    out.initial_loss = model.loss(out.theta0, full);
    const int steps = c.effective_pretrain_steps();
    if (steps == 0) {
        out.final_loss = out.initial_loss;
        return out;
    }
    OptimState opt = make_optim_state(model.param_count(), c.base_lr, c.momentum, c.weight_decay, steps);
    for (int t = 0; t < steps; ++t) {
        const Batch batch = train.batch(sampler.next(static_cast<std::size_t>(c.train_batch_size)));
        InnerEstimate est = inner_grad(model, out.theta0, uniform, batch, Batch{}, aug_rng, c.n_aug, c.workers);
        for (const auto& tau : est.hb.augmentations)
            for (const Slot& s : tau.slots) ++out.index_counts[static_cast<std::size_t>(s.transform)];
        out.loss_curve.push_back(est.train_loss);
        sgd_step(out.theta0, est.g_hat, opt);
    }
    out.final_loss = model.loss(out.theta0, full);
    return out;
}

/// Builds the uniform policy and pretrains one replica per ensemble member.
template <Classifier M>
SearchState initialize_search(const M& model, const SearchConfig& c, const Splits& splits,
                              std::vector<PretrainResult>* pretrain_out = nullptr) {
    validate(c);
    detail::check_splits(c, splits);
    SearchState state;
    state.policy = uniform_policy(c.num_slots, c.transforms, c.mu_init);
    state.anchor = state.policy;
    state.velocity = PolicyGradient::zeros_like(state.policy);
    state.trace.transforms = c.transforms;
    state.trace.num_slots = c.num_slots;

    const int replicas = c.mode.ensemble_size;
    std::vector<PretrainResult> results(static_cast<std::size_t>(replicas));
    std::vector<std::optional<Replica>> built(static_cast<std::size_t>(replicas));
    const int inner_workers = replicas > 1 ? 1 : c.workers;
    SearchConfig inner_cfg = c;
    inner_cfg.workers = inner_workers;
    parallel_for(static_cast<std::size_t>(replicas), c.workers, [&](std::size_t r) {
        const std::uint64_t s = detail::replica_seed(c.seed, static_cast<int>(r));
        Rng init_rng(mix_seed(s, 1));
        BatchSampler train_sampler(splits.train.size(), mix_seed(s, 2));
        BatchSampler val_sampler(splits.val.size(), mix_seed(s, 3));
        Rng aug_rng(mix_seed(s, 4));
        results[r] = pretrain(model, inner_cfg, splits.train, init_rng, train_sampler, aug_rng);
        built[r].emplace(Replica{results[r].theta0, results[r].theta0, OptimState{}, std::move(train_sampler),
                                 std::move(val_sampler), std::move(aug_rng)});
    });
    for (auto& r : built) state.replicas.push_back(std::move(*r));
    if (pretrain_out) *pretrain_out = std::move(results);
    return state;
}

namespace detail {

/// n_total inner steps; policy steps after n_retrain. Anchor handling is the caller's.
template <Classifier M>
void run_stage(const M& model, const SearchConfig& c, const Splits& splits, SearchState& state, int n_retrain, int n_total) {
    const double lambda = c.effective_lambda();
    const std::size_t replicas = state.replicas.size();
    const int inner_workers = replicas > 1 ? 1 : c.workers;
    for (auto& r : state.replicas) {
        r.opt = make_optim_state(model.param_count(), c.base_lr, c.momentum, c.weight_decay, n_total);
    }
    std::vector<OuterEstimate> outer(replicas);
    std::vector<double> inner_losses(replicas);

    for (int j = 1; j <= n_total; ++j) {
        const bool joint = j > n_retrain;
        parallel_for(replicas, c.workers, [&](std::size_t r) {
            Replica& rep = state.replicas[r];
            Batch train = splits.train.batch(rep.train_sampler.next(static_cast<std::size_t>(c.train_batch_size)));
            Batch val = joint ? splits.val.batch(rep.val_sampler.next(static_cast<std::size_t>(c.val_batch_size))) : Batch{};
            InnerEstimate est = inner_grad(model, rep.theta, state.policy, std::move(train), std::move(val), rep.rng, c.n_aug,
                                           inner_workers);
            inner_losses[r] = est.train_loss;
            if (joint) outer[r] = outer_grad_with_stats(model, rep.theta, est.hb, c.base_lr, state.policy);
            sgd_step(rep.theta, est.g_hat, rep.opt);
        });
        if (!joint) continue;

        PolicyGradient g = outer.front().grad;
        double outer_loss = outer.front().val_loss;
        double inner_loss = inner_losses.front();
        for (std::size_t r = 1; r < replicas; ++r) {
            g += outer[r].grad;
            outer_loss += outer[r].val_loss;
            inner_loss += inner_losses[r];
        }
        g *= 1.0 / static_cast<double>(replicas);

        if (c.policy_momentum > 0.0) {
            state.velocity *= c.policy_momentum;
            state.velocity += g;
            g = state.velocity;
        }
        state.policy = outer_update(state.policy, g, state.anchor, c.alpha, lambda, c.mu_lr_divisor);

        TraceRecord rec;
        rec.step = ++state.outer_step;
        rec.round = state.round;
        rec.probs = slot_probabilities(state.policy);
        rec.mu = state.policy.mag_upper;
        rec.kl = kl_to_anchor(state.policy, state.anchor).value;
        rec.entropy = slot_entropy(state.policy);
        rec.inner_loss = inner_loss / static_cast<double>(replicas);
        rec.outer_loss = outer_loss / static_cast<double>(replicas);
        state.trace.records.push_back(std::move(rec));
    }

    const Replica& lead = state.replicas.front();
    RoundSummary summary;
    summary.round = state.round;
    summary.train_loss = model.loss(lead.theta, splits.train.as_batch());
    const Batch val = splits.val.as_batch();
    summary.val_loss = model.loss(lead.theta, val);
    const auto pred = model.predict(lead.theta, val);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == val.labels[i] ? 1 : 0;
    summary.val_accuracy = static_cast<double>(hits) / static_cast<double>(pred.size());
    state.trace.rounds.push_back(summary);
}

}  // namespace detail

/// One round: cold start (unless disabled), re-anchor, n_total inner steps with
/// a fresh cosine schedule, policy steps after n_retrain.
template <Classifier M>
void run_round(const M& model, const SearchConfig& c, const Splits& splits, SearchState& state) {
    if (state.replicas.empty()) throw ArgumentError("run_round: search state has no pretrained replicas");
    ++state.round;
    if (c.mode.cold_start) {
        for (auto& r : state.replicas) r.theta = r.theta0;
    }
    state.anchor = state.policy;
    state.velocity = PolicyGradient::zeros_like(state.policy);
    try {
        detail::run_stage(model, c, splits, state, c.n_retrain, c.n_total);
    } catch (const NumericalError& e) {
        throw SearchAborted(std::string("round ") + std::to_string(state.round) + ": " + e.what(), state.trace);
    }
}

struct SearchResult {
    Policy policy;
    PolicyTrace trace;
    std::vector<PretrainResult> pretraining;
};

/// The full search. single_stage runs one long stage anchored at the uniform
/// policy with as many policy steps as n_rounds rounds would make.
template <Classifier M>
SearchResult run_search(const M& model, const SearchConfig& c, const Splits& splits) {
    validate(c);
    if (c.n_rounds == 0) {
        PolicyTrace empty{c.transforms, c.num_slots, {}, {}};
        return SearchResult{uniform_policy(c.num_slots, c.transforms, c.mu_init), std::move(empty), {}};
    }
    SearchResult result;
    SearchState state = initialize_search(model, c, splits, &result.pretraining);
    if (c.mode.single_stage) {
        state.round = 1;
        const int joint_steps = c.n_rounds * (c.n_total - c.n_retrain);
        try {
            detail::run_stage(model, c, splits, state, c.n_retrain, c.n_retrain + joint_steps);
        } catch (const NumericalError& e) {
            throw SearchAborted(std::string("single stage: ") + e.what(), state.trace);
        }
    } else {
        for (int i = 0; i < c.n_rounds; ++i) run_round(model, c, splits, state);
    }
    result.policy = std::move(state.policy);
    result.trace = std::move(state.trace);
    return result;
}

}  // namespace augsearch
