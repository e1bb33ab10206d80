#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "augsearch/search.hpp"

namespace augsearch {
namespace {

SearchConfig small_config(std::uint64_t seed = 0) {
    SearchConfig c;
    c.seed = seed;
    c.n_rounds = 2;
    c.n_retrain = 20;
    c.n_total = 30;
    c.n_aug = 4;
    c.train_batch_size = 32;
    c.val_batch_size = 64;
    c.hidden = 16;
    return c;
}

const Splits& small_splits() {
    static const Splits s = make_synthetic_splits(SyntheticKind::RotationInvariant, 400, 100, 8, 9);
    return s;
}

Eigen::MatrixXd probs_of(const TraceRecord& r) { return r.probs; }

double kl_rows(const Eigen::MatrixXd& p, const Eigen::MatrixXd& q) {
    double v = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) v += p.data()[i] * std::log(p.data()[i] / q.data()[i]);
    return v;
}

TEST(SearchConfig, Validation) {
    SearchConfig c = small_config();
    EXPECT_NO_THROW(validate(c));
    c.n_retrain = 31;
    EXPECT_THROW(validate(c), ArgumentError);
    c = small_config();
    c.mode.ensemble_size = 0;
    EXPECT_THROW(validate(c), ArgumentError);
    c = small_config();
    c.lambda = 0.0;
    EXPECT_THROW(validate(c), ArgumentError);
    c.mode.kl_on = false;
    EXPECT_NO_THROW(validate(c));
}

TEST(SearchConfig, DefaultsKeepTheKlProduct) {
    const SearchConfig c;
    EXPECT_NEAR(c.alpha * c.lambda, 0.02, 1e-15);
    EXPECT_EQ(c.n_aug, 8);
    EXPECT_EQ(c.n_rounds, 10);
    EXPECT_EQ(c.n_retrain, 100);
    EXPECT_EQ(c.n_total, 140);
    EXPECT_EQ(c.mu_lr_divisor, 40.0);
    EXPECT_EQ(c.transforms.size(), 17u);
    EXPECT_EQ(c.effective_pretrain_steps(), 280);
}

TEST(Pretrain, ZeroStepsReturnsTheInitialization) {
    SearchConfig c = small_config();
    c.pretrain_steps = 0;
    const MlpClassifier model = make_model(c, small_splits().train);
    Rng init(1), aug(2);
    BatchSampler sampler(small_splits().train.size(), 3);
    const PretrainResult r = pretrain(model, c, small_splits().train, init, sampler, aug);
    Rng fresh(1);
    EXPECT_EQ(r.theta0, model.init(fresh));
    EXPECT_TRUE(r.loss_curve.empty());
}

TEST(Pretrain, LowersTheTrainingLossAndSamplesUniformly) {
    SearchConfig c = small_config();
    c.pretrain_steps = 500;
    const Splits s = make_synthetic_splits(SyntheticKind::RotationInvariant, 800, 100, 16, 1);
    const MlpClassifier model = make_model(c, s.train);
    Rng init(4), aug(5);
    BatchSampler sampler(s.train.size(), 6);
    const PretrainResult r = pretrain(model, c, s.train, init, sampler, aug);
    EXPECT_EQ(r.loss_curve.size(), 500u);
    EXPECT_LT(r.final_loss, r.initial_loss);

    long total = 0;
    for (long n : r.index_counts) total += n;
    EXPECT_EQ(total, 500L * c.n_aug * c.num_slots);
    const double q = 1.0 / 17.0;
    for (long n : r.index_counts) EXPECT_LE(std::abs(n - total * q), 4.0 * std::sqrt(total * q * (1.0 - q)));
}

TEST(Pretrain, RejectsTinySplits) {
    SearchConfig c = small_config();
    c.train_batch_size = 500;
    const MlpClassifier model = make_model(c, small_splits().train);
    EXPECT_THROW(run_search(model, c, small_splits()), ArgumentError);
}

TEST(RunSearch, ZeroRoundsReturnsUniform) {
    SearchConfig c = small_config();
    c.n_rounds = 0;
    const MlpClassifier model = make_model(c, small_splits().train);
    const SearchResult r = run_search(model, c, small_splits());
    EXPECT_EQ(r.policy, uniform_policy(c.num_slots, c.transforms, c.mu_init));
    EXPECT_TRUE(r.trace.records.empty());
}

TEST(RunSearch, TraceShape) {
    const SearchConfig c = small_config();
    const MlpClassifier model = make_model(c, small_splits().train);
    const SearchResult r = run_search(model, c, small_splits());
    ASSERT_EQ(r.trace.records.size(), 20u);
    ASSERT_EQ(r.trace.rounds.size(), 2u);
    for (std::size_t i = 0; i < r.trace.records.size(); ++i) {
        const TraceRecord& rec = r.trace.records[i];
        EXPECT_EQ(rec.step, static_cast<long>(i + 1));
        EXPECT_EQ(rec.round, i < 10 ? 1 : 2);
        EXPECT_EQ(rec.probs.rows(), 3);
        EXPECT_TRUE((rec.probs.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
    }
    EXPECT_EQ(r.trace.records.back().probs, slot_probabilities(r.policy));
    EXPECT_NE(r.policy, uniform_policy(c.num_slots, c.transforms, c.mu_init));
}

TEST(RunSearch, Reproducible) {
    const SearchConfig c = small_config(3);
    const MlpClassifier model = make_model(c, small_splits().train);
    const SearchResult a = run_search(model, c, small_splits());
    const SearchResult b = run_search(model, c, small_splits());
    EXPECT_EQ(a.policy, b.policy);
    std::ostringstream ta, tb;
    write_trace_csv(a.trace, ta);
    write_trace_csv(b.trace, tb);
    EXPECT_EQ(ta.str(), tb.str());
}

TEST(RunSearch, WorkerCountDoesNotChangeResults) {
    SearchConfig c = small_config(4);
    const MlpClassifier model = make_model(c, small_splits().train);
    const SearchResult a = run_search(model, c, small_splits());
    c.workers = 3;
    EXPECT_EQ(run_search(model, c, small_splits()).policy, a.policy);
}

TEST(RunSearch, SingleReplicaEnsembleIsThePlainSearch) {
    SearchConfig c = small_config(5);
    const MlpClassifier model = make_model(c, small_splits().train);
    c.mode.ensemble_size = 1;
    const SearchResult a = run_search(model, c, small_splits());
    c.mode.ensemble_size = 2;
    const SearchResult b = run_search(model, c, small_splits());
    EXPECT_EQ(b.pretraining.size(), 2u);
    EXPECT_NE(a.policy, b.policy);
    EXPECT_EQ(b.pretraining.front().theta0, a.pretraining.front().theta0);
}

TEST(RunRound, ZeroAlphaFreezesThePolicy) {
    SearchConfig c = small_config();
    c.alpha = 0.0;
    c.mode.kl_on = false;
    const MlpClassifier model = make_model(c, small_splits().train);
    SearchState state = initialize_search(model, c, small_splits());
    const Policy before = state.policy;
    run_round(model, c, small_splits(), state);
    EXPECT_EQ(state.policy, before);
}

TEST(RunRound, KlTermVanishesOnTheFirstStep) {
    SearchConfig with = small_config(6);
    with.n_rounds = 1;
    with.n_total = with.n_retrain + 1;
    with.lambda = 5.0;
    SearchConfig without = with;
    without.mode.kl_on = false;
    const MlpClassifier model = make_model(with, small_splits().train);
    EXPECT_EQ(run_search(model, with, small_splits()).policy, run_search(model, without, small_splits()).policy);
}

TEST(RunRound, ColdStartRestoresThetaZero) {
    const SearchConfig c = small_config(7);
    const MlpClassifier model = make_model(c, small_splits().train);
    SearchState state = initialize_search(model, c, small_splits());
    run_round(model, c, small_splits(), state);
    EXPECT_NE(state.replicas[0].theta, state.replicas[0].theta0);
    SearchState scrambled = state;
    scrambled.replicas[0].theta.setConstant(3.0);
    run_round(model, c, small_splits(), state);
    run_round(model, c, small_splits(), scrambled);
    EXPECT_EQ(state.policy, scrambled.policy);

    SearchConfig warm = c;
    warm.mode.cold_start = false;
    SearchState w1 = initialize_search(model, warm, small_splits());
    run_round(model, warm, small_splits(), w1);
    SearchState w2 = w1;
    w2.replicas[0].theta.setConstant(3.0);
    run_round(model, warm, small_splits(), w1);
    run_round(model, warm, small_splits(), w2);
    EXPECT_NE(w1.policy, w2.policy);
}

TEST(RunRound, KlIsMeasuredAgainstTheRoundStartPolicy) {
    const SearchConfig c = small_config(8);
    const MlpClassifier model = make_model(c, small_splits().train);
    const SearchResult r = run_search(model, c, small_splits());
    Eigen::MatrixXd anchor = slot_probabilities(uniform_policy(c.num_slots, c.transforms));
    int round = 1;
    for (const TraceRecord& rec : r.trace.records) {
        if (rec.round != round) {
            round = rec.round;
            anchor = probs_of(r.trace.records[static_cast<std::size_t>(rec.step - 2)]);
        }
        EXPECT_NEAR(rec.kl, kl_rows(rec.probs, anchor), 1e-10);
    }
}

TEST(RunSearch, SingleStageAnchorsAtUniform) {
    SearchConfig c = small_config(9);
    c.mode.single_stage = true;
    const MlpClassifier model = make_model(c, small_splits().train);
    const SearchResult r = run_search(model, c, small_splits());
    ASSERT_EQ(r.trace.records.size(), 20u);
    ASSERT_EQ(r.trace.rounds.size(), 1u);
    const double log_n = std::log(17.0);
    for (const TraceRecord& rec : r.trace.records) {
        EXPECT_EQ(rec.round, 1);
        // KL to uniform is log N minus the entropy, summed over slots.
        EXPECT_NEAR(rec.kl, c.num_slots * log_n - rec.entropy.sum(), 1e-10);
    }
}

TEST(RunSearch, KlKeepsRoundsCloserToTheirAnchors) {
    SearchConfig with = small_config(10);
    with.n_rounds = 3;
    SearchConfig without = with;
    without.mode.kl_on = false;
    const MlpClassifier model = make_model(with, small_splits().train);
    const SearchResult a = run_search(model, with, small_splits());
    const SearchResult b = run_search(model, without, small_splits());
    // Same first step, so the two runs start moving identically.
    EXPECT_EQ(a.trace.records.front().probs, b.trace.records.front().probs);
    double kl_with = 0.0, kl_without = 0.0;
    for (std::size_t i = 0; i < a.trace.records.size(); ++i) {
        if (i + 1 == a.trace.records.size() || a.trace.records[i + 1].round != a.trace.records[i].round) {
            kl_with += a.trace.records[i].kl;
            kl_without += b.trace.records[i].kl;
        }
    }
    EXPECT_LT(kl_with, kl_without);
}

TEST(RunSearch, NumericalFailureAbortsWithTheTrace) {
    SearchConfig c = small_config(11);
    c.alpha = std::numeric_limits<double>::infinity();
    c.mode.kl_on = false;
    const MlpClassifier model = make_model(c, small_splits().train);
    try {
        run_search(model, c, small_splits());
        FAIL() << "expected an abort";
    } catch (const SearchAborted& e) {
        EXPECT_EQ(e.trace().num_slots, c.num_slots);
        EXPECT_NE(std::string(e.what()).find("round 1"), std::string::npos);
    }
}

TEST(TraceCsv, HeaderAndRowWidth) {
    SearchConfig c = small_config();
    c.n_rounds = 1;
    c.transforms = {TransformId::Identity, TransformId::Rotate};
    c.num_slots = 2;
    const MlpClassifier model = make_model(c, small_splits().train);
    const SearchResult r = run_search(model, c, small_splits());
    std::ostringstream out;
    write_trace_csv(r.trace, out);
    std::istringstream in(out.str());
    std::string header, row;
    std::getline(in, header);
    EXPECT_EQ(header,
              "step,round,inner_loss,outer_loss,kl,entropy_0,entropy_1,p0_Identity,p0_Rotate,p1_Identity,p1_Rotate,mu_Identity,"
              "mu_Rotate");
    int rows = 0;
    while (std::getline(in, row)) {
        ++rows;
        EXPECT_EQ(std::count(row.begin(), row.end(), ','), std::count(header.begin(), header.end(), ','));
    }
    EXPECT_EQ(rows, 10);
    std::ostringstream rounds;
    write_rounds_csv(r.trace, rounds);
    EXPECT_EQ(rounds.str().substr(0, 38), "round,train_loss,val_loss,val_accuracy");
}

}  // namespace
}  // namespace augsearch
