#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "grudw/pipeline.hpp"
#include "grudw/synthetic.hpp"
#include "grudw/training.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace grudw;

namespace {

struct SmallSet {
    std::vector<PatientRecord> records;
    std::vector<EncodedSequence> seqs;
    std::vector<TrainingTarget> targets;
    Norms norms;
};

SmallSet small_set(std::size_t n, std::uint64_t seed, bool uncensored_only = false) {
    auto cfg = SyntheticConfig::standard();
    cfg.n = uncensored_only ? 4 * n : n;
    auto cohort = generate_synthetic_cohort(cfg, seed);
    SmallSet s;
    for (auto& r : cohort.records) {
        if (uncensored_only && !r.event) continue;
        if (r.followup_end < 30) continue;
        s.records.push_back(r);
        if (s.records.size() == n) break;
    }
    const auto roster = FeatureRoster::standard();
    const auto grid = build_grid();
    s.norms = compute_norms(s.records, roster);
    for (const auto& r : s.records) {
        s.seqs.push_back(encode(r, grid, roster, s.norms));
        s.targets.push_back(build_target(r, grid, r.event ? std::nullopt : std::optional<double>(3.0)));
    }
    return s;
}

TrainConfig quick_config(std::uint64_t seed) {
    TrainConfig c;
    c.hidden = 6;
    c.epochs = 4;
    c.batch_size = 8;
    c.learning_rate = 0.01;
    c.seed = seed;
    c.early_stop_mode = EarlyStopMode::report;
    return c;
}

}  // namespace

TEST(Targets, UncensoredRemainingTime) {
    const auto grid = build_grid();
    const auto r = testutil::bare_record("u", 365, true);
    const auto t = build_target(r, grid, std::nullopt);
    const auto k0 = *grid.step_of_day(0);
    EXPECT_EQ(t.steps(), grid.steps_before(365));
    EXPECT_NEAR(t.tau[k0], 365 / kDaysPerYear, 1e-15);
    EXPECT_NEAR(build_target(testutil::bare_record("v", 366, true), grid, {}).tau[k0], 366 / 365.25, 1e-15);
    EXPECT_EQ(t.weight, 1.0);
    EXPECT_FALSE(t.censored);
    EXPECT_FALSE(t.bg_total.has_value());
}

TEST(Targets, YearAtIndexIsOneYear) {
    const auto grid = build_grid();
    const auto t = build_target(testutil::bare_record("u", 365, true), grid, std::nullopt);
    EXPECT_NEAR(t.tau[*grid.step_of_day(0)], 1.0, 1e-3);
}

TEST(Targets, BestGuessAndTruncation) {
    EXPECT_NEAR(best_guess(WeibullParams(1.0, 3.0), 2.0), 5.0, 1e-12);
    const auto grid = build_grid();
    const auto a = build_target(testutil::bare_record("c", 731, false), grid, 3.0);
    ASSERT_TRUE(a.bg_total.has_value());
    EXPECT_EQ(*a.bg_total, 5.0);
    const auto b = build_target(testutil::bare_record("d", 1461, false), grid, 3.0);
    EXPECT_EQ(*b.bg_total, 5.0);
    const auto c = build_target(testutil::bare_record("e", 365, false), grid, 2.0);
    EXPECT_NEAR(*c.bg_total, 365 / kDaysPerYear + 2.0, 1e-12);
    EXPECT_THROW(build_target(testutil::bare_record("f", 365, false), grid, std::nullopt), DataError);
    EXPECT_THROW(build_target(testutil::bare_record("f", 365, false), grid, 0.0), DataError);
}

TEST(Targets, DecreaseByGridGap) {
    const auto grid = build_grid();
    for (const auto& t : {build_target(testutil::bare_record("u", 1500, true), grid, {}),
                          build_target(testutil::bare_record("c", 1500, false), grid, 0.5)}) {
        for (std::size_t k = 1; k < t.steps(); ++k) {
            if (t.tau[k] <= 1.0 / kDaysPerYear) continue;
            EXPECT_NEAR(t.tau[k - 1] - t.tau[k], grid.gap(k) / kDaysPerYear, 1e-12) << k;
        }
        EXPECT_GE(*std::min_element(t.tau.begin(), t.tau.end()), 1.0 / kDaysPerYear);
    }
}

TEST(Targets, WeightRule) {
    EXPECT_EQ(censoring_weight(5.0), 1.0);
    EXPECT_EQ(censoring_weight(0.5), 0.1);
    EXPECT_EQ(censoring_weight(2.5), 0.5);
    EXPECT_EQ(censoring_weight(7.0), 1.0);
    EXPECT_NEAR(patient_weight(testutil::bare_record("c", 913, false)), 913 / kDaysPerYear / 5.0, 1e-15);
    EXPECT_EQ(patient_weight(testutil::bare_record("u", 10, true)), 1.0);
}

TEST(BatchLoss, SingleStepEqualsCompositeLoss) {
    auto s = small_set(3, 1);
    const auto p = init_parameters(19, 5, 2, 2.0);
    auto seq = s.seqs[0];
    seq.valid_steps = 1;
    TrainingTarget tgt;
    tgt.tau = {1.7};
    const auto bl = batch_loss(p, {seq}, {tgt}, {0});
    const auto out = forward(p, seq).outputs[0];
    EXPECT_DOUBLE_EQ(bl.mean, composite_loss(out, 1.7).total);
    EXPECT_EQ(bl.steps, 1u);
}

TEST(BatchLoss, DuplicatePatientLeavesMeanUnchanged) {
    auto s = small_set(4, 2);
    const auto p = init_parameters(19, 5, 3, 2.0);
    const auto one = batch_loss(p, s.seqs, s.targets, {1});
    const auto two = batch_loss(p, s.seqs, s.targets, {1, 1});
    EXPECT_NEAR(one.mean, two.mean, 1e-14 * std::abs(one.mean));
    EXPECT_EQ(two.steps, 2 * one.steps);
}

TEST(BatchLoss, CensoredWeightScalesContribution) {
    const auto grid = build_grid();
    const auto roster = FeatureRoster::standard();
    auto r = testutil::bare_record("c", 913, false);  // 2.5 years
    r.observations.push_back({-30, "egfr", 20.0});
    const auto norms = compute_norms({r}, roster);
    const auto seq = encode(r, grid, roster, norms);
    auto tgt = build_target(r, grid, 3.0);
    EXPECT_NEAR(tgt.weight, 0.5, 1e-3);
    const auto p = init_parameters(19, 5, 4, 2.0);
    const double weighted = batch_loss(p, {seq}, {tgt}, {0}).mean;
    tgt.weight = 1.0;
    const double unweighted = batch_loss(p, {seq}, {tgt}, {0}).mean;
    EXPECT_NEAR(weighted, patient_weight(r) * unweighted, 1e-12);
}

TEST(BatchLoss, GradientMatchesFiniteDifferences) {
    auto s = small_set(3, 5);
    for (auto& seq : s.seqs) seq.valid_steps = std::min<std::size_t>(seq.valid_steps, 25);
    for (auto& t : s.targets) t.tau.resize(std::min<std::size_t>(t.tau.size(), 25));
    auto p = init_parameters(19, 6, 6, 2.0);
    Rng rng(7);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.flat()(i) += rng.normal(0.0, 0.2);
    for (Eigen::Index d = 0; d < 19; ++d) p.input_decay_w()(d) = 0.5 + std::abs(p.input_decay_w()(d));
    for (Eigen::Index i = 0; i < 6; ++i) p.hidden_decay_w()(i) = 0.5 + std::abs(p.hidden_decay_w()(i));
    const std::vector<std::size_t> batch{0, 1, 2};
    auto grad = p.zeros_like();
    batch_loss(p, s.seqs, s.targets, batch, &grad);
    for (int i = 0; i < 40; ++i) {
        const auto k = Eigen::Index(rng.below(std::uint64_t(p.size())));
        auto q = p;
        const double fd = oracle::central_diff(
            [&](double v) {
                q.flat()(k) = v;
                return batch_loss(q, s.seqs, s.targets, batch).mean;
            },
            p.flat()(k), 1e-6);
        const double an = grad.flat()(k);
        EXPECT_LE(std::abs(an - fd), 1e-4 * std::max(std::abs(an), std::abs(fd)) + 1e-9) << k;
    }
}

TEST(BatchLoss, IgnoresObservationsAfterEvent) {
    const auto grid = build_grid();
    const auto roster = FeatureRoster::standard();
    auto r = testutil::bare_record("u", 400, true);
    r.observations.push_back({-30, "egfr", 20.0});
    const auto norms = compute_norms({r}, roster);
    auto later = r;
    later.observations.push_back({400, "egfr", 5.0});
    later.observations.push_back({700, "sbp", 190.0});
    later.diagnoses.push_back({401, "chf"});
    const auto p = init_parameters(19, 5, 8, 2.0);
    const auto tgt = build_target(r, grid, {});
    const double a = batch_loss(p, {encode(r, grid, roster, norms)}, {tgt}, {0}).mean;
    const double b = batch_loss(p, {encode(later, grid, roster, norms)}, {tgt}, {0}).mean;
    EXPECT_EQ(a, b);
}

TEST(BatchLoss, NonFiniteTermsAreClippedAndCounted) {
    auto s = small_set(2, 9);
    auto p = init_parameters(19, 5, 10, 2.0);
    p.head_b() << 400.0, -10.0;  // kappa ~ 400, lambda ~ 1e-3: (tau / lambda)^kappa overflows
    const auto bl = batch_loss(p, s.seqs, s.targets, {0, 1});
    EXPECT_GT(bl.clipped, 0u);
    EXPECT_TRUE(std::isfinite(bl.mean));
}

TEST(Train, DeterministicLossCurve) {
    auto s = small_set(30, 11);
    std::vector<EncodedSequence> tr(s.seqs.begin(), s.seqs.begin() + 20), va(s.seqs.begin() + 20, s.seqs.end());
    std::vector<TrainingTarget> tt(s.targets.begin(), s.targets.begin() + 20), vt(s.targets.begin() + 20, s.targets.end());
    const auto a = train_model(tr, tt, va, vt, quick_config(3));
    const auto b = train_model(tr, tt, va, vt, quick_config(3));
    ASSERT_EQ(a.curve.size(), b.curve.size());
    for (std::size_t i = 0; i < a.curve.size(); ++i) {
        EXPECT_EQ(a.curve[i].train_loss, b.curve[i].train_loss);
        EXPECT_EQ(a.curve[i].val_loss, b.curve[i].val_loss);
    }
    EXPECT_EQ(a.params.flat(), b.params.flat());
    const auto c = train_model(tr, tt, va, vt, quick_config(4));
    EXPECT_NE(a.curve.back().train_loss, c.curve.back().train_loss);
}

TEST(Train, LossDecreases) {
    auto s = small_set(24, 12, true);
    auto cfg = quick_config(5);
    cfg.epochs = 30;
    const auto out = train_model(s.seqs, s.targets, {}, {}, cfg);
    EXPECT_LT(out.curve.back().train_loss, 0.8 * out.curve.front().train_loss);
    EXPECT_EQ(out.best_epoch, 30);
    EXPECT_EQ(out.params.flat(), out.params.flat());
}

TEST(Train, ReturnsBestValidationParameters) {
    auto s = small_set(40, 13);
    std::vector<EncodedSequence> tr(s.seqs.begin(), s.seqs.begin() + 30), va(s.seqs.begin() + 30, s.seqs.end());
    std::vector<TrainingTarget> tt(s.targets.begin(), s.targets.begin() + 30), vt(s.targets.begin() + 30, s.targets.end());
    auto cfg = quick_config(6);
    cfg.epochs = 25;
    cfg.learning_rate = 0.03;
    const auto out = train_model(tr, tt, va, vt, cfg);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& r : out.curve) best = std::min(best, r.val_loss);
    const double returned = batch_loss(out.params, va, vt, all_indices(va.size())).mean;
    EXPECT_EQ(returned, best);
    EXPECT_EQ(out.curve[std::size_t(out.best_epoch - 1)].val_loss, best);
}

TEST(Train, StopsAfterTwoEpochsOverGap) {
    auto s = small_set(30, 14);
    std::vector<EncodedSequence> tr(s.seqs.begin(), s.seqs.begin() + 20), va(s.seqs.begin() + 20, s.seqs.end());
    std::vector<TrainingTarget> tt(s.targets.begin(), s.targets.begin() + 20), vt(s.targets.begin() + 20, s.targets.end());
    // Validation targets far from anything seen in training.
    for (auto& t : vt) {
        for (auto& v : t.tau) v *= 40.0;
    }
    auto cfg = quick_config(7);
    cfg.epochs = 10;
    cfg.early_stop_mode = EarlyStopMode::stop;
    const auto out = train_model(tr, tt, va, vt, cfg);
    EXPECT_TRUE(out.early_stopped);
    ASSERT_EQ(out.curve.size(), 2u);
    EXPECT_TRUE(out.curve[0].gap_exceeded);
    EXPECT_TRUE(out.curve[1].stopped);

    cfg.early_stop_mode = EarlyStopMode::report;
    const auto rep = train_model(tr, tt, va, vt, cfg);
    EXPECT_FALSE(rep.early_stopped);
    EXPECT_EQ(rep.curve.size(), 10u);
    EXPECT_TRUE(rep.curve[5].gap_exceeded);
}

TEST(Train, FixedKappaBand) {
    auto s = small_set(20, 15);
    auto cfg = quick_config(8);
    cfg.fixed_kappa = FixedKappa{3.25, 0.1};
    cfg.learning_rate = 0.05;
    const auto out = train_model(s.seqs, s.targets, {}, {}, cfg);
    for (const auto& seq : s.seqs) {
        for (const auto& w : forward(out.params, seq).outputs) {
            EXPECT_GE(w.kappa(), 3.15);
            EXPECT_LE(w.kappa(), 3.35);
        }
    }
}

TEST(Train, DivergenceAborts) {
    auto s = small_set(10, 16);
    auto cfg = quick_config(9);
    cfg.divergence_threshold = 1e-3;
    EXPECT_THROW(train_model(s.seqs, s.targets, {}, {}, cfg), NumericalError);
}

TEST(Train, LossCurveCsv) {
    TrainOutcome o;
    o.curve.push_back({1, 2.5, 3.0, false, false});
    o.curve.push_back({2, 2.0, NAN, false, true});
    const auto csv = loss_curve_csv({{3, o}});
    EXPECT_EQ(csv, "fold,epoch,train_loss,val_loss,stopped\n3,1,2.5,3,0\n3,2,2,,1\n");
}

TEST(Config, TextRoundTripAndRejections) {
    TrainConfig c;
    c.learning_rate = 0.0031;
    c.seed = 12345678901ULL;
    c.fixed_kappa = FixedKappa{3.25, 0.1};
    c.early_stop_mode = EarlyStopMode::report;
    std::istringstream in(to_text(c));
    TrainConfig back;
    for (const auto& [k, v] : parse_key_values(in, "mem")) back.set(k, v);
    EXPECT_EQ(back, c);
    TrainConfig d;
    EXPECT_THROW(d.set("learning_rat", "0.1"), DataError);
    EXPECT_THROW(d.set("epochs", "1.5"), DataError);
    d.early_stop_gap = 1.5;
    EXPECT_THROW(d.validate(), DataError);
    TrainConfig e;
    e.dropout = 0.2;
    EXPECT_THROW(e.validate(), DataError);
    std::istringstream bad("epochs 3\n");
    EXPECT_THROW(parse_key_values(bad, "mem"), DataError);
}

namespace {

Checkpoint stream_checkpoint() {
    Checkpoint ck;
    ck.params = init_parameters(19, 6, 21, 3.0);
    Rng rng(22);
    for (Eigen::Index i = 0; i < ck.params.size(); ++i) ck.params.flat()(i) += rng.normal(0.0, 0.2);
    ck.meta.roster = FeatureRoster::standard();
    ck.meta.grid = build_grid();
    ck.meta.norms.raw.assign(19, {0.0, 1.0});
    ck.meta.norms.raw[0] = {22.0, 5.0};
    ck.meta.norms.empirical_means.assign(19, 0.0);
    return ck;
}

}  // namespace

TEST(Stream, SurvivalAcrossHorizons) {
    const auto ck = stream_checkpoint();
    auto r = testutil::bare_record("s", 0, false);
    r.observations.push_back({-200, "egfr", 25.0});
    r.observations.push_back({40, "egfr", 19.0});
    const auto pred = predict_stream(ck, r, {1, 3, 5});
    ASSERT_EQ(pred.survival.size(), 3u);
    EXPECT_GE(pred.survival[0], pred.survival[1]);
    EXPECT_GE(pred.survival[1], pred.survival[2]);
    EXPECT_EQ(pred.pmst, summaries(pred.params).median);
    EXPECT_EQ(pred.step, *ck.meta.grid.step_of_day(40));
    EXPECT_EQ(pred.day, 40);
}

TEST(Stream, NewObservationOnlyAffectsLaterSteps) {
    const auto ck = stream_checkpoint();
    auto r = testutil::bare_record("s", 0, false);
    r.observations.push_back({-200, "egfr", 25.0});
    r.observations.push_back({40, "egfr", 19.0});
    auto more = r;
    more.observations.push_back({100, "sbp", 170.0});
    const auto& grid = ck.meta.grid;
    auto open = [&](PatientRecord x) {
        x.followup_end = grid.days().back() + 1;
        return encode(x, grid, ck.meta.roster, ck.meta.norms);
    };
    const auto before = forward(ck.params, open(r)).outputs;
    const auto after = forward(ck.params, open(more)).outputs;
    const auto k = *grid.step_of_day(100);
    for (std::size_t t = 0; t < k; ++t) EXPECT_EQ(before[t], after[t]) << t;
    EXPECT_NE(before[k], after[k]);
    // The streaming call sees the new step.
    EXPECT_EQ(predict_stream(ck, more, {1}).params, after[k]);
}

TEST(Stream, RejectsObservationBeyondGrid) {
    const auto ck = stream_checkpoint();
    auto r = testutil::bare_record("s", 0, false);
    r.observations.push_back({1900, "egfr", 25.0});
    EXPECT_THROW(predict_stream(ck, r, {1}), DataError);
    auto empty = testutil::bare_record("e", 0, false);
    EXPECT_THROW(predict_stream(ck, empty, {1}), DataError);
}
