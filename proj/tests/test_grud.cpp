#include <cmath>
#include <cstring>
#include <numbers>
#include <string>

#include <gtest/gtest.h>

#include "grudw/checkpoint.hpp"
#include "grudw/grud.hpp"
#include "grudw/optim.hpp"
#include "grudw/random.hpp"
#include "grudw/weibull.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace grudw;
using namespace fixture;

namespace {

void expect_gradient_matches(const GrudParameters& p, const EncodedSequence& s, int n_coords, double tol,
                             std::uint64_t seed) {
    const auto tau = targets_for(Eigen::Index(s.valid_steps));
    const auto grad = sequence_gradient(p, s, tau);
    Rng rng(seed);
    for (int i = 0; i < n_coords; ++i) {
        const auto k = Eigen::Index(rng.below(std::uint64_t(p.size())));
        auto q = p;
        const double h = 1e-6;
        const double fd = oracle::central_diff(
            [&](double v) {
                q.flat()(k) = v;
                return sequence_loss(q, s, tau);
            },
            p.flat()(k), h);
        const double an = grad.flat()(k);
        EXPECT_LE(std::abs(an - fd), tol * std::max(std::abs(an), std::abs(fd)) + 1e-8)
            << "coordinate " << k << " analytic " << an << " numeric " << fd;
    }
}

}  // namespace

TEST(GrudInit, DeterministicAndShaped) {
    const auto a = init_parameters(19, 40, 5);
    const auto b = init_parameters(19, 40, 5);
    EXPECT_EQ(a.flat(), b.flat());
    EXPECT_NE(a.flat(), init_parameters(19, 40, 6).flat());
    const double limit = std::sqrt(6.0 / double(2 * 19 + 40 + 40));
    EXPECT_LE(a.update_w().cwiseAbs().maxCoeff(), limit);
    EXPECT_GT(a.update_w().cwiseAbs().maxCoeff(), 0.9 * limit);
    EXPECT_EQ(a.input_decay_w().cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(a.hidden_decay_b().cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(a.size(), 19 + 19 + 40 + 40 + 3 * (40 * (2 * 19 + 40) + 40) + 2 * 40 + 2);
}

TEST(GrudInit, ZeroDecayGivesFullTrust) {
    const auto p = init_parameters(3, 4, 1);
    const auto d = decay(Eigen::Vector3d(0, 45, 9000), 30.0, p);
    EXPECT_EQ(d.gamma_x, Eigen::Vector3d::Ones());
    EXPECT_EQ(d.gamma_h, Eigen::VectorXd::Ones(4));
}

TEST(GrudInit, InitialOutputsTargetBias) {
    const auto p = init_parameters(19, 40, 3, 2.7);
    EncodedSequence s = random_sequence(19, 110, 4);
    s.x.setZero();
    const auto tr = forward(p, s);
    ASSERT_EQ(tr.outputs.size(), 110u);
    for (const auto& w : tr.outputs) {
        EXPECT_NEAR(w.kappa(), 1.0, 0.2);
        EXPECT_NEAR(w.lambda(), 2.7, 1e-12);
    }
}

TEST(GrudDecay, Examples) {
    GrudParameters p(1, 1);
    p.input_decay_w()(0) = 1.0;
    auto d = decay(Eigen::VectorXd::Zero(1), 0.0, p);
    EXPECT_EQ(d.gamma_x(0), 1.0);
    d = decay(Eigen::VectorXd::Constant(1, 1e6), 0.0, p);
    EXPECT_LT(d.gamma_x(0), 1e-300);
    p.input_decay_w()(0) = 2.0;
    p.input_decay_b()(0) = -1.0;
    p.hidden_decay_w()(0) = 2.0;
    p.hidden_decay_b()(0) = -1.0;
    d = decay(Eigen::VectorXd::Constant(1, kDaysPerYear), kDaysPerYear, p);
    EXPECT_NEAR(d.gamma_x(0), std::exp(-1.0), 1e-15);
    EXPECT_NEAR(d.gamma_h(0), std::exp(-1.0), 1e-15);
}

TEST(GrudDecay, MonotoneInGapForNonnegativeWeights) {
    auto p = random_parameters(6, 3, 9);
    Eigen::VectorXd delta = Eigen::VectorXd::Constant(6, 30.0);
    const auto base = decay(delta, 30.0, p).gamma_x;
    for (Eigen::Index d = 0; d < 6; ++d) {
        for (double extra : {1.0, 15.0, 400.0}) {
            Eigen::VectorXd more = delta;
            more(d) += extra;
            EXPECT_LE(decay(more, 30.0, p).gamma_x(d), base(d));
        }
    }
}

TEST(GrudImpute, Examples) {
    Eigen::Vector3d x(1.5, 9.0, 9.0), m(1, 0, 0), gamma(0.3, 1.0, 0.0), mean(0.1, 0.2, 0.3);
    Eigen::VectorXd last = Eigen::Vector3d(7.0, 4.0, 5.0);
    const auto x_hat = impute(x, m, gamma, last, mean);
    EXPECT_EQ(x_hat(0), 1.5);
    EXPECT_EQ(x_hat(1), 4.0);
    EXPECT_EQ(x_hat(2), 0.3);
    EXPECT_EQ(last(0), 1.5);
    EXPECT_EQ(last(1), 4.0);
    // Partial decay blends the two.
    Eigen::VectorXd last2 = Eigen::VectorXd::Constant(1, 2.0);
    const auto blend = impute(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1), Eigen::VectorXd::Constant(1, 0.25),
                              last2, Eigen::VectorXd::Constant(1, 1.0));
    EXPECT_DOUBLE_EQ(blend(0), 0.25 * 2.0 + 0.75 * 1.0);
}

TEST(GrudCell, ZeroWeights) {
    GrudParameters p(2, 3);
    const Eigen::Vector3d h_prev(0.4, -0.2, 0.9), gamma_h(1.0, 0.5, 0.1);
    const auto s = cell_step(p, Eigen::Vector2d(3, 4), Eigen::Vector2d(1, 0), h_prev, gamma_h);
    for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(s.h(i), 0.5 * gamma_h(i) * h_prev(i));
}

TEST(GrudCell, NoDecayIsPlainGatedStep) {
    const auto p = random_parameters(3, 4, 12);
    Rng rng(2);
    Eigen::VectorXd x(3), m = Eigen::VectorXd::Ones(3), h(4);
    for (int i = 0; i < 3; ++i) x(i) = rng.normal();
    for (int i = 0; i < 4; ++i) h(i) = rng.uniform(-0.9, 0.9);
    const auto s = cell_step(p, x, m, h, Eigen::VectorXd::Ones(4));
    Eigen::VectorXd u(10);
    u << x, h, m;
    auto sig = [](const Eigen::VectorXd& v) { return Eigen::VectorXd((1.0 / (1.0 + (-v.array()).exp())).matrix()); };
    const Eigen::VectorXd z = sig(p.update_w() * u + p.update_b());
    const Eigen::VectorXd r = sig(p.reset_w() * u + p.reset_b());
    Eigen::VectorXd uc = u;
    uc.segment(3, 4) = r.cwiseProduct(h);
    const Eigen::VectorXd c = (p.candidate_w() * uc + p.candidate_b()).array().tanh();
    const Eigen::VectorXd expect = (Eigen::VectorXd::Ones(4) - z).cwiseProduct(h) + z.cwiseProduct(c);
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(s.h(i), expect(i), 1e-15);
    EXPECT_LT(s.h.cwiseAbs().maxCoeff(), 1.0);
}

TEST(GrudCell, OneStepGradientMatchesFiniteDifferences) {
    const auto p = random_parameters(4, 5, 31);
    const auto s = random_sequence(4, 1, 32, 0.6);
    expect_gradient_matches(p, s, 60, 1e-5, 33);
}

TEST(GrudHead, SoftplusFloor) {
    GrudParameters p(1, 1);
    const Eigen::VectorXd h = Eigen::VectorXd::Zero(1);
    auto w = output_head(h, p);
    EXPECT_NEAR(w.kappa(), std::numbers::ln2 + 1e-3, 1e-15);
    EXPECT_NEAR(w.lambda(), std::numbers::ln2 + 1e-3, 1e-15);
    p.head_b() << -50.0, -50.0;
    w = output_head(h, p);
    EXPECT_GT(w.kappa(), 0.0);
    EXPECT_NEAR(w.kappa(), 1e-3, 1e-15);
    p.head_b() << 50.0, 50.0;
    w = output_head(h, p);
    EXPECT_NEAR(w.lambda(), 50.0 + 1e-3, 1e-12);
}

TEST(GrudHead, FixedKappaStaysInBand) {
    auto p = random_parameters(4, 5, 40);
    p.fixed_kappa = FixedKappa{};
    p.head_w() *= 50.0;
    const auto s = random_sequence(4, 40, 41);
    for (const auto& w : forward(p, s).outputs) {
        EXPECT_GE(w.kappa(), 3.15 - 1e-12);
        EXPECT_LE(w.kappa(), 3.35 + 1e-12);
    }
}

TEST(GrudForward, FullGridShape) {
    const auto p = init_parameters(19, 40, 7);
    const auto roster = FeatureRoster::standard();
    const auto grid = build_grid();
    auto r = testutil::bare_record("x", 2000, false);
    r.observations.push_back({10, "egfr", 20.0});
    Norms norms;
    norms.raw.assign(19, {0.0, 1.0});
    norms.empirical_means.assign(19, 0.0);
    const auto seq = encode(r, grid, roster, norms);
    const auto tr = forward(p, seq);
    EXPECT_EQ(tr.outputs.size(), 110u);
    for (const auto& w : tr.outputs) {
        EXPECT_GT(w.kappa(), 0.0);
        EXPECT_GT(w.lambda(), 0.0);
    }
    EXPECT_EQ(forward(p, seq, false, 12).outputs.size(), 12u);
}

TEST(GrudForward, MaskedValuesAreIgnored) {
    const auto p = random_parameters(5, 6, 50);
    auto s = random_sequence(5, 30, 51);
    const auto before = forward(p, s).outputs;
    Rng rng(3);
    for (Eigen::Index t = 0; t < s.x.cols(); ++t) {
        for (Eigen::Index d = 0; d < s.x.rows(); ++d) {
            if (s.m(d, t) < 0.5) s.x(d, t) = rng.normal(0.0, 100.0);
        }
    }
    EXPECT_EQ(forward(p, s).outputs, before);
}

TEST(GrudForward, Deterministic) {
    const auto p = random_parameters(5, 6, 52);
    const auto s = random_sequence(5, 30, 53);
    EXPECT_EQ(forward(p, s).outputs, forward(p, s).outputs);
}

TEST(GrudForward, OutputsStayAboveFloor) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto p = random_parameters(5, 6, 100 + seed);
        p.head_w() *= 30.0;
        p.head_b() << -20.0, -20.0;
        auto s = random_sequence(5, 20, 200 + seed);
        s.x *= 50.0;
        for (const auto& w : forward(p, s).outputs) {
            EXPECT_GE(w.kappa(), 1e-3);
            EXPECT_GE(w.lambda(), 1e-3);
        }
    }
}

TEST(GrudForward, NonFiniteActivationNamesTimestep) {
    const auto p = random_parameters(3, 4, 60);
    auto s = random_sequence(3, 10, 61);
    s.m(1, 6) = 1.0;
    s.x(1, 6) = std::numeric_limits<double>::quiet_NaN();
    try {
        forward(p, s);
        FAIL() << "expected NumericalError";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("timestep 6"), std::string::npos) << e.what();
    }
}

TEST(GrudBackward, TenStepSequenceMatchesFiniteDifferences) {
    const auto p = random_parameters(6, 8, 70);
    const auto s = random_sequence(6, 10, 71);
    expect_gradient_matches(p, s, 40, 1e-4, 72);
}

TEST(GrudBackward, EveryTensorIsCovered) {
    const auto p = random_parameters(3, 4, 80);
    const auto s = random_sequence(3, 10, 81);
    const auto tau = targets_for(10);
    const auto grad = sequence_gradient(p, s, tau);
    for (const auto& info : p.layout()) {
        for (Eigen::Index j = 0; j < std::min<Eigen::Index>(3, info.rows * info.cols); ++j) {
            const auto k = info.offset + j;
            auto q = p;
            const double fd = oracle::central_diff(
                [&](double v) {
                    q.flat()(k) = v;
                    return sequence_loss(q, s, tau);
                },
                p.flat()(k), 1e-6);
            EXPECT_LE(std::abs(grad.flat()(k) - fd), 1e-4 * std::max(std::abs(fd), std::abs(grad.flat()(k))) + 1e-8)
                << info.name << "[" << j << "]";
        }
    }
}

TEST(GrudBackward, FullGridSequence) {
    const auto p = random_parameters(19, 40, 90);
    const auto s = random_sequence(19, 110, 91, 0.2);
    auto tau = std::vector<double>(110);
    for (std::size_t t = 0; t < 110; ++t) tau[t] = 6.0 - 0.05 * double(t);
    const auto grad = [&] {
        const auto tr = forward(p, s, true);
        Eigen::VectorXd dk(110), dl(110);
        for (int t = 0; t < 110; ++t) {
            const auto g = composite_loss_grad(tr.outputs[std::size_t(t)], tau[std::size_t(t)]);
            dk(t) = g.d_kappa;
            dl(t) = g.d_lambda;
        }
        auto g = p.zeros_like();
        backward(p, s, *tr.cache, dk, dl, g);
        return g;
    }();
    Rng rng(92);
    for (int i = 0; i < 5; ++i) {
        const auto k = Eigen::Index(rng.below(std::uint64_t(p.size())));
        auto q = p;
        const double fd = oracle::central_diff(
            [&](double v) {
                q.flat()(k) = v;
                return sequence_loss(q, s, tau);
            },
            p.flat()(k), 1e-6);
        EXPECT_LE(std::abs(grad.flat()(k) - fd), 1e-4 * std::max(std::abs(fd), std::abs(grad.flat()(k))) + 1e-8) << k;
    }
}

TEST(GrudBackward, FixedKappaGradient) {
    auto p = random_parameters(4, 5, 95);
    p.fixed_kappa = FixedKappa{};
    const auto s = random_sequence(4, 10, 96);
    expect_gradient_matches(p, s, 30, 1e-4, 97);
}

TEST(GrudOptim, AmsGradMatchesReferenceSteps) {
    // Two hand-computed steps on a 1-D parameter.
    AmsGrad opt(1, {0.1, 0.9, 0.999, 1e-8});
    Eigen::VectorXd x = Eigen::VectorXd::Constant(1, 1.0);
    opt.step(x, Eigen::VectorXd::Constant(1, 2.0));
    // m = 0.2, v = 0.004, bias-corrected m = 2, v = 4 -> step 0.1 * 2 / (2 + 1e-8)
    EXPECT_NEAR(x(0), 1.0 - 0.1 * 2.0 / (2.0 + 1e-8), 1e-15);
    opt.step(x, Eigen::VectorXd::Constant(1, 0.5));
    const double m = 0.9 * 0.2 + 0.1 * 0.5;
    const double v = std::max(0.999 * 0.004 + 0.001 * 0.25, 0.004);
    const double expect = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8) -
                          (0.1 / (1 - 0.81)) * m / (std::sqrt(v) / std::sqrt(1 - 0.999 * 0.999) + 1e-8);
    EXPECT_NEAR(x(0), expect, 1e-14);
}

TEST(GrudOptim, ClipGlobalNorm) {
    Eigen::VectorXd g(2);
    g << 3.0, 4.0;
    EXPECT_EQ(clip_global_norm(g, 1.0), 5.0);
    EXPECT_NEAR(g.norm(), 1.0, 1e-15);
    EXPECT_NEAR(g(0), 0.6, 1e-15);
    Eigen::VectorXd small(2);
    small << 0.1, 0.1;
    clip_global_norm(small, 1.0);
    EXPECT_EQ(small(0), 0.1);
}

namespace {

Checkpoint sample_checkpoint() {
    Checkpoint ck;
    ck.params = random_parameters(19, 7, 123);
    ck.params.flat()(3) = 1.0 / 3.0;
    ck.params.flat()(4) = 5e-324;
    ck.meta.roster = FeatureRoster::standard();
    ck.meta.grid = build_grid();
    ck.meta.norms.raw.assign(19, {1.0 / 7.0, 2.0 / 3.0});
    ck.meta.norms.empirical_means.assign(19, -0.1);
    ck.meta.config.hidden = 7;
    ck.meta.config.seed = 99;
    ck.meta.seed = 99;
    return ck;
}

}  // namespace

TEST(GrudCheckpoint, BitExactRoundTrip) {
    const auto ck = sample_checkpoint();
    testutil::TempDir tmp;
    save_checkpoint(ck, tmp / "m.json");
    const auto back = load_checkpoint(tmp / "m.json", FeatureRoster::standard().hash());
    ASSERT_EQ(back.params.size(), ck.params.size());
    for (Eigen::Index i = 0; i < ck.params.size(); ++i) {
        EXPECT_EQ(std::memcmp(&back.params.flat()(i), &ck.params.flat()(i), sizeof(double)), 0) << i;
    }
    EXPECT_EQ(back.meta.roster, ck.meta.roster);
    EXPECT_EQ(back.meta.grid, ck.meta.grid);
    EXPECT_EQ(back.meta.norms, ck.meta.norms);
    EXPECT_EQ(back.meta.config, ck.meta.config);
    EXPECT_EQ(back.meta.seed, 99u);
    EXPECT_FALSE(back.params.fixed_kappa.has_value());
}

TEST(GrudCheckpoint, FixedKappaRoundTrip) {
    auto ck = sample_checkpoint();
    ck.params.fixed_kappa = FixedKappa{3.0, 0.2};
    ck.meta.config.fixed_kappa = FixedKappa{3.0, 0.2};
    const auto back = checkpoint_from_string(checkpoint_to_string(ck));
    ASSERT_TRUE(back.params.fixed_kappa.has_value());
    EXPECT_EQ(*back.params.fixed_kappa, (FixedKappa{3.0, 0.2}));
    EXPECT_EQ(back.meta.config, ck.meta.config);
}

TEST(GrudCheckpoint, RejectsAlteredSchemaVersion) {
    auto text = checkpoint_to_string(sample_checkpoint());
    const auto pos = text.find("grud-weibull/1");
    ASSERT_NE(pos, std::string::npos);
    text.replace(pos, 14, "grud-weibull/2");
    try {
        checkpoint_from_string(text);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("schema_version"), std::string::npos);
    }
}

TEST(GrudCheckpoint, RejectsRosterHashMismatch) {
    const auto text = checkpoint_to_string(sample_checkpoint());
    auto names = FeatureRoster::standard().names();
    std::swap(names[0], names[1]);
    try {
        checkpoint_from_string(text, FeatureRoster::hash_names(names));
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("feature_roster_hash"), std::string::npos);
    }
    // Reordering the stored roster without updating its hash is caught too.
    auto edited = text;
    const auto a = edited.find("\"egfr\"");
    const auto b = edited.find("\"albumin\"");
    ASSERT_TRUE(a != std::string::npos && b != std::string::npos);
    edited.replace(b, 9, "\"egfr\"");
    edited.replace(a, 6, "\"albumin\"");
    EXPECT_THROW(checkpoint_from_string(edited), DataError);
}

TEST(GrudCheckpoint, RejectsWrongTensorShape) {
    auto ck = sample_checkpoint();
    auto j = nlohmann::json::parse(checkpoint_to_string(ck));
    j["tensors"][4]["shape"] = {7, 3};
    try {
        checkpoint_from_string(j.dump());
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("update_w"), std::string::npos) << e.what();
    }
}
