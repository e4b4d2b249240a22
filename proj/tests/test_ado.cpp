#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "mixplane/ado.hpp"

using namespace mixplane;
using namespace mixplane::ado;

namespace {

double rel(double got, double want) { return std::abs(got - want) / std::abs(want); }

// Forward model for the fixtures.
double power_law(double eps, double beta, double alpha, double n) { return eps + beta * std::pow(n, -alpha); }

std::vector<MixtureKey> domains(std::size_t k) {
    std::vector<MixtureKey> out;
    for (std::size_t i = 0; i < k; ++i) {
        out.push_back(MixtureKey{{"d", {"k" + std::to_string(i)}}});
    }
    return out;
}

std::vector<std::optional<double>> losses(std::initializer_list<double> v) { return {v.begin(), v.end()}; }

}  // namespace

TEST(LearningSpeed, HandEvaluation) {
    const DomainLaw law{0.0, 2.0, 0.3};
    const double want = 0.3 * 2.0 * std::pow(1000.0, -1.3);
    EXPECT_NEAR(learning_speed(law, 1000), want, 1e-15);
    EXPECT_NEAR(learning_speed(law, 1000), 7.5536e-5, 1e-9);
}

TEST(LearningSpeed, ZeroBeta) {
    EXPECT_EQ(learning_speed(DomainLaw{1.0, 0.0, 0.3}, 50), 0.0);
}

TEST(LearningSpeed, DecreasingInN) {
    const DomainLaw law{1.5, 2.0, 0.3};
    double prev = learning_speed(law, 1);
    for (double n = 2; n < 1e6; n *= 1.7) {
        const double s = learning_speed(law, n);
        EXPECT_LT(s, prev);
        prev = s;
    }
}

TEST(LearningSpeed, MatchesFiniteDifference) {
    const DomainLaw law{1.5, 2.0, 0.3};
    for (double n : {10.0, 500.0, 12345.0}) {
        const double h = n * 1e-5;
        const double fd = -(law(n + h) - law(n - h)) / (2 * h);
        EXPECT_NEAR(learning_speed(law, n) / fd, 1.0, 1e-6);
    }
}

TEST(LearningSpeed, RejectsNBelowOne) {
    EXPECT_THROW(learning_speed(DomainLaw{1, 1, 1}, 0.5), Error);
}

//------------------------------------------------------------------------------

TEST(FitPowerLaw, NoiselessRecovery) {
    std::vector<LossPoint> pts;
    for (int i = 0; i < 200; ++i) {
        const double n = 500 * std::pow(60.0, i / 199.0);
        pts.push_back({n, power_law(1.5, 2.0, 0.3, n)});
    }
    const DomainLaw f = fit_power_law(pts);
    EXPECT_FALSE(f.fallback);
    EXPECT_LT(rel(f.epsilon, 1.5), 0.01);
    EXPECT_LT(rel(f.beta, 2.0), 0.01);
    EXPECT_LT(rel(f.alpha, 0.3), 0.01);
}

TEST(FitPowerLaw, NoisyRecoverySeeded) {
    // The subsampled history of a 30000-step run: n = 510, 520, ... 30000.
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        Rng rng(seed);
        std::vector<LossPoint> pts;
        for (int n = 510; n <= 30000; n += 10) {
            pts.push_back({static_cast<double>(n), power_law(1.5, 2.0, 0.3, n) + 0.01 * rng.normal()});
        }
        const DomainLaw f = fit_power_law(pts);
        EXPECT_LT(rel(f.epsilon, 1.5), 0.10) << "seed " << seed;
        EXPECT_LT(rel(f.beta, 2.0), 0.10) << "seed " << seed;
        EXPECT_LT(rel(f.alpha, 0.3), 0.10) << "seed " << seed;
    }
}

TEST(FitPowerLaw, ConstantLossFallsBack) {
    std::vector<LossPoint> pts;
    for (int i = 1; i <= 20; ++i) {
        pts.push_back({100.0 * i, 2.25});
    }
    const DomainLaw f = fit_power_law(pts);
    EXPECT_TRUE(f.fallback);
    EXPECT_DOUBLE_EQ(f.epsilon, 2.25);
    EXPECT_NEAR(f(5000), 2.25, 1e-6);
}

TEST(FitPowerLaw, TooFewPoints) {
    std::vector<LossPoint> pts = {{1, 3}, {2, 2.5}, {3, 2.2}};
    EXPECT_THROW(fit_power_law(pts), Error);
}

TEST(FitPowerLaw, NonFinitePointsIgnored) {
    std::vector<LossPoint> pts;
    for (int i = 0; i < 100; ++i) {
        const double n = 100 + 50.0 * i;
        pts.push_back({n, power_law(1.0, 3.0, 0.5, n)});
    }
    pts.push_back({123, std::nan("")});
    const DomainLaw f = fit_power_law(pts);
    EXPECT_LT(rel(f.alpha, 0.5), 0.01);
}

//------------------------------------------------------------------------------

TEST(ApplyFloor, ClampsAndRenormalizes) {
    const auto pi = apply_floor({0.97, 0.02, 0.01}, 0.05);
    EXPECT_NEAR(std::accumulate(pi.begin(), pi.end(), 0.0), 1.0, 1e-12);
    EXPECT_NEAR(pi[1], 0.05, 1e-12);
    EXPECT_NEAR(pi[2], 0.05, 1e-12);
    EXPECT_NEAR(pi[0], 0.90, 1e-12);
}

TEST(ApplyFloor, RandomVectorsValid) {
    Rng rng(17);
    for (int t = 0; t < 2000; ++t) {
        const std::size_t k = 2 + rng.below(10);
        std::vector<double> v(k);
        double s = 0;
        for (auto& x : v) {
            x = std::pow(rng.uniform(), 6);
            s += x;
        }
        for (auto& x : v) {
            x /= s;
        }
        const double p_min = 0.5 / static_cast<double>(k) * rng.uniform();
        const auto pi = apply_floor(v, p_min);
        ASSERT_NEAR(std::accumulate(pi.begin(), pi.end(), 0.0), 1.0, 1e-9);
        for (std::size_t i = 0; i < k; ++i) {
            ASSERT_GE(pi[i], p_min - 1e-12);
            // Entries above the floor keep their relative order.
            for (std::size_t j = 0; j < k; ++j) {
                if (v[i] > v[j]) {
                    ASSERT_GE(pi[i], pi[j] - 1e-12);
                }
            }
        }
    }
}

//------------------------------------------------------------------------------

TEST(AdoState, PriorBeforeFirstFit) {
    AdoConfig cfg;
    cfg.prior = {0.6, 0.3, 0.1};
    AdoState s(domains(3), cfg);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_NEAR(s.pi()[i], cfg.prior[i], 1e-12);
    }
    for (std::uint64_t step = 1; step < 1000; ++step) {
        s.record_step(step, losses({3.0, 3.0, 3.0}), 30);
    }
    EXPECT_FALSE(s.laws().has_value());
    EXPECT_TRUE(s.fits().empty());
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_NEAR(s.pi()[i], cfg.prior[i], 1e-12);
    }
}

TEST(AdoState, HistoryAndStepChecks) {
    AdoState s(domains(2), AdoConfig{});
    s.record_step(1, losses({2.0, 3.0}), 8);
    EXPECT_EQ(s.history().size(), 1u);
    EXPECT_THROW(s.record_step(1, losses({2.0, 3.0}), 8), Error);
    EXPECT_THROW(s.record_step(3, losses({2.0, 3.0}), 8), Error);
    EXPECT_THROW(s.record_step(2, losses({2.0}), 8), Error);
}

TEST(AdoState, SubsampledView) {
    AdoConfig cfg;
    cfg.discard_first = 0;
    AdoState s(domains(2), cfg);
    for (std::uint64_t step = 1; step <= 30; ++step) {
        s.record_step(step, losses({2.0, 3.0}), 8);
    }
    EXPECT_EQ(s.history().size(), 30u);
    const auto w = s.fit_window(30);
    ASSERT_EQ(w.size(), 3u);
    EXPECT_EQ(w[0]->step, 10u);
    EXPECT_EQ(w[2]->step, 30u);
}

TEST(AdoState, RefitSchedule) {
    AdoState s(domains(2), AdoConfig{});
    for (std::uint64_t step = 1; step <= 3500; ++step) {
        const double n = step;
        s.record_step(step, losses({power_law(1, 2, 0.3, n), power_law(2, 1, 0.5, n)}), 2);
        if (step == 999) {
            EXPECT_TRUE(s.fits().empty());
        }
    }
    ASSERT_EQ(s.fits().size(), 3u);
    EXPECT_EQ(s.fits()[0].step, 1000u);
    EXPECT_EQ(s.fits()[1].step, 2000u);
    EXPECT_EQ(s.fits()[2].step, 3000u);
    // First fit: steps after 500 up to 1000, every 10th.
    std::vector<std::uint64_t> expect;
    for (std::uint64_t t = 510; t <= 1000; t += 10) {
        expect.push_back(t);
    }
    EXPECT_EQ(s.fits()[0].point_steps, expect);
}

TEST(AdoState, CumulativeSamplesSharedN) {
    AdoState s(domains(4), AdoConfig{});
    s.record_step(1, losses({1, 1, 1, 1}), 100);
    s.record_step(2, losses({1, 1, 1, 1}), 60);
    EXPECT_DOUBLE_EQ(s.cumulative_samples(), 160);
    EXPECT_DOUBLE_EQ(s.history().back().n, 40);
}

TEST(AdoState, MissingDomainCarriesPreviousLoss) {
    AdoState s(domains(2), AdoConfig{});
    s.record_step(1, losses({2.0, 3.0}), 8);
    const std::vector<std::optional<double>> partial = {std::nullopt, 2.5};
    s.record_step(2, partial, 8);
    EXPECT_DOUBLE_EQ(s.history().back().losses[0], 2.0);
    EXPECT_EQ(s.carried_losses(), 1u);
}

TEST(AdoState, FullCreditRateCopiesPreviousPi) {
    AdoConfig cfg;
    cfg.credit_rate = 1.0;
    cfg.smoothing = 0.0;
    AdoState s(domains(2), cfg);
    s.set_laws({DomainLaw{1, 5, 0.5}, DomainLaw{1, 1, 0.5}});
    compute_pi(s);
    const auto prev = s.pi();
    s.record_step(1, losses({2, 2}), 4);
    EXPECT_EQ(s.credit(), prev);
}

TEST(AdoState, SymmetricDomainsSplitEvenly) {
    AdoState s(domains(2), AdoConfig{});
    s.set_laws({DomainLaw{1, 2, 0.3}, DomainLaw{1, 2, 0.3}});
    s.record_step(1, losses({2, 2}), 100);
    EXPECT_NEAR(s.pi()[0], 0.5, 1e-12);
    EXPECT_NEAR(s.pi()[1], 0.5, 1e-12);
}

TEST(AdoState, TenfoldSpeedGivesTenfoldShare) {
    AdoConfig cfg;
    cfg.smoothing = 0.0;
    AdoState s(domains(2), cfg);
    s.set_laws({DomainLaw{1, 20, 0.5}, DomainLaw{1, 2, 0.5}});
    s.set_credit({0.5, 0.5});
    compute_pi(s);
    EXPECT_NEAR(s.pi()[0] / s.pi()[1], 10.0, 1e-9);
}

TEST(AdoState, MonotoneResponseToSpeed) {
    AdoConfig cfg;
    cfg.smoothing = 0.0;
    cfg.p_min = 1e-6;
    double prev_ratio = 0;
    for (double beta = 1; beta <= 16; beta *= 2) {
        AdoState s(domains(3), cfg);
        s.set_laws({DomainLaw{1, beta, 0.4}, DomainLaw{1, 2, 0.4}, DomainLaw{1, 3, 0.4}});
        s.set_credit({1.0 / 3, 1.0 / 3, 1.0 / 3});
        compute_pi(s);
        const double ratio = s.pi()[0] / s.pi()[1];
        EXPECT_GT(ratio, prev_ratio);
        prev_ratio = ratio;
    }
}

TEST(AdoState, RefitPicksUpFastDomain) {
    AdoState s(domains(3), AdoConfig{});
    for (std::uint64_t step = 1; step <= 2000; ++step) {
        const double n = std::max(1.0, s.cumulative_samples() / 3);
        s.record_step(step, losses({power_law(1, 8, 0.5, n), power_law(1, 1, 0.5, n), power_law(1, 1, 0.5, n)}), 30);
        double sum = 0;
        for (double p : s.pi()) {
            ASSERT_GE(p, s.p_min() - 1e-12);
            sum += p;
        }
        ASSERT_NEAR(sum, 1.0, 1e-9);
    }
    const auto& pi = s.pi();
    EXPECT_GT(pi[0], pi[1]);
    EXPECT_GT(pi[0], pi[2]);
}

TEST(AdoState, JsonRoundTripContinuesIdentically) {
    AdoState a(domains(2), AdoConfig{});
    auto feed = [](AdoState& s, std::uint64_t step) {
        const double n = step;
        s.record_step(step, losses({power_law(1, 3, 0.4, n), power_law(2, 1, 0.6, n)}), 64);
    };
    for (std::uint64_t t = 1; t <= 1500; ++t) {
        feed(a, t);
    }
    AdoState b = AdoState::from_json(a.to_json());
    EXPECT_EQ(b.to_json(), a.to_json());
    for (std::uint64_t t = 1501; t <= 2100; ++t) {
        feed(a, t);
        feed(b, t);
    }
    EXPECT_EQ(a.pi(), b.pi());
    EXPECT_EQ(a.to_json(), b.to_json());
}

TEST(AdoState, ConfigValidation) {
    AdoConfig bad_prior;
    bad_prior.prior = {0.5, 0.6};
    EXPECT_THROW(AdoState(domains(2), bad_prior), Error);
    AdoConfig bad_floor;
    bad_floor.p_min = 0.6;
    EXPECT_THROW(AdoState(domains(2), bad_floor), Error);
    AdoConfig bad_smooth;
    bad_smooth.smoothing = 1.0;
    EXPECT_THROW(AdoState(domains(2), bad_smooth), Error);
    EXPECT_THROW(AdoState({MixtureKey{{"d", {"a"}}}, MixtureKey{{"d", {"a"}}}}, AdoConfig{}), Error);
}

TEST(AdoProvider, FeedbackMapsKeysAndMeans) {
    AdoMixtureProvider p(domains(2), AdoConfig{});
    const auto d = domains(2);
    p.on_feedback(1, {{d[1], 30.0, 10}, {d[0], 40.0, 20}});
    ASSERT_EQ(p.ado().history().size(), 1u);
    EXPECT_DOUBLE_EQ(p.ado().history()[0].losses[0], 2.0);
    EXPECT_DOUBLE_EQ(p.ado().history()[0].losses[1], 3.0);
    EXPECT_DOUBLE_EQ(p.ado().cumulative_samples(), 30);
    EXPECT_THROW(p.on_feedback(2, {{MixtureKey{{"d", {"nope"}}}, 1.0, 1}}), QueryError);
    const auto spec = p.current();
    EXPECT_EQ(spec.weights.size(), 2u);
}
