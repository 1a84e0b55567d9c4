#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "dap/errors.hpp"
#include "dap/softmetrics.hpp"

using namespace dap;

namespace {

double brute_force_gamma(int n) {
    double best = 0.0;
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
        std::vector<double> v;
        for (int i = 0; i < n; ++i) v.push_back((mask >> i) & 1u);
        double mean = 0.0;
        for (double x : v) mean += x / n;
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        best = std::max(best, std::sqrt(ss / n));
    }
    return best;
}

// Two rows, C = 2: P = (0.7, 0.3) labelled 0 and P = (0.4, 0.6) labelled 1.
struct TwoRow {
    ad::Tape tape;
    ProbBatch batch;
    TwoRow() {
        batch.probs = tape.constant(Tensor::from_rows({{0.7, 0.3}, {0.4, 0.6}}));
        batch.labels = one_hot(std::vector<int>{0, 1}, 2);
        batch.domains = {0, 0};
        batch.n_domains = 1;
    }
};

void expect_row(const ad::Var& v, double a, double b) {
    EXPECT_NEAR(v.value()[0], a, 1e-15);
    EXPECT_NEAR(v.value()[1], b, 1e-15);
}

ProbBatch batch_of(ad::Tape& t, const Tensor& probs, const std::vector<int>& y, const std::vector<int>& dom, int N) {
    return ProbBatch{t.constant(probs), one_hot(y, static_cast<int>(probs.cols())), dom, N};
}

}  // namespace

TEST(SoftConfusion, TwoRowHandValues) {
    TwoRow f;
    const SoftConfusion c = soft_confusion(f.batch);
    expect_row(c.tp, 0.7, 0.6);
    expect_row(c.fn, 0.3, 0.4);
    expect_row(c.fp, 0.4, 0.3);
    expect_row(c.tn, 0.6, 0.7);
}

TEST(SoftConfusion, RowMaskSelectsRows) {
    TwoRow f;
    const std::vector<std::uint8_t> mask{1, 0};
    const SoftConfusion c = soft_confusion(f.batch, mask);
    expect_row(c.tp, 0.7, 0.0);
    expect_row(c.fp, 0.0, 0.3);
}

TEST(SoftBalancedAccuracy, TwoRowExample) {
    TwoRow f;
    EXPECT_NEAR(soft_balanced_accuracy(soft_confusion(f.batch)).item(), 0.65, 1e-12);
}

TEST(SoftBalancedAccuracy, PerfectIsOne) {
    ad::Tape t;
    const std::vector<int> y{0, 1, 2, 1};
    const auto b = batch_of(t, one_hot(y, 3), y, {0, 0, 0, 0}, 1);
    EXPECT_NEAR(soft_balanced_accuracy(soft_confusion(b)).item(), 1.0, 1e-12);
}

TEST(SoftBalancedAccuracy, UniformIsChanceForAnyBalance) {
    for (int C : {2, 3, 5}) {
        ad::Tape t;
        std::vector<int> y(37);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = i % 7 == 0 ? 1 : 0;
        const auto b = batch_of(t, Tensor(y.size(), C, 1.0 / C), y, std::vector<int>(y.size(), 0), 1);
        EXPECT_NEAR(soft_balanced_accuracy(soft_confusion(b)).item(), 1.0 / C, 1e-9) << "C=" << C;
    }
}

TEST(SoftUnbalancedAccuracy, TwoRowExample) {
    TwoRow f;
    EXPECT_NEAR(soft_unbalanced_accuracy(soft_confusion(f.batch)).item(), 0.65, 1e-12);
}

TEST(SoftUnbalancedAccuracy, MajorityPredictorOnNinetyTen) {
    ad::Tape t;
    std::vector<int> y(100, 0);
    for (int i = 0; i < 10; ++i) y[i] = 1;
    const auto b = batch_of(t, one_hot(std::vector<int>(100, 0), 2), y, std::vector<int>(100, 0), 1);
    const SoftConfusion c = soft_confusion(b);
    EXPECT_NEAR(soft_unbalanced_accuracy(c).item(), 0.9, 1e-12);
    EXPECT_NEAR(soft_balanced_accuracy(c).item(), 0.5, 1e-12);
}

TEST(Gamma, KnownValues) {
    EXPECT_EQ(gamma(2), 0.5);
    EXPECT_NEAR(gamma(3), std::sqrt(2.0) / 3, 1e-15);
    EXPECT_NEAR(gamma(5), std::sqrt(6.0) / 5, 1e-15);
}

TEST(Gamma, MatchesBruteForce) {
    for (int n = 2; n <= 12; ++n) EXPECT_NEAR(gamma(n), brute_force_gamma(n), 1e-12) << "n=" << n;
}

TEST(Gamma, RejectsFewerThanTwoDomains) {
    EXPECT_THROW(gamma(1), ContractError);
}

TEST(DomainStats, IdenticalDomainsHaveZeroSpread) {
    ad::Tape t;
    const Tensor p = Tensor::from_rows({{0.8, 0.2}, {0.3, 0.7}, {0.8, 0.2}, {0.3, 0.7}});
    const auto b = batch_of(t, p, {0, 1, 0, 1}, {0, 0, 1, 1}, 2);
    const auto s = domain_stats(b, DapConfig{});
    EXPECT_NEAR(s.std.item(), 0.0, 1e-9);
}

TEST(DomainStats, ExtremalTwoDomains) {
    const auto v = summarize_domain_accuracies({1.0, 0.0});
    EXPECT_EQ(v.mean, 0.5);
    EXPECT_EQ(v.std, 0.5);
    EXPECT_EQ(v.std, v.gamma);
}

TEST(DomainStats, ExtremalThreeDomains) {
    const auto v = summarize_domain_accuracies({1.0, 1.0, 0.0});
    EXPECT_NEAR(v.mean, 2.0 / 3, 1e-15);
    EXPECT_NEAR(v.std, std::sqrt(2.0) / 3, 1e-15);
    EXPECT_NEAR(v.std, gamma(3), 1e-15);
}

TEST(DomainStats, EmptyDomainThrows) {
    ad::Tape t;
    const auto b = batch_of(t, Tensor(2, 2, 0.5), {0, 1}, {0, 0}, 2);
    EXPECT_THROW(domain_stats(b, DapConfig{}), EmptyDomainError);
}

TEST(DapValue, BoundaryCases) {
    EXPECT_EQ(dap_value(summarize_domain_accuracies({0.5, 0.5}), 0.5), 0.0);
    EXPECT_EQ(dap_value(summarize_domain_accuracies({0.9, 0.3}), 0.6), 0.0);
    EXPECT_EQ(dap_value(summarize_domain_accuracies({1.0, 0.0}), 0.5), 0.0);
    EXPECT_EQ(dap_value(summarize_domain_accuracies({1.0, 1.0, 1.0}), 0.5), 1.0);
}

TEST(DapValue, HandValue) {
    EXPECT_NEAR(dap_value(summarize_domain_accuracies({0.8, 0.7}), 0.5), 0.45, 1e-12);
}

TEST(DapLoss, PerfectConsistentClassifier) {
    ad::Tape t;
    const std::vector<int> y{0, 1, 0, 1};
    const auto b = batch_of(t, one_hot(y, 2), y, {0, 0, 1, 1}, 2);
    DapConfig cfg;
    cfg.beta = 1;
    cfg.omega = 0;
    EXPECT_NEAR(dap_loss(b, cfg).item(), -1.0, 1e-9);
}

TEST(DapLoss, UniformClassifierPaysOnlyCrossEntropy) {
    ad::Tape t;
    const std::vector<int> y{0, 1, 1, 0, 1, 0};
    const auto b = batch_of(t, Tensor(6, 2, 0.5), y, {0, 0, 0, 1, 1, 1}, 2);
    DapConfig cfg;
    cfg.beta = 3;
    cfg.omega = 2;
    const auto terms = dap_loss_terms(b, cfg);
    EXPECT_NEAR(terms.adjusted_parity.item(), 0.0, 1e-9);
    EXPECT_NEAR(terms.loss.item(), 2 * std::log(2.0), 1e-9);
}

TEST(DapLoss, NoDebiasIsScaledCrossEntropy) {
    ad::Tape t;
    const auto b = batch_of(t, Tensor::from_rows({{0.9, 0.1}, {0.2, 0.8}}), {0, 1}, {0, 1}, 2);
    DapConfig cfg;
    cfg.omega = 4;
    cfg.debias = false;
    const auto terms = dap_loss_terms(b, cfg);
    EXPECT_DOUBLE_EQ(terms.loss.item(), 4 * terms.cross_entropy.item());
}

TEST(DapLoss, UnbalancedModeUsesPlainAccuracy) {
    ad::Tape t;
    std::vector<int> y(20, 0), dom(20);
    for (int i = 0; i < 20; ++i) dom[i] = i % 2;
    y[0] = y[1] = 1;
    const auto b = batch_of(t, one_hot(std::vector<int>(20, 0), 2), y, dom, 2);
    DapConfig bal, unbal;
    unbal.balanced = false;
    EXPECT_NEAR(domain_stats(b, bal).mean.item(), 0.5, 1e-9);
    EXPECT_NEAR(domain_stats(b, unbal).mean.item(), 0.9, 1e-9);
}

TEST(DapConfig, ChanceLevelDefaultsToUniform) {
    DapConfig cfg;
    EXPECT_EQ(cfg.chance_level(4), 0.25);
    cfg.s_random = 0.3;
    EXPECT_EQ(cfg.chance_level(4), 0.3);
}

TEST(ProbBatch, ValidateRejectsBadDomain) {
    ad::Tape t;
    const auto b = batch_of(t, Tensor(2, 2, 0.5), {0, 1}, {0, 2}, 2);
    EXPECT_THROW(b.validate(), ContractError);
}
