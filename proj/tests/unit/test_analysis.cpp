#include "combolab/analysis/contribution.hpp"
#include "combolab/analysis/kmeans.hpp"
#include "combolab/analysis/mi.hpp"
#include "combolab/analysis/tp.hpp"
#include "combolab/analysis/trace.hpp"
#include "combolab/core/rng.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <set>
#include <array>

using namespace combolab;
using namespace combolab::analysis;

namespace {

core::Tensor random_matrix(std::size_t n, std::size_t d, std::uint64_t seed) {
    core::SeededRng rng(seed, "m");
    core::Tensor t({n, d});
    for (auto& v : t.values()) v = rng.normal();
    return t;
}

core::Tensor permute_rows(const core::Tensor& x, const std::vector<std::size_t>& perm) {
    core::Tensor out({x.rows(), x.cols()});
    for (std::size_t i = 0; i < perm.size(); ++i) {
        for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(perm[i], j);
    }
    return out;
}

// Rows sorted lexicographically so centroid sets can be compared up to order.
std::vector<std::vector<double>> sorted_rows(const core::Tensor& x) {
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < x.rows(); ++i) rows.emplace_back(x.data() + i * x.cols(), x.data() + (i + 1) * x.cols());
    std::sort(rows.begin(), rows.end());
    return rows;
}

// Four well separated blobs in 3-d.
core::Tensor blobs(std::size_t per, std::uint64_t seed) {
    core::SeededRng rng(seed, "blobs");
    const double centers[4][3] = {{10, 0, 0}, {0, 10, 0}, {0, 0, 10}, {-10, -10, -10}};
    core::Tensor x({4 * per, 3});
    for (std::size_t b = 0; b < 4; ++b) {
        for (std::size_t i = 0; i < per; ++i) {
            for (std::size_t j = 0; j < 3; ++j) x(b * per + i, j) = centers[b][j] + 0.1 * rng.normal();
        }
    }
    return x;
}

std::vector<double> vec(const core::Tensor& t) { return {t.values().begin(), t.values().end()}; }

double entropy_of(const std::vector<int>& v) {
    std::map<int, double> c;
    for (int x : v) c[x] += 1.0;
    double h = 0.0;
    for (const auto& [k, n] : c) h -= n / v.size() * std::log(n / v.size());
    return h;
}

}  // namespace

// --- k-means ---

TEST(KMeans, ThreeDistinctPointsEachOwnCluster) {
    const core::Tensor x = core::Tensor::matrix(3, 2, {0, 0, 5, 5, -5, 5});
    KMeansOptions o;
    o.k = 3;
    o.batch_size = 2;
    const ClusterModel m = minibatch_kmeans(x, o);
    ASSERT_EQ(m.k(), 3u);
    const auto labels = assign_clusters(m, x);
    EXPECT_EQ(std::set<int>(labels.begin(), labels.end()).size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(m.centroids(labels[i], j), x(i, j));
    }
}

TEST(KMeans, KCappedAtDistinctRows) {
    const core::Tensor x = core::Tensor::matrix(4, 1, {1, 1, 2, 2});
    KMeansOptions o;
    o.k = 10;
    EXPECT_EQ(distinct_rows(x), 2u);
    EXPECT_EQ(minibatch_kmeans(x, o).k(), 2u);
}

TEST(KMeans, SingleClusterIsGlobalMean) {
    const core::Tensor x = random_matrix(500, 4, 3);
    KMeansOptions o;
    o.k = 1;
    o.batch_size = 64;
    const ClusterModel m = minibatch_kmeans(x, o);
    for (std::size_t j = 0; j < 4; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < 500; ++i) mean += x(i, j);
        EXPECT_NEAR(m.centroids(0, j), mean / 500, 1e-6);
    }
}

TEST(KMeans, DuplicatedRowsGiveSameCentroids) {
    const core::Tensor x = blobs(30, 1);
    core::Tensor twice({2 * x.rows(), 3});
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < 3; ++j) twice(2 * i, j) = twice(2 * i + 1, j) = x(i, j);
    }
    KMeansOptions o;
    o.k = 4;
    o.batch_size = 16;
    const auto a = sorted_rows(minibatch_kmeans(x, o).centroids);
    const auto b = sorted_rows(minibatch_kmeans(twice, o).centroids);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(a[i][j], b[i][j], 1e-9);
    }
}

TEST(KMeans, RowOrderDoesNotMatter) {
    const core::Tensor x = random_matrix(200, 3, 5);
    std::vector<std::size_t> perm(200);
    std::iota(perm.begin(), perm.end(), 0);
    core::SeededRng(9).shuffle(std::span(perm));
    KMeansOptions o;
    o.k = 7;
    o.batch_size = 32;
    EXPECT_EQ(vec(minibatch_kmeans(x, o).centroids), vec(minibatch_kmeans(permute_rows(x, perm), o).centroids));
}

TEST(KMeans, CentroidsFiniteAndDeterministic) {
    const core::Tensor x = random_matrix(300, 5, 6);
    KMeansOptions o;
    o.k = 16;
    o.batch_size = 50;
    o.seed = 4;
    const ClusterModel a = minibatch_kmeans(x, o), b = minibatch_kmeans(x, o);
    EXPECT_EQ(vec(a.centroids), vec(b.centroids));
    EXPECT_TRUE(core::all_finite(a.centroids.values()));
}

TEST(KMeans, AssignTiesToLowestIndex) {
    ClusterModel m;
    m.centroids = core::Tensor::matrix(2, 1, {-1, 1});
    EXPECT_EQ(assign_clusters(m, core::Tensor::matrix(1, 1, {0}))[0], 0);
}

// --- mutual information ---

TEST(Mi, IndependentProductTableIsZero) {
    std::vector<int> x, y;
    for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 4; ++b) {
            x.push_back(a);
            y.push_back(b);
        }
    }
    EXPECT_NEAR(discrete_mi(x, y), 0.0, 1e-15);
}

TEST(Mi, IdenticalBinaryIsLn2) {
    const std::vector<int> v = {0, 1, 0, 1, 1, 0};
    EXPECT_NEAR(discrete_mi(v, v), std::log(2.0), 1e-15);
}

TEST(Mi, TwoByTwoHandSum) {
    // counts [[3,1],[1,3]], n = 8, every marginal 4.
    std::vector<int> x = {0, 0, 0, 0, 1, 1, 1, 1};
    std::vector<int> y = {0, 0, 0, 1, 0, 1, 1, 1};
    const double expected = 2 * (3.0 / 8) * std::log((3.0 / 8) / (0.5 * 0.5)) +
                            2 * (1.0 / 8) * std::log((1.0 / 8) / (0.5 * 0.5));
    EXPECT_NEAR(discrete_mi(x, y), expected, 1e-15);
}

TEST(Mi, HistogramTotalsConsistent) {
    const std::vector<int> x = {1, 2, 2, 7}, y = {0, 0, 3, 3};
    const JointHistogram h = JointHistogram::build(x, y);
    std::size_t sum = 0;
    for (const auto& [k, c] : h.counts) sum += c;
    EXPECT_EQ(sum, 4u);
    EXPECT_EQ(h.x_totals.at(2), 2u);
    EXPECT_EQ(h.y_totals.at(3), 2u);
    EXPECT_THROW(JointHistogram::build(x, std::vector<int>{1}), std::invalid_argument);
}

TEST(MiProperty, BoundedAndSymmetricOnRandomTables) {
    core::SeededRng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.uniform_index(60);
        const std::size_t kx = 1 + rng.uniform_index(6), ky = 1 + rng.uniform_index(6);
        std::vector<int> x(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = static_cast<int>(rng.uniform_index(kx));
            y[i] = rng.bernoulli(0.5) ? x[i] : static_cast<int>(rng.uniform_index(ky));
        }
        const JointHistogram h = JointHistogram::build(x, y);
        const double mi = h.mutual_information();
        EXPECT_GE(mi, 0.0);
        EXPECT_LE(mi, std::min(h.entropy_x(), h.entropy_y()) + 1e-12);
        EXPECT_NEAR(mi, discrete_mi(y, x), 1e-12);
    }
}

TEST(MiCurve, OneHotSiteGivesTargetEntropyAndConstantSiteZero) {
    ActivationTrace t;
    t.sites = {"embed", "L1.mha", "L1.ffn"};
    t.targets = {0, 1, 2, 2, 1, 0, 2, 2};
    core::Tensor onehot({8, 3}, 0.0), constant({8, 3}, 0.5);
    for (std::size_t i = 0; i < 8; ++i) onehot(i, t.targets[i]) = 1.0;
    t.reps = {onehot, constant, onehot};
    KMeansOptions o;
    o.k = 8;
    const auto curve = mi_curve(t, o);
    EXPECT_NEAR(curve[0], entropy_of(t.targets), 1e-12);
    EXPECT_NEAR(curve[1], 0.0, 1e-15);
    EXPECT_NEAR(curve[2], entropy_of(t.targets), 1e-12);
}

TEST(MiCurve, InvariantUnderJointRowPermutation) {
    ActivationTrace t;
    t.sites = {"embed", "L1.mha", "L1.ffn"};
    core::SeededRng rng(2);
    for (int i = 0; i < 120; ++i) t.targets.push_back(static_cast<int>(rng.uniform_index(5)));
    for (int s = 0; s < 3; ++s) t.reps.push_back(random_matrix(120, 4, 20 + s));
    std::vector<std::size_t> perm(120);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span(perm));
    ActivationTrace p = t;
    for (std::size_t s = 0; s < 3; ++s) p.reps[s] = permute_rows(t.reps[s], perm);
    for (std::size_t i = 0; i < 120; ++i) p.targets[i] = t.targets[perm[i]];
    KMeansOptions o;
    o.k = 6;
    o.batch_size = 16;
    const auto a = mi_curve(t, o), b = mi_curve(p, o);
    for (std::size_t s = 0; s < 3; ++s) EXPECT_NEAR(a[s], b[s], 1e-12);
}

// --- token prediction ---

TEST(Tp, IdenticalUnitRowsGiveThatRow) {
    const core::Tensor x = core::Tensor::matrix(2, 2, {0.6, 0.8, 0.6, 0.8});
    const TpCentroids c = tp_centroids(x, std::vector<int>{7, 7}, 1);
    ASSERT_EQ(c.tokens, std::vector<int>{7});
    EXPECT_NEAR(c.vectors(0, 0), 0.6, 1e-15);
    EXPECT_NEAR(c.vectors(0, 1), 0.8, 1e-15);
}

TEST(Tp, MinCountBoundary) {
    core::Tensor x({99, 2}, 1.0);
    std::vector<int> y(99, 1);
    std::fill(y.begin(), y.begin() + 49, 0);
    const TpCentroids c = tp_centroids(x, y, 50);
    EXPECT_EQ(c.tokens, std::vector<int>{1});
    EXPECT_THROW(tp_centroids(x, y, 60), std::invalid_argument);
}

TEST(Tp, OppositeVectorsGiveZeroCentroidThatNeverWins) {
    const core::Tensor x = core::Tensor::matrix(4, 2, {1, 0, -1, 0, 0, 1, 0, 1});
    const std::vector<int> y = {0, 0, 1, 1};
    const TpCentroids c = tp_centroids(x, y, 1);
    EXPECT_EQ(c.vectors(0, 0), 0.0);
    EXPECT_EQ(c.vectors(0, 1), 0.0);
    // Rows of token 0 are predicted as token 1, rows of token 1 are right.
    EXPECT_DOUBLE_EQ(tp_accuracy(x, y, c), 0.5);
}

TEST(Tp, ZeroRowsSkippedAndCounted) {
    const core::Tensor x = core::Tensor::matrix(3, 2, {0, 0, 2, 0, 3, 0});
    const TpCentroids c = tp_centroids(x, std::vector<int>{4, 4, 4}, 2);
    EXPECT_EQ(c.zero_rows, 1u);
    EXPECT_DOUBLE_EQ(c.vectors(0, 0), 1.0);
}

TEST(Tp, OrthogonalUnitCentroidsGivePerfectAccuracy) {
    core::Tensor x({6, 3}, 0.0);
    std::vector<int> y = {0, 1, 2, 0, 1, 2};
    for (std::size_t i = 0; i < 6; ++i) x(i, y[i]) = 1.0;
    EXPECT_DOUBLE_EQ(tp_accuracy(x, y, tp_centroids(x, y, 1)), 1.0);
}

TEST(Tp, IdenticalCentroidsPredictLowestId) {
    core::Tensor x({10, 2}, 1.0);
    std::vector<int> y = {5, 3, 3, 9, 5, 5, 3, 9, 9, 9};
    EXPECT_DOUBLE_EQ(tp_accuracy(x, y, tp_centroids(x, y, 1)), 0.3);
}

TEST(Tp, RowsOutsideKeptTokensExcluded) {
    core::Tensor x({3, 2}, 0.0);
    x(0, 0) = x(1, 0) = 1.0;
    x(2, 1) = 1.0;
    TpCentroids c = tp_centroids(x, std::vector<int>{1, 1, 2}, 2);
    EXPECT_DOUBLE_EQ(tp_accuracy(x, std::vector<int>{1, 1, 2}, c), 1.0);
}

TEST(Tp, MatchesBruteForceCosineOracle) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const core::Tensor x = random_matrix(20, 3, 100 + seed);
        core::SeededRng rng(seed, "y");
        std::vector<int> y(20);
        for (auto& v : y) v = static_cast<int>(rng.uniform_index(4));
        const TpCentroids c = tp_centroids(x, y, 2);

        // Oracle: explicit unit rows, per-token mean, full similarity matrix.
        std::map<int, std::vector<std::size_t>> members;
        for (std::size_t i = 0; i < 20; ++i) members[y[i]].push_back(i);
        std::vector<int> kept;
        std::vector<std::array<double, 3>> cents;
        for (const auto& [tok, rows] : members) {
            if (rows.size() < 2) continue;
            std::array<double, 3> m{};
            for (std::size_t i : rows) {
                const double n = std::hypot(x(i, 0), x(i, 1), x(i, 2));
                for (int j = 0; j < 3; ++j) m[j] += x(i, j) / n / rows.size();
            }
            kept.push_back(tok);
            cents.push_back(m);
        }
        int evaluated = 0, correct = 0;
        for (std::size_t i = 0; i < 20; ++i) {
            if (std::find(kept.begin(), kept.end(), y[i]) == kept.end()) continue;
            ++evaluated;
            std::vector<double> sim;
            for (const auto& m : cents) {
                const double dot = x(i, 0) * m[0] + x(i, 1) * m[1] + x(i, 2) * m[2];
                sim.push_back(dot / std::hypot(x(i, 0), x(i, 1), x(i, 2)) / std::hypot(m[0], m[1], m[2]));
            }
            const auto best = std::max_element(sim.begin(), sim.end()) - sim.begin();
            correct += kept[best] == y[i];
        }
        EXPECT_DOUBLE_EQ(tp_accuracy(x, y, c), static_cast<double>(correct) / evaluated) << "seed " << seed;
    }
}

TEST(TpProperty, InvariantUnderRotation) {
    // Rotation from Gram-Schmidt on a random basis.
    const std::size_t d = 4;
    core::Tensor q = random_matrix(d, d, 42);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t k = 0; k < i; ++k) {
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += q(i, j) * q(k, j);
            for (std::size_t j = 0; j < d; ++j) q(i, j) -= dot * q(k, j);
        }
        double n = 0.0;
        for (std::size_t j = 0; j < d; ++j) n += q(i, j) * q(i, j);
        for (std::size_t j = 0; j < d; ++j) q(i, j) /= std::sqrt(n);
    }
    auto rotate = [&](const core::Tensor& x) {
        core::Tensor out({x.rows(), d}, 0.0);
        for (std::size_t r = 0; r < x.rows(); ++r) {
            for (std::size_t i = 0; i < d; ++i) {
                for (std::size_t j = 0; j < d; ++j) out(r, i) += q(i, j) * x(r, j);
            }
        }
        return out;
    };
    const core::Tensor x = random_matrix(200, d, 7);
    std::vector<int> y(200);
    core::SeededRng rng(3);
    for (std::size_t i = 0; i < 200; ++i) y[i] = static_cast<int>(rng.uniform_index(6)) + (x(i, 0) > 0 ? 6 : 0);
    TpCentroids c = tp_centroids(x, y, 5);
    const double base = tp_accuracy(x, y, c);
    EXPECT_GE(base, 0.0);
    EXPECT_LE(base, 1.0);
    c.vectors = rotate(c.vectors);
    EXPECT_DOUBLE_EQ(tp_accuracy(rotate(x), y, c), base);
}

// --- contribution ratio ---

namespace {
const std::vector<std::string> kTwoLayers = {"embed", "L1.mha", "L1.ffn", "L2.mha", "L2.ffn"};
}

TEST(Contribution, MhaOnlyGains) {
    const auto r = contribution_ratio(kTwoLayers, {0, 1, 1, 2, 2}, Metric::Mi);
    EXPECT_EQ(r.ffn_ratio, 0.0);
    EXPECT_EQ(r.mha_ratio, 1.0);
}

TEST(Contribution, FfnOnlyGains) {
    const auto r = contribution_ratio(kTwoLayers, {0, 0, 1, 1, 2}, Metric::Tp);
    EXPECT_EQ(r.ffn_ratio, 1.0);
    EXPECT_EQ(r.mha_ratio, 0.0);
}

TEST(Contribution, MixedSequenceWithNegativeIncrement) {
    // deltas: mha 0.5, -0.25 ; ffn 1.0, 0.25. clamped: mha 0.5, ffn 1.25.
    const auto r = contribution_ratio(kTwoLayers, {0, 0.5, 1.5, 1.25, 1.5}, Metric::Mi);
    EXPECT_EQ(r.delta_mha, (std::vector<double>{0.5, -0.25}));
    EXPECT_EQ(r.delta_ffn, (std::vector<double>{1.0, 0.25}));
    EXPECT_DOUBLE_EQ(r.ffn_ratio, 1.25 / 1.75);
    EXPECT_DOUBLE_EQ(r.signed_mha_sum, 0.25);
    EXPECT_DOUBLE_EQ(r.signed_ffn_sum, 1.25);
    EXPECT_DOUBLE_EQ(*r.signed_ffn_ratio, 1.25 / 1.5);
    EXPECT_EQ(r.cumulative_mha, (std::vector<double>{0.5, 0.5}));
    EXPECT_EQ(r.cumulative_ffn, (std::vector<double>{1.0, 1.25}));
}

TEST(Contribution, UndefinedWhenNothingIncreases) {
    EXPECT_THROW(contribution_ratio(kTwoLayers, {3, 2, 2, 1, 0}, Metric::Mi), UndefinedRatioError);
}

TEST(Contribution, RejectsMalformedSites) {
    EXPECT_THROW(contribution_ratio({"embed", "L1.ffn", "L1.mha"}, {0, 1, 2}, Metric::Mi), std::invalid_argument);
    EXPECT_THROW(contribution_ratio({"embed", "L1.mha"}, {0, 1}, Metric::Mi), std::invalid_argument);
}

TEST(ContributionProperty, RatiosSumToOneAndScaleInvariant) {
    core::SeededRng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> v(kTwoLayers.size());
        for (auto& x : v) x = rng.uniform() * 4 - 1;
        v[1] = v[0] + 0.1;  // at least one positive increment
        const auto r = contribution_ratio(kTwoLayers, v, Metric::Mi);
        EXPECT_EQ(r.ffn_ratio + r.mha_ratio, 1.0);
        for (std::size_t l = 0; l < 2; ++l) {
            EXPECT_EQ(v[1 + 2 * l] - v[2 * l], r.delta_mha[l]);
            EXPECT_EQ(v[2 + 2 * l] - v[1 + 2 * l], r.delta_ffn[l]);
        }
        std::vector<double> scaled = v;
        for (auto& x : scaled) x *= 2.5;
        const auto s = contribution_ratio(kTwoLayers, scaled, Metric::Mi);
        EXPECT_NEAR(s.ffn_ratio, r.ffn_ratio, 1e-12);
        EXPECT_NEAR(s.mha_ratio, r.mha_ratio, 1e-12);
    }
}

TEST(Contribution, CsvAndSvg) {
    const auto r = contribution_ratio(kTwoLayers, {0, 0.5, 1.5, 1.25, 1.5}, Metric::Tp);
    const std::string csv = report_csv(r);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "site,metric,value,delta,kind");
    EXPECT_NE(csv.find("L1.ffn,tp,1.5,1,ffn"), std::string::npos);
    EXPECT_NE(csv.find("summary,tp,"), std::string::npos);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 5 + 2);
    const std::string svg = contribution_svg(r);
    EXPECT_EQ(svg.rfind("<svg", 0), 0u);
    EXPECT_NE(svg.find("<polyline"), std::string::npos);
}

// --- trace collection ---

namespace {

std::vector<std::string> docs() {
    return {"the cat eats fish and the dog eats meat.", "a bird sings in the tree at dawn.",
            "bees make honey all summer long.", "the owl sees mice in the dark."};
}

struct TraceFixture {
    data::Tokenizer tok = data::Tokenizer::char_level(docs());
    arch::ArchSpec spec;
    TraceFixture(arch::Family family) {
        spec.family = family;
        spec.hidden = 8;
        spec.layers = 2;
        spec.heads = 2;
        spec.vocab = tok.size();
        spec.max_seq = 16;
    }
    data::Dataset dataset(const std::vector<std::string>& d = docs()) const {
        return {spec.family == arch::Family::Bert ? data::Objective::MaskedLm : data::Objective::CausalLm, d, tok, 16};
    }
};

}  // namespace

TEST(Trace, BudgetGivesExactRowCountAndAlignedTargets) {
    TraceFixture f(arch::Family::Gpt);
    arch::Model model = arch::build_model(f.spec, core::SeededRng(1));
    TraceOptions o;
    o.sample_budget = 10;
    o.batch = 3;
    const ActivationTrace t = collect_trace(model, f.dataset(), o);
    EXPECT_EQ(t.sites, arch::site_names(2));
    for (const auto& rep : t.reps) EXPECT_EQ(rep.rows(), 10u);
    EXPECT_EQ(t.targets.size(), 10u);
}

TEST(Trace, FullBudgetCoversEveryTargetExactlyOnce) {
    for (auto family : {arch::Family::Gpt, arch::Family::Bert}) {
        TraceFixture f(family);
        arch::Model model = arch::build_model(f.spec, core::SeededRng(1));
        const data::Dataset ds = f.dataset();
        TraceOptions o;
        o.policy = default_policy(family);
        o.seed = 5;
        o.batch = 4;
        const ActivationTrace t = collect_trace(model, ds, o);
        std::vector<std::size_t> rows(ds.rows());
        std::iota(rows.begin(), rows.end(), 0);
        const data::MaskedBatch b = ds.batch(rows, o.seed, 0);
        std::multiset<int> expected, got(t.targets.begin(), t.targets.end());
        for (int y : b.targets) {
            if (y != data::kIgnore) expected.insert(y);
        }
        EXPECT_EQ(got, expected);
    }
}

TEST(Trace, CapturedRepsMatchDirectForward) {
    TraceFixture f(arch::Family::Gpt);
    arch::Model model = arch::build_model(f.spec, core::SeededRng(2));
    const data::Dataset ds = f.dataset();
    TraceOptions o;
    o.batch = 2;
    const ActivationTrace t = collect_trace(model, ds, o);
    // All positions are sampled in row order, so row 0 comes first.
    std::vector<std::size_t> capture;
    std::size_t first_row_targets = 0;
    const auto row0 = ds.batch(std::vector<std::size_t>{0}, 0, 0);
    for (std::size_t i = 0; i < row0.targets.size(); ++i) {
        if (row0.targets[i] != data::kIgnore) {
            capture.push_back(i);
            ++first_row_targets;
        }
    }
    core::Tape tape(false);
    arch::ForwardOptions fo;
    fo.capture_rows = &capture;
    const auto out = arch::forward(model, tape, arch::TokenGrid{1, ds.seq(), row0.input_ids}, fo);
    for (std::size_t s = 0; s < t.sites.size(); ++s) {
        for (std::size_t r = 0; r < first_row_targets; ++r) {
            for (std::size_t j = 0; j < f.spec.hidden; ++j) EXPECT_EQ(t.reps[s](r, j), out.trace->reps[s](r, j));
        }
    }
}

TEST(Trace, NothingEligibleIsAnError) {
    TraceFixture f(arch::Family::Bert);
    arch::Model model = arch::build_model(f.spec, core::SeededRng(1));
    TraceOptions o;
    o.policy = PositionPolicy::MaskedPositions;
    EXPECT_ANY_THROW(collect_trace(model, f.dataset({}), o));
}

TEST(Trace, PolicyMustMatchObjective) {
    TraceFixture f(arch::Family::Gpt);
    arch::Model model = arch::build_model(f.spec, core::SeededRng(1));
    TraceOptions o;
    o.policy = PositionPolicy::MaskedPositions;
    EXPECT_THROW(collect_trace(model, f.dataset(), o), std::invalid_argument);
}

TEST(Trace, FileRoundTripAtFloatPrecision) {
    TraceFixture f(arch::Family::Gpt);
    arch::Model model = arch::build_model(f.spec, core::SeededRng(1));
    TraceOptions o;
    o.sample_budget = 25;
    ActivationTrace t = collect_trace(model, f.dataset(), o);
    t.meta["model"] = "gpt-tiny";
    const auto path = std::filesystem::temp_directory_path() / "combolab_trace_test.bin";
    write_trace(path, t);
    const ActivationTrace back = read_trace(path);
    std::filesystem::remove(path);
    EXPECT_EQ(back.sites, t.sites);
    EXPECT_EQ(back.targets, t.targets);
    EXPECT_EQ(back.meta, t.meta);
    for (std::size_t s = 0; s < t.sites.size(); ++s) {
        for (std::size_t i = 0; i < t.reps[s].size(); ++i) {
            EXPECT_EQ(back.reps[s].values()[i], static_cast<double>(static_cast<float>(t.reps[s].values()[i])));
        }
    }
}

TEST(Tp, ZeroRowsCountTowardMinCountButNotTheMean) {
    core::Tensor x({4, 2}, 0.0);
    x(0, 0) = 2.0;
    x(1, 1) = 3.0;
    const TpCentroids c = tp_centroids(x, std::vector<int>{1, 1, 1, 1}, 4);
    ASSERT_EQ(c.tokens, std::vector<int>{1});
    EXPECT_EQ(c.zero_rows, 2u);
    EXPECT_DOUBLE_EQ(c.vectors(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(c.vectors(0, 1), 0.5);
}
