#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "gradcheck.hpp"
#include "gv/error.hpp"
#include "gv/head.hpp"
#include "gv/perf.hpp"

using namespace gv;
using gv::testing::grad_check;

namespace {

template <class T>
GroupedHeadParams<T> random_params(std::size_t d, const GroupPartition& p, std::mt19937_64& rng,
                                   double stddev = 0.5) {
  auto params = GroupedHeadParams<T>::init(d, p, rng);
  for (auto* t : {&params.group_weight, &params.shared_weight, &params.scale, &params.shift}) {
    auto r = Tensor<T>::randn(t->shape(), rng, T(stddev));
    std::copy(r.values().begin(), r.values().end(), t->values().begin());
  }
  return params;
}

std::vector<double> softmax_ref(const std::vector<double>& x) {
  double mx = *std::max_element(x.begin(), x.end()), z = 0;
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) z += (y[i] = std::exp(x[i] - mx));
  for (auto& v : y) v /= z;
  return y;
}

}  // namespace

TEST(ApplyLinears, HandExample) {
  const auto p = GroupPartition::with_group_size(2, 2);
  GroupedHeadParams<double> params;
  params.group_weight = Tensor<double>({2, 1});
  params.shared_weight = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  params.scale = Tensor<double>::from({1, 2}, {2, 3});
  params.shift = Tensor<double>::from({1, 2}, {1, -1});
  ASSERT_EQ(p.num_groups(), 1u);
  auto h = Tensor<double>::from({1, 2}, {1, 0});
  std::vector<Index> g{0};
  auto out = apply_linears_fast(h, g, params);
  EXPECT_EQ(out.at(0), 3.0);
  EXPECT_EQ(out.at(1), -1.0);
}

TEST(ApplyLinears, IdentityModulationIsSharedLinear) {
  std::mt19937_64 rng(1);
  const auto p = GroupPartition::with_group_size(20, 5);
  auto params = GroupedHeadParams<float>::init(6, p, rng);
  auto h = Tensor<float>::randn({7, 6}, rng, 1.0f);
  std::vector<Index> g{0, 1, 2, 3, 0, 1, 2};
  auto out = apply_linears_fast(h, g, params);
  auto ref = matmul(h, params.shared_weight);
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_EQ(out.at(i), ref.at(i));
}

TEST(ApplyLinears, GroupOutOfRangeThrows) {
  std::mt19937_64 rng(2);
  const auto p = GroupPartition::with_group_size(9, 3);
  auto params = GroupedHeadParams<float>::init(4, p, rng);
  std::vector<Index> g{3};
  EXPECT_THROW(apply_linears_fast(Tensor<float>({1, 4}), g, params), IndexError);
  EXPECT_THROW(apply_linears_slow(Tensor<float>({1, 4}), g, per_group_linears(params)),
               IndexError);
}

TEST(ApplyLinears, FastMatchesSlowRandom) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t G = 1 + rng() % 16, S = 1 + rng() % 16, d = 1 + rng() % 12;
    const std::size_t rows = 1 + rng() % 64;
    const auto p = GroupPartition::with_group_size(G * S, S);
    auto pd = random_params<double>(d, p, rng);
    auto h = Tensor<double>::randn({rows, d}, rng, 1.0);
    std::vector<Index> g(rows);
    for (auto& x : g) x = static_cast<Index>(rng() % p.num_groups());
    auto fast = apply_linears_fast(h, g, pd);
    auto slow = apply_linears_slow(h, g, per_group_linears(pd));
    for (std::size_t i = 0; i < fast.numel(); ++i) ASSERT_NEAR(fast.at(i), slow.at(i), 1e-12);
  }
}

TEST(ApplyLinears, SingleGroupSlowEqualsFastExactly) {
  std::mt19937_64 rng(4);
  const auto p = GroupPartition::with_group_count(8, 1);
  auto params = random_params<float>(5, p, rng);
  // With scale 1 and shift 0 both paths compute the same sums in the same order.
  std::fill(params.scale.values().begin(), params.scale.values().end(), 1.0f);
  std::fill(params.shift.values().begin(), params.shift.values().end(), 0.0f);
  auto h = Tensor<float>::randn({9, 5}, rng, 1.0f);
  std::vector<Index> g(9, 0);
  auto fast = apply_linears_fast(h, g, params);
  auto slow = apply_linears_slow(h, g, per_group_linears(params));
  for (std::size_t i = 0; i < fast.numel(); ++i) EXPECT_EQ(fast.at(i), slow.at(i));
}

TEST(ApplyLinears, RowPermutationPermutesOutput) {
  std::mt19937_64 rng(5);
  const auto p = GroupPartition::with_group_size(12, 4);
  auto params = random_params<double>(3, p, rng);
  auto linears = per_group_linears(params);
  auto h = Tensor<double>::randn({6, 3}, rng, 1.0);
  std::vector<Index> g{2, 0, 1, 2, 1, 0};
  std::vector<std::size_t> perm{5, 3, 0, 1, 4, 2};
  auto hp = Tensor<double>({6, 3});
  std::vector<Index> gp(6);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t c = 0; c < 3; ++c) hp.at(i, c) = h.at(perm[i], c);
    gp[i] = g[perm[i]];
  }
  auto out = apply_linears_slow(h, g, linears);
  auto outp = apply_linears_slow(hp, gp, linears);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(outp.at(i, c), out.at(perm[i], c));
  }
}

TEST(GroupedLoss, SingleGroupHasZeroGroupLoss) {
  std::mt19937_64 rng(6);
  const auto p = GroupPartition::with_group_count(10, 1);
  auto params = random_params<double>(4, p, rng);
  auto h = Tensor<double>::randn({5, 4}, rng, 1.0);
  std::vector<Index> labels{0, 3, 9, 2, 2};
  auto loss = grouped_train_loss(h, labels, p, params);
  EXPECT_EQ(loss.group.item(), 0.0);
  EXPECT_EQ(loss.total.item(), loss.token.item());
}

TEST(GroupedLoss, RandomInitNearLogV) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const auto p = GroupPartition::optimal(100);
    auto params = GroupedHeadParams<float>::init(16, p, rng);
    auto h = Tensor<float>::randn({256, 16}, rng, 1.0f);
    std::vector<Index> labels(256);
    for (auto& l : labels) l = static_cast<Index>(rng() % 100);
    auto loss = grouped_train_loss(h, labels, p, params);
    EXPECT_NEAR(loss.total.item(), std::log(100.0), 0.3) << "seed " << seed;
  }
}

TEST(GroupedLoss, LabelOutOfRangeThrows) {
  std::mt19937_64 rng(7);
  const auto p = GroupPartition::with_group_size(10, 4);
  auto params = GroupedHeadParams<float>::init(3, p, rng);
  std::vector<Index> labels{10};
  EXPECT_THROW(grouped_train_loss(Tensor<float>({1, 3}), labels, p, params), IndexError);
}

TEST(GroupedLoss, GradCheckAllBlocksWithPadding) {
  std::mt19937_64 rng(8);
  const auto p = GroupPartition::with_group_size(10, 4);  // 2 padded ids
  auto params = random_params<double>(5, p, rng);
  auto h = Tensor<double>::randn({6, 5}, rng, 1.0);
  h.set_requires_grad(true);
  std::vector<Index> labels{9, 0, 5, 8, 3, 9};
  auto named = params.named();
  named.push_back({"h", h});
  auto r = grad_check(named, [&] { return grouped_train_loss(h, labels, p, params).total; });
  EXPECT_LT(r.worst_rel, 1e-6) << r.worst_name;
}

TEST(GroupedLoss, EveryBlockGetsGradient) {
  std::mt19937_64 rng(9);
  const auto p = GroupPartition::with_group_size(30, 6);
  auto params = random_params<float>(8, p, rng);
  auto h = Tensor<float>::randn({16, 8}, rng, 1.0f);
  std::vector<Index> labels(16);
  for (auto& l : labels) l = static_cast<Index>(rng() % 30);
  grouped_train_loss(h, labels, p, params).total.backward();
  for (const auto& n : params.named()) {
    double norm = 0;
    for (auto g : n.tensor.grad()) norm += double(g) * g;
    EXPECT_GT(norm, 0.0) << n.name;
  }
}

TEST(DenseLoss, GradCheck) {
  std::mt19937_64 rng(10);
  auto params = DenseHeadParams<double>::init(4, 7, rng);
  auto h = Tensor<double>::randn({5, 4}, rng, 1.0);
  h.set_requires_grad(true);
  std::vector<Index> labels{6, 0, 3, 3, 1};
  auto named = params.named();
  named.push_back({"h", h});
  auto r = grad_check(named, [&] { return dense_train_loss(h, labels, params); });
  EXPECT_LT(r.worst_rel, 1e-6) << r.worst_name;
}

TEST(InferenceDistribution, SumsToOne) {
  std::mt19937_64 rng(11);
  for (std::size_t v : {6u, 37u, 1024u}) {
    for (std::size_t S : {1u, 2u, 5u, 32u}) {
      if (S > v) continue;
      const auto p = GroupPartition::with_group_size(v, S);
      auto params = random_params<float>(8, p, rng, 1.0);
      auto h = Tensor<float>::randn({8}, rng, 1.0f);
      auto dist = inference_distribution<float>(h.values(), p, params);
      ASSERT_EQ(dist.numel(), v);
      double total = 0;
      for (auto x : dist.values()) total += x;
      EXPECT_NEAR(total, 1.0, 1e-6) << v << " " << S;
    }
  }
}

TEST(InferenceDistribution, SingleGroupIsPlainSoftmax) {
  std::mt19937_64 rng(12);
  const auto p = GroupPartition::with_group_count(9, 1);
  auto params = random_params<double>(4, p, rng);
  auto h = Tensor<double>::randn({4}, rng, 1.0);
  auto dist = inference_distribution<double>(h.values(), p, params);
  std::vector<double> logits(9);
  for (std::size_t t = 0; t < 9; ++t) {
    double s = 0;
    for (std::size_t k = 0; k < 4; ++k) s += h.at(k) * params.shared_weight.at(k, t);
    logits[t] = params.scale.at(0, t) * s + params.shift.at(0, t);
  }
  const auto want = softmax_ref(logits);
  for (std::size_t t = 0; t < 9; ++t) EXPECT_NEAR(dist.at(t), want[t], 1e-15);
}

TEST(InferenceDistribution, BruteForceSixTokensTwoGroups) {
  const auto p = GroupPartition::with_group_count(6, 2);
  ASSERT_EQ(p.group_size(), 3u);
  GroupedHeadParams<double> params;
  params.group_weight = Tensor<double>::from({2, 2}, {0.5, -0.25, 1.0, 0.75});
  params.shared_weight = Tensor<double>::from({2, 3}, {1.0, -1.0, 0.5, 0.25, 2.0, -0.5});
  params.scale = Tensor<double>::from({2, 3}, {1.0, 2.0, -1.0, 0.5, 1.5, 3.0});
  params.shift = Tensor<double>::from({2, 3}, {0.0, 0.1, -0.2, 0.3, 0.0, -0.1});
  const std::vector<double> h{0.8, -0.6};

  const auto pg = softmax_ref({h[0] * 0.5 + h[1] * 1.0, h[0] * -0.25 + h[1] * 0.75});
  const std::vector<double> ws{h[0] * 1.0 + h[1] * 0.25, h[0] * -1.0 + h[1] * 2.0,
                               h[0] * 0.5 + h[1] * -0.5};
  std::vector<double> want;
  for (std::size_t g = 0; g < 2; ++g) {
    std::vector<double> logits(3);
    for (std::size_t t = 0; t < 3; ++t) {
      logits[t] = params.scale.at(g, t) * ws[t] + params.shift.at(g, t);
    }
    for (double q : softmax_ref(logits)) want.push_back(pg[g] * q);
  }
  auto dist = inference_distribution<double>(h, p, params);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(dist.at(i), want[i], 1e-12);
  const auto argmax = [](auto&& r) {
    return std::distance(r.begin(), std::max_element(r.begin(), r.end()));
  };
  EXPECT_EQ(argmax(dist.values()), argmax(want));
}

TEST(InferenceDistribution, PaddedIdsAreExcluded) {
  std::mt19937_64 rng(13);
  const auto p = GroupPartition::with_group_size(5, 3);  // 6 slots, one padded
  auto params = random_params<double>(3, p, rng);
  auto h = Tensor<double>::randn({3}, rng, 1.0);
  auto dist = inference_distribution<double>(h.values(), p, params);
  EXPECT_EQ(dist.numel(), 5u);
  double total = 0;
  for (auto x : dist.values()) total += x;
  EXPECT_NEAR(total, 1.0, 1e-14);
}

TEST(InferenceDistribution, NonFiniteHiddenRaises) {
  std::mt19937_64 rng(14);
  const auto p = GroupPartition::with_group_size(6, 3);
  auto params = GroupedHeadParams<float>::init(2, p, rng);
  std::vector<float> h{1.0f, std::nanf("")};
  EXPECT_THROW(inference_distribution<float>(h, p, params), NumericError);
}

TEST(GroupedNll, MatchesLogOfDistribution) {
  std::mt19937_64 rng(15);
  const auto p = GroupPartition::with_group_size(23, 5);
  auto params = random_params<double>(6, p, rng);
  auto h = Tensor<double>::randn({4, 6}, rng, 1.0);
  std::vector<Index> labels{22, 0, 7, 13};
  const auto nll = grouped_nll(h, labels, p, params);
  for (std::size_t r = 0; r < 4; ++r) {
    auto dist = inference_distribution<double>(h.values().subspan(r * 6, 6), p, params);
    EXPECT_NEAR(nll[r], -std::log(dist.at(labels[r])), 1e-12);
  }
}

TEST(DenseHead, DistributionAndNllMatchManualSoftmax) {
  std::mt19937_64 rng(16);
  auto params = DenseHeadParams<double>::init(3, 6, rng);
  for (auto& b : params.bias.values()) b = 0.1 * double(rng() % 7);
  auto h = Tensor<double>::randn({2, 3}, rng, 1.0);
  std::vector<Index> labels{5, 1};
  const auto nll = dense_nll(h, labels, params);
  for (std::size_t r = 0; r < 2; ++r) {
    std::vector<double> logits(6);
    for (std::size_t j = 0; j < 6; ++j) {
      logits[j] = params.bias.at(j);
      for (std::size_t k = 0; k < 3; ++k) logits[j] += h.at(r, k) * params.weight.at(k, j);
    }
    const auto want = softmax_ref(logits);
    auto dist = dense_distribution<double>(h.values().subspan(r * 3, 3), params);
    for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(dist.at(j), want[j], 1e-14);
    EXPECT_NEAR(nll[r], -std::log(want[labels[r]]), 1e-12);
  }
}

TEST(ParameterCount, Formulas) {
  EXPECT_EQ(grouped_parameter_count(64, 32, 32), 64u * 32 + 64 * 32 + 2 * 32 * 32);
  EXPECT_EQ(dense_parameter_count(64, 1024), 64u * 1024 + 1024);
  for (std::size_t v : {1000u, 10000u, 50000u}) {
    const auto s = optimal_group_size(v);
    for (std::size_t d : {3u, 64u, 512u}) {
      EXPECT_LT(grouped_parameter_count(d, s.groups, s.group_size), dense_parameter_count(d, v));
    }
  }
}

TEST(OutputHead, PredictMatchesDistributionArgmax) {
  std::mt19937_64 rng(17);
  for (auto kind : {HeadKind::dense, HeadKind::grouped}) {
    auto head = make_head<double>(kind, 5, 40, 0, rng);
    for (auto& p : head->parameters()) {
      for (auto& x : p.tensor.values()) x = std::normal_distribution<double>(0, 0.5)(rng);
    }
    // 70 rows crosses the dense head's row-block boundary.
    auto h = Tensor<double>::randn({70, 5}, rng, 1.0);
    const auto pred = head->predict(h);
    for (std::size_t r = 0; r < 70; ++r) {
      const auto dist = head->distribution(h.values().subspan(r * 5, 5));
      const auto best = std::max_element(dist.begin(), dist.end()) - dist.begin();
      EXPECT_EQ(pred[r], static_cast<Index>(best));
    }
  }
}

TEST(OutputHead, SaveLoadRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "gv_head_test";
  std::mt19937_64 rng(18);
  for (auto kind : {HeadKind::dense, HeadKind::grouped}) {
    std::filesystem::remove_all(dir);
    auto head = make_head<float>(kind, 4, 30, 0, rng);
    save_head(dir, *head);
    auto back = load_head<float>(dir);
    EXPECT_EQ(back->kind(), kind);
    EXPECT_EQ(back->manifest(), head->manifest());
    auto a = head->parameters(), b = back->parameters();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].name, b[i].name);
      EXPECT_TRUE(std::equal(a[i].tensor.values().begin(), a[i].tensor.values().end(),
                             b[i].tensor.values().begin()));
    }
  }
  auto grouped = make_head<float>(HeadKind::grouped, 4, 30, 0, rng);
  EXPECT_EQ(grouped->manifest(), "head-v1 4 5 6 30");
  std::filesystem::remove_all(dir);
}

TEST(MemoryContract, GroupedPeakGrowsWithSqrtV) {
  const auto dense = perf::measure_head_peak<float>(HeadKind::dense, 4, 32, 10000, 16, 0, 1);
  const auto grouped = perf::measure_head_peak<float>(HeadKind::grouped, 4, 32, 10000, 16, 0, 1);
  EXPECT_GE(double(dense) / double(grouped), 10.0) << dense << " vs " << grouped;
}
