#include <gtest/gtest.h>

#include <cmath>

#include "crw/stats.hpp"
#include "stats_fixtures.hpp"

using namespace crw;
namespace fx = crw::fixtures;

namespace {

ExportData load(const std::vector<json>& rows) { return load_export(rows); }

std::vector<json> concat(std::vector<json> a, const std::vector<json>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// Textbook forms, written independently of the library.

double kappa_from_confusion(const std::vector<std::vector<double>>& m) {
  const std::size_t k = m.size();
  double n = 0, diag = 0, chance = 0;
  for (std::size_t i = 0; i < k; ++i) {
    diag += m[i][i];
    double row = 0, col = 0;
    for (std::size_t j = 0; j < k; ++j) {
      n += m[i][j];
      row += m[i][j];
      col += m[j][i];
    }
    chance += row * col;
  }
  return (n * diag - chance) / (n * n - chance);
}

double fleiss_from_counts(const std::vector<std::vector<double>>& nij, double raters) {
  const double N = static_cast<double>(nij.size());
  const std::size_t k = nij.front().size();
  double pbar = 0;
  std::vector<double> pj(k, 0.0);
  for (const auto& row : nij) {
    double sq = 0;
    for (std::size_t j = 0; j < k; ++j) {
      sq += row[j] * row[j];
      pj[j] += row[j];
    }
    pbar += (sq - raters) / (raters * (raters - 1));
  }
  pbar /= N;
  double pe = 0;
  for (double p : pj) pe += (p / (N * raters)) * (p / (N * raters));
  return (pbar - pe) / (1 - pe);
}

// Pairwise formulation: observed disagreement per unit, expected over all
// pooled pairable values.
double alpha_pairwise(const std::vector<std::vector<std::optional<int>>>& m) {
  std::vector<int> pooled;
  double dobs = 0;
  for (const auto& row : m) {
    std::vector<int> v;
    for (const auto& x : row) {
      if (x) v.push_back(*x);
    }
    if (v.size() < 2) continue;
    double diff = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      for (std::size_t j = 0; j < v.size(); ++j) diff += (i != j && v[i] != v[j]) ? 1 : 0;
    }
    dobs += diff / static_cast<double>(v.size() - 1);
    pooled.insert(pooled.end(), v.begin(), v.end());
  }
  const double n = static_cast<double>(pooled.size());
  double dexp = 0;
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    for (std::size_t j = 0; j < pooled.size(); ++j) dexp += (i != j && pooled[i] != pooled[j]) ? 1 : 0;
  }
  return 1.0 - (dobs / n) / (dexp / (n * (n - 1)));
}

}  // namespace

TEST(Kappa, MatchesConfusionFormOnRandomRatings) {
  Rng rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 5 + rng.below(60);
    const int cats = 2 + static_cast<int>(rng.below(3));
    std::vector<int> a(n), b(n);
    std::vector<std::vector<double>> conf(cats, std::vector<double>(cats, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = static_cast<int>(rng.below(cats));
      b[i] = rng.bernoulli(0.6) ? a[i] : static_cast<int>(rng.below(cats));
      conf[a[i]][b[i]] += 1;
    }
    const auto r = cohen_kappa(std::span<const int>(a), std::span<const int>(b));
    if (r.degenerate) continue;
    EXPECT_NEAR(r.value, kappa_from_confusion(conf), 1e-12);
  }
}

TEST(Kappa, PerfectAndDegenerate) {
  const std::vector<bool> a{true, false, true, false};
  EXPECT_NEAR(cohen_kappa(a, a).value, 1.0, 1e-15);
  const std::vector<bool> ones(5, true);
  const auto r = cohen_kappa(ones, ones);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.value, 0.0);
  const std::vector<int> x{1, 2}, y{1};
  EXPECT_THROW(cohen_kappa(std::span<const int>(x), std::span<const int>(y)), Error);
}

TEST(Kappa, TableMatchesVectors) {
  std::vector<bool> a, b;
  for (auto [x, y, n] : {std::tuple{true, true, 7}, {true, false, 3}, {false, true, 2}, {false, false, 8}}) {
    for (int i = 0; i < n; ++i) {
      a.push_back(x);
      b.push_back(y);
    }
  }
  EXPECT_NEAR(cohen_kappa_table(7, 3, 2, 8).value, cohen_kappa(a, b).value,
              1e-15);
}

TEST(Fleiss, ClassicFourteenRaterExample) {
  const std::vector<std::vector<double>> counts = {
      {0, 0, 0, 0, 14}, {0, 2, 6, 4, 2}, {0, 0, 3, 5, 6}, {0, 3, 9, 2, 0}, {2, 2, 8, 1, 1},
      {7, 7, 0, 0, 0},  {3, 2, 6, 3, 0}, {2, 5, 3, 2, 2}, {6, 5, 2, 1, 0}, {0, 2, 2, 3, 7}};
  std::vector<std::vector<int>> m;
  for (const auto& row : counts) {
    std::vector<int> labels;
    for (int j = 0; j < 5; ++j) labels.insert(labels.end(), static_cast<std::size_t>(row[j]), j);
    m.push_back(labels);
  }
  EXPECT_NEAR(fleiss_kappa(m).value, 0.210, 5e-4);
}

TEST(Fleiss, MatchesCountFormOnRandomMatrices) {
  Rng rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t items = 3 + rng.below(20), raters = 2 + rng.below(5);
    const int cats = 2 + static_cast<int>(rng.below(3));
    std::vector<std::vector<int>> m(items);
    std::vector<std::vector<double>> counts(items, std::vector<double>(cats, 0.0));
    for (std::size_t i = 0; i < items; ++i) {
      const int mode = static_cast<int>(rng.below(cats));
      for (std::size_t r = 0; r < raters; ++r) {
        const int v = rng.bernoulli(0.5) ? mode : static_cast<int>(rng.below(cats));
        m[i].push_back(v);
        counts[i][v] += 1;
      }
    }
    const auto r = fleiss_kappa(m);
    if (r.degenerate) continue;
    EXPECT_NEAR(r.value, fleiss_from_counts(counts, static_cast<double>(raters)), 1e-12);
  }
}

TEST(Fleiss, RaggedAndPerfect) {
  EXPECT_THROW(fleiss_kappa(std::vector<std::vector<int>>{{1, 1}, {1}}), Error);
  const std::vector<std::vector<bool>> same{{true, true}, {false, false}, {true, true}};
  EXPECT_NEAR(fleiss_kappa(same).value, 1.0, 1e-15);
}

TEST(Krippendorff, ReferenceReliabilityData) {
  using O = std::optional<int>;
  const O _;
  // units x coders, four coders over twelve units
  const std::vector<std::vector<O>> m = {
      {1, 1, _, 1}, {2, 2, 3, 2}, {3, 3, 3, 3}, {3, 3, 3, 3}, {2, 2, 2, 2}, {1, 2, 3, 4},
      {4, 4, 4, 4}, {1, 1, 2, 1}, {2, 2, 2, 2}, {_, 5, 5, 5}, {_, _, 1, 1}, {_, 3, _, _}};
  EXPECT_NEAR(krippendorff_alpha(m).value, 0.743, 5e-4);
}

TEST(Krippendorff, MatchesPairwiseFormOnRandomMatrices) {
  Rng rng(13);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t items = 3 + rng.below(15), raters = 2 + rng.below(4);
    std::vector<std::vector<std::optional<int>>> m(items);
    for (auto& row : m) {
      const int mode = static_cast<int>(rng.below(3));
      for (std::size_t r = 0; r < raters; ++r) {
        if (rng.bernoulli(0.2)) row.push_back(std::nullopt);
        else row.push_back(rng.bernoulli(0.6) ? mode : static_cast<int>(rng.below(3)));
      }
    }
    StatResult r;
    try {
      r = krippendorff_alpha(m);
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::InsufficientPairs);
      continue;
    }
    if (r.degenerate) continue;
    EXPECT_NEAR(r.value, alpha_pairwise(m), 1e-12);
  }
}

TEST(Krippendorff, IdenticalCompleteVectorsGiveOne) {
  std::vector<std::vector<std::optional<int>>> m = {{1, 1}, {2, 2}, {1, 1}, {3, 3}};
  EXPECT_NEAR(krippendorff_alpha(m).value, 1.0, 1e-15);
  EXPECT_THROW(krippendorff_alpha({{1, std::nullopt}}), Error);
}

TEST(Correlation, SpearmanUsesAverageRanks) {
  const std::vector<double> x{1, 2, 2, 3}, y{10, 20, 20, 40};
  EXPECT_NEAR(spearman(x, y), 1.0, 1e-12);
  const std::vector<double> c{1, 1, 1, 1};
  EXPECT_THROW(pearson(x, c), Error);
  const auto sa = score_alignment(x, c);
  EXPECT_TRUE(sa.pearson.degenerate);
  EXPECT_TRUE(sa.spearman.degenerate);
  EXPECT_NEAR(sa.mae.value, 1.0, 1e-12);
}

TEST(Bootstrap, DeterministicAndWorkerIndependent) {
  std::vector<double> v;
  Rng rng(3);
  for (int i = 0; i < 50; ++i) v.push_back(rng.uniform());
  auto mean = [](std::span<const double> s) { return mean_of(s); };
  const auto a = bootstrap_ci(v, mean, 1000, 42, 1);
  const auto b = bootstrap_ci(v, mean, 1000, 42, 4);
  EXPECT_EQ(a.low, b.low);
  EXPECT_EQ(a.high, b.high);
  EXPECT_LT(a.low, mean_of(v));
  EXPECT_GT(a.high, mean_of(v));
  const auto c = bootstrap_ci(v, mean, 1000, 43, 1);
  EXPECT_NE(a.low, c.low);
}

// Published cohort figures reproduced from synthetic exports.

TEST(PaperFixture, RubricRelevance) {
  const auto spine = load(fx::relevance_export(1030, 174, 35, 28, "spine"));
  const auto q = rubric_quality(spine.rubrics);
  EXPECT_EQ(q.oracle_criteria, 1030u);
  EXPECT_NEAR(q.relevance_rate, 0.831, 5e-4);
  EXPECT_NEAR(q.modification_rate, 0.034, 5e-4);
  EXPECT_NEAR(q.addition_rate, 0.027, 5e-4);
  EXPECT_EQ(q.validity_rate, 1.0);
  const auto obesity = load(fx::relevance_export(1270, 76, 0, 0, "obesity"));
  const auto qo = rubric_quality(obesity.rubrics);
  EXPECT_NEAR(qo.relevance_rate, 0.940, 5e-4);
  EXPECT_EQ(qo.modification_rate, 0.0);
}

TEST(PaperFixture, InvalidSubmissionsLowerValidityOnly) {
  auto rows = fx::relevance_export(100, 10, 0, 0, "x");
  rows.push_back(fx::rubric_row("r1", "x", "bad", json::array({fx::criterion("c0", 0, 5, true, json(), true)}), true));
  const auto q = rubric_quality(load(rows).rubrics);
  EXPECT_NEAR(q.validity_rate, 10.0 / 11.0, 1e-12);
  EXPECT_NEAR(q.relevance_rate, 0.9, 1e-12);
}

TEST(PaperFixture, InterRaterKappa) {
  const auto spine = load(fx::irr_export(585, 69, 70, 412, "spine"));
  const auto t = rater_agreement_table(spine.rubrics, "r1", "r2");
  EXPECT_EQ(t.tp, 585u);
  EXPECT_EQ(t.fp, 69u);
  EXPECT_EQ(t.fn, 70u);
  EXPECT_EQ(t.tn, 412u);
  EXPECT_NEAR(cohen_kappa_table(t.tp, t.fp, t.fn, t.tn).value, 0.749, 5e-4);
  const auto obesity = load(fx::irr_export(746, 108, 109, 397, "obesity"));
  const auto to = rater_agreement_table(obesity.rubrics, "r1", "r2");
  EXPECT_NEAR(cohen_kappa_table(to.tp, to.fp, to.fn, to.tn).value, 0.658, 5e-4);
}

TEST(PaperFixture, JudgeAlignmentPooled) {
  const auto data = load(concat(fx::judge_export(185, 98, 157, 698, "spine"), fx::judge_export(215, 136, 191, 817, "obesity")));
  const auto ja = judge_alignment(data.rubrics);
  EXPECT_EQ(ja.confusion.tp, 400u);
  EXPECT_EQ(ja.confusion.tn, 1515u);
  EXPECT_NEAR(ja.metrics.accuracy, 0.767, 5e-4);
  EXPECT_NEAR(ja.metrics.kappa.value, 0.419, 5e-4);
  const double p = 400.0 / 634.0, r = 400.0 / 748.0;
  EXPECT_NEAR(ja.metrics.f1, 2 * p * r / (p + r), 1e-12);
  EXPECT_EQ(ja.per_axis_f1.size(), 5u);
}

TEST(JudgeAlignment, MajorityPoolingTiesResolveFalse) {
  const std::vector<bool> split{true, false}, two_one{true, true, false};
  EXPECT_FALSE(pooled_verdict(split));
  EXPECT_TRUE(pooled_verdict(two_one));
  std::vector<json> rows;
  for (const auto& [rater, v] : std::vector<std::pair<std::string, bool>>{{"r1", true}, {"r2", false}}) {
    rows.push_back(fx::rubric_row(rater, "e", "c", json::array({fx::criterion("c0", 0, 5, true, v)})));
  }
  const auto ja = judge_alignment(load(rows).rubrics);
  EXPECT_EQ(ja.confusion.fp, 1u);
}

TEST(PaperFixture, ScoreAlignment) {
  const auto data = load(fx::score_export());
  const auto cs = case_scores(data.rubrics);
  ASSERT_EQ(cs.oracle.size(), 100u);
  // closed form from the multiplicity table
  double abs_sum = 0, sx = 0, sy = 0, sxy = 0, sxx = 0, syy = 0, n = 0;
  for (const auto& [ko, kc, count] : fx::score_multiplicities()) {
    const double x = ko / 10.0, y = kc / 10.0;
    abs_sum += count * std::fabs(x - y);
    sx += count * x;
    sy += count * y;
    sxy += count * x * y;
    sxx += count * x * x;
    syy += count * y * y;
    n += count;
  }
  const double r = (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
  const auto sa = score_alignment(cs.oracle, cs.clinician);
  EXPECT_NEAR(sa.mae.value, abs_sum / n, 1e-12);
  EXPECT_NEAR(sa.mae.value, 0.160, 5e-4);
  EXPECT_NEAR(sa.pearson.value, r, 1e-12);
}

TEST(PaperFixture, BucketsAndStrictWinRate) {
  const auto data = load(fx::bucket_export());
  const auto pm = ab_metrics(data.dyads, ConsensusMode::StrictConsensus);
  ASSERT_EQ(pm.size(), 1u);
  const auto& p = pm.front();
  EXPECT_EQ(p.buckets.total, 86u);
  EXPECT_EQ(p.buckets.strict, 24u);
  EXPECT_EQ(p.buckets.semi, 1u);
  EXPECT_EQ(p.buckets.single, 53u);
  EXPECT_EQ(p.buckets.non_consensus, 8u);
  EXPECT_EQ(p.w_m1, 24u);
  EXPECT_EQ(p.w_m2, 0u);
  EXPECT_EQ(p.decisive.value, 1.0);
  EXPECT_NEAR(*p.decisive.ci_low, 1.0 / (1.0 + kZ95 * kZ95 / 24.0), 1e-12);
  EXPECT_NEAR(*p.decisive.ci_low, 0.862, 5e-4);
  EXPECT_NEAR(*p.decisive.p_value, 3.0 * std::pow(2.0, -24), 1e-18);
}

TEST(AbMetrics, AllVerdictModeCountsEveryRater) {
  const auto data = load(fx::bucket_export());
  const auto p = ab_metrics(data.dyads, ConsensusMode::AllVerdicts).front();
  // 48 strict + semi (1 win, 1 tie) + singles + 8 split
  std::size_t single_m1 = 0;
  for (int i = 0; i < 53; ++i) single_m1 += i % 3 != 0;
  EXPECT_EQ(p.w_m1, 48u + 1u + single_m1 + 8u);
  EXPECT_EQ(p.w_m2, (53u - single_m1) + 8u);
  EXPECT_EQ(p.ties, 1u);
  EXPECT_NEAR(p.win_rate + p.tie_rate + static_cast<double>(p.w_m2) / (p.w_m1 + p.w_m2 + p.ties), 1.0, 1e-12);
}

TEST(PaperFixture, PositionAndLengthBias) {
  const auto data = load(fx::bias_export());
  const auto pos = position_bias(data.dyads);
  EXPECT_EQ(pos.n, 158u);
  EXPECT_NEAR(pos.value, 83.0 / 158.0, 1e-12);
  EXPECT_NEAR(*pos.p_value, 0.58, 5e-3);
  const auto len = length_bias(data.dyads);
  EXPECT_EQ(len.n, 158u);
  EXPECT_NEAR(len.value, 0.987, 5e-4);
}

TEST(Bias, EqualLengthsExcludedAndDegenerate) {
  const auto data = load(fx::effort_export());
  const auto len = length_bias(data.dyads);
  EXPECT_TRUE(len.degenerate);
  EXPECT_EQ(len.n, 0u);
  EXPECT_THROW(position_bias(std::span<const AbDyad>()), Error);
}

TEST(PaperFixture, EffortDiagnostics) {
  const auto data = load(fx::effort_export());
  const auto eff = effort_diagnostics(data.dyads);
  ASSERT_EQ(eff.size(), 1u);
  EXPECT_EQ(eff[0].n, 79u);
  EXPECT_DOUBLE_EQ(*eff[0].median_s, 13.2);
  EXPECT_DOUBLE_EQ(*eff[0].p75_s, 40.8);
  EXPECT_DOUBLE_EQ(*eff[0].p90_s, 93.8);
  EXPECT_EQ(eff[0].redisplayed, 10u);
  EXPECT_EQ(eff[0].revisions, 2u);
  EXPECT_NEAR(eff[0].tie_rate, 8.0 / 79.0, 1e-12);
}

TEST(Export, DisplayMappingResolvesChoices) {
  fx::PairVerdict v{"r1", "A", false};
  const auto row = fx::ab_row("r1", "e", "c", json::array({fx::pair_entry("p", "ours", "base", v)}));
  const auto data = load({row});
  ASSERT_EQ(data.dyads.size(), 1u);
  EXPECT_EQ(data.dyads[0].verdicts[0].choice, Choice::M2);
  auto bad = row;
  bad["payload"]["pairs"][0]["displayedAsA"] = "ours";
  bad["payload"]["pairs"][0]["displayedAsB"] = "ours";
  EXPECT_THROW(load({bad}), Error);
  auto invalid = row;
  invalid["is_invalid"] = true;
  const auto d2 = load({invalid});
  EXPECT_EQ(d2.ab_invalid, 1u);
  EXPECT_TRUE(d2.dyads.empty());
  auto draft = row;
  draft["is_draft"] = true;
  EXPECT_EQ(load({draft}).ab_total, 0u);
}

TEST(AbAgreement, ThreeWayAndDecisiveOnly) {
  std::vector<json> rows;
  const std::vector<std::pair<std::string, std::string>> votes = {{"A", "A"}, {"B", "B"}, {"A", "tie"}, {"tie", "tie"}, {"A", "B"}};
  for (std::size_t i = 0; i < votes.size(); ++i) {
    const std::string cid = "c" + std::to_string(i);
    rows.push_back(fx::ab_row("r1", "e", cid, json::array({fx::pair_entry("p", "m", "n", {"r1", votes[i].first, true})})));
    rows.push_back(fx::ab_row("r2", "e", cid, json::array({fx::pair_entry("p", "m", "n", {"r2", votes[i].second, true})})));
  }
  const auto data = load(rows);
  const auto ag = ab_agreement(data.dyads, "r1", "r2");
  EXPECT_EQ(ag.n_dual, 5u);
  EXPECT_NEAR(ag.percent_agreement, 0.6, 1e-12);
  std::vector<std::vector<double>> conf3(3, std::vector<double>(3, 0.0));
  conf3[0][0] = 1;
  conf3[1][1] = 1;
  conf3[0][2] = 1;
  conf3[2][2] = 1;
  conf3[0][1] = 1;
  EXPECT_NEAR(ag.kappa_3way.value, kappa_from_confusion(conf3), 1e-12);
  EXPECT_NEAR(ag.kappa_ab_only.value, kappa_from_confusion({{1, 1}, {0, 1}}), 1e-12);
}

TEST(BradleyTerry, TwoModelsClosedForm) {
  std::vector<Comparison> comps;
  for (int i = 0; i < 30; ++i) comps.push_back({"a", "b", false});
  for (int i = 0; i < 10; ++i) comps.push_back({"b", "a", false});
  const auto bt = bradley_terry(comps, 200);
  ASSERT_TRUE(bt.converged);
  EXPECT_NEAR(bt.strength[0] / bt.strength[1], 3.0, 1e-6);
  EXPECT_NEAR(bt.strength[0] + bt.strength[1], 1.0, 1e-12);
}

TEST(BradleyTerry, SatisfiesScoreEquations) {
  std::vector<Comparison> comps;
  Rng rng(5);
  const std::vector<std::string> names{"a", "b", "c", "d"};
  const std::vector<double> truth{4, 2, 1, 0.5};
  for (int g = 0; g < 400; ++g) {
    const auto i = rng.below(4);
    auto j = rng.below(3);
    if (j >= i) ++j;
    const bool tie = rng.bernoulli(0.1);
    const bool i_wins = rng.uniform() < truth[i] / (truth[i] + truth[j]);
    comps.push_back(i_wins ? Comparison{names[i], names[j], tie} : Comparison{names[j], names[i], tie});
  }
  const auto bt = bradley_terry_fit(comps);
  ASSERT_TRUE(bt.converged);
  std::map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < bt.models.size(); ++i) idx[bt.models[i]] = i;
  std::vector<double> wins(4, 0.0), expected(4, 0.0);
  for (const auto& c : comps) {
    const auto w = idx[c.winner], l = idx[c.loser];
    wins[w] += c.tie ? 0.5 : 1.0;
    wins[l] += c.tie ? 0.5 : 0.0;
    const double pw = bt.strength[w] / (bt.strength[w] + bt.strength[l]);
    expected[w] += pw;
    expected[l] += 1 - pw;
  }
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(wins[i], expected[i], 1e-5);
  EXPECT_EQ(ranks_of(bt.strength)[idx["a"]], 1u);
}

TEST(BradleyTerry, DisconnectedGraphRejected) {
  const std::vector<Comparison> comps{{"a", "b", false}, {"c", "d", false}};
  try {
    bradley_terry_fit(comps);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DisconnectedGraph);
  }
}

TEST(Report, CoversEveryFamilyAndRendersMarkdown) {
  auto rows = concat(fx::score_export(), fx::irr_export(20, 3, 2, 10, "irr"));
  rows = concat(rows, fx::bucket_export());
  const auto data = load(rows);
  StatsOptions opt;
  opt.bootstrap_resamples = 100;
  const auto r = stats_report(data, opt);
  for (const char* k : {"rubric_quality", "rubric_irr", "judge_alignment", "score_alignment", "ab", "ab_irr",
                        "position_bias", "length_bias", "effort", "bradley_terry"}) {
    ASSERT_TRUE(r.contains(k)) << k;
  }
  EXPECT_EQ(r["ab"][0]["buckets"]["strict"], 24);
  EXPECT_TRUE(r["length_bias"]["degenerate"].get<bool>());
  const auto md = stats_markdown(r);
  EXPECT_NE(md.find("## Judge alignment"), std::string::npos);
  EXPECT_NE(md.find("ours_vs_gpt5"), std::string::npos);
  EXPECT_EQ(stats_report(data, opt).dump(), r.dump());
}

TEST(Report, MissingFamiliesAreMarkedUnavailable) {
  const auto r = stats_report(ExportData{});
  EXPECT_TRUE(r["ab"].contains("unavailable"));
  EXPECT_TRUE(r["rubric_quality"].contains("unavailable"));
  EXPECT_NE(stats_markdown(r).find("_unavailable"), std::string::npos);
}

TEST(Kappa, HandMarginalsAndSymmetry) {
  const std::vector<bool> a{true, true, false, false}, b{true, false, true, false};
  EXPECT_NEAR(cohen_kappa(a, b).value, 0.0, 1e-15);
  Rng rng(17);
  for (int t = 0; t < 50; ++t) {
    std::vector<bool> x, y;
    for (int i = 0; i < 20; ++i) {
      x.push_back(rng.bernoulli(0.5));
      y.push_back(rng.bernoulli(0.5));
    }
    EXPECT_NEAR(cohen_kappa(x, y).value, cohen_kappa(y, x).value, 1e-15);
  }
  const std::vector<std::vector<bool>> single{{true, true}, {true, true}};
  EXPECT_TRUE(fleiss_kappa(single).degenerate);
}

TEST(RubricQuality, CountingExamples) {
  json crit = json::array();
  for (int k = 0; k < 10; ++k) crit.push_back(fx::criterion("c" + std::to_string(k), k, 5, true, true, k == 0));
  crit.push_back(fx::criterion("n1", 0, 3, json(), true, false, true));
  crit.push_back(fx::criterion("n2", 1, 3, json(), true, false, true));
  const auto q = rubric_quality(load({fx::rubric_row("r", "e", "c", crit)}).rubrics);
  EXPECT_NEAR(q.relevance_rate, 0.9, 1e-12);
  EXPECT_EQ(q.modification_rate, 0.0);
  EXPECT_NEAR(q.addition_rate, 0.2, 1e-12);
  const auto plain = rubric_quality(load(fx::relevance_export(50, 0, 0, 0, "p")).rubrics);
  EXPECT_EQ(plain.relevance_rate, 1.0);
  EXPECT_EQ(plain.addition_rate, 0.0);
  EXPECT_THROW(rubric_quality(std::span<const RubricAnnotation>()), Error);
}

TEST(JudgeAlignment, PerfectAgreement) {
  const auto ja = judge_alignment(load(fx::judge_export(50, 0, 0, 50, "e")).rubrics);
  EXPECT_EQ(ja.metrics.accuracy, 1.0);
  EXPECT_NEAR(ja.metrics.kappa.value, 1.0, 1e-15);
  EXPECT_NEAR(ja.metrics.balanced_f1, 1.0, 1e-15);
}

TEST(Correlation, IdenticalAndAntiMonotone) {
  const std::vector<double> x{0.1, 0.5, 0.3, 0.9};
  const auto sa = score_alignment(x, x);
  EXPECT_EQ(sa.mae.value, 0.0);
  EXPECT_NEAR(sa.pearson.value, 1.0, 1e-12);
  const std::vector<double> mono{0.1, 0.3, 0.5, 0.9};
  EXPECT_NEAR(spearman(mono, std::vector<double>{4, 3, 1, 0}), -1.0, 1e-12);
}

TEST(AbMetrics, AllTiesAndEmptyConsensus) {
  std::vector<json> rows;
  for (int i = 0; i < 4; ++i) {
    rows.push_back(fx::ab_row("r1", "e", "c" + std::to_string(i),
                              json::array({fx::pair_entry("p", "m", "n", {"r1", "tie", true})})));
  }
  const auto data = load(rows);
  const auto all = ab_metrics(data.dyads, ConsensusMode::AllVerdicts).front();
  EXPECT_EQ(all.win_rate, 0.0);
  EXPECT_EQ(all.tie_rate, 1.0);
  EXPECT_TRUE(all.decisive.degenerate);
  const auto strict = ab_metrics(data.dyads, ConsensusMode::StrictConsensus).front();
  EXPECT_TRUE(strict.decisive.degenerate);
  EXPECT_THROW(ab_metrics(std::span<const AbDyad>(), ConsensusMode::AllVerdicts), Error);
}

TEST(AbMetrics, StrictWinRatePermutationInvariant) {
  auto data = load(fx::bucket_export());
  const auto a = ab_metrics(data.dyads, ConsensusMode::StrictConsensus).front();
  Rng rng(23);
  rng.shuffle(std::span<AbDyad>(data.dyads));
  const auto b = ab_metrics(data.dyads, ConsensusMode::StrictConsensus).front();
  EXPECT_EQ(a.w_m1, b.w_m1);
  EXPECT_EQ(*a.decisive.ci_low, *b.decisive.ci_low);
}

namespace {

std::vector<json> left_right(int left, int right) {
  std::vector<json> rows;
  for (int i = 0; i < left + right; ++i) {
    fx::PairVerdict v{"r1", i < left ? "A" : "B", true, 300, 100};
    rows.push_back(fx::ab_row("r1", "e", "c" + std::to_string(i), json::array({fx::pair_entry("p", "m", "n", v)})));
  }
  return rows;
}

}  // namespace

TEST(Bias, ExactBinomialArithmetic) {
  const auto ten = position_bias(load(left_right(10, 0)).dyads);
  EXPECT_NEAR(*ten.p_value, 2 * std::pow(0.5, 10), 1e-15);
  const auto half = position_bias(load(left_right(5, 5)).dyads);
  EXPECT_NEAR(*half.p_value, 1.0, 1e-12);
  EXPECT_LE(*half.ci_low, half.value);
  EXPECT_GE(*half.ci_high, half.value);
}

TEST(Bias, ThreeOfFourLongerWins) {
  // every verdict picks pane A; pane A is longer in three of four dyads
  std::vector<json> rows;
  for (int i = 0; i < 4; ++i) {
    fx::PairVerdict v{"r1", "A", true, i < 3 ? 300u : 100u, i < 3 ? 100u : 300u};
    rows.push_back(fx::ab_row("r1", "e", "c" + std::to_string(i), json::array({fx::pair_entry("p", "m", "n", v)})));
  }
  EXPECT_NEAR(length_bias(load(rows).dyads).value, 0.75, 1e-15);
}

TEST(Bootstrap, ConstantSeriesAndCoverage) {
  const std::vector<double> c(20, 0.4);
  const auto ci = bootstrap_mean_ci(c, 200, 1);
  EXPECT_DOUBLE_EQ(ci.low, 0.4);
  EXPECT_DOUBLE_EQ(ci.high, 0.4);
  int covered = 0;
  for (int t = 0; t < 200; ++t) {
    Rng rng(derive_seed(99, t));
    std::vector<double> v(40);
    for (auto& x : v) x = rng.uniform();
    const auto iv = bootstrap_mean_ci(v, 400, derive_seed(7, t));
    covered += iv.low <= 0.5 && 0.5 <= iv.high;
  }
  EXPECT_GE(covered, 180);
}

TEST(Wilson, ContainsEstimateWithinUnitInterval) {
  for (std::size_t n = 1; n <= 40; ++n) {
    for (std::size_t k = 0; k <= n; ++k) {
      const auto iv = wilson_interval(k, n);
      const double p = static_cast<double>(k) / static_cast<double>(n);
      EXPECT_GE(iv.low, 0.0);
      EXPECT_LE(iv.high, 1.0);
      EXPECT_LE(iv.low, p + 1e-12);
      EXPECT_GE(iv.high, p - 1e-12);
    }
  }
}

TEST(BradleyTerry, SymmetricAndRelabelInvariant) {
  const std::vector<Comparison> sym{{"a", "b", false}, {"b", "a", false}, {"a", "b", false}, {"b", "a", false}};
  const auto s = bradley_terry_fit(sym);
  EXPECT_NEAR(s.strength[0], 0.5, 1e-9);
  EXPECT_NEAR(s.strength[1], 0.5, 1e-9);
  std::vector<Comparison> comps, relabeled;
  const std::map<std::string, std::string> rename{{"a", "z"}, {"b", "y"}, {"c", "x"}};
  for (auto [w, l, n] : {std::tuple{"a", "b", 5}, {"b", "a", 2}, {"b", "c", 4}, {"c", "b", 3}, {"a", "c", 6}, {"c", "a", 1}}) {
    for (int i = 0; i < n; ++i) {
      comps.push_back({w, l, false});
      relabeled.push_back({rename.at(w), rename.at(l), false});
    }
  }
  const auto x = bradley_terry_fit(comps), y = bradley_terry_fit(relabeled);
  // x models sorted a,b,c; y sorted x,y,z which is c,b,a
  EXPECT_NEAR(x.strength[0], y.strength[2], 1e-9);
  EXPECT_NEAR(x.strength[1], y.strength[1], 1e-9);
  EXPECT_NEAR(x.strength[2], y.strength[0], 1e-9);
}

TEST(Effort, SingleDyadAndSortOracle) {
  const auto one = load({fx::ab_row("r", "e", "c", json::array({fx::pair_entry("p", "m", "n", {"r", "A", true, 1, 1, 7.5})}))});
  const auto e = effort_diagnostics(one.dyads).front();
  EXPECT_EQ(*e.median_s, 7.5);
  EXPECT_EQ(*e.p75_s, 7.5);
  EXPECT_EQ(*e.p90_s, 7.5);
  const std::vector<double> times{9, 3, 7, 1, 10, 4, 8, 2, 6, 5};
  std::vector<json> rows;
  for (std::size_t i = 0; i < times.size(); ++i) {
    rows.push_back(fx::ab_row("r", "e", "c" + std::to_string(i),
                              json::array({fx::pair_entry("p", "m", "n", {"r", "B", true, 1, 1, times[i]})})));
  }
  const auto d = effort_diagnostics(load(rows).dyads).front();
  auto sorted = times;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(*d.median_s, sorted[4]);
  EXPECT_EQ(*d.p75_s, sorted[7]);
  EXPECT_EQ(*d.p90_s, sorted[8]);
}
