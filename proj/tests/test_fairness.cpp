#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "fairaudit/fairness.hpp"
#include "fairaudit/report.hpp"
#include "fairaudit/synth.hpp"
#include "testutil.hpp"

using namespace fairaudit;
using fairness::AuditConfig;

namespace {

const std::vector<double> kAlphas{0.05, 0.01, 0.001};

scoring::SpeakerScore make_score(const std::string& id, std::vector<double> wers) {
  scoring::SpeakerScore s;
  s.speaker_id = id;
  s.utterance_wers = std::move(wers);
  double sum = 0.0;
  for (double w : s.utterance_wers) sum += w;
  s.mean_wer = sum / static_cast<double>(s.utterance_wers.size());
  return s;
}

/// Corpus whose speakers' demographics follow from index arithmetic plus a
/// per-speaker constant WER realized exactly by token corruption.
Corpus grid_corpus(const std::vector<std::pair<std::string, std::vector<std::string>>>& dvs,
                   const std::function<double(const Speaker&)>& wer_of, int speakers_per_cell,
                   int utterances_per_speaker = 4, int tokens = 10) {
  testutil::CorpusBuilder b;
  std::vector<std::vector<std::string>> values;
  for (const auto& [name, vals] : dvs) {
    b.dv(name, vals);
    values.push_back(vals);
  }
  std::vector<std::size_t> idx(dvs.size(), 0);
  int snum = 0;
  while (true) {
    for (int k = 0; k < speakers_per_cell; ++k) {
      Speaker sp;
      sp.speaker_id = "s" + std::to_string(1000 + snum);
      for (std::size_t d = 0; d < dvs.size(); ++d)
        sp.demographics[dvs[d].first] = values[d][idx[d]];
      const double wer = wer_of(sp);
      const int errors = static_cast<int>(std::lround(wer * tokens));
      b.speakers.push_back(sp);
      for (int u = 0; u < utterances_per_speaker; ++u) {
        const auto [ref, hyp] = testutil::ref_hyp_with_wer(tokens, errors);
        b.utt(sp.speaker_id + "_u" + std::to_string(u), sp.speaker_id, ref, hyp);
      }
      ++snum;
    }
    std::size_t d = dvs.size();
    bool done = true;
    while (d > 0) {
      --d;
      if (++idx[d] < values[d].size()) {
        done = false;
        break;
      }
      idx[d] = 0;
    }
    if (done) break;
  }
  return b.build();
}

std::map<std::string, double> means_map(const std::vector<scoring::SpeakerScore>& scores) {
  std::map<std::string, double> out;
  for (const auto& s : scores) out[s.speaker_id] = s.mean_wer;
  return out;
}

}  // namespace

TEST_CASE("filter_outlier_speakers: the z>3 rule") {
  SUBCASE("extreme speaker among 40 is removed") {
    std::vector<scoring::SpeakerScore> scores;
    for (int i = 0; i < 40; ++i)
      scores.push_back(make_score("s" + std::to_string(i), {0.1 + 0.001 * (i % 5)}));
    scores.push_back(make_score("outlier", {1.2}));
    const auto res = fairness::filter_outlier_speakers(scores, 3.0);
    REQUIRE(res.removals.size() == 1);
    CHECK(res.removals[0].kind == "speaker");
    CHECK(res.removals[0].id == "outlier");
    CHECK(res.removals[0].z > 3.0);
    CHECK(res.retained.size() == 40);
  }
  SUBCASE("homogeneous speakers: nothing removed") {
    std::vector<scoring::SpeakerScore> scores;
    for (int i = 0; i < 10; ++i)
      scores.push_back(make_score("s" + std::to_string(i), {0.2, 0.2}));
    const auto res = fairness::filter_outlier_speakers(scores, 3.0);
    CHECK(res.removals.empty());
    CHECK(res.retained.size() == 10);
  }
  SUBCASE("n=4 cannot reach z=3 even with a huge outlier") {
    std::vector<scoring::SpeakerScore> scores{make_score("a", {0.1}), make_score("b", {0.1}),
                                              make_score("c", {0.11}), make_score("d", {5.0})};
    const auto res = fairness::filter_outlier_speakers(scores, 3.0);
    CHECK(res.removals.empty());
    CHECK(res.retained.size() == 4);
    bool noted = false;
    for (const auto& n : res.notes)
      if (n.find("threshold unreachable") != std::string::npos) noted = true;
    CHECK(noted);
  }
  SUBCASE("max attainable z matches (n-1)/sqrt(n) by brute force") {
    // one extreme value against n-1 equal values maximizes z
    for (int n = 3; n <= 12; ++n) {
      std::vector<double> xs(n - 1, 0.0);
      xs.push_back(1e6);
      const auto zs = stats::z_scores(xs);
      double zmax = 0.0;
      for (double z : zs.scores) zmax = std::max(zmax, z);
      CHECK(zmax == doctest::Approx((n - 1.0) / std::sqrt(double(n))).epsilon(1e-6));
    }
  }
  SUBCASE("intra-speaker utterance pass recomputes the mean") {
    // the outlier utterance is mild enough that its speaker survives the
    // speaker pass (mean 0.113 against peers spread over 0.105..0.15)
    std::vector<scoring::SpeakerScore> scores;
    for (int i = 0; i < 11; ++i) {
      std::vector<double> wers(30, 0.1 + 0.005 * i);
      if (i == 0) wers[3] = 0.5;
      scores.push_back(make_score("s" + std::to_string(i), std::move(wers)));
    }
    const auto res = fairness::filter_outlier_speakers(scores, 3.0);
    bool speaker_removed = false;
    bool utterance_removed = false;
    for (const auto& r : res.removals) {
      if (r.kind == "speaker") speaker_removed = true;
      if (r.kind == "utterance" && r.value == doctest::Approx(0.5)) utterance_removed = true;
    }
    CHECK(!speaker_removed);
    CHECK(utterance_removed);
    const auto& s0 = res.retained.front();
    CHECK(s0.speaker_id == "s0");
    CHECK(s0.utterance_wers.size() == 29);
    CHECK(s0.mean_wer == doctest::Approx(0.1).epsilon(1e-6));
  }
  SUBCASE("fewer than two speakers throws") {
    CHECK_THROWS_AS(
        fairness::filter_outlier_speakers(std::vector<scoring::SpeakerScore>{make_score("a", {0.1})}, 3.0),
        std::invalid_argument);
  }
}

TEST_CASE("relative_error: signed percentages") {
  CHECK(fairness::relative_error(0.12, 0.10) == doctest::Approx(20.0));
  CHECK(fairness::relative_error(0.10, 0.10) == doctest::Approx(0.0));
  CHECK(fairness::relative_error(0.05, 0.10) == doctest::Approx(-50.0));
  CHECK_THROWS_AS(fairness::relative_error(0.1, 0.0), std::invalid_argument);
}

TEST_CASE("wer_gap: max minus min with attaining groups") {
  SUBCASE("worked example") {
    const auto g = fairness::wer_gap({{"a", 20.0}, {"b", -5.0}, {"c", 3.0}});
    CHECK(g.gap_pct == doctest::Approx(25.0));
    CHECK(g.max_sgs == std::vector<std::string>{"a"});
    CHECK(g.min_sgs == std::vector<std::string>{"b"});
  }
  SUBCASE("single group gives zero gap") {
    const auto g = fairness::wer_gap({{"only", 7.0}});
    CHECK(g.gap_pct == 0.0);
    CHECK(g.max_sgs == g.min_sgs);
  }
  SUBCASE("ties list every attaining group lexicographically") {
    const auto g = fairness::wer_gap({{"zz", 10.0}, {"aa", 10.0}, {"mm", -2.0}, {"bb", -2.0}});
    CHECK(g.gap_pct == doctest::Approx(12.0));
    CHECK(g.max_sgs == std::vector<std::string>{"aa", "zz"});
    CHECK(g.min_sgs == std::vector<std::string>{"bb", "mm"});
  }
  SUBCASE("empty input throws") {
    CHECK_THROWS_AS(fairness::wer_gap({}), std::invalid_argument);
  }
  SUBCASE("gap is non-negative and zero iff all equal") {
    std::mt19937 rng(3);
    for (int t = 0; t < 50; ++t) {
      std::map<std::string, double> rel;
      const int n = 1 + rng() % 6;
      for (int i = 0; i < n; ++i)
        rel["g" + std::to_string(i)] = (rng() % 2) ? 5.0 : 5.0 + 0.1 * (rng() % 40);
      const auto g = fairness::wer_gap(rel);
      CHECK(g.gap_pct >= 0.0);
      bool all_equal = true;
      for (const auto& [k, v] : rel) all_equal &= (v == rel.begin()->second);
      CHECK((g.gap_pct == 0.0) == all_equal);
    }
  }
}

TEST_CASE("isolated_effect: single conditioning assignment reduces to the marginal analysis") {
  // one DV only: the empty assignment is the single stratum
  const auto corpus = grid_corpus({{"gender", {"female", "male"}}},
                                  [](const Speaker& s) {
                                    return s.value_of("gender") == "male" ? 0.3 : 0.1;
                                  },
                                  5);
  const auto scores = scoring::score_corpus(corpus);
  const auto speaker = scoring::speaker_scores(corpus, scores);
  const auto means = means_map(speaker);

  const auto iso = fairness::isolated_effect(corpus, means, "gender", 2, kAlphas);
  CHECK(iso.n_strata_nonempty == 1);
  CHECK(iso.n_strata_admissible == 1);
  REQUIRE(iso.per_sg.size() == 2);
  // baseline = 0.2, male rel = +50, female rel = -50
  for (const auto& sg : iso.per_sg) {
    REQUIRE(sg.samples.size() == 1);
    CHECK(sg.status == "insufficient strata");  // one point cannot be tested
    const double expect = sg.sg == "male" ? 50.0 : -50.0;
    CHECK(sg.samples[0] == doctest::Approx(expect).epsilon(1e-9));
  }
  REQUIRE(iso.gap_samples.size() == 1);
  CHECK(iso.gap_samples[0] == doctest::Approx(100.0).epsilon(1e-9));
}

TEST_CASE("isolated_effect: uniform injected effect is significant across strata") {
  // region has 4 values; male offset +0.1 everywhere, tiny per-cell wiggle
  const auto corpus = grid_corpus(
      {{"gender", {"female", "male"}}, {"region", {"n", "e", "s", "w"}}},
      [](const Speaker& s) {
        double w = 0.1;
        if (s.value_of("gender") == "male") w += 0.1;
        if (s.value_of("region") == "e") w += 0.02;  // stratum-level variation
        if (s.value_of("region") == "s") w -= 0.02;
        return w;
      },
      6, 4, 50);
  const auto scores = scoring::score_corpus(corpus);
  const auto means = means_map(scoring::speaker_scores(corpus, scores));

  const auto iso = fairness::isolated_effect(corpus, means, "gender", 2, kAlphas);
  CHECK(iso.n_strata_admissible == 4);
  for (const auto& sg : iso.per_sg) {
    REQUIRE(sg.samples.size() == 4);
    REQUIRE(sg.test.has_value());
    for (double v : sg.samples) {
      if (sg.sg == "male")
        CHECK(v > 0.0);
      else
        CHECK(v < 0.0);
    }
    CHECK(sg.test->p_value < 0.001);
  }
  REQUIRE(iso.gap_test.has_value());
  CHECK(iso.gap_test->p_value < 0.001);
}

TEST_CASE("isolated_effect: confounder imbalance vanishes under conditioning") {
  synth::SynthSpec spec;
  spec.dvs.push_back({"gender", {"female", "male"}, {}});
  spec.speakers_per_cell = 400;
  spec.utterances_per_speaker_min = spec.utterances_per_speaker_max = 15;
  spec.base_error_rate = 0.1;
  spec.speaker_noise_sd = 0.03;
  spec.seed = 21;
  synth::ConfounderSpec conf;
  conf.name = "parkinsons";
  conf.offset = 0.3;
  conf.prevalence_by_sg = {{"gender=male", 0.05}, {"gender=female", 0.01}};
  conf.expose_as_dv = true;
  spec.confounders.push_back(conf);

  const auto [corpus, truth] = synth::generate(spec);
  (void)truth;
  const auto scores = scoring::score_corpus(corpus);
  const auto means = means_map(scoring::speaker_scores(corpus, scores));

  // marginally, men look worse
  double male_sum = 0, female_sum = 0;
  int male_n = 0, female_n = 0;
  for (const auto& s : corpus.speakers()) {
    const double m = means.at(s.speaker_id);
    if (s.value_of("gender") == "male") {
      male_sum += m;
      ++male_n;
    } else {
      female_sum += m;
      ++female_n;
    }
  }
  CHECK(male_sum / male_n > female_sum / female_n);

  // conditioning on the flag: gender effect is not significant
  const auto iso = fairness::isolated_effect(corpus, means, "gender", 2, kAlphas);
  CHECK(iso.n_strata_admissible == 2);
  for (const auto& sg : iso.per_sg) {
    REQUIRE(sg.test.has_value());
    CHECK(sg.test->p_value > 0.05);
  }
}

TEST_CASE("isolated_effect: strata below min_speakers are inadmissible") {
  const auto corpus = grid_corpus({{"gender", {"female", "male"}}, {"site", {"x", "y"}}},
                                  [](const Speaker&) { return 0.2; }, 3);
  const auto scores = scoring::score_corpus(corpus);
  const auto means = means_map(scoring::speaker_scores(corpus, scores));
  const auto iso = fairness::isolated_effect(corpus, means, "gender", 10, kAlphas);
  CHECK(iso.n_strata_nonempty == 2);
  CHECK(iso.n_strata_admissible == 0);
  for (const auto& sg : iso.per_sg) CHECK(sg.status == "no admissible strata");
  CHECK(iso.gap_status == "no admissible strata");
}

TEST_CASE("multivariate_extremes: 2x2 grid matches brute-force recomputation") {
  const auto corpus = grid_corpus(
      {{"g", {"a", "b"}}, {"n", {"y", "z"}}},
      [](const Speaker& s) {
        // distinct mean per cell
        const double base = s.value_of("g") == "a" ? 0.1 : 0.3;
        return base + (s.value_of("n") == "y" ? 0.0 : 0.1);
      },
      4, 4, 10);
  const auto scores = scoring::score_corpus(corpus);
  const auto means = means_map(scoring::speaker_scores(corpus, scores));

  const auto ex = fairness::multivariate_extremes(corpus, means, 2, false, kAlphas);
  REQUIRE(ex.ranked.size() == 4);

  // brute-force oracle: recompute cell means and relative errors directly
  const double baseline = [&] {
    double s = 0;
    for (const auto& [id, m] : means) s += m;
    return s / means.size();
  }();
  std::map<std::string, std::pair<double, int>> cells;
  for (const auto& s : corpus.speakers()) {
    const std::string label = "g=" + s.value_of("g") + "|n=" + s.value_of("n");
    cells[label].first += means.at(s.speaker_id);
    cells[label].second += 1;
  }
  std::vector<std::pair<double, std::string>> expect;
  for (const auto& [label, acc] : cells)
    expect.push_back({100.0 * (acc.first / acc.second - baseline) / baseline, label});
  std::sort(expect.begin(), expect.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(ex.ranked[i].sg == expect[i].second);
    CHECK(ex.ranked[i].relative_error_pct == doctest::Approx(expect[i].first).epsilon(1e-9));
  }
  CHECK(ex.worst_cell == expect.front().second);
  CHECK(ex.best_cell == expect.back().second);
}

TEST_CASE("multivariate_extremes: below-threshold cells land in the underpowered list") {
  testutil::CorpusBuilder b;
  b.dv("g", {"a", "b"});
  for (int i = 0; i < 6; ++i) {
    const std::string id = "s" + std::to_string(i);
    b.speaker(id, {{"g", i < 5 ? "a" : "b"}});
    const auto [ref, hyp] = testutil::ref_hyp_with_wer(10, 1 + (i % 2));
    b.utt("u" + std::to_string(i), id, ref, hyp);
  }
  const auto corpus = b.build();
  const auto scores = scoring::score_corpus(corpus);
  const auto means = means_map(scoring::speaker_scores(corpus, scores));
  const auto ex = fairness::multivariate_extremes(corpus, means, 3, false, kAlphas);
  REQUIRE(ex.ranked.size() == 1);
  CHECK(ex.ranked[0].sg == "g=a");
  REQUIRE(ex.underpowered.size() == 1);
  CHECK(ex.underpowered[0].sg == "g=b");
  CHECK(ex.underpowered[0].underpowered);
}

TEST_CASE("multivariate_extremes: uniform corpus shows no strong effects") {
  synth::SynthSpec spec;
  spec.dvs.push_back({"g", {"a", "b"}, {}});
  spec.dvs.push_back({"n", {"y", "z"}, {}});
  spec.speakers_per_cell = 30;
  spec.utterances_per_speaker_min = spec.utterances_per_speaker_max = 20;
  spec.base_error_rate = 0.2;
  spec.speaker_noise_sd = 0.05;
  spec.seed = 31;
  const auto [corpus, truth] = synth::generate(spec);
  (void)truth;
  const auto scores = scoring::score_corpus(corpus);
  const auto means = means_map(scoring::speaker_scores(corpus, scores));
  const auto ex = fairness::multivariate_extremes(corpus, means, 5, false, kAlphas);
  REQUIRE(ex.ranked.size() == 4);
  const double spread =
      ex.ranked.front().relative_error_pct - ex.ranked.back().relative_error_pct;
  // noise band: the 4-cell range is bounded by ~7 standard errors of a cell
  std::vector<double> all;
  for (const auto& [id, m] : means) all.push_back(m);
  const double se_rel =
      100.0 * stats::sample_sd(all) / (stats::mean(all) * std::sqrt(30.0));
  CHECK(spread < 7.0 * se_rel);
  for (const auto& g : ex.ranked) {
    REQUIRE(g.test.has_value());
    CHECK(g.test->p_value > 0.001);
  }
}

TEST_CASE("relative errors and rankings are invariant under uniform WER scaling") {
  std::mt19937 rng(41);
  const auto corpus = grid_corpus({{"g", {"a", "b"}}, {"n", {"y", "z"}}},
                                  [&rng](const Speaker&) { return 0.1 + 0.01 * (rng() % 20); },
                                  3, 2, 100);
  const auto scores = scoring::score_corpus(corpus);
  auto means = means_map(scoring::speaker_scores(corpus, scores));
  const auto base = fairness::multivariate_extremes(corpus, means, 2, false, kAlphas);

  std::map<std::string, double> scaled;
  for (const auto& [id, m] : means) scaled[id] = 3.7 * m;
  const auto after = fairness::multivariate_extremes(corpus, scaled, 2, false, kAlphas);

  REQUIRE(base.ranked.size() == after.ranked.size());
  for (std::size_t i = 0; i < base.ranked.size(); ++i) {
    CHECK(base.ranked[i].sg == after.ranked[i].sg);
    CHECK(base.ranked[i].relative_error_pct ==
          doctest::Approx(after.ranked[i].relative_error_pct).epsilon(1e-9));
  }
  CHECK(base.worst_cell == after.worst_cell);
  CHECK(base.best_cell == after.best_cell);
}

TEST_CASE("audit: full pipeline on a biased synthetic corpus") {
  synth::SynthSpec spec;
  spec.dvs.push_back({"gender", {"female", "male"}, {}});
  spec.dvs.push_back({"native", {"yes", "no"}, {}});
  spec.speakers_per_cell = 25;
  spec.utterances_per_speaker_min = spec.utterances_per_speaker_max = 15;
  spec.base_error_rate = 0.15;
  spec.sg_offsets["gender=male"] = 0.1;
  spec.speaker_noise_sd = 0.05;
  spec.seed = 51;
  const auto [corpus, truth] = synth::generate(spec);
  (void)truth;

  AuditConfig cfg;
  cfg.workers = 2;
  const auto rep = fairness::audit(corpus, {}, cfg);

  CHECK(rep.n_speakers == 100);
  CHECK(rep.baseline_mean > 0.15);
  // equal utterance counts per speaker: the two estimators coincide
  CHECK(rep.utterance_level_mean == doctest::Approx(rep.baseline_mean).epsilon(1e-9));
  CHECK(rep.sigma_speaker > 0.0);
  CHECK(rep.min_speakers >= 2);
  REQUIRE(rep.marginal.size() == 2);

  const auto& gender = rep.marginal[0];
  CHECK(gender.dv == "gender");
  REQUIRE(gender.groups.size() == 2);
  const auto& female = gender.groups[0];
  const auto& male = gender.groups[1];
  CHECK(male.relative_error_pct > 0.0);
  CHECK(female.relative_error_pct < 0.0);
  REQUIRE(male.test.has_value());
  CHECK(male.test->p_value < 0.001);
  CHECK(gender.gap.gap_pct == doctest::Approx(male.relative_error_pct -
                                              female.relative_error_pct));

  // baseline identity: speaker-count weighted SG means reproduce the baseline
  for (const auto& m : rep.marginal) {
    double weighted = 0.0;
    int n = 0;
    for (const auto& g : m.groups) {
      weighted += g.mean_wer * g.n_speakers;
      n += g.n_speakers;
    }
    CHECK(m.unknown_speakers == 0);
    CHECK(n == rep.n_speakers);
    CHECK(weighted / n == doctest::Approx(rep.baseline_mean).epsilon(1e-12));
  }

  // underpowered flags agree with the reported threshold
  for (const auto& m : rep.marginal)
    for (const auto& g : m.groups) CHECK(g.underpowered == (g.n_speakers < rep.min_speakers));

  // native has no injected effect
  const auto& native = rep.marginal[1];
  for (const auto& g : native.groups) CHECK(std::fabs(g.relative_error_pct) < 10.0);

  // isolated effect: male positive in every admissible stratum
  REQUIRE(rep.isolated.size() == 2);
  const auto& iso_gender = rep.isolated[0];
  CHECK(iso_gender.dv == "gender");
  CHECK(iso_gender.n_strata_admissible == 2);
  for (const auto& sg : iso_gender.per_sg)
    for (std::size_t i = 0; i < sg.samples.size(); ++i)
      CHECK((sg.sg == "male" ? sg.samples[i] > 0 : sg.samples[i] < 0));

  // extremes cover all four populated cells (threshold allowing)
  CHECK(rep.extremes.ranked.size() + rep.extremes.underpowered.size() == 4);
  if (!rep.extremes.ranked.empty()) {
    CHECK(rep.extremes.worst_cell.find("gender=male") != std::string::npos);
    CHECK(rep.extremes.best_cell.find("gender=female") != std::string::npos);
  }
}

TEST_CASE("audit: worker count does not change the report") {
  synth::SynthSpec spec;
  spec.dvs.push_back({"g", {"a", "b", "c"}, {}});
  spec.dvs.push_back({"n", {"y", "z"}, {}});
  spec.speakers_per_cell = 8;
  spec.utterances_per_speaker_min = 3;
  spec.utterances_per_speaker_max = 9;
  spec.base_error_rate = 0.2;
  spec.speaker_noise_sd = 0.05;
  spec.seed = 61;
  const auto [corpus, truth] = synth::generate(spec);
  (void)truth;

  AuditConfig cfg1, cfg8;
  cfg1.workers = 1;
  cfg8.workers = 8;
  cfg1.conditioning_plans = {{"g"}};
  cfg8.conditioning_plans = {{"g"}};
  const auto r1 = fairness::audit(corpus, {}, cfg1);
  const auto r8 = fairness::audit(corpus, {}, cfg8);
  CHECK(report::to_json(r1) == report::to_json(r8));
}

TEST_CASE("audit: empty target list reports only the baseline") {
  const auto corpus = grid_corpus({{"g", {"a", "b"}}},
                                  [](const Speaker&) { return 0.2; }, 3);
  AuditConfig cfg;
  cfg.target_dvs = std::vector<std::string>{};
  const auto rep = fairness::audit(corpus, {}, cfg);
  CHECK(rep.baseline_mean == doctest::Approx(0.2).epsilon(1e-9));
  CHECK(rep.marginal.empty());
  CHECK(rep.isolated.empty());
}

TEST_CASE("audit: zero baseline skips relative analyses with a note") {
  const auto corpus = grid_corpus({{"g", {"a", "b"}}},
                                  [](const Speaker&) { return 0.0; }, 3);
  AuditConfig cfg;
  const auto rep = fairness::audit(corpus, {}, cfg);
  CHECK(rep.baseline_mean == 0.0);
  CHECK(rep.marginal.empty());
  bool noted = false;
  for (const auto& n : rep.notes)
    if (n.find("baseline mean is zero") != std::string::npos) noted = true;
  CHECK(noted);
}

TEST_CASE("audit: speakers without scoreable utterances are dropped and logged") {
  testutil::CorpusBuilder b;
  b.dv("g", {"a", "b"});
  b.speaker("s1", {{"g", "a"}}).speaker("s2", {{"g", "b"}}).speaker("s3", {{"g", "a"}});
  b.utt("u1", "s1", "x y z", "x y z").utt("u2", "s2", "x y z", "x q z");
  b.utt("u3", "s3", "...", "anything");  // normalizes to an empty reference
  const auto corpus = b.build();
  fairness::AuditConfig cfg;
  cfg.z_threshold = 0.0;
  const auto rep = fairness::audit(corpus, {}, cfg);
  CHECK(rep.n_speakers == 2);
  REQUIRE(rep.score_skips.size() == 1);
  CHECK(rep.score_skips[0].utterance_id == "u3");
  bool logged = false;
  for (const auto& d : rep.dropped_speakers)
    if (d.find("s3") != std::string::npos) logged = true;
  CHECK(logged);
}

TEST_CASE("audit: invalid corpus fails in the validate stage") {
  testutil::CorpusBuilder b;
  b.dv("g", {"a"});
  b.speaker("s1", {{"g", "undeclared"}}).speaker("s2", {{"g", "a"}});
  b.utt("u1", "s1", "x y", "x y").utt("u2", "s2", "x y", "x y");
  const auto corpus = b.build();
  try {
    fairness::audit(corpus, {}, {});
    FAIL("expected StageError");
  } catch (const fairness::StageError& e) {
    CHECK(e.stage_name == "validate");
  }
}

TEST_CASE("audit: aggregation and conditional plans feed the report") {
  testutil::CorpusBuilder b;
  b.dv("age", {"18-30", "31-45", "46-55"}, {{"31-45", "middle"}, {"46-55", "middle"}});
  b.dv("g", {"a", "b"});
  std::mt19937 rng(71);
  int n = 0;
  for (const auto* age : {"18-30", "31-45", "46-55"})
    for (const auto* g : {"a", "b"})
      for (int k = 0; k < 4; ++k) {
        const std::string id = "s" + std::to_string(100 + n++);
        b.speaker(id, {{"age", age}, {"g", g}});
        const auto [ref, hyp] = testutil::ref_hyp_with_wer(10, 1 + static_cast<int>(rng() % 3));
        b.utt("u" + id, id, ref, hyp);
      }
  const auto corpus = b.build();

  AuditConfig cfg;
  cfg.conditioning_plans = {{"g", "age"}};
  const auto rep = fairness::audit(corpus, {}, cfg);
  REQUIRE(!rep.aggregation_log.empty());
  // post-aggregation age has two values
  const auto& age_marginal = rep.marginal[0];
  CHECK(age_marginal.groups.size() == 2);
  REQUIRE(rep.conditional.size() == 1);
  CHECK(rep.conditional[0].cells.size() == 4);  // 2 genders x 2 merged ages
}
