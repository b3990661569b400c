#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fairaudit/scoring.hpp"
#include "fairaudit/synth.hpp"

using namespace fairaudit;

namespace {

synth::SynthSpec basic_spec() {
  synth::SynthSpec spec;
  spec.dvs.push_back({"gender", {"female", "male"}, {}});
  spec.speakers_per_cell = 10;
  spec.utterances_per_speaker_min = spec.utterances_per_speaker_max = 10;
  spec.base_error_rate = 0.1;
  spec.speaker_noise_sd = 0.0;
  spec.seed = 7;
  return spec;
}

synth::SynthSpec parkinsons_spec() {
  // the imbalanced-comorbidity construction: same base rate for both
  // genders, but the flag fires for 1 in 20 men vs 1 in 100 women
  synth::SynthSpec spec;
  spec.dvs.push_back({"gender", {"female", "male"}, {}});
  spec.speakers_per_cell = 400;
  spec.utterances_per_speaker_min = spec.utterances_per_speaker_max = 12;
  spec.base_error_rate = 0.1;
  spec.speaker_noise_sd = 0.02;
  spec.seed = 11;
  synth::ConfounderSpec conf;
  conf.name = "parkinsons";
  conf.offset = 0.3;
  conf.prevalence_by_sg = {{"gender=male", 0.05}, {"gender=female", 0.01}};
  conf.expose_as_dv = true;
  spec.confounders.push_back(conf);
  return spec;
}

double measured_sg_mean(const Corpus& corpus, const scoring::ScoreMap& scores,
                        const std::string& dv, const std::string& value) {
  const auto speaker = scoring::speaker_scores(corpus, scores);
  double sum = 0.0;
  int n = 0;
  for (const auto& s : speaker) {
    if (corpus.find_speaker(s.speaker_id)->value_of(dv) != value) continue;
    sum += s.mean_wer;
    ++n;
  }
  REQUIRE(n > 0);
  return sum / n;
}

}  // namespace

TEST_CASE("generate: flat spec yields per-speaker means near the base rate") {
  auto spec = basic_spec();
  spec.utterances_per_speaker_min = spec.utterances_per_speaker_max = 100;
  const auto [corpus, truth] = synth::generate(spec);
  CHECK(corpus.speakers().size() == 20);
  CHECK(corpus.utterances().size() == 2000);

  const auto scores = scoring::score_corpus(corpus);
  const auto speaker = scoring::speaker_scores(corpus, scores);
  REQUIRE(speaker.size() == 20);
  for (const auto& s : speaker)
    CHECK(std::fabs(s.mean_wer - 0.1) < 0.02);  // binomial expectation, ~1000 tokens each
  for (const auto& [id, st] : truth.by_speaker) CHECK(st.true_rate == doctest::Approx(0.1));
}

TEST_CASE("generate: same seed is byte-identical, different seed is not") {
  const auto spec = basic_spec();
  const auto [c1, t1] = synth::generate(spec);
  const auto [c2, t2] = synth::generate(spec);
  CHECK(serialize_manifest(c1) == serialize_manifest(c2));
  CHECK(serialize_schema(c1) == serialize_schema(c2));
  CHECK(synth::serialize_ground_truth(t1) == synth::serialize_ground_truth(t2));

  auto spec3 = spec;
  spec3.seed = 8;
  const auto [c3, t3] = synth::generate(spec3);
  CHECK(serialize_manifest(c1) != serialize_manifest(c3));
}

TEST_CASE("generate: corpus round-trips through the manifest format") {
  const auto [corpus, truth] = synth::generate(basic_spec());
  const auto doc = parse_schema(serialize_schema(corpus), "schema");
  const auto reloaded = parse_manifest(serialize_manifest(corpus), doc, "manifest");
  CHECK(serialize_manifest(reloaded) == serialize_manifest(corpus));
  const auto rep = validate(reloaded, reloaded.schema());
  CHECK(rep.ok());
}

TEST_CASE("expected_group_mean: closed-form oracle") {
  SUBCASE("no offsets anywhere gives the base rate") {
    const auto spec = basic_spec();
    CHECK(synth::expected_group_mean(spec, "gender=female") == doctest::Approx(0.1));
    CHECK(synth::expected_group_mean(spec, "gender=male") == doctest::Approx(0.1));
  }
  SUBCASE("prevalence-weighted confounder contribution") {
    const auto spec = parkinsons_spec();
    CHECK(synth::expected_group_mean(spec, "gender=male") ==
          doctest::Approx(0.1 + 0.05 * 0.3).epsilon(1e-12));
    CHECK(synth::expected_group_mean(spec, "gender=female") ==
          doctest::Approx(0.1 + 0.01 * 0.3).epsilon(1e-12));
  }
  SUBCASE("own offset plus balanced other-DV offsets") {
    auto spec = basic_spec();
    spec.dvs.push_back({"native", {"yes", "no"}, {}});
    spec.sg_offsets["gender=male"] = 0.05;
    spec.sg_offsets["native=no"] = 0.1;
    // male cells average the native offset over its two values
    CHECK(synth::expected_group_mean(spec, "gender=male") ==
          doctest::Approx(0.1 + 0.05 + 0.05).epsilon(1e-12));
    CHECK(synth::expected_group_mean(spec, "native=no") ==
          doctest::Approx(0.1 + 0.1 + 0.025).epsilon(1e-12));
  }
  SUBCASE("unknown SG throws") {
    CHECK_THROWS_AS(synth::expected_group_mean(basic_spec(), "gender=alien"),
                    std::invalid_argument);
    CHECK_THROWS_AS(synth::expected_group_mean(basic_spec(), "nonsense"), std::invalid_argument);
  }
}

TEST_CASE("ground-truth SG means approach the closed form at 2000 speakers") {
  auto spec = parkinsons_spec();
  spec.speakers_per_cell = 1000;  // 2000 speakers total
  spec.utterances_per_speaker_min = spec.utterances_per_speaker_max = 1;
  const auto [corpus, truth] = synth::generate(spec);
  (void)corpus;
  CHECK(std::fabs(truth.sg_true_means.at("gender=male") -
                  synth::expected_group_mean(spec, "gender=male")) < 0.005);
  CHECK(std::fabs(truth.sg_true_means.at("gender=female") -
                  synth::expected_group_mean(spec, "gender=female")) < 0.005);
}

TEST_CASE("parkinsons scenario: men measure worse than women marginally") {
  const auto spec = parkinsons_spec();
  const auto [corpus, truth] = synth::generate(spec);
  const auto scores = scoring::score_corpus(corpus);
  const double men = measured_sg_mean(corpus, scores, "gender", "male");
  const double women = measured_sg_mean(corpus, scores, "gender", "female");
  CHECK(men > women);
  // exposure writes the flag into demographics and schema
  CHECK(corpus.schema().find_dv("parkinsons") != nullptr);
  int exposed = 0;
  for (const auto& s : corpus.speakers())
    if (s.value_of("parkinsons") == "yes") ++exposed;
  int flagged = 0;
  for (const auto& [id, st] : truth.by_speaker)
    if (st.flags.at("parkinsons")) ++flagged;
  CHECK(exposed == flagged);
}

TEST_CASE("measured speaker WER converges to the true rate with many utterances") {
  auto spec = basic_spec();
  spec.speakers_per_cell = 3;
  spec.speaker_noise_sd = 0.05;
  spec.base_error_rate = 0.2;
  spec.utterances_per_speaker_min = spec.utterances_per_speaker_max = 200;
  const auto [corpus, truth] = synth::generate(spec);
  const auto scores = scoring::score_corpus(corpus);
  const auto speaker = scoring::speaker_scores(corpus, scores);
  for (const auto& s : speaker) {
    const double expect = truth.by_speaker.at(s.speaker_id).true_rate;
    CHECK(std::fabs(s.mean_wer - expect) < 0.02);
  }
}

TEST_CASE("corruption token stays out of the builtin lexicon") {
  const auto& lex = synth::builtin_lexicon();
  CHECK(!lex.empty());
  CHECK(lex.count("zxqv") == 0);
  // references use only lexicon words
  const auto [corpus, truth] = synth::generate(basic_spec());
  (void)truth;
  for (const auto& u : corpus.utterances()) {
    for (const auto& tok : scoring::normalize(u.reference)) CHECK(lex.count(tok) == 1);
    break;  // one utterance is enough for the reference check
  }
}

TEST_CASE("utterance count ranges and total_speakers mode") {
  synth::SynthSpec spec;
  spec.dvs.push_back({"gender", {"female", "male"}, {0.5, 0.5}});
  spec.total_speakers = 50;
  spec.utterances_per_speaker_min = 3;
  spec.utterances_per_speaker_max = 7;
  spec.base_error_rate = 0.1;
  spec.seed = 5;
  const auto [corpus, truth] = synth::generate(spec);
  (void)truth;
  CHECK(corpus.speakers().size() == 50);
  for (const auto& s : corpus.speakers()) {
    const auto n = corpus.utterances_of(s.speaker_id).size();
    CHECK(n >= 3);
    CHECK(n <= 7);
    const auto& g = s.value_of("gender");
    CHECK((g == "female" || g == "male"));
  }
}

TEST_CASE("spec validation rejects malformed configurations") {
  synth::SynthSpec spec;
  CHECK_THROWS_AS(spec.check(), std::invalid_argument);  // no DVs
  spec.dvs.push_back({"g", {"a"}, {}});
  CHECK_THROWS_AS(spec.check(), std::invalid_argument);  // neither count set
  spec.speakers_per_cell = 2;
  spec.total_speakers = 2;
  CHECK_THROWS_AS(spec.check(), std::invalid_argument);  // both set
  spec.total_speakers.reset();
  spec.base_error_rate = 1.5;
  CHECK_THROWS_AS(spec.check(), std::invalid_argument);
  spec.base_error_rate = 0.2;
  spec.utterances_per_speaker_max = 0;
  CHECK_THROWS_AS(spec.check(), std::invalid_argument);
  spec.utterances_per_speaker_min = 1;
  spec.utterances_per_speaker_max = 1;
  spec.check();
}

TEST_CASE("parse_synth_spec: json round trip") {
  const char* text = R"({
    "dvs": [{"name": "gender", "values": ["female", "male"]}],
    "speakers_per_cell": 5,
    "utterances_per_speaker": {"min": 2, "max": 4},
    "base_error_rate": 0.12,
    "sg_offsets": {"gender=male": 0.05},
    "confounders": [{"name": "cond", "offset": 0.2,
                     "prevalence": {"gender=male": 0.1}, "expose_as_dv": true}],
    "speaker_noise_sd": 0.01,
    "seed": 99
  })";
  const auto spec = synth::parse_synth_spec(text, "spec");
  CHECK(spec.dvs.size() == 1);
  CHECK(*spec.speakers_per_cell == 5);
  CHECK(spec.utterances_per_speaker_min == 2);
  CHECK(spec.utterances_per_speaker_max == 4);
  CHECK(spec.base_error_rate == doctest::Approx(0.12));
  CHECK(spec.sg_offsets.at("gender=male") == doctest::Approx(0.05));
  CHECK(spec.confounders.size() == 1);
  CHECK(spec.confounders[0].expose_as_dv);
  CHECK(spec.seed == 99);
  CHECK_THROWS_AS(synth::parse_synth_spec("{", "spec"), std::runtime_error);
}
