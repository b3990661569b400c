#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "fairaudit/corpus.hpp"

namespace fairaudit::synth {

struct DvSpec {
  std::string name;
  std::vector<std::string> values;
  /// Marginal sampling weights for total_speakers mode; uniform when empty.
  std::vector<double> probabilities;
};

/// A latent per-speaker flag whose prevalence differs by SG (the classic
/// imbalanced-comorbidity construction). Offset is added to the speaker's
/// true error rate when the flag fires.
struct ConfounderSpec {
  std::string name;
  double offset = 0.0;
  std::map<std::string, double> prevalence_by_sg;  // "dv=value" -> probability
  double default_prevalence = 0.0;
  /// When set the flag is also written into the schema/demographics as a
  /// yes/no DV, so audits can condition on it.
  bool expose_as_dv = false;
};

struct SynthSpec {
  std::vector<DvSpec> dvs;
  std::optional<int> speakers_per_cell;  // exactly one of these two is set
  std::optional<int> total_speakers;
  int utterances_per_speaker_min = 10;
  int utterances_per_speaker_max = 10;
  double base_error_rate = 0.1;
  std::map<std::string, double> sg_offsets;  // "dv=value" -> additive rate offset
  std::vector<ConfounderSpec> confounders;
  double speaker_noise_sd = 0.0;  // between-speaker sigma
  std::uint64_t seed = 0;

  void check() const;  // throws std::invalid_argument on bad rates/counts
};

struct SpeakerTruth {
  double true_rate = 0.0;
  std::map<std::string, bool> flags;  // confounder name -> fired
};

struct GroundTruth {
  std::map<std::string, SpeakerTruth> by_speaker;
  std::map<std::string, double> sg_true_means;  // "dv=value" -> mean true rate
};

/// Speakers per cell (or sampled marginals), per-speaker true rate =
/// clamp(base + applicable offsets + noise, 0.005, 0.95); each reference
/// token is independently replaced by a fixed out-of-lexicon token with
/// probability equal to the speaker's rate, so expected utterance WER equals
/// the rate exactly. Pure function of (spec, seed): every speaker draws from
/// its own substream keyed on (seed, speaker_id).
std::pair<Corpus, GroundTruth> generate(const SynthSpec& spec);

/// Closed-form expected mean true rate for sg = "dv=value": base + own
/// offset + expected other-DV offsets + sum of prevalence*offset over
/// confounders, taking the cell distribution into account. Clamping is
/// ignored, so keep rates interior when using this as an oracle.
double expected_group_mean(const SynthSpec& spec, const std::string& sg);

/// Words the reference templates draw from (all "standard" by construction).
const std::set<std::string>& builtin_lexicon();

SynthSpec parse_synth_spec(std::string_view json_text, const std::string& origin);
std::string serialize_ground_truth(const GroundTruth& gt);

}  // namespace fairaudit::synth
