#pragma once

#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "fairaudit/corpus.hpp"

namespace fairaudit::scoring {

struct NormalizeConfig {
  bool lowercase = true;
  bool strip_punctuation = true;
  bool keep_intra_word_apostrophes = true;
};

/// Lowercases, strips punctuation (configurable) and splits on whitespace.
/// Apostrophes between letters survive by default ("don't" stays one token).
/// Bytes outside ASCII pass through untouched.
std::vector<std::string> normalize(std::string_view text, const NormalizeConfig& cfg = {});

struct WerBreakdown {
  int substitutions = 0;
  int deletions = 0;
  int insertions = 0;
  int ref_len = 0;
  double wer = 0.0;  // (S+D+I)/ref_len, may exceed 1
};

/// Minimum-cost token alignment with unit costs. Among equal-cost
/// alignments, substitution is preferred over delete+insert (the total never
/// changes, only the split). Throws on an empty reference.
WerBreakdown edit_alignment(std::span<const std::string> ref, std::span<const std::string> hyp);

struct SkipEntry {
  std::string utterance_id;
  std::string reason;
};

struct ScoreMap {
  std::map<std::string, WerBreakdown> by_utterance;
  std::vector<SkipEntry> skipped;  // e.g. empty reference after normalization
};

/// One breakdown per scoreable utterance; skip log for the rest. Parallel
/// over utterances, output independent of worker count.
ScoreMap score_corpus(const Corpus& corpus, const NormalizeConfig& cfg = {}, int workers = 1);

struct SpeakerScore {
  std::string speaker_id;
  std::vector<double> utterance_wers;  // in utterance-id order
  double mean_wer = 0.0;
};

/// Per-speaker mean WER over scored utterances, in speaker-id order.
/// Speakers with zero scored utterances are omitted. With word_weighted the
/// speaker mean is sum(edits)/sum(ref_len) instead of the plain utterance
/// mean (non-default).
std::vector<SpeakerScore> speaker_scores(const Corpus& corpus, const ScoreMap& scores,
                                         bool word_weighted = false);

/// Unweighted mean WER over the given utterances (the utterance-level
/// estimator; biased toward over-represented speakers, reported only for
/// comparison). Throws on an empty group or unscored id.
double group_wer_utterance(const ScoreMap& scores, std::span<const std::string> utterance_ids);

/// Mean of per-speaker mean WER over the group (the speaker-level
/// estimator). Throws on an empty group or a speaker without scores.
double group_wer_speaker(std::span<const SpeakerScore> scores,
                         const std::set<std::string>& speaker_ids);
double group_wer_speaker(std::span<const SpeakerScore> scores);

std::string serialize_score_table(const Corpus& corpus, const ScoreMap& scores);

}  // namespace fairaudit::scoring
