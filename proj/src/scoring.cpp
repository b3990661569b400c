#include "fairaudit/scoring.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>
#include <stdexcept>

#include "fairaudit/util.hpp"

namespace fairaudit::scoring {

namespace {

bool is_word_char(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

}  // namespace

std::vector<std::string> normalize(std::string_view text, const NormalizeConfig& cfg) {
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      tokens.push_back(cur);
      cur.clear();
    }
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      flush();
      continue;
    }
    if (!cfg.strip_punctuation) {
      cur += static_cast<char>(cfg.lowercase ? std::tolower(c) : c);
      continue;
    }
    if (is_word_char(c)) {
      cur += static_cast<char>(cfg.lowercase ? std::tolower(c) : c);
      continue;
    }
    if (c == '\'' && cfg.keep_intra_word_apostrophes && !cur.empty() && i + 1 < text.size() &&
        is_word_char(static_cast<unsigned char>(text[i + 1]))) {
      cur += '\'';
      continue;
    }
    // stripped punctuation does not split a token: "it--is" -> "itis" would
    // be wrong, so treat it as a separator
    flush();
  }
  flush();
  return tokens;
}

WerBreakdown edit_alignment(std::span<const std::string> ref, std::span<const std::string> hyp) {
  if (ref.empty()) throw std::invalid_argument("edit_alignment: empty reference");
  const std::size_t m = ref.size(), n = hyp.size();

  // Full DP table kept for the backtrace; utterances are short.
  std::vector<int> dp((m + 1) * (n + 1));
  auto at = [&](std::size_t i, std::size_t j) -> int& { return dp[i * (n + 1) + j]; };
  for (std::size_t i = 0; i <= m; ++i) at(i, 0) = static_cast<int>(i);
  for (std::size_t j = 0; j <= n; ++j) at(0, j) = static_cast<int>(j);
  for (std::size_t i = 1; i <= m; ++i)
    for (std::size_t j = 1; j <= n; ++j) {
      const int sub = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      at(i, j) = std::min({sub, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }

  // Backtrace, diagonal preferred so equal-cost paths resolve to
  // substitutions rather than delete+insert pairs.
  WerBreakdown out;
  out.ref_len = static_cast<int>(m);
  std::size_t i = m, j = n;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool match = ref[i - 1] == hyp[j - 1];
      if (at(i, j) == at(i - 1, j - 1) + (match ? 0 : 1)) {
        if (!match) ++out.substitutions;
        --i;
        --j;
        continue;
      }
    }
    if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++out.deletions;
      --i;
      continue;
    }
    ++out.insertions;
    --j;
  }
  out.wer = static_cast<double>(out.substitutions + out.deletions + out.insertions) /
            static_cast<double>(out.ref_len);
  return out;
}

ScoreMap score_corpus(const Corpus& corpus, const NormalizeConfig& cfg, int workers) {
  const auto& utts = corpus.utterances();
  struct Slot {
    bool scored = false;
    WerBreakdown b;
    std::string skip_reason;
  };
  std::vector<Slot> slots(utts.size());

  parallel_for(utts.size(), workers, [&](std::size_t i) {
    const Utterance& u = utts[i];
    const auto ref = normalize(u.reference, cfg);
    if (ref.empty()) {
      slots[i].skip_reason = "empty reference after normalization";
      return;
    }
    const auto hyp = normalize(u.hypothesis, cfg);
    slots[i].b = edit_alignment(ref, hyp);
    slots[i].scored = true;
  });

  ScoreMap out;
  for (std::size_t i = 0; i < utts.size(); ++i) {
    if (slots[i].scored)
      out.by_utterance[utts[i].utterance_id] = slots[i].b;
    else
      out.skipped.push_back({utts[i].utterance_id, slots[i].skip_reason});
  }
  return out;
}

std::vector<SpeakerScore> speaker_scores(const Corpus& corpus, const ScoreMap& scores,
                                         bool word_weighted) {
  std::vector<SpeakerScore> out;
  for (const auto& s : corpus.speakers()) {
    SpeakerScore sc;
    sc.speaker_id = s.speaker_id;
    long edits = 0, ref_words = 0;
    for (std::size_t idx : corpus.utterances_of(s.speaker_id)) {
      const auto& u = corpus.utterances()[idx];
      auto it = scores.by_utterance.find(u.utterance_id);
      if (it == scores.by_utterance.end()) continue;
      sc.utterance_wers.push_back(it->second.wer);
      edits += it->second.substitutions + it->second.deletions + it->second.insertions;
      ref_words += it->second.ref_len;
    }
    if (sc.utterance_wers.empty()) continue;
    if (word_weighted) {
      sc.mean_wer = static_cast<double>(edits) / static_cast<double>(ref_words);
    } else {
      double sum = 0.0;
      for (double w : sc.utterance_wers) sum += w;
      sc.mean_wer = sum / static_cast<double>(sc.utterance_wers.size());
    }
    out.push_back(std::move(sc));
  }
  return out;
}

double group_wer_utterance(const ScoreMap& scores, std::span<const std::string> utterance_ids) {
  if (utterance_ids.empty()) throw std::invalid_argument("group_wer_utterance: empty group");
  double sum = 0.0;
  for (const auto& id : utterance_ids) {
    auto it = scores.by_utterance.find(id);
    if (it == scores.by_utterance.end())
      throw std::invalid_argument("group_wer_utterance: no score for utterance '" + id + "'");
    sum += it->second.wer;
  }
  return sum / static_cast<double>(utterance_ids.size());
}

double group_wer_speaker(std::span<const SpeakerScore> scores,
                         const std::set<std::string>& speaker_ids) {
  if (speaker_ids.empty()) throw std::invalid_argument("group_wer_speaker: empty group");
  double sum = 0.0;
  std::size_t found = 0;
  for (const auto& sc : scores) {
    if (!speaker_ids.count(sc.speaker_id)) continue;
    sum += sc.mean_wer;
    ++found;
  }
  if (found != speaker_ids.size())
    throw std::invalid_argument("group_wer_speaker: group contains speakers without scores");
  return sum / static_cast<double>(found);
}

double group_wer_speaker(std::span<const SpeakerScore> scores) {
  if (scores.empty()) throw std::invalid_argument("group_wer_speaker: empty group");
  double sum = 0.0;
  for (const auto& sc : scores) sum += sc.mean_wer;
  return sum / static_cast<double>(scores.size());
}

std::string serialize_score_table(const Corpus& corpus, const ScoreMap& scores) {
  std::string out = "utterance_id\tspeaker_id\tS\tD\tI\tref_len\twer\n";
  for (const auto& u : corpus.utterances()) {
    auto it = scores.by_utterance.find(u.utterance_id);
    if (it == scores.by_utterance.end()) continue;
    const auto& b = it->second;
    out += u.utterance_id + "\t" + u.speaker_id + "\t" + std::to_string(b.substitutions) + "\t" +
           std::to_string(b.deletions) + "\t" + std::to_string(b.insertions) + "\t" +
           std::to_string(b.ref_len) + "\t" + format_g6(b.wer) + "\n";
  }
  return out;
}

}  // namespace fairaudit::scoring
