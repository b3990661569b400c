#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "fairaudit/corpus.hpp"

namespace fairaudit::quality {

struct FrameConfig {
  int sample_rate = 16000;
  double frame_ms = 25.0;
  double hop_ms = 10.0;
  double signal_percentile = 85.0;
  double noise_percentile = 15.0;
};

/// Frame-energy percentile SNR: 10*log10(P85 / P15) over frame powers,
/// clamped to [-20, +60] dB. Invariant under uniform gain. Throws on fewer
/// than one full frame or an all-zero ("silent recording") signal.
double estimate_snr(std::span<const float> samples, const FrameConfig& cfg);

struct WavData {
  int sample_rate = 0;
  std::vector<float> samples;  // first channel only
};

/// Minimal RIFF/WAVE reader: PCM 16-bit or IEEE float 32-bit, mono or
/// first-channel-of-stereo. Anything else is a decode error.
WavData read_wav(const std::filesystem::path& path);

/// Lexicon file: UTF-8, one lowercase word per line.
std::set<std::string> load_lexicon(const std::filesystem::path& path);

/// Fraction of tokens outside the lexicon, in [0,1]. Throws on empty input.
double nonstandard_ratio(std::span<const std::string> tokens,
                         const std::set<std::string>& lexicon);

struct QualityThresholds {
  double min_snr_db = 10.0;  // recordings below this are removed (strict <)
  std::optional<std::set<std::string>> lexicon;
  std::optional<double> max_nonstandard_ratio;  // removal on strict >
};

struct RemovalEntry {
  std::string utterance_id;
  std::string reason;  // "snr-below-threshold" | "nonstandard-ratio-above-threshold"
  double value = 0.0;
};

struct QualityFilterResult {
  Corpus corpus;
  std::vector<RemovalEntry> removals;
  std::vector<std::string> dropped_speakers;  // left with zero utterances
  std::vector<std::string> notes;             // e.g. "snr gate skipped: no snr values"
};

/// Removes utterances failing the SNR gate (snr present and < min) or the
/// text-complexity gate (ratio present and > max). Utterances without an
/// SNR value pass the SNR gate. Idempotent.
QualityFilterResult quality_filter(const Corpus& corpus,
                                   const std::map<std::string, double>& snr_by_utterance,
                                   const std::map<std::string, double>& ratio_by_utterance,
                                   const QualityThresholds& thresholds);

}  // namespace fairaudit::quality
