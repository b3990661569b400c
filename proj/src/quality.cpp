#include "fairaudit/quality.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "fairaudit/util.hpp"

namespace fairaudit::quality {

double estimate_snr(std::span<const float> samples, const FrameConfig& cfg) {
  if (cfg.sample_rate <= 0) throw std::invalid_argument("estimate_snr: bad sample rate");
  const std::size_t frame_len =
      static_cast<std::size_t>(std::lround(cfg.frame_ms * cfg.sample_rate / 1000.0));
  const std::size_t hop =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(cfg.hop_ms * cfg.sample_rate / 1000.0)));
  if (frame_len == 0) throw std::invalid_argument("estimate_snr: zero-length frame");
  if (samples.size() < frame_len)
    throw std::invalid_argument("estimate_snr: input shorter than one frame");

  bool any_nonzero = false;
  for (float s : samples)
    if (s != 0.0f) {
      any_nonzero = true;
      break;
    }
  if (!any_nonzero) throw std::invalid_argument("silent recording");

  // Frame power is mean-removed (AC) power, so a DC-only signal carries no
  // energy and degenerates to the +60 dB clamp rather than a fake 0 dB.
  std::vector<double> powers;
  for (std::size_t start = 0; start + frame_len <= samples.size(); start += hop) {
    double mean = 0.0;
    for (std::size_t k = 0; k < frame_len; ++k) mean += samples[start + k];
    mean /= static_cast<double>(frame_len);
    double acc = 0.0;
    for (std::size_t k = 0; k < frame_len; ++k) {
      const double v = samples[start + k] - mean;
      acc += v * v;
    }
    powers.push_back(acc / static_cast<double>(frame_len));
  }
  std::sort(powers.begin(), powers.end());

  const double signal = percentile_sorted(powers, cfg.signal_percentile);
  const double noise = percentile_sorted(powers, cfg.noise_percentile);
  double snr;
  if (noise <= 0.0) {
    snr = 60.0;  // no measurable noise floor
  } else if (signal <= 0.0) {
    snr = -20.0;
  } else {
    snr = 10.0 * std::log10(signal / noise);
  }
  return std::clamp(snr, -20.0, 60.0);
}

namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace

WavData read_wav(const std::filesystem::path& path) {
  const std::string raw = read_file(path);
  const auto* data = reinterpret_cast<const unsigned char*>(raw.data());
  const std::size_t size = raw.size();
  auto bad = [&](const std::string& why) -> std::runtime_error {
    return std::runtime_error(path.string() + ": " + why);
  };

  if (size < 12 || std::memcmp(data, "RIFF", 4) != 0 || std::memcmp(data + 8, "WAVE", 4) != 0)
    throw bad("not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t sample_rate = 0;
  std::size_t data_off = 0, data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= size) {
    const std::uint32_t chunk_len = read_u32(data + pos + 4);
    const unsigned char* id = data + pos;
    const std::size_t body = pos + 8;
    if (body + chunk_len > size) throw bad("truncated chunk");
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (chunk_len < 16) throw bad("short fmt chunk");
      format = read_u16(data + body);
      channels = read_u16(data + body + 2);
      sample_rate = read_u32(data + body + 4);
      bits = read_u16(data + body + 14);
    } else if (std::memcmp(id, "data", 4) == 0) {
      data_off = body;
      data_len = chunk_len;
    }
    pos = body + chunk_len + (chunk_len & 1);  // chunks are word-aligned
  }

  if (sample_rate == 0 || data_off == 0) throw bad("missing fmt or data chunk");
  if (channels < 1 || channels > 2) throw bad("unsupported channel count");
  const bool pcm16 = format == 1 && bits == 16;
  const bool float32 = format == 3 && bits == 32;
  if (!pcm16 && !float32) throw bad("unsupported encoding (need PCM16 or float32)");

  const std::size_t bytes_per_sample = bits / 8;
  const std::size_t frame_bytes = bytes_per_sample * channels;
  const std::size_t n_frames = data_len / frame_bytes;

  WavData out;
  out.sample_rate = static_cast<int>(sample_rate);
  out.samples.reserve(n_frames);
  for (std::size_t f = 0; f < n_frames; ++f) {
    const unsigned char* p = data + data_off + f * frame_bytes;  // channel 0
    if (pcm16) {
      const std::int16_t v = static_cast<std::int16_t>(p[0] | (p[1] << 8));
      out.samples.push_back(static_cast<float>(v) / 32768.0f);
    } else {
      float v;
      std::memcpy(&v, p, 4);
      out.samples.push_back(v);
    }
  }
  return out;
}

std::set<std::string> load_lexicon(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open lexicon: " + path.string());
  std::set<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (!line.empty()) out.insert(line);
  }
  if (out.empty()) throw std::runtime_error("empty lexicon: " + path.string());
  return out;
}

double nonstandard_ratio(std::span<const std::string> tokens,
                         const std::set<std::string>& lexicon) {
  if (tokens.empty()) throw std::invalid_argument("nonstandard_ratio: empty token list");
  std::size_t misses = 0;
  for (const auto& t : tokens)
    if (!lexicon.count(t)) ++misses;
  return static_cast<double>(misses) / static_cast<double>(tokens.size());
}

QualityFilterResult quality_filter(const Corpus& corpus,
                                   const std::map<std::string, double>& snr_by_utterance,
                                   const std::map<std::string, double>& ratio_by_utterance,
                                   const QualityThresholds& thresholds) {
  QualityFilterResult out;
  std::set<std::string> removed;

  for (const auto& u : corpus.utterances()) {
    auto snr_it = snr_by_utterance.find(u.utterance_id);
    if (snr_it != snr_by_utterance.end() && snr_it->second < thresholds.min_snr_db) {
      out.removals.push_back({u.utterance_id, "snr-below-threshold", snr_it->second});
      removed.insert(u.utterance_id);
      continue;
    }
    if (thresholds.max_nonstandard_ratio) {
      auto r_it = ratio_by_utterance.find(u.utterance_id);
      if (r_it != ratio_by_utterance.end() && r_it->second > *thresholds.max_nonstandard_ratio) {
        out.removals.push_back({u.utterance_id, "nonstandard-ratio-above-threshold", r_it->second});
        removed.insert(u.utterance_id);
      }
    }
  }

  if (snr_by_utterance.empty())
    out.notes.push_back("snr gate skipped: no snr values available");
  if (thresholds.max_nonstandard_ratio && ratio_by_utterance.empty())
    out.notes.push_back("text-complexity gate skipped: no ratio values available");

  Corpus filtered = corpus.without_utterances(removed, &out.dropped_speakers);
  if (!snr_by_utterance.empty()) {
    std::vector<Utterance> stamped = filtered.utterances();
    for (auto& u : stamped) {
      auto it = snr_by_utterance.find(u.utterance_id);
      if (it != snr_by_utterance.end()) u.snr_db = it->second;
    }
    Corpus restamped(filtered.speakers(), std::move(stamped), filtered.schema());
    restamped.set_merge_log(filtered.merge_log());
    filtered = std::move(restamped);
  }
  out.corpus = std::move(filtered);
  return out;
}

}  // namespace fairaudit::quality
