#pragma once

// Shared helpers for the test binaries: throwaway directories, tiny corpus
// builders, and a minimal WAV writer for the quality tests.

#include <unistd.h>

#include <atomic>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "fairaudit/corpus.hpp"

namespace testutil {

namespace fs = std::filesystem;

/// Unique directory under the build tree, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    dir_ = fs::temp_directory_path() /
           ("fairaudit_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
    fs::create_directories(dir_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(dir_, ec);
  }
  const fs::path& path() const { return dir_; }
  fs::path file(const std::string& name) const { return dir_ / name; }

 private:
  fs::path dir_;
};

inline void write_text(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  out << content;
}

/// Builds a corpus directly (no file round-trip) from compact tuples.
struct CorpusBuilder {
  fairaudit::DemographicSchema schema;
  std::vector<fairaudit::Speaker> speakers;
  std::vector<fairaudit::Utterance> utterances;

  CorpusBuilder& dv(const std::string& name, std::vector<std::string> values,
                    std::map<std::string, std::string> aggregate = {}) {
    schema.dvs.push_back({name, std::move(values), std::move(aggregate)});
    return *this;
  }
  CorpusBuilder& speaker(const std::string& id, std::map<std::string, std::string> demo = {}) {
    speakers.push_back({id, std::move(demo)});
    return *this;
  }
  CorpusBuilder& utt(const std::string& id, const std::string& speaker_id, const std::string& ref,
                     const std::string& hyp) {
    fairaudit::Utterance u;
    u.utterance_id = id;
    u.speaker_id = speaker_id;
    u.reference = ref;
    u.hypothesis = hyp;
    utterances.push_back(std::move(u));
    return *this;
  }
  fairaudit::Corpus build() const { return {speakers, utterances, schema}; }
};

/// Reference sentence with exactly `errors` of its `len` tokens corrupted,
/// so the utterance WER is errors/len by construction.
inline std::pair<std::string, std::string> ref_hyp_with_wer(int len, int errors) {
  std::string ref, hyp;
  for (int i = 0; i < len; ++i) {
    if (i) {
      ref += ' ';
      hyp += ' ';
    }
    const std::string tok = "w" + std::to_string(i);
    ref += tok;
    hyp += (i < errors) ? "xx" + std::to_string(i) : tok;
  }
  return {ref, hyp};
}

inline void write_wav_pcm16(const fs::path& p, const std::vector<float>& samples,
                            int sample_rate, int channels = 1) {
  const std::uint32_t n = static_cast<std::uint32_t>(samples.size());
  const std::uint32_t data_bytes = n * 2;
  std::string buf;
  auto u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf += static_cast<char>((v >> (8 * i)) & 0xff);
  };
  auto u16 = [&](std::uint16_t v) {
    for (int i = 0; i < 2; ++i) buf += static_cast<char>((v >> (8 * i)) & 0xff);
  };
  buf += "RIFF";
  u32(36 + data_bytes);
  buf += "WAVE";
  buf += "fmt ";
  u32(16);
  u16(1);  // PCM
  u16(static_cast<std::uint16_t>(channels));
  u32(static_cast<std::uint32_t>(sample_rate));
  u32(static_cast<std::uint32_t>(sample_rate * channels * 2));
  u16(static_cast<std::uint16_t>(channels * 2));
  u16(16);
  buf += "data";
  u32(data_bytes);
  for (float s : samples) {
    const int v = std::max(-32768, std::min(32767, static_cast<int>(s * 32767.0f)));
    u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(v)));
  }
  write_text(p, buf);
}

inline void write_wav_float32(const fs::path& p, const std::vector<float>& samples,
                              int sample_rate) {
  const std::uint32_t n = static_cast<std::uint32_t>(samples.size());
  const std::uint32_t data_bytes = n * 4;
  std::string buf;
  auto u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf += static_cast<char>((v >> (8 * i)) & 0xff);
  };
  auto u16 = [&](std::uint16_t v) {
    for (int i = 0; i < 2; ++i) buf += static_cast<char>((v >> (8 * i)) & 0xff);
  };
  buf += "RIFF";
  u32(36 + data_bytes);
  buf += "WAVE";
  buf += "fmt ";
  u32(16);
  u16(3);  // IEEE float
  u16(1);
  u32(static_cast<std::uint32_t>(sample_rate));
  u32(static_cast<std::uint32_t>(sample_rate * 4));
  u16(4);
  u16(32);
  buf += "data";
  u32(data_bytes);
  for (float s : samples) {
    std::uint32_t bits;
    std::memcpy(&bits, &s, 4);
    u32(bits);
  }
  write_text(p, buf);
}

}  // namespace testutil
