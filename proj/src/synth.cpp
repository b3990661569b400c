#include "fairaudit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "fairaudit/util.hpp"

namespace fairaudit::synth {

using nlohmann::json;

namespace {

constexpr double kRateFloor = 0.005;
constexpr double kRateCeil = 0.95;
const char* kCorruptToken = "zxqv";  // never appears in any template

// Command-style references, 6-12 tokens each, spoken-assistant register.
const std::vector<std::vector<std::string>>& templates() {
  static const std::vector<std::vector<std::string>> t = [] {
    const std::vector<std::string> lines = {
        "turn on the lights in the kitchen",
        "set a timer for ten minutes please",
        "play some quiet music in the living room",
        "what is the weather going to be tomorrow",
        "remind me to call my sister at noon",
        "add milk and eggs to the shopping list",
        "turn down the volume a little bit",
        "how long will it take to drive downtown",
        "switch off the bedroom lamp in five minutes",
        "tell me the news headlines for this morning",
        "set an alarm for six thirty tomorrow morning",
        "what time does the grocery store close today",
        "play the next song on my running playlist",
        "turn the thermostat up by two degrees",
        "send a message saying i will be late",
        "show me the front door camera on the screen",
        "cancel my alarm for tomorrow morning please",
        "how many cups are in a quart",
        "start the robot vacuum in the hallway",
        "dim the dining room lights to half",
    };
    std::vector<std::vector<std::string>> out;
    for (const auto& line : lines) {
      std::vector<std::string> toks;
      std::istringstream ss(line);
      std::string w;
      while (ss >> w) toks.push_back(w);
      out.push_back(std::move(toks));
    }
    return out;
  }();
  return t;
}

std::string zero_pad(std::size_t v, int width) {
  std::string s = std::to_string(v);
  while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
  return s;
}

double speaker_prevalence(const ConfounderSpec& conf, const Speaker& s) {
  // First declared entry matching one of the speaker's (dv, value) pairs wins.
  for (const auto& [key, p] : conf.prevalence_by_sg) {
    const auto eq = key.find('=');
    if (eq == std::string::npos) continue;
    const std::string dv = key.substr(0, eq);
    const std::string value = key.substr(eq + 1);
    if (s.value_of(dv) == value) return p;
  }
  return conf.default_prevalence;
}

void enumerate_cells(const std::vector<DvSpec>& dvs,
                     const std::function<void(const std::vector<std::size_t>&)>& visit) {
  std::vector<std::size_t> idx(dvs.size(), 0);
  while (true) {
    visit(idx);
    std::size_t k = dvs.size();
    while (k > 0) {
      --k;
      if (++idx[k] < dvs[k].values.size()) break;
      idx[k] = 0;
      if (k == 0) return;
    }
    if (dvs.empty()) return;
  }
}

}  // namespace

void SynthSpec::check() const {
  if (dvs.empty()) throw std::invalid_argument("synth spec: at least one DV required");
  for (const auto& dv : dvs) {
    if (dv.values.empty())
      throw std::invalid_argument("synth spec: DV '" + dv.name + "' has no values");
    if (!dv.probabilities.empty() && dv.probabilities.size() != dv.values.size())
      throw std::invalid_argument("synth spec: probabilities/values size mismatch for DV '" +
                                  dv.name + "'");
    for (double p : dv.probabilities)
      if (!(p >= 0)) throw std::invalid_argument("synth spec: negative probability");
  }
  if (speakers_per_cell.has_value() == total_speakers.has_value())
    throw std::invalid_argument(
        "synth spec: exactly one of speakers_per_cell / total_speakers must be set");
  if ((speakers_per_cell && *speakers_per_cell <= 0) || (total_speakers && *total_speakers <= 0))
    throw std::invalid_argument("synth spec: speaker count must be positive");
  if (utterances_per_speaker_min < 1 || utterances_per_speaker_max < utterances_per_speaker_min)
    throw std::invalid_argument("synth spec: bad utterances_per_speaker range");
  if (!(base_error_rate >= 0.0 && base_error_rate <= 1.0))
    throw std::invalid_argument("synth spec: base_error_rate outside [0,1]");
  for (const auto& c : confounders) {
    for (const auto& [sg, p] : c.prevalence_by_sg)
      if (!(p >= 0.0 && p <= 1.0))
        throw std::invalid_argument("synth spec: prevalence for '" + sg + "' outside [0,1]");
    if (!(c.default_prevalence >= 0.0 && c.default_prevalence <= 1.0))
      throw std::invalid_argument("synth spec: default prevalence outside [0,1]");
  }
  if (speaker_noise_sd < 0) throw std::invalid_argument("synth spec: negative speaker_noise_sd");
}

std::pair<Corpus, GroundTruth> generate(const SynthSpec& spec) {
  spec.check();

  // Lay out speakers and their demographics first (cheap, sequential).
  std::vector<Speaker> speakers;
  if (spec.speakers_per_cell) {
    enumerate_cells(spec.dvs, [&](const std::vector<std::size_t>& idx) {
      for (int k = 0; k < *spec.speakers_per_cell; ++k) {
        Speaker s;
        for (std::size_t d = 0; d < spec.dvs.size(); ++d)
          s.demographics[spec.dvs[d].name] = spec.dvs[d].values[idx[d]];
        speakers.push_back(std::move(s));
      }
    });
  } else {
    speakers.resize(static_cast<std::size_t>(*spec.total_speakers));
  }
  const int width = std::max<int>(4, static_cast<int>(std::to_string(speakers.size()).size()));
  for (std::size_t i = 0; i < speakers.size(); ++i)
    speakers[i].speaker_id = "spk" + zero_pad(i, width);

  // In total_speakers mode the demographics themselves are random draws.
  if (spec.total_speakers) {
    for (auto& s : speakers) {
      Rng rng(derive_seed(spec.seed, s.speaker_id + "/dv"));
      for (const auto& dv : spec.dvs) {
        double total = 0.0;
        std::vector<double> w = dv.probabilities;
        if (w.empty()) w.assign(dv.values.size(), 1.0);
        for (double x : w) total += x;
        double u = rng.uniform() * total;
        std::size_t pick = 0;
        for (; pick + 1 < w.size(); ++pick) {
          if (u < w[pick]) break;
          u -= w[pick];
        }
        s.demographics[dv.name] = dv.values[pick];
      }
    }
  }

  GroundTruth truth;
  std::vector<Utterance> utterances;
  const auto& tpl = templates();

  for (auto& s : speakers) {
    Rng rng(derive_seed(spec.seed, s.speaker_id));
    SpeakerTruth st;

    double rate = spec.base_error_rate;
    for (const auto& [sg, offset] : spec.sg_offsets) {
      const auto eq = sg.find('=');
      if (eq == std::string::npos) continue;
      if (s.value_of(sg.substr(0, eq)) == sg.substr(eq + 1)) rate += offset;
    }
    for (const auto& conf : spec.confounders) {
      const bool fired = rng.bernoulli(speaker_prevalence(conf, s));
      st.flags[conf.name] = fired;
      if (fired) rate += conf.offset;
      if (conf.expose_as_dv) s.demographics[conf.name] = fired ? "yes" : "no";
    }
    if (spec.speaker_noise_sd > 0) rate += rng.normal(0.0, spec.speaker_noise_sd);
    rate = std::clamp(rate, kRateFloor, kRateCeil);
    st.true_rate = rate;

    int n_utt = spec.utterances_per_speaker_min;
    if (spec.utterances_per_speaker_max > spec.utterances_per_speaker_min)
      n_utt = static_cast<int>(rng.uniform_int(
          static_cast<std::uint64_t>(spec.utterances_per_speaker_min),
          static_cast<std::uint64_t>(spec.utterances_per_speaker_max)));

    for (int k = 0; k < n_utt; ++k) {
      const auto& ref = tpl[rng.uniform_int(0, tpl.size() - 1)];
      std::vector<std::string> hyp;
      hyp.reserve(ref.size());
      for (const auto& tok : ref) hyp.push_back(rng.bernoulli(rate) ? kCorruptToken : tok);
      Utterance u;
      u.speaker_id = s.speaker_id;
      u.utterance_id = s.speaker_id + "_u" + zero_pad(static_cast<std::size_t>(k), 4);
      u.reference = join(ref, " ");
      u.hypothesis = join(hyp, " ");
      utterances.push_back(std::move(u));
    }
    truth.by_speaker[s.speaker_id] = std::move(st);
  }

  DemographicSchema schema;
  for (const auto& dv : spec.dvs) schema.dvs.push_back({dv.name, dv.values, {}});
  for (const auto& conf : spec.confounders)
    if (conf.expose_as_dv) schema.dvs.push_back({conf.name, {"no", "yes"}, {}});

  Corpus corpus(std::move(speakers), std::move(utterances), std::move(schema));

  // Per-SG true means over every DV in the emitted schema.
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& s : corpus.speakers()) {
    const double r = truth.by_speaker.at(s.speaker_id).true_rate;
    for (const auto& dv : corpus.schema().dvs) {
      const std::string& v = s.value_of(dv.name);
      if (v == kUnknown) continue;
      auto& slot = acc[dv.name + "=" + v];
      slot.first += r;
      ++slot.second;
    }
  }
  for (const auto& [sg, slot] : acc) truth.sg_true_means[sg] = slot.first / slot.second;

  return {std::move(corpus), std::move(truth)};
}

double expected_group_mean(const SynthSpec& spec, const std::string& sg) {
  spec.check();
  const auto eq = sg.find('=');
  if (eq == std::string::npos) throw std::invalid_argument("expected_group_mean: sg must be 'dv=value'");
  const std::string target_dv = sg.substr(0, eq);
  const std::string target_value = sg.substr(eq + 1);

  bool known = false;
  for (const auto& dv : spec.dvs)
    if (dv.name == target_dv &&
        std::find(dv.values.begin(), dv.values.end(), target_value) != dv.values.end())
      known = true;
  if (!known) throw std::invalid_argument("expected_group_mean: unknown SG '" + sg + "'");

  // Average the exact per-cell expectation over the cell distribution
  // conditioned on the target value.
  double weighted = 0.0, total_w = 0.0;
  enumerate_cells(spec.dvs, [&](const std::vector<std::size_t>& idx) {
    Speaker cell;
    double w = 1.0;
    for (std::size_t d = 0; d < spec.dvs.size(); ++d) {
      const auto& dv = spec.dvs[d];
      cell.demographics[dv.name] = dv.values[idx[d]];
      if (spec.total_speakers && !dv.probabilities.empty()) {
        double norm = 0.0;
        for (double p : dv.probabilities) norm += p;
        w *= dv.probabilities[idx[d]] / norm;
      } else {
        w *= 1.0 / static_cast<double>(dv.values.size());
      }
    }
    if (cell.value_of(target_dv) != target_value) return;
    double rate = spec.base_error_rate;
    for (const auto& [key, offset] : spec.sg_offsets) {
      const auto e2 = key.find('=');
      if (e2 == std::string::npos) continue;
      if (cell.value_of(key.substr(0, e2)) == key.substr(e2 + 1)) rate += offset;
    }
    for (const auto& conf : spec.confounders)
      rate += speaker_prevalence(conf, cell) * conf.offset;
    weighted += w * rate;
    total_w += w;
  });
  if (total_w <= 0) throw std::invalid_argument("expected_group_mean: SG has zero mass");
  return weighted / total_w;
}

const std::set<std::string>& builtin_lexicon() {
  static const std::set<std::string> lex = [] {
    std::set<std::string> out;
    for (const auto& t : templates())
      for (const auto& w : t) out.insert(w);
    return out;
  }();
  return lex;
}

SynthSpec parse_synth_spec(std::string_view json_text, const std::string& origin) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(origin + ": synth spec parse error: " + e.what());
  }
  SynthSpec spec;
  for (const auto& jdv : doc.at("dvs")) {
    DvSpec dv;
    dv.name = jdv.at("name").get<std::string>();
    for (const auto& v : jdv.at("values")) dv.values.push_back(v.get<std::string>());
    if (jdv.contains("probabilities"))
      for (const auto& p : jdv["probabilities"]) dv.probabilities.push_back(p.get<double>());
    spec.dvs.push_back(std::move(dv));
  }
  if (doc.contains("speakers_per_cell")) spec.speakers_per_cell = doc["speakers_per_cell"].get<int>();
  if (doc.contains("total_speakers")) spec.total_speakers = doc["total_speakers"].get<int>();
  if (doc.contains("utterances_per_speaker")) {
    const auto& j = doc["utterances_per_speaker"];
    if (j.is_number()) {
      spec.utterances_per_speaker_min = spec.utterances_per_speaker_max = j.get<int>();
    } else {
      spec.utterances_per_speaker_min = j.at("min").get<int>();
      spec.utterances_per_speaker_max = j.at("max").get<int>();
    }
  }
  if (doc.contains("base_error_rate")) spec.base_error_rate = doc["base_error_rate"].get<double>();
  if (doc.contains("sg_offsets"))
    for (const auto& [sg, v] : doc["sg_offsets"].items()) spec.sg_offsets[sg] = v.get<double>();
  if (doc.contains("confounders")) {
    for (const auto& jc : doc["confounders"]) {
      ConfounderSpec c;
      c.name = jc.at("name").get<std::string>();
      c.offset = jc.at("offset").get<double>();
      if (jc.contains("prevalence"))
        for (const auto& [sg, p] : jc["prevalence"].items())
          c.prevalence_by_sg[sg] = p.get<double>();
      if (jc.contains("default_prevalence"))
        c.default_prevalence = jc["default_prevalence"].get<double>();
      if (jc.contains("expose_as_dv")) c.expose_as_dv = jc["expose_as_dv"].get<bool>();
      spec.confounders.push_back(std::move(c));
    }
  }
  if (doc.contains("speaker_noise_sd")) spec.speaker_noise_sd = doc["speaker_noise_sd"].get<double>();
  if (doc.contains("seed")) spec.seed = doc["seed"].get<std::uint64_t>();
  spec.check();
  return spec;
}

std::string serialize_ground_truth(const GroundTruth& gt) {
  json doc;
  doc["speakers"] = json::object();
  for (const auto& [id, st] : gt.by_speaker) {
    json js;
    js["true_rate"] = round_g6(st.true_rate);
    js["flags"] = json::object();
    for (const auto& [name, fired] : st.flags) js["flags"][name] = fired;
    doc["speakers"][id] = js;
  }
  doc["sg_true_means"] = json::object();
  for (const auto& [sg, m] : gt.sg_true_means) doc["sg_true_means"][sg] = round_g6(m);
  return doc.dump(2) + "\n";
}

}  // namespace fairaudit::synth
