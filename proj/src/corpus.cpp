#include "fairaudit/corpus.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "fairaudit/util.hpp"

namespace fairaudit {

using nlohmann::json;

namespace {

const std::string kUnknownStr{kUnknown};

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

[[noreturn]] void fail(const std::string& origin, std::size_t line, const std::string& why) {
  throw std::runtime_error(origin + ":" + std::to_string(line) + ": " + why);
}

}  // namespace

const std::string& Speaker::value_of(const std::string& dv) const {
  auto it = demographics.find(dv);
  return it == demographics.end() ? kUnknownStr : it->second;
}

const DvDecl* DemographicSchema::find_dv(const std::string& name) const {
  for (const auto& dv : dvs)
    if (dv.name == name) return &dv;
  return nullptr;
}

bool DemographicSchema::is_declared(const std::string& dv, const std::string& value) const {
  const DvDecl* d = find_dv(dv);
  if (!d) return false;
  return std::find(d->values.begin(), d->values.end(), value) != d->values.end();
}

void DemographicSchema::check() const {
  std::set<std::string> names;
  for (const auto& dv : dvs) {
    if (dv.name.empty()) throw std::runtime_error("schema: empty DV name");
    if (dv.name == kUnknown) throw std::runtime_error("schema: DV may not be named 'unknown'");
    if (!names.insert(dv.name).second)
      throw std::runtime_error("schema: duplicate DV name '" + dv.name + "'");
    std::set<std::string> vals;
    for (const auto& v : dv.values) {
      if (v.empty()) throw std::runtime_error("schema: empty SG value in DV '" + dv.name + "'");
      if (v == kUnknown)
        throw std::runtime_error("schema: 'unknown' is reserved (DV '" + dv.name + "')");
      if (!vals.insert(v).second)
        throw std::runtime_error("schema: duplicate SG value '" + v + "' in DV '" + dv.name + "'");
    }
    for (const auto& [from, to] : dv.aggregate) {
      if (!vals.count(from))
        throw std::runtime_error("schema: aggregation of undeclared SG value '" + from +
                                 "' in DV '" + dv.name + "'");
      if (to.empty() || to == kUnknown)
        throw std::runtime_error("schema: invalid aggregation target for '" + from + "' in DV '" +
                                 dv.name + "'");
    }
  }
}

Corpus::Corpus(std::vector<Speaker> speakers, std::vector<Utterance> utterances,
               DemographicSchema schema)
    : speakers_(std::move(speakers)),
      utterances_(std::move(utterances)),
      schema_(std::move(schema)) {
  std::sort(speakers_.begin(), speakers_.end(),
            [](const Speaker& a, const Speaker& b) { return a.speaker_id < b.speaker_id; });
  std::sort(utterances_.begin(), utterances_.end(),
            [](const Utterance& a, const Utterance& b) { return a.utterance_id < b.utterance_id; });
  rebuild_index();
}

void Corpus::rebuild_index() {
  speaker_index_.clear();
  utterances_by_speaker_.clear();
  for (std::size_t i = 0; i < speakers_.size(); ++i)
    speaker_index_[speakers_[i].speaker_id] = i;
  for (std::size_t i = 0; i < utterances_.size(); ++i)
    utterances_by_speaker_[utterances_[i].speaker_id].push_back(i);
}

const Speaker* Corpus::find_speaker(const std::string& id) const {
  auto it = speaker_index_.find(id);
  return it == speaker_index_.end() ? nullptr : &speakers_[it->second];
}

const Utterance* Corpus::find_utterance(const std::string& id) const {
  auto it = std::lower_bound(
      utterances_.begin(), utterances_.end(), id,
      [](const Utterance& u, const std::string& key) { return u.utterance_id < key; });
  if (it == utterances_.end() || it->utterance_id != id) return nullptr;
  return &*it;
}

std::vector<std::size_t> Corpus::utterances_of(const std::string& speaker_id) const {
  auto it = utterances_by_speaker_.find(speaker_id);
  return it == utterances_by_speaker_.end() ? std::vector<std::size_t>{} : it->second;
}

Corpus Corpus::restricted_to(const std::set<std::string>& speaker_ids) const {
  std::vector<Speaker> sp;
  for (const auto& s : speakers_)
    if (speaker_ids.count(s.speaker_id)) sp.push_back(s);
  std::vector<Utterance> ut;
  for (const auto& u : utterances_)
    if (speaker_ids.count(u.speaker_id)) ut.push_back(u);
  Corpus out(std::move(sp), std::move(ut), schema_);
  out.merge_log_ = merge_log_;
  return out;
}

Corpus Corpus::without_utterances(const std::set<std::string>& removed_utterance_ids,
                                  std::vector<std::string>* dropped_speakers) const {
  std::vector<Utterance> ut;
  std::set<std::string> live_speakers;
  for (const auto& u : utterances_) {
    if (removed_utterance_ids.count(u.utterance_id)) continue;
    ut.push_back(u);
    live_speakers.insert(u.speaker_id);
  }
  std::vector<Speaker> sp;
  for (const auto& s : speakers_) {
    if (live_speakers.count(s.speaker_id)) {
      sp.push_back(s);
    } else if (dropped_speakers) {
      dropped_speakers->push_back(s.speaker_id);
    }
  }
  Corpus out(std::move(sp), std::move(ut), schema_);
  out.merge_log_ = merge_log_;
  return out;
}

// --- schema document ---------------------------------------------------------

SchemaDocument parse_schema(std::string_view json_text, const std::string& origin) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(origin + ": schema parse error: " + e.what());
  }
  if (!doc.is_object() || !doc.contains("dvs") || !doc["dvs"].is_array())
    throw std::runtime_error(origin + ": schema must be an object with a 'dvs' array");

  SchemaDocument out;
  for (const auto& jdv : doc["dvs"]) {
    DvDecl dv;
    dv.name = jdv.at("name").get<std::string>();
    for (const auto& v : jdv.at("values")) dv.values.push_back(v.get<std::string>());
    if (jdv.contains("aggregate"))
      for (const auto& [from, to] : jdv["aggregate"].items())
        dv.aggregate[from] = to.get<std::string>();
    out.schema.dvs.push_back(std::move(dv));
  }
  out.schema.check();

  std::set<std::string> ids;
  if (doc.contains("speakers")) {
    for (const auto& js : doc["speakers"]) {
      Speaker s;
      s.speaker_id = js.at("id").get<std::string>();
      if (s.speaker_id.empty()) throw std::runtime_error(origin + ": empty speaker id");
      if (!ids.insert(s.speaker_id).second)
        throw std::runtime_error(origin + ": duplicate speaker id '" + s.speaker_id + "'");
      if (js.contains("demographics"))
        for (const auto& [dv, v] : js["demographics"].items())
          s.demographics[dv] = v.get<std::string>();
      out.speakers.push_back(std::move(s));
    }
  }
  return out;
}

SchemaDocument load_schema(const std::filesystem::path& path) {
  return parse_schema(read_file(path), path.string());
}

// --- manifest ------------------------------------------------------------------

Corpus parse_manifest(std::string_view text, const SchemaDocument& doc,
                      const std::string& origin) {
  std::vector<Utterance> utterances;
  std::set<std::string> seen_ids;
  std::set<std::string> speaker_ids;
  for (const auto& s : doc.speakers) speaker_ids.insert(s.speaker_id);

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::string_view line =
        text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (is_blank(line)) continue;

    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      fail(origin, line_no, std::string("malformed record: ") + e.what());
    }
    if (!rec.is_object()) fail(origin, line_no, "record is not an object");
    for (const char* key : {"utterance_id", "speaker_id", "reference", "hypothesis"})
      if (!rec.contains(key) || !rec[key].is_string())
        fail(origin, line_no, std::string("missing or non-string field '") + key + "'");

    Utterance u;
    u.utterance_id = rec["utterance_id"].get<std::string>();
    u.speaker_id = rec["speaker_id"].get<std::string>();
    u.reference = rec["reference"].get<std::string>();
    u.hypothesis = rec["hypothesis"].get<std::string>();
    if (rec.contains("audio_path") && !rec["audio_path"].is_null())
      u.audio_path = rec["audio_path"].get<std::string>();

    if (u.utterance_id.empty()) fail(origin, line_no, "empty utterance_id");
    if (!seen_ids.insert(u.utterance_id).second)
      fail(origin, line_no, "duplicate utterance_id '" + u.utterance_id + "'");
    if (!speaker_ids.count(u.speaker_id))
      fail(origin, line_no, "dangling speaker_id '" + u.speaker_id + "'");
    utterances.push_back(std::move(u));
  }
  if (utterances.empty()) throw std::runtime_error(origin + ": empty corpus");
  return Corpus(doc.speakers, std::move(utterances), doc.schema);
}

Corpus load_manifest(const std::filesystem::path& path, const SchemaDocument& doc) {
  return parse_manifest(read_file(path), doc, path.string());
}

std::string serialize_manifest(const Corpus& corpus) {
  std::string out;
  for (const auto& u : corpus.utterances()) {
    json rec;
    rec["utterance_id"] = u.utterance_id;
    rec["speaker_id"] = u.speaker_id;
    rec["reference"] = u.reference;
    rec["hypothesis"] = u.hypothesis;
    if (u.audio_path) rec["audio_path"] = *u.audio_path;
    out += rec.dump();
    out += '\n';
  }
  return out;
}

std::string serialize_schema(const Corpus& corpus) {
  json doc;
  doc["dvs"] = json::array();
  for (const auto& dv : corpus.schema().dvs) {
    json jdv;
    jdv["name"] = dv.name;
    jdv["values"] = dv.values;
    jdv["aggregate"] = json::object();
    for (const auto& [from, to] : dv.aggregate) jdv["aggregate"][from] = to;
    doc["dvs"].push_back(jdv);
  }
  doc["speakers"] = json::array();
  for (const auto& s : corpus.speakers()) {
    json js;
    js["id"] = s.speaker_id;
    js["demographics"] = json::object();
    for (const auto& [dv, v] : s.demographics) js["demographics"][dv] = v;
    doc["speakers"].push_back(js);
  }
  return doc.dump(2) + "\n";
}

// --- validation ------------------------------------------------------------------

ValidationReport validate(const Corpus& corpus, const DemographicSchema& schema) {
  ValidationReport rep;

  for (const auto& dv : schema.dvs)
    for (const auto& v : dv.values) rep.sg_speaker_counts[dv.name + "=" + v] = 0;

  for (const auto& s : corpus.speakers()) {
    for (const auto& [dv, v] : s.demographics) {
      const DvDecl* decl = schema.find_dv(dv);
      if (!decl) {
        rep.violations.push_back({"undeclared-dv", s.speaker_id, "DV '" + dv + "' not in schema"});
        continue;
      }
      if (v == kUnknown) continue;
      if (!schema.is_declared(dv, v)) {
        rep.violations.push_back(
            {"undeclared-value", s.speaker_id, "value '" + v + "' not declared for DV '" + dv + "'"});
      } else {
        ++rep.sg_speaker_counts[dv + "=" + v];
      }
    }
    rep.speaker_utterance_counts[s.speaker_id] =
        static_cast<int>(corpus.utterances_of(s.speaker_id).size());
  }

  for (const auto& u : corpus.utterances()) {
    if (!corpus.find_speaker(u.speaker_id))
      rep.violations.push_back(
          {"dangling-speaker", u.utterance_id, "speaker '" + u.speaker_id + "' not found"});
    if (is_blank(u.reference))
      rep.violations.push_back({"empty-reference", u.utterance_id, "reference is empty"});
  }

  for (const auto& [sg, count] : rep.sg_speaker_counts)
    if (count == 0) rep.warnings.push_back({"empty-sg", sg, "no speakers carry this value"});
  for (const auto& [id, count] : rep.speaker_utterance_counts)
    if (count == 0) rep.warnings.push_back({"no-utterances", id, "speaker has no utterances"});

  return rep;
}

// --- aggregation ------------------------------------------------------------------

Corpus apply_aggregation(const Corpus& corpus, const DemographicSchema& schema) {
  schema.check();

  DemographicSchema merged_schema;
  for (const auto& dv : schema.dvs) {
    DvDecl out_dv;
    out_dv.name = dv.name;
    std::set<std::string> seen;
    for (const auto& v : dv.values) {
      auto it = dv.aggregate.find(v);
      const std::string target = it == dv.aggregate.end() ? v : it->second;
      if (seen.insert(target).second) out_dv.values.push_back(target);
    }
    merged_schema.dvs.push_back(std::move(out_dv));
  }

  std::map<std::string, int> merge_counts;  // "dv\tfrom\tto" -> n
  std::vector<Speaker> speakers = corpus.speakers();
  for (auto& s : speakers) {
    for (auto& [dv_name, value] : s.demographics) {
      const DvDecl* decl = schema.find_dv(dv_name);
      if (!decl) continue;
      auto it = decl->aggregate.find(value);
      if (it == decl->aggregate.end()) continue;
      ++merge_counts[dv_name + "\t" + value + "\t" + it->second];
      value = it->second;
    }
  }

  std::vector<MergeLogEntry> log;
  for (const auto& [key, n] : merge_counts) {
    MergeLogEntry e;
    const auto t1 = key.find('\t');
    const auto t2 = key.find('\t', t1 + 1);
    e.dv = key.substr(0, t1);
    e.from = key.substr(t1 + 1, t2 - t1 - 1);
    e.to = key.substr(t2 + 1);
    e.speaker_count = n;
    log.push_back(std::move(e));
  }

  Corpus out(std::move(speakers), corpus.utterances(), std::move(merged_schema));
  out.set_merge_log(std::move(log));
  return out;
}

DemographicSchema build_auto_other_schema(const Corpus& corpus, const DemographicSchema& schema,
                                          int min_speakers) {
  std::map<std::string, int> counts;
  for (const auto& s : corpus.speakers())
    for (const auto& dv : schema.dvs) {
      const std::string& v = s.value_of(dv.name);
      if (v != kUnknown) ++counts[dv.name + "=" + v];
    }

  DemographicSchema out = schema;
  for (auto& dv : out.dvs) {
    for (const auto& v : dv.values) {
      if (v == "other") continue;
      auto it = counts.find(dv.name + "=" + v);
      const int n = it == counts.end() ? 0 : it->second;
      if (n < min_speakers) dv.aggregate[v] = "other";
    }
  }
  return out;
}

// --- conditioning ------------------------------------------------------------------

Corpus subset_by_condition(const Corpus& corpus, const Condition& cond) {
  for (const auto& [dv, v] : cond.assignments) {
    if (!corpus.schema().find_dv(dv))
      throw std::invalid_argument("condition references unknown DV '" + dv + "'");
    if (!corpus.schema().is_declared(dv, v))
      throw std::invalid_argument("condition value '" + v + "' not declared for DV '" + dv + "'");
  }
  if (cond.assignments.empty()) return corpus;
  std::set<std::string> keep;
  for (const auto& s : corpus.speakers()) {
    bool match = true;
    for (const auto& [dv, v] : cond.assignments)
      if (s.value_of(dv) != v) {
        match = false;
        break;
      }
    if (match) keep.insert(s.speaker_id);
  }
  return corpus.restricted_to(keep);
}

}  // namespace fairaudit
