#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace fairaudit {

/// Reserved label for a missing demographic value. Speakers carrying it are
/// excluded from any analysis over that variable.
inline constexpr std::string_view kUnknown = "unknown";

struct Utterance {
  std::string utterance_id;
  std::string speaker_id;
  std::string reference;
  std::string hypothesis;
  std::optional<std::string> audio_path;
  std::optional<double> snr_db;  // populated by the quality stage
};

struct Speaker {
  std::string speaker_id;
  std::map<std::string, std::string> demographics;  // DV name -> SG value

  /// Value for dv, or "unknown" when absent.
  const std::string& value_of(const std::string& dv) const;
};

struct DvDecl {
  std::string name;
  std::vector<std::string> values;              // declared SG values, ordered
  std::map<std::string, std::string> aggregate;  // SG value -> merged value
};

struct DemographicSchema {
  std::vector<DvDecl> dvs;

  const DvDecl* find_dv(const std::string& name) const;
  bool is_declared(const std::string& dv, const std::string& value) const;
  /// Throws std::runtime_error on duplicate DV names / duplicate SG values /
  /// aggregation sources that are not declared values.
  void check() const;
};

/// One fixed SG value per conditioned DV (a conjunction of constraints).
struct Condition {
  std::map<std::string, std::string> assignments;
};

struct MergeLogEntry {
  std::string dv;
  std::string from;
  std::string to;
  int speaker_count = 0;
};

/// Immutable after construction; transformations return new instances.
/// Speakers and utterances are kept sorted by id so every downstream pass
/// is reproducible.
class Corpus {
 public:
  Corpus() = default;
  Corpus(std::vector<Speaker> speakers, std::vector<Utterance> utterances,
         DemographicSchema schema);

  const std::vector<Speaker>& speakers() const { return speakers_; }
  const std::vector<Utterance>& utterances() const { return utterances_; }
  const DemographicSchema& schema() const { return schema_; }
  const std::vector<MergeLogEntry>& merge_log() const { return merge_log_; }

  const Speaker* find_speaker(const std::string& id) const;
  const Utterance* find_utterance(const std::string& id) const;
  /// Indices into utterances() for one speaker, in id order.
  std::vector<std::size_t> utterances_of(const std::string& speaker_id) const;

  /// New corpus restricted to the given speaker ids (with their utterances).
  Corpus restricted_to(const std::set<std::string>& speaker_ids) const;
  /// New corpus restricted to the given utterance ids; speakers left with no
  /// utterance are dropped (their ids are appended to dropped_speakers).
  Corpus without_utterances(const std::set<std::string>& removed_utterance_ids,
                            std::vector<std::string>* dropped_speakers = nullptr) const;

  void set_merge_log(std::vector<MergeLogEntry> log) { merge_log_ = std::move(log); }

 private:
  std::vector<Speaker> speakers_;
  std::vector<Utterance> utterances_;
  DemographicSchema schema_;
  std::vector<MergeLogEntry> merge_log_;
  std::map<std::string, std::size_t> speaker_index_;
  std::map<std::string, std::vector<std::size_t>> utterances_by_speaker_;

  void rebuild_index();
};

// --- I/O -------------------------------------------------------------------

struct SchemaDocument {
  DemographicSchema schema;
  std::vector<Speaker> speakers;
};

/// Parses the schema document: {"dvs":[{"name","values","aggregate"}...],
/// "speakers":[{"id","demographics"}...]}. Throws on structural errors.
SchemaDocument load_schema(const std::filesystem::path& path);
SchemaDocument parse_schema(std::string_view json_text, const std::string& origin);

/// Loads a line-delimited manifest (one JSON object per line with keys
/// utterance_id, speaker_id, reference, hypothesis, optional audio_path)
/// against a schema document. Throws std::runtime_error with the offending
/// line number on malformed lines, duplicate utterance ids, dangling
/// speaker ids, or an empty manifest.
Corpus load_manifest(const std::filesystem::path& path, const SchemaDocument& doc);
Corpus parse_manifest(std::string_view text, const SchemaDocument& doc,
                      const std::string& origin);

std::string serialize_manifest(const Corpus& corpus);
std::string serialize_schema(const Corpus& corpus);

// --- validation --------------------------------------------------------------

struct ValidationIssue {
  std::string kind;     // e.g. "undeclared-value", "empty-reference"
  std::string subject;  // speaker or utterance id
  std::string detail;
};

struct ValidationReport {
  std::vector<ValidationIssue> violations;
  std::vector<ValidationIssue> warnings;
  std::map<std::string, int> sg_speaker_counts;      // "dv=value" -> count
  std::map<std::string, int> speaker_utterance_counts;
  bool ok() const { return violations.empty(); }
};

/// Read-only invariant sweep: undeclared DVs/values, empty references,
/// zero-speaker SGs, zero-utterance speakers. Never mutates, never throws
/// for content problems.
ValidationReport validate(const Corpus& corpus, const DemographicSchema& schema);

// --- transformations ---------------------------------------------------------

/// Applies each DV's aggregation map to every speaker and to the schema's
/// value lists. Counts per merge are recorded in the result's merge log.
/// Throws if a map references an undeclared SG value.
Corpus apply_aggregation(const Corpus& corpus, const DemographicSchema& schema);

/// Aggregation map sending every SG with fewer than min_speakers speakers to
/// "other" (per DV). SGs already named "other" and "unknown" are left alone.
DemographicSchema build_auto_other_schema(const Corpus& corpus, const DemographicSchema& schema,
                                          int min_speakers);

/// Speakers matching every assignment, with their utterances. Empty result
/// is legal; empty condition returns the input unchanged.
Corpus subset_by_condition(const Corpus& corpus, const Condition& cond);

}  // namespace fairaudit
