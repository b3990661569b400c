#pragma once

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fairaudit/corpus.hpp"
#include "fairaudit/quality.hpp"
#include "fairaudit/scoring.hpp"
#include "fairaudit/stats.hpp"

namespace fairaudit::fairness {

// --- outlier filtering -------------------------------------------------------

struct OutlierRemoval {
  std::string kind;  // "speaker" | "utterance"
  std::string id;
  double z = 0.0;
  double value = 0.0;  // the mean (speaker) or utterance WER removed
};

struct OutlierFilterResult {
  /// Retained speakers with intra-speaker outlier utterances removed and
  /// means recomputed.
  std::vector<scoring::SpeakerScore> retained;
  std::vector<OutlierRemoval> removals;
  std::vector<std::string> notes;
};

/// Two-pass z>threshold rule: speakers whose mean WER sits more than
/// `z_threshold` sample standard deviations above the speaker mean are
/// dropped; within each survivor, utterances are filtered the same way and
/// the mean recomputed. Notes when n is too small for the threshold to be
/// attainable (max z = (n-1)/sqrt(n)). Throws when fewer than 2 speakers
/// come in or none survive.
OutlierFilterResult filter_outlier_speakers(std::span<const scoring::SpeakerScore> scores,
                                            double z_threshold = 3.0);

// --- core metrics --------------------------------------------------------------

/// Signed percentage deviation of a group mean from the baseline mean;
/// negative means better than baseline. Throws on baseline <= 0.
double relative_error(double group_mean, double baseline_mean);

struct GapResult {
  double gap_pct = 0.0;
  std::vector<std::string> max_sgs;  // attaining groups, lexicographic
  std::vector<std::string> min_sgs;
};

/// max - min of the relative errors, with every attaining group listed.
/// Throws on an empty map; a single group yields gap 0.
GapResult wer_gap(const std::map<std::string, double>& rel_error_by_sg);

// --- grouped results -----------------------------------------------------------

struct GroupResult {
  std::string dv;  // empty for multivariate cells
  std::string sg;  // SG value, or "dv=value|dv=value" cell label
  std::vector<std::pair<std::string, std::string>> assignment;  // cells only
  int n_speakers = 0;
  double mean_wer = 0.0;
  double sd_mean_wer = 0.0;    // sample sd of member speaker means (0 when n < 2)
  double baseline_mean = 0.0;  // the baseline this row was compared against
  double relative_error_pct = 0.0;
  std::optional<stats::TestResult> test;
  std::string test_note;  // reason when test is absent
  bool underpowered = false;
};

struct DvMarginal {
  std::string dv;
  std::vector<GroupResult> groups;
  GapResult gap;
  std::optional<stats::TestResult> gap_test;  // worst vs best SG, one-sided
  std::string gap_test_note;
  int unknown_speakers = 0;
};

struct IsolatedSgResult {
  std::string sg;
  std::vector<std::string> strata;  // labels, parallel to samples
  std::vector<double> samples;      // conditioned relative errors, one per stratum
  std::optional<stats::TestResult> test;
  std::string status;  // "ok" | "insufficient strata" | "no admissible strata" | ...
};

struct IsolatedEffectResult {
  std::string dv;
  std::vector<IsolatedSgResult> per_sg;
  std::vector<std::string> gap_strata;
  std::vector<double> gap_samples;
  std::optional<stats::TestResult> gap_test;  // gaps > 0, one-sided
  std::string gap_status;
  int n_strata_nonempty = 0;
  int n_strata_admissible = 0;
  std::vector<std::string> notes;
};

struct ExtremesResult {
  std::vector<GroupResult> ranked;  // worst (highest relative error) first
  std::vector<GroupResult> underpowered;
  std::string best_cell;   // lowest relative error among ranked
  std::string worst_cell;  // highest
  std::string note;
};

struct ConditionalPlanResult {
  std::vector<std::string> dvs;
  std::vector<GroupResult> cells;
  std::vector<std::string> notes;
};

// --- analysis entry points ------------------------------------------------------

/// Eq.-style isolated effect of `target_dv`: for every assignment of all
/// other DVs, restrict to that stratum, baseline on the stratum mean, and
/// collect each target SG's relative error wherever every compared cell has
/// at least min_speakers speakers. Per-SG samples are tested against zero
/// (two-sided) and per-stratum gaps against zero (one-sided).
IsolatedEffectResult isolated_effect(const Corpus& corpus,
                                     const std::map<std::string, double>& speaker_means,
                                     const std::string& target_dv, int min_speakers,
                                     std::span<const double> alphas, int workers = 1);

/// Full-intersection cells with n >= min_speakers, relative error against
/// the whole-corpus baseline, ranked worst-first with deterministic ties.
ExtremesResult multivariate_extremes(const Corpus& corpus,
                                     const std::map<std::string, double>& speaker_means,
                                     int min_speakers, bool exclude_self_baseline,
                                     std::span<const double> alphas, int workers = 1);

// --- the audit pipeline -----------------------------------------------------------

struct AuditConfig {
  scoring::NormalizeConfig normalize;
  bool word_weighted_speaker_mean = false;
  quality::QualityThresholds quality;
  double z_threshold = 3.0;  // <= 0 disables outlier filtering
  std::vector<double> alphas = {0.05, 0.01, 0.001};
  // Speaker-count bound parameters (sigma is estimated from the corpus).
  double power_delta = 0.1;
  double power_alpha = 0.05;
  double power_power = 0.8;
  stats::QuantileConvention power_convention = stats::QuantileConvention::two_sided_alpha;
  std::optional<int> min_speakers_override;
  /// DVs to analyze: unset = every schema DV, empty list = none (baseline only).
  std::optional<std::vector<std::string>> target_dvs;
  std::vector<std::vector<std::string>> conditioning_plans;
  bool exclude_self_baseline = false;
  bool run_aggregation = true;  // apply the schema's aggregation maps
  bool auto_other = false;      // fold below-threshold SGs into "other" first
  int workers = 1;
};

struct StageError : std::runtime_error {
  StageError(const std::string& stage, const std::string& why)
      : std::runtime_error(stage + ": " + why), stage_name(stage) {}
  std::string stage_name;
};

struct AuditReport {
  double baseline_mean = 0.0;
  /// Plain mean over utterances, reported for comparison only: it
  /// over-weights talkative speakers and is not used by any analysis.
  double utterance_level_mean = 0.0;
  int n_speakers = 0;
  int n_utterances = 0;
  double sigma_speaker = 0.0;  // sd of speaker means after filtering
  int min_speakers = 0;
  double min_speakers_raw = 0.0;
  std::map<std::string, double> speaker_means;  // post-filter, the test samples
  std::vector<DvMarginal> marginal;
  std::vector<IsolatedEffectResult> isolated;
  std::vector<ConditionalPlanResult> conditional;
  ExtremesResult extremes;
  // stage logs
  std::vector<quality::RemovalEntry> quality_removals;
  std::vector<std::string> quality_notes;
  std::vector<OutlierRemoval> outlier_removals;
  std::vector<std::string> outlier_notes;
  std::vector<MergeLogEntry> aggregation_log;
  std::vector<scoring::SkipEntry> score_skips;
  std::vector<std::string> dropped_speakers;
  std::vector<std::string> notes;
  std::vector<double> alphas;
};

/// Runs the whole pipeline: quality filter -> scoring -> outlier filter ->
/// aggregation -> marginal per-SG results -> isolated effects -> configured
/// conditional slices -> multivariate extremes. Deterministic for fixed
/// inputs regardless of worker count. Throws StageError with the failing
/// stage's name.
AuditReport audit(const Corpus& corpus, const std::map<std::string, double>& snr_by_utterance,
                  const AuditConfig& config);

}  // namespace fairaudit::fairness
