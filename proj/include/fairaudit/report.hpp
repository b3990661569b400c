#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fairaudit/fairness.hpp"

namespace fairaudit::report {

/// Serialized full report with sorted keys and 6-significant-digit floats,
/// so identical audits produce identical bytes.
std::string to_json(const fairness::AuditReport& report);

/// Writes the structured report plus flat tables into dir (atomically):
///   report.json            everything below in one machine-readable document
///   sg_results.tsv         marginal per-SG rows
///   dv_gaps.tsv            per-DV gap rows
///   isolated_effects.tsv   per-stratum conditioned relative errors (samples)
///   isolated_summary.tsv   per-SG aggregate tests over the strata
///   conditional_results.tsv configured DV-subset slices
///   extremes.tsv           ranked full-intersection cells
///   speaker_means.tsv      post-filter speaker means (test samples)
///   removals.jsonl         every filtered utterance/speaker with reason
///   plot_sg_results.tsv    per-SG relative error with 95% CI bounds
/// Returns the list of files written.
std::vector<std::filesystem::path> emit_report(const fairness::AuditReport& report,
                                               const std::filesystem::path& dir);

}  // namespace fairaudit::report
