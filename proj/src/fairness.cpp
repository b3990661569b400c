#include "fairaudit/fairness.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "fairaudit/util.hpp"

namespace fairaudit::fairness {

namespace {

double max_attainable_z(std::size_t n) {
  return (static_cast<double>(n) - 1.0) / std::sqrt(static_cast<double>(n));
}

std::vector<double> means_of(const std::map<std::string, double>& speaker_means,
                             std::span<const std::string> ids) {
  std::vector<double> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(speaker_means.at(id));
  return out;
}

/// Welch test wrapped so degenerate inputs become a note instead of a throw.
std::optional<stats::TestResult> try_welch(std::span<const double> a, std::span<const double> b,
                                           stats::Side side, std::span<const double> alphas,
                                           std::string* note) {
  if (a.size() < 2 || b.size() < 2) {
    if (note) *note = "not enough speakers for a two-sample test";
    return std::nullopt;
  }
  try {
    auto r = stats::two_sample_t(a, b, side, stats::VarianceMode::welch);
    stats::mark_significance(r, alphas);
    return r;
  } catch (const std::invalid_argument& e) {
    if (note) *note = e.what();
    return std::nullopt;
  }
}

std::optional<stats::TestResult> try_one_sample(std::span<const double> xs, double mu0,
                                                stats::Side side, std::span<const double> alphas,
                                                std::string* note) {
  if (xs.size() < 2) {
    if (note) *note = "insufficient strata";
    return std::nullopt;
  }
  try {
    auto r = stats::one_sample_t(xs, mu0, side);
    stats::mark_significance(r, alphas);
    return r;
  } catch (const std::invalid_argument& e) {
    if (note) *note = e.what();
    return std::nullopt;
  }
}

std::string cell_label(std::span<const std::pair<std::string, std::string>> assignment) {
  std::string out;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (i) out += '|';
    out += assignment[i].first + "=" + assignment[i].second;
  }
  return out;
}

/// Enumerates every assignment of the given DVs to declared values, in
/// schema order (last DV varies fastest).
void for_each_assignment(
    std::span<const DvDecl> dvs,
    const std::function<void(const std::vector<std::pair<std::string, std::string>>&)>& visit) {
  if (dvs.empty()) {
    visit({});
    return;
  }
  std::vector<std::size_t> idx(dvs.size(), 0);
  std::vector<std::pair<std::string, std::string>> assignment(dvs.size());
  while (true) {
    for (std::size_t d = 0; d < dvs.size(); ++d)
      assignment[d] = {dvs[d].name, dvs[d].values[idx[d]]};
    visit(assignment);
    std::size_t k = dvs.size();
    while (true) {
      --k;
      if (++idx[k] < dvs[k].values.size()) break;
      idx[k] = 0;
      if (k == 0) return;
    }
  }
}

/// Speaker ids per group value for one DV, "unknown" kept separate.
std::map<std::string, std::vector<std::string>> split_by_dv(
    const Corpus& corpus, const std::map<std::string, double>& speaker_means,
    const std::string& dv, int* unknown_count) {
  std::map<std::string, std::vector<std::string>> by_value;
  int unknown = 0;
  for (const auto& s : corpus.speakers()) {
    if (!speaker_means.count(s.speaker_id)) continue;
    const std::string& v = s.value_of(dv);
    if (v == kUnknown) {
      ++unknown;
      continue;
    }
    by_value[v].push_back(s.speaker_id);
  }
  if (unknown_count) *unknown_count = unknown;
  return by_value;
}

}  // namespace

OutlierFilterResult filter_outlier_speakers(std::span<const scoring::SpeakerScore> scores,
                                            double z_threshold) {
  if (scores.size() < 2)
    throw std::invalid_argument("filter_outlier_speakers: need at least 2 speakers");

  OutlierFilterResult out;
  std::vector<double> means;
  means.reserve(scores.size());
  for (const auto& s : scores) means.push_back(s.mean_wer);

  if (max_attainable_z(scores.size()) <= z_threshold)
    out.notes.push_back("speaker pass: threshold unreachable for n=" +
                        std::to_string(scores.size()) + " (max attainable z = " +
                        format_g6(max_attainable_z(scores.size())) + ")");

  const auto zs = stats::z_scores(means);
  if (zs.degenerate) out.notes.push_back("speaker pass: zero variance across speaker means");

  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (zs.scores[i] > z_threshold) {
      out.removals.push_back({"speaker", scores[i].speaker_id, zs.scores[i], scores[i].mean_wer});
      continue;
    }
    scoring::SpeakerScore kept = scores[i];
    if (kept.utterance_wers.size() >= 2) {
      const auto uz = stats::z_scores(kept.utterance_wers);
      if (!uz.degenerate) {
        std::vector<double> filtered;
        for (std::size_t k = 0; k < kept.utterance_wers.size(); ++k) {
          if (uz.scores[k] > z_threshold) {
            out.removals.push_back(
                {"utterance", kept.speaker_id + "#" + std::to_string(k), uz.scores[k],
                 kept.utterance_wers[k]});
          } else {
            filtered.push_back(kept.utterance_wers[k]);
          }
        }
        if (filtered.size() != kept.utterance_wers.size()) {
          kept.utterance_wers = std::move(filtered);
          double sum = 0.0;
          for (double w : kept.utterance_wers) sum += w;
          kept.mean_wer = sum / static_cast<double>(kept.utterance_wers.size());
        }
      }
    }
    out.retained.push_back(std::move(kept));
  }

  if (out.retained.empty())
    throw std::runtime_error("filter_outlier_speakers: every speaker was removed");
  return out;
}

double relative_error(double group_mean, double baseline_mean) {
  if (!(baseline_mean > 0.0))
    throw std::invalid_argument("relative_error: baseline mean must be > 0");
  return 100.0 * (group_mean - baseline_mean) / baseline_mean;
}

GapResult wer_gap(const std::map<std::string, double>& rel_error_by_sg) {
  if (rel_error_by_sg.empty()) throw std::invalid_argument("wer_gap: no groups");
  GapResult out;
  double max_v = -std::numeric_limits<double>::infinity();
  double min_v = std::numeric_limits<double>::infinity();
  for (const auto& [sg, v] : rel_error_by_sg) {
    max_v = std::max(max_v, v);
    min_v = std::min(min_v, v);
  }
  out.gap_pct = max_v - min_v;
  for (const auto& [sg, v] : rel_error_by_sg) {  // map order = lexicographic
    if (v == max_v) out.max_sgs.push_back(sg);
    if (v == min_v) out.min_sgs.push_back(sg);
  }
  return out;
}

IsolatedEffectResult isolated_effect(const Corpus& corpus,
                                     const std::map<std::string, double>& speaker_means,
                                     const std::string& target_dv, int min_speakers,
                                     std::span<const double> alphas, int workers) {
  const DvDecl* target = corpus.schema().find_dv(target_dv);
  if (!target) throw std::invalid_argument("isolated_effect: unknown DV '" + target_dv + "'");
  min_speakers = std::max(min_speakers, 1);

  IsolatedEffectResult out;
  out.dv = target_dv;
  out.notes.push_back(
      "per-SG samples are unweighted across strata (one value per admissible stratum, "
      "regardless of stratum size); gap samples are non-negative by construction");

  std::vector<DvDecl> others;
  for (const auto& dv : corpus.schema().dvs)
    if (dv.name != target_dv) others.push_back(dv);

  std::vector<std::vector<std::pair<std::string, std::string>>> strata;
  for_each_assignment(others, [&](const auto& assignment) { strata.push_back(assignment); });

  struct StratumOutcome {
    bool nonempty = false;
    bool admissible = false;
    std::string label;
    std::map<std::string, double> rel_by_sg;
    double gap = 0.0;
    std::string skip_reason;
  };
  std::vector<StratumOutcome> outcomes(strata.size());

  parallel_for(strata.size(), workers, [&](std::size_t si) {
    StratumOutcome& oc = outcomes[si];
    oc.label = strata[si].empty() ? "(all)" : cell_label(strata[si]);

    // Stratum membership: matches the conditioning assignment and carries a
    // known target label.
    std::map<std::string, std::vector<std::string>> cell_ids;
    std::vector<double> stratum_means;
    for (const auto& s : corpus.speakers()) {
      if (!speaker_means.count(s.speaker_id)) continue;
      bool match = true;
      for (const auto& [dv, v] : strata[si])
        if (s.value_of(dv) != v) {
          match = false;
          break;
        }
      if (!match) continue;
      const std::string& tv = s.value_of(target_dv);
      if (tv == kUnknown) continue;
      cell_ids[tv].push_back(s.speaker_id);
      stratum_means.push_back(speaker_means.at(s.speaker_id));
    }
    if (stratum_means.empty()) return;
    oc.nonempty = true;

    std::map<std::string, std::vector<std::string>> compared;
    for (const auto& [sg, ids] : cell_ids)
      if (static_cast<int>(ids.size()) >= min_speakers) compared[sg] = ids;
    if (compared.size() < 2) {
      oc.skip_reason = "fewer than two target cells meet min_speakers";
      return;
    }

    const double baseline = stats::mean(stratum_means);
    if (!(baseline > 0.0)) {
      oc.skip_reason = "zero baseline mean";
      return;
    }
    oc.admissible = true;
    for (const auto& [sg, ids] : compared) {
      const auto ms = means_of(speaker_means, ids);
      oc.rel_by_sg[sg] = relative_error(stats::mean(ms), baseline);
    }
    oc.gap = wer_gap(oc.rel_by_sg).gap_pct;
  });

  std::map<std::string, IsolatedSgResult> per_sg;
  for (const auto& v : target->values) {
    per_sg[v].sg = v;
  }
  for (const auto& oc : outcomes) {
    if (oc.nonempty) ++out.n_strata_nonempty;
    if (!oc.admissible) {
      if (oc.nonempty)
        out.notes.push_back("stratum " + oc.label + " skipped: " + oc.skip_reason);
      continue;
    }
    ++out.n_strata_admissible;
    for (const auto& [sg, rel] : oc.rel_by_sg) {
      auto& slot = per_sg[sg];
      slot.sg = sg;
      slot.strata.push_back(oc.label);
      slot.samples.push_back(rel);
    }
    out.gap_strata.push_back(oc.label);
    out.gap_samples.push_back(oc.gap);
  }

  for (auto& [sg, r] : per_sg) {
    if (r.samples.empty()) {
      r.status = out.n_strata_admissible == 0 ? "no admissible strata"
                                              : "sg absent from admissible strata";
    } else {
      std::string note;
      r.test = try_one_sample(r.samples, 0.0, stats::Side::two_sided, alphas, &note);
      r.status = r.test ? "ok" : note;
    }
    out.per_sg.push_back(r);
  }

  if (out.gap_samples.empty()) {
    out.gap_status = "no admissible strata";
  } else {
    std::string note;
    out.gap_test = try_one_sample(out.gap_samples, 0.0, stats::Side::greater, alphas, &note);
    out.gap_status = out.gap_test ? "ok" : note;
  }
  return out;
}

ExtremesResult multivariate_extremes(const Corpus& corpus,
                                     const std::map<std::string, double>& speaker_means,
                                     int min_speakers, bool exclude_self_baseline,
                                     std::span<const double> alphas, int workers) {
  if (corpus.schema().dvs.empty())
    throw std::invalid_argument("multivariate_extremes: schema has no DVs");
  min_speakers = std::max(min_speakers, 1);

  ExtremesResult out;

  std::vector<double> all_means;
  double all_sum = 0.0;
  for (const auto& [id, m] : speaker_means) {
    all_means.push_back(m);
    all_sum += m;
  }
  if (all_means.empty()) throw std::invalid_argument("multivariate_extremes: no scored speakers");

  std::vector<std::vector<std::pair<std::string, std::string>>> cells;
  for_each_assignment(corpus.schema().dvs, [&](const auto& assignment) {
    cells.push_back(assignment);
  });

  struct CellOutcome {
    bool populated = false;
    GroupResult g;
    std::vector<double> cell_means;
    std::vector<double> complement_means;
    std::string skip_reason;
  };
  std::vector<CellOutcome> outcomes(cells.size());

  parallel_for(cells.size(), workers, [&](std::size_t ci) {
    CellOutcome& oc = outcomes[ci];
    std::vector<std::string> members;
    for (const auto& s : corpus.speakers()) {
      if (!speaker_means.count(s.speaker_id)) continue;
      bool match = true;
      for (const auto& [dv, v] : cells[ci])
        if (s.value_of(dv) != v) {
          match = false;
          break;
        }
      if (match) members.push_back(s.speaker_id);
    }
    if (members.empty()) return;
    oc.populated = true;
    oc.g.sg = cell_label(cells[ci]);
    oc.g.assignment = cells[ci];
    oc.g.n_speakers = static_cast<int>(members.size());
    oc.cell_means = means_of(speaker_means, members);
    oc.g.mean_wer = stats::mean(oc.cell_means);
    oc.g.sd_mean_wer = oc.cell_means.size() >= 2 ? stats::sample_sd(oc.cell_means) : 0.0;

    std::set<std::string> member_set(members.begin(), members.end());
    for (const auto& [id, m] : speaker_means)
      if (!member_set.count(id)) oc.complement_means.push_back(m);

    double cell_sum = 0.0;
    for (double m : oc.cell_means) cell_sum += m;
    const double baseline =
        exclude_self_baseline
            ? (oc.complement_means.empty()
                   ? 0.0
                   : (all_sum - cell_sum) / static_cast<double>(oc.complement_means.size()))
            : all_sum / static_cast<double>(all_means.size());
    if (!(baseline > 0.0)) {
      oc.skip_reason = "zero baseline mean";
      oc.populated = false;
      return;
    }
    oc.g.baseline_mean = baseline;
    oc.g.relative_error_pct = relative_error(oc.g.mean_wer, baseline);
  });

  for (auto& oc : outcomes) {
    if (!oc.populated) {
      if (!oc.skip_reason.empty())
        out.note += (out.note.empty() ? "" : "; ") + ("cell skipped: " + oc.skip_reason);
      continue;
    }
    if (oc.g.n_speakers < min_speakers) {
      oc.g.underpowered = true;
      out.underpowered.push_back(oc.g);
      continue;
    }
    oc.g.test = try_welch(oc.cell_means, oc.complement_means, stats::Side::two_sided, alphas,
                          &oc.g.test_note);
    out.ranked.push_back(oc.g);
  }

  std::sort(out.ranked.begin(), out.ranked.end(), [](const GroupResult& a, const GroupResult& b) {
    if (a.relative_error_pct != b.relative_error_pct)
      return a.relative_error_pct > b.relative_error_pct;
    return a.sg < b.sg;
  });
  if (out.ranked.empty()) {
    if (out.note.empty()) out.note = "no cell meets the speaker-count threshold";
  } else {
    out.worst_cell = out.ranked.front().sg;
    out.best_cell = out.ranked.back().sg;
  }
  return out;
}

namespace {

DvMarginal marginal_for_dv(const Corpus& corpus,
                           const std::map<std::string, double>& speaker_means,
                           const std::string& dv, double baseline_all, int min_speakers,
                           bool exclude_self, std::span<const double> alphas) {
  DvMarginal out;
  out.dv = dv;
  auto by_value = split_by_dv(corpus, speaker_means, dv, &out.unknown_speakers);

  std::map<std::string, double> rel_by_sg;
  std::map<std::string, std::vector<double>> means_by_sg;
  for (const auto& [value, ids] : by_value) {
    GroupResult g;
    g.dv = dv;
    g.sg = value;
    g.n_speakers = static_cast<int>(ids.size());
    auto ms = means_of(speaker_means, ids);
    means_by_sg[value] = ms;
    g.mean_wer = stats::mean(ms);
    g.sd_mean_wer = ms.size() >= 2 ? stats::sample_sd(ms) : 0.0;
    g.underpowered = g.n_speakers < min_speakers;

    // complement within speakers that carry a known label for this DV
    std::vector<double> complement;
    for (const auto& [other_value, other_ids] : by_value) {
      if (other_value == value) continue;
      for (const auto& id : other_ids) complement.push_back(speaker_means.at(id));
    }

    const double baseline =
        exclude_self ? (complement.empty() ? 0.0
                                           : std::accumulate(complement.begin(), complement.end(),
                                                             0.0) /
                                                 static_cast<double>(complement.size()))
                     : baseline_all;
    if (baseline > 0.0) {
      g.baseline_mean = baseline;
      g.relative_error_pct = relative_error(g.mean_wer, baseline);
      rel_by_sg[value] = g.relative_error_pct;
    } else {
      g.test_note = "zero baseline mean";
      out.groups.push_back(g);
      continue;
    }
    g.test = try_welch(ms, complement, stats::Side::two_sided, alphas, &g.test_note);
    out.groups.push_back(g);
  }

  if (!rel_by_sg.empty()) {
    out.gap = wer_gap(rel_by_sg);
    // one-sided worst-vs-best comparison on the attaining groups
    const auto& worst = means_by_sg.at(out.gap.max_sgs.front());
    const auto& best = means_by_sg.at(out.gap.min_sgs.front());
    if (out.gap.max_sgs.front() == out.gap.min_sgs.front()) {
      out.gap_test_note = "single group";
    } else {
      out.gap_test = try_welch(worst, best, stats::Side::greater, alphas, &out.gap_test_note);
    }
  } else {
    out.gap_test_note = "no groups with a usable baseline";
  }
  return out;
}

}  // namespace

AuditReport audit(const Corpus& corpus, const std::map<std::string, double>& snr_by_utterance,
                  const AuditConfig& config) {
  AuditReport report;
  report.alphas = config.alphas;

  // validation gate
  {
    const auto v = validate(corpus, corpus.schema());
    if (!v.ok()) {
      std::string first = v.violations.front().kind + " (" + v.violations.front().subject + ")";
      throw StageError("validate", std::to_string(v.violations.size()) +
                                       " invariant violation(s), first: " + first);
    }
  }

  // quality gate
  Corpus current = corpus;
  try {
    std::map<std::string, double> ratios;
    if (config.quality.lexicon) {
      for (const auto& u : current.utterances()) {
        const auto toks = scoring::normalize(u.reference, config.normalize);
        if (!toks.empty())
          ratios[u.utterance_id] = quality::nonstandard_ratio(toks, *config.quality.lexicon);
      }
    }
    auto qf = quality::quality_filter(current, snr_by_utterance, ratios, config.quality);
    report.quality_removals = std::move(qf.removals);
    report.quality_notes = std::move(qf.notes);
    for (const auto& id : qf.dropped_speakers)
      report.dropped_speakers.push_back(id + " (all utterances removed by quality filter)");
    current = std::move(qf.corpus);
  } catch (const std::exception& e) {
    throw StageError("quality", e.what());
  }

  // scoring
  std::vector<scoring::SpeakerScore> scores;
  try {
    auto sm = scoring::score_corpus(current, config.normalize, config.workers);
    report.score_skips = sm.skipped;
    scores = scoring::speaker_scores(current, sm, config.word_weighted_speaker_mean);
    if (scores.empty()) throw std::runtime_error("no scoreable utterances");
    std::set<std::string> scored_ids;
    for (const auto& sc : scores) scored_ids.insert(sc.speaker_id);
    for (const auto& sp : current.speakers())
      if (!scored_ids.count(sp.speaker_id))
        report.dropped_speakers.push_back(sp.speaker_id + " (no scoreable utterances)");
  } catch (const std::exception& e) {
    throw StageError("score", e.what());
  }

  // outlier filtering
  try {
    if (config.z_threshold > 0 && scores.size() >= 2) {
      auto of = filter_outlier_speakers(scores, config.z_threshold);
      report.outlier_removals = std::move(of.removals);
      report.outlier_notes = std::move(of.notes);
      scores = std::move(of.retained);
    } else if (config.z_threshold <= 0) {
      report.outlier_notes.push_back("outlier filtering disabled");
    }
  } catch (const std::exception& e) {
    throw StageError("outlier-filter", e.what());
  }

  // aggregation
  try {
    std::set<std::string> retained_ids;
    for (const auto& s : scores) retained_ids.insert(s.speaker_id);
    current = current.restricted_to(retained_ids);
    if (config.run_aggregation) {
      DemographicSchema schema = current.schema();
      if (config.auto_other) {
        // threshold from the power bound with a provisional sigma estimate
        std::vector<double> ms;
        for (const auto& s : scores) ms.push_back(s.mean_wer);
        int threshold = 2;
        if (ms.size() >= 2 && stats::sample_sd(ms) > 0 && config.power_delta > 0) {
          stats::PowerQuery q;
          q.delta = config.power_delta;
          q.sigma = stats::sample_sd(ms);
          q.alpha = config.power_alpha;
          q.power = config.power_power;
          q.convention = config.power_convention;
          threshold = static_cast<int>(stats::required_speakers(q).n);
        }
        schema = build_auto_other_schema(current, schema, threshold);
      }
      current = apply_aggregation(current, schema);
      report.aggregation_log = current.merge_log();
    }
  } catch (const std::exception& e) {
    throw StageError("aggregation", e.what());
  }

  // baseline + power threshold
  for (const auto& s : scores) report.speaker_means[s.speaker_id] = s.mean_wer;
  report.n_speakers = static_cast<int>(current.speakers().size());
  report.n_utterances = static_cast<int>(current.utterances().size());

  std::vector<double> all_means;
  double sum_all = 0.0;
  for (const auto& [id, m] : report.speaker_means) {
    all_means.push_back(m);
    sum_all += m;
  }
  report.baseline_mean = sum_all / static_cast<double>(all_means.size());
  report.sigma_speaker = all_means.size() >= 2 ? stats::sample_sd(all_means) : 0.0;
  {
    double wer_sum = 0.0;
    std::size_t wer_n = 0;
    for (const auto& s : scores)
      for (double w : s.utterance_wers) {
        wer_sum += w;
        ++wer_n;
      }
    report.utterance_level_mean = wer_n ? wer_sum / static_cast<double>(wer_n) : 0.0;
    report.notes.push_back(
        "utterance_level_mean pools utterances across speakers and is reported for "
        "comparison only; baseline_mean (speaker-level) is what every analysis uses");
  }

  if (config.min_speakers_override) {
    report.min_speakers = std::max(2, *config.min_speakers_override);
    report.notes.push_back("min_speakers set explicitly");
  } else if (report.sigma_speaker > 0 && config.power_delta > 0) {
    stats::PowerQuery q;
    q.delta = config.power_delta;
    q.sigma = report.sigma_speaker;
    q.alpha = config.power_alpha;
    q.power = config.power_power;
    q.convention = config.power_convention;
    const auto bound = stats::required_speakers(q);
    report.min_speakers = static_cast<int>(std::max<long>(2, bound.n));
    report.min_speakers_raw = bound.raw_bound;
  } else {
    report.min_speakers = 2;
    report.notes.push_back("speaker-count bound unavailable (degenerate sigma); using 2");
  }

  if (!(report.baseline_mean > 0.0)) {
    report.notes.push_back(
        "baseline mean is zero (perfect transcription); relative analyses skipped");
    return report;
  }

  std::vector<std::string> targets;
  if (config.target_dvs) {
    targets = *config.target_dvs;
  } else {
    for (const auto& dv : current.schema().dvs) targets.push_back(dv.name);
  }
  for (const auto& dv : targets)
    if (!current.schema().find_dv(dv))
      throw StageError("marginal", "target DV '" + dv + "' not in schema");

  // marginal per-SG results
  try {
    for (const auto& dv : targets)
      report.marginal.push_back(marginal_for_dv(current, report.speaker_means, dv,
                                                report.baseline_mean, report.min_speakers,
                                                config.exclude_self_baseline, config.alphas));
  } catch (const std::exception& e) {
    throw StageError("marginal", e.what());
  }

  // isolated single-DV effects
  try {
    for (const auto& dv : targets)
      report.isolated.push_back(isolated_effect(current, report.speaker_means, dv,
                                                report.min_speakers, config.alphas,
                                                config.workers));
  } catch (const std::exception& e) {
    throw StageError("isolated", e.what());
  }

  // configured conditional slices
  try {
    for (const auto& plan : config.conditioning_plans) {
      ConditionalPlanResult pr;
      pr.dvs = plan;
      std::vector<DvDecl> plan_dvs;
      for (const auto& name : plan) {
        const DvDecl* d = current.schema().find_dv(name);
        if (!d) throw std::runtime_error("conditioning plan references unknown DV '" + name + "'");
        plan_dvs.push_back(*d);
      }
      std::vector<std::vector<std::pair<std::string, std::string>>> cells;
      for_each_assignment(plan_dvs, [&](const auto& a) { cells.push_back(a); });
      for (const auto& cell : cells) {
        std::vector<double> ms, complement;
        for (const auto& s : current.speakers()) {
          auto it = report.speaker_means.find(s.speaker_id);
          if (it == report.speaker_means.end()) continue;
          bool known = true, match = true;
          for (const auto& [dv, v] : cell) {
            const std::string& sv = s.value_of(dv);
            if (sv == kUnknown) known = false;
            if (sv != v) match = false;
          }
          if (!known) continue;
          (match ? ms : complement).push_back(it->second);
        }
        if (ms.empty()) continue;
        GroupResult g;
        g.sg = cell_label(cell);
        g.assignment = cell;
        g.n_speakers = static_cast<int>(ms.size());
        g.mean_wer = stats::mean(ms);
        g.sd_mean_wer = ms.size() >= 2 ? stats::sample_sd(ms) : 0.0;
        g.baseline_mean = report.baseline_mean;
        g.relative_error_pct = relative_error(g.mean_wer, report.baseline_mean);
        g.underpowered = g.n_speakers < report.min_speakers;
        if (g.underpowered) {
          pr.notes.push_back("cell " + g.sg + " below speaker threshold (n=" +
                             std::to_string(g.n_speakers) + ")");
        }
        // one-sided: is this slice treated worse than everyone else
        g.test = try_welch(ms, complement, stats::Side::greater, config.alphas, &g.test_note);
        pr.cells.push_back(std::move(g));
      }
      report.conditional.push_back(std::move(pr));
    }
  } catch (const std::exception& e) {
    throw StageError("conditional", e.what());
  }

  // multivariate extremes
  try {
    report.extremes =
        multivariate_extremes(current, report.speaker_means, report.min_speakers,
                              config.exclude_self_baseline, config.alphas, config.workers);
  } catch (const std::exception& e) {
    throw StageError("extremes", e.what());
  }

  return report;
}

}  // namespace fairaudit::fairness
