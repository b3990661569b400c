#include "fairaudit/report.hpp"

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fairaudit/stats.hpp"
#include "fairaudit/util.hpp"

namespace fairaudit::report {

using fairness::AuditReport;
using fairness::GroupResult;
using nlohmann::json;

namespace {

json num(double v) { return json(round_g6(v)); }

json test_to_json(const std::optional<stats::TestResult>& t, const std::string& note) {
  if (!t) {
    json j;
    j["available"] = false;
    if (!note.empty()) j["note"] = note;
    return j;
  }
  json j;
  j["available"] = true;
  j["method"] = t->method;
  j["side"] = stats::side_name(t->side);
  j["statistic"] = num(t->statistic);
  if (t->df) j["df"] = num(*t->df);
  j["p_value"] = num(t->p_value);
  j["stars"] = stats::stars(*t);
  j["significant_at"] = json::array();
  for (double a : t->significant_at) j["significant_at"].push_back(num(a));
  return j;
}

json group_to_json(const GroupResult& g) {
  json j;
  if (!g.dv.empty()) j["dv"] = g.dv;
  j["sg"] = g.sg;
  j["n_speakers"] = g.n_speakers;
  j["mean_wer"] = num(g.mean_wer);
  j["sd_mean_wer"] = num(g.sd_mean_wer);
  j["baseline_mean"] = num(g.baseline_mean);
  j["relative_error_pct"] = num(g.relative_error_pct);
  j["underpowered"] = g.underpowered;
  j["test"] = test_to_json(g.test, g.test_note);
  return j;
}

std::string test_columns(const std::optional<stats::TestResult>& t, const std::string& note) {
  if (!t) return "\t\t\t\t" + note;
  return format_g6(t->statistic) + "\t" + (t->df ? format_g6(*t->df) : "") + "\t" +
         format_g6(t->p_value) + "\t" + stats::stars(*t) + "\t" + note;
}

std::string joined(const std::vector<std::string>& xs) { return join(xs, ","); }

/// 95% CI halfwidth of the mean relative error from the group sd.
std::pair<double, double> rel_error_ci(const GroupResult& g) {
  if (g.n_speakers < 2 || !(g.baseline_mean > 0.0) || g.sd_mean_wer == 0.0)
    return {g.relative_error_pct, g.relative_error_pct};
  const double sd_rel = 100.0 * g.sd_mean_wer / g.baseline_mean;
  const double tq = stats::t_quantile(0.975, static_cast<double>(g.n_speakers - 1));
  const double half = tq * sd_rel / std::sqrt(static_cast<double>(g.n_speakers));
  return {g.relative_error_pct - half, g.relative_error_pct + half};
}

}  // namespace

std::string to_json(const AuditReport& r) {
  json doc;
  doc["baseline_mean"] = num(r.baseline_mean);
  doc["utterance_level_mean"] = num(r.utterance_level_mean);
  doc["n_speakers"] = r.n_speakers;
  doc["n_utterances"] = r.n_utterances;
  doc["sigma_speaker"] = num(r.sigma_speaker);
  doc["min_speakers"] = r.min_speakers;
  doc["min_speakers_raw"] = num(r.min_speakers_raw);
  doc["alphas"] = json::array();
  for (double a : r.alphas) doc["alphas"].push_back(num(a));

  doc["speaker_means"] = json::object();
  for (const auto& [id, m] : r.speaker_means) doc["speaker_means"][id] = num(m);

  doc["marginal"] = json::array();
  for (const auto& m : r.marginal) {
    json jm;
    jm["dv"] = m.dv;
    jm["unknown_speakers"] = m.unknown_speakers;
    jm["groups"] = json::array();
    for (const auto& g : m.groups) jm["groups"].push_back(group_to_json(g));
    jm["wer_gap_pct"] = num(m.gap.gap_pct);
    jm["gap_max_sgs"] = m.gap.max_sgs;
    jm["gap_min_sgs"] = m.gap.min_sgs;
    jm["gap_test"] = test_to_json(m.gap_test, m.gap_test_note);
    doc["marginal"].push_back(jm);
  }

  doc["isolated"] = json::array();
  for (const auto& iso : r.isolated) {
    json ji;
    ji["dv"] = iso.dv;
    ji["n_strata_nonempty"] = iso.n_strata_nonempty;
    ji["n_strata_admissible"] = iso.n_strata_admissible;
    ji["per_sg"] = json::array();
    for (const auto& sg : iso.per_sg) {
      json js;
      js["sg"] = sg.sg;
      js["status"] = sg.status;
      js["strata"] = sg.strata;
      js["samples"] = json::array();
      for (double v : sg.samples) js["samples"].push_back(num(v));
      js["test"] = test_to_json(sg.test, sg.status);
      ji["per_sg"].push_back(js);
    }
    ji["gap_strata"] = iso.gap_strata;
    ji["gap_samples"] = json::array();
    for (double v : iso.gap_samples) ji["gap_samples"].push_back(num(v));
    ji["gap_test"] = test_to_json(iso.gap_test, iso.gap_status);
    ji["gap_status"] = iso.gap_status;
    ji["notes"] = iso.notes;
    doc["isolated"].push_back(ji);
  }

  doc["conditional"] = json::array();
  for (const auto& plan : r.conditional) {
    json jp;
    jp["dvs"] = plan.dvs;
    jp["cells"] = json::array();
    for (const auto& c : plan.cells) jp["cells"].push_back(group_to_json(c));
    jp["notes"] = plan.notes;
    doc["conditional"].push_back(jp);
  }

  {
    json je;
    je["ranked"] = json::array();
    for (const auto& g : r.extremes.ranked) je["ranked"].push_back(group_to_json(g));
    je["underpowered"] = json::array();
    for (const auto& g : r.extremes.underpowered) je["underpowered"].push_back(group_to_json(g));
    je["best_cell"] = r.extremes.best_cell;
    je["worst_cell"] = r.extremes.worst_cell;
    if (!r.extremes.note.empty()) je["note"] = r.extremes.note;
    doc["extremes"] = je;
  }

  {
    json logs;
    logs["quality_removals"] = json::array();
    for (const auto& e : r.quality_removals) {
      json j{{"utterance_id", e.utterance_id}, {"reason", e.reason}, {"value", num(e.value)}};
      logs["quality_removals"].push_back(j);
    }
    logs["quality_notes"] = r.quality_notes;
    logs["outlier_removals"] = json::array();
    for (const auto& e : r.outlier_removals) {
      json j{{"kind", e.kind}, {"id", e.id}, {"z", num(e.z)}, {"value", num(e.value)}};
      logs["outlier_removals"].push_back(j);
    }
    logs["outlier_notes"] = r.outlier_notes;
    logs["aggregation"] = json::array();
    for (const auto& e : r.aggregation_log) {
      json j{{"dv", e.dv}, {"from", e.from}, {"to", e.to}, {"speaker_count", e.speaker_count}};
      logs["aggregation"].push_back(j);
    }
    logs["score_skips"] = json::array();
    for (const auto& e : r.score_skips) {
      json j{{"utterance_id", e.utterance_id}, {"reason", e.reason}};
      logs["score_skips"].push_back(j);
    }
    logs["dropped_speakers"] = r.dropped_speakers;
    logs["notes"] = r.notes;
    doc["logs"] = logs;
  }

  return doc.dump(2) + "\n";
}

std::vector<std::filesystem::path> emit_report(const AuditReport& r,
                                               const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::vector<fs::path> written;
  auto emit = [&](const std::string& name, const std::string& content) {
    const fs::path p = dir / name;
    atomic_write_file(p, content);
    written.push_back(p);
  };

  emit("report.json", to_json(r));

  {
    std::string t =
        "dv\tsg\tn_speakers\tunderpowered\tmean_wer\tbaseline_mean\trelative_error_pct\t"
        "statistic\tdf\tp_value\tstars\tnote\n";
    for (const auto& m : r.marginal)
      for (const auto& g : m.groups)
        t += g.dv + "\t" + g.sg + "\t" + std::to_string(g.n_speakers) + "\t" +
             (g.underpowered ? "yes" : "no") + "\t" + format_g6(g.mean_wer) + "\t" +
             format_g6(g.baseline_mean) + "\t" + format_g6(g.relative_error_pct) + "\t" +
             test_columns(g.test, g.test_note) + "\n";
    emit("sg_results.tsv", t);
  }

  {
    std::string t = "dv\twer_gap_pct\tmax_sgs\tmin_sgs\tstatistic\tdf\tp_value\tstars\tnote\n";
    for (const auto& m : r.marginal)
      t += m.dv + "\t" + format_g6(m.gap.gap_pct) + "\t" + joined(m.gap.max_sgs) + "\t" +
           joined(m.gap.min_sgs) + "\t" + test_columns(m.gap_test, m.gap_test_note) + "\n";
    emit("dv_gaps.tsv", t);
  }

  {
    std::string t = "dv\tkind\tsg\tstratum\trelative_error_pct\n";
    for (const auto& iso : r.isolated) {
      for (const auto& sg : iso.per_sg)
        for (std::size_t i = 0; i < sg.samples.size(); ++i)
          t += iso.dv + "\tsg\t" + sg.sg + "\t" + sg.strata[i] + "\t" + format_g6(sg.samples[i]) +
               "\n";
      for (std::size_t i = 0; i < iso.gap_samples.size(); ++i)
        t += iso.dv + "\tgap\t\t" + iso.gap_strata[i] + "\t" + format_g6(iso.gap_samples[i]) + "\n";
    }
    emit("isolated_effects.tsv", t);
  }

  {
    std::string t =
        "dv\tkind\tsg\tn_strata\tmean_sample\tstatistic\tdf\tp_value\tstars\tstatus\n";
    for (const auto& iso : r.isolated) {
      for (const auto& sg : iso.per_sg) {
        const std::string mean_s =
            sg.samples.empty() ? "" : format_g6(stats::mean(sg.samples));
        t += iso.dv + "\tsg\t" + sg.sg + "\t" + std::to_string(sg.samples.size()) + "\t" + mean_s +
             "\t" + test_columns(sg.test, sg.status) + "\n";
      }
      const std::string gap_mean =
          iso.gap_samples.empty() ? "" : format_g6(stats::mean(iso.gap_samples));
      t += iso.dv + "\tgap\t\t" + std::to_string(iso.gap_samples.size()) + "\t" + gap_mean + "\t" +
           test_columns(iso.gap_test, iso.gap_status) + "\n";
    }
    emit("isolated_summary.tsv", t);
  }

  {
    std::string t =
        "plan\tcell\tn_speakers\tunderpowered\tmean_wer\trelative_error_pct\t"
        "statistic\tdf\tp_value\tstars\tnote\n";
    for (const auto& plan : r.conditional) {
      const std::string plan_name = joined(plan.dvs);
      for (const auto& g : plan.cells)
        t += plan_name + "\t" + g.sg + "\t" + std::to_string(g.n_speakers) + "\t" +
             (g.underpowered ? "yes" : "no") + "\t" + format_g6(g.mean_wer) + "\t" +
             format_g6(g.relative_error_pct) + "\t" + test_columns(g.test, g.test_note) + "\n";
    }
    emit("conditional_results.tsv", t);
  }

  {
    std::string t =
        "rank\tcell\tn_speakers\tmean_wer\trelative_error_pct\tstatistic\tdf\tp_value\tstars\t"
        "flag\n";
    int rank = 1;
    for (const auto& g : r.extremes.ranked) {
      std::string flag;
      if (g.sg == r.extremes.worst_cell) flag = "worst";
      if (g.sg == r.extremes.best_cell) flag = flag.empty() ? "best" : flag + ",best";
      t += std::to_string(rank++) + "\t" + g.sg + "\t" + std::to_string(g.n_speakers) + "\t" +
           format_g6(g.mean_wer) + "\t" + format_g6(g.relative_error_pct) + "\t" +
           test_columns(g.test, g.test_note) + "\t" + flag + "\n";
    }
    for (const auto& g : r.extremes.underpowered)
      t += "\t" + g.sg + "\t" + std::to_string(g.n_speakers) + "\t" + format_g6(g.mean_wer) +
           "\t" + format_g6(g.relative_error_pct) + "\t\t\t\t\tunderpowered\n";
    emit("extremes.tsv", t);
  }

  {
    std::string t = "speaker_id\tmean_wer\n";
    for (const auto& [id, m] : r.speaker_means) t += id + "\t" + format_g6(m) + "\n";
    emit("speaker_means.tsv", t);
  }

  {
    std::string t;
    for (const auto& e : r.quality_removals) {
      json j{{"stage", "quality"},
             {"utterance_id", e.utterance_id},
             {"reason", e.reason},
             {"value", num(e.value)}};
      t += j.dump() + "\n";
    }
    for (const auto& e : r.outlier_removals) {
      json j{{"stage", "outlier"},
             {"kind", e.kind},
             {"id", e.id},
             {"reason", "z-above-threshold"},
             {"value", num(e.value)},
             {"z", num(e.z)}};
      t += j.dump() + "\n";
    }
    for (const auto& e : r.score_skips) {
      json j{{"stage", "score"}, {"id", e.utterance_id}, {"reason", e.reason}};
      t += j.dump() + "\n";
    }
    emit("removals.jsonl", t);
  }

  {
    std::string t = "dv\tsg\tn_speakers\trelative_error_pct\terr_lo\terr_hi\n";
    for (const auto& m : r.marginal)
      for (const auto& g : m.groups) {
        const auto [lo, hi] = rel_error_ci(g);
        t += g.dv + "\t" + g.sg + "\t" + std::to_string(g.n_speakers) + "\t" +
             format_g6(g.relative_error_pct) + "\t" + format_g6(lo) + "\t" + format_g6(hi) + "\n";
      }
    emit("plot_sg_results.tsv", t);
  }

  return written;
}

}  // namespace fairaudit::report
