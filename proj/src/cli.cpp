#include "fairaudit/cli.hpp"

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fairaudit/corpus.hpp"
#include "fairaudit/fairness.hpp"
#include "fairaudit/quality.hpp"
#include "fairaudit/regression.hpp"
#include "fairaudit/report.hpp"
#include "fairaudit/scoring.hpp"
#include "fairaudit/stats.hpp"
#include "fairaudit/synth.hpp"
#include "fairaudit/util.hpp"

namespace fairaudit::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kOk = 0;
constexpr int kInputError = 1;
constexpr int kInternalError = 2;

struct CommonInputs {
  std::string manifest;
  std::string schema;
};

Corpus load_corpus(const CommonInputs& in) {
  const auto doc = load_schema(in.schema);
  return load_manifest(in.manifest, doc);
}

json validation_to_json(const ValidationReport& rep) {
  json out;
  out["ok"] = rep.ok();
  auto issues = [](const std::vector<ValidationIssue>& xs) {
    json arr = json::array();
    for (const auto& i : xs)
      arr.push_back({{"kind", i.kind}, {"subject", i.subject}, {"detail", i.detail}});
    return arr;
  };
  out["violations"] = issues(rep.violations);
  out["warnings"] = issues(rep.warnings);
  out["sg_speaker_counts"] = rep.sg_speaker_counts;
  out["speaker_utterance_counts"] = rep.speaker_utterance_counts;
  return out;
}

int cmd_validate(const CommonInputs& in) {
  const Corpus corpus = load_corpus(in);
  const auto rep = validate(corpus, corpus.schema());
  std::cout << validation_to_json(rep).dump(2) << "\n";
  return rep.ok() ? kOk : kInputError;
}

struct ScoreOptions {
  CommonInputs in;
  std::string out_path;
  bool keep_punctuation = false;
  bool keep_case = false;
  int workers = 0;
};

int cmd_score(const ScoreOptions& opt) {
  const Corpus corpus = load_corpus(opt.in);
  scoring::NormalizeConfig norm;
  norm.strip_punctuation = !opt.keep_punctuation;
  norm.lowercase = !opt.keep_case;
  const auto scores = scoring::score_corpus(corpus, norm, resolve_workers(opt.workers));
  const std::string table = serialize_score_table(corpus, scores);
  if (opt.out_path.empty()) {
    std::cout << table;
  } else {
    atomic_write_file(opt.out_path, table);
  }
  std::cerr << "scored " << scores.by_utterance.size() << " utterances, skipped "
            << scores.skipped.size() << "\n";
  return kOk;
}

struct PowerOptions {
  double delta = 0.0;
  double sigma = 0.0;
  double alpha = 0.05;
  double power = 0.8;
  bool one_sided = false;
};

int cmd_power(const PowerOptions& opt) {
  stats::PowerQuery q;
  q.delta = opt.delta;
  q.sigma = opt.sigma;
  q.alpha = opt.alpha;
  q.power = opt.power;
  q.convention = opt.one_sided ? stats::QuantileConvention::one_sided
                               : stats::QuantileConvention::two_sided_alpha;
  const auto bound = stats::required_speakers(q);
  json out;
  out["raw_bound"] = round_g6(bound.raw_bound);
  out["n"] = bound.n;
  out["z_alpha"] = round_g6(bound.z_alpha);
  out["z_beta"] = round_g6(bound.z_beta);
  out["convention"] = opt.one_sided ? "one-sided" : "two-sided-alpha";
  std::cout << out.dump(2) << "\n";
  return kOk;
}

struct AuditOptions {
  CommonInputs in;
  std::string config_path;
  std::string lexicon_path;
  std::string audio_root;
  std::string out_dir = "audit-out";
  // scalar overrides are applied only when the flag was actually given,
  // so a config file's values survive untouched defaults
  std::optional<double> min_snr_db;
  std::optional<double> max_nonstandard_ratio;
  std::optional<double> z_threshold;
  std::vector<double> alphas;
  std::optional<double> delta;
  std::optional<double> power;
  std::optional<double> power_alpha;
  bool one_sided_quantile = false;
  std::optional<int> min_speakers;
  std::vector<std::string> target_dvs;
  std::vector<std::string> conditioning;  // comma-joined DV lists
  bool exclude_self_baseline = false;
  bool no_aggregation = false;
  bool auto_other = false;
  bool word_weighted = false;
  int workers = 0;
};

void apply_config_file(fairness::AuditConfig& cfg, const std::string& path) {
  json doc = json::parse(read_file(path));
  if (doc.contains("z_threshold")) cfg.z_threshold = doc["z_threshold"].get<double>();
  if (doc.contains("alphas")) {
    cfg.alphas.clear();
    for (const auto& a : doc["alphas"]) cfg.alphas.push_back(a.get<double>());
  }
  if (doc.contains("delta")) cfg.power_delta = doc["delta"].get<double>();
  if (doc.contains("power")) cfg.power_power = doc["power"].get<double>();
  if (doc.contains("power_alpha")) cfg.power_alpha = doc["power_alpha"].get<double>();
  if (doc.contains("min_speakers")) cfg.min_speakers_override = doc["min_speakers"].get<int>();
  if (doc.contains("one_sided_quantile") && doc["one_sided_quantile"].get<bool>())
    cfg.power_convention = stats::QuantileConvention::one_sided;
  if (doc.contains("target_dvs")) {
    std::vector<std::string> dvs;
    for (const auto& d : doc["target_dvs"]) dvs.push_back(d.get<std::string>());
    cfg.target_dvs = std::move(dvs);
  }
  if (doc.contains("conditioning_plans")) {
    cfg.conditioning_plans.clear();
    for (const auto& plan : doc["conditioning_plans"]) {
      std::vector<std::string> dvs;
      for (const auto& d : plan) dvs.push_back(d.get<std::string>());
      cfg.conditioning_plans.push_back(std::move(dvs));
    }
  }
  if (doc.contains("exclude_self_baseline"))
    cfg.exclude_self_baseline = doc["exclude_self_baseline"].get<bool>();
  if (doc.contains("run_aggregation")) cfg.run_aggregation = doc["run_aggregation"].get<bool>();
  if (doc.contains("auto_other")) cfg.auto_other = doc["auto_other"].get<bool>();
  if (doc.contains("min_snr_db")) cfg.quality.min_snr_db = doc["min_snr_db"].get<double>();
  if (doc.contains("max_nonstandard_ratio"))
    cfg.quality.max_nonstandard_ratio = doc["max_nonstandard_ratio"].get<double>();
  if (doc.contains("word_weighted_speaker_mean"))
    cfg.word_weighted_speaker_mean = doc["word_weighted_speaker_mean"].get<bool>();
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

/// SNR per utterance for entries with audio; decode problems are logged and
/// leave the utterance un-gated.
std::map<std::string, double> compute_snr(const Corpus& corpus, const std::string& audio_root,
                                          std::vector<std::string>* notes, int workers) {
  const auto& utts = corpus.utterances();
  std::vector<std::optional<double>> snr(utts.size());
  std::vector<std::string> errors(utts.size());
  parallel_for(utts.size(), workers, [&](std::size_t i) {
    const auto& u = utts[i];
    if (!u.audio_path) return;
    try {
      const fs::path p = fs::path(audio_root) / *u.audio_path;
      const auto wav = quality::read_wav(p);
      quality::FrameConfig fc;
      fc.sample_rate = wav.sample_rate;
      snr[i] = quality::estimate_snr(wav.samples, fc);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  std::map<std::string, double> out;
  for (std::size_t i = 0; i < utts.size(); ++i) {
    if (snr[i]) out[utts[i].utterance_id] = *snr[i];
    if (!errors[i].empty() && notes)
      notes->push_back("snr skipped for " + utts[i].utterance_id + ": " + errors[i]);
  }
  return out;
}

int cmd_audit(const AuditOptions& opt) {
  const Corpus corpus = load_corpus(opt.in);

  fairness::AuditConfig cfg;
  if (!opt.config_path.empty()) apply_config_file(cfg, opt.config_path);

  // flags given on the command line override the config file
  if (opt.min_snr_db) cfg.quality.min_snr_db = *opt.min_snr_db;
  if (opt.max_nonstandard_ratio) cfg.quality.max_nonstandard_ratio = opt.max_nonstandard_ratio;
  if (!opt.lexicon_path.empty()) cfg.quality.lexicon = quality::load_lexicon(opt.lexicon_path);
  if (opt.z_threshold) cfg.z_threshold = *opt.z_threshold;
  if (!opt.alphas.empty()) cfg.alphas = opt.alphas;
  if (opt.delta) cfg.power_delta = *opt.delta;
  if (opt.power) cfg.power_power = *opt.power;
  if (opt.power_alpha) cfg.power_alpha = *opt.power_alpha;
  if (opt.one_sided_quantile) cfg.power_convention = stats::QuantileConvention::one_sided;
  if (opt.min_speakers) cfg.min_speakers_override = opt.min_speakers;
  if (!opt.target_dvs.empty()) cfg.target_dvs = opt.target_dvs;
  for (const auto& plan : opt.conditioning) cfg.conditioning_plans.push_back(split_csv(plan));
  if (opt.exclude_self_baseline) cfg.exclude_self_baseline = true;
  if (opt.no_aggregation) cfg.run_aggregation = false;
  if (opt.auto_other) cfg.auto_other = true;
  if (opt.word_weighted) cfg.word_weighted_speaker_mean = true;
  cfg.workers = resolve_workers(opt.workers);

  std::vector<std::string> snr_notes;
  std::map<std::string, double> snr;
  if (!opt.audio_root.empty()) snr = compute_snr(corpus, opt.audio_root, &snr_notes, cfg.workers);

  fairness::AuditReport rep;
  try {
    rep = fairness::audit(corpus, snr, cfg);
  } catch (const fairness::StageError& e) {
    std::cerr << "audit failed: " << e.what() << "\n";
    return e.stage_name == "validate" ? kInputError : kInternalError;
  }
  for (auto& n : snr_notes) rep.quality_notes.push_back(n);

  const auto files = report::emit_report(rep, opt.out_dir);
  std::cerr << "audit complete: baseline mean " << format_g6(rep.baseline_mean) << " over "
            << rep.n_speakers << " speakers / " << rep.n_utterances << " utterances\n";
  for (const auto& f : files) std::cerr << "  wrote " << f.string() << "\n";
  return kOk;
}

struct RegressOptions {
  CommonInputs in;
  std::string mode = "univariate";
  std::string out_path;
  double ridge = 0.0;
  double z_threshold = 3.0;
  bool word_weighted = false;
  int workers = 0;
};

int cmd_regress(const RegressOptions& opt) {
  const Corpus corpus = load_corpus(opt.in);
  const auto rep = validate(corpus, corpus.schema());
  if (!rep.ok()) {
    std::cerr << "regress: corpus has " << rep.violations.size() << " invariant violation(s)\n";
    return kInputError;
  }
  const auto scores =
      scoring::score_corpus(corpus, scoring::NormalizeConfig{}, resolve_workers(opt.workers));
  auto speaker = scoring::speaker_scores(corpus, scores, opt.word_weighted);
  if (opt.z_threshold > 0 && speaker.size() >= 2)
    speaker = fairness::filter_outlier_speakers(speaker, opt.z_threshold).retained;

  std::map<std::string, double> means;
  for (const auto& s : speaker) means[s.speaker_id] = s.mean_wer;

  const auto mode = opt.mode == "multivariate" || opt.mode == "multi"
                        ? regression::Mode::multivariate
                        : regression::Mode::univariate;
  const auto result = regression::regress(corpus, means, mode, opt.ridge);
  const std::string table = serialize_coefficients(result);
  if (opt.out_path.empty()) {
    std::cout << table;
  } else {
    atomic_write_file(opt.out_path, table);
  }
  std::cerr << "fit rank " << result.fit.rank << "/" << result.fit.labels.size()
            << (result.fit.rank_deficient ? " (rank-deficient)" : "") << ", residual norm "
            << format_g6(result.fit.residual_norm) << "\n";
  for (const auto& n : result.notes) std::cerr << "note: " << n << "\n";
  return kOk;
}

struct SynthOptions {
  std::string spec_path;
  std::string out_dir = "synth-out";
  std::optional<std::uint64_t> seed;
};

int cmd_synth(const SynthOptions& opt) {
  auto spec = synth::parse_synth_spec(read_file(opt.spec_path), opt.spec_path);
  if (opt.seed) spec.seed = *opt.seed;
  const auto [corpus, truth] = synth::generate(spec);

  atomic_write_file(fs::path(opt.out_dir) / "manifest.jsonl", serialize_manifest(corpus));
  atomic_write_file(fs::path(opt.out_dir) / "schema.json", serialize_schema(corpus));
  atomic_write_file(fs::path(opt.out_dir) / "ground_truth.json",
                    synth::serialize_ground_truth(truth));
  std::string lex;
  for (const auto& w : synth::builtin_lexicon()) lex += w + "\n";
  atomic_write_file(fs::path(opt.out_dir) / "lexicon.txt", lex);

  std::cerr << "generated " << corpus.speakers().size() << " speakers, "
            << corpus.utterances().size() << " utterances into " << opt.out_dir << "\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"fairaudit: speaker-group fairness auditing for ASR transcription results"};
  app.require_subcommand(1);

  CommonInputs common;
  auto add_common = [&common](CLI::App* cmd) {
    cmd->add_option("--manifest", common.manifest, "line-delimited utterance manifest")
        ->required();
    cmd->add_option("--schema", common.schema, "demographic schema + speakers document")
        ->required();
  };

  auto* validate_cmd =
      app.add_subcommand("validate", "check corpus invariants and report per-group counts");
  add_common(validate_cmd);

  ScoreOptions score_opt;
  auto* score_cmd = app.add_subcommand("score", "per-utterance WER breakdown table");
  add_common(score_cmd);
  score_cmd->add_option("--out", score_opt.out_path, "output TSV (stdout when omitted)");
  score_cmd->add_flag("--keep-punctuation", score_opt.keep_punctuation,
                      "skip punctuation stripping");
  score_cmd->add_flag("--keep-case", score_opt.keep_case, "skip lowercasing");
  score_cmd->add_option("--workers", score_opt.workers, "worker threads (0 = env or 1)");

  PowerOptions power_opt;
  auto* power_cmd = app.add_subcommand(
      "power",
      "speakers-per-group bound for detecting a mean WER difference.\n"
      "Note: sigma estimated from data overstates the underlying between-speaker\n"
      "sigma by an amount that shrinks as words per speaker grow, but never below\n"
      "it - more words per speaker cannot push this bound lower.");
  power_cmd->add_option("--delta", power_opt.delta, "detectable WER difference")->required();
  power_cmd->add_option("--sigma", power_opt.sigma, "between-speaker standard deviation")
      ->required();
  power_cmd->add_option("--alpha", power_opt.alpha, "significance level (default 0.05)");
  power_cmd->add_option("--power", power_opt.power, "desired power (default 0.8)");
  power_cmd->add_flag("--one-sided", power_opt.one_sided,
                      "use the one-sided alpha quantile (default two-sided)");

  AuditOptions audit_opt;
  auto* audit_cmd = app.add_subcommand("audit", "full fairness audit with report emission");
  add_common(audit_cmd);
  audit_cmd->add_option("--config", audit_opt.config_path, "audit config JSON");
  audit_cmd->add_option("--lexicon", audit_opt.lexicon_path,
                        "word list for the text-complexity gate");
  audit_cmd->add_option("--audio-root", audit_opt.audio_root,
                        "directory audio_path entries are resolved against");
  audit_cmd->add_option("--out-dir", audit_opt.out_dir, "report directory (default audit-out)");
  double min_snr = 10.0, mnr = -1.0, zthr = 3.0, delta = 0.1, power = 0.8, palpha = 0.05;
  auto* snr_opt = audit_cmd->add_option("--min-snr-db", min_snr,
                                        "recordings below this SNR are removed (default 10)");
  auto* mnr_opt = audit_cmd->add_option("--max-nonstandard-ratio", mnr,
                                        "remove utterances above this out-of-lexicon ratio");
  auto* z_opt = audit_cmd->add_option("--z-threshold", zthr,
                                      "outlier z threshold (default 3; <= 0 disables)");
  audit_cmd->add_option("--alpha", audit_opt.alphas, "significance levels (repeatable)");
  auto* delta_opt = audit_cmd->add_option(
      "--delta", delta, "detectable WER difference for the speaker bound (default 0.1)");
  auto* apower_opt =
      audit_cmd->add_option("--power", power, "power for the speaker bound (default 0.8)");
  auto* palpha_opt = audit_cmd->add_option("--power-alpha", palpha,
                                           "alpha for the speaker bound (default 0.05)");
  audit_cmd->add_flag("--one-sided-quantile", audit_opt.one_sided_quantile,
                      "one-sided alpha quantile in the speaker bound");
  int min_speakers = -1;
  auto* ms_opt = audit_cmd->add_option("--min-speakers", min_speakers,
                                       "explicit speaker threshold (overrides the bound)");
  audit_cmd->add_option("--target-dv", audit_opt.target_dvs,
                        "DV to analyze (repeatable; default all)");
  audit_cmd->add_option("--condition-on", audit_opt.conditioning,
                        "comma-joined DV subset for a conditional slice (repeatable)");
  audit_cmd->add_flag("--exclude-self-baseline", audit_opt.exclude_self_baseline,
                      "baseline each group against its complement");
  audit_cmd->add_flag("--no-aggregation", audit_opt.no_aggregation,
                      "skip the schema's aggregation maps");
  audit_cmd->add_flag("--auto-other", audit_opt.auto_other,
                      "fold groups below the speaker bound into 'other'");
  audit_cmd->add_flag("--word-weighted", audit_opt.word_weighted,
                      "word-weighted speaker means instead of utterance means");
  audit_cmd->add_option("--workers", audit_opt.workers, "worker threads (0 = env or 1)");
  std::uint64_t audit_seed = 0;
  audit_cmd->add_option("--seed", audit_seed, "accepted for interface symmetry; audit is "
                                              "deterministic and ignores it");

  RegressOptions regress_opt;
  auto* regress_cmd =
      app.add_subcommand("regress", "indicator regression of speaker-mean WER on groups");
  add_common(regress_cmd);
  regress_cmd->add_option("--mode", regress_opt.mode, "univariate|multivariate");
  regress_cmd->add_option("--out", regress_opt.out_path, "coefficient TSV (stdout when omitted)");
  regress_cmd->add_option("--ridge", regress_opt.ridge, "ridge penalty (default 0)");
  regress_cmd->add_option("--z-threshold", regress_opt.z_threshold,
                          "outlier z threshold (default 3; <= 0 disables)");
  regress_cmd->add_flag("--word-weighted", regress_opt.word_weighted,
                        "word-weighted speaker means");
  regress_cmd->add_option("--workers", regress_opt.workers, "worker threads (0 = env or 1)");

  SynthOptions synth_opt;
  std::uint64_t synth_seed = 0;
  auto* synth_cmd =
      app.add_subcommand("synth", "generate a corpus with known injected bias structure");
  synth_cmd->add_option("--spec", synth_opt.spec_path, "generator spec JSON")->required();
  synth_cmd->add_option("--out-dir", synth_opt.out_dir, "output directory (default synth-out)");
  synth_cmd->add_option("--seed", synth_seed, "generator seed (overriding any seed in the spec file)")
      ->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInputError;
  }

  try {
    if (validate_cmd->parsed()) return cmd_validate(common);
    if (score_cmd->parsed()) {
      score_opt.in = common;
      return cmd_score(score_opt);
    }
    if (power_cmd->parsed()) return cmd_power(power_opt);
    if (audit_cmd->parsed()) {
      audit_opt.in = common;
      if (snr_opt->count() > 0) audit_opt.min_snr_db = min_snr;
      if (mnr_opt->count() > 0) audit_opt.max_nonstandard_ratio = mnr;
      if (z_opt->count() > 0) audit_opt.z_threshold = zthr;
      if (delta_opt->count() > 0) audit_opt.delta = delta;
      if (apower_opt->count() > 0) audit_opt.power = power;
      if (palpha_opt->count() > 0) audit_opt.power_alpha = palpha;
      if (ms_opt->count() > 0) audit_opt.min_speakers = min_speakers;
      return cmd_audit(audit_opt);
    }
    if (regress_cmd->parsed()) {
      regress_opt.in = common;
      return cmd_regress(regress_opt);
    }
    if (synth_cmd->parsed()) {
      synth_opt.seed = synth_seed;
      return cmd_synth(synth_opt);
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternalError;
  }
  return kInputError;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace fairaudit::cli
