#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fairaudit/corpus.hpp"
#include "fairaudit/scoring.hpp"

namespace fairaudit::regression {

/// Indicator design over speakers; response is the speaker-mean WER (never
/// utterance rows, so over-represented speakers cannot tilt the fit).
struct DesignMatrix {
  std::vector<std::string> column_labels;  // "const", "dv=value" or cell labels
  std::vector<std::string> row_speakers;   // speaker ids, sorted
  std::vector<std::vector<double>> rows;   // 0/1 entries
  std::vector<double> response;

  std::size_t n_rows() const { return rows.size(); }
  std::size_t n_cols() const { return column_labels.size(); }
};

enum class Mode { univariate, multivariate };

/// One indicator column per SG per DV plus a leading constant column (the
/// "everything" group). This encoding is intentionally over-complete, so
/// expect rank deficiency downstream. Throws if a speaker carries "unknown"
/// for any DV.
DesignMatrix build_design_univariate(const Corpus& corpus,
                                     const std::map<std::string, double>& speaker_means);

/// One indicator column per populated full-intersection cell; rows are
/// one-hot across cell columns. Throws on "unknown" labels.
DesignMatrix build_design_multivariate(const Corpus& corpus,
                                       const std::map<std::string, double>& speaker_means);

struct RegressionFit {
  std::vector<std::string> labels;
  std::vector<double> coefficients;
  std::vector<double> predictions;
  double residual_norm = 0.0;
  int rank = 0;
  bool rank_deficient = false;
  std::string solver;
};

/// Minimum-norm least squares via complete orthogonal decomposition with
/// column-pivoting rank detection at relative tolerance 1e-10. ridge > 0
/// switches to the augmented full-rank system instead.
RegressionFit fit_least_squares(const DesignMatrix& dm, double ridge = 0.0);

struct CoefficientRow {
  std::string label;
  double coefficient = 0.0;
  int n_speakers = 0;  // speakers with a 1 in this column
};

struct RegressionReport {
  Mode mode = Mode::univariate;
  RegressionFit fit;
  std::vector<CoefficientRow> table;  // sorted by |coefficient| descending
  std::vector<std::string> excluded_speakers;  // "unknown" labels
  bool underdetermined = false;  // fewer rows than columns
  std::vector<std::string> notes;
};

/// End-to-end: drops unknown-labeled speakers (logged), builds the design,
/// fits, and ranks coefficients by magnitude.
RegressionReport regress(const Corpus& corpus, const std::map<std::string, double>& speaker_means,
                         Mode mode, double ridge = 0.0);

std::string serialize_coefficients(const RegressionReport& report);

}  // namespace fairaudit::regression
