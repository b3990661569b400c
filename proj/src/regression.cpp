#include "fairaudit/regression.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

#include "fairaudit/util.hpp"

namespace fairaudit::regression {

namespace {

constexpr double kRankTolerance = 1e-10;

/// Speakers with a score and fully known labels, in id order.
std::vector<const Speaker*> usable_speakers(const Corpus& corpus,
                                            const std::map<std::string, double>& speaker_means,
                                            bool throw_on_unknown,
                                            std::vector<std::string>* excluded) {
  std::vector<const Speaker*> out;
  for (const auto& s : corpus.speakers()) {
    if (!speaker_means.count(s.speaker_id)) continue;
    bool unknown = false;
    for (const auto& dv : corpus.schema().dvs)
      if (s.value_of(dv.name) == kUnknown) {
        unknown = true;
        break;
      }
    if (unknown) {
      if (throw_on_unknown)
        throw std::invalid_argument("design matrix: speaker '" + s.speaker_id +
                                    "' has an 'unknown' label");
      if (excluded) excluded->push_back(s.speaker_id);
      continue;
    }
    out.push_back(&s);
  }
  return out;
}

}  // namespace

DesignMatrix build_design_univariate(const Corpus& corpus,
                                     const std::map<std::string, double>& speaker_means) {
  DesignMatrix dm;
  dm.column_labels.push_back("const");
  std::map<std::string, std::size_t> col_of;
  for (const auto& dv : corpus.schema().dvs)
    for (const auto& v : dv.values) {
      col_of[dv.name + "=" + v] = dm.column_labels.size();
      dm.column_labels.push_back(dv.name + "=" + v);
    }

  for (const Speaker* s : usable_speakers(corpus, speaker_means, true, nullptr)) {
    std::vector<double> row(dm.column_labels.size(), 0.0);
    row[0] = 1.0;
    for (const auto& dv : corpus.schema().dvs)
      row[col_of.at(dv.name + "=" + s->value_of(dv.name))] = 1.0;
    dm.rows.push_back(std::move(row));
    dm.row_speakers.push_back(s->speaker_id);
    dm.response.push_back(speaker_means.at(s->speaker_id));
  }
  return dm;
}

DesignMatrix build_design_multivariate(const Corpus& corpus,
                                       const std::map<std::string, double>& speaker_means) {
  const auto speakers = usable_speakers(corpus, speaker_means, true, nullptr);

  // Only populated cells get a column.
  std::map<std::string, std::size_t> col_of;
  std::vector<std::string> cell_of_speaker;
  cell_of_speaker.reserve(speakers.size());
  for (const Speaker* s : speakers) {
    std::string label;
    for (const auto& dv : corpus.schema().dvs) {
      if (!label.empty()) label += '|';
      label += dv.name + "=" + s->value_of(dv.name);
    }
    cell_of_speaker.push_back(label);
    col_of.emplace(label, 0);
  }
  DesignMatrix dm;
  for (auto& [label, idx] : col_of) {
    idx = dm.column_labels.size();
    dm.column_labels.push_back(label);
  }
  for (std::size_t i = 0; i < speakers.size(); ++i) {
    std::vector<double> row(dm.column_labels.size(), 0.0);
    row[col_of.at(cell_of_speaker[i])] = 1.0;
    dm.rows.push_back(std::move(row));
    dm.row_speakers.push_back(speakers[i]->speaker_id);
    dm.response.push_back(speaker_means.at(speakers[i]->speaker_id));
  }
  return dm;
}

RegressionFit fit_least_squares(const DesignMatrix& dm, double ridge) {
  if (dm.n_rows() == 0) throw std::invalid_argument("fit_least_squares: empty design matrix");
  const auto n = static_cast<Eigen::Index>(dm.n_rows());
  const auto p = static_cast<Eigen::Index>(dm.n_cols());

  Eigen::MatrixXd X(n, p);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    y(i) = dm.response[i];
    for (Eigen::Index j = 0; j < p; ++j) X(i, j) = dm.rows[i][j];
  }

  RegressionFit fit;
  fit.labels = dm.column_labels;
  Eigen::VectorXd beta;
  if (ridge > 0.0) {
    // Augmented rows [X; sqrt(ridge) I] make the system full rank.
    Eigen::MatrixXd Xa(n + p, p);
    Eigen::VectorXd ya(n + p);
    Xa.topRows(n) = X;
    Xa.bottomRows(p) = std::sqrt(ridge) * Eigen::MatrixXd::Identity(p, p);
    ya.head(n) = y;
    ya.tail(p).setZero();
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(Xa);
    cod.setThreshold(kRankTolerance);
    beta = cod.solve(ya);
    fit.rank = static_cast<int>(cod.rank());
    fit.solver = "cod+ridge(" + format_g6(ridge) + ")";
  } else {
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod;
    cod.setThreshold(kRankTolerance);
    cod.compute(X);
    beta = cod.solve(y);
    fit.rank = static_cast<int>(cod.rank());
    fit.solver = "complete-orthogonal-decomposition";
  }
  fit.rank_deficient = fit.rank < static_cast<int>(p);

  fit.coefficients.assign(beta.data(), beta.data() + beta.size());
  const Eigen::VectorXd pred = X * beta;
  fit.predictions.assign(pred.data(), pred.data() + pred.size());
  fit.residual_norm = (y - pred).norm();
  return fit;
}

RegressionReport regress(const Corpus& corpus, const std::map<std::string, double>& speaker_means,
                         Mode mode, double ridge) {
  RegressionReport report;
  report.mode = mode;

  // Unknown-labeled speakers are excluded from the fit, mirroring how the
  // metric analyses treat them.
  std::vector<std::string> excluded;
  usable_speakers(corpus, speaker_means, false, &excluded);
  report.excluded_speakers = excluded;
  std::map<std::string, double> filtered = speaker_means;
  for (const auto& id : excluded) filtered.erase(id);

  DesignMatrix dm = mode == Mode::univariate ? build_design_univariate(corpus, filtered)
                                             : build_design_multivariate(corpus, filtered);
  if (dm.n_rows() == 0) throw std::invalid_argument("regress: no usable speakers");
  report.underdetermined = dm.n_rows() < dm.n_cols();
  if (report.underdetermined)
    report.notes.push_back("underdetermined system: fewer speakers than columns; "
                           "minimum-norm solution reported");

  report.fit = fit_least_squares(dm, ridge);
  if (report.fit.rank_deficient)
    report.notes.push_back(
        "rank-deficient design (expected for the over-complete indicator encoding); "
        "coefficients are the minimum-norm representative and not individually "
        "identifiable - compare predictions and contrasts instead");

  std::vector<int> column_counts(dm.n_cols(), 0);
  for (const auto& row : dm.rows)
    for (std::size_t j = 0; j < row.size(); ++j)
      if (row[j] != 0.0) ++column_counts[j];

  for (std::size_t j = 0; j < dm.n_cols(); ++j)
    report.table.push_back({dm.column_labels[j], report.fit.coefficients[j], column_counts[j]});
  std::sort(report.table.begin(), report.table.end(),
            [](const CoefficientRow& a, const CoefficientRow& b) {
              const double ma = std::fabs(a.coefficient), mb = std::fabs(b.coefficient);
              if (ma != mb) return ma > mb;
              return a.label < b.label;
            });
  return report;
}

std::string serialize_coefficients(const RegressionReport& report) {
  std::string out = "label\tcoefficient\tn_speakers\n";
  for (const auto& row : report.table)
    out += row.label + "\t" + format_g6(row.coefficient) + "\t" + std::to_string(row.n_speakers) +
           "\n";
  return out;
}

}  // namespace fairaudit::regression
