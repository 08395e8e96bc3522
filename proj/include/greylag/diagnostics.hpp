#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "greylag/engine.hpp"

namespace greylag {

/// Draws of one scalar quantity: one row per chain, one column per iteration.
using ChainArray = Eigen::MatrixXd;

/// Splits every chain into halves (dropping the middle draw of odd chains).
ChainArray split_chains(const ChainArray& chains);

/// Normal scores of the pooled average ranks: Phi^-1((r - 3/8) / (S + 1/4)).
ChainArray rank_normalize(const ChainArray& chains);

/// Biased autocovariance of one sequence at lags 0..n-1, by FFT.
Eigen::VectorXd autocovariance(const Eigen::VectorXd& x);

/// Multi-chain ESS with Geyer's initial monotone sequence, no splitting or
/// ranking. Capped at N log10 N.
double ess(const ChainArray& chains);

/// ESS of the rank-normalized split chains.
double ess_bulk(const ChainArray& chains);

/// Rank-normalized split R-hat: sqrt(((n-1)/n W + B/n) / W) on split,
/// rank-normalized chains.
double split_rhat(const ChainArray& chains);

/// The same statistic on the raw split chains.
double split_rhat_classic(const ChainArray& chains);

struct SummaryRow {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double q5 = 0.0, q25 = 0.0, q50 = 0.0, q75 = 0.0, q95 = 0.0;
  double ess_bulk = 0.0;
  double ess_per_second = 0.0;
  double rhat = 0.0;
};

struct ErrorReportRow {
  int code = 0;
  std::string description;
  std::string kernel;
  long count = 0;
};

struct Summary {
  std::vector<SummaryRow> rows;
  std::vector<ErrorReportRow> errors;
};

/// Linear-interpolation quantile (numpy's default) of unsorted values.
double quantile(std::vector<double> values, double p);

/// One row per flat parameter column. Rows whose ESS or R-hat cannot be
/// computed (constant draws) carry NaN there. ESS per second divides by
/// `posterior_seconds`.
Summary summarize(const SamplingResults& results, double posterior_seconds);

void write_summary_csv(std::ostream& out, const Summary& summary);
/// Fixed-width table followed by the error report.
std::string format_summary(const Summary& summary);

}  // namespace greylag
