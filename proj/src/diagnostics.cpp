#include "greylag/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include <boost/math/distributions/normal.hpp>
#include <unsupported/Eigen/FFT>

#include "greylag/errors.hpp"

namespace greylag {

namespace {

void check_chains(const ChainArray& chains) {
  if (chains.rows() < 1) throw DiagnosticError("at least one chain is required");
  if (chains.cols() < 8) {
    throw DiagnosticError("chains of " + std::to_string(chains.cols()) +
                          " draws are too short (at least 8 are required)");
  }
  if (!chains.allFinite()) throw DiagnosticError("draws contain NaN or infinite values");
  if (chains.maxCoeff() == chains.minCoeff()) throw DiagnosticError("draws are constant");
}

}  // namespace

ChainArray split_chains(const ChainArray& chains) {
  const Eigen::Index half = chains.cols() / 2;
  ChainArray out(2 * chains.rows(), half);
  for (Eigen::Index c = 0; c < chains.rows(); ++c) {
    out.row(2 * c) = chains.row(c).head(half);
    out.row(2 * c + 1) = chains.row(c).tail(half);
  }
  return out;
}

ChainArray rank_normalize(const ChainArray& chains) {
  const Eigen::Index total = chains.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(total));
  std::iota(order.begin(), order.end(), Eigen::Index(0));
  const double* data = chains.data();
  std::stable_sort(order.begin(), order.end(),
                   [data](Eigen::Index a, Eigen::Index b) { return data[a] < data[b]; });
  ChainArray out(chains.rows(), chains.cols());
  double* z = out.data();
  const boost::math::normal_distribution<double> std_normal;
  const double denom = double(total) + 0.25;
  for (Eigen::Index i = 0; i < total;) {
    Eigen::Index j = i;
    while (j + 1 < total && data[order[j + 1]] == data[order[i]]) ++j;
    const double rank = 0.5 * double(i + j) + 1.0;
    const double score = boost::math::quantile(std_normal, (rank - 0.375) / denom);
    for (Eigen::Index k = i; k <= j; ++k) z[order[k]] = score;
    i = j + 1;
  }
  return out;
}

Eigen::VectorXd autocovariance(const Eigen::VectorXd& x) {
  const std::size_t n = std::size_t(x.size());
  std::size_t padded = 1;
  while (padded < 2 * n) padded <<= 1;
  std::vector<double> centered(padded, 0.0);
  const double m = x.mean();
  for (std::size_t i = 0; i < n; ++i) centered[i] = x[Eigen::Index(i)] - m;
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> freq;
  fft.fwd(freq, centered);
  for (auto& f : freq) f = std::norm(f);
  std::vector<double> acov;
  fft.inv(acov, freq);
  Eigen::VectorXd out(x.size());
  for (std::size_t i = 0; i < n; ++i) out[Eigen::Index(i)] = acov[i] / double(n);
  return out;
}

double ess(const ChainArray& chains) {
  check_chains(chains);
  const Eigen::Index m = chains.rows(), n = chains.cols();
  Eigen::MatrixXd acov(m, n);
  for (Eigen::Index c = 0; c < m; ++c) acov.row(c) = autocovariance(chains.row(c).transpose());
  const Eigen::VectorXd chain_mean = chains.rowwise().mean();
  const double nd = double(n);
  const double mean_var = acov.col(0).mean() * nd / (nd - 1.0);
  double var_plus = mean_var * (nd - 1.0) / nd;
  if (m > 1) {
    var_plus += (chain_mean.array() - chain_mean.mean()).square().sum() / double(m - 1);
  }
  auto rho = [&](Eigen::Index t) { return 1.0 - (mean_var - acov.col(t).mean()) / var_plus; };

  Eigen::VectorXd rho_hat = Eigen::VectorXd::Zero(n);
  double rho_even = 1.0;
  double rho_odd = rho(1);
  rho_hat[0] = rho_even;
  rho_hat[1] = rho_odd;
  Eigen::Index t = 1;
  while (t < n - 3 && rho_even + rho_odd > 0.0) {
    rho_even = rho(t + 1);
    rho_odd = rho(t + 2);
    if (rho_even + rho_odd >= 0.0) {
      rho_hat[t + 1] = rho_even;
      rho_hat[t + 2] = rho_odd;
    }
    t += 2;
  }
  const Eigen::Index max_t = t - 2;
  if (rho_even > 0.0) rho_hat[max_t + 1] = rho_even;
  // Initial monotone sequence.
  for (t = 1; t <= max_t - 2; t += 2) {
    if (rho_hat[t + 1] + rho_hat[t + 2] > rho_hat[t - 1] + rho_hat[t]) {
      rho_hat[t + 1] = 0.5 * (rho_hat[t - 1] + rho_hat[t]);
      rho_hat[t + 2] = rho_hat[t + 1];
    }
  }
  const double total = double(m) * nd;
  double tau = -1.0 + 2.0 * rho_hat.head(max_t + 1).sum() + rho_hat[max_t + 1];
  tau = std::max(tau, 1.0 / std::log10(total));
  return total / tau;
}

double ess_bulk(const ChainArray& chains) {
  check_chains(chains);
  return ess(rank_normalize(split_chains(chains)));
}

namespace {

double rhat_of(const ChainArray& chains) {
  const Eigen::Index m = chains.rows();
  const double n = double(chains.cols());
  const Eigen::VectorXd means = chains.rowwise().mean();
  double w = 0.0;
  for (Eigen::Index c = 0; c < m; ++c) {
    w += (chains.row(c).array() - means[c]).square().sum() / (n - 1.0);
  }
  w /= double(m);
  const double b_over_n = (means.array() - means.mean()).square().sum() / double(m - 1);
  return std::sqrt(((n - 1.0) / n * w + b_over_n) / w);
}

}  // namespace

double split_rhat(const ChainArray& chains) {
  check_chains(chains);
  return rhat_of(rank_normalize(split_chains(chains)));
}

double split_rhat_classic(const ChainArray& chains) {
  check_chains(chains);
  return rhat_of(split_chains(chains));
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw DiagnosticError("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double h = p * double(values.size() - 1);
  const auto lo = std::size_t(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - double(lo)) * (values[hi] - values[lo]);
}

Summary summarize(const SamplingResults& results, double posterior_seconds) {
  Summary out;
  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
  for (const auto& name : results.columns) {
    const ChainArray chains = results.column_draws(name);
    std::vector<double> pooled(chains.data(), chains.data() + chains.size());
    SummaryRow row;
    row.name = name;
    const Eigen::Map<const Eigen::VectorXd> v(pooled.data(), Eigen::Index(pooled.size()));
    row.mean = v.mean();
    row.sd = v.size() > 1 ? std::sqrt((v.array() - row.mean).square().sum() / double(v.size() - 1))
                          : kNaN;
    row.q5 = quantile(pooled, 0.05);
    row.q25 = quantile(pooled, 0.25);
    row.q50 = quantile(pooled, 0.5);
    row.q75 = quantile(pooled, 0.75);
    row.q95 = quantile(pooled, 0.95);
    try {
      row.ess_bulk = ess_bulk(chains);
      row.rhat = split_rhat(chains);
    } catch (const DiagnosticError&) {
      row.ess_bulk = kNaN;
      row.rhat = kNaN;
    }
    row.ess_per_second = posterior_seconds > 0.0 ? row.ess_bulk / posterior_seconds : kNaN;
    out.rows.push_back(std::move(row));
  }
  std::map<std::pair<int, std::string>, long> counts;
  for (const auto& e : results.error_log) ++counts[{e.code, e.kernel_name}];
  for (const auto& [key, count] : counts) {
    out.errors.push_back(
        {key.first, std::string(error_code_name(key.first)), key.second, count});
  }
  return out;
}

void write_summary_csv(std::ostream& out, const Summary& summary) {
  out << "parameter,mean,sd,q5,q25,median,q75,q95,ess_bulk,ess_per_second,rhat\n";
  out << std::setprecision(10);
  for (const auto& r : summary.rows) {
    out << r.name << ',' << r.mean << ',' << r.sd << ',' << r.q5 << ',' << r.q25 << ',' << r.q50
        << ',' << r.q75 << ',' << r.q95 << ',' << r.ess_bulk << ',' << r.ess_per_second << ','
        << r.rhat << '\n';
  }
}

std::string format_summary(const Summary& summary) {
  std::ostringstream os;
  std::size_t width = 9;
  for (const auto& r : summary.rows) width = std::max(width, r.name.size());
  os << std::left << std::setw(int(width)) << "parameter" << std::right;
  for (const char* h : {"mean", "sd", "5%", "25%", "median", "75%", "95%", "ess_bulk", "ess/s", "rhat"}) {
    os << std::setw(11) << h;
  }
  os << '\n' << std::fixed;
  for (const auto& r : summary.rows) {
    os << std::left << std::setw(int(width)) << r.name << std::right << std::setprecision(4);
    for (double v : {r.mean, r.sd, r.q5, r.q25, r.q50, r.q75, r.q95}) os << std::setw(11) << v;
    os << std::setprecision(1) << std::setw(11) << r.ess_bulk << std::setw(11) << r.ess_per_second
       << std::setprecision(4) << std::setw(11) << r.rhat << '\n';
  }
  os << "\nerrors:";
  if (summary.errors.empty()) {
    os << " none\n";
  } else {
    os << '\n';
    for (const auto& e : summary.errors) {
      os << "  code " << e.code << " (" << e.description << ") in kernel '" << e.kernel
         << "': " << e.count << '\n';
    }
  }
  return os.str();
}

}  // namespace greylag
