#pragma once

#include <cmath>
#include <vector>

#include "rnnc/types.hpp"

namespace rnnc {

// One held-out observation with its Gaussian predictive summary.
struct PredictionRecord {
  double obs = 0.0;
  double mean = 0.0;
  double sd = 0.0;
  double lo95 = 0.0;
  double hi95 = 0.0;

  void validate() const {
    if (!(sd >= 0.0))
      throw validation_error("predictive standard deviation must be >= 0");
    if (!(lo95 <= mean && mean <= hi95))
      throw validation_error("interval bounds must bracket the mean");
  }
};

// Pack kriging outputs (means, variances) and the held-out data into
// records with equal-tail 95% bounds.
inline std::vector<PredictionRecord> prediction_records(const Vector& mean,
                                                        const Vector& var,
                                                        const Vector& obs) {
  if (mean.size() != var.size() || mean.size() != obs.size())
    throw validation_error("prediction and observation lengths differ");
  std::vector<PredictionRecord> out(static_cast<size_t>(mean.size()));
  for (int i = 0; i < mean.size(); ++i) {
    if (!(var[i] >= 0.0))
      throw validation_error("predictive variance must be >= 0");
    const double sd = std::sqrt(var[i]);
    out[i] = {obs[i], mean[i], sd, mean[i] - kZ975 * sd,
              mean[i] + kZ975 * sd};
  }
  return out;
}

namespace detail {
inline void require_records(const std::vector<PredictionRecord>& r) {
  if (r.empty()) throw validation_error("no prediction records");
  for (const PredictionRecord& rec : r) rec.validate();
}
}  // namespace detail

// Root mean square prediction error.
inline double rmspe(const std::vector<PredictionRecord>& records) {
  detail::require_records(records);
  double ss = 0.0;
  for (const PredictionRecord& r : records) {
    const double d = r.mean - r.obs;
    ss += d * d;
  }
  return std::sqrt(ss / static_cast<double>(records.size()));
}

// Nash-Sutcliffe model efficiency: 1 minus the ratio of squared prediction
// error to the variance of the observations around their mean.
inline double nsme(const std::vector<PredictionRecord>& records) {
  detail::require_records(records);
  double obs_mean = 0.0;
  for (const PredictionRecord& r : records) obs_mean += r.obs;
  obs_mean /= static_cast<double>(records.size());
  double num = 0.0, den = 0.0;
  for (const PredictionRecord& r : records) {
    num += (r.mean - r.obs) * (r.mean - r.obs);
    den += (r.obs - obs_mean) * (r.obs - obs_mean);
  }
  if (den == 0.0)
    throw validation_error(
        "constant observations make model efficiency undefined");
  return 1.0 - num / den;
}

// Fraction of observations inside their equal-tail 95% interval.
inline double cvg95(const std::vector<PredictionRecord>& records) {
  detail::require_records(records);
  double hits = 0.0;
  for (const PredictionRecord& r : records)
    if (r.obs >= r.lo95 && r.obs <= r.hi95) hits += 1.0;
  return hits / static_cast<double>(records.size());
}

// Average length of the 95% interval.
inline double alci95(const std::vector<PredictionRecord>& records) {
  detail::require_records(records);
  double total = 0.0;
  for (const PredictionRecord& r : records) total += r.hi95 - r.lo95;
  return total / static_cast<double>(records.size());
}

inline double std_normal_pdf(double z) {
  return std::exp(-0.5 * z * z) * 0.3989422804014327;  // 1/sqrt(2 pi)
}

inline double std_normal_cdf(double z) {
  return 0.5 * std::erfc(-z * 0.7071067811865476);  // z / sqrt(2)
}

// Closed-form continuous ranked probability score of a Gaussian forecast
// N(mean, sd^2) against the observation y:
//   sd * [ z (2 Phi(z) - 1) + 2 phi(z) - 1/sqrt(pi) ],  z = (y - mean)/sd.
// A point-mass forecast (sd = 0) degenerates to the absolute error.
inline double crps_gaussian_one(double obs, double mean, double sd) {
  if (!(sd >= 0.0))
    throw validation_error("predictive standard deviation must be >= 0");
  if (sd == 0.0) return std::abs(obs - mean);
  const double z = (obs - mean) / sd;
  return sd * (z * (2.0 * std_normal_cdf(z) - 1.0) +
               2.0 * std_normal_pdf(z) - 0.5641895835477563);  // 1/sqrt(pi)
}

inline double crps_gaussian(const std::vector<PredictionRecord>& records) {
  detail::require_records(records);
  double total = 0.0;
  for (const PredictionRecord& r : records)
    total += crps_gaussian_one(r.obs, r.mean, r.sd);
  return total / static_cast<double>(records.size());
}

}  // namespace rnnc
