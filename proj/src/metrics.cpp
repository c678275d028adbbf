#include "vsanet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace vsanet::metrics {

double si_sdr(std::span<const double> ref, std::span<const double> est) {
  if (ref.size() != est.size()) {
    throw std::invalid_argument("si_sdr: lengths differ (" + std::to_string(ref.size()) + " vs " +
                                std::to_string(est.size()) + ")");
  }
  double rr = 0.0, re = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    rr += ref[i] * ref[i];
    re += ref[i] * est[i];
  }
  if (!(rr > 0.0)) throw std::invalid_argument("si_sdr: reference has zero energy");
  const double alpha = re / rr;
  double target = 0.0, residual = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double t = alpha * ref[i];
    const double e = est[i] - t;
    target += t * t;
    residual += e * e;
  }
  if (residual <= target * std::pow(10.0, -kSiSdrCapDb / 10.0)) return kSiSdrCapDb;
  if (target == 0.0) return -kSiSdrCapDb;
  return std::min(kSiSdrCapDb, 10.0 * std::log10(target / residual));
}

double seg_snr(std::span<const double> ref, std::span<const double> est, std::size_t frame_len, double min_db,
               double max_db) {
  if (ref.size() != est.size()) throw std::invalid_argument("seg_snr: lengths differ");
  if (frame_len == 0) throw std::invalid_argument("seg_snr: frame_len must be positive");
  if (ref.empty()) throw std::invalid_argument("seg_snr: empty signal");
  const std::size_t frames = std::max<std::size_t>(1, ref.size() / frame_len);
  double total = 0.0;
  for (std::size_t f = 0; f < frames; ++f) {
    const std::size_t lo = f * frame_len, hi = std::min(ref.size(), lo + frame_len);
    double signal = 0.0, noise = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
      signal += ref[i] * ref[i];
      noise += (ref[i] - est[i]) * (ref[i] - est[i]);
    }
    double db;
    if (noise == 0.0) {
      db = max_db;
    } else if (signal == 0.0) {
      db = min_db;
    } else {
      db = std::clamp(10.0 * std::log10(signal / noise), min_db, max_db);
    }
    total += db;
  }
  return total / static_cast<double>(frames);
}

VadMetrics vad_metrics(std::span<const int> labels, std::span<const double> scores, double threshold) {
  if (labels.size() != scores.size()) throw std::invalid_argument("vad_metrics: lengths differ");
  if (labels.empty()) throw std::invalid_argument("vad_metrics: no frames");
  VadMetrics m;
  std::size_t correct = 0, positives = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw std::invalid_argument("vad_metrics: labels must be 0 or 1");
    positives += labels[i];
    correct += (scores[i] >= threshold ? 1 : 0) == labels[i];
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());

  const std::size_t negatives = labels.size() - positives;
  if (positives == 0 || negatives == 0) return m;

  // Mann-Whitney U with average ranks for ties.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) rank_sum += avg_rank;
    }
    i = j;
  }
  const double p = static_cast<double>(positives), n = static_cast<double>(negatives);
  m.auc = (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
  return m;
}

}  // namespace vsanet::metrics
