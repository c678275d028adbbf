#pragma once

#include <cstddef>
#include <span>

namespace vsanet::metrics {

inline constexpr double kSiSdrCapDb = 200.0;

/// Scale-invariant SDR in dB: est is projected onto ref and the ratio of
/// projection energy to residual energy is reported. No mean removal.
/// Capped at +200 dB (e.g. est == ref). Throws on length mismatch or a
/// silent reference.
double si_sdr(std::span<const double> ref, std::span<const double> est);

/// Mean per-frame SNR over non-overlapping frames, each clamped to
/// [min_db, max_db]. A trailing partial frame is included only when the
/// signal is shorter than one frame.
double seg_snr(std::span<const double> ref, std::span<const double> est, std::size_t frame_len = 512,
               double min_db = -10.0, double max_db = 35.0);

struct VadMetrics {
  double accuracy = 0.0;
  double auc = 0.5;
};

/// Accuracy of (score >= threshold) against 0/1 labels, and ROC AUC via the
/// rank-sum statistic (ties count one half). AUC is 0.5 when only one class
/// is present.
VadMetrics vad_metrics(std::span<const int> labels, std::span<const double> scores, double threshold = 0.5);

}  // namespace vsanet::metrics
