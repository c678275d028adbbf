#pragma once

#include <stdexcept>
#include <string>

namespace vsanet {

// Invalid arguments are reported with std::invalid_argument. The types below
// cover the remaining failure classes so callers (the CLI in particular) can
// map them to distinct exit codes.

class UnsupportedFormat : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnsupportedRate : public UnsupportedFormat {
 public:
  explicit UnsupportedRate(int rate)
      : UnsupportedFormat("unsupported sample rate " + std::to_string(rate) +
                          " Hz (expected 16000 Hz)"),
        rate_(rate) {}
  int rate() const noexcept { return rate_; }

 private:
  int rate_;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kModelSampleRate = 16000;

}  // namespace vsanet
