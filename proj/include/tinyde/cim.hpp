#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tinyde/ensemble.hpp"

namespace tinyde {

/// Uniform converter model for one pipeline stage. Without `bits` the stage
/// is ideal and passes values through unchanged.
struct StageQuant {
  std::optional<unsigned> bits;
  double lo = -1.0;
  double hi = 1.0;

  bool ideal() const { return !bits.has_value(); }
  /// Width of one quantization level; 0 for an ideal stage.
  double step() const;
  void validate() const;
};

/// Clips to [lo, hi] and snaps to the centre of one of 2^bits equal-width
/// cells: with Δ = (hi − lo)/2^bits, x maps to lo + (k + ½)Δ where
/// k = clamp(floor((x − lo)/Δ), 0, 2^bits − 1).
double quantize_value(double x, const StageQuant& q);
Tensor quantize(const Tensor& x, const StageQuant& q);

/// Converter settings for every linear layer of a model, hidden layers first
/// and the head last. dac[i] applies to the input of layer i and adc[i] to its
/// MAC output.
struct QuantSpec {
  std::vector<StageQuant> dac;
  std::vector<StageQuant> adc;

  static QuantSpec ideal(std::size_t layers);
  void validate(std::size_t layers) const;
};

/// Sets each stage's clip range to the [lower_q, upper_q] quantiles of the
/// values that reach it on the exact path, pooled over all members. Pass
/// std::nullopt for ideal converters.
QuantSpec calibrate(const TinyDEModel& model, const Tensor& x, std::optional<unsigned> dac_bits,
                    std::optional<unsigned> adc_bits, double lower_q = 0.001, double upper_q = 0.999);

/// Big-endian Q-character string of '0'/'1'.
std::string binary_control(std::uint32_t c, unsigned q);
std::uint32_t parse_control(const std::string& bits);

/// Smallest Q with 2^Q ≥ members, and at least 1.
unsigned control_width(std::size_t members);

/// Per-layer counter driving the DeMux that picks a normalization member.
class RouterState {
 public:
  RouterState(unsigned q, std::size_t members);

  unsigned width() const { return q_; }
  std::uint32_t counter() const { return c_; }
  std::string control() const { return binary_control(c_, q_); }
  /// Member addressed by the current control bits.
  std::size_t select() const;
  void advance();
  void reset() { c_ = 0; }

 private:
  unsigned q_;
  std::size_t members_;
  std::uint32_t c_ = 0;
};

struct CimOptions {
  /// Control width; derived from the ensemble size when unset.
  std::optional<unsigned> control_bits;
  /// Receives one line per (pass, norm layer):
  /// "pass=<m> layer=<l> counter=<c> control=<bits> member=<k>".
  std::ostream* trace = nullptr;
};

/// M eval-mode passes through DAC → MAC → ADC → router → normalization →
/// ReLU6 for each hidden layer, then DAC → MAC → ADC for the head. The
/// routers start at 0 and advance once per pass. Returns [M, B, K].
Tensor run_sequential_inference(const TinyDEModel& model, const Tensor& x, const QuantSpec& quant,
                                const CimOptions& options = {});

}  // namespace tinyde
