#include "tinyde/cim.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "tinyde/errors.hpp"

namespace tinyde {

double StageQuant::step() const {
  if (ideal()) return 0.0;
  return (hi - lo) / std::ldexp(1.0, static_cast<int>(*bits));
}

void StageQuant::validate() const {
  if (ideal()) return;
  if (*bits < 1 || *bits > 52) throw ConfigError("converter bits must be in [1, 52]");
  if (!(hi > lo)) throw ConfigError("converter clip range needs hi > lo");
}

double quantize_value(double x, const StageQuant& q) {
  if (q.ideal()) return x;
  const double levels = std::ldexp(1.0, static_cast<int>(*q.bits));
  const double delta = (q.hi - q.lo) / levels;
  const double k = std::clamp(std::floor((x - q.lo) / delta), 0.0, levels - 1.0);
  return q.lo + (k + 0.5) * delta;
}

Tensor quantize(const Tensor& x, const StageQuant& q) {
  q.validate();
  if (q.ideal()) return x;
  Tensor y = x;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = quantize_value(y[i], q);
  return y;
}

QuantSpec QuantSpec::ideal(std::size_t layers) {
  return {std::vector<StageQuant>(layers), std::vector<StageQuant>(layers)};
}

void QuantSpec::validate(std::size_t layers) const {
  if (dac.size() != layers || adc.size() != layers) {
    throw ConfigError("quantization spec covers " + std::to_string(dac.size()) + "/" +
                      std::to_string(adc.size()) + " layers, model has " + std::to_string(layers));
  }
  for (const auto& s : dac) s.validate();
  for (const auto& s : adc) s.validate();
}

namespace {

double quantile(std::vector<double>& values, double q) {
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(pos));
  const std::size_t j = std::min(i + 1, values.size() - 1);
  return values[i] + (pos - static_cast<double>(i)) * (values[j] - values[i]);
}

StageQuant stage_from(std::vector<double>& values, std::optional<unsigned> bits, double lower_q, double upper_q) {
  StageQuant s;
  s.bits = bits;
  if (values.empty()) return s;
  s.lo = quantile(values, lower_q);
  s.hi = quantile(values, upper_q);
  if (!(s.hi > s.lo)) {
    const double pad = std::max(1e-12, std::abs(s.lo) * 1e-9);
    s.lo -= pad;
    s.hi += pad;
  }
  return s;
}

}  // namespace

QuantSpec calibrate(const TinyDEModel& model, const Tensor& x, std::optional<unsigned> dac_bits,
                    std::optional<unsigned> adc_bits, double lower_q, double upper_q) {
  if (!(lower_q >= 0.0 && lower_q < upper_q && upper_q <= 1.0)) {
    throw ConfigError("calibration quantiles need 0 <= lower < upper <= 1");
  }
  const std::size_t layers = model.linear_count();
  std::vector<std::vector<double>> inputs(layers), outputs(layers);
  for (std::size_t m = 0; m < model.members(); ++m) {
    const MemberView view = model.member_view(m);
    Tensor h = x;
    for (std::size_t i = 0; i < layers; ++i) {
      inputs[i].insert(inputs[i].end(), h.data().begin(), h.data().end());
      h = linear_forward(*view.linears[i], h).output;
      outputs[i].insert(outputs[i].end(), h.data().begin(), h.data().end());
      if (i < view.norms.size()) h = relu6_forward(norm_forward(view.norms[i], h).output).output;
    }
  }
  QuantSpec spec;
  for (std::size_t i = 0; i < layers; ++i) {
    spec.dac.push_back(stage_from(inputs[i], dac_bits, lower_q, upper_q));
    spec.adc.push_back(stage_from(outputs[i], adc_bits, lower_q, upper_q));
  }
  return spec;
}

std::string binary_control(std::uint32_t c, unsigned q) {
  if (q < 1 || q > 32) throw ValueError("control width must be in [1, 32]");
  if (q < 32 && c >= (std::uint64_t{1} << q)) {
    throw ValueError("counter " + std::to_string(c) + " does not fit in " + std::to_string(q) + " bits");
  }
  std::string bits(q, '0');
  for (unsigned i = 0; i < q; ++i) {
    if ((c >> i) & 1u) bits[q - 1 - i] = '1';
  }
  return bits;
}

std::uint32_t parse_control(const std::string& bits) {
  if (bits.empty() || bits.size() > 32) throw ValueError("control string must hold 1 to 32 bits");
  std::uint32_t c = 0;
  for (char b : bits) {
    if (b != '0' && b != '1') throw ValueError("control string may only contain '0' and '1'");
    c = (c << 1) | static_cast<std::uint32_t>(b - '0');
  }
  return c;
}

unsigned control_width(std::size_t members) {
  unsigned q = 1;
  while (q < 32 && (std::uint64_t{1} << q) < members) ++q;
  return q;
}

RouterState::RouterState(unsigned q, std::size_t members) : q_(q), members_(members) {
  if (members == 0) throw ConfigError("router needs at least one member");
  if (q < 1 || q > 32) throw ConfigError("control width must be in [1, 32]");
  if (q < 32 && members > (std::uint64_t{1} << q)) {
    throw ConfigError(std::to_string(members) + " members need more than " + std::to_string(q) +
                      " control bits");
  }
}

std::size_t RouterState::select() const {
  const std::size_t m = parse_control(control());
  if (m >= members_) throw StateError("router addressed member " + std::to_string(m));
  return m;
}

void RouterState::advance() { c_ = static_cast<std::uint32_t>((c_ + 1) % members_); }

Tensor run_sequential_inference(const TinyDEModel& model, const Tensor& x, const QuantSpec& quant,
                                const CimOptions& options) {
  if (model.mode() != InferenceMode::sequential) {
    throw ModeError("the CIM simulator runs sequential-mode models");
  }
  const std::size_t layers = model.linear_count();
  quant.validate(layers);
  const std::size_t members = model.members();
  const unsigned q = options.control_bits.value_or(control_width(members));
  std::vector<RouterState> routers(model.bank_count(), RouterState(q, members));

  std::vector<Tensor> outputs;
  outputs.reserve(members);
  for (std::size_t pass = 0; pass < members; ++pass) {
    Tensor h = x;
    for (std::size_t i = 0; i < layers; ++i) {
      h = quantize(h, quant.dac[i]);
      h = linear_forward(model.linear(i), h).output;
      h = quantize(h, quant.adc[i]);
      if (i < model.bank_count()) {
        const RouterState& router = routers[i];
        const std::size_t member = router.select();
        if (options.trace) {
          *options.trace << "pass=" << pass << " layer=" << i << " counter=" << router.counter()
                         << " control=" << router.control() << " member=" << member << '\n';
        }
        h = norm_forward(model.bank(i).sequential_member(member), h).output;
        h = relu6_forward(h).output;
      }
    }
    outputs.push_back(std::move(h));
    for (auto& r : routers) r.advance();
  }
  return stack_members(concat_rows(outputs), members);
}

}  // namespace tinyde
