#include "levyctpe/registry.hpp"

#include <cmath>
#include <map>

namespace levyctpe {

namespace {

Scalar wrap_period(Scalar x) {
  Scalar m = std::fmod(x, kTwoPi);
  if (m < 0.0) m += kTwoPi;
  return m;
}

std::map<std::string, NamedFields> build_registry() {
  std::map<std::string, NamedFields> reg;

  reg["const_543"] = NamedFields{
      "const_543",
      [](Scalar) { return 5.0; },
      [](Scalar) { return 4.0; },
      [](Scalar) { return 3.0; },
  };

  reg["ex42"] = NamedFields{
      "ex42",
      [](Scalar x) { return 4.0 * std::abs(wrap_period(x) - kPi) - kTwoPi; },
      [](Scalar x) { return std::exp(std::sin(x + 1.0) + 1.0); },
      [](Scalar x) { return 2.0 + std::exp(std::sin(2.0 * x) * std::cos(3.0 * x)); },
  };

  reg["study422"] = NamedFields{
      "study422",
      [](Scalar x) { return std::pow(std::sin(x), 4.0); },
      [](Scalar x) { return std::cos(x) * std::cos(x) + std::abs(std::sin(x)); },
      [](Scalar x) { return std::sin(4.0 * x) + 2.0; },
  };

  return reg;
}

const std::map<std::string, NamedFields>& registry() {
  static const std::map<std::string, NamedFields> reg = build_registry();
  return reg;
}

}  // namespace

const NamedFields& lookup_fields(const std::string& name) {
  const auto& reg = registry();
  const auto it = reg.find(name);
  if (it == reg.end())
    throw SimError("unknown coefficient set \"" + name + "\"");
  return it->second;
}

std::vector<std::string> field_names() {
  std::vector<std::string> names;
  for (const auto& kv : registry()) names.push_back(kv.first);
  return names;
}

SdeSpec make_sde(const NamedFields& fields, Scalar alpha) {
  SdeSpec spec;
  spec.alpha = alpha;
  spec.b = fields.b;
  auto d_o = fields.d_o;
  auto d_f = fields.d_f;
  spec.sigma_brownian = [d_o](Scalar x) { return std::sqrt(2.0 * d_o(x)); };
  const Scalar inv = 1.0 / (2.0 * alpha);
  spec.sigma_levy = [d_f, inv](Scalar x) { return std::pow(d_f(x), inv); };
  return spec;
}

SdeSpec make_sde(const std::string& name, Scalar alpha) {
  return make_sde(lookup_fields(name), alpha);
}

}  // namespace levyctpe
