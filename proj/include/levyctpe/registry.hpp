#pragma once

#include <string>
#include <vector>

#include "levyctpe/levy_sim.hpp"

namespace levyctpe {

// Closed-form coefficient sets used by the bundled experiments.  Fields are
// (b, d_o, d_f) as functions of state; all are 2*pi-periodic by construction.
struct NamedFields {
  std::string name;
  std::function<Scalar(Scalar)> b;
  std::function<Scalar(Scalar)> d_o;
  std::function<Scalar(Scalar)> d_f;
};

const NamedFields& lookup_fields(const std::string& name);
std::vector<std::string> field_names();

// Simulatable dynamics for a named set: sigma_brownian = sqrt(2 d_o),
// sigma_levy = d_f^(1/(2 alpha)).
SdeSpec make_sde(const std::string& name, Scalar alpha);
SdeSpec make_sde(const NamedFields& fields, Scalar alpha);

}  // namespace levyctpe
