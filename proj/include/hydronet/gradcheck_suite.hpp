#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "hydronet/graph.hpp"

namespace hydronet {

struct GradcheckRow {
  std::string name;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Finite-difference check of every differentiable primitive and layer, plus
/// the full model loss on a three-node network.
std::vector<GradcheckRow> run_gradcheck_suite(std::uint64_t seed = 0, double eps = 1e-6, double tolerance = 1e-4);

/// Three manholes, two pipes: A -> B -> OUT.
PipeGraph gradcheck_graph();

void write_gradcheck_table(std::ostream& out, const std::vector<GradcheckRow>& rows);

}  // namespace hydronet
