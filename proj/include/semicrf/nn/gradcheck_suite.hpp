#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace semicrf::nn {

struct GradcheckEntry {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t checked = 0;
};

// Finite-difference checks (central, step 1e-5) of every primitive op, the
// encoder layers, both losses and the composed toy model on small random
// inputs. Deterministic in `seed`.
std::vector<GradcheckEntry> run_gradcheck_suite(std::uint64_t seed);

}  // namespace semicrf::nn
