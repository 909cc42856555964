#pragma once

#include <string>

#include "chmm/errors.hpp"

namespace chmm {

// Product state space of two latent chains with n_a and n_b states.
// Global states are 0-based and row-major in (state_a, state_b):
//   g = state_a * n_b + state_b.
// For n_a = n_b = 2 this gives g=0:(0,0), g=1:(0,1), g=2:(1,0), g=3:(1,1).
struct StateSpace {
  int n_a = 2;
  int n_b = 2;

  StateSpace() = default;
  StateSpace(int na, int nb) : n_a(na), n_b(nb) {
    if (na < 1 || nb < 1) {
      throw ValidationError("state space sizes must be positive, got n_a=" +
                            std::to_string(na) + " n_b=" + std::to_string(nb));
    }
  }

  int n_global() const { return n_a * n_b; }

  int global_index(int state_a, int state_b) const {
    if (state_a < 0 || state_a >= n_a || state_b < 0 || state_b >= n_b) {
      throw ValidationError("state (" + std::to_string(state_a) + "," +
                            std::to_string(state_b) +
                            ") outside state space " + std::to_string(n_a) +
                            "x" + std::to_string(n_b));
    }
    return state_a * n_b + state_b;
  }

  int state_a_of(int g) const {
    check_global(g);
    return g / n_b;
  }

  int state_b_of(int g) const {
    check_global(g);
    return g % n_b;
  }

  void check_global(int g) const {
    if (g < 0 || g >= n_global()) {
      throw ValidationError("global state " + std::to_string(g) +
                            " outside [0," + std::to_string(n_global()) + ")");
    }
  }
};

}  // namespace chmm
