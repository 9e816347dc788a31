#pragma once

#include <string>
#include <vector>

#include "csn/model.hpp"

namespace csn {

struct GradCheckRow {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Central finite differences in double precision against the analytic
// backward passes (h = 1e-3 for isolated layers, 1e-5 inside full networks
// where batch norm parks activations near the relu kink). Relative error
// uses max(1, |a|, |b|) in the denominator.

// Every op kind: conv (dense, grouped, depthwise, pointwise, strided, bias),
// batchnorm, maxpool, global average pool, linear, softmax cross-entropy.
// Tolerance 1e-4.
std::vector<GradCheckRow> gradcheck_layers();

// All eight block families inside four-stage single-block networks, checking
// sampled coordinates of every block parameter. Tolerance 1e-4.
std::vector<GradCheckRow> gradcheck_blocks();

// A small end-to-end network, sampled coordinates of every trainable tensor.
// Tolerance 1e-3.
std::vector<GradCheckRow> gradcheck_tiny_model();

// scope is "layers", "blocks" or "tiny-model".
std::vector<GradCheckRow> run_gradcheck(const std::string& scope);

bool all_pass(const std::vector<GradCheckRow>& rows);
std::string gradcheck_table(const std::vector<GradCheckRow>& rows);

}  // namespace csn
